// SPDX-License-Identifier: Apache-2.0
/**
 * @file   corpus.h
 * @brief  Review sentences, aspect expansion, hard subsets, vocabularies and
 *         token-budgeted batches.
 */
#ifndef AGDT_CORPUS_H
#define AGDT_CORPUS_H

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <agdt/random.h>
#include <agdt/tensor.h>
#include <agdt/types.h>

namespace agdt {

/// Malformed input data. The message names the source position.
class DataError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// A token with its code-point offsets [begin, end) in the source text.
struct Token {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/**
 * Lowercase ASCII letters, split on whitespace and emit every ASCII
 * punctuation character as its own token. Other bytes are word characters.
 */
std::vector<Token> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

/// Category names split on every non-alphanumeric character, separators
/// dropped: "anecdotes/miscellaneous" -> {anecdotes, miscellaneous}.
std::vector<std::string> tokenize_category(std::string_view name);

struct Aspect {
  TaskKind kind = TaskKind::Category;
  std::string name;                ///< category name, or the term text
  std::vector<std::string> tokens; ///< words averaged into the aspect vector
  std::size_t from = 0;            ///< term span [from, to) in the sentence
  std::size_t to = 0;

  bool operator==(const Aspect &) const = default;
};

struct AspectLabel {
  Aspect aspect;
  Label label = Label::Positive;

  bool operator==(const AspectLabel &) const = default;
};

struct RawSentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<AspectLabel> aspects;

  bool operator==(const RawSentence &) const = default;
};

struct Instance {
  std::string sentence_id;
  std::vector<std::string> tokens;
  Aspect aspect;
  Label label = Label::Positive;

  bool operator==(const Instance &) const = default;
};

/// SemEval 2014 layout: sentences/sentence with aspectTerms or
/// aspectCategories. Sentences without aspects of `kind` are dropped.
std::vector<RawSentence> parse_semeval_xml(std::string_view xml, TaskKind kind,
                                           const std::string &source = "xml");

/**
 * Mapping from 2015/16 "ENTITY#ATTRIBUTE" categories to category names.
 * Rules are tried in order; '*' matches any entity or attribute.
 */
struct CategoryMap {
  struct Rule {
    std::string entity, attribute, target;
  };
  std::vector<Rule> rules;

  /// PRICES attributes to "price", otherwise the lowercased entity.
  static CategoryMap standard();
  /// Lines "ENTITY#ATTRIBUTE=target"; '#' at line start is a comment.
  static CategoryMap parse(std::string_view text);
  std::optional<std::string> map(std::string_view category) const;
};

/**
 * SemEval 2015/16 layout: Reviews/Review/sentences/sentence/Opinions.
 * Opinions are mapped to categories; several opinions on one category in a
 * sentence merge into one pair, labelled conflict when their polarities
 * differ. Unmapped categories are dropped.
 */
std::vector<RawSentence> parse_semeval_opinions_xml(std::string_view xml,
                                                    const CategoryMap &map,
                                                    const std::string &source = "xml");

/**
 * Merge yearly files of one split. Sentences repeat across years, so only
 * the first occurrence of each token sequence is kept; sentences listed in
 * `exclude` (the other split) are removed as well.
 */
std::vector<RawSentence>
merge_sentences(const std::vector<std::vector<RawSentence>> &parts,
                const std::vector<RawSentence> &exclude = {});

/// Canonical JSON-lines form, one sentence per line.
std::string write_jsonl(const std::vector<RawSentence> &sentences);
std::vector<RawSentence> load_jsonl(std::string_view text,
                                    const std::string &source = "jsonl");

/// One instance per aspect, sentence order then aspect order.
std::vector<Instance> expand(const std::vector<RawSentence> &raw);

enum class HdsRule {
  Distinct, ///< >= 2 aspects with pairwise distinct labels
  TwoLabels ///< >= 2 distinct labels present
};
std::string to_string(HdsRule r);
HdsRule parse_hds_rule(std::string_view s);

bool is_hard(const RawSentence &s, HdsRule rule);
std::vector<RawSentence> select_hds(const std::vector<RawSentence> &raw,
                                    HdsRule rule);
std::vector<Instance> extract_hds(const std::vector<RawSentence> &raw,
                                  HdsRule rule = HdsRule::Distinct);

std::vector<Instance> build_nc(const std::vector<Instance> &instances);
/// Sentences with conflict pairs removed, and emptied sentences dropped.
std::vector<RawSentence> build_nc(const std::vector<RawSentence> &raw);

/// Train and test splits with their hard subsets.
struct DatasetBundle {
  TaskKind task = TaskKind::Category;
  HdsRule rule = HdsRule::Distinct;
  bool nc = false;
  std::vector<Instance> ds_train, ds_test, hds_train, hds_test;
};

/// Expand both splits and extract the hard subsets. With `nc` conflict
/// instances are dropped after selection, so the hard subsets stay subsets.
DatasetBundle make_bundle(const std::vector<RawSentence> &train,
                          const std::vector<RawSentence> &test, TaskKind task,
                          HdsRule rule, bool nc);

/// Per-label and total instance counts.
struct LabelCounts {
  std::size_t positive = 0, negative = 0, neutral = 0, conflict = 0;
  std::size_t total() const { return positive + negative + neutral + conflict; }
  bool operator==(const LabelCounts &) const = default;
};
LabelCounts count_labels(const std::vector<Instance> &instances);

/// Pretrained vectors, optionally restricted to a set of wanted tokens.
struct EmbeddingFile {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<float>> vectors;
};

/**
 * Text format "token v1 ... vd" per line. A token may contain spaces; the
 * trailing d fields are the vector. Malformed lines raise DataError with
 * their line number.
 */
EmbeddingFile read_embeddings(std::istream &in,
                              const std::unordered_set<std::string> *wanted,
                              const std::string &source = "embeddings");
EmbeddingFile read_embeddings(const std::filesystem::path &path,
                              const std::unordered_set<std::string> *wanted);

struct Vocab {
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::size_t> index;
  Tensor<float> embeddings; ///< [size() x dim]
  std::size_t pretrained = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t lookup(const std::string &token) const;
  std::vector<std::size_t> lookup(const std::vector<std::string> &tokens) const;
  /// FNV-1a over the token list.
  std::string digest() const;
  /// Rebuild the index from `tokens`.
  void reindex();
};

/// Tokens of every sentence and aspect in `instances`.
std::unordered_set<std::string>
collect_tokens(const std::vector<Instance> &instances);

/**
 * Padding row first and zero; the shared unknown row second. Then every
 * training token, sorted, followed by the sorted test tokens that the
 * embedding file covers. Rows without a pretrained vector are drawn from
 * U(-0.25, 0.25) in index order from `seed`.
 */
Vocab build_vocab(const std::vector<Instance> &train,
                  const std::vector<Instance> &test, const EmbeddingFile &file,
                  std::uint64_t seed);

/// Sorted distinct words of the term aspects.
std::vector<std::string> term_word_vocab(const std::vector<Instance> &train);
/// Sorted distinct category names.
std::vector<std::string> category_vocab(const std::vector<Instance> &train);

/// An instance in index form.
struct Encoded {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> aspect;
  std::size_t label = 0;
  std::size_t category = 0;             ///< category tasks
  std::vector<std::size_t> term_words;  ///< term tasks, ascending
  bool recon_known = true; ///< false when the target is outside the head
};

/// Maps instances onto vocabulary, label and reconstruction indices.
/// `labels` is 3 (conflict rejected) or 4.
std::vector<Encoded> encode(const std::vector<Instance> &instances,
                            const Vocab &vocab, std::size_t labels,
                            const std::vector<std::string> &recon_targets);

struct Batch {
  std::vector<std::size_t> rows; ///< indices into the encoded list
  std::size_t steps = 0;         ///< T_max
  std::vector<std::size_t> tokens; ///< [rows x steps], padded with kPad
  std::vector<std::uint8_t> mask;  ///< [rows x steps]

  std::size_t size() const { return rows.size(); }
  std::size_t footprint() const { return rows.size() * steps; }
};

/**
 * Greedy length-sorted grouping with B * T_max <= budget. A longer sentence
 * than the budget becomes a singleton batch. With shuffling, the input
 * order and the batch order are both permuted from `seed`; without it the
 * batches follow ascending length.
 */
std::vector<Batch> make_batches(const std::vector<Encoded> &data,
                                std::size_t budget, std::optional<std::uint64_t> seed);

} // namespace agdt

#endif // AGDT_CORPUS_H
