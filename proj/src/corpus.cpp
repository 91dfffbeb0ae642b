// SPDX-License-Identifier: Apache-2.0
#include <agdt/corpus.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include <agdt/io.h>

namespace agdt {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

char lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char &c : out)
    c = lower(c);
  return out;
}

std::string join(const std::vector<std::string> &words) {
  std::string out;
  for (const auto &w : words) {
    if (!out.empty())
      out += ' ';
    out += w;
  }
  return out;
}

std::optional<std::size_t> find_subsequence(const std::vector<std::string> &hay,
                                            const std::vector<std::string> &needle) {
  if (needle.empty() || needle.size() > hay.size())
    return std::nullopt;
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  if (it == hay.end())
    return std::nullopt;
  return static_cast<std::size_t>(it - hay.begin());
}

std::optional<std::size_t> attr_size(const pt::ptree &node, const char *name) {
  auto v = node.get_optional<std::string>(std::string("<xmlattr>.") + name);
  if (!v)
    return std::nullopt;
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size())
    return std::nullopt;
  return out;
}

pt::ptree read_xml_tree(std::string_view xml, const std::string &source) {
  std::istringstream in{std::string(xml)};
  pt::ptree tree;
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error &e) {
    throw DataError(source + ":" + std::to_string(e.line()) + ": " +
                    e.message());
  }
  return tree;
}

Label xml_label(const boost::optional<std::string> &polarity,
                const std::string &where) {
  if (!polarity)
    throw DataError(where + ": missing polarity");
  try {
    return parse_label(*polarity);
  } catch (const ValidationError &e) {
    throw DataError(where + ": " + e.what());
  }
}

/// Locate a term in the token list, by character span first, then by
/// searching for its tokens.
std::pair<std::size_t, std::size_t>
align_term(const std::vector<Token> &tokens, const std::string &term,
           std::optional<std::size_t> from, std::optional<std::size_t> to,
           const std::string &sentence_id) {
  if (from && to && *from < *to) {
    std::size_t first = tokens.size(), last = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i].begin < *to && tokens[i].end > *from) {
        first = std::min(first, i);
        last = i + 1;
      }
    if (first < last) {
      std::vector<std::string> span;
      for (std::size_t i = first; i < last; ++i)
        span.push_back(tokens[i].text);
      const auto want = tokenize(term);
      // Offsets that disagree with the term text fall through to search.
      if (auto at = find_subsequence(span, want))
        return {first + *at, first + *at + want.size()};
    }
  }
  std::vector<std::string> words;
  for (const auto &t : tokens)
    words.push_back(t.text);
  const auto want = tokenize(term);
  if (auto at = find_subsequence(words, want))
    return {*at, *at + want.size()};
  throw DataError("sentence " + sentence_id + ": cannot align term \"" + term +
                  "\" to its tokens");
}

Aspect term_aspect(const std::vector<std::string> &tokens, std::size_t from,
                   std::size_t to) {
  Aspect a;
  a.kind = TaskKind::Term;
  a.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(from),
                  tokens.begin() + static_cast<std::ptrdiff_t>(to));
  a.name = join(a.tokens);
  a.from = from;
  a.to = to;
  return a;
}

Aspect category_aspect(const std::string &name) {
  Aspect a;
  a.kind = TaskKind::Category;
  a.name = name;
  a.tokens = tokenize_category(name);
  return a;
}

} // namespace

// ---------------------------------------------------------------- tokenizer

std::vector<Token> tokenize_with_offsets(std::string_view text) {
  std::vector<Token> out;
  Token cur;
  bool open = false;
  std::size_t cp = 0;
  auto flush = [&] {
    if (open) {
      cur.end = cp;
      out.push_back(std::move(cur));
      cur = Token{};
      open = false;
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_continuation(c)) {
      if (open)
        cur.text += static_cast<char>(c);
      continue;
    }
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.push_back(Token{std::string(1, static_cast<char>(c)), cp, cp + 1});
    } else {
      if (!open) {
        cur.begin = cp;
        open = true;
      }
      cur.text += lower(static_cast<char>(c));
    }
    ++cp;
  }
  flush();
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto &t : tokenize_with_offsets(text))
    out.push_back(std::move(t.text));
  return out;
}

std::vector<std::string> tokenize_category(std::string_view name) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || std::isalnum(u)) {
      cur += lower(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty())
    out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------- XML

std::vector<RawSentence> parse_semeval_xml(std::string_view xml, TaskKind kind,
                                           const std::string &source) {
  const pt::ptree tree = read_xml_tree(xml, source);
  const auto root = tree.get_child_optional("sentences");
  if (!root)
    throw DataError(source + ": no <sentences> root element");

  std::vector<RawSentence> out;
  std::size_t ordinal = 0;
  for (const auto &[tag, node] : *root) {
    if (tag != "sentence")
      continue;
    ++ordinal;
    RawSentence s;
    s.id = node.get<std::string>("<xmlattr>.id", "#" + std::to_string(ordinal));
    const std::string text = node.get<std::string>("text", "");
    const auto tokens = tokenize_with_offsets(text);
    for (const auto &t : tokens)
      s.tokens.push_back(t.text);
    const std::string where = source + ": sentence " + s.id;

    if (kind == TaskKind::Term) {
      if (auto terms = node.get_child_optional("aspectTerms"))
        for (const auto &[ttag, term] : *terms) {
          if (ttag != "aspectTerm")
            continue;
          const auto text_attr = term.get_optional<std::string>("<xmlattr>.term");
          if (!text_attr)
            throw DataError(where + ": aspectTerm without term attribute");
          auto [from, to] = align_term(tokens, *text_attr,
                                       attr_size(term, "from"),
                                       attr_size(term, "to"), s.id);
          s.aspects.push_back(
              {term_aspect(s.tokens, from, to),
               xml_label(term.get_optional<std::string>("<xmlattr>.polarity"),
                         where)});
        }
    } else if (auto cats = node.get_child_optional("aspectCategories")) {
      for (const auto &[ctag, cat] : *cats) {
        if (ctag != "aspectCategory")
          continue;
        const auto name = cat.get_optional<std::string>("<xmlattr>.category");
        if (!name)
          throw DataError(where + ": aspectCategory without category attribute");
        s.aspects.push_back(
            {category_aspect(*name),
             xml_label(cat.get_optional<std::string>("<xmlattr>.polarity"),
                       where)});
      }
    }
    if (!s.aspects.empty()) {
      if (s.tokens.empty())
        throw DataError(where + ": aspects on an empty sentence");
      out.push_back(std::move(s));
    }
  }
  return out;
}

CategoryMap CategoryMap::standard() {
  return CategoryMap{{{"*", "PRICES", "price"}, {"*", "*", "$entity"}}};
}

CategoryMap CategoryMap::parse(std::string_view text) {
  CategoryMap m;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#')
      continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto hash = line.find('#');
    const auto eq = line.find('=');
    if (hash == std::string::npos || eq == std::string::npos || hash > eq ||
        eq + 1 == line.size())
      throw DataError("category map line " + std::to_string(line_no) +
                      ": expected ENTITY#ATTRIBUTE=target");
    m.rules.push_back({line.substr(0, hash), line.substr(hash + 1, eq - hash - 1),
                       line.substr(eq + 1)});
  }
  return m;
}

std::optional<std::string> CategoryMap::map(std::string_view category) const {
  const auto hash = category.find('#');
  const std::string entity(category.substr(0, hash));
  const std::string attribute(
      hash == std::string_view::npos ? "" : category.substr(hash + 1));
  for (const auto &r : rules) {
    if ((r.entity == "*" || r.entity == entity) &&
        (r.attribute == "*" || r.attribute == attribute)) {
      if (r.target == "$entity")
        return lowercase(entity);
      if (r.target == "-")
        return std::nullopt;
      return r.target;
    }
  }
  return std::nullopt;
}

std::vector<RawSentence> parse_semeval_opinions_xml(std::string_view xml,
                                                    const CategoryMap &map,
                                                    const std::string &source) {
  const pt::ptree tree = read_xml_tree(xml, source);
  const auto root = tree.get_child_optional("Reviews");
  if (!root)
    throw DataError(source + ": no <Reviews> root element");

  std::vector<RawSentence> out;
  for (const auto &[rtag, review] : *root) {
    if (rtag != "Review")
      continue;
    const auto sentences = review.get_child_optional("sentences");
    if (!sentences)
      continue;
    for (const auto &[stag, node] : *sentences) {
      if (stag != "sentence")
        continue;
      if (node.get<std::string>("<xmlattr>.OutOfScope", "") == "TRUE")
        continue;
      RawSentence s;
      s.id = node.get<std::string>("<xmlattr>.id", "");
      s.tokens = tokenize(node.get<std::string>("text", ""));
      const std::string where = source + ": sentence " + s.id;
      const auto opinions = node.get_child_optional("Opinions");
      if (!opinions)
        continue;
      for (const auto &[otag, op] : *opinions) {
        if (otag != "Opinion")
          continue;
        const auto raw = op.get_optional<std::string>("<xmlattr>.category");
        if (!raw)
          throw DataError(where + ": Opinion without category attribute");
        const auto name = map.map(*raw);
        if (!name)
          continue;
        const Label label = xml_label(
            op.get_optional<std::string>("<xmlattr>.polarity"), where);
        auto same = std::find_if(s.aspects.begin(), s.aspects.end(),
                                 [&](const AspectLabel &p) {
                                   return p.aspect.name == *name;
                                 });
        if (same == s.aspects.end())
          s.aspects.push_back({category_aspect(*name), label});
        else if (same->label != label)
          same->label = Label::Conflict;
      }
      if (!s.aspects.empty() && !s.tokens.empty())
        out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<RawSentence>
merge_sentences(const std::vector<std::vector<RawSentence>> &parts,
                const std::vector<RawSentence> &exclude) {
  std::set<std::vector<std::string>> seen;
  for (const auto &s : exclude)
    seen.insert(s.tokens);
  std::vector<RawSentence> out;
  for (const auto &part : parts)
    for (const auto &s : part)
      if (seen.insert(s.tokens).second)
        out.push_back(s);
  return out;
}

// -------------------------------------------------------------------- JSONL

std::string write_jsonl(const std::vector<RawSentence> &sentences) {
  std::string out;
  for (const auto &s : sentences) {
    json aspects = json::array();
    for (const auto &p : s.aspects) {
      json a{{"kind", to_string(p.aspect.kind)},
             {"name", p.aspect.name},
             {"tokens", p.aspect.tokens},
             {"label", to_string(p.label)}};
      if (p.aspect.kind == TaskKind::Term) {
        a["from"] = p.aspect.from;
        a["to"] = p.aspect.to;
      }
      aspects.push_back(std::move(a));
    }
    out += json{{"id", s.id}, {"tokens", s.tokens}, {"aspects", aspects}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<RawSentence> load_jsonl(std::string_view text,
                                    const std::string &source) {
  std::vector<RawSentence> out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const std::string at = source + ":" + std::to_string(line_no);
    auto fail = [&](const std::string &field, const std::string &what) {
      throw DataError(at + ": field \"" + field + "\": " + what);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error &e) {
      throw DataError(at + ": " + e.what());
    }
    if (!j.is_object())
      throw DataError(at + ": expected a JSON object");

    auto string_field = [&](const json &o, const char *key,
                            const std::string &path) -> std::string {
      if (!o.contains(key))
        fail(path, "missing");
      if (!o[key].is_string())
        fail(path, "expected a string");
      return o[key].get<std::string>();
    };
    auto string_list = [&](const json &o, const char *key,
                           const std::string &path) {
      if (!o.contains(key))
        fail(path, "missing");
      if (!o[key].is_array())
        fail(path, "expected an array of strings");
      std::vector<std::string> v;
      for (const auto &e : o[key]) {
        if (!e.is_string())
          fail(path, "expected an array of strings");
        v.push_back(e.get<std::string>());
      }
      return v;
    };

    RawSentence s;
    s.id = string_field(j, "id", "id");
    s.tokens = string_list(j, "tokens", "tokens");
    if (s.tokens.empty())
      fail("tokens", "empty sentence");
    if (!j.contains("aspects"))
      fail("aspects", "missing");
    if (!j["aspects"].is_array() || j["aspects"].empty())
      fail("aspects", "expected a non-empty array");
    std::size_t k = 0;
    for (const auto &a : j["aspects"]) {
      const std::string path = "aspects[" + std::to_string(k++) + "]";
      if (!a.is_object())
        fail(path, "expected an object");
      AspectLabel p;
      try {
        p.label = parse_label(string_field(a, "label", path + ".label"));
      } catch (const DataError &) {
        throw;
      } catch (const ValidationError &e) {
        fail(path + ".label", e.what());
      }
      try {
        p.aspect.kind = parse_task_kind(string_field(a, "kind", path + ".kind"));
      } catch (const DataError &) {
        throw;
      } catch (const ValidationError &e) {
        fail(path + ".kind", e.what());
      }
      if (p.aspect.kind == TaskKind::Category) {
        p.aspect = category_aspect(string_field(a, "name", path + ".name"));
        if (a.contains("tokens"))
          p.aspect.tokens = string_list(a, "tokens", path + ".tokens");
        if (p.aspect.tokens.empty())
          fail(path + ".name", "category has no word characters");
      } else {
        const auto words = string_list(a, "tokens", path + ".tokens");
        if (words.empty())
          fail(path + ".tokens", "empty term");
        std::size_t from = 0;
        if (a.contains("from") || a.contains("to")) {
          if (!a.contains("from") || !a["from"].is_number_unsigned())
            fail(path + ".from", "expected a token index");
          if (!a.contains("to") || !a["to"].is_number_unsigned())
            fail(path + ".to", "expected a token index");
          from = a["from"].get<std::size_t>();
          const auto to = a["to"].get<std::size_t>();
          if (to != from + words.size() || to > s.tokens.size() ||
              !std::equal(words.begin(), words.end(),
                          s.tokens.begin() + static_cast<std::ptrdiff_t>(from)))
            fail(path + ".to", "span does not match the term tokens");
        } else if (auto found = find_subsequence(s.tokens, words)) {
          from = *found;
        } else {
          fail(path + ".tokens", "term not found in the sentence");
        }
        p.aspect = term_aspect(s.tokens, from, from + words.size());
        if (a.contains("name"))
          p.aspect.name = string_field(a, "name", path + ".name");
      }
      s.aspects.push_back(std::move(p));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------- DS, HDS, NC

std::vector<Instance> expand(const std::vector<RawSentence> &raw) {
  std::vector<Instance> out;
  for (const auto &s : raw)
    for (const auto &p : s.aspects)
      out.push_back({s.id, s.tokens, p.aspect, p.label});
  return out;
}

std::string to_string(HdsRule r) {
  return r == HdsRule::Distinct ? "distinct" : "two-labels";
}

HdsRule parse_hds_rule(std::string_view s) {
  if (s == "distinct")
    return HdsRule::Distinct;
  if (s == "two-labels")
    return HdsRule::TwoLabels;
  throw ValidationError("unknown hds rule \"" + std::string(s) +
                        "\" (expected distinct or two-labels)");
}

bool is_hard(const RawSentence &s, HdsRule rule) {
  if (s.aspects.size() < 2)
    return false;
  std::set<Label> labels;
  for (const auto &p : s.aspects)
    labels.insert(p.label);
  if (rule == HdsRule::Distinct)
    return labels.size() == s.aspects.size();
  return labels.size() >= 2;
}

std::vector<RawSentence> select_hds(const std::vector<RawSentence> &raw,
                                    HdsRule rule) {
  std::vector<RawSentence> out;
  std::copy_if(raw.begin(), raw.end(), std::back_inserter(out),
               [&](const RawSentence &s) { return is_hard(s, rule); });
  return out;
}

std::vector<Instance> extract_hds(const std::vector<RawSentence> &raw,
                                  HdsRule rule) {
  return expand(select_hds(raw, rule));
}

std::vector<Instance> build_nc(const std::vector<Instance> &instances) {
  std::vector<Instance> out;
  std::copy_if(instances.begin(), instances.end(), std::back_inserter(out),
               [](const Instance &i) { return i.label != Label::Conflict; });
  return out;
}

std::vector<RawSentence> build_nc(const std::vector<RawSentence> &raw) {
  std::vector<RawSentence> out;
  for (const auto &s : raw) {
    RawSentence kept = s;
    std::erase_if(kept.aspects, [](const AspectLabel &p) {
      return p.label == Label::Conflict;
    });
    if (!kept.aspects.empty())
      out.push_back(std::move(kept));
  }
  return out;
}

DatasetBundle make_bundle(const std::vector<RawSentence> &train,
                          const std::vector<RawSentence> &test, TaskKind task,
                          HdsRule rule, bool nc) {
  DatasetBundle b;
  b.task = task;
  b.rule = rule;
  b.nc = nc;
  for (const auto *split : {&train, &test})
    for (const auto &s : *split)
      for (const auto &p : s.aspects)
        if (p.aspect.kind != task)
          throw DataError("sentence " + s.id + ": " + to_string(p.aspect.kind) +
                          " aspect in a " + to_string(task) + " dataset");
  auto keep = [&](std::vector<Instance> v) { return nc ? build_nc(v) : v; };
  b.ds_train = keep(expand(train));
  b.ds_test = keep(expand(test));
  b.hds_train = keep(extract_hds(train, rule));
  b.hds_test = keep(extract_hds(test, rule));
  return b;
}

LabelCounts count_labels(const std::vector<Instance> &instances) {
  LabelCounts c;
  for (const auto &i : instances)
    switch (i.label) {
    case Label::Positive: ++c.positive; break;
    case Label::Negative: ++c.negative; break;
    case Label::Neutral: ++c.neutral; break;
    case Label::Conflict: ++c.conflict; break;
    }
  return c;
}

// --------------------------------------------------------------- embeddings

EmbeddingFile read_embeddings(std::istream &in,
                              const std::unordered_set<std::string> *wanted,
                              const std::string &source) {
  EmbeddingFile out;
  std::size_t line_no = 0;
  std::vector<std::string_view> fields;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    fields.clear();
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto b = rest.find_first_not_of(' ');
      if (b == std::string_view::npos)
        break;
      rest.remove_prefix(b);
      const auto e = rest.find(' ');
      fields.push_back(rest.substr(0, e));
      rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
    }
    if (fields.empty())
      continue;
    const std::string at = source + ":" + std::to_string(line_no);
    if (out.dim == 0) {
      // A "count dim" header line as written by word2vec tools.
      std::size_t a = 0, b = 0;
      if (line_no == 1 && fields.size() == 2 &&
          std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), a)
                  .ec == std::errc() &&
          std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), b)
                  .ec == std::errc() &&
          b > 0) {
        out.dim = b;
        continue;
      }
      if (fields.size() < 2)
        throw DataError(at + ": expected a token followed by its vector");
      out.dim = fields.size() - 1;
    }
    if (fields.size() < out.dim + 1)
      throw DataError(at + ": expected " + std::to_string(out.dim) +
                      " values, found " + std::to_string(fields.size() - 1));
    const std::size_t word_fields = fields.size() - out.dim;
    std::string token(fields[0]);
    for (std::size_t i = 1; i < word_fields; ++i)
      token.append(" ").append(fields[i]);
    if ((wanted && !wanted->contains(token)) || out.vectors.contains(token))
      continue;
    std::vector<float> v(out.dim);
    for (std::size_t i = 0; i < out.dim; ++i) {
      const auto f = fields[word_fields + i];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v[i]);
      if (ec != std::errc() || p != f.data() + f.size())
        throw DataError(at + ": bad number \"" + std::string(f) + "\"");
    }
    out.vectors.emplace(std::move(token), std::move(v));
  }
  if (in.bad())
    throw DataError(source + ": read failed");
  return out;
}

EmbeddingFile read_embeddings(const std::filesystem::path &path,
                              const std::unordered_set<std::string> *wanted) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  return read_embeddings(in, wanted, path.string());
}

// -------------------------------------------------------------- vocabulary

std::size_t Vocab::lookup(const std::string &token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnk : it->second;
}

std::vector<std::size_t>
Vocab::lookup(const std::vector<std::string> &words) const {
  std::vector<std::size_t> out;
  out.reserve(words.size());
  for (const auto &w : words)
    out.push_back(lookup(w));
  return out;
}

std::string Vocab::digest() const {
  std::string all;
  for (const auto &t : tokens) {
    all += t;
    all += '\n';
  }
  return hex64(fnv1a64(all));
}

void Vocab::reindex() {
  index.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    index.emplace(tokens[i], i);
}

std::unordered_set<std::string>
collect_tokens(const std::vector<Instance> &instances) {
  std::unordered_set<std::string> out;
  for (const auto &i : instances) {
    out.insert(i.tokens.begin(), i.tokens.end());
    out.insert(i.aspect.tokens.begin(), i.aspect.tokens.end());
  }
  return out;
}

Vocab build_vocab(const std::vector<Instance> &train,
                  const std::vector<Instance> &test, const EmbeddingFile &file,
                  std::uint64_t seed) {
  if (file.dim == 0)
    throw DataError("embedding file holds no vectors");
  const auto train_set = collect_tokens(train);
  std::vector<std::string> train_words(train_set.begin(), train_set.end());
  std::sort(train_words.begin(), train_words.end());
  std::vector<std::string> test_words;
  for (const auto &w : collect_tokens(test))
    if (!train_set.contains(w) && file.vectors.contains(w))
      test_words.push_back(w);
  std::sort(test_words.begin(), test_words.end());

  Vocab v;
  v.tokens = {"<pad>", "<unk>"};
  for (auto *words : {&train_words, &test_words})
    for (auto &w : *words)
      if (w != v.tokens[0] && w != v.tokens[1])
        v.tokens.push_back(std::move(w));
  v.reindex();

  v.embeddings = Tensor<float>(Shape{v.size(), file.dim});
  Rng rng(seed);
  for (std::size_t i = 1; i < v.size(); ++i) {
    auto it = file.vectors.find(v.tokens[i]);
    if (i != Vocab::kUnk && it != file.vectors.end()) {
      std::copy(it->second.begin(), it->second.end(), &v.embeddings.at(i, 0));
      ++v.pretrained;
    } else {
      for (std::size_t c = 0; c < file.dim; ++c)
        v.embeddings.at(i, c) = static_cast<float>(rng.uniform(-0.25, 0.25));
    }
  }
  return v;
}

std::vector<std::string> term_word_vocab(const std::vector<Instance> &train) {
  std::set<std::string> words;
  for (const auto &i : train)
    if (i.aspect.kind == TaskKind::Term)
      words.insert(i.aspect.tokens.begin(), i.aspect.tokens.end());
  return {words.begin(), words.end()};
}

std::vector<std::string> category_vocab(const std::vector<Instance> &train) {
  std::set<std::string> names;
  for (const auto &i : train)
    if (i.aspect.kind == TaskKind::Category)
      names.insert(i.aspect.name);
  return {names.begin(), names.end()};
}

std::vector<Encoded> encode(const std::vector<Instance> &instances,
                            const Vocab &vocab, std::size_t labels,
                            const std::vector<std::string> &recon_targets) {
  if (labels != 3 && labels != 4)
    throw ValidationError("label count must be 3 or 4, got " +
                          std::to_string(labels));
  std::unordered_map<std::string, std::size_t> target;
  for (std::size_t i = 0; i < recon_targets.size(); ++i)
    target.emplace(recon_targets[i], i);

  std::vector<Encoded> out;
  out.reserve(instances.size());
  for (const auto &inst : instances) {
    const std::string where = "sentence " + inst.sentence_id;
    if (inst.tokens.empty())
      throw DataError(where + ": empty sentence");
    if (inst.aspect.tokens.empty())
      throw DataError(where + ": aspect \"" + inst.aspect.name +
                      "\" has no tokens");
    Encoded e;
    e.label = static_cast<std::size_t>(inst.label);
    if (e.label >= labels)
      throw DataError(where + ": label " + to_string(inst.label) +
                      " outside a " + std::to_string(labels) + "-way classifier");
    e.tokens = vocab.lookup(inst.tokens);
    e.aspect = vocab.lookup(inst.aspect.tokens);
    if (inst.aspect.kind == TaskKind::Category) {
      auto it = target.find(inst.aspect.name);
      e.recon_known = it != target.end();
      e.category = e.recon_known ? it->second : 0;
    } else {
      std::set<std::size_t> words;
      for (const auto &w : inst.aspect.tokens) {
        auto it = target.find(w);
        if (it == target.end())
          e.recon_known = false;
        else
          words.insert(it->second);
      }
      e.term_words.assign(words.begin(), words.end());
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ----------------------------------------------------------------- batches

std::vector<Batch> make_batches(const std::vector<Encoded> &data,
                                std::size_t budget,
                                std::optional<std::uint64_t> seed) {
  if (budget == 0)
    throw ValidationError("token budget must be positive");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  std::optional<Rng> rng;
  if (seed) {
    rng.emplace(*seed);
    rng->shuffle(std::span<std::size_t>(order));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data[a].tokens.size() < data[b].tokens.size();
  });

  std::vector<Batch> out;
  Batch cur;
  auto flush = [&] {
    if (cur.rows.empty())
      return;
    cur.tokens.assign(cur.rows.size() * cur.steps, Vocab::kPad);
    cur.mask.assign(cur.rows.size() * cur.steps, 0);
    for (std::size_t r = 0; r < cur.rows.size(); ++r) {
      const auto &toks = data[cur.rows[r]].tokens;
      for (std::size_t t = 0; t < toks.size(); ++t) {
        cur.tokens[r * cur.steps + t] = toks[t];
        cur.mask[r * cur.steps + t] = 1;
      }
    }
    out.push_back(std::move(cur));
    cur = Batch{};
  };
  for (std::size_t i : order) {
    const std::size_t len = data[i].tokens.size();
    const std::size_t steps = std::max(cur.steps, len);
    if (!cur.rows.empty() && (cur.rows.size() + 1) * steps > budget)
      flush();
    cur.rows.push_back(i);
    cur.steps = std::max(cur.steps, len);
  }
  flush();
  if (rng)
    rng->shuffle(std::span<Batch>(out));
  return out;
}

} // namespace agdt
