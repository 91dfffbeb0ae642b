// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.h
 * @brief  Run configuration and the prepare / train / eval / sweep /
 *         inspect commands behind the agdt executable.
 */
#ifndef AGDT_CLI_H
#define AGDT_CLI_H

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <agdt/corpus.h>
#include <agdt/model.h>
#include <agdt/trainer.h>

namespace agdt {

/// Known dataset identities with their task kind and default lambda.
struct DatasetInfo {
  std::string name;
  TaskKind task;
  double lambda;
};
const std::vector<DatasetInfo> &known_datasets();
std::optional<DatasetInfo> find_dataset(std::string_view name);

struct RunConfig {
  std::string dataset = "restaurant-14";
  std::string task; ///< only for dataset "custom"
  std::filesystem::path data_dir, embeddings, out, checkpoint;
  ModelConfig model;
  std::optional<double> lambda; ///< dataset default when unset
  TrainConfig train;
  std::vector<std::string> ablate;
  std::string baseline = "gru";
  std::string pool = "last";
  std::string hds_rule = "distinct";
  bool nc = false;
  std::string seeds = "5";

  /// Model config with ablations, pooling and lambda applied.
  ModelConfig resolved_model() const;
  TaskKind task_kind() const;
  /// Every problem with the settings themselves (paths excluded).
  std::vector<std::string> problems() const;
  /// Sorted "key=value" lines of every result-affecting setting.
  std::vector<std::string> canonical_lines() const;
  /// FNV-1a of the canonical lines, as 16 hex digits.
  std::string digest() const;
};

/// "N" for seeds 1..N, or a comma-separated list.
std::vector<std::uint64_t> parse_seeds(std::string_view s);

/// Flat "key = value" text; '#' starts a comment line.
std::map<std::string, std::string> parse_config_text(std::string_view text,
                                                     const std::string &source);

/// Run the command line. Returns the process exit code: 0 success,
/// 1 invalid input or configuration, 2 runtime failure.
int run_cli(const std::vector<std::string> &args, std::ostream &out,
            std::ostream &err);

} // namespace agdt

#endif // AGDT_CLI_H
