// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.h
 * @brief  Binary model container.
 *
 * Layout, all integers little-endian:
 *   "AGDTCKPT"  u32 version  u64 header_len  header (UTF-8 JSON)
 *   u64 tensor_count, then per tensor:
 *   u32 name_len  name  u8 dtype(4|8)  u32 rank  u64 extents[rank]  values
 *
 * The header holds the model config under "model" plus caller metadata.
 * The first tensor is the frozen embedding table, named "embeddings".
 */
#ifndef AGDT_CHECKPOINT_H
#define AGDT_CHECKPOINT_H

#include <filesystem>
#include <string>

#include <json.hpp>

#include <agdt/model.h>

namespace agdt {

/// Malformed or incompatible checkpoint bytes.
class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig &c);
ModelConfig model_config_from_json(const nlohmann::json &j);

template <typename S> struct Checkpoint {
  AgdtModel<S> model;
  nlohmann::json meta; ///< caller metadata, without the "model" key
};

template <typename S>
std::string encode_checkpoint(const AgdtModel<S> &model,
                              const nlohmann::json &meta);
template <typename S> Checkpoint<S> decode_checkpoint(const std::string &bytes);

template <typename S>
void save_checkpoint(const std::filesystem::path &path,
                     const AgdtModel<S> &model, const nlohmann::json &meta);
template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path &path);

} // namespace agdt

#endif // AGDT_CHECKPOINT_H
