// SPDX-License-Identifier: Apache-2.0
#include <agdt/checkpoint.h>

#include <bit>
#include <cstring>

#include <agdt/io.h>

namespace agdt {

namespace {

constexpr char kMagic[8] = {'A', 'G', 'D', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
  void bytes(const void *p, std::size_t n) {
    out_.append(static_cast<const char *>(p), n);
  }
  template <typename U> void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  template <typename S> void real(S v) {
    if constexpr (sizeof(S) == 4)
      uint(std::bit_cast<std::uint32_t>(v));
    else
      uint(std::bit_cast<std::uint64_t>(v));
  }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

class Reader {
public:
  explicit Reader(const std::string &in) : in_(in) {}
  const char *bytes(std::size_t n) {
    if (n > in_.size() - pos_)
      throw CheckpointError("checkpoint truncated at byte " +
                            std::to_string(pos_));
    const char *p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U> U uint() {
    const auto *p = reinterpret_cast<const unsigned char *>(bytes(sizeof(U)));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(p[i]) << (8 * i);
    return v;
  }
  template <typename S> S real() {
    if constexpr (sizeof(S) == 4)
      return std::bit_cast<S>(uint<std::uint32_t>());
    else
      return std::bit_cast<S>(uint<std::uint64_t>());
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

private:
  const std::string &in_;
  std::size_t pos_ = 0;
};

template <typename S>
void put_tensor(Writer &w, const std::string &name, const Tensor<S> &t) {
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.uint<std::uint8_t>(sizeof(S));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape())
    w.uint<std::uint64_t>(e);
  for (S v : t.values())
    w.real(v);
}

template <typename S> std::pair<std::string, Tensor<S>> get_tensor(Reader &r) {
  const auto len = r.uint<std::uint32_t>();
  std::string name(r.bytes(len), len);
  const auto dtype = r.uint<std::uint8_t>();
  if (dtype != sizeof(S))
    throw CheckpointError("tensor " + name + " stored with " +
                          std::to_string(dtype) + "-byte values, expected " +
                          std::to_string(sizeof(S)));
  const auto rank = r.uint<std::uint32_t>();
  if (rank > 8)
    throw CheckpointError("tensor " + name + " has implausible rank " +
                          std::to_string(rank));
  Shape shape(rank);
  for (auto &e : shape)
    e = static_cast<std::size_t>(r.uint<std::uint64_t>());
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e != 0 && n > r.remaining() / e)
      throw CheckpointError("tensor " + name + " larger than the file");
    n *= e;
  }
  if (n > r.remaining() / sizeof(S))
    throw CheckpointError("tensor " + name + " larger than the file");
  Tensor<S> t(shape);
  for (auto &v : t.values())
    v = r.real<S>();
  return {std::move(name), std::move(t)};
}

} // namespace

nlohmann::json to_json(const ModelConfig &c) {
  return {{"hidden", c.hidden},
          {"embedding", c.embedding},
          {"depth", c.depth},
          {"task", to_string(c.task)},
          {"labels", c.labels},
          {"recon_size", c.recon_size},
          {"lambda", c.lambda},
          {"ac", c.ac},
          {"ag", c.ag},
          {"ar", c.ar},
          {"baseline", to_string(c.baseline)},
          {"input_dropout", c.input_dropout},
          {"hidden_dropout", c.hidden_dropout},
          {"pooling", to_string(c.pooling)},
          {"bidirectional", c.bidirectional}};
}

ModelConfig model_config_from_json(const nlohmann::json &j) {
  try {
    ModelConfig c;
    c.hidden = j.at("hidden").get<std::size_t>();
    c.embedding = j.at("embedding").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.task = parse_task_kind(j.at("task").get<std::string>());
    c.labels = j.at("labels").get<std::size_t>();
    c.recon_size = j.at("recon_size").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.ac = j.at("ac").get<bool>();
    c.ag = j.at("ag").get<bool>();
    c.ar = j.at("ar").get<bool>();
    c.baseline = parse_baseline(j.at("baseline").get<std::string>());
    c.input_dropout = j.at("input_dropout").get<double>();
    c.hidden_dropout = j.at("hidden_dropout").get<double>();
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.bidirectional = j.at("bidirectional").get<bool>();
    return c;
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError(std::string("bad model config: ") + e.what());
  }
}

template <typename S>
std::string encode_checkpoint(const AgdtModel<S> &model,
                              const nlohmann::json &meta) {
  nlohmann::json header = meta.is_null() ? nlohmann::json::object() : meta;
  header["model"] = to_json(model.config());
  const std::string text = header.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  std::uint64_t count = 1;
  model.visit([&](const std::string &, const Tensor<S> &) { ++count; });
  w.uint<std::uint64_t>(count);
  put_tensor(w, "embeddings", model.embeddings());
  model.visit([&](const std::string &name, const Tensor<S> &t) {
    put_tensor(w, name, t);
  });
  return w.take();
}

template <typename S> Checkpoint<S> decode_checkpoint(const std::string &bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic ||
      std::memcmp(r.bytes(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const auto header_len = r.uint<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string(r.bytes(header_len), header_len));
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (!header.contains("model"))
    throw CheckpointError("checkpoint header lacks a model config");
  const ModelConfig config = model_config_from_json(header["model"]);
  header.erase("model");

  const auto count = r.uint<std::uint64_t>();
  if (count == 0)
    throw CheckpointError("checkpoint holds no tensors");
  auto [first, embeddings] = get_tensor<S>(r);
  if (first != "embeddings")
    throw CheckpointError("first tensor is " + first + ", expected embeddings");

  Checkpoint<S> out{AgdtModel<S>::zeros(config, std::move(embeddings)),
                    std::move(header)};
  std::uint64_t seen = 1;
  out.model.visit([&](const std::string &name, Tensor<S> &t) {
    if (seen++ >= count)
      throw CheckpointError("checkpoint lacks tensor " + name);
    auto [stored, value] = get_tensor<S>(r);
    if (stored != name)
      throw CheckpointError("found tensor " + stored + ", expected " + name);
    if (!value.same_shape(t))
      throw CheckpointError("tensor " + name + " has shape " +
                            shape_string(value.shape()) + ", expected " +
                            shape_string(t.shape()));
    t = std::move(value);
  });
  if (seen != count || !r.done())
    throw CheckpointError("trailing data after the last tensor");
  return out;
}

template <typename S>
void save_checkpoint(const std::filesystem::path &path,
                     const AgdtModel<S> &model, const nlohmann::json &meta) {
  write_file_atomic(path, encode_checkpoint(model, meta));
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path &path) {
  return decode_checkpoint<S>(read_file(path));
}

#define AGDT_INSTANTIATE_CHECKPOINT(S)                                         \
  template std::string encode_checkpoint<S>(const AgdtModel<S> &,              \
                                            const nlohmann::json &);           \
  template Checkpoint<S> decode_checkpoint<S>(const std::string &);            \
  template void save_checkpoint<S>(const std::filesystem::path &,              \
                                   const AgdtModel<S> &, const nlohmann::json &); \
  template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path &);

AGDT_INSTANTIATE_CHECKPOINT(float)
AGDT_INSTANTIATE_CHECKPOINT(double)

} // namespace agdt
