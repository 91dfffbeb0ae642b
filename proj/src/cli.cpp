// SPDX-License-Identifier: Apache-2.0
#include <agdt/cli.h>

#include <algorithm>
#include <charconv>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include <agdt/checkpoint.h>
#include <agdt/io.h>

namespace agdt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kTokenizer = "lowercase-ascii-punct-split";

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void fail_if(const std::vector<std::string> &problems, const std::string &what) {
  if (problems.empty())
    return;
  std::string msg = what + ":";
  for (const auto &p : problems)
    msg += "\n  " + p;
  throw ValidationError(msg);
}

} // namespace

// ----------------------------------------------------------------- config

const std::vector<DatasetInfo> &known_datasets() {
  static const std::vector<DatasetInfo> all{
      {"restaurant-14", TaskKind::Category, 0.4},
      {"restaurant-large", TaskKind::Category, 0.4},
      {"restaurant-term", TaskKind::Term, 0.2},
      {"laptop-term", TaskKind::Term, 0.5}};
  return all;
}

std::optional<DatasetInfo> find_dataset(std::string_view name) {
  for (const auto &d : known_datasets())
    if (d.name == name)
      return d;
  return std::nullopt;
}

std::vector<std::uint64_t> parse_seeds(std::string_view s) {
  std::vector<std::uint64_t> out;
  auto number = [&](std::string_view part) {
    const std::string t = trim(part);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size())
      throw ValidationError("bad seed \"" + t + "\"");
    return v;
  };
  if (s.find(',') == std::string_view::npos) {
    const auto n = number(s);
    if (n == 0)
      throw ValidationError("seed count must be at least 1");
    for (std::uint64_t i = 1; i <= n; ++i)
      out.push_back(i);
    return out;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto part = s.substr(start, comma - start);
    if (!trim(part).empty() || comma != std::string_view::npos)
      out.push_back(number(part));
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return out;
}

std::map<std::string, std::string> parse_config_text(std::string_view text,
                                                     const std::string &source) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#')
      continue;
    const auto eq = t.find('=');
    const std::string at = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos)
      throw ValidationError(at + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty())
      throw ValidationError(at + ": empty key");
    if (!out.emplace(key, value).second)
      throw ValidationError(at + ": duplicate key \"" + key + "\"");
  }
  return out;
}

TaskKind RunConfig::task_kind() const {
  if (auto d = find_dataset(dataset))
    return d->task;
  return parse_task_kind(task.empty() ? "category" : task);
}

ModelConfig RunConfig::resolved_model() const {
  ModelConfig m = model;
  m.task = task_kind();
  if (lambda)
    m.lambda = *lambda;
  else if (auto d = find_dataset(dataset))
    m.lambda = d->lambda;
  for (const auto &a : ablate) {
    if (a == "ac")
      m.ac = false;
    else if (a == "ag")
      m.ag = false;
    else if (a == "ar")
      m.ar = false;
  }
  m.baseline = baseline == "dt" ? Baseline::DeepTransition : Baseline::Gru;
  m.pooling = pool == "max" ? Pooling::Max
              : pool == "mean" ? Pooling::Mean
                               : Pooling::Last;
  m.labels = nc ? 3 : kLabelCount;
  return m;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  if (!find_dataset(dataset) && dataset != "custom")
    out.push_back("unknown dataset \"" + dataset +
                  "\" (expected restaurant-14, restaurant-large, "
                  "restaurant-term, laptop-term or custom)");
  if (dataset == "custom" && task != "category" && task != "term")
    out.push_back("dataset custom needs task = category or term");
  if (dataset != "custom" && !task.empty() && find_dataset(dataset) &&
      task != to_string(find_dataset(dataset)->task))
    out.push_back("dataset " + dataset + " is a " +
                  to_string(find_dataset(dataset)->task) + " task, not " + task);
  for (const auto &a : ablate)
    if (a != "ac" && a != "ag" && a != "ar")
      out.push_back("unknown ablation \"" + a + "\" (expected ac, ag or ar)");
  if (baseline != "gru" && baseline != "dt")
    out.push_back("baseline must be gru or dt, got \"" + baseline + "\"");
  if (pool != "last" && pool != "max" && pool != "mean")
    out.push_back("pool must be last, max or mean, got \"" + pool + "\"");
  if (hds_rule != "distinct" && hds_rule != "two-labels")
    out.push_back("hds rule must be distinct or two-labels, got \"" + hds_rule +
                  "\"");
  try {
    parse_seeds(seeds);
  } catch (const ValidationError &e) {
    out.push_back(e.what());
  }
  ModelConfig m = resolved_model();
  m.task = TaskKind::Category;
  for (auto &p : m.problems())
    out.push_back(std::move(p));
  TrainConfig t = train;
  if (t.seeds.empty())
    t.seeds = {1};
  for (auto &p : t.problems())
    out.push_back(std::move(p));
  return out;
}

std::vector<std::string> RunConfig::canonical_lines() const {
  const ModelConfig m = resolved_model();
  std::string seed_list;
  try {
    for (auto s : parse_seeds(seeds))
      seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
  } catch (const ValidationError &) {
    seed_list = seeds;
  }
  std::vector<std::string> lines{
      "ac=" + std::string(m.ac ? "true" : "false"),
      "ag=" + std::string(m.ag ? "true" : "false"),
      "ar=" + std::string(m.ar ? "true" : "false"),
      "baseline=" + baseline,
      "bidirectional=" + std::string(m.bidirectional ? "true" : "false"),
      "budget=" + std::to_string(train.token_budget),
      "clip=" + format_double(train.clip_norm),
      "dataset=" + dataset,
      "depth=" + std::to_string(m.depth),
      "dev-fraction=" + format_double(train.dev_fraction),
      "epochs=" + std::to_string(train.epochs),
      "eval-every=" + std::to_string(train.eval_every),
      "hds-rule=" + hds_rule,
      "hidden=" + std::to_string(m.hidden),
      "hidden-dropout=" + format_double(m.hidden_dropout),
      "input-dropout=" + format_double(m.input_dropout),
      "lambda=" + format_double(m.lambda),
      "lr=" + format_double(train.adam.lr),
      "nc=" + std::string(nc ? "true" : "false"),
      "patience=" + std::to_string(train.patience),
      "pool=" + pool,
      "seeds=" + seed_list,
      "task=" + to_string(m.task)};
  std::sort(lines.begin(), lines.end());
  return lines;
}

std::string RunConfig::digest() const {
  std::string all;
  for (const auto &l : canonical_lines())
    all += l + "\n";
  return hex64(fnv1a64(all));
}

// ---------------------------------------------------------- prepared data

namespace {

std::string prefix(bool nc) { return nc ? "nc_" : ""; }

std::vector<RawSentence> read_sentences(const fs::path &path, TaskKind kind,
                                        const CategoryMap &map) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
  if (first != std::string::npos && text[first] == '<') {
    if (text.find("<Reviews") != std::string::npos) {
      if (kind != TaskKind::Category)
        throw ValidationError(path.string() +
                              ": opinion files only provide category aspects");
      return parse_semeval_opinions_xml(text, map, path.string());
    }
    return parse_semeval_xml(text, kind, path.string());
  }
  return load_jsonl(text, path.string());
}

json counts_json(const std::vector<Instance> &v) {
  const auto c = count_labels(v);
  return {{"positive", c.positive},
          {"negative", c.negative},
          {"neutral", c.neutral},
          {"conflict", c.conflict},
          {"total", c.total()}};
}

json split_stats(const std::vector<RawSentence> &raw, HdsRule rule) {
  const auto ds = expand(raw);
  const auto hds = extract_hds(raw, rule);
  json candidates = json::object();
  for (auto r : {HdsRule::Distinct, HdsRule::TwoLabels})
    candidates[to_string(r)] = extract_hds(raw, r).size();
  return {{"sentences", raw.size()},
          {"ds", counts_json(ds)},
          {"hds", counts_json(hds)},
          {"nc", counts_json(build_nc(ds))},
          {"nc_hds", counts_json(build_nc(hds))},
          {"hds_candidates", candidates}};
}

struct Prepared {
  DatasetBundle bundle;
  json meta;
  /// Sorted training tokens, defining the vocabulary digest of the data.
  std::string data_digest;
};

std::string token_digest(const std::vector<Instance> &train) {
  const auto set = collect_tokens(train);
  std::vector<std::string> words(set.begin(), set.end());
  std::sort(words.begin(), words.end());
  std::string all;
  for (const auto &w : words)
    all += w + "\n";
  return hex64(fnv1a64(all));
}

std::vector<std::string> prepared_problems(const fs::path &dir, bool nc) {
  std::vector<std::string> out;
  if (dir.empty()) {
    out.push_back("--data-dir is required");
    return out;
  }
  for (const char *f : {"meta.json", "train.jsonl", "test.jsonl",
                        "hds_train.jsonl", "hds_test.jsonl"}) {
    std::string name = f;
    if (nc && name != "meta.json")
      name = "nc_" + name;
    if (!fs::is_regular_file(dir / name))
      out.push_back("missing prepared file " + (dir / name).string() +
                    (nc ? " (prepare with --nc)" : ""));
  }
  return out;
}

Prepared load_prepared(const fs::path &dir, bool nc) {
  Prepared p;
  try {
    p.meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::exception &e) {
    throw DataError((dir / "meta.json").string() + ": " + e.what());
  }
  const TaskKind kind =
      parse_task_kind(p.meta.value("task", std::string("category")));
  auto load = [&](const std::string &name) {
    const fs::path path = dir / (prefix(nc) + name);
    auto raw = load_jsonl(read_file(path), path.string());
    for (const auto &s : raw)
      for (const auto &a : s.aspects)
        if (a.aspect.kind != kind)
          throw DataError(path.string() + ": sentence " + s.id + " has a " +
                          to_string(a.aspect.kind) + " aspect in a " +
                          to_string(kind) + " dataset");
    return raw;
  };
  p.bundle.task = kind;
  p.bundle.nc = nc;
  p.bundle.rule = parse_hds_rule(p.meta.value("hds_rule", std::string("distinct")));
  p.bundle.ds_train = expand(load("train.jsonl"));
  p.bundle.ds_test = expand(load("test.jsonl"));
  p.bundle.hds_train = expand(load("hds_train.jsonl"));
  p.bundle.hds_test = expand(load("hds_test.jsonl"));
  p.data_digest = token_digest(p.bundle.ds_train);
  return p;
}

EmbeddingFile load_embeddings_for(const DatasetBundle &b, const fs::path &path) {
  auto wanted = collect_tokens(b.ds_train);
  for (const auto *split : {&b.ds_test, &b.hds_test, &b.hds_train})
    for (const auto &w : collect_tokens(*split))
      wanted.insert(w);
  auto file = read_embeddings(path, &wanted);
  if (file.dim == 0)
    throw DataError(path.string() + ": no vectors");
  return file;
}

// --------------------------------------------------------------- commands

struct PrepareOptions {
  std::string dataset = "restaurant-14";
  std::string task;
  std::vector<std::string> train, test;
  std::string category_map;
  std::string hds_rule = "distinct";
  bool nc = false;
  std::string out;
};

int cmd_prepare(const PrepareOptions &o, std::ostream &out) {
  std::vector<std::string> problems;
  RunConfig rc;
  rc.dataset = o.dataset;
  rc.task = o.task;
  rc.hds_rule = o.hds_rule;
  for (auto &p : rc.problems())
    if (p.find("dataset") != std::string::npos ||
        p.find("hds rule") != std::string::npos)
      problems.push_back(std::move(p));
  if (o.train.empty())
    problems.push_back("--train needs at least one file");
  if (o.test.empty())
    problems.push_back("--test needs at least one file");
  for (const auto *files : {&o.train, &o.test})
    for (const auto &f : *files)
      if (!fs::is_regular_file(f))
        problems.push_back("cannot read " + f);
  if (!o.category_map.empty() && !fs::is_regular_file(o.category_map))
    problems.push_back("cannot read " + o.category_map);
  if (o.out.empty())
    problems.push_back("--out is required");
  fail_if(problems, "invalid prepare options");

  const TaskKind kind = rc.task_kind();
  const HdsRule rule = parse_hds_rule(o.hds_rule);
  const CategoryMap map = o.category_map.empty()
                              ? CategoryMap::standard()
                              : CategoryMap::parse(read_file(o.category_map));
  auto read_all = [&](const std::vector<std::string> &files) {
    std::vector<std::vector<RawSentence>> parts;
    for (const auto &f : files)
      parts.push_back(read_sentences(f, kind, map));
    return parts;
  };
  const auto train_parts = read_all(o.train);
  const auto test_parts = read_all(o.test);
  std::vector<RawSentence> train, test;
  if (o.dataset == "restaurant-large") {
    test = merge_sentences(test_parts);
    train = merge_sentences(train_parts, test);
  } else {
    for (const auto &p : train_parts)
      train.insert(train.end(), p.begin(), p.end());
    for (const auto &p : test_parts)
      test.insert(test.end(), p.begin(), p.end());
  }

  const fs::path dir(o.out);
  write_file_atomic(dir / "train.jsonl", write_jsonl(train));
  write_file_atomic(dir / "test.jsonl", write_jsonl(test));
  write_file_atomic(dir / "hds_train.jsonl", write_jsonl(select_hds(train, rule)));
  write_file_atomic(dir / "hds_test.jsonl", write_jsonl(select_hds(test, rule)));
  if (o.nc) {
    write_file_atomic(dir / "nc_train.jsonl", write_jsonl(build_nc(train)));
    write_file_atomic(dir / "nc_test.jsonl", write_jsonl(build_nc(test)));
    write_file_atomic(dir / "nc_hds_train.jsonl",
                      write_jsonl(build_nc(select_hds(train, rule))));
    write_file_atomic(dir / "nc_hds_test.jsonl",
                      write_jsonl(build_nc(select_hds(test, rule))));
  }
  const json meta{{"dataset", o.dataset},
                  {"task", to_string(kind)},
                  {"hds_rule", to_string(rule)},
                  {"tokenizer", kTokenizer},
                  {"nc", o.nc}};
  const json stats{{"dataset", o.dataset},
                   {"task", to_string(kind)},
                   {"hds_rule", to_string(rule)},
                   {"tokenizer", kTokenizer},
                   {"train", split_stats(train, rule)},
                   {"test", split_stats(test, rule)}};
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
  write_file_atomic(dir / "stats.json", stats.dump(2) + "\n");
  out << stats.dump(2) << "\n";
  return 0;
}

void add_run_options(CLI::App &sub, RunConfig &rc, std::string &task,
                     std::string &data_dir, std::string &embeddings,
                     std::string &out_dir) {
  sub.add_option("--dataset", rc.dataset,
                 "restaurant-14, restaurant-large, restaurant-term, "
                 "laptop-term or custom");
  sub.add_option("--task", task, "category or term (custom datasets)");
  sub.add_option("--data-dir", data_dir, "prepared data directory");
  sub.add_option("--embeddings", embeddings, "word vectors, text format");
  sub.add_option("--out", out_dir, "output directory");
  sub.add_option("--depth", rc.model.depth, "transition cells per step");
  sub.add_option("--hidden", rc.model.hidden, "hidden size");
  sub.add_option_function<double>(
      "--lambda", [&rc](double v) { rc.lambda = v; },
      "reconstruction weight (dataset default)");
  sub.add_option("--seeds", rc.seeds, "seed count N (1..N) or a list a,b,c");
  sub.add_option_function<std::uint64_t>(
      "--seed", [&rc](std::uint64_t v) { rc.seeds = std::to_string(v) + ","; },
      "single seed");
  sub.add_option("--epochs", rc.train.epochs, "training epochs");
  sub.add_option("--ablate", rc.ablate, "disable ac, ag or ar (repeatable)")
      ->delimiter(',');
  sub.add_option("--baseline", rc.baseline, "encoder without the gate: gru or dt");
  sub.add_option("--pool", rc.pool, "last, max or mean");
  sub.add_flag("--bidirectional", rc.model.bidirectional, "add a reverse encoder");
  sub.add_flag("--nc", rc.nc, "three-class data without conflict");
  sub.add_option("--hds-rule", rc.hds_rule, "distinct or two-labels");
  sub.add_option("--input-dropout", rc.model.input_dropout, "embedding dropout");
  sub.add_option("--hidden-dropout", rc.model.hidden_dropout, "state dropout");
  sub.add_option("--budget", rc.train.token_budget, "tokens per batch");
  sub.add_option("--lr", rc.train.adam.lr, "Adam learning rate");
  sub.add_option("--clip", rc.train.clip_norm, "gradient norm limit");
  sub.add_option("--eval-every", rc.train.eval_every,
                 "epochs between test evaluations; 0 only at the end");
  sub.add_option("--patience", rc.train.patience,
                 "stop after this many epochs without loss improvement; 0 off");
  sub.add_option("--dev-fraction", rc.train.dev_fraction,
                 "hard training instances held out for development");
  sub.add_option("--jobs", rc.train.jobs, "seeds trained in parallel");
}

/// Validate everything, load data and embeddings, and build the experiment.
Experiment build_experiment(RunConfig &rc, bool need_out) {
  std::vector<std::string> problems = rc.problems();
  if (rc.embeddings.empty())
    problems.push_back("--embeddings is required");
  else if (!fs::is_regular_file(rc.embeddings))
    problems.push_back("cannot read " + rc.embeddings.string());
  if (need_out && rc.out.empty())
    problems.push_back("--out is required");
  for (auto &p : prepared_problems(rc.data_dir, rc.nc))
    problems.push_back(std::move(p));
  if (problems.empty()) {
    const json meta = json::parse(read_file(rc.data_dir / "meta.json"), nullptr,
                                  false);
    if (meta.is_discarded()) {
      problems.push_back((rc.data_dir / "meta.json").string() + " is not JSON");
    } else {
      const std::string task = meta.value("task", std::string());
      if (task != to_string(rc.task_kind()))
        problems.push_back("data in " + rc.data_dir.string() + " is a " + task +
                           " dataset, the run expects " +
                           to_string(rc.task_kind()));
      const std::string rule = meta.value("hds_rule", std::string());
      if (rule != rc.hds_rule)
        problems.push_back("data was prepared with hds rule " + rule +
                           ", the run asks for " + rc.hds_rule);
    }
  }
  fail_if(problems, "invalid configuration");

  rc.train.seeds = parse_seeds(rc.seeds);
  auto prepared = load_prepared(rc.data_dir, rc.nc);
  Experiment e;
  e.data = std::move(prepared.bundle);
  e.embeddings = load_embeddings_for(e.data, rc.embeddings);
  e.model = rc.resolved_model();
  e.train = rc.train;
  e.dataset = rc.dataset;
  e.config_digest = rc.digest();
  resolve_model_config(e.model, e.data, e.embeddings.dim).validate();
  return e;
}

json checkpoint_meta(const RunConfig &rc, const TrainedRun &run,
                     const std::string &data_digest) {
  return {{"seed", run.metrics.seed},
          {"dataset", rc.dataset},
          {"config_digest", rc.digest()},
          {"config", rc.canonical_lines()},
          {"data_digest", data_digest},
          {"vocab_digest", run.vocab.digest()},
          {"vocab", run.vocab.tokens},
          {"recon_targets", run.recon_targets},
          {"nc", rc.nc},
          {"hds_rule", rc.hds_rule},
          {"token_budget", rc.train.token_budget}};
}

void write_config(const RunConfig &rc) {
  std::string text = "# config digest " + rc.digest() + "\n";
  for (const auto &l : rc.canonical_lines())
    text += l + "\n";
  write_file_atomic(rc.out / "config.txt", text);
}

int cmd_train(RunConfig rc, std::ostream &out, std::ostream &err) {
  Experiment e = build_experiment(rc, true);
  const std::string data_digest = token_digest(e.data.ds_train);
  std::mutex log;
  e.on_epoch = [&](std::uint64_t seed, const EpochStats &s,
                   std::optional<double> acc) {
    std::lock_guard lock(log);
    err << "seed " << seed << " epoch " << s.epoch << " loss " << s.loss;
    if (acc)
      err << " test accuracy " << *acc;
    err << "\n";
  };
  e.on_run = [&](const TrainedRun &run) {
    save_checkpoint(rc.out / ("seed-" + std::to_string(run.metrics.seed) + ".ckpt"),
                    run.model, checkpoint_meta(rc, run, data_digest));
  };
  const auto report = run_experiment(e);
  write_config(rc);
  const std::string text = report.to_json().dump(2) + "\n";
  write_file_atomic(rc.out / "metrics.json", text);
  out << text;
  return 0;
}

int cmd_sweep(RunConfig rc, const std::string &axis_name, std::ostream &out,
              std::ostream &err) {
  std::optional<SweepAxis> axis;
  try {
    axis = parse_sweep_axis(axis_name);
  } catch (const ValidationError &) {
  }
  std::vector<std::string> problems;
  if (!axis)
    problems.push_back("--axis must be depth or lambda, got \"" + axis_name + "\"");
  if (axis == SweepAxis::Lambda) {
    for (const auto &a : rc.ablate)
      if (a == "ar")
        problems.push_back("a lambda sweep needs the reconstruction objective");
  }
  fail_if(problems, "invalid sweep options");
  Experiment e = build_experiment(rc, true);
  std::mutex log;
  e.on_epoch = [&](std::uint64_t seed, const EpochStats &s,
                   std::optional<double>) {
    std::lock_guard lock(log);
    err << "seed " << seed << " epoch " << s.epoch << " loss " << s.loss << "\n";
  };
  const auto rows = sweep(*axis, e);
  json table = sweep_to_json(*axis, rows);
  write_config(rc);
  const std::string text = table.dump(2) + "\n";
  write_file_atomic(rc.out / ("sweep-" + to_string(*axis) + ".json"), text);
  out << text;
  return 0;
}

struct LoadedCheckpoint {
  Checkpoint<float> ckpt;
  Vocab vocab;
  std::vector<std::string> recon_targets;
};

LoadedCheckpoint open_checkpoint(const fs::path &path) {
  LoadedCheckpoint l{load_checkpoint<float>(path), {}, {}};
  const auto &meta = l.ckpt.meta;
  try {
    l.vocab.tokens = meta.at("vocab").get<std::vector<std::string>>();
    l.recon_targets = meta.at("recon_targets").get<std::vector<std::string>>();
  } catch (const json::exception &e) {
    throw CheckpointError(path.string() + ": incomplete metadata: " + e.what());
  }
  l.vocab.reindex();
  l.vocab.embeddings = l.ckpt.model.embeddings();
  if (l.vocab.size() != l.vocab.embeddings.rows())
    throw CheckpointError(path.string() + ": vocabulary has " +
                          std::to_string(l.vocab.size()) + " tokens but " +
                          std::to_string(l.vocab.embeddings.rows()) +
                          " embedding rows");
  return l;
}

int cmd_eval(const std::string &checkpoint, const std::string &data_dir,
             const std::string &out_file, std::ostream &out) {
  std::vector<std::string> problems;
  if (checkpoint.empty() || !fs::is_regular_file(checkpoint))
    problems.push_back("--checkpoint must name a readable file");
  fail_if(problems, "invalid eval options");
  const auto l = open_checkpoint(checkpoint);
  const auto &meta = l.ckpt.meta;
  const bool nc = meta.value("nc", false);
  problems = prepared_problems(data_dir, nc);
  fail_if(problems, "invalid eval options");

  const auto prepared = load_prepared(data_dir, nc);
  const std::string stored = meta.value("data_digest", std::string());
  if (stored != prepared.data_digest)
    throw ValidationError("vocabulary digest mismatch: checkpoint " + stored +
                          ", data " + prepared.data_digest);
  const auto &model = l.ckpt.model;
  if (model.config().task != prepared.bundle.task)
    throw ValidationError("checkpoint is a " + to_string(model.config().task) +
                          " model, data is " + to_string(prepared.bundle.task));
  const std::size_t budget = meta.value("token_budget", std::size_t{4096});
  const std::size_t labels = model.config().labels;
  const auto ds = encode(prepared.bundle.ds_test, l.vocab, labels, l.recon_targets);
  const auto hds = encode(prepared.bundle.hds_test, l.vocab, labels, l.recon_targets);
  const json report{
      {"dataset", meta.value("dataset", std::string())},
      {"config_digest", meta.value("config_digest", std::string())},
      {"seed", meta.value("seed", std::uint64_t{0})},
      {"ds_accuracy", evaluate_accuracy(model, ds, budget)},
      {"hds_accuracy", evaluate_accuracy(model, hds, budget)},
      {"recon_accuracy",
       evaluate_reconstruction(model, ds, model.config().task, budget)}};
  const std::string text = report.dump(2) + "\n";
  if (!out_file.empty())
    write_file_atomic(out_file, text);
  out << text;
  return 0;
}

int cmd_inspect(const std::string &checkpoint, const std::string &sentence,
                const std::string &aspect, bool vectors,
                const std::string &out_file, std::ostream &out) {
  std::vector<std::string> problems;
  if (checkpoint.empty() || !fs::is_regular_file(checkpoint))
    problems.push_back("--checkpoint must name a readable file");
  const auto words = tokenize(sentence);
  if (words.empty())
    problems.push_back("--sentence has no tokens");
  if (tokenize(aspect).empty())
    problems.push_back("--aspect has no tokens");
  fail_if(problems, "invalid inspect options");

  const auto l = open_checkpoint(checkpoint);
  const auto &model = l.ckpt.model;
  const auto aspect_words = model.config().task == TaskKind::Category
                                ? tokenize_category(aspect)
                                : tokenize(aspect);
  const auto records = inspect_gates(model, words, l.vocab.lookup(words),
                                     l.vocab.lookup(aspect_words));
  std::string text;
  for (const auto &r : records)
    text += r.to_json(vectors).dump() + "\n";
  if (!out_file.empty())
    write_file_atomic(out_file, text);
  out << text;
  return 0;
}

/// Insert "--key=value" for config entries the command line leaves unset.
std::vector<std::string> apply_config_file(const std::vector<std::string> &args,
                                           CLI::App &app) {
  auto it = std::find_if(args.begin(), args.end(), [](const std::string &a) {
    return a == "--config" || a.rfind("--config=", 0) == 0;
  });
  if (it == args.end())
    return args;
  std::string path;
  std::vector<std::string> rest(args.begin(), it);
  if (*it == "--config") {
    if (it + 1 == args.end())
      throw ValidationError("--config needs a file");
    path = *(it + 1);
    rest.insert(rest.end(), it + 2, args.end());
  } else {
    path = it->substr(9);
    rest.insert(rest.end(), it + 1, args.end());
  }
  if (!fs::is_regular_file(path))
    throw ValidationError("cannot read config file " + path);
  const auto entries = parse_config_text(read_file(path), path);

  CLI::App *sub = nullptr;
  std::size_t sub_at = 0;
  for (std::size_t i = 0; i < rest.size() && !sub; ++i)
    for (auto *s : app.get_subcommands({}))
      if (s->get_name() == rest[i]) {
        sub = s;
        sub_at = i;
        break;
      }
  if (!sub)
    throw ValidationError("--config needs a command");

  std::vector<std::string> problems;
  std::vector<std::string> injected;
  for (const auto &[key, value] : entries) {
    const std::string flag = "--" + key;
    if (key == "config" || !sub->get_option_no_throw(flag)) {
      problems.push_back(path + ": unknown key \"" + key + "\" for " +
                         sub->get_name());
      continue;
    }
    const bool given = std::any_of(rest.begin(), rest.end(), [&](const auto &a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given)
      injected.push_back(flag + "=" + value);
  }
  fail_if(problems, "invalid config file");
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(sub_at) + 1,
              injected.begin(), injected.end());
  return rest;
}

} // namespace

int run_cli(const std::vector<std::string> &args_in, std::ostream &out,
            std::ostream &err) {
  CLI::App app{"Aspect-guided deep transition sentiment classifier", "agdt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  PrepareOptions prep;
  auto *p = app.add_subcommand("prepare", "parse review data into JSONL splits");
  p->add_option("--dataset", prep.dataset, "dataset identity");
  p->add_option("--task", prep.task, "category or term (custom datasets)");
  p->add_option("--train", prep.train, "training files (XML or JSONL)");
  p->add_option("--test", prep.test, "test files (XML or JSONL)");
  p->add_option("--category-map", prep.category_map,
                "ENTITY#ATTRIBUTE=category lines for opinion files");
  p->add_option("--hds-rule", prep.hds_rule, "distinct or two-labels");
  p->add_flag("--nc", prep.nc, "also write conflict-free splits");
  p->add_option("--out", prep.out, "output directory");

  RunConfig train_rc;
  std::string train_task, train_data, train_emb, train_out;
  auto *t = app.add_subcommand("train", "train one model per seed");
  add_run_options(*t, train_rc, train_task, train_data, train_emb, train_out);

  RunConfig sweep_rc;
  std::string sweep_task, sweep_data, sweep_emb, sweep_out, axis;
  auto *s = app.add_subcommand("sweep", "repeat training across depth or lambda");
  add_run_options(*s, sweep_rc, sweep_task, sweep_data, sweep_emb, sweep_out);
  s->add_option("--axis", axis, "depth or lambda")->required();

  std::string eval_ckpt, eval_data, eval_out;
  auto *ev = app.add_subcommand("eval", "score a checkpoint on prepared data");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data-dir", eval_data, "prepared data directory")->required();
  ev->add_option("--out", eval_out, "metrics file");

  std::string ins_ckpt, ins_sentence, ins_aspect, ins_out;
  bool ins_vectors = false;
  auto *in = app.add_subcommand("inspect", "aspect-gate activations per token");
  in->add_option("--checkpoint", ins_ckpt, "checkpoint file")->required();
  in->add_option("--sentence", ins_sentence, "raw sentence")->required();
  in->add_option("--aspect", ins_aspect, "category name or term")->required();
  in->add_flag("--vector", ins_vectors, "include full gate vectors");
  in->add_option("--out", ins_out, "JSON-lines file");

  try {
    auto args = apply_config_file(args_in, app);
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty())
      rev.pop_back(); // program name
    try {
      app.parse(rev);
    } catch (const CLI::ParseError &e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : 1;
    }
    auto finish = [](RunConfig &rc, const std::string &task,
                     const std::string &data, const std::string &emb,
                     const std::string &dir) {
      rc.task = task;
      rc.data_dir = data;
      rc.embeddings = emb;
      rc.out = dir;
    };
    if (p->parsed())
      return cmd_prepare(prep, out);
    if (t->parsed()) {
      finish(train_rc, train_task, train_data, train_emb, train_out);
      return cmd_train(train_rc, out, err);
    }
    if (s->parsed()) {
      finish(sweep_rc, sweep_task, sweep_data, sweep_emb, sweep_out);
      return cmd_sweep(sweep_rc, axis, out, err);
    }
    if (ev->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_out, out);
    if (in->parsed())
      return cmd_inspect(ins_ckpt, ins_sentence, ins_aspect, ins_vectors,
                         ins_out, out);
    return 1;
  } catch (const ValidationError &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

} // namespace agdt
