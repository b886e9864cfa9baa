#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mrbd/corpus.hpp"
#include "mrbd/eval.hpp"
#include "mrbd/synthetic.hpp"

namespace mrbd::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kModelTrain = "train ablate sweep";
constexpr const char* kUsesData = "train evaluate ablate sweep";

const std::vector<KeySpec> kSchema{
    {"seed", Kind::integer, "1", "prepare train evaluate ablate sweep", "root seed of every random stream"},
    {"threads", Kind::integer, "2", "train evaluate ablate sweep", "worker threads"},
    {"out_dir", Kind::text, "run", "prepare train evaluate ablate sweep report", "directory for outputs"},
    {"data_dir", Kind::text, "data", kUsesData, "prepared dataset (output of prepare)"},
    {"eval_batch", Kind::integer, "64", kUsesData, "batch size for loss evaluation and decoding"},

    {"input", Kind::text, "", "prepare", "directory holding train.tsv, validation.tsv, test.tsv"},
    {"synthetic", Kind::boolean, "false", "prepare", "generate the synthetic template corpus instead"},
    {"sizes", Kind::size_list, "1000,150,150", "prepare", "synthetic train,validation,test sizes"},
    {"templates", Kind::integer, "12", "prepare", "synthetic templates in use (1-24)"},
    {"synthetic_noise", Kind::real, "0", "prepare", "fraction of synthetic train responses randomised"},
    {"vocab_size", Kind::integer, "20000", "prepare", "vocabulary cap including 4 reserved tokens"},

    {"embed_dim", Kind::integer, "32", kModelTrain, "embedding width"},
    {"hidden_dim", Kind::integer, "32", kModelTrain, "GRU width"},
    {"encoder_layers", Kind::integer, "2", kModelTrain, "bidirectional encoder layers"},
    {"decoder_layers", Kind::integer, "2", kModelTrain, "decoder layers"},
    {"dropout", Kind::real, "0.1", kModelTrain, "dropout rate"},
    {"max_decode_len", Kind::integer, "25", kModelTrain, "greedy decoding length cap"},

    {"strategy", Kind::text, "mrbd", kModelTrain, "plain, kd, ct, dml or mrbd"},
    {"students", Kind::integer, "0", kModelTrain, "group size; 0 picks the strategy default"},
    {"imitation", Kind::real, "0.5", kModelTrain, "imitation probability p of each peer gate"},
    {"temperature", Kind::real, "3", kModelTrain, "softmax temperature of the distillation terms"},
    {"learning_rate", Kind::real, "0.001", kModelTrain, "Adam step size"},
    {"clip_norm", Kind::real, "5", kModelTrain, "global gradient norm cap per model"},
    {"batch_size", Kind::integer, "64", kModelTrain, "training batch size"},
    {"epochs", Kind::integer, "10", kModelTrain, "maximum training epochs"},
    {"pretrain_epochs", Kind::integer, "3", kModelTrain, "supervised epochs before distilling (kd, ct)"},
    {"patience", Kind::integer, "5", kModelTrain, "epochs without validation improvement before stopping"},
    {"overlap", Kind::real, "0", kModelTrain, "overlap ratio r of the mrbd subtasks"},
    {"label_smoothing", Kind::real, "0", kModelTrain, "label smoothing of the NLL targets"},
    {"weight_decay", Kind::real, "0", kModelTrain, "L2 penalty added to the gradient"},
    {"bidirectional", Kind::boolean, "true", kModelTrain, "mrbd: JS distillation into both sides (false: KL into the student)"},
    {"shared_init", Kind::boolean, "false", kModelTrain, "start every model from the same initialisation"},
    {"max_steps", Kind::integer, "0", kModelTrain, "per-phase step cap; 0 for none"},
    {"train_noise", Kind::real, "0", "train", "fraction of training responses swapped before training"},
    {"noise_seed", Kind::integer, "1", "train sweep", "seed of the injected label noise"},

    {"checkpoint", Kind::text, "", "evaluate sweep", "checkpoint file to evaluate"},
    {"run_dir", Kind::text, "", "evaluate sweep", "train output directory; its selected model is used"},

    {"axis", Kind::text, "", "ablate", "overlap, imitation or mechanism"},
    {"values", Kind::text, "", "ablate", "comma separated axis values (default: the standard set)"},

    {"mode", Kind::text, "", "sweep", "noise or perturb"},
    {"fractions", Kind::real_list, "0,0.25,0.5", "sweep", "label noise fractions"},
    {"sigmas", Kind::real_list, "0,0.01,0.05", "sweep", "perturbation standard deviations"},
    {"trials", Kind::integer, "10", "sweep", "perturbation trials per sigma"},

    {"report", Kind::text, "", "report", "report.json to summarise"},
    {"replay", Kind::boolean, "false", "report", "rerun the report's command into out_dir and compare"},
};

const std::vector<std::string> kCommands{"prepare", "train", "evaluate", "ablate", "sweep", "report"};

const KeySpec& spec_of(const std::string& key) {
  for (const auto& s : kSchema) {
    if (key == s.name) return s;
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::uint64_t parse_integer(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (v.empty() || ec != std::errc() || p != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  double x = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (v.empty() || ec != std::errc() || p != end || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

void check_value(const KeySpec& s, const std::string& v) {
  switch (s.kind) {
    case Kind::integer: parse_integer(s.name, v); break;
    case Kind::real: parse_real(s.name, v); break;
    case Kind::boolean: parse_bool(s.name, v); break;
    case Kind::text: break;
    case Kind::real_list:
      for (const auto& x : split_list(v)) parse_real(s.name, x);
      break;
    case Kind::size_list:
      for (const auto& x : split_list(v)) parse_integer(s.name, x);
      break;
  }
}

// ---- files ----

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

/// SHA-1 of "blob <size>\0<content>", the hash git assigns to a file.
std::string git_blob_hash(const std::string& path) {
  const std::string content = read_file(path);
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) && EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string num(double x) { return format_double(x); }

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---- run context ----

struct Dataset {
  Vocabulary vocab;
  Corpus train, validation, test;
};

struct Run {
  std::string command;
  const RunConfig& cfg;
  fs::path out;
  std::ostream& log;
  Json inputs = Json::array();
  Json metrics = Json::object();
  std::vector<std::string> artifacts;

  Run(std::string name, const RunConfig& c, fs::path dir, std::ostream& os)
      : command(std::move(name)), cfg(c), out(std::move(dir)), log(os) {}

  void input(const std::string& path) { inputs.push_back({{"path", path}, {"sha1", git_blob_hash(path)}}); }

  void emit(const std::string& rel, const std::string& content) {
    write_file(out / rel, content);
    artifacts.push_back(rel);
  }

  Dataset load_data() {
    const fs::path dir = cfg.text("data_dir");
    Dataset d;
    const std::string vocab = (dir / "vocab.txt").string();
    const std::string files[] = {(dir / "train.tsv").string(), (dir / "validation.tsv").string(),
                                 (dir / "test.tsv").string()};
    d.vocab = Vocabulary::load(vocab);
    d.train = load_pairs(files[0], d.vocab, Split::train);
    d.validation = load_pairs(files[1], d.vocab, Split::validation);
    d.test = load_pairs(files[2], d.vocab, Split::test);
    for (const auto& f : files) input(f);
    input(vocab);
    return d;
  }

  Json report() const {
    Json config = Json::object();
    for (const auto& [k, v] : cfg.snapshot(command)) config[k] = v;
    Json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["metrics"] = metrics;
    Json a = artifacts;
    a.push_back("report.json");
    j["artifacts"] = a;
    j["timing"] = "timing.json";
    return j;
  }
};

std::string metric_csv_header(const std::string& first) {
  std::string s = first;
  for (const char* n : MetricReport::kNames) s += std::string(",") + n;
  return s;
}

std::string metric_csv_row(const MetricReport& r) {
  std::string s;
  for (double v : r.values()) s += "," + num(v);
  return s;
}

Json metric_json(const MetricReport& r) {
  Json j = Json::object();
  const auto v = r.values();
  for (std::size_t i = 0; i < v.size(); ++i) j[MetricReport::kNames[i]] = v[i];
  return j;
}

std::string responses_text(const std::vector<TokenSeq>& gen, const Vocabulary& vocab) {
  std::string s;
  for (const auto& r : gen) s += join_tokens(vocab.decode(r)) + "\n";
  return s;
}

// ---- commands ----

void cmd_prepare(Run& run) {
  const auto& cfg = run.cfg;
  const bool synthetic = cfg.flag("synthetic");
  const std::string input = cfg.text("input");
  if (synthetic == !input.empty()) throw ConfigError("prepare: give exactly one of --input DIR or --synthetic");
  TextCorpus splits[3];
  if (synthetic) {
    const auto sizes = cfg.counts("sizes");
    if (sizes.size() != 3) throw ConfigError("sizes: expected train,validation,test");
    try {
      auto s = synthetic::generate(cfg.count("templates"), cfg.real("synthetic_noise"), {sizes[0], sizes[1], sizes[2]},
                                   cfg.integer("seed"));
      splits[0] = std::move(s.train);
      splits[1] = std::move(s.validation);
      splits[2] = std::move(s.test);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (auto& c : splits) {
      std::erase_if(c.pairs, [](TextPair& p) { return !filter_pair(p); });
    }
  } else {
    const Split order[] = {Split::train, Split::validation, Split::test};
    for (int i = 0; i < 3; ++i) {
      const std::string path = (fs::path(input) / (std::string(split_name(order[i])) + ".tsv")).string();
      splits[i] = load_pairs(path, order[i]);
      run.input(path);
    }
  }
  const auto vocab = build_vocab(splits[0], cfg.count("vocab_size"));
  Json manifest;
  manifest["source"] = synthetic ? "synthetic" : "input";
  manifest["vocab_size"] = vocab.size();
  Json counts = Json::object();
  for (const auto& c : splits) {
    const std::string name = split_name(c.split);
    fs::create_directories(run.out);
    write_pairs((run.out / (name + ".tsv")).string(), c);
    run.artifacts.push_back(name + ".tsv");
    counts[name] = c.size();
    run.metrics[name + "_pairs"] = c.size();
  }
  manifest["splits"] = counts;
  vocab.save((run.out / "vocab.txt").string());
  run.artifacts.push_back("vocab.txt");
  run.metrics["vocab_size"] = vocab.size();
  run.emit("manifest.json", dump(manifest));
  run.log << "prepared " << splits[0].size() << "/" << splits[1].size() << "/" << splits[2].size()
          << " pairs, vocabulary " << vocab.size() << " in " << run.out.string() << "\n";
}

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

/// Validates the model and training keys before any data is touched.
Configs checked_configs(const RunConfig& cfg) {
  Configs c{cfg.model(Vocabulary::kReserved + 1), cfg.training()};
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.train.validate();
  return c;
}

std::string log_name(std::string value) {
  std::replace(value.begin(), value.end(), '/', '_');
  return value;
}

void cmd_train(Run& run) {
  auto [mc, tc] = checked_configs(run.cfg);
  const double noise = run.cfg.real("train_noise");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("train_noise must be in [0,1]");
  Dataset d = run.load_data();
  mc.vocab_size = d.vocab.size();
  const Corpus train = inject_noise(d.train, NoiseSpec{noise, run.cfg.integer("noise_seed")});
  const auto result = train_group(mc, tc, train, d.validation);

  Json group;
  group["strategy"] = std::string(strategy_name(tc.strategy));
  group["roles"] = result.roles;
  Json ckpts = Json::array();
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    const std::string rel = "checkpoints/" + result.roles[i] + ".ckpt";
    fs::create_directories(run.out / "checkpoints");
    save_checkpoint((run.out / rel).string(), result.models[i]);
    run.artifacts.push_back(rel);
    ckpts.push_back(rel);
  }
  group["checkpoints"] = ckpts;
  group["selected"] = result.selected;
  group["selected_checkpoint"] = ckpts[result.selected];
  group["val_nll"] = result.val_nll;
  run.emit("group.json", dump(group));
  run.emit("train_log.csv", result.log.csv());

  const double test = test_nll(result.models[result.selected], d.test, tc.eval_batch);
  run.metrics["selected"] = result.roles[result.selected];
  run.metrics["val_nll"] = result.val_nll[result.selected];
  run.metrics["test_nll"] = test;
  run.metrics["epochs_run"] = result.epochs_run;
  run.metrics["steps"] = result.steps;
  run.log << strategy_name(tc.strategy) << ": " << result.models.size() << " model(s), selected "
          << result.roles[result.selected] << ", val_nll " << num(result.val_nll[result.selected]) << ", test_nll "
          << num(test) << "\n";
}

std::string selected_checkpoint(const RunConfig& cfg, const std::string& command) {
  const std::string ckpt = cfg.text("checkpoint"), dir = cfg.text("run_dir");
  if (!ckpt.empty() && !dir.empty()) throw ConfigError(command + ": give --checkpoint or --run_dir, not both");
  if (!ckpt.empty()) return ckpt;
  if (dir.empty()) throw ConfigError(command + ": --checkpoint or --run_dir is required");
  const std::string manifest = (fs::path(dir) / "group.json").string();
  Json g;
  try {
    g = Json::parse(read_file(manifest));
    return (fs::path(dir) / g.at("selected_checkpoint").get<std::string>()).string();
  } catch (const Json::exception& e) {
    throw FormatError(manifest + ": " + e.what());
  }
}

ModelParams<float> load_model(Run& run, const std::string& path, const Vocabulary& vocab) {
  auto params = load_checkpoint(path);
  run.input(path);
  if (params.config().vocab_size != vocab.size()) {
    throw ConfigError(path + ": checkpoint vocabulary has " + std::to_string(params.config().vocab_size) +
                      " entries, dataset has " + std::to_string(vocab.size()));
  }
  return params;
}

void cmd_evaluate(Run& run) {
  const std::string path = selected_checkpoint(run.cfg, "evaluate");
  const std::size_t batch = run.cfg.count("eval_batch");
  if (batch == 0) throw ConfigError("eval_batch must be >= 1");
  Dataset d = run.load_data();
  const auto params = load_model(run, path, d.vocab);
  const auto gen = decode_corpus(params, d.test, batch);
  MetricReport r = evaluate_responses(gen, d.train, d.test);
  r.test_nll = test_nll(params, d.test, batch);
  run.emit("metrics.csv", metric_csv_header("checkpoint") + "\n" + fs::path(path).filename().string() +
                              metric_csv_row(r) + "\n");
  run.emit("responses.txt", responses_text(gen, d.vocab));
  run.metrics = metric_json(r);
  for (std::size_t i = 0; i < r.values().size(); ++i) {
    run.log << MetricReport::kNames[i] << " " << num(r.values()[i]) << "\n";
  }
}

void cmd_ablate(Run& run) {
  auto [mc, base] = checked_configs(run.cfg);
  if (base.strategy != Strategy::mrbd) throw ConfigError("ablate: strategy must be mrbd");
  const std::string axis = run.cfg.text("axis");
  std::vector<std::string> values = split_list(run.cfg.text("values"));
  std::vector<TrainConfig> configs;
  if (axis == "overlap" || axis == "imitation") {
    if (values.empty()) values = axis == "overlap" ? std::vector<std::string>{"0", "0.25", "0.5", "1"}
                                                   : std::vector<std::string>{"0.2", "0.5", "0.8", "1"};
    for (const auto& v : values) {
      TrainConfig c = base;
      (axis == "overlap" ? c.overlap : c.imitation) = parse_real("values", v);
      c.validate();
      configs.push_back(c);
    }
  } else if (axis == "mechanism") {
    if (values.empty()) values = {"full", "no_subtask", "no_subgroup", "no_bidistill"};
    for (const auto& v : values) {
      TrainConfig c = base;
      if (v == "no_subtask") {
        c.overlap = 1.0;
      } else if (v == "no_subgroup") {
        c.imitation = 1.0;
      } else if (v == "no_bidistill") {
        c.bidirectional = false;
      } else if (v != "full") {
        throw ConfigError("ablate: unknown mechanism '" + v + "' (full, no_subtask, no_subgroup, no_bidistill)");
      }
      c.validate();
      configs.push_back(c);
    }
  } else {
    throw ConfigError("ablate: unknown axis '" + axis + "' (expected overlap, imitation or mechanism)");
  }
  Dataset d = run.load_data();
  mc.vocab_size = d.vocab.size();
  std::string csv = metric_csv_header(axis) + ",val_nll\n";
  Json rows = Json::array();
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto result = train_group(mc, configs[i], d.train, d.validation);
    const auto& best = result.models[result.selected];
    const MetricReport r = evaluate_model(best, d.train, d.test, configs[i].eval_batch);
    csv += values[i] + metric_csv_row(r) + "," + num(result.val_nll[result.selected]) + "\n";
    run.emit("ablation_logs/" + log_name(values[i]) + ".csv", result.log.csv());
    Json row = metric_json(r);
    row["value"] = values[i];
    rows.push_back(row);
    run.log << axis << "=" << values[i] << " test_nll " << num(r.test_nll) << "\n";
  }
  run.emit("ablation.csv", csv);
  run.metrics["rows"] = rows;
}

void cmd_sweep(Run& run) {
  const std::string mode = run.cfg.text("mode");
  if (mode == "perturb") {
    const PerturbSpec spec{run.cfg.reals("sigmas"), run.cfg.count("trials"), run.cfg.integer("seed")};
    spec.validate();
    const std::string path = selected_checkpoint(run.cfg, "sweep");
    const std::size_t batch = run.cfg.count("eval_batch");
    if (batch == 0) throw ConfigError("eval_batch must be >= 1");
    Dataset d = run.load_data();
    const auto params = load_model(run, path, d.vocab);
    const auto rows = perturb_sweep(params, d.test, spec, std::max<std::size_t>(1, run.cfg.count("threads")), batch);
    std::string csv = "sigma,mean,std\n", trials = "sigma,trial,test_nll\n";
    Json j = Json::array();
    for (const auto& r : rows) {
      csv += num(r.sigma) + "," + num(r.mean) + "," + num(r.stddev) + "\n";
      for (std::size_t t = 0; t < r.losses.size(); ++t) {
        trials += num(r.sigma) + "," + std::to_string(t) + "," + num(r.losses[t]) + "\n";
      }
      j.push_back({{"sigma", r.sigma}, {"mean", r.mean}, {"std", r.stddev}});
      run.log << "sigma " << num(r.sigma) << " mean " << num(r.mean) << " std " << num(r.stddev) << "\n";
    }
    run.emit("sweep.csv", csv);
    run.emit("sweep_trials.csv", trials);
    run.metrics["rows"] = j;
  } else if (mode == "noise") {
    auto [mc, tc] = checked_configs(run.cfg);
    const auto fractions = run.cfg.reals("fractions");
    if (fractions.empty()) throw ConfigError("sweep: no fractions");
    for (double f : fractions) {
      if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("sweep: fractions must be in [0,1]");
    }
    Dataset d = run.load_data();
    mc.vocab_size = d.vocab.size();
    const auto rows = noise_sweep(mc, tc, d.train, d.validation, d.test, fractions, run.cfg.integer("noise_seed"));
    std::string csv = "fraction,test_nll,selected\n";
    Json j = Json::array();
    for (const auto& r : rows) {
      csv += num(r.fraction) + "," + num(r.test_nll) + "," + r.run.roles[r.selected] + "\n";
      run.emit("sweep_logs/fraction_" + num(r.fraction) + ".csv", r.run.log.csv());
      j.push_back({{"fraction", r.fraction}, {"test_nll", r.test_nll}});
      run.log << "fraction " << num(r.fraction) << " test_nll " << num(r.test_nll) << "\n";
    }
    run.emit("sweep.csv", csv);
    run.metrics["rows"] = j;
  } else {
    throw ConfigError("sweep: unknown mode '" + mode + "' (expected noise or perturb)");
  }
}

Json read_report(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

int cmd_report(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::string path = cfg.text("report");
  if (path.empty()) throw ConfigError("report: --report FILE is required");
  const std::string original = read_file(path);
  const Json j = read_report(path);
  std::string command;
  RunConfig replay;
  try {
    command = j.at("command").get<std::string>();
    if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end() || command == "report") {
      throw ConfigError(path + ": cannot replay command '" + command + "'");
    }
    for (const auto& [k, v] : j.at("config").items()) replay.set(k, v.get<std::string>());
  } catch (const Json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }

  if (cfg.flag("replay")) {
    const fs::path dir = cfg.text("out_dir");
    if (fs::exists(dir / "report.json") && fs::equivalent(dir / "report.json", path)) {
      throw ConfigError("report: --out_dir must differ from the replayed run");
    }
    replay.set("out_dir", dir.string());
    const int code = execute(command, replay, out, err);
    if (code != kOk) return code;
    if (read_file((dir / "report.json").string()) != original) {
      err << "replay: " << (dir / "report.json").string() << " differs from " << path << "\n";
      return kRuntime;
    }
    out << "replay: identical report\n";
    return kOk;
  }

  out << "command " << command << "\n";
  const Json metrics = j.value("metrics", Json::object()), inputs = j.value("inputs", Json::array());
  for (const auto& [k, v] : metrics.items()) out << k << " " << v.dump() << "\n";
  bool changed = false;
  for (const auto& in : inputs) {
    const std::string p = in.at("path").get<std::string>();
    std::string now;
    try {
      now = git_blob_hash(p);
    } catch (const FormatError&) {
      now = "missing";
    }
    if (now != in.at("sha1").get<std::string>()) {
      changed = true;
      err << "input changed: " << p << "\n";
    }
  }
  if (changed) return kRuntime;
  out << "inputs unchanged\n";
  return kOk;
}

}  // namespace

bool KeySpec::used_by(const std::string& command) const {
  std::istringstream in(commands);
  std::string c;
  while (in >> c) {
    if (c == command) return true;
  }
  return false;
}

const std::vector<KeySpec>& schema() { return kSchema; }
const std::vector<std::string>& commands() { return kCommands; }

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  RunConfig cfg;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (cfg.has(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  check_value(spec_of(key), value);
  values_[key] = value;
}

std::string RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  return it != values_.end() ? it->second : spec_of(key).fallback;
}

std::uint64_t RunConfig::integer(const std::string& key) const { return parse_integer(key, text(key)); }
double RunConfig::real(const std::string& key) const { return parse_real(key, text(key)); }
bool RunConfig::flag(const std::string& key) const { return parse_bool(key, text(key)); }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& x : split_list(text(key))) out.push_back(parse_real(key, x));
  return out;
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& x : split_list(text(key))) out.push_back(static_cast<std::size_t>(parse_integer(key, x)));
  return out;
}

std::map<std::string, std::string> RunConfig::snapshot(const std::string& command) const {
  std::map<std::string, std::string> out;
  for (const auto& s : kSchema) {
    if (std::string(s.name) != "out_dir" && s.used_by(command)) out[s.name] = text(s.name);
  }
  return out;
}

ModelConfig RunConfig::model(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = count("embed_dim");
  m.hidden_dim = count("hidden_dim");
  m.encoder_layers = count("encoder_layers");
  m.decoder_layers = count("decoder_layers");
  m.dropout = real("dropout");
  m.max_decode_len = count("max_decode_len");
  return m;
}

TrainConfig RunConfig::training() const {
  TrainConfig c;
  c.strategy = parse_strategy(text("strategy"));
  c.students = count("students");
  c.imitation = real("imitation");
  c.temperature = real("temperature");
  c.learning_rate = real("learning_rate");
  c.clip_norm = real("clip_norm");
  c.batch_size = count("batch_size");
  c.epochs = count("epochs");
  c.pretrain_epochs = count("pretrain_epochs");
  c.patience = count("patience");
  c.overlap = real("overlap");
  c.label_smoothing = real("label_smoothing");
  c.weight_decay = real("weight_decay");
  c.bidirectional = flag("bidirectional");
  c.shared_init = flag("shared_init");
  c.threads = count("threads");
  c.max_steps = count("max_steps");
  c.eval_batch = count("eval_batch");
  c.seed = integer("seed");
  return c;
}

int execute(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    if (command == "report") return cmd_report(cfg, out, err);
    Run run(command, cfg, fs::path(cfg.text("out_dir")), out);
    const auto start = std::chrono::steady_clock::now();
    if (command == "prepare") {
      cmd_prepare(run);
    } else if (command == "train") {
      cmd_train(run);
    } else if (command == "evaluate") {
      cmd_evaluate(run);
    } else if (command == "ablate") {
      cmd_ablate(run);
    } else if (command == "sweep") {
      cmd_sweep(run);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(run.out / "report.json", dump(run.report()));
    write_file(run.out / "timing.json", dump(Json{{"wall_seconds", seconds}}));
    return kOk;
  } catch (const ConfigError& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingDiverged& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kRuntime;
  } catch (const std::invalid_argument& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kRuntime;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-student bidirectional distillation for small seq2seq dialogue models", "mrbd"};
  app.require_subcommand(1, 1);
  const std::map<std::string, std::string> about{
      {"prepare", "write filtered pair files, vocabulary and manifest"},
      {"train", "train one strategy and write checkpoints, log and report"},
      {"evaluate", "decode the test split and compute the response metrics"},
      {"ablate", "retrain mrbd along one axis and tabulate the metrics"},
      {"sweep", "label-noise or parameter-perturbation robustness curve"},
      {"report", "summarise a report.json, check its inputs or replay it"},
  };
  std::string config_path;
  std::map<std::string, std::map<std::string, std::string>> given;
  std::map<std::string, std::vector<std::pair<std::string, CLI::Option*>>> options;
  for (const auto& c : kCommands) {
    auto* sub = app.add_subcommand(c, about.at(c));
    sub->add_option("--config", config_path, "flat key=value file; flags override it");
    for (const auto& s : kSchema) {
      if (!s.used_by(c)) continue;
      auto& slot = given[c][s.name];
      const std::string help = std::string(s.help) + " [" + s.fallback + "]";
      CLI::Option* o = s.kind == Kind::boolean ? sub->add_flag(std::string("--") + s.name + "{true}", slot, help)
                                               : sub->add_option(std::string("--") + s.name, slot, help);
      options[c].emplace_back(s.name, o);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
    for (const auto& [name, o] : options[command]) {
      if (o->count() > 0) cfg.set(name, given[command][name]);
    }
  } catch (const ConfigError& e) {
    err << "mrbd " << command << ": " << e.what() << "\n";
    return kUsage;
  }
  return execute(command, cfg, out, err);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"mrbd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mrbd::cli
