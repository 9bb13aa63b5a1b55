#include "multimatch/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "multimatch/error.hpp"
#include "textio.hpp"

namespace multimatch {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      // data
      {"task", "gaussian", "synthetic task family (gaussian)"},
      {"num_classes", "4", "number of classes C"},
      {"input_dim", "16", "feature dimension (>= num_classes)"},
      {"class_separation", "3.5", "pairwise distance between class means (unit-variance noise)"},
      {"split", "balanced", "balanced | long_tail"},
      {"labels_per_class", "10", "balanced split: labeled samples per class"},
      {"unlabeled_per_class", "500", "balanced split: unlabeled samples per class"},
      {"long_tail_n1", "1000", "long-tail split: labeled size of the largest class"},
      {"long_tail_gamma", "100", "long-tail imbalance factor; negative reverses the unlabeled tail"},
      {"unlabeled_multiplier", "10", "long-tail split: unlabeled/labeled ratio per class"},
      {"validation_size", "200", "balanced validation set size"},
      {"test_size", "1000", "balanced test set size"},
      {"setup", "", "setup name used in reports (derived from the split when empty)"},
      // model
      {"num_heads", "3", "heads H (single-head baselines always use 1)"},
      {"hidden_dims", "32", "comma-separated hidden widths; empty for a linear backbone"},
      {"activation", "relu", "relu | tanh"},
      {"weight_init_scale", "1", "uniform init bound scale s / sqrt(fan_in)"},
      // optimisation
      {"learning_rate", "0.05", "SGD learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"weight_decay", "0.0005", "decoupled weight decay"},
      {"lr_schedule", "constant", "constant | linear"},
      {"batch_size", "32", "labeled batch size B"},
      {"mu", "1", "unlabeled batch ratio (unlabeled batch = mu * B)"},
      {"epochs", "20", "epochs over the unlabeled set"},
      // algorithms
      {"algorithms", "multimatch", "comma-separated algorithm list"},
      {"w_u", "1", "unsupervised loss weight"},
      {"w_d", "3", "weight of useful & difficult pseudo-labels"},
      {"percentile_f", "5", "APM threshold percentile"},
      {"gamma_min", "0", "APM threshold lower bound; -inf disables it"},
      {"lambda_f", "0.999", "confidence threshold EMA decay"},
      {"lambda_m", "0.999", "APM EMA decay"},
      {"fixmatch_tau", "0.95", "fixed confidence threshold of fixmatch"},
      // augmentation
      {"weak_augment", "identity", "identity | noise"},
      {"weak_sigma", "0", "weak noise scale"},
      {"strong_augment", "both", "noise | dropout | both"},
      {"strong_sigma", "auto", "strong noise scale; auto = 0.5 * separation / sqrt(dim)"},
      {"strong_dropout", "0.1", "strong feature-dropout probability"},
      // balanced auxiliary classifier
      {"abc.enabled", "false", "attach the auxiliary balanced classifier"},
      {"abc.loss_weight", "1", "weight of the auxiliary classifier loss"},
      // run
      {"seeds", "1", "comma-separated seeds"},
      {"output_dir", "out", "report directory"},
      {"trace_decisions", "false", "write per-step pseudo-label decision traces"},
      {"trace_gamma", "false", "write per-epoch APM threshold traces"},
      {"checkpoint", "false", "save a checkpoint at every epoch boundary"},
      {"dump_dataset", "false", "write each seed's data split as CSV"},
  };
  return keys;
}

namespace {

bool known_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (key == k.name) return true;
  return false;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::Config, "key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (textio::trim(v).empty()) return out;
  for (auto part : textio::split(v, ',')) out.emplace_back(textio::trim(part));
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    auto body = textio::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) fail(ErrorKind::Config, where + "expected key = value");
    const std::string key(textio::trim(body.substr(0, eq)));
    const std::string value(textio::trim(body.substr(eq + 1)));
    if (!known_key(key)) fail(ErrorKind::Config, where + "unknown key '" + key + "'");
    cfg.values_[key] = value;
    cfg.origins_[key] = where;
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!known_key(key)) fail(ErrorKind::Config, "unknown key '" + key + "'");
  values_[key] = value;
  origins_[key] = "override " + key + ": ";
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    fail(ErrorKind::Config, "override '" + assignment + "' is not key=value");
  set(std::string(textio::trim(std::string_view(assignment).substr(0, eq))),
      std::string(textio::trim(std::string_view(assignment).substr(eq + 1))));
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Config, "unknown key '" + key + "'");
  return it->second;
}

namespace {

// Converts value errors into config errors that name the offending key.
template <typename Fn>
auto with_key(const std::map<std::string, std::string>& origins, const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    auto it = origins.find(key);
    const std::string where = it == origins.end() ? std::string() : it->second;
    if (e.kind() == ErrorKind::Config && std::string(e.what()).find(key) != std::string::npos)
      fail(ErrorKind::Config, where + e.what());
    fail(ErrorKind::Config, where + "key '" + key + "': " + e.what());
  }
}

}  // namespace

bool ExperimentConfig::flag(const std::string& key) const {
  return with_key(origins_, key, [&] { return parse_bool(key, get(key)); });
}

namespace {

double number(const std::map<std::string, std::string>& origins, const std::string& key,
              const std::string& v) {
  return with_key(origins, key, [&] { return textio::parse_double(v); });
}

std::size_t count(const std::map<std::string, std::string>& origins, const std::string& key,
                  const std::string& v) {
  return with_key(origins, key, [&] { return textio::parse_size(v); });
}

}  // namespace

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.input_dim = count(origins_, "input_dim", get("input_dim"));
  m.num_classes = count(origins_, "num_classes", get("num_classes"));
  m.num_heads = count(origins_, "num_heads", get("num_heads"));
  m.hidden_dims.clear();
  for (const auto& w : split_list(get("hidden_dims")))
    m.hidden_dims.push_back(count(origins_, "hidden_dims", w));
  m.activation = with_key(origins_, "activation", [&] { return parse_activation(get("activation")); });
  m.weight_init_scale = number(origins_, "weight_init_scale", get("weight_init_scale"));
  with_key(origins_, "num_heads", [&] {
    m.validate();
    return 0;
  });
  return m;
}

TrainConfig ExperimentConfig::train_config(Algorithm algorithm, std::uint64_t seed) const {
  TrainConfig t;
  t.algorithm = algorithm;
  t.seed = seed;
  t.batch_size = count(origins_, "batch_size", get("batch_size"));
  t.mu = count(origins_, "mu", get("mu"));
  t.w_u = number(origins_, "w_u", get("w_u"));
  t.epochs = count(origins_, "epochs", get("epochs"));
  t.fixmatch_tau = number(origins_, "fixmatch_tau", get("fixmatch_tau"));
  t.optimizer.learning_rate = number(origins_, "learning_rate", get("learning_rate"));
  t.optimizer.momentum = number(origins_, "momentum", get("momentum"));
  t.optimizer.weight_decay = number(origins_, "weight_decay", get("weight_decay"));
  const auto& schedule = get("lr_schedule");
  if (schedule == "constant")
    t.optimizer.schedule = LrSchedule::Constant;
  else if (schedule == "linear")
    t.optimizer.schedule = LrSchedule::Linear;
  else
    fail(ErrorKind::Config, "key 'lr_schedule': expected constant or linear, got '" + schedule + "'");
  t.w_d = number(origins_, "w_d", get("w_d"));
  t.percentile_f = number(origins_, "percentile_f", get("percentile_f"));
  const auto& gmin = get("gamma_min");
  if (gmin == "-inf" || gmin == "none")
    t.gamma_min = std::nullopt;
  else
    t.gamma_min = number(origins_, "gamma_min", gmin);
  t.lambda_f = number(origins_, "lambda_f", get("lambda_f"));
  t.lambda_m = number(origins_, "lambda_m", get("lambda_m"));
  t.abc = flag("abc.enabled");
  t.abc_loss_weight = number(origins_, "abc.loss_weight", get("abc.loss_weight"));
  with_key(origins_, "epochs", [&] {
    t.validate();
    return 0;
  });
  return t;
}

GaussianTask ExperimentConfig::task() const {
  if (get("task") != "gaussian")
    fail(ErrorKind::Config, "key 'task': only 'gaussian' is available, got '" + get("task") + "'");
  const auto C = count(origins_, "num_classes", get("num_classes"));
  const auto dim = count(origins_, "input_dim", get("input_dim"));
  const auto sep = number(origins_, "class_separation", get("class_separation"));
  return with_key(origins_, "class_separation", [&] { return make_gaussian_task(C, dim, sep); });
}

SplitSpec ExperimentConfig::split_spec() const {
  const auto C = count(origins_, "num_classes", get("num_classes"));
  const auto val = count(origins_, "validation_size", get("validation_size"));
  const auto test = count(origins_, "test_size", get("test_size"));
  const auto& kind = get("split");
  if (kind == "balanced")
    return SplitSpec::balanced(C, count(origins_, "labels_per_class", get("labels_per_class")),
                               count(origins_, "unlabeled_per_class", get("unlabeled_per_class")),
                               val, test);
  if (kind == "long_tail") {
    LongTailSpec lt;
    lt.num_classes = C;
    lt.largest = number(origins_, "long_tail_n1", get("long_tail_n1"));
    lt.gamma_imb = number(origins_, "long_tail_gamma", get("long_tail_gamma"));
    lt.unlabeled_multiplier = count(origins_, "unlabeled_multiplier", get("unlabeled_multiplier"));
    const auto counts = with_key(origins_, "long_tail_gamma", [&] { return long_tail_counts(lt); });
    return SplitSpec::from_long_tail(counts, val, test);
  }
  fail(ErrorKind::Config, "key 'split': expected balanced or long_tail, got '" + kind + "'");
}

Augmentor ExperimentConfig::augmentor() const {
  Augmentor a = Augmentor::for_task(task());
  const auto& weak = get("weak_augment");
  if (weak == "identity")
    a.weak = WeakAugment::Identity;
  else if (weak == "noise")
    a.weak = WeakAugment::Noise;
  else
    fail(ErrorKind::Config, "key 'weak_augment': expected identity or noise, got '" + weak + "'");
  a.weak_sigma = number(origins_, "weak_sigma", get("weak_sigma"));
  const auto& strong = get("strong_augment");
  if (strong == "noise")
    a.strong = StrongAugment::Noise;
  else if (strong == "dropout")
    a.strong = StrongAugment::Dropout;
  else if (strong == "both")
    a.strong = StrongAugment::Both;
  else
    fail(ErrorKind::Config,
         "key 'strong_augment': expected noise, dropout or both, got '" + strong + "'");
  if (get("strong_sigma") != "auto") a.strong_sigma = number(origins_, "strong_sigma", get("strong_sigma"));
  a.dropout = number(origins_, "strong_dropout", get("strong_dropout"));
  with_key(origins_, "strong_augment", [&] {
    a.validate();
    return 0;
  });
  return a;
}

std::vector<Algorithm> ExperimentConfig::algorithms() const {
  std::vector<Algorithm> out;
  for (const auto& name : split_list(get("algorithms")))
    out.push_back(with_key(origins_, "algorithms", [&] { return parse_algorithm(name); }));
  if (out.empty()) fail(ErrorKind::Config, "key 'algorithms': no algorithm listed");
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(get("seeds"))) out.push_back(count(origins_, "seeds", s));
  if (out.empty()) fail(ErrorKind::Config, "key 'seeds': no seed listed");
  return out;
}

std::filesystem::path ExperimentConfig::output_dir() const { return get("output_dir"); }

std::string ExperimentConfig::setup_name() const {
  if (!get("setup").empty()) return get("setup");
  if (get("split") == "long_tail") {
    const double g = number(origins_, "long_tail_gamma", get("long_tail_gamma"));
    return std::string("long_tail_") + (g < 0 ? "rev" : "") +
           std::to_string(static_cast<long long>(std::abs(g)));
  }
  return "balanced_" + get("labels_per_class");
}

void ExperimentConfig::validate() const {
  const auto m = model_config();
  const auto algs = algorithms();
  for (auto a : algs) {
    train_config(a, 0);
    if (a == Algorithm::MultiMatch || a == Algorithm::MultiheadCotrain)
      if (m.num_heads != 3)
        fail(ErrorKind::Config, "key 'num_heads': " + std::string(to_string(a)) +
                                    " requires exactly three heads");
  }
  task();
  with_key(origins_, "split", [&] {
    split_spec().validate(m.num_classes);
    return 0;
  });
  augmentor();
  seeds();
  for (const char* f : {"abc.enabled", "trace_decisions", "trace_gamma", "checkpoint", "dump_dataset"})
    flag(f);
}

Split ExperimentConfig::make_data(std::uint64_t seed) const {
  Rng rng = Rng(seed).fork(0xda7a);
  return make_split(task(), split_spec(), rng);
}

RunRecord run_single(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed) {
  RunRecord rec;
  rec.algorithm = to_string(algorithm);
  rec.seed = seed;
  rec.setup = config.setup_name();
  rec.run_id = rec.setup + "-" + rec.algorithm + "-s" + std::to_string(seed);
  const auto out = config.output_dir();
  try {
    Trainer trainer(config.model_config(), config.train_config(algorithm, seed),
                    config.make_data(seed), config.augmentor());
    std::ofstream decision_trace, gamma_trace;
    if (config.flag("trace_decisions") || config.flag("trace_gamma")) {
      std::filesystem::create_directories(out / "traces");
      if (config.flag("trace_decisions")) {
        decision_trace.open(out / "traces" / (rec.run_id + "_decisions.csv"));
        trainer.set_decision_trace(&decision_trace);
      }
      if (config.flag("trace_gamma")) {
        gamma_trace.open(out / "traces" / (rec.run_id + "_gamma.csv"));
        trainer.set_gamma_trace(&gamma_trace);
      }
    }
    const bool checkpoint = config.flag("checkpoint");
    if (checkpoint) std::filesystem::create_directories(out / "checkpoints");
    while (trainer.epochs_done() < trainer.config().epochs) {
      rec.epochs.push_back(trainer.run_epoch());
      if (checkpoint) trainer.save_checkpoint(out / "checkpoints" / (rec.run_id + ".ckpt"));
    }
    rec.final_test_error = rec.epochs.empty() ? trainer.evaluate(trainer.split().test)
                                              : rec.epochs.back().test_error;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config || e.kind() == ErrorKind::UnsupportedConfig) throw;
    rec.failed = true;
    rec.failure = e.what();
  }
  return rec;
}

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned jobs) {
  config.validate();
  const auto algs = config.algorithms();
  const auto seeds = config.seeds();
  const auto out = config.output_dir();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out.string() + ": " + ec.message());

  if (config.flag("dump_dataset"))
    for (auto seed : seeds)
      save_split_csv(config.make_data(seed), out / ("data_s" + std::to_string(seed) + ".csv"));

  struct Job {
    Algorithm algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> work;
  for (auto a : algs)
    for (auto s : seeds) work.push_back({a, s});

  ExperimentResult result;
  result.runs.resize(work.size());
  std::vector<std::exception_ptr> errors(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < work.size(); k = next++) {
      try {
        result.runs[k] = run_single(config, work[k].algorithm, work[k].seed);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(work.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& r : result.runs) result.failed += r.failed;

  result.ranks = emit_reports(result.runs, out);
  return result;
}

std::string summary_table(const ExperimentResult& result) {
  std::map<std::string, std::vector<double>> errors;
  std::vector<std::string> order;
  for (const auto& r : result.runs) {
    if (!errors.contains(r.algorithm)) order.push_back(r.algorithm);
    auto& v = errors[r.algorithm];
    if (!r.failed) v.push_back(r.final_test_error);
  }
  std::ostringstream os;
  os << std::left << std::setw(24) << "algorithm" << std::right << std::setw(10) << "runs"
     << std::setw(20) << "test error (%)" << std::setw(16) << "friedman rank" << '\n';
  for (const auto& alg : order) {
    const auto& v = errors[alg];
    double mean = 0.0, sd = 0.0;
    for (double x : v) mean += x;
    if (!v.empty()) mean /= static_cast<double>(v.size());
    for (double x : v) sd += (x - mean) * (x - mean);
    if (v.size() > 1) sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    std::string rank = "-";
    for (std::size_t a = 0; a < result.ranks.algorithms.size(); ++a)
      if (result.ranks.algorithms[a] == alg) rank = textio::format_fixed(result.ranks.friedman[a], 2);
    std::string err = v.empty() ? std::string("failed")
                                : textio::format_fixed(100 * mean, 2) + " +- " +
                                      textio::format_fixed(100 * sd, 2);
    os << std::left << std::setw(24) << alg << std::right << std::setw(10) << v.size()
       << std::setw(20) << err << std::setw(16) << rank << '\n';
  }
  if (result.failed) os << result.failed << " run(s) failed\n";
  return os.str();
}

RankTable rank_results(const std::vector<std::filesystem::path>& inputs,
                       const std::filesystem::path& out_dir) {
  if (inputs.empty()) fail(ErrorKind::InvalidInput, "no results files given");
  std::vector<ResultRow> rows;
  for (const auto& p : inputs) {
    auto part = read_results_csv(p);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) fail(ErrorKind::Merge, "results files contain no rows");
  std::map<std::string, std::set<std::string>> algs_by_setup;
  for (const auto& r : rows) algs_by_setup[r.setup].insert(r.algorithm);
  const auto& reference = algs_by_setup.begin()->second;
  for (const auto& [setup, algs] : algs_by_setup)
    if (algs != reference)
      fail(ErrorKind::Merge, "setup '" + setup + "' has a different algorithm set than '" +
                                 algs_by_setup.begin()->first + "'");
  auto table = friedman_ranks(mean_errors(rows));
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  write_ranks_csv(table, out_dir / "ranks.csv");
  return table;
}

}  // namespace multimatch
