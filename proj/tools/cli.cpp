#include "cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "eisam/analysis.hpp"
#include "eisam/data.hpp"
#include "eisam/errors.hpp"
#include "eisam/eval.hpp"
#include "eisam/model.hpp"
#include "eisam/optimizers.hpp"
#include "eisam/rng.hpp"
#include "eisam/weighting.hpp"

namespace eisam::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  return json::parse(R"({
    "data": {
      "source": "zipf",
      "path": "",
      "n_items": 500,
      "exponent": 1.2,
      "n_sequences": 20000,
      "min_len": 2,
      "max_len": 11,
      "L_max": 10,
      "min_count": 0,
      "seed": 0
    },
    "model": {"d_emb": 32, "init_seed": 0},
    "optimizer": {
      "variant": "EISAM",
      "rho": 0.05,
      "lambda": 0.5,
      "lr": 0.0005,
      "base": "adam",
      "beta1": 0.9,
      "beta2": 0.999,
      "eps_adam": 1e-8,
      "batch_size": 64,
      "epochs": 3,
      "seed": 0,
      "estimator": "unbiased"
    },
    "weighting": {"kind": "exponential", "eps": 1e-8, "beta": 0.999, "gamma": 10.0, "normalize": false},
    "eval": {"K": 10, "seeds": [0], "variants": ["SAM", "EISAM"]},
    "analysis": {
      "scope": "tail",
      "probes": 100,
      "seed": 0,
      "jobs": 1,
      "resolution": 21,
      "half_width": 1.0,
      "delta": 0.05,
      "experiment_trace_probes": 0,
      "gradcheck": {"instances": 20, "n_items": 20, "d_emb": 8, "batch_size": 5, "step": 1e-5, "tolerance": 1e-5}
    },
    "output_dir": "runs"
  })");
}

json smoke_profile() {
  return {{"data", {{"n_items", 50}, {"n_sequences", 2000}}},
          {"model", {{"d_emb", 8}}},
          {"optimizer", {{"epochs", 2}, {"lr", 0.01}}},
          {"analysis", {{"probes", 20}, {"resolution", 11}}}};
}

void merge_config(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw InvalidConfig("config" + (where.empty() ? "" : " section '" + where + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw InvalidConfig("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else if (slot.is_number_integer()) {
      if (value.is_number_integer()) {
        slot = value;
      } else if (value.is_number_float() && std::floor(value.get<double>()) == value.get<double>()) {
        slot = static_cast<long long>(value.get<double>());
      } else {
        throw InvalidConfig("config key '" + path + "' expects an integer");
      }
    } else if (slot.is_number()) {
      if (!value.is_number()) throw InvalidConfig("config key '" + path + "' expects a number");
      slot = value.get<double>();
    } else if (slot.type() != value.type()) {
      throw InvalidConfig("config key '" + path + "' expects a " + std::string(slot.type_name()));
    } else {
      slot = value;
    }
  }
}

void apply_set(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidConfig("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const auto begin = dot == std::string::npos ? 0 : dot + 1;
    patch = json{{key.substr(begin, end - begin), patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(cfg, patch);
}

namespace {

template <typename T>
T get(const json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

int get_positive_int(const json& cfg, const char* section, const char* key) {
  const auto v = get<long long>(cfg, section, key);
  if (v < 1) throw InvalidConfig(std::string(section) + "." + key + " must be >= 1");
  return static_cast<int>(v);
}

WeightingScheme scheme_from(const json& cfg) {
  const auto kind = get<std::string>(cfg, "weighting", "kind");
  double param = 0.0;
  if (kind == "normalized") param = get<double>(cfg, "weighting", "eps");
  if (kind == "effective") param = get<double>(cfg, "weighting", "beta");
  if (kind == "exponential") param = get<double>(cfg, "weighting", "gamma");
  return WeightingScheme::from_name(kind, param);
}

OptimizerConfig optimizer_from(const json& cfg) {
  OptimizerConfig o;
  o.variant = parse_variant(get<std::string>(cfg, "optimizer", "variant"));
  o.rho = get<double>(cfg, "optimizer", "rho");
  o.lambda = get<double>(cfg, "optimizer", "lambda");
  o.lr = get<double>(cfg, "optimizer", "lr");
  o.base = parse_base(get<std::string>(cfg, "optimizer", "base"));
  o.beta1 = get<double>(cfg, "optimizer", "beta1");
  o.beta2 = get<double>(cfg, "optimizer", "beta2");
  o.eps_adam = get<double>(cfg, "optimizer", "eps_adam");
  o.batch_size = get_positive_int(cfg, "optimizer", "batch_size");
  o.estimator = parse_estimator(get<std::string>(cfg, "optimizer", "estimator"));
  o.scheme = scheme_from(cfg);
  o.normalize_weights = get<bool>(cfg, "weighting", "normalize");
  o.validate();
  return o;
}

ZipfConfig zipf_from(const json& cfg) {
  ZipfConfig z;
  z.n_items = get<int>(cfg, "data", "n_items");
  z.exponent = get<double>(cfg, "data", "exponent");
  z.n_sequences = get<int>(cfg, "data", "n_sequences");
  z.min_len = get<int>(cfg, "data", "min_len");
  z.max_len = get<int>(cfg, "data", "max_len");
  z.max_prefix = get<int>(cfg, "data", "L_max");
  z.seed = get<std::uint64_t>(cfg, "data", "seed");
  return z;
}

void validate_paths(const json& cfg) {
  const auto source = get<std::string>(cfg, "data", "source");
  if (source == "file") {
    const auto path = get<std::string>(cfg, "data", "path");
    if (path.empty() || !fs::exists(path)) throw InvalidConfig("data.path '" + path + "' does not exist");
  } else if (source != "zipf") {
    throw InvalidConfig("data.source must be 'zipf' or 'file'");
  }
}

struct Data {
  std::optional<InteractionLog> log;
  SequenceDataset all;
  FrequencyTable all_table;
  DatasetSplit split;
  FrequencyTable train_table;  // head/tail from the training split
};

Data load_data(const json& cfg) {
  Data d;
  const int l_max = get<int>(cfg, "data", "L_max");
  const int min_count = get<int>(cfg, "data", "min_count");
  if (get<std::string>(cfg, "data", "source") == "zipf") {
    auto z = generate_zipf_dataset(zipf_from(cfg));
    if (min_count > 1) {
      std::tie(d.all, d.all_table) = build_sequences(z.log, l_max, min_count);
    } else {
      d.all = std::move(z.sequences);
      d.all_table = std::move(z.table);
    }
    d.log = std::move(z.log);
  } else {
    auto log = load_interactions(get<std::string>(cfg, "data", "path"));
    std::tie(d.all, d.all_table) = build_sequences(log, l_max, min_count);
    d.log = std::move(log);
  }
  d.split = split_8_1_1(d.all);
  d.train_table = frequency_table(d.split.train);
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failure on " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

struct Context {
  json cfg;
  fs::path dir;
  std::string checkpoint;
  std::ostream& out;
  bool color = false;

  void artifact(const fs::path& p) const { out << "wrote " << p.string() << "\n"; }
  std::string mark(bool ok) const {
    if (!color) return ok ? "ok" : "FAIL";
    return ok ? "\033[32mok\033[0m" : "\033[31mFAIL\033[0m";
  }
};

std::vector<double> initial_theta(const json& cfg, std::size_t n_items) {
  const auto d_emb = static_cast<std::size_t>(get_positive_int(cfg, "model", "d_emb"));
  return ModelParams::initialize(n_items, d_emb, get<std::uint64_t>(cfg, "model", "init_seed")).flatten();
}

// Parameters from --checkpoint when given, otherwise the configured initialization.
std::vector<double> resolve_params(const Context& ctx, const Data& data, std::size_t d_emb) {
  if (ctx.checkpoint.empty()) return initial_theta(ctx.cfg, data.all.n_items());
  const auto ck = load_checkpoint(ctx.checkpoint);
  if (ck.params.n_items() != data.all.n_items() || ck.params.d_emb() != d_emb) {
    throw DimensionMismatch("checkpoint shape (" + std::to_string(ck.params.n_items()) + " items, d_emb " +
                            std::to_string(ck.params.d_emb()) + ") does not match the configured data/model");
  }
  if (!ck.vocab.empty() && ck.vocab != data.all.vocab) throw DimensionMismatch("checkpoint vocabulary differs from data");
  return ck.params.flatten();
}

std::size_t d_emb_of(const json& cfg) { return static_cast<std::size_t>(get_positive_int(cfg, "model", "d_emb")); }

int cmd_gen_data(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  save_interactions(*data.log, ctx.dir / "interactions.tsv");
  save_sequences(data.all, ctx.dir / "sequences.jsonl");
  save_frequencies(data.all_table, ctx.dir / "frequencies.json");
  for (const char* f : {"interactions.tsv", "sequences.jsonl", "frequencies.json"}) ctx.artifact(ctx.dir / f);
  ctx.out << "items " << data.all.n_items() << ", examples " << data.all.size() << ", head "
          << data.all_table.head.size() << ", tail " << data.all_table.tail.size() << "\n";
  return 0;
}

int cmd_train(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  const auto opt = optimizer_from(ctx.cfg);
  const auto d_emb = d_emb_of(ctx.cfg);
  const int epochs = get<int>(ctx.cfg, "optimizer", "epochs");
  if (epochs < 0) throw InvalidConfig("optimizer.epochs must be >= 0");
  const Recommender model(data.all.n_items(), d_emb);
  const auto theta0 = initial_theta(ctx.cfg, data.all.n_items());
  const auto train_loss = mean_loss(model, make_batch(data.split.train));
  const double initial = train_loss.value(theta0);

  Trainer trainer(model, data.split.train, data.train_table, opt, theta0,
                  get<std::uint64_t>(ctx.cfg, "optimizer", "seed"));
  std::string log;
  for (int e = 0; e < epochs; ++e) {
    const auto s = trainer.run_epoch();
    log += to_json(s).dump() + "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d  loss %.6f  weighted %.6f  %.2fs\n", s.epoch, s.mean_loss,
                  s.mean_weighted_loss, s.wall_seconds);
    ctx.out << buf;
  }
  const double final_loss = train_loss.value(trainer.params());
  Checkpoint ck{ModelParams::unflatten(data.all.n_items(), d_emb, trainer.params()),
                get<std::uint64_t>(ctx.cfg, "model", "init_seed"), data.all.vocab};
  save_checkpoint(ck, ctx.dir / "checkpoint.json");
  write_text(ctx.dir / "train_log.jsonl", log);
  write_json(ctx.dir / "train_summary.json", {{"variant", to_string(opt.variant)},
                                             {"epochs", epochs},
                                             {"steps", trainer.state().step_count},
                                             {"initial_train_loss", initial},
                                             {"final_train_loss", final_loss}});
  for (const char* f : {"checkpoint.json", "train_log.jsonl", "train_summary.json"}) ctx.artifact(ctx.dir / f);
  char buf[128];
  std::snprintf(buf, sizeof buf, "train loss %.6f -> %.6f\n", initial, final_loss);
  ctx.out << buf;
  return 0;
}

int cmd_eval(Context& ctx) {
  if (ctx.checkpoint.empty()) throw InvalidConfig("eval requires --checkpoint");
  const auto data = load_data(ctx.cfg);
  const auto d_emb = d_emb_of(ctx.cfg);
  const auto theta = resolve_params(ctx, data, d_emb);
  const int k = get_positive_int(ctx.cfg, "eval", "K");
  auto report = evaluate(Recommender(data.all.n_items(), d_emb), theta, data.split.test, data.train_table, k);
  report.seed = get<std::uint64_t>(ctx.cfg, "model", "init_seed");
  write_json(ctx.dir / "metrics.json", to_json(report));
  ctx.artifact(ctx.dir / "metrics.json");
  for (auto s : {Scope::Overall, Scope::Head, Scope::Tail}) {
    char buf[128];
    const auto& m = report.at(s);
    std::snprintf(buf, sizeof buf, "%-8s NDCG@%d %.6f  HR@%d %.6f  n=%lld\n", to_string(s).c_str(), k, m.ndcg, k,
                  m.hr, m.n);
    ctx.out << buf;
  }
  return 0;
}

int cmd_landscape(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  const auto d_emb = d_emb_of(ctx.cfg);
  const auto theta = resolve_params(ctx, data, d_emb);
  const Recommender model(data.all.n_items(), d_emb);
  const auto scope = parse_scope(get<std::string>(ctx.cfg, "analysis", "scope"));
  const auto blocks = model.row_blocks();
  const auto grid = landscape_slice(model, theta, data.split.train, data.train_table, scope,
                                    get<double>(ctx.cfg, "analysis", "half_width"),
                                    get<int>(ctx.cfg, "analysis", "resolution"),
                                    get<std::uint64_t>(ctx.cfg, "analysis", "seed"), blocks);
  write_landscape_csv(grid, ctx.dir / "landscape.csv");
  const auto c = grid.alphas.size() / 2;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : grid.values) {
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  write_json(ctx.dir / "landscape_summary.json", {{"scope", to_string(scope)},
                                                  {"resolution", grid.alphas.size()},
                                                  {"center_loss", grid.values[c][c]},
                                                  {"min_loss", lo},
                                                  {"max_loss", hi}});
  ctx.artifact(ctx.dir / "landscape.csv");
  ctx.artifact(ctx.dir / "landscape_summary.json");
  return 0;
}

TraceEstimate weighted_trace(const Context& ctx, const Recommender& model, const std::vector<double>& theta,
                             const Data& data, const OptimizerConfig& opt, Scope scope) {
  const auto weights = ItemWeights::build(data.train_table, opt);
  const auto lw = weighted_loss(model, scope_batch(data.split.train, data.train_table, scope), weights);
  return hutchinson_trace([&](std::span<const double> x) { return lw.gradient(x); }, theta,
                          get_positive_int(ctx.cfg, "analysis", "probes"),
                          get<std::uint64_t>(ctx.cfg, "analysis", "seed"), 0.0,
                          get_positive_int(ctx.cfg, "analysis", "jobs"));
}

int cmd_trace(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  const auto d_emb = d_emb_of(ctx.cfg);
  const auto theta = resolve_params(ctx, data, d_emb);
  const Recommender model(data.all.n_items(), d_emb);
  const auto scope = parse_scope(get<std::string>(ctx.cfg, "analysis", "scope"));
  const auto t = weighted_trace(ctx, model, theta, data, optimizer_from(ctx.cfg), scope);
  write_json(ctx.dir / "trace.json", to_json(t, scope));
  ctx.artifact(ctx.dir / "trace.json");
  char buf[128];
  std::snprintf(buf, sizeof buf, "tr(H^w) %s: %.6g +- %.3g (%d probes)\n", to_string(scope).c_str(), t.estimate,
                t.std_error, t.n_probes);
  ctx.out << buf;
  return 0;
}

int cmd_bound(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  const auto d_emb = d_emb_of(ctx.cfg);
  const auto theta = resolve_params(ctx, data, d_emb);
  const auto opt = optimizer_from(ctx.cfg);
  const Recommender model(data.all.n_items(), d_emb);
  const auto train_batch = make_batch(data.split.train);
  const auto weights = ItemWeights::build(data.train_table, opt);
  const auto lw = weighted_loss(model, train_batch, weights);

  BoundInputs in;
  in.rho = opt.rho;
  in.lambda = opt.lambda;
  in.delta = get<double>(ctx.cfg, "analysis", "delta");
  in.d = static_cast<double>(model.dim());
  in.n = static_cast<double>(data.split.train.size());
  in.B = model.loss_cap();
  in.Bw = bw_constant(data.train_table, opt.scheme, in.B, opt.normalize_weights);
  double sq = 0.0;
  for (double x : theta) sq += x * x;
  in.theta_norm = std::sqrt(sq);
  in.q_min = data.train_table.q_min();
  in.n_items = static_cast<double>(data.all.n_items());
  double l_sam = 0.0;
  if (opt.rho > 0.0) {
    const auto eps = epsilon_hat(lw.gradient(theta), opt.rho);
    auto shifted = theta;
    for (std::size_t j = 0; j < shifted.size(); ++j) shifted[j] += eps[j];
    l_sam = lw.value(shifted) - lw.value(theta);
  }
  const double l_s = mean_loss(model, train_batch).value(theta);
  in.J_S = l_s + opt.lambda * l_sam;
  const auto trace = weighted_trace(ctx, model, theta, data, opt, Scope::Overall);
  in.trace_Hw = trace.estimate;

  const auto r = bound_rhs(in);
  auto j = to_json(r);
  j["inputs"] = {{"rho", in.rho},         {"lambda", in.lambda},   {"delta", in.delta},
                 {"d", in.d},             {"n", in.n},             {"B", in.B},
                 {"Bw", in.Bw},           {"theta_norm", in.theta_norm}, {"trace_Hw", in.trace_Hw},
                 {"trace_std_error", trace.std_error}, {"q_min", in.q_min}, {"n_items", in.n_items},
                 {"J_S", in.J_S},         {"L_S", l_s},            {"L_SAM", l_sam}};
  j["notes"] = {"J_S uses the first-order closed-form perturbation",
                "natural logarithm throughout"};
  write_json(ctx.dir / "bound.json", j);
  ctx.artifact(ctx.dir / "bound.json");
  for (const char* k : {"empirical", "curvature", "concentration", "complexity", "total"}) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-14s %.10g\n", k, j[k].get<double>());
    ctx.out << buf;
  }
  return 0;
}

int cmd_gradcheck(Context& ctx) {
  const auto& g = ctx.cfg.at("analysis").at("gradcheck");
  const json wrapper{{"gc", g}};
  const int instances = get_positive_int(wrapper, "gc", "instances");
  const auto n_items = static_cast<std::size_t>(get_positive_int(wrapper, "gc", "n_items"));
  const auto d_emb = static_cast<std::size_t>(get_positive_int(wrapper, "gc", "d_emb"));
  const auto bsz = static_cast<std::size_t>(get_positive_int(wrapper, "gc", "batch_size"));
  const double step = get<double>(wrapper, "gc", "step");
  const double tol = get<double>(wrapper, "gc", "tolerance");
  const auto seed = get<std::uint64_t>(ctx.cfg, "analysis", "seed");

  const Recommender model(n_items, d_emb);
  json errors = json::array();
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    Engine eng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    std::vector<double> theta(model.dim());
    for (auto& x : theta) x = uniform(eng, -0.5, 0.5);
    std::vector<std::vector<ItemIndex>> prefixes(bsz);
    std::vector<ItemIndex> targets(bsz);
    std::vector<double> w(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
      const auto len = 1 + uniform_index(eng, 4);
      for (std::uint64_t t = 0; t < len; ++t) prefixes[b].push_back(static_cast<ItemIndex>(uniform_index(eng, n_items)));
      targets[b] = static_cast<ItemIndex>(uniform_index(eng, n_items));
      w[b] = uniform(eng, 0.1, 2.0);
    }
    const auto batch = make_batch(prefixes, targets);
    const auto analytic = model.grad(theta, batch, w);
    const auto numeric = finite_diff_grad(model, theta, batch, w, step);
    double diff = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      diff = std::max(diff, std::abs(analytic[j] - numeric[j]));
      scale = std::max({scale, std::abs(analytic[j]), std::abs(numeric[j])});
    }
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    errors.push_back(rel);
    worst = std::max(worst, rel);
  }
  const bool ok = worst < tol;
  write_json(ctx.dir / "gradcheck.json",
             {{"instances", instances}, {"step", step}, {"tolerance", tol}, {"max_relative_error", worst},
              {"relative_errors", errors}, {"passed", ok}});
  ctx.artifact(ctx.dir / "gradcheck.json");
  char buf[128];
  std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.1e) ", worst, tol);
  ctx.out << buf << ctx.mark(ok) << "\n";
  return ok ? 0 : 1;
}

int cmd_weights(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  const auto scheme = scheme_from(ctx.cfg);
  emit_weight_profile(scheme, data.train_table, ctx.dir / "weight_profile.csv",
                      get<bool>(ctx.cfg, "weighting", "normalize"));
  ctx.artifact(ctx.dir / "weight_profile.csv");
  return 0;
}

int cmd_experiment(Context& ctx) {
  const auto data = load_data(ctx.cfg);
  ExperimentConfig ec;
  ec.optimizer = optimizer_from(ctx.cfg);
  ec.variants.clear();
  for (const auto& v : get<std::vector<std::string>>(ctx.cfg, "eval", "variants")) ec.variants.push_back(parse_variant(v));
  ec.seeds = get<std::vector<std::uint64_t>>(ctx.cfg, "eval", "seeds");
  ec.epochs = get<int>(ctx.cfg, "optimizer", "epochs");
  ec.d_emb = d_emb_of(ctx.cfg);
  ec.k = get_positive_int(ctx.cfg, "eval", "K");
  ec.trace_probes = get<int>(ctx.cfg, "analysis", "experiment_trace_probes");
  ec.trace_seed = get<std::uint64_t>(ctx.cfg, "analysis", "seed");
  ec.jobs = get_positive_int(ctx.cfg, "analysis", "jobs");
  const auto report = run_experiment(data.split.train, data.split.test, data.train_table, ec);
  write_json(ctx.dir / "report.json", report.to_json());
  report.write_csv(ctx.dir / "report.csv");
  write_json(ctx.dir / "timing.json", report.timing_json());
  for (const char* f : {"report.json", "report.csv", "timing.json"}) ctx.artifact(ctx.dir / f);
  for (auto v : report.variants()) {
    const auto [m, s] = report.metric_stats(v, Scope::Tail, true);
    const auto [mo, so] = report.metric_stats(v, Scope::Overall, true);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-9s tail NDCG@%d %.5f +- %.5f  overall %.5f +- %.5f  %.2fs/epoch\n",
                  to_string(v).c_str(), ec.k, m, s, mo, so, report.mean_epoch_seconds(v));
    ctx.out << buf;
  }
  return 0;
}

std::string timestamp_tag() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config file '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidConfig("config file '" + path + "' is not valid JSON");
  return j;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Item-wise sharpness-aware training toolkit", "eisam"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, profile, output_dir, checkpoint, tag;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", sets, "Override a config key, e.g. optimizer.rho=0.1 (repeatable)");
  app.add_option("--seed", seed, "Seed for initialization, shuffling, probes and evaluation");
  app.add_option("--jobs", jobs, "Worker threads for parallel analysis");
  app.add_option("--output-dir", output_dir, "Root output directory");
  app.add_option("--checkpoint", checkpoint, "Model checkpoint (JSON)");
  app.add_option("--tag", tag, "Run directory name (default: timestamp)");
  app.add_option("--profile", profile, "Bundled profile: smoke");

  using Handler = int (*)(Context&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"gen-data", "Generate a synthetic Zipf dataset", cmd_gen_data},
      {"train", "Train one variant and write a checkpoint", cmd_train},
      {"eval", "Evaluate a checkpoint on the test split", cmd_eval},
      {"landscape", "2-D loss landscape around a checkpoint", cmd_landscape},
      {"trace", "Hutchinson trace of the weighted Hessian", cmd_trace},
      {"bound", "Generalization bound terms", cmd_bound},
      {"gradcheck", "Compare analytic gradients with finite differences", cmd_gradcheck},
      {"weights", "Weight profile of the configured scheme", cmd_weights},
      {"experiment", "Multi-variant, multi-seed comparison", cmd_experiment},
  };
  for (const auto& [name, desc, fn] : commands) app.add_subcommand(name, desc);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const auto* sub = app.get_subcommands().front();
  Handler handler = nullptr;
  for (const auto& [name, desc, fn] : commands) {
    if (name == sub->get_name()) handler = fn;
  }

  try {
    json cfg = default_config();
    if (!profile.empty()) {
      if (profile != "smoke") throw InvalidConfig("unknown profile '" + profile + "'");
      merge_config(cfg, smoke_profile());
    }
    if (!config_path.empty()) merge_config(cfg, read_config_file(config_path));
    for (const auto& s : sets) apply_set(cfg, s);
    if (seed) {
      cfg["model"]["init_seed"] = *seed;
      cfg["optimizer"]["seed"] = *seed;
      cfg["analysis"]["seed"] = *seed;
      cfg["eval"]["seeds"] = json::array({*seed});
    }
    if (jobs) {
      if (*jobs < 1) throw InvalidConfig("--jobs must be >= 1");
      cfg["analysis"]["jobs"] = *jobs;
    }
    if (!output_dir.empty()) cfg["output_dir"] = output_dir;
    validate_paths(cfg);
    if (!checkpoint.empty() && !fs::exists(checkpoint)) {
      throw InvalidConfig("checkpoint '" + checkpoint + "' does not exist");
    }

    const fs::path dir = fs::path(cfg["output_dir"].get<std::string>()) / sub->get_name() /
                         (tag.empty() ? timestamp_tag() : tag);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_json(dir / "config.json", cfg);

    const bool tty = &out == &std::cout && isatty(STDOUT_FILENO);
    Context ctx{cfg, dir, checkpoint, out, tty && std::getenv("NO_COLOR") == nullptr};
    return handler(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace eisam::cli
