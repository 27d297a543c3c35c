#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "adwm/diagnostics.hpp"
#include "adwm/gradsuite.hpp"
#include "adwm/runtime.hpp"
#include "adwm/trainer.hpp"

namespace fs = std::filesystem;
using namespace adwm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ModelOptions {
  Index channels = 48;
  Index blocks = 6;
  double d_frac = 0.8;
  std::string method = "cacw";
  std::string upsampling = "bilinear";
  bool share_ifw = false;

  ModelConfig config(Variant variant, Index bands) const {
    ModelConfig cfg;
    cfg.bands = bands;
    cfg.channels = channels;
    cfg.blocks = blocks;
    cfg.variant = variant;
    cfg.upsampling = parse_upsampling(upsampling);
    cfg.ifw_d_fraction = d_frac;
    cfg.cfw_d_fraction = d_frac;
    cfg.share_ifw = share_ifw;
    cfg.method = parse_weight_method(method);
    cfg.validate();
    return cfg;
  }
};

struct TrainOptions {
  Index epochs = 1;
  std::uint64_t seed = 0;
  Index batch_size = 16;
  double lr = 2e-3;
  Index halve_every = 150;
  double val_fraction = 0.1;

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.batch_size = batch_size;
    cfg.lr0 = lr;
    cfg.halve_every = halve_every;
    cfg.validate();
    return cfg;
  }
};

void add_model_options(CLI::App* sub, ModelOptions& m) {
  sub->add_option("--channels", m.channels, "Feature channels C")->capture_default_str();
  sub->add_option("--blocks", m.blocks, "Residual blocks N")->capture_default_str();
  sub->add_option("--d-frac", m.d_frac, "Hidden width of the weighting heads as a fraction of n")->capture_default_str();
  sub->add_option("--method", m.method, "Weight generator: cacw, pool, attention, pca")->capture_default_str();
  sub->add_option("--upsampling", m.upsampling, "bilinear or nearest")->capture_default_str();
  sub->add_flag("--share-ifw", m.share_ifw, "One IFW head shared by all layers");
}

void add_train_options(CLI::App* sub, TrainOptions& t) {
  sub->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--seed", t.seed, "Seed for initialization and shuffling")->capture_default_str();
  sub->add_option("--batch-size", t.batch_size, "Samples per optimizer step")->capture_default_str();
  sub->add_option("--lr", t.lr, "Initial learning rate")->capture_default_str();
  sub->add_option("--halve-every", t.halve_every, "Epochs between learning-rate halvings")->capture_default_str();
  sub->add_option("--val-fraction", t.val_fraction, "Hash-selected validation fraction of --data")
      ->capture_default_str();
}

std::vector<SamplePair> require_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("data directory not found: " + dir.string());
  return load_dataset(dir);
}

Index dataset_bands(const std::vector<SamplePair>& samples) {
  if (samples.empty()) throw ConfigError("dataset is empty");
  return samples.front().gt.dim(2);
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + "_" + suffix + p.extension().string());
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// gen-data

struct GenDataArgs {
  fs::path out;
  std::size_t count = 8;
  std::vector<Index> size{64, 64};
  Index bands = 4;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenDataArgs& a) {
  const Manifest m = build_dataset(a.seed, a.count, a.size[0], a.size[1], a.bands, a.out);
  std::cout << m.path.string() << '\n';
  return 0;
}

// train

struct TrainArgs {
  fs::path data, out, log, trace;
  std::string variant = "adwm";
  ModelOptions model;
  TrainOptions train;
  std::size_t probes = 4;
};

void train_one(const TrainArgs& a, Variant variant, const Split& split, Index bands, bool suffixed) {
  const std::string name(to_string(variant));
  const ModelConfig cfg = a.model.config(variant, bands);
  TrainOutputs outputs;
  outputs.checkpoint = suffixed ? with_suffix(a.out, name) : a.out;
  if (!a.log.empty()) outputs.log = suffixed ? with_suffix(a.log, name) : a.log;

  std::vector<WeightTraceRow> trace;
  const auto& probe_src = split.holdout.empty() ? split.train : split.holdout;
  const std::vector<SamplePair> probes(probe_src.begin(),
                                       probe_src.begin() + static_cast<std::ptrdiff_t>(std::min(a.probes, probe_src.size())));
  EpochCallback on_epoch;
  if (!a.trace.empty() && cfg.has_adwm() && !probes.empty()) {
    on_epoch = [&](Index epoch, const PansharpenModel& model) {
      const auto rows = trace_weights(model, probes, epoch);
      trace.insert(trace.end(), rows.begin(), rows.end());
    };
  }

  PansharpenModel model(cfg, a.train.seed);
  const TrainResult r = train(model, split.train, split.holdout, a.train.config(), outputs, on_epoch);
  if (on_epoch) write_weight_trace(suffixed ? with_suffix(a.trace, name) : a.trace, trace);
  std::cout << name << ": " << r.log.size() << " epochs, final train_l1 " << fmt(r.log.back().train_l1)
            << ", best epoch " << r.best_epoch << " (val_psnr " << fmt(r.best_val_psnr) << "), checkpoint "
            << outputs.checkpoint->string() << '\n';
}

int run_train(const TrainArgs& a) {
  std::vector<Variant> variants;
  if (a.variant == "all") {
    variants = {Variant::baseline, Variant::ifw, Variant::cfw, Variant::adwm};
  } else {
    variants = {parse_variant(a.variant)};
  }
  auto samples = require_dataset(a.data);
  const Index bands = dataset_bands(samples);
  for (Variant v : variants) a.model.config(v, bands);  // fail fast on bad options
  a.train.config();
  const Split split = split_by_hash(std::move(samples), a.train.val_fraction);
  if (split.train.empty()) throw ConfigError("validation fraction leaves no training samples");
  for (Variant v : variants) train_one(a, v, split, bands, variants.size() > 1);
  return 0;
}

// eval

struct EvalArgs {
  fs::path model, data, report;
  bool full_res = false;
  Index window = 32;
};

int run_eval(const EvalArgs& a) {
  const auto samples = require_dataset(a.data);
  CheckpointInfo info;
  const PansharpenModel model = load_checkpoint(a.model, &info);
  const Index bands = dataset_bands(samples);
  if (model.config().bands != bands) {
    throw ConfigError("checkpoint expects " + std::to_string(model.config().bands) + " bands, data has " +
                      std::to_string(bands));
  }
  MetricsReport report = evaluate_dataset(model_predictor(model), samples, a.full_res, a.window);
  report.metadata.insert(report.metadata.begin(), {{"model", a.model.filename().string()},
                                                   {"variant", std::string(to_string(model.config().variant))},
                                                   {"epochs", std::to_string(info.epochs)},
                                                   {"seed", std::to_string(info.seed)}});
  report.write_csv(a.report);
  const auto means = report.means();
  for (std::size_t i = 0; i < report.columns.size(); ++i) {
    std::cout << report.columns[i] << ' ' << fmt(means[i]) << '\n';
  }
  return 0;
}

// diagnose

struct DiagnoseArgs {
  fs::path model, data, out;
  std::size_t probes = 8;
};

int run_diagnose(const DiagnoseArgs& a) {
  auto samples = require_dataset(a.data);
  const PansharpenModel model = load_checkpoint(a.model);
  if (model.config().bands != dataset_bands(samples)) throw ConfigError("checkpoint and data band counts differ");
  if (a.probes > 0 && samples.size() > a.probes) samples.resize(a.probes);
  const DiagnoseSummary s = diagnose(model, samples, a.out);
  std::cout << s.layers << " layers, " << s.files.size() << " files in " << a.out.string() << '\n';
  return 0;
}

// compare-weighting

struct CompareArgs {
  fs::path data, test, out, plot;
  std::string methods = "cacw,pool,attention,pca";
  std::string d_fracs = "0.8";
  ModelOptions model;
  TrainOptions train;
};

int run_compare(const CompareArgs& a) {
  std::vector<WeightMethod> methods;
  for (const std::string& m : split_list(a.methods)) methods.push_back(parse_weight_method(m));
  if (methods.empty()) throw ConfigError("no weighting methods given");
  std::vector<double> fracs;
  for (const std::string& f : split_list(a.d_fracs)) {
    try {
      fracs.push_back(std::stod(f));
    } catch (const std::exception&) {
      throw ConfigError("bad d fraction '" + f + "'");
    }
  }
  if (fracs.empty()) throw ConfigError("no d fractions given");

  auto samples = require_dataset(a.data);
  const Index bands = dataset_bands(samples);
  const Index h = samples.front().gt.dim(0), w = samples.front().gt.dim(1);
  std::vector<SamplePair> test;
  Split split;
  if (!a.test.empty()) {
    split.train = std::move(samples);
    test = require_dataset(a.test);
  } else {
    split = split_by_hash(std::move(samples), a.train.val_fraction);
    test = split.holdout;
  }
  if (split.train.empty() || test.empty()) throw ConfigError("need both training and test samples");
  const TrainConfig tcfg = a.train.config();

  std::ostringstream csv;
  csv << "method,d_frac,d_ifw,d_cfw,head_params,model_params,adwm_macs,total_macs,test_psnr\n";
  std::vector<Series> curves;
  for (WeightMethod method : methods) {
    Series curve{std::string(to_string(method)), {}, {}};
    for (double frac : fracs) {
      ModelOptions mo = a.model;
      mo.method = std::string(to_string(method));
      mo.d_frac = frac;
      const ModelConfig cfg = mo.config(Variant::adwm, bands);
      PansharpenModel model(cfg, a.train.seed);
      train(model, split.train, {}, tcfg);
      const double psnr = evaluate_psnr(model, test);
      const FlopCount flops = count_flops(flop_config(cfg, h, w));
      const AdwmConfig ac = cfg.adwm_config();
      csv << to_string(method) << ',' << fmt(frac) << ',' << ac.ifw_hidden() << ',' << ac.cfw_hidden() << ','
          << Adwm::parameter_count(ac) << ',' << PansharpenModel::parameter_count(cfg) << ',';
      // MAC accounting covers the covariance heads only; other generators leave it blank.
      if (method == WeightMethod::cacw) {
        csv << flops.adwm() << ',' << flops.total();
        curve.x.push_back(static_cast<double>(flops.adwm()));
        curve.y.push_back(psnr);
      } else {
        csv << ',';
      }
      csv << ',' << fmt(psnr) << '\n';
      std::cout << to_string(method) << " d_frac " << fmt(frac) << ": test PSNR " << fmt(psnr) << '\n';
    }
    if (!curve.x.empty()) curves.push_back(std::move(curve));
  }
  write_text(a.out, csv.str());
  if (!a.plot.empty()) write_text(a.plot, svg_line_plot(curves, "Weighting cost vs PSNR", "ADWM MACs", "PSNR (dB)"));
  return 0;
}

// gradcheck

int run_gradcheck(std::uint64_t seed, int seeds, const std::string& corrupt) {
  set_backward_corruption(corrupt);
  const auto results = run_gradient_suite(seed, seeds);
  set_backward_corruption("");
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.worst < 1e-4;
    ok = ok && pass;
    std::printf("%-20s %.3e  %s\n", r.name.c_str(), r.worst, pass ? "ok" : "FAIL");
  }
  std::printf("gradcheck: %s (%zu checks x %d seeds)\n", ok ? "PASS" : "FAIL", results.size(), seeds);
  return ok ? 0 : kExitNumeric;
}

// Rewrites `SUB ... --config FILE ...` as `SUB <file flags> ...`: each `key = value`
// line becomes `--key=value` (or `--key v1 v2` for lists) ahead of the explicit flags,
// so with take-last semantics the command line wins.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string file;
    std::size_t span = 0;
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file");
      file = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file " + file);
    std::vector<std::string> flags;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(file + ":" + std::to_string(lineno) + ": expected key = value");
      auto trim = [](std::string t) {
        const auto l = t.find_first_not_of(" \t\r\"'"), r = t.find_last_not_of(" \t\r\"'");
        return l == std::string::npos ? std::string() : t.substr(l, r - l + 1);
      };
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(file + ":" + std::to_string(lineno) + ": empty key");
      std::istringstream words(value);
      std::vector<std::string> parts{std::istream_iterator<std::string>(words), {}};
      if (parts.size() > 1) {
        flags.push_back("--" + key);
        flags.insert(flags.end(), parts.begin(), parts.end());
      } else {
        flags.push_back("--" + key + "=" + value);
      }
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    // Insert right after the subcommand name (the first non-option argument).
    std::size_t at = 1;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    at = std::min(at + 1, args.size());
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), flags.begin(), flags.end());
    i = at + flags.size() - 1;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Pansharpening with adaptive dual-level weighting"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic reduced-resolution dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples");
  gen_cmd->add_option("--size", gen.size, "Ground-truth height and width")->expected(2);
  gen_cmd->add_option("--bands", gen.bands, "Spectral bands");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one variant, or all four with --variant all");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--variant", tr.variant, "baseline, ifw, cfw, adwm or all");
  train_cmd->add_option("--out", tr.out, "Checkpoint path; best weights go to <out>.best")->required();
  train_cmd->add_option("--log", tr.log, "Per-epoch CSV log");
  train_cmd->add_option("--trace", tr.trace, "Per-epoch weight trace CSV");
  train_cmd->add_option("--probes", tr.probes, "Probe samples for the weight trace");
  add_model_options(train_cmd, tr.model);
  add_train_options(train_cmd, tr.train);

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write a metrics report");
  eval_cmd->add_option("--model", ev.model, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--report", ev.report, "Report CSV")->required();
  eval_cmd->add_flag("--full-res", ev.full_res, "No-reference metrics instead of reduced-resolution ones");
  eval_cmd->add_option("--window", ev.window, "Q / Q2n window at full scale");

  DiagnoseArgs dg;
  CLI::App* diag_cmd = app.add_subcommand("diagnose", "Covariance heatmaps, scree curves, entropy, weight traces");
  diag_cmd->add_option("--model", dg.model, "Checkpoint")->required();
  diag_cmd->add_option("--data", dg.data, "Dataset directory")->required();
  diag_cmd->add_option("--out", dg.out, "Output directory")->required();
  diag_cmd->add_option("--probes", dg.probes, "Samples to analyse (0 = all)");

  CompareArgs cw;
  CLI::App* cmp_cmd = app.add_subcommand("compare-weighting", "Train with each weight generator and compare");
  cmp_cmd->add_option("--data", cw.data, "Training dataset directory")->required();
  cmp_cmd->add_option("--test", cw.test, "Test dataset directory (default: hash holdout of --data)");
  cmp_cmd->add_option("--methods", cw.methods, "Comma-separated weight generators");
  cmp_cmd->add_option("--d-fracs", cw.d_fracs, "Comma-separated hidden-width fractions");
  cmp_cmd->add_option("--out", cw.out, "Comparison CSV")->required();
  cmp_cmd->add_option("--plot", cw.plot, "MACs vs PSNR SVG");
  add_model_options(cmp_cmd, cw.model);
  add_train_options(cmp_cmd, cw.train);

  std::uint64_t gc_seed = 0;
  int gc_seeds = 10;
  std::string gc_corrupt;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc_cmd->add_option("--seed", gc_seed, "First seed");
  gc_cmd->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--corrupt", gc_corrupt, "Debug: scale the backward of this op by 1.1");

  app.footer("Every subcommand also accepts --config FILE with key = value lines; flags override the file.");

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin() + 1, args.end());
    args.erase(args.begin());
    app.parse(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*diag_cmd) return run_diagnose(dg);
    if (*cmp_cmd) return run_compare(cw);
    if (*gc_cmd) return run_gradcheck(gc_seed, gc_seeds, gc_corrupt);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
