#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <map>
#include <optional>

#include "lavpr/analysis.hpp"
#include "lavpr/datagen.hpp"
#include "lavpr/selfcheck.hpp"
#include "lavpr/storage.hpp"
#include "lavpr/trainer.hpp"

namespace lavpr::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every subcommand option is registered here so that a config file can fill
// in whatever the command line left unset, and so that the resolved values
// can be written back out.
class Settings {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& name, T& var, const std::string& help,
                      const std::string& group = {}) {
    auto* opt = app->add_option("--" + name, var, help)->capture_default_str();
    entries_.push_back({name, opt, group, [&var](const json& j) { var = j.get<T>(); },
                        [&var] { return json(var); }});
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& help,
                    const std::string& group = {}) {
    auto* opt = app->add_flag("--" + name + ",!--no-" + name, var, help);
    entries_.push_back({name, opt, group, [&var](const json& j) { var = j.get<bool>(); },
                        [&var] { return json(var); }});
    return opt;
  }

  void apply(const json& options) {
    if (!options.is_object()) throw UsageError("config: options must be a JSON object");
    for (const auto& [key, value] : options.items()) {
      auto it = std::find_if(entries_.begin(), entries_.end(),
                             [&](const Entry& e) { return e.name == key; });
      if (it == entries_.end()) throw UsageError("config: unknown option '" + key + "'");
      if (it->opt->count() > 0) continue;  // the command line wins
      try {
        it->load(value);
      } catch (const json::exception&) {
        throw UsageError("config: bad value for '" + key + "'");
      }
      it->from_config = true;
    }
  }

  bool given(const std::string& group) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) {
      return e.group == group && (e.opt->count() > 0 || e.from_config);
    });
  }

  json dump(const std::string& skip_group = {}) const {
    json out = json::object();
    for (const auto& e : entries_) {
      if (!skip_group.empty() && e.group == skip_group) continue;
      out[e.name] = e.save();
    }
    return out;
  }

 private:
  struct Entry {
    std::string name;
    CLI::Option* opt;
    std::string group;
    std::function<void(const json&)> load;
    std::function<json()> save;
    bool from_config = false;
  };
  std::vector<Entry> entries_;
};

std::string default_data_dir() {
  const char* env = std::getenv(kDataDirEnv);
  return env && *env ? env : "data";
}

void write_resolved_config(const fs::path& dir, const std::string& command, const json& options) {
  fs::create_directories(dir);
  json doc;
  doc["command"] = command;
  doc["options"] = options;
  atomic_write(dir / kResolvedConfigName, doc.dump(2) + "\n");
}

void write_reports(const fs::path& dir, std::span<const RecallReport> reports) {
  fs::create_directories(dir);
  atomic_write(dir / "report.csv", emit_report(reports, ReportFormat::kCsv));
  atomic_write(dir / "report.md", emit_report(reports, ReportFormat::kMarkdown));
}

Modality parse_modality(const std::string& s) {
  if (s == "vision") return Modality::kVision;
  if (s == "text") return Modality::kText;
  throw UsageError("unknown modality '" + s + "' (vision|text)");
}

ReportFormat parse_format(const std::string& s) {
  try {
    return parse_report_format(s);
  } catch (const Error&) {
    throw UsageError("unknown format '" + s + "' (csv|markdown)");
  }
}

// Training knobs shared by both training subcommands.
struct OptimizerFlags {
  TrainConfig cfg;

  void add(CLI::App* app, Settings& s) {
    const std::string g = "training";
    s.option(app, "places-per-batch", cfg.places_per_batch, "places per batch (P)", g);
    s.option(app, "images-per-place", cfg.images_per_place, "images per place (K)", g);
    s.option(app, "lr", cfg.lr0, "initial learning rate", g);
    s.option(app, "momentum", cfg.momentum, "SGD momentum", g);
    s.option(app, "weight-decay", cfg.weight_decay, "L2 weight decay", g);
    s.option(app, "lr-decay", cfg.lr_decay_factor, "learning-rate divisor per decay step", g);
    s.option(app, "decay-every", cfg.decay_every_epochs, "epochs between decay steps", g);
    s.option(app, "epochs", cfg.max_epochs, "training epochs", g);
    s.option(app, "batches-per-epoch", cfg.batches_per_epoch, "0 = places / P", g);
    s.option(app, "val-fraction", cfg.val_fraction, "held-out share of train places", g);
    s.option(app, "alpha", cfg.ms.alpha, "MS positive scale", g);
    s.option(app, "beta", cfg.ms.beta, "MS negative scale", g);
    s.option(app, "margin", cfg.ms.lambda, "MS margin", g);
    s.flag(app, "mine", cfg.ms.mine_pairs, "MS hard-pair mining", g);
  }
};

// ---------------------------------------------------------------------------

struct GenSynth {
  SynthConfig cfg;
  std::string out = default_data_dir();

  void add(CLI::App* app, Settings& s) {
    s.option(app, "out", out, "output dataset directory");
    s.option(app, "places", cfg.n_places, "number of places");
    s.option(app, "images-per-place", cfg.images_per_place, "records per place");
    s.option(app, "train-places", cfg.train_places, "leading places assigned to train");
    s.option(app, "queries-per-place", cfg.queries_per_place, "query records per eval place");
    s.option(app, "dv", cfg.d_v, "vision descriptor dim");
    s.option(app, "dt", cfg.d_t, "text descriptor dim (also token dim)");
    s.option(app, "latent-dim", cfg.latent_dim, "shared latent dim");
    s.option(app, "tokens-per-text", cfg.tokens_per_text, "text tokens after CLS (0 = none)");
    s.option(app, "distractor-tokens", cfg.distractor_tokens, "uninformative tokens per text");
    s.option(app, "patches-per-image", cfg.patches_per_image, "image patches after CLS (0 = none)");
    s.option(app, "sigma-v", cfg.sigma_v, "vision noise");
    s.option(app, "sigma-t", cfg.sigma_t, "text noise");
    s.option(app, "degrade-fraction", cfg.degrade_fraction, "share of degraded query images");
    s.option(app, "sigma-degrade", cfg.sigma_degrade, "noise on degraded query images");
    s.option(app, "seed", cfg.seed, "RNG seed");
  }

  int run(Settings& s, std::ostream& out_stream) {
    cfg.token_dim = cfg.d_t;
    const auto bench = gen_synthetic(cfg);
    write_dataset(bench.data, out);
    std::string degraded;
    for (const auto& id : bench.degraded_ids) degraded += id + "\n";
    atomic_write(fs::path(out) / "degraded.txt", degraded);
    write_resolved_config(out, "gen-synth", s.dump());
    out_stream << "places=" << bench.data.manifest.place_count()
               << " vision=" << bench.data.vision.records.size()
               << " text=" << bench.data.text.records.size()
               << " degraded=" << bench.degraded_ids.size() << " dir=" << out << "\n";
    return kExitOk;
  }
};

struct TrainFusionCmd {
  std::string data = default_data_dir();
  std::string out;
  std::string mech = "cat";
  std::size_t d_e = kDefaultSharedDim;
  std::size_t hidden = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> ks = kDefaultKs;
  std::string format = "markdown";
  OptimizerFlags opt{TrainConfig::fusion_defaults()};

  void add(CLI::App* app, Settings& s) {
    s.option(app, "data", data, "dataset directory");
    s.option(app, "out", out, "run directory (default <data>/fusion-<mech>)");
    s.option(app, "mech", mech, "cat|pa|mlp|ads|ads-llp|pa-llp|mlp-llp");
    s.option(app, "seed", seed, "RNG seed");
    s.option(app, "k", ks, "recall cut-offs")->delimiter(',');
    s.option(app, "format", format, "csv|markdown");
    s.option(app, "d-e", d_e, "PA/MLP output dim", "training");
    s.option(app, "hidden", hidden, "MLP/ADS hidden width (0 = default)", "training");
    opt.add(app, s);
  }

  int run(Settings& s, std::ostream& out_stream, std::ostream& err) {
    FusionConfig fc;
    std::string base = mech;
    if (base.size() > 4 && base.ends_with("-llp")) {
      fc.use_llp = true;
      base.resize(base.size() - 4);
    }
    try {
      fc.mechanism = parse_mechanism(base);
    } catch (const Error&) {
      throw UsageError("unknown mechanism '" + mech + "'");
    }
    const bool trainable = fc.mechanism != Mechanism::kCat || fc.use_llp;
    if (!trainable && s.given("training")) {
      throw UsageError("--mech cat has no parameters; optimizer and head flags do not apply");
    }
    if (fc.mechanism == Mechanism::kCat && fc.use_llp) {
      throw UsageError("cat takes the text descriptor as is; use pa-llp, mlp-llp or ads-llp");
    }
    fc.d_e = d_e;
    fc.hidden = hidden;
    TrainConfig tc = opt.cfg;
    tc.seed = seed;
    const fs::path dir = out.empty() ? fs::path(data) / ("fusion-" + mech) : fs::path(out);

    const Dataset ds = load_dataset(data);
    const auto run = train_fusion(tc, fc, ds);
    for (const auto& e : run.history.epochs) {
      err << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr;
      if (e.val_recall1) err << " val_r1 " << *e.val_recall1;
      err << "\n";
    }
    fs::create_directories(dir);
    write_bundle(run.head.to_bundle(), dir / "head.lvpr");
    atomic_write(dir / "history.csv", history_csv(run.history));
    std::vector<RecallReport> reports{evaluate_modality(ds, Modality::kVision, ks),
                                      evaluate_modality(ds, Modality::kText, ks),
                                      evaluate_fusion(run.head, ds, ks)};
    write_reports(dir, reports);
    write_resolved_config(dir, "train-fusion", s.dump(trainable ? "" : "training"));
    out_stream << emit_report(reports, parse_format(format));
    return kExitOk;
  }
};

struct TrainCrossModalCmd {
  std::string data = default_data_dir();
  std::string out;
  std::string target = "all";
  std::size_t rank = 64;
  double lora_scale = 1.0;
  std::string loss = "ms";
  double temperature = kDefaultTemperature;
  EncoderConfig enc;
  std::uint64_t seed = 0;
  std::vector<std::size_t> ks = kDefaultKs;
  std::string format = "markdown";
  OptimizerFlags opt{TrainConfig::crossmodal_defaults()};

  TrainCrossModalCmd() { opt.cfg.ms.mine_pairs = true; }

  void add(CLI::App* app, Settings& s) {
    s.option(app, "data", data, "dataset directory (needs text tokens and image patches)");
    s.option(app, "out", out, "run directory (default <data>/crossmodal-<target>-r<rank>-<loss>)");
    s.option(app, "target", target, "qkv|all");
    s.option(app, "rank", rank, "LoRA rank");
    s.option(app, "lora-scale", lora_scale, "LoRA output scale");
    s.option(app, "loss", loss, "ms|contrastive");
    s.option(app, "temperature", temperature, "contrastive temperature");
    s.option(app, "model-dim", enc.model_dim, "encoder width");
    s.option(app, "heads", enc.heads, "attention heads");
    s.option(app, "ff-dim", enc.ff_dim, "feed-forward width");
    s.option(app, "blocks", enc.blocks, "transformer blocks");
    s.option(app, "output-dim", enc.output_dim, "embedding dim");
    s.option(app, "max-seq-len", enc.max_seq_len, "longest accepted sequence");
    s.option(app, "seed", seed, "RNG seed");
    s.option(app, "k", ks, "recall cut-offs")->delimiter(',');
    s.option(app, "format", format, "csv|markdown");
    opt.add(app, s);
  }

  int run(Settings& s, std::ostream& out_stream, std::ostream& err) {
    LoraSpec spec;
    CrossLoss cross;
    try {
      spec.target = parse_lora_target(target);
      cross = parse_cross_loss(loss);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    spec.rank = rank;
    spec.scale = lora_scale;
    TrainConfig tc = opt.cfg;
    tc.seed = seed;
    tc.cross_loss = cross;
    tc.temperature = temperature;
    const fs::path dir =
        out.empty() ? fs::path(data) / ("crossmodal-" + target + "-r" + std::to_string(rank) +
                                        "-" + loss)
                    : fs::path(out);

    const Dataset ds = load_dataset(data);
    if (ds.text_tokens.records.empty() || ds.vision_patches.records.empty()) {
      throw Error(ErrorCode::kMissingModality,
                  "cross-modal training needs text token and image patch sequences");
    }
    EncoderConfig text_cfg = enc, vision_cfg = enc;
    text_cfg.input_dim = ds.text_tokens.token_dim;
    vision_cfg.input_dim = ds.vision_patches.token_dim;
    auto model = make_crossmodal_model(text_cfg, vision_cfg, spec, seed);
    err << "trainable parameters: "
        << model.text.trainable_parameter_count() + model.vision.trainable_parameter_count()
        << "\n";
    auto before = evaluate_crossmodal(model, ds, ks);
    before.mechanism = "text->image (init)";
    const auto run = train_crossmodal(tc, std::move(model), ds);
    for (const auto& e : run.history.epochs) {
      err << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr;
      if (e.val_recall1) err << " val_r1 " << *e.val_recall1;
      err << "\n";
    }
    fs::create_directories(dir);
    write_bundle(run.model.text.base_bundle(), dir / "text_base.lvpr");
    write_bundle(run.model.text.adapter_bundle(), dir / "text_adapters.lvpr");
    write_bundle(run.model.vision.base_bundle(), dir / "vision_base.lvpr");
    write_bundle(run.model.vision.adapter_bundle(), dir / "vision_adapters.lvpr");
    atomic_write(dir / "history.csv", history_csv(run.history));
    std::vector<RecallReport> reports{before, evaluate_crossmodal(run.model, ds, ks)};
    write_reports(dir, reports);
    write_resolved_config(dir, "train-crossmodal", s.dump());
    out_stream << emit_report(reports, parse_format(format));
    return kExitOk;
  }
};

CrossModalModel load_crossmodal(const fs::path& dir) {
  auto load = [&](const std::string& side) {
    const auto base = read_bundle(dir / (side + "_base.lvpr"), FileKind::kEncoderBase);
    const auto adapters_path = dir / (side + "_adapters.lvpr");
    if (!fs::exists(adapters_path)) return ToyEncoder::from_bundles(base, nullptr);
    const auto adapters = read_bundle(adapters_path, FileKind::kLoraAdapters);
    return ToyEncoder::from_bundles(base, &adapters);
  };
  return CrossModalModel{load("text"), load("vision")};
}

struct EvalCmd {
  std::string data = default_data_dir();
  std::vector<std::size_t> ks = kDefaultKs;
  std::vector<std::string> modalities{"vision", "text"};
  std::vector<std::string> heads;
  std::vector<std::string> crossmodal;
  std::string format = "markdown";
  std::string out;

  void add(CLI::App* app, Settings& s) {
    s.option(app, "data", data, "dataset directory");
    s.option(app, "k", ks, "recall cut-offs")->delimiter(',');
    s.option(app, "modality", modalities, "single-modality baselines")->delimiter(',');
    s.option(app, "head", heads, "fusion head checkpoint(s)");
    s.option(app, "crossmodal", crossmodal, "cross-modal run directory(ies)");
    s.option(app, "format", format, "csv|markdown");
    s.option(app, "out", out, "write report.csv, report.md and config.json here");
  }

  int run(Settings& s, std::ostream& out_stream) {
    const auto fmt = parse_format(format);
    const Dataset ds = load_dataset(data);
    std::vector<RecallReport> reports;
    for (const auto& m : modalities) reports.push_back(evaluate_modality(ds, parse_modality(m), ks));
    for (const auto& h : heads) {
      reports.push_back(
          evaluate_fusion(FusionHead::from_bundle(read_bundle(h, FileKind::kFusionHead)), ds, ks));
    }
    for (const auto& c : crossmodal) reports.push_back(evaluate_crossmodal(load_crossmodal(c), ds, ks));
    if (reports.empty()) throw UsageError("nothing to evaluate");
    if (!out.empty()) {
      write_reports(out, reports);
      write_resolved_config(out, "eval", s.dump());
    }
    out_stream << emit_report(reports, fmt);
    return kExitOk;
  }
};

struct RerankCmd {
  std::string data = default_data_dir();
  std::size_t top = 100;
  std::string first = "vision";
  std::vector<std::size_t> ks = kDefaultKs;
  std::string format = "markdown";
  std::string out;

  void add(CLI::App* app, Settings& s) {
    s.option(app, "data", data, "dataset directory");
    s.option(app, "top", top, "shortlist length of the first stage");
    s.option(app, "first", first, "first-stage modality (vision|text)");
    s.option(app, "k", ks, "recall cut-offs")->delimiter(',');
    s.option(app, "format", format, "csv|markdown");
    s.option(app, "out", out, "write report.csv, report.md and config.json here");
  }

  int run(Settings& s, std::ostream& out_stream) {
    const auto fmt = parse_format(format);
    if (top == 0) throw UsageError("--top must be positive");
    const Dataset ds = load_dataset(data);
    const auto cmp = compare_joint_sequential(ds, parse_modality(first), top, ks);
    std::vector<RecallReport> reports{evaluate_modality(ds, Modality::kVision, ks),
                                      evaluate_modality(ds, Modality::kText, ks), cmp.joint,
                                      cmp.sequential};
    if (!out.empty()) {
      write_reports(out, reports);
      write_resolved_config(out, "rerank", s.dump());
    }
    out_stream << emit_report(reports, fmt);
    out_stream << "shortlist_misses=" << cmp.shortlist_misses << " queries=" << cmp.query_count
               << " top=" << top << "\n";
    return kExitOk;
  }
};

struct FlopsCmd {
  // Unset until given on the command line or in a config file.
  double params = std::numeric_limits<double>::quiet_NaN();
  double seq = std::numeric_limits<double>::quiet_NaN();

  void add(CLI::App* app, Settings& s) {
    s.option(app, "params", params, "non-embedding parameter count N (required)");
    s.option(app, "seq", seq, "sequence length S (required)");
  }

  int run(std::ostream& out_stream) {
    if (std::isnan(params)) throw UsageError("--params is required");
    if (std::isnan(seq)) throw UsageError("--seq is required");
    out_stream << format_scientific(estimate_flops(params, seq).flops) << "\n";
    return kExitOk;
  }
};

struct GradcheckCmd {
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  double tol = GradCheckOptions{}.tol;
  double step = GradCheckOptions{}.step;

  void add(CLI::App* app, Settings& s) {
    s.option(app, "seed", seed, "first seed");
    s.option(app, "seeds", seeds, "number of seeds");
    s.option(app, "tol", tol, "max relative error");
    s.option(app, "step", step, "central-difference step");
  }

  int run(std::ostream& out_stream, std::ostream& err) {
    GradCheckOptions opts;
    opts.tol = tol;
    opts.step = step;
    std::size_t failed = 0;
    out_stream << "case,seed,max_rel_error,passed\n";
    for (const auto& c : gradient_suite(seed, seeds, opts)) {
      out_stream << c.name << ',' << c.seed << ',' << c.report.max_rel_error << ','
                 << (c.report.passed ? "yes" : "no") << "\n";
      if (!c.report.passed) ++failed;
    }
    if (failed > 0) {
      err << "error: code=gradcheck_failed message=" << failed << " case(s) above tolerance\n";
      return kExitFailure;
    }
    return kExitOk;
  }
};

// `--config FILE` may appear anywhere; returns the parsed document if present.
std::optional<json> load_config(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return std::nullopt;
  std::string text;
  try {
    text = read_file(*path);
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lavpr: language-assisted place recognition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config; command-line flags override it, it overrides defaults");

  struct Sub {
    CLI::App* app;
    Settings settings;
  };
  std::map<std::string, Sub> subs;
  auto sub = [&](const std::string& name, const std::string& help) -> Sub& {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, help);
    return s;
  };

  GenSynth gen;
  TrainFusionCmd fusion;
  TrainCrossModalCmd crossmodal;
  EvalCmd eval;
  RerankCmd rerank;
  FlopsCmd flops;
  GradcheckCmd gradcheck;
  {
    auto& s = sub("gen-synth", "generate a synthetic place-clustered benchmark");
    gen.add(s.app, s.settings);
  }
  {
    auto& s = sub("train-fusion", "train a multi-modal fusion head");
    fusion.add(s.app, s.settings);
  }
  {
    auto& s = sub("train-crossmodal", "align toy text and image encoders with LoRA");
    crossmodal.add(s.app, s.settings);
  }
  {
    auto& s = sub("eval", "Recall@K of modalities, fusion heads and cross-modal runs");
    eval.add(s.app, s.settings);
  }
  {
    auto& s = sub("rerank", "joint scoring against two-stage shortlist re-ranking");
    rerank.add(s.app, s.settings);
  }
  {
    auto& s = sub("flops", "forward-pass cost 2NS");
    flops.add(s.app, s.settings);
  }
  {
    auto& s = sub("gradcheck", "finite-difference check of every trainable module");
    gradcheck.add(s.app, s.settings);
  }

  try {
    std::vector<std::string> argv = args;
    const auto config = load_config(args);
    const bool has_command = std::any_of(argv.begin(), argv.end(),
                                         [&](const std::string& a) { return subs.count(a) > 0; });
    if (config && !has_command && config->contains("command")) {
      argv.insert(argv.begin(), config->at("command").get<std::string>());
    }
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    Settings& settings = subs.at(name).settings;
    if (config) {
      if (config->contains("command") && config->at("command") != name) {
        throw UsageError("config was written for '" + config->at("command").get<std::string>() +
                         "', not '" + name + "'");
      }
      settings.apply(config->contains("options") ? config->at("options") : *config);
    }

    if (name == "gen-synth") return gen.run(settings, out);
    if (name == "train-fusion") return fusion.run(settings, out, err);
    if (name == "train-crossmodal") return crossmodal.run(settings, out, err);
    if (name == "eval") return eval.run(settings, out);
    if (name == "rerank") return rerank.run(settings, out);
    if (name == "flops") return flops.run(out);
    return gradcheck.run(out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: code=" << to_string(e.code()) << " message=" << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: code=internal message=" << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace lavpr::cli
