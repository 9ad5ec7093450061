// avibench command-line entry point: one subcommand per pipeline stage.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "avibench/http.hpp"
#include "avibench/pipeline.hpp"
#include "avibench/service.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace avibench;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  std::string out;
  std::string format = "json";
};

int exit_code(ErrorCode c) { return 2 + static_cast<int>(c); }

fs::path data_root(const PipelineConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("AVIBENCH_DATA_DIR"); env && *env) return env;
  return {};
}

/// Relative inputs that do not exist here are looked up under the data root.
fs::path input(const PipelineConfig& cfg, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  const auto root = data_root(cfg);
  return root.empty() ? path : root / path;
}

std::vector<fs::path> inputs(const PipelineConfig& cfg, const std::vector<std::string>& ps) {
  std::vector<fs::path> out;
  for (const auto& p : ps) out.push_back(input(cfg, p));
  return out;
}

PipelineConfig load_config(const Globals& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = pipeline_config_from_json(read_json_file(g.config_path));
  if (g.seed_set) cfg.seed = g.seed;
  if (g.threads > 0) cfg.threads = g.threads;
  return cfg;
}

std::string utc_now() { return format_utc(system_clock_seconds()); }

void emit(const std::string& command, const PipelineConfig& cfg, const nlohmann::json& result, const Globals& g,
          bool out_is_report, const std::string& csv = {}) {
  std::string text;
  if (g.format == "csv") {
    if (csv.empty()) throw Error(ErrorCode::kUnsupported, command + " has no csv output");
    text = csv;
  } else {
    nlohmann::json doc = {{"command", command},
                          {"config", to_json(cfg)},
                          {"result", result},
                          {"provenance", {{"tool", "avibench"}, {"version", kVersion}, {"timestamp", utc_now()}}}};
    text = doc.dump(2) + "\n";
  }
  if (out_is_report && !g.out.empty()) {
    write_text_file(g.out, text);
  } else {
    std::cout << text;
  }
}

std::string require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw Error(ErrorCode::kInvalidArgument, std::string("--out ") + what + " is required");
  return g.out;
}

std::string summary_csv(const nlohmann::json& r) {
  std::ostringstream s;
  s.precision(17);
  s << "auc,ci_lo,ci_hi,n_items,n_positive,n_negative\n";
  s << r.at("auc").get<double>() << ',' << r.at("ci").at("lo").get<double>() << ','
    << r.at("ci").at("hi").get<double>() << ',' << r.at("n_items") << ',' << r.at("n_positive") << ','
    << r.at("n_negative") << '\n';
  return s.str();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avibench: bird audio detection benchmark pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s; g.seed_set = true; },
                                         "Root seed (overrides config)");
  app.add_option("--threads", g.threads, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path; meaning depends on the subcommand");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}));

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset (--out is the dataset directory)");
  std::string profile = "siteA", prefix;
  std::size_t n = 0;
  double clip_len = 0;
  synth->add_option("--profile", profile, "siteA, siteB or a profile JSON file")->capture_default_str();
  synth->add_option("--n", n, "Number of clips")->required();
  synth->add_option("--prefix", prefix, "Item id prefix (default: profile name)");
  synth->add_option("--clip-len", clip_len, "Clip length in seconds (default: config clip_len_s)");

  auto* seg = app.add_subcommand("segment", "Normalize and cut recordings into clips (--out is the output directory)");
  std::string manifest;
  seg->add_option("--manifest", manifest, "Recordings manifest CSV")->required();
  seg->add_option("--clip-len", clip_len, "Clip length in seconds (default: config clip_len_s)");
  std::string normalize;
  seg->add_option("--normalize", normalize, "pre, post or none (default: config normalize)")
      ->check(CLI::IsMember({"pre", "post", "none"}));

  auto* feat = app.add_subcommand("featurize", "Extract front-end features (--out is the feature directory)");
  feat->add_option("--manifest", manifest, "Dataset manifest CSV")->required();
  std::string detector;
  auto add_detector = [&](CLI::App* sc) {
    sc->add_option("--detector", detector, "gmm or forest (overrides config detector.kind)")
        ->check(CLI::IsMember({"gmm", "smacpy", "forest", "skfl"}));
  };
  add_detector(feat);

  auto* train = app.add_subcommand("train", "Train a detector (--out is the model file)");
  std::string features;
  train->add_option("--features", features, "Feature directory")->required();
  add_detector(train);

  auto* pred = app.add_subcommand("predict", "Score a feature directory (--out is the submission CSV)");
  std::string model;
  pred->add_option("--model", model, "Model file")->required();
  pred->add_option("--features", features, "Feature directory")->required();

  auto* adapt = app.add_subcommand("adapt", "Self-adapt a model on unlabelled data (--out is the new model file)");
  std::string pool;
  adapt->add_option("--model", model, "Model file")->required();
  adapt->add_option("--train-features", features, "Original labelled feature directory")->required();
  adapt->add_option("--pool", pool, "Unlabelled target feature directory")->required();

  auto* eval = app.add_subcommand("evaluate", "AUC, bootstrap CI, per-site AUC, ROC and calibration (--out is the report)");
  std::vector<std::string> subs;
  std::string truth, figures;
  eval->add_option("--sub", subs, "Submission CSV; repeat for cross-submission analyses")->required();
  eval->add_option("--truth", truth, "Ground-truth manifest CSV")->required();
  eval->add_option("--figures", figures, "Directory for ROC/calibration CSV and SVG");

  auto* grid = app.add_subcommand("crossgrid", "Train/test AUC grid (--out is the report)");
  std::vector<std::string> train_dirs, test_dirs;
  std::string profiles;
  std::size_t n_train = 200, n_test = 200;
  grid->add_option("--train", train_dirs, "Training feature directory (repeatable)");
  grid->add_option("--test", test_dirs, "Test feature directory (repeatable)");
  grid->add_option("--profiles", profiles, "Comma-separated synthetic profiles, generated in memory");
  grid->add_option("--n-train", n_train, "Synthetic clips per training set")->capture_default_str();
  grid->add_option("--n-test", n_test, "Synthetic clips per test set")->capture_default_str();
  grid->add_option("--clip-len", clip_len, "Synthetic clip length in seconds (default: config clip_len_s)");
  add_detector(grid);

  auto* cal = app.add_subcommand("calibrate", "Fit Platt scaling and apply it (--out is the calibrated submission CSV)");
  std::string apply;
  cal->add_option("--sub", subs, "Submission CSV to fit on")->required()->expected(1);
  cal->add_option("--truth", truth, "Labels for the fitting submission")->required();
  cal->add_option("--apply", apply, "Submission CSV to transform (default: the fitting submission)");

  auto* reval = app.add_subcommand("revalidate", "Flag items whose mean decision contradicts the label (--out is the sheet CSV)");
  double neg_above = 0.2, pos_below = 0.3;
  reval->add_option("--sub", subs, "Submission CSV (repeatable)")->required();
  reval->add_option("--truth", truth, "Ground-truth manifest CSV")->required();
  reval->add_option("--negative-above", neg_above, "Flag negatives with mean decision above this")->capture_default_str();
  reval->add_option("--positive-below", pos_below, "Flag positives with mean decision below this")->capture_default_str();

  auto* mm = app.add_subcommand("mismatch-report", "Top-k label/score disagreements as an annotation sheet (--out is the sheet CSV)");
  std::size_t top_k = 500;
  mm->add_option("--sub", subs, "Submission CSV")->required()->expected(1);
  mm->add_option("--truth", truth, "Ground-truth manifest CSV")->required();
  mm->add_option("--k", top_k, "Number of items")->capture_default_str();

  auto* serve_cmd = app.add_subcommand("serve", "Run the challenge HTTP service");
  std::string service_config, bind, data_dir, admin_token;
  double preview_fraction = -1;
  serve_cmd->add_option("--service-config", service_config, "Service config JSON")->check(CLI::ExistingFile);
  serve_cmd->add_option("--manifest", manifest, "Private test manifest CSV");
  serve_cmd->add_option("--preview-fraction", preview_fraction, "Preview subset fraction (default 0.15)");
  serve_cmd->add_option("--bind", bind, "host:port (default 127.0.0.1:8080)");
  serve_cmd->add_option("--data-dir", data_dir, "Event log directory");
  serve_cmd->add_option("--admin-token", admin_token, "Bearer token for POST /api/admin/close");

  auto* score = app.add_subcommand("score-file", "Score one WAV file with a trained model");
  std::string wav;
  double seg_len = 0;
  score->add_option("--model", model, "Model file")->required();
  score->add_option("--wav", wav, "WAV file")->required()->check(CLI::ExistingFile);
  score->add_option("--clip-len", seg_len, "Segment length in seconds; 0 scores the whole file")->capture_default_str();

  for (auto* sc : app.get_subcommands({})) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    PipelineConfig cfg = load_config(g);
    if (!detector.empty()) cfg.detector = DetectorConfig::defaults_for(parse_detector_kind(detector));
    if (clip_len > 0) cfg.clip_len_s = clip_len;
    if (!normalize.empty()) cfg.normalize = parse_normalize_mode(normalize);
    cfg.validate();

    if (*synth) {
      const auto p = resolve_profile(profile);
      emit("synth", cfg, synth_stage(p, n, cfg.seed, require_out(g, "<dataset dir>"), cfg, prefix), g, false);
    } else if (*seg) {
      const auto mpath = input(cfg, manifest);
      emit("segment", cfg, segment_stage(load_manifest(mpath), mpath.parent_path(), require_out(g, "<dir>"), cfg), g,
           false);
    } else if (*feat) {
      emit("featurize", cfg, featurize_stage(input(cfg, manifest), require_out(g, "<feature dir>"), cfg), g, false);
    } else if (*train) {
      emit("train", cfg, train_stage(input(cfg, features), require_out(g, "<model file>"), cfg), g, false);
    } else if (*pred) {
      emit("predict", cfg, predict_stage(input(cfg, model), input(cfg, features), require_out(g, "<submission csv>"), cfg),
           g, false);
    } else if (*adapt) {
      emit("adapt", cfg,
           adapt_stage(input(cfg, model), input(cfg, features), input(cfg, pool), require_out(g, "<model file>"), cfg),
           g, false);
    } else if (*eval) {
      const auto r = evaluate_stage(inputs(cfg, subs), input(cfg, truth), cfg, figures);
      emit("evaluate", cfg, r, g, true, subs.size() == 1 ? summary_csv(r) : std::string());
    } else if (*grid) {
      nlohmann::json r;
      if (!profiles.empty()) {
        if (!train_dirs.empty() || !test_dirs.empty()) {
          throw Error(ErrorCode::kInvalidArgument, "use either --profiles or --train/--test");
        }
        std::vector<SiteProfile> ps;
        for (const auto& name : split_commas(profiles)) ps.push_back(resolve_profile(name));
        r = synthetic_crossgrid_stage(ps, n_train, n_test, cfg);
      } else {
        if (train_dirs.empty() || test_dirs.empty()) {
          throw Error(ErrorCode::kInvalidArgument, "crossgrid needs --profiles or both --train and --test");
        }
        r = crossgrid_stage(inputs(cfg, train_dirs), inputs(cfg, test_dirs), cfg);
      }
      emit("crossgrid", cfg, r, g, true, grid_csv(r));
    } else if (*cal) {
      const fs::path apply_path = apply.empty() ? fs::path() : input(cfg, apply);
      emit("calibrate", cfg, calibrate_stage(input(cfg, subs[0]), input(cfg, truth), apply_path, g.out, cfg), g, false);
    } else if (*reval) {
      emit("revalidate", cfg, revalidate_stage(inputs(cfg, subs), input(cfg, truth), neg_above, pos_below, g.out), g,
           false);
    } else if (*mm) {
      emit("mismatch-report", cfg, mismatch_report_stage(input(cfg, subs[0]), input(cfg, truth), top_k, g.out), g,
           false);
    } else if (*score) {
      emit("score-file", cfg, score_file_stage(input(cfg, model), wav, seg_len, cfg), g, true);
    } else if (*serve_cmd) {
      ServiceConfig sc;
      if (!service_config.empty()) sc = ServiceConfig::from_json(read_json_file(service_config));
      if (!manifest.empty()) sc.test_manifest = manifest;
      if (preview_fraction >= 0) sc.preview_fraction = preview_fraction;
      if (!bind.empty()) sc.bind = bind;
      if (!data_dir.empty()) sc.data_dir = data_dir;
      if (!admin_token.empty()) sc.admin_token = admin_token;
      if (g.seed_set) sc.seed = g.seed;
      if (sc.test_manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "serve needs a test manifest");
      ServiceOptions so;
      so.preview_fraction = sc.preview_fraction;
      so.seed = sc.seed;
      so.data_dir = sc.data_dir;
      so.n_boot = sc.n_boot;
      ChallengeService svc(load_manifest(input(cfg, sc.test_manifest.string())), so);
      std::cerr << "avibench: serving on " << sc.bind << " (" << svc.snapshot()->preview_ids.size()
                << " preview items)\n";
      serve(svc, sc);
    }
  } catch (const Error& e) {
    std::cerr << "avibench: error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "avibench: error [internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
