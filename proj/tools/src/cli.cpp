#include "iqt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iqt/dti/fit.hpp"
#include "iqt/dti/phantom.hpp"
#include "iqt/dti/tensor_math.hpp"
#include "iqt/error.hpp"
#include "iqt/evaluation/inference.hpp"
#include "iqt/evaluation/report.hpp"
#include "iqt/hash.hpp"
#include "iqt/resample.hpp"
#include "iqt/training.hpp"

namespace iqt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kReplayConfigName = "replay_config.json";

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  int threads = 1;
};

// Option values exactly as needed to rebuild the command line.
using Args = std::map<std::string, std::vector<std::string>>;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string(), e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

json artifact_hashes(const fs::path& dir) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == kManifestName || name == kReplayConfigName) continue;
    files.emplace_back(fs::relative(e.path(), dir).generic_string(), e.path());
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& [rel, path] : files) out[rel] = sha256_file(path);
  return out;
}

json input_hashes(const std::vector<fs::path>& paths) {
  json out = json::object();
  for (const auto& p : paths) out[p.generic_string()] = sha256_file(p);
  return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const Args& args, const json& config,
                    std::uint64_t seed, const std::vector<fs::path>& inputs, const json& summary = json::object()) {
  json a = json::object();
  for (const auto& [k, v] : args) a[k] = v;
  const json m = {{"command", command}, {"args", a},       {"config", config},
                  {"seed", seed},       {"inputs", input_hashes(inputs)}, {"summary", summary},
                  {"artifacts", artifact_hashes(dir)}};
  write_json(m, dir / kManifestName);
}

void write_derived(const Volume& tensors, const fs::path& dir) {
  write_volume(tensors, dir / "tensors.vjf");
  write_volume(dti::mean_diffusivity(tensors), dir / "md.vjf");
  write_volume(dti::fractional_anisotropy(tensors), dir / "fa.vjf");
  write_volume(dti::colored_fa(tensors), dir / "cfa.vjf");
}

// Subjects come from phantom directories or from a generated phantom list.
struct SubjectSet {
  std::vector<train::Subject> subjects;
  std::vector<std::string> names;
  std::vector<fs::path> inputs;
  json config;
};

SubjectSet load_subjects(const json& cfg) {
  SubjectSet out;
  if (cfg.contains("subjects")) {
    out.config["subjects"] = cfg.at("subjects");
    for (const auto& entry : cfg.at("subjects")) {
      const fs::path dir = entry.get<std::string>();
      for (const char* f : {"tensors.vjf", "t1w.vjf", "mask.vjf"}) out.inputs.push_back(dir / f);
      out.subjects.push_back({read_volume(dir / "tensors.vjf"), read_volume(dir / "t1w.vjf"), read_volume(dir / "mask.vjf")});
      out.names.push_back(dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string());
    }
  }
  if (cfg.contains("phantoms")) {
    const json& p = cfg.at("phantoms");
    const int count = p.value("count", 0);
    const std::uint64_t seed = p.value("seed", std::uint64_t{0});
    const dti::PhantomSpec spec = dti::phantom_spec_from_json(p.value("spec", json::object()));
    out.config["phantoms"] = {{"count", count}, {"seed", seed}, {"spec", dti::to_json(spec)}};
    for (int i = 0; i < count; ++i) {
      out.subjects.push_back(train::subject_from_phantom(dti::generate_phantom(spec, seed + i)));
      out.names.push_back("phantom_" + std::to_string(seed + i));
    }
  }
  if (out.subjects.empty()) throw ConfigError("no subjects: give 'subjects' directories or a 'phantoms' list");
  return out;
}

json load_config(const Globals& g, bool required) {
  if (g.config.empty()) {
    if (required) throw ConfigError("--config is required");
    return json::object();
  }
  return read_json(g.config);
}

Volume onto_grid(const Volume& v, Dims dims, double spacing_mm) {
  if (v.dims() == dims && v.spacing_mm() == spacing_mm) return v;
  const double ratio = spacing_mm / v.spacing_mm();
  const Volume blurred = ratio > 1.0 ? resample::gaussian_blur(v, resample::fwhm_sigma(ratio)) : v;
  return resample::resample_to_grid(blurred, dims, spacing_mm);
}

int cmd_phantom(const Globals& g) {
  const fs::path out = require_out(g);
  const json cfg = load_config(g, false);
  const dti::PhantomSpec spec = dti::phantom_spec_from_json(cfg);
  spec.validate();
  const std::uint64_t seed = g.seed.value_or(0);
  const dti::Phantom ph = dti::generate_phantom(spec, seed);
  write_volume(ph.t1w, out / "t1w.vjf");
  write_volume(ph.dwi, out / "dwi.vjf");
  write_volume(ph.tensors, out / "tensors.vjf");
  write_volume(ph.mask, out / "mask.vjf");
  write_volume(ph.tissue_labels, out / "labels.vjf");
  write_json(dti::to_json(ph.protocol), out / "protocol.json");
  write_manifest(out, "phantom", {}, dti::to_json(spec), seed, {}, {{"clamped_signals", ph.clamped_signals}});
  std::printf("phantom written to %s\n", out.string().c_str());
  return kExitOk;
}

int cmd_degrade(const Globals& g, const std::string& in, double target_mm, std::optional<double> sigma) {
  const Volume v = read_volume(in);
  const fs::path out = require_out(g);
  const Volume d = resample::degrade(v, target_mm, sigma);
  write_volume(d, out / "degraded.vjf");
  Args args{{"in", {in}}, {"target-mm", {json(target_mm).dump()}}};
  if (sigma) args["sigma"] = {json(*sigma).dump()};
  write_manifest(out, "degrade", args, json::object(), g.seed.value_or(0), {in},
                 {{"effective_resolution_mm", d.effective_resolution_mm() ? json(*d.effective_resolution_mm()) : json(nullptr)}});
  return kExitOk;
}

int cmd_fit(const Globals& g, const std::string& dwi_path, const std::string& protocol_path, const std::string& mask_path) {
  const Volume dwi = read_volume(dwi_path);
  const dti::DiffusionProtocol protocol = dti::protocol_from_json(read_json(protocol_path));
  std::vector<fs::path> inputs{dwi_path, protocol_path};
  Volume mask = make_mask(dwi.dims(), dwi.spacing_mm(), std::vector<float>(dwi.dims().voxels(), 1.0f));
  if (!mask_path.empty()) {
    mask = read_volume(mask_path);
    inputs.emplace_back(mask_path);
  }
  const fs::path out = require_out(g);
  const dti::FitResult fit = dti::fit_dti(dwi, protocol, mask);
  write_derived(fit.tensors, out);
  Args args{{"dwi", {dwi_path}}, {"protocol", {protocol_path}}};
  if (!mask_path.empty()) args["mask"] = {mask_path};
  write_manifest(out, "fit", args, json::object(), g.seed.value_or(0), inputs, {{"flagged_voxels", fit.flagged}});
  if (fit.flagged > 0) std::fprintf(stderr, "iqt: warning: %zu voxels could not be fitted\n", fit.flagged);
  return kExitOk;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

int cmd_train(const Globals& g, const std::string& resume, const std::string& multimodal, std::optional<int> epochs) {
  const json cfg_json = load_config(g, true);
  train::TrainingConfig cfg = train::training_config_from_json(cfg_json.value("training", json::object()));
  if (g.seed) cfg.seed = *g.seed;
  if (!multimodal.empty()) cfg.network.multimodal = parse_bool(multimodal);
  if (epochs) cfg.epochs = *epochs;
  cfg.threads = g.threads;
  cfg.validate();
  const int grid = cfg_json.value("grid", 0);

  std::optional<train::TrainState> state;
  std::vector<fs::path> inputs;
  if (!resume.empty()) {
    if (grid != 0) throw ConfigError("--resume cannot be combined with an experiment grid");
    const ad::Checkpoint ckpt = ad::read_checkpoint(resume);
    const train::TrainingConfig stored = train::config_from_checkpoint(ckpt);
    if (stored.multimodal() != cfg.multimodal()) {
      throw ConfigError(std::string("checkpoint was trained ") + (stored.multimodal() ? "multimodal" : "unimodal") +
                        " but the run asks for " + (cfg.multimodal() ? "multimodal" : "unimodal"));
    }
    state = train::state_from_checkpoint(ckpt);
    inputs.emplace_back(resume);
  }
  SubjectSet subjects = load_subjects(cfg_json);
  inputs.insert(inputs.end(), subjects.inputs.begin(), subjects.inputs.end());
  const fs::path out = require_out(g);

  json resolved = subjects.config;
  resolved["training"] = train::to_json(cfg);
  json summary = json::object();
  if (grid != 0) {
    resolved["grid"] = grid;
    const auto entries = train::experiment_grid(grid, cfg);
    const auto results = train::run_experiment_grid(entries, subjects.subjects, out);
    int failed = 0;
    for (const auto& r : results) {
      if (!r.state) {
        ++failed;
        std::fprintf(stderr, "iqt: grid entry %s failed: %s\n", r.name.c_str(), r.error.c_str());
      }
    }
    summary["failed_entries"] = failed;
  } else {
    train::TrainOptions options;
    options.checkpoint_dir = out;
    options.on_epoch = [](const train::TrainState& s) {
      std::printf("epoch %d loss %.6f\n", s.epoch, s.loss_history.back().loss);
      std::fflush(stdout);
    };
    const train::TrainingData data = train::prepare_training_data(subjects.subjects, cfg);
    train::TrainState final_state;
    try {
      final_state = train::train(data, cfg, options, std::move(state));
    } catch (const NumericError&) {
      std::fprintf(stderr, "iqt: training aborted; checkpoints already written in %s are kept\n", out.string().c_str());
      throw;
    }
    json log = json::array();
    for (const auto& e : final_state.loss_history) log.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
    write_json(log, out / "loss_log.json");
    summary["epochs_completed"] = final_state.epoch;
  }
  Args args;
  if (!resume.empty()) args["resume"] = {resume};
  write_manifest(out, "train", args, resolved, cfg.seed, inputs, summary);
  return kExitOk;
}

int cmd_infer(const Globals& g, const std::string& ckpt_path, const std::string& lr_path, const std::string& t1w_path,
              std::optional<double> target_mm) {
  const ad::Checkpoint ckpt = ad::read_checkpoint(ckpt_path);
  const train::TrainState state = train::state_from_checkpoint(ckpt);
  const train::TrainingConfig tcfg = train::config_from_checkpoint(ckpt);
  const Volume lr = read_volume(lr_path);
  std::vector<fs::path> inputs{ckpt_path, lr_path};
  std::optional<Volume> t1w;
  if (!t1w_path.empty()) {
    if (state.params.config.multimodal) {
      t1w = read_volume(t1w_path);
      inputs.emplace_back(t1w_path);
    } else {
      std::fprintf(stderr, "iqt: warning: unimodal checkpoint, ignoring --t1w\n");
    }
  }
  if (state.params.config.multimodal && !t1w) throw PreconditionError("multimodal checkpoint requires --t1w");
  const double spacing = target_mm ? *target_mm : (t1w ? t1w->spacing_mm() : tcfg.target_resolution_mm);
  const double f = lr.spacing_mm() / spacing;
  const Dims dims{static_cast<int>(std::lround(lr.dims().nx * f)), static_cast<int>(std::lround(lr.dims().ny * f)),
                  static_cast<int>(std::lround(lr.dims().nz * f))};
  const Volume lr_up = eval::linear_baseline(lr, dims, spacing).with_kind(VolumeKind::DTI);
  std::optional<Volume> t1w_grid;
  if (t1w) t1w_grid = onto_grid(*t1w, dims, spacing);
  const fs::path out = require_out(g);
  const Volume pred = eval::infer_volume(state.params, lr_up, t1w_grid ? &*t1w_grid : nullptr, state.normalization);
  write_derived(pred, out);
  Args args{{"checkpoint", {ckpt_path}}, {"lr", {lr_path}}};
  if (!t1w_path.empty()) args["t1w"] = {t1w_path};
  if (target_mm) args["target-mm"] = {json(*target_mm).dump()};
  write_manifest(out, "infer", args, json::object(), g.seed.value_or(0), inputs,
                 {{"spacing_mm", spacing}, {"multimodal", state.params.config.multimodal}});
  return kExitOk;
}

int cmd_evaluate(const Globals& g, const std::string& grid_manifest) {
  json cfg_json = load_config(g, true);
  if (!grid_manifest.empty()) cfg_json["grid_manifest"] = grid_manifest;
  const eval::EvalConfig ecfg = eval::eval_config_from_json(cfg_json.value("evaluation", json::object()));
  std::vector<eval::NamedModel> models;
  std::vector<fs::path> inputs;
  json model_list = json::array();
  auto add_model = [&](const std::string& name, const fs::path& path) {
    const train::TrainState s = train::state_from_checkpoint(ad::read_checkpoint(path));
    models.push_back({name, s.params, s.normalization});
    inputs.push_back(path);
    model_list.push_back({{"name", name}, {"checkpoint", path.generic_string()}});
  };
  for (const auto& m : cfg_json.value("models", json::array())) {
    add_model(m.at("name").get<std::string>(), m.at("checkpoint").get<std::string>());
  }
  if (cfg_json.contains("grid_manifest")) {
    const fs::path manifest = cfg_json.at("grid_manifest").get<std::string>();
    inputs.push_back(manifest);
    for (const auto& e : read_json(manifest)) {
      if (e.at("error").is_null() && e.at("checkpoint").is_string()) {
        add_model(e.at("name").get<std::string>(), manifest.parent_path() / e.at("checkpoint").get<std::string>());
      }
    }
  }
  if (models.empty() && !ecfg.include_linear_baseline) throw ConfigError("nothing to evaluate: no models and no baseline");
  // Experiment configs keep held-out subjects under "test", apart from the training set.
  SubjectSet subjects = load_subjects(cfg_json.contains("test") ? cfg_json.at("test") : cfg_json);
  inputs.insert(inputs.end(), subjects.inputs.begin(), subjects.inputs.end());
  const fs::path out = require_out(g);
  const eval::MetricsReport report = eval::evaluate_models(ecfg, subjects.subjects, subjects.names, models);
  write_json(eval::to_json(report), out / "report.json");
  const std::string table = eval::format_table(report);
  {
    std::ofstream t(out / "report.txt", std::ios::binary);
    t << table;
  }
  std::fputs(table.c_str(), stdout);
  json resolved = subjects.config;
  resolved["evaluation"] = eval::to_json(ecfg);
  resolved["models"] = model_list;
  std::size_t failures = 0;
  for (const auto& r : report.rows) failures += r.failures;
  // Grid models are listed explicitly in "models", so replay needs no manifest argument.
  write_manifest(out, "evaluate", {}, resolved, g.seed.value_or(0), inputs, {{"subject_failures", failures}});
  return kExitOk;
}

int cmd_replay(const Globals& g, const std::string& manifest_path) {
  const json m = read_json(manifest_path);
  const fs::path out = require_out(g);
  std::vector<std::string> argv{m.at("command").get<std::string>()};
  for (const auto& [k, v] : m.at("args").items()) {
    for (const auto& s : v) {
      argv.push_back("--" + k);
      argv.push_back(s.get<std::string>());
    }
  }
  const json& config = m.at("config");
  if (!config.empty()) {
    write_json(config, out / kReplayConfigName);
    argv.push_back("--config");
    argv.push_back((out / kReplayConfigName).string());
  }
  argv.insert(argv.end(), {"--seed", std::to_string(m.at("seed").get<std::uint64_t>()), "--out", out.string(),
                           "--threads", std::to_string(g.threads)});
  for (const auto& [path, hash] : m.at("inputs").items()) {
    if (sha256_file(path) != hash.get<std::string>()) {
      std::fprintf(stderr, "iqt: warning: input %s changed since the manifest was written\n", path.c_str());
    }
  }
  const int code = run(argv);
  if (code != kExitOk) return code;
  const json expected = m.at("artifacts");
  const json actual = read_json(out / kManifestName).at("artifacts");
  int mismatches = 0;
  for (const auto& [name, hash] : expected.items()) {
    if (!actual.contains(name)) {
      std::fprintf(stderr, "iqt: replay missing %s\n", name.c_str());
      ++mismatches;
    } else if (actual.at(name) != hash) {
      std::fprintf(stderr, "iqt: replay hash differs for %s\n", name.c_str());
      ++mismatches;
    }
  }
  for (const auto& [name, hash] : actual.items()) {
    if (!expected.contains(name)) {
      std::fprintf(stderr, "iqt: replay produced extra artifact %s\n", name.c_str());
      ++mismatches;
    }
  }
  if (mismatches > 0) return kExitNumeric;
  std::printf("replay reproduced %zu artifacts\n", expected.size());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multimodal image quality transfer for DTI on synthetic phantoms", "iqt"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom subject")->fallthrough();

  auto* degrade = app.add_subcommand("degrade", "Blur and downsample, then return to the source grid")->fallthrough();
  std::string degrade_in;
  double target_mm = 0.0;
  std::optional<double> sigma;
  degrade->add_option("--in", degrade_in, "Input VJF")->required();
  degrade->add_option("--target-mm", target_mm, "Target resolution in mm")->required();
  degrade->add_option("--sigma", sigma, "Gaussian sigma in source voxels (default from FWHM)");

  auto* fit = app.add_subcommand("fit", "Least-squares tensor fit of a DWI volume")->fallthrough();
  std::string dwi, protocol, mask;
  fit->add_option("--dwi", dwi, "DWI VJF")->required();
  fit->add_option("--protocol", protocol, "Protocol JSON")->required();
  fit->add_option("--mask", mask, "Mask VJF");

  auto* trn = app.add_subcommand("train", "Train a model or an experiment grid")->fallthrough();
  std::string resume, multimodal;
  std::optional<int> epochs;
  trn->add_option("--resume", resume, "Checkpoint to resume from");
  trn->add_option("--multimodal", multimodal, "Override the network mode (true or false)");
  trn->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::PositiveNumber);

  auto* infer = app.add_subcommand("infer", "Super-resolve a low-resolution tensor volume")->fallthrough();
  std::string ckpt, lr, t1w;
  std::optional<double> infer_target;
  infer->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  infer->add_option("--lr", lr, "Low-resolution tensor VJF")->required();
  infer->add_option("--t1w", t1w, "T1w VJF");
  infer->add_option("--target-mm", infer_target, "Output spacing (default: T1w spacing)");

  auto* evaluate = app.add_subcommand("evaluate", "Score models against ground truth")->fallthrough();
  std::string grid_manifest;
  evaluate->add_option("--grid-manifest", grid_manifest, "grid_manifest.json written by a grid training run");

  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare artifact hashes")->fallthrough();
  std::string manifest;
  replay->add_option("--manifest", manifest, "Manifest JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (app.count("--seed") > 0) g.seed = seed;
    if (*phantom) return cmd_phantom(g);
    if (*degrade) return cmd_degrade(g, degrade_in, target_mm, sigma);
    if (*fit) return cmd_fit(g, dwi, protocol, mask);
    if (*trn) return cmd_train(g, resume, multimodal, epochs);
    if (*infer) return cmd_infer(g, ckpt, lr, t1w, infer_target);
    if (*evaluate) return cmd_evaluate(g, grid_manifest);
    if (*replay) return cmd_replay(g, manifest);
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "iqt: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "iqt: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "iqt: error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace iqt::cli
