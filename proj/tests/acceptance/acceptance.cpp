#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <unistd.h>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradient_suite.hpp"
#include "iqt/cli.hpp"
#include "iqt/dti/fit.hpp"
#include "iqt/dti/phantom.hpp"
#include "iqt/dti/tensor_math.hpp"
#include "iqt/error.hpp"
#include "iqt/evaluation/metrics.hpp"
#include "iqt/evaluation/report.hpp"
#include "iqt/evaluation/wilcoxon.hpp"
#include "iqt/network.hpp"
#include "iqt/pipeline.hpp"
#include "iqt/training.hpp"
#include "wilcoxon_oracle.hpp"

namespace {

using namespace iqt;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // wall-clock limit, part of the criterion
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Outcome gradient_suite() {
  constexpr int kInstances = 20;
  auto cases = testing::op_cases();
  cases.push_back(testing::network_case(true));
  cases.push_back(testing::network_case(false));
  double worst = 0.0, worst_gap = 0.0;
  std::string worst_name;
  int total = 0;
  for (const auto& c : cases) {
    for (const auto& r : testing::run_case(c, kInstances)) {
      ++total;
      if (r.rel_error > worst) worst = r.rel_error, worst_name = c.name;
      worst_gap = std::max(worst_gap, r.forward_gap);
    }
  }
  return {worst < 1e-3 && worst_gap < 1e-5,
          fmt("%zu cases x %d instances, worst rel err %.2e (%s), worst forward gap %.2e", cases.size(), kInstances, worst,
              worst_name.c_str(), worst_gap)};
}

Outcome fit_oracle() {
  dti::PhantomSpec spec;
  spec.dims = {24, 24, 24};
  spec.protocol_directions = 30;
  spec.protocol_bvalue = 1000.0;
  spec.protocol_b0 = 3;
  spec.noise_sigma = 0.0;
  const dti::Phantom ph = dti::generate_phantom(spec, 11);
  const dti::FitResult fit = dti::fit_dti(ph.dwi, ph.protocol, ph.mask);
  double worst = 0.0;
  const std::size_t n = ph.tensors.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    if (ph.mask.data()[i] == 0.0f) continue;
    for (int c = 0; c < 6; ++c)
      worst = std::max(worst, std::abs(static_cast<double>(fit.tensors.data()[c * n + i]) - ph.tensors.data()[c * n + i]));
  }
  return {worst <= 1e-9 && fit.flagged == 0 && ph.protocol.size() == 33 && ph.protocol.b0_count() == 3,
          fmt("max abs error %.2e mm^2/s over 24^3, %zu volumes, %zu flagged", worst, ph.protocol.size(), fit.flagged)};
}

Outcome metric_identities() {
  dti::PhantomSpec spec;
  spec.dims = {24, 24, 24};
  const dti::Phantom ph = dti::generate_phantom(spec, 12);
  const Volume& t = ph.tensors;
  const Volume fa = dti::fractional_anisotropy(t), md = dti::mean_diffusivity(t);
  const double dt = eval::dt_rmse(t, t, ph.mask);
  const double sr = eval::scalar_rmse(fa, fa, ph.mask);
  const double ss_fa = eval::ssim3d(fa, fa, ph.mask, eval::kFaDataRange);
  const double ss_md = eval::ssim3d(md, md, ph.mask, eval::kMdDataRange);
  const double cs = eval::cfa_csim(t, t, ph.mask).value;
  const double fa_iso = dti::fractional_anisotropy(dti::Tensor6{1e-3, 1e-3, 1e-3, 0, 0, 0});
  const double fa_stick = dti::fractional_anisotropy(dti::Tensor6{1e-3, 0, 0, 0, 0, 0});

  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::bernoulli_distribution flip(0.5);
  std::vector<dti::Vec3> a(1000), b(1000), bf(1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = {nd(rng), nd(rng), nd(rng)};
    b[i] = {nd(rng), nd(rng), nd(rng)};
    const double s = flip(rng) ? -1.0 : 1.0;
    bf[i] = {s * b[i][0], s * b[i][1], s * b[i][2]};
  }
  const double flip_gap = std::abs(eval::mean_abs_cosine(a, b).value - eval::mean_abs_cosine(a, bf).value);

  const bool pass = dt == 0.0 && sr == 0.0 && std::abs(ss_fa - 1.0) <= 1e-9 && std::abs(ss_md - 1.0) <= 1e-9 &&
                    std::abs(cs - 1.0) <= 1e-12 && std::abs(fa_iso) <= 1e-12 && std::abs(fa_stick - 1.0) <= 1e-12 &&
                    flip_gap <= 1e-12;
  return {pass, fmt("dt_rmse %.1e, rmse %.1e, ssim fa/md 1%+.1e/1%+.1e, csim 1%+.1e, FA iso %.1e stick 1%+.1e, flip gap %.1e",
                    dt, sr, ss_fa - 1.0, ss_md - 1.0, cs - 1.0, fa_iso, fa_stick - 1.0, flip_gap)};
}

Volume random_volume(Dims d, int channels, VolumeKind kind, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> data(d.voxels() * channels);
  for (auto& x : data) x = u(rng);
  return Volume(d, channels, 1.25, kind, std::move(data));
}

Outcome pipeline_identity() {
  std::mt19937_64 rng(14);
  double worst_tile = 0.0;
  int dims_checked = 0;
  for (int axis = 0; axis < 3; ++axis) {
    for (int n = 16; n <= 48; ++n) {
      Dims d{17, 20, 23};
      (axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz) = n;
      const Volume v = random_volume(d, 6, VolumeKind::DTI, rng, -1.0f, 1.0f);
      std::vector<pipeline::PatchPrediction> patches;
      for (const auto& o : pipeline::tile_for_inference(d)) patches.push_back({o, pipeline::cut_patch(v, o)});
      const Volume r = pipeline::blend_patches(patches, d, 6, 1.25);
      for (std::size_t i = 0; i < v.data().size(); ++i)
        worst_tile = std::max(worst_tile, static_cast<double>(std::abs(r.data()[i] - v.data()[i])));
      ++dims_checked;
    }
  }
  const pipeline::NormalizationSpec spec;
  const Dims d{16, 16, 16};
  std::vector<float> dti(d.voxels() * 6);
  std::uniform_real_distribution<float> diag(0.0f, 2e-3f), off(-2e-3f, 2e-3f);
  for (int c = 0; c < 6; ++c)
    for (std::size_t i = 0; i < d.voxels(); ++i) dti[c * d.voxels() + i] = c < 3 ? diag(rng) : off(rng);
  const Volume v(d, 6, 1.25, VolumeKind::DTI, dti);
  const Volume back = pipeline::denormalize(pipeline::normalize(v, spec), spec);
  double worst_norm = 0.0;
  for (std::size_t i = 0; i < dti.size(); ++i) worst_norm = std::max(worst_norm, std::abs(static_cast<double>(back.data()[i]) - dti[i]));
  const Volume t1 = random_volume(d, 1, VolumeKind::T1w, rng, 0.0f, 1.0f);
  const Volume t1_back = pipeline::denormalize(pipeline::normalize(t1, spec), spec);
  for (std::size_t i = 0; i < d.voxels(); ++i)
    worst_norm = std::max(worst_norm, std::abs(static_cast<double>(t1_back.data()[i]) - t1.data()[i]));
  return {worst_tile <= 1e-6 && worst_norm <= 1e-7,
          fmt("tile/blend worst %.1e over %d grids (each axis 16..48), normalize round trip worst %.1e", worst_tile,
              dims_checked, worst_norm)};
}

Outcome schedule_conformance() {
  const train::TrainingConfig cfg;
  const double l0 = train::learning_rate(0, cfg), l10 = train::learning_rate(10, cfg), l20 = train::learning_rate(20, cfg);
  const bool schedule = l0 == 1e-3 && l10 == 5e-4 && l20 == 2.5e-4;

  dti::PhantomSpec spec;
  spec.dims = {32, 32, 32};
  const std::vector<train::Subject> subjects{train::subject_from_phantom(dti::generate_phantom(spec, 15))};
  train::TrainingConfig small = cfg;
  small.patches_per_subject = 8;
  const auto data = train::prepare_training_data(subjects, small);
  const auto triplets = train::make_epoch_dataset(data, small, 0);
  const std::size_t expected =
      static_cast<std::size_t>(pipeline::kTripletShape[0]) * pipeline::kTripletShape[1] * pipeline::kTripletShape[2] * pipeline::kTripletShape[3];
  bool shapes = !triplets.empty() && pipeline::kTripletShape == std::array<int, 4>{16, 16, 16, 13};
  for (const auto& t : triplets) {
    pipeline::validate_triplet(t);
    shapes = shapes && t.data.size() == expected;
  }
  bool rejects = false;
  try {
    pipeline::validate_triplet(pipeline::PatchTriplet{{0, 0, 0}, std::vector<float>(expected - 1)});
  } catch (const ShapeError&) {
    rejects = true;
  }
  return {schedule && shapes && rejects,
          fmt("lr(0)=%.17g lr(10)=%.17g lr(20)=%.17g; %zu triplets of (16,16,16,13), short triplet %s", l0, l10, l20,
              triplets.size(), rejects ? "rejected" : "accepted")};
}

Outcome wilcoxon_exactness() {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 40; ++rep) {
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        b[i] = nd(rng);
        a[i] = b[i] + nd(rng) + 0.2 * (rep % 5);
        if (rep % 4 == 3) a[i] = b[i] + std::round(2.0 * (a[i] - b[i])) / 2.0;
      }
      const auto got = eval::wilcoxon_signed_rank(a, b);
      const auto want = testing::enumerate_wilcoxon(a, b);
      if (want.n == 0) {
        if (!got.degenerate) worst = 1.0;
        continue;
      }
      if (got.n != want.n || !got.exact) worst = 1.0;
      worst = std::max(worst, std::abs(got.p_value - want.p));
      ++cases;
    }
  }
  return {worst <= 1e-12, fmt("%d samples with n in 1..12 (ties and zeros included), worst |p - enumeration| %.1e", cases, worst)};
}

Outcome overfit_probe() {
  dti::PhantomSpec spec;
  const std::vector<train::Subject> subjects{train::subject_from_phantom(dti::generate_phantom(spec, 17))};
  train::TrainingConfig cfg;
  cfg.epochs = 30;
  cfg.patches_per_subject = 200;
  cfg.checkpoint_every = 0;
  cfg.seed = 17;
  const auto data = train::prepare_training_data(subjects, cfg);
  const auto triplets = train::make_epoch_dataset(data, cfg, 0);
  const train::TrainState s = train::train_fixed(triplets, cfg, data.normalization);
  const double first = s.loss_history.front().loss, last = s.loss_history.back().loss;
  return {s.params.config.multimodal && s.params.config.base_channels == 16 && triplets.size() == 200 && last < 0.5 * first,
          fmt("multimodal base 16, %zu fixed triplets, 30 epochs: L1 %.4f -> %.4f (ratio %.3f)", triplets.size(), first, last,
              last / first)};
}

Outcome ordering_reproduction() {
  constexpr int kTrain = 2, kTest = 6;
  std::vector<train::Subject> train_set, test_set;
  std::vector<std::string> names;
  const dti::PhantomSpec spec;
  for (int i = 0; i < kTrain + kTest; ++i) {
    auto s = train::subject_from_phantom(dti::generate_phantom(spec, 1000 + i));
    if (i < kTrain) {
      train_set.push_back(std::move(s));
    } else {
      test_set.push_back(std::move(s));
      names.push_back("phantom_" + std::to_string(1000 + i));
    }
  }
  // Default recipe with only the subject count and epochs shrunk.
  train::TrainingConfig cfg;
  cfg.epochs = 8;
  cfg.checkpoint_every = 0;
  const auto data = train::prepare_training_data(train_set, cfg);
  const train::TrainState s = train::train(data, cfg);
  eval::EvalConfig ecfg;
  ecfg.test_input_resolutions_mm = {3.125};
  const eval::NamedModel model{"multimodal", s.params, s.normalization};
  const eval::MetricsReport rep = eval::evaluate_models(ecfg, test_set, names, std::span(&model, 1));
  const eval::ReportRow* base = nullptr;
  const eval::ReportRow* net = nullptr;
  for (const auto& r : rep.rows) (r.model == eval::kBaselineName ? base : net) = &r;
  if (!base || !net || base->failures || net->failures) return {false, "evaluation rows missing or subjects failed"};
  const double b = base->median[eval::kDtRmse], m = net->median[eval::kDtRmse];
  return {m < b, fmt("median DT-RMSE over %d held-out phantoms at 3.125 -> 1.25 mm: multimodal %.3e vs linear %.3e", kTest, m, b)};
}

Outcome budget_invariant() {
  net::NetworkConfig cfg;
  const auto multi = net::build_model(cfg, 1);
  cfg.multimodal = false;
  const auto uni = net::build_model(cfg, 1);
  const std::size_t diff = net::parameter_count(multi) - net::parameter_count(uni);
  const std::size_t t1w = net::parameter_count(multi, net::kT1wEncoder);
  bool shapes = true;
  for (auto prefix : {net::kDtiEncoder, net::kBottleneck, net::kDecoder, net::kHead}) {
    shapes = shapes && net::shape_list(multi, prefix) == net::shape_list(uni, prefix);
  }
  return {diff == t1w && t1w > 0 && net::parameter_count(uni, net::kT1wEncoder) == 0 && shapes,
          fmt("multimodal %zu - unimodal %zu = %zu, T1w encoder %zu; shared shape lists %s", net::parameter_count(multi),
              net::parameter_count(uni), diff, t1w, shapes ? "identical" : "differ")};
}

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void save(const json& j, const fs::path& p) { std::ofstream(p) << j.dump(2); }

// Runs phantom, degrade, train, infer and evaluate under `root`.
std::vector<json> cli_chain(const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string r = root.string();
  save({{"dims", {32, 32, 32}}}, root / "phantom.json");
  save({{"training",
         {{"input_resolutions_mm", {3.125}}, {"epochs", 2}, {"patches_per_subject", 24}, {"batch_size", 8}, {"base_channels", 4}}},
        {"subjects", {r + "/phantom"}}},
       root / "train.json");
  save({{"evaluation", {{"test_input_resolutions_mm", {3.125}}}},
        {"models", {{{"name", "multimodal"}, {"checkpoint", r + "/train/final.ckpt"}}}},
        {"subjects", {r + "/phantom"}}},
       root / "eval.json");
  const std::vector<std::vector<std::string>> steps{
      {"phantom", "--config", r + "/phantom.json", "--seed", "21", "--out", r + "/phantom"},
      {"degrade", "--in", r + "/phantom/tensors.vjf", "--target-mm", "3.125", "--out", r + "/lr"},
      {"train", "--config", r + "/train.json", "--seed", "22", "--out", r + "/train"},
      {"infer", "--checkpoint", r + "/train/final.ckpt", "--lr", r + "/lr/degraded.vjf", "--t1w", r + "/phantom/t1w.vjf", "--out",
       r + "/infer"},
      {"evaluate", "--config", r + "/eval.json", "--out", r + "/evaluate"}};
  std::vector<json> artifacts;
  for (const auto& argv : steps) {
    if (cli::run(argv) != cli::kExitOk) throw Error("command '" + argv[0] + "' failed");
    artifacts.push_back(load(root / argv.back().substr(r.size() + 1) / "manifest.json").at("artifacts"));
  }
  return artifacts;
}

// Keeps command progress output off the one-line-per-criterion report.
class QuietStdout {
 public:
  QuietStdout() {
    std::fflush(stdout);
    saved_ = dup(1);
    if (std::FILE* null = std::fopen("/dev/null", "w")) {
      dup2(fileno(null), 1);
      std::fclose(null);
    }
  }
  ~QuietStdout() {
    std::fflush(stdout);
    dup2(saved_, 1);
    close(saved_);
  }

 private:
  int saved_;
};

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "iqt_acceptance_determinism";
  std::vector<json> a, b;
  {
    QuietStdout quiet;
    a = cli_chain(base / "a");
    b = cli_chain(base / "b");
  }
  std::size_t files = 0;
  std::string differing;
  for (std::size_t i = 0; i < a.size(); ++i) {
    files += a[i].size();
    if (a[i] != b[i] || a[i].empty()) differing += (differing.empty() ? "" : ",") + std::to_string(i);
  }
  fs::remove_all(base);
  return {differing.empty(), differing.empty() ? fmt("phantom/degrade/train(2 epochs)/infer/evaluate: %zu hashed artifacts identical", files)
                                               : "steps with differing hashes: " + differing};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<Criterion> criteria{
      {1, "gradient suite", 120.0, gradient_suite},
      {2, "dti fit oracle", 60.0, fit_oracle},
      {3, "metric identities", 0.0, metric_identities},
      {4, "pipeline identity", 0.0, pipeline_identity},
      {5, "schedule conformance", 0.0, schedule_conformance},
      {6, "wilcoxon exactness", 30.0, wilcoxon_exactness},
      {7, "overfit probe", 1800.0, overfit_probe},
      {8, "ordering reproduction", 7200.0, ordering_reproduction},
      {9, "budget invariant", 0.0, budget_invariant},
      {10, "determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; exceeded %.0f s budget", c.budget_s);
    }
    failed += !o.pass;
    std::printf("%s [%2d] %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
