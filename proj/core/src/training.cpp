#include "iqt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <thread>

#include "iqt/error.hpp"
#include "iqt/hash.hpp"
#include "iqt/resample.hpp"

namespace iqt::train {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return splitmix(splitmix(splitmix(a) ^ b) ^ c); }

Dims grid_dims(const Dims& d, double from_mm, double to_mm) {
  const double f = from_mm / to_mm;
  return {static_cast<int>(std::lround(d.nx * f)), static_cast<int>(std::lround(d.ny * f)), static_cast<int>(std::lround(d.nz * f))};
}

// Anti-aliased move onto an explicit grid; finer targets skip the blur.
Volume onto_grid(const Volume& v, Dims dims, double spacing_mm) {
  if (v.dims() == dims && v.spacing_mm() == spacing_mm) return v;
  const double ratio = spacing_mm / v.spacing_mm();
  const Volume blurred = ratio > 1.0 ? resample::gaussian_blur(v, resample::fwhm_sigma(ratio)) : v;
  return resample::resample_to_grid(blurred, dims, spacing_mm);
}

ad::Tensor channels_tensor(const pipeline::PatchTriplet& t, int first, int count) {
  const auto begin = t.data.begin() + static_cast<std::ptrdiff_t>(first) * pipeline::kPatchVoxels;
  return ad::Tensor(ad::Shape{1, count, pipeline::kPatchSize, pipeline::kPatchSize, pipeline::kPatchSize},
                    std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(count) * pipeline::kPatchVoxels));
}

nlohmann::json loss_json(const std::vector<EpochLoss>& history) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : history) j.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
  return j;
}

void write_state(const TrainState& state, const TrainingConfig& cfg, const TrainOptions& options, bool final) {
  if (options.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(options.checkpoint_dir);
  const ad::Checkpoint ckpt = to_checkpoint(state, cfg);
  ad::write_checkpoint(ckpt, checkpoint_path(options.checkpoint_dir, state.epoch));
  if (final) ad::write_checkpoint(ckpt, options.checkpoint_dir / "final.ckpt");
}

using BatchSource = std::function<std::vector<pipeline::PatchTriplet>(std::size_t first, std::size_t count)>;

// Shared epoch loop over `total` samples served by `source`.
TrainState run_epochs(TrainState state, const TrainingConfig& cfg, const TrainOptions& options, std::size_t total,
                      const std::function<BatchSource(int epoch)>& source_for_epoch) {
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = total / batch;
  if (steps == 0) {
    throw ConfigError("training: " + std::to_string(total) + " samples per epoch cannot fill one batch of " +
                      std::to_string(batch));
  }
  while (state.epoch < cfg.epochs) {
    const int epoch = state.epoch;
    const double lr = learning_rate(epoch, cfg);
    const BatchSource source = source_for_epoch(epoch);
    double sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::vector<pipeline::PatchTriplet> triplets = source(s * batch, batch);
      std::vector<const pipeline::PatchTriplet*> ptrs;
      for (const auto& t : triplets) ptrs.push_back(&t);
      sum += train_batch(state, ptrs, lr, cfg.threads);
    }
    const double loss = sum / static_cast<double>(steps);
    if (!std::isfinite(loss)) throw NumericError("training: non-finite epoch loss at epoch " + std::to_string(epoch + 1));
    state.epoch = epoch + 1;
    state.loss_history.push_back({state.epoch, loss});
    if (options.on_epoch) options.on_epoch(state);
    const bool last = state.epoch == cfg.epochs;
    if (last || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0)) write_state(state, cfg, options, last);
  }
  return state;
}

}  // namespace

void TrainingConfig::validate() const {
  if (input_resolutions_mm.empty()) throw ConfigError("training: input_resolutions_mm is empty");
  if (!(target_resolution_mm > 0.0)) throw ConfigError("training: target_resolution_mm must be positive");
  for (double r : input_resolutions_mm) {
    if (!(r > target_resolution_mm)) {
      throw ConfigError("training: input resolution " + std::to_string(r) + " mm must be coarser than the target " +
                        std::to_string(target_resolution_mm) + " mm");
    }
  }
  if (epochs < 1 || patches_per_subject < 1 || batch_size < 1) {
    throw ConfigError("training: epochs, patches_per_subject and batch_size must be positive");
  }
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("training: lr0 must be finite and non-negative");
  if (lr_half_life_epochs < 1) throw ConfigError("training: lr_half_life_epochs must be positive");
  if (checkpoint_every < 0) throw ConfigError("training: checkpoint_every must be non-negative");
  if (threads < 1) throw ConfigError("training: threads must be positive");
  network.validate();
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"input_resolutions_mm", c.input_resolutions_mm},
          {"target_resolution_mm", c.target_resolution_mm},
          {"epochs", c.epochs},
          {"patches_per_subject", c.patches_per_subject},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"lr_half_life_epochs", c.lr_half_life_epochs},
          {"seed", c.seed},
          {"network", net::to_json(c.network)},
          {"augment", c.augment},
          {"augmentation", pipeline::to_json(c.augmentation)},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainingConfig c;
  try {
    c.input_resolutions_mm = j.value("input_resolutions_mm", c.input_resolutions_mm);
    c.target_resolution_mm = j.value("target_resolution_mm", c.target_resolution_mm);
    c.epochs = j.value("epochs", c.epochs);
    c.patches_per_subject = j.value("patches_per_subject", c.patches_per_subject);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_half_life_epochs = j.value("lr_half_life_epochs", c.lr_half_life_epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("network")) c.network = net::network_config_from_json(j.at("network"));
    if (j.contains("multimodal")) c.network.multimodal = j.at("multimodal").get<bool>();
    if (j.contains("base_channels")) c.network.base_channels = j.at("base_channels").get<int>();
    c.augment = j.value("augment", c.augment);
    if (j.contains("augmentation")) c.augmentation = pipeline::augmentation_from_json(j.at("augmentation"));
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(int epoch, const TrainingConfig& cfg) {
  if (epoch < 0) throw PreconditionError("learning_rate: epoch must be non-negative");
  const int h = cfg.lr_half_life_epochs;
  const double frac = std::exp2(-static_cast<double>(epoch % h) / h);
  return std::ldexp(cfg.lr0 * frac, -(epoch / h));
}

Subject subject_from_phantom(const dti::Phantom& ph) { return {ph.tensors, ph.t1w, ph.mask}; }

Subject resample_subject(const Subject& s, double target_mm) {
  if (s.tensors.channels() != 6 || !same_grid(s.tensors, s.mask)) throw ShapeError("subject: tensors and mask must share a grid");
  const double dti_mm = s.tensors.spacing_mm();
  if (target_mm < dti_mm) throw PreconditionError("subject: target grid is finer than the DTI grid");
  const Dims dims = grid_dims(s.tensors.dims(), dti_mm, target_mm);
  Subject out;
  out.tensors = onto_grid(s.tensors, dims, target_mm).with_kind(VolumeKind::DTI);
  out.t1w = onto_grid(s.t1w, dims, target_mm).with_kind(VolumeKind::T1w);
  if (s.mask.dims() == dims && dti_mm == target_mm) {
    out.mask = s.mask;
  } else {
    const Volume m = resample::resample_to_grid(s.mask.with_kind(VolumeKind::Generic), dims, target_mm);
    std::vector<float> bin(m.voxels());
    const auto src = m.data();
    for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = src[i] >= 0.5f ? 1.0f : 0.0f;
    out.mask = make_mask(dims, target_mm, std::move(bin));
  }
  return out;
}

TrainingData prepare_training_data(std::span<const Subject> subjects, const TrainingConfig& cfg) {
  cfg.validate();
  if (subjects.empty()) throw PreconditionError("training: no subjects");
  std::vector<Subject> grid;
  for (const auto& s : subjects) grid.push_back(resample_subject(s, cfg.target_resolution_mm));
  std::vector<Volume> t1ws, masks;
  for (const auto& s : grid) {
    t1ws.push_back(s.t1w);
    masks.push_back(s.mask);
  }
  TrainingData data;
  data.normalization.t1w = pipeline::compute_t1w_percentiles(t1ws, masks);
  if (!(data.normalization.t1w.lo < data.normalization.t1w.hi)) {
    throw ConfigError("training: T1w percentiles collapse to a single value");
  }
  for (const auto& s : grid) {
    PreparedSubject p;
    p.hr_norm = pipeline::normalize(s.tensors, data.normalization);
    p.t1w_norm = pipeline::normalize(s.t1w, data.normalization);
    p.mask = s.mask;
    for (double r : cfg.input_resolutions_mm) {
      p.lr_norm.push_back(pipeline::normalize(resample::degrade(s.tensors, r), data.normalization));
    }
    p.origins = pipeline::admissible_origins(s.mask);
    if (p.origins.empty()) throw SamplingError("training: a subject has no admissible patch origin");
    data.subjects.push_back(std::move(p));
  }
  return data;
}

std::vector<PatchDraw> make_epoch_plan(const TrainingData& data, const TrainingConfig& cfg, int epoch) {
  std::vector<PatchDraw> plan;
  plan.reserve(data.subjects.size() * static_cast<std::size_t>(cfg.patches_per_subject));
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const auto& subj = data.subjects[s];
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), s));
    std::uniform_int_distribution<std::size_t> pick_origin(0, subj.origins.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_res(0, subj.lr_norm.size() - 1);
    for (int i = 0; i < cfg.patches_per_subject; ++i) {
      PatchDraw d;
      d.subject = s;
      d.origin = subj.origins[pick_origin(rng)];
      d.resolution = pick_res(rng);
      d.augment_seed = rng();
      plan.push_back(d);
    }
  }
  std::mt19937_64 shuffle_rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), 0xA5A5A5A5ULL));
  std::shuffle(plan.begin(), plan.end(), shuffle_rng);
  return plan;
}

pipeline::PatchTriplet materialize(const TrainingData& data, const TrainingConfig& cfg, const PatchDraw& d) {
  const auto& s = data.subjects.at(d.subject);
  pipeline::PatchTriplet t = pipeline::make_triplet(s.hr_norm, s.lr_norm.at(d.resolution), s.t1w_norm, d.origin);
  if (cfg.augment) {
    std::mt19937_64 rng(d.augment_seed);
    pipeline::augment_t1w(t.channel(pipeline::kT1wChannel), cfg.augmentation, rng);
  }
  return t;
}

std::vector<pipeline::PatchTriplet> make_epoch_dataset(const TrainingData& data, const TrainingConfig& cfg, int epoch) {
  std::vector<pipeline::PatchTriplet> out;
  for (const auto& d : make_epoch_plan(data, cfg, epoch)) out.push_back(materialize(data, cfg, d));
  return out;
}

TrainState initial_state(const TrainingConfig& cfg, const pipeline::NormalizationSpec& norm) {
  TrainState s;
  s.params = net::build_model(cfg.network, cfg.seed);
  s.adam = ad::AdamState::for_parameters(s.params.params, cfg.lr0);
  s.normalization = norm;
  return s;
}

ad::Checkpoint to_checkpoint(const TrainState& state, const TrainingConfig& cfg) {
  ad::Checkpoint c;
  c.params = state.params.params;
  c.adam = state.adam;
  c.extra = {{"network", net::to_json(state.params.config)},
             {"training", to_json(cfg)},
             {"normalization", pipeline::to_json(state.normalization)},
             {"epoch", state.epoch},
             {"loss_history", loss_json(state.loss_history)}};
  return c;
}

TrainState state_from_checkpoint(const ad::Checkpoint& ckpt) {
  TrainState s;
  try {
    const net::NetworkConfig cfg = net::network_config_from_json(ckpt.extra.at("network"));
    const net::ModelParams reference = net::build_model(cfg, 0);
    if (reference.params.size() != ckpt.params.size()) throw ConfigError("checkpoint does not match its network config");
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (reference.params[i].name != ckpt.params[i].name || reference.params[i].value.shape != ckpt.params[i].value.shape) {
        throw ConfigError("checkpoint parameter '" + ckpt.params[i].name + "' does not match the network config");
      }
    }
    s.params = net::ModelParams{cfg, ckpt.params};
    s.adam = ckpt.adam;
    s.normalization = pipeline::normalization_from_json(ckpt.extra.at("normalization"));
    s.epoch = ckpt.extra.value("epoch", 0);
    for (const auto& e : ckpt.extra.value("loss_history", nlohmann::json::array())) {
      s.loss_history.push_back({e.at("epoch").get<int>(), e.at("loss").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("extra", e.what());
  }
  return s;
}

TrainingConfig config_from_checkpoint(const ad::Checkpoint& ckpt) {
  if (!ckpt.extra.contains("training")) throw FormatError("training", "checkpoint carries no training config");
  return training_config_from_json(ckpt.extra.at("training"));
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
  return dir / name;
}

double sample_gradient(const net::ModelParams& params, const pipeline::PatchTriplet& triplet,
                       std::vector<std::vector<float>>& grads) {
  pipeline::validate_triplet(triplet);
  ad::Graph g;
  const auto bound = net::bind_parameters(g, params, true);
  const ad::Var lr = g.constant(channels_tensor(triplet, pipeline::kLrChannel, 6));
  std::optional<ad::Var> t1w;
  if (params.config.multimodal) t1w = g.constant(channels_tensor(triplet, pipeline::kT1wChannel, 1));
  const ad::Var pred = net::forward(g, params, bound, lr, t1w);
  const ad::Var loss = ad::l1_loss(g, pred, channels_tensor(triplet, pipeline::kHrChannel, 6));
  g.backward(loss);
  grads.resize(bound.size());
  for (std::size_t i = 0; i < bound.size(); ++i) {
    const auto gr = g.grad(bound[i]);
    if (gr.empty()) {
      grads[i].assign(params.params[i].value.size(), 0.0f);
    } else {
      grads[i].assign(gr.begin(), gr.end());
    }
  }
  return g.value(loss).data[0];
}

double train_batch(TrainState& state, std::span<const pipeline::PatchTriplet* const> batch, double lr, int threads) {
  if (batch.empty()) throw PreconditionError("train_batch: empty batch");
  const std::size_t n = batch.size();
  const std::size_t nparams = state.params.params.size();
  std::vector<std::vector<double>> total(nparams);
  for (std::size_t i = 0; i < nparams; ++i) total[i].assign(state.params.params[i].value.size(), 0.0);
  double loss_sum = 0.0;

  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<std::vector<std::vector<float>>> grads(workers);
  std::vector<double> losses(workers);
  // Chunks of `workers` samples; reduction always runs in sample order.
  for (std::size_t first = 0; first < n; first += workers) {
    const std::size_t count = std::min(workers, n - first);
    if (count == 1) {
      losses[0] = sample_gradient(state.params, *batch[first], grads[0]);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(count);
      for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&, w] {
          try {
            losses[w] = sample_gradient(state.params, *batch[first + w], grads[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (std::size_t w = 0; w < count; ++w) {
      loss_sum += losses[w];
      for (std::size_t i = 0; i < nparams; ++i) {
        const auto& g = grads[w][i];
        auto& t = total[i];
        for (std::size_t j = 0; j < g.size(); ++j) t[j] += g[j];
      }
    }
  }
  const double loss = loss_sum / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("training: non-finite batch loss");
  std::vector<std::vector<float>> mean(nparams);
  for (std::size_t i = 0; i < nparams; ++i) {
    mean[i].resize(total[i].size());
    for (std::size_t j = 0; j < total[i].size(); ++j) mean[i][j] = static_cast<float>(total[i][j] / static_cast<double>(n));
  }
  state.adam.learning_rate = lr;
  ad::adam_step(state.params.params, mean, state.adam);
  return loss;
}

TrainState train(const TrainingData& data, const TrainingConfig& cfg, const TrainOptions& options, std::optional<TrainState> resume) {
  cfg.validate();
  TrainState state = resume ? std::move(*resume) : initial_state(cfg, data.normalization);
  if (state.params.config != cfg.network) throw ConfigError("training: resumed state has a different network config");
  const std::size_t total = data.subjects.size() * static_cast<std::size_t>(cfg.patches_per_subject);
  return run_epochs(std::move(state), cfg, options, total, [&](int epoch) -> BatchSource {
    auto plan = std::make_shared<std::vector<PatchDraw>>(make_epoch_plan(data, cfg, epoch));
    return [&data, &cfg, plan](std::size_t first, std::size_t count) {
      std::vector<pipeline::PatchTriplet> out;
      for (std::size_t i = first; i < first + count; ++i) out.push_back(materialize(data, cfg, (*plan)[i]));
      return out;
    };
  });
}

TrainState train_fixed(std::span<const pipeline::PatchTriplet> triplets, const TrainingConfig& cfg,
                       const pipeline::NormalizationSpec& norm, const TrainOptions& options) {
  cfg.validate();
  for (const auto& t : triplets) pipeline::validate_triplet(t);
  return run_epochs(initial_state(cfg, norm), cfg, options, triplets.size(), [&](int) -> BatchSource {
    return [triplets](std::size_t first, std::size_t count) {
      return std::vector<pipeline::PatchTriplet>(triplets.begin() + static_cast<std::ptrdiff_t>(first),
                                                 triplets.begin() + static_cast<std::ptrdiff_t>(first + count));
    };
  });
}

std::vector<GridEntry> experiment_grid(int test, const TrainingConfig& base) {
  auto variant = [&](std::vector<double> inputs, double target, bool multimodal) {
    TrainingConfig c = base;
    c.input_resolutions_mm = std::move(inputs);
    c.target_resolution_mm = target;
    c.network.multimodal = multimodal;
    return c;
  };
  const std::vector<double> multi{1.5625, 1.875, 2.5, 3.125};
  switch (test) {
    case 1:
    case 2:
      return {{"standard", variant(multi, 1.25, true)},
              {"single_1.5625mm", variant({1.5625}, 1.25, true)},
              {"single_3.125mm", variant({3.125}, 1.25, true)},
              {"multi_dti_only", variant(multi, 1.25, false)}};
    case 3:
      return {{"standard", variant({2.8, 3.0, 3.2, 3.4}, 2.0, true)},
              {"single_rate", variant({3.2}, 2.0, true)},
              {"single_rate_dti_only", variant({3.2}, 2.0, false)}};
    default: throw ConfigError("experiment grid: test must be 1, 2 or 3");
  }
}

std::vector<GridResult> run_experiment_grid(std::span<const GridEntry> grid, std::span<const Subject> subjects,
                                            const std::filesystem::path& out_dir) {
  std::vector<GridResult> results;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& entry : grid) {
    GridResult r;
    r.name = entry.name;
    TrainOptions options;
    if (!out_dir.empty()) options.checkpoint_dir = out_dir / entry.name;
    try {
      const TrainingData data = prepare_training_data(subjects, entry.config);
      r.state = train(data, entry.config, options);
      if (!out_dir.empty()) r.checkpoint = options.checkpoint_dir / "final.ckpt";
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    const std::string cfg_dump = to_json(entry.config).dump();
    nlohmann::json row = {{"name", r.name},
                          {"config", to_json(entry.config)},
                          {"config_sha256", sha256_hex(std::span(reinterpret_cast<const unsigned char*>(cfg_dump.data()), cfg_dump.size()))},
                          {"seed", entry.config.seed},
                          {"checkpoint", r.checkpoint.empty() ? nlohmann::json(nullptr) : nlohmann::json((std::filesystem::path(r.name) / "final.ckpt").generic_string())},
                          {"loss_history", r.state ? loss_json(r.state->loss_history) : nlohmann::json::array()},
                          {"error", r.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.error)}};
    manifest.push_back(row);
    results.push_back(std::move(r));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "grid_manifest.json");
    if (!out) throw IoError("cannot write grid manifest in '" + out_dir.string() + "'");
    out << manifest.dump(2) << '\n';
  }
  return results;
}

}  // namespace iqt::train
