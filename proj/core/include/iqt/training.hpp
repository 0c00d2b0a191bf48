#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iqt/ad/checkpoint.hpp"
#include "iqt/dti/phantom.hpp"
#include "iqt/network.hpp"
#include "iqt/pipeline.hpp"

namespace iqt::train {

struct TrainingConfig {
  std::vector<double> input_resolutions_mm{1.5625, 1.875, 2.5, 3.125};
  double target_resolution_mm = 1.25;
  int epochs = 100;
  int patches_per_subject = 400;
  int batch_size = 40;
  double lr0 = 1e-3;
  int lr_half_life_epochs = 10;
  std::uint64_t seed = 0;
  net::NetworkConfig network;
  bool augment = true;
  pipeline::AugmentationSpec augmentation;
  int checkpoint_every = 10;
  /// Worker threads for per-sample gradients; results do not depend on it.
  int threads = 1;

  bool multimodal() const { return network.multimodal; }
  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& cfg);
/// Missing keys keep their defaults. `multimodal` and `base_channels` may be
/// given at top level as shorthands for the network block.
TrainingConfig training_config_from_json(const nlohmann::json& j);

/// lr0 * 2^(-epoch / half_life), evaluated so that lr(e + half_life) is
/// exactly lr(e) / 2.
double learning_rate(int epoch, const TrainingConfig& cfg);

/// Ground truth tensors and mask on the DTI grid, T1w on its own grid.
struct Subject {
  Volume tensors;
  Volume t1w;
  Volume mask;
};

Subject subject_from_phantom(const dti::Phantom& ph);

/// Brings a subject onto the grid of spacing `target_mm` that spans the same
/// field of view: tensors and T1w by anti-aliased downsampling, the mask by
/// thresholding its interpolation at 0.5.
Subject resample_subject(const Subject& s, double target_mm);

struct PreparedSubject {
  Volume hr_norm;
  Volume t1w_norm;
  Volume mask;
  std::vector<Volume> lr_norm;  // one per input resolution
  std::vector<pipeline::Origin> origins;
};

struct TrainingData {
  std::vector<PreparedSubject> subjects;
  pipeline::NormalizationSpec normalization;
};

/// Resamples subjects to the target grid, fixes T1w percentiles over the
/// training masks, and caches normalized LR inputs per input resolution.
TrainingData prepare_training_data(std::span<const Subject> subjects, const TrainingConfig& cfg);

/// One sampled patch: subject, input resolution, origin, augmentation seed.
struct PatchDraw {
  std::size_t subject = 0;
  std::size_t resolution = 0;
  pipeline::Origin origin{};
  std::uint64_t augment_seed = 0;
};

/// Deterministic in (seed, epoch); shuffled across subjects.
std::vector<PatchDraw> make_epoch_plan(const TrainingData& data, const TrainingConfig& cfg, int epoch);
pipeline::PatchTriplet materialize(const TrainingData& data, const TrainingConfig& cfg, const PatchDraw& draw);
std::vector<pipeline::PatchTriplet> make_epoch_dataset(const TrainingData& data, const TrainingConfig& cfg, int epoch);

struct EpochLoss {
  int epoch = 0;
  double loss = 0.0;
};

struct TrainState {
  net::ModelParams params;
  ad::AdamState adam;
  int epoch = 0;  // completed epochs
  std::vector<EpochLoss> loss_history;
  pipeline::NormalizationSpec normalization;
};

TrainState initial_state(const TrainingConfig& cfg, const pipeline::NormalizationSpec& norm);

ad::Checkpoint to_checkpoint(const TrainState& state, const TrainingConfig& cfg);
TrainState state_from_checkpoint(const ad::Checkpoint& ckpt);
/// Training config stored in a checkpoint.
TrainingConfig config_from_checkpoint(const ad::Checkpoint& ckpt);

struct TrainOptions {
  /// Empty disables checkpoint files.
  std::filesystem::path checkpoint_dir;
  std::function<void(const TrainState&)> on_epoch;
};

/// Checkpoint file for a completed epoch count.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);

/// L1 loss and per-parameter gradients for one triplet (loss on channels 7-12).
double sample_gradient(const net::ModelParams& params, const pipeline::PatchTriplet& triplet,
                       std::vector<std::vector<float>>& grads);

/// One optimizer step on the mean loss of `batch`; returns that loss.
double train_batch(TrainState& state, std::span<const pipeline::PatchTriplet* const> batch, double lr, int threads);

/// Runs epochs state.epoch .. cfg.epochs-1. Checkpoints every
/// cfg.checkpoint_every epochs and after the last one. A non-finite loss
/// throws NumericError; checkpoints already written are kept.
TrainState train(const TrainingData& data, const TrainingConfig& cfg, const TrainOptions& options = {},
                 std::optional<TrainState> resume = std::nullopt);

/// Same loop over a fixed set of triplets (no resampling or augmentation),
/// visited in order each epoch.
TrainState train_fixed(std::span<const pipeline::PatchTriplet> triplets, const TrainingConfig& cfg,
                       const pipeline::NormalizationSpec& norm, const TrainOptions& options = {});

struct GridEntry {
  std::string name;
  TrainingConfig config;
};

struct GridResult {
  std::string name;
  std::optional<TrainState> state;
  std::filesystem::path checkpoint;
  std::string error;
};

/// Rows of the experiment table for test 1, 2 or 3, derived from `base`
/// (epochs, patch counts, widths and seed are taken from it).
std::vector<GridEntry> experiment_grid(int test, const TrainingConfig& base);

/// Trains every entry; a failing entry is recorded and the grid continues.
/// When `out_dir` is non-empty each entry checkpoints under out_dir/<name>
/// and a grid_manifest.json binds names to configs, checkpoints and losses.
std::vector<GridResult> run_experiment_grid(std::span<const GridEntry> grid, std::span<const Subject> subjects,
                                            const std::filesystem::path& out_dir);

}  // namespace iqt::train
