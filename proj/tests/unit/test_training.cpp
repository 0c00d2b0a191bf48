#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "iqt/error.hpp"
#include "iqt/training.hpp"

namespace {

using namespace iqt;
using namespace iqt::train;
namespace fs = std::filesystem;

std::vector<Subject> small_subjects(int n, std::uint64_t seed) {
  dti::PhantomSpec spec;
  spec.dims = {32, 32, 32};
  std::vector<Subject> out;
  for (int i = 0; i < n; ++i) out.push_back(subject_from_phantom(dti::generate_phantom(spec, seed + i)));
  return out;
}

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.input_resolutions_mm = {1.5625, 3.125};
  c.epochs = 3;
  c.patches_per_subject = 6;
  c.batch_size = 4;
  c.network.base_channels = 2;
  c.checkpoint_every = 1;
  c.seed = 17;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("iqt_train_" + name);
  fs::remove_all(d);
  return d;
}

TEST(Schedule, HalvesEveryHalfLife) {
  TrainingConfig c;
  EXPECT_EQ(learning_rate(0, c), 1e-3);
  EXPECT_EQ(learning_rate(10, c), 5e-4);
  EXPECT_EQ(learning_rate(20, c), 2.5e-4);
  EXPECT_EQ(learning_rate(30, c), 1.25e-4);
  EXPECT_NEAR(learning_rate(5, c), 1e-3 / std::sqrt(2.0), 1e-18);
  EXPECT_LT(learning_rate(11, c), learning_rate(10, c));
}

TEST(Config, JsonRoundTripAndShorthands) {
  TrainingConfig c = tiny_config();
  c.threads = 4;
  const TrainingConfig r = training_config_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));
  EXPECT_EQ(r.threads, 1);
  const TrainingConfig s = training_config_from_json({{"multimodal", false}, {"base_channels", 8}, {"threads", 2}});
  EXPECT_FALSE(s.multimodal());
  EXPECT_EQ(s.network.base_channels, 8);
  EXPECT_EQ(s.threads, 2);
  EXPECT_EQ(s.input_resolutions_mm, (std::vector<double>{1.5625, 1.875, 2.5, 3.125}));
  EXPECT_EQ(s.epochs, 100);
  EXPECT_EQ(s.batch_size, 40);
  EXPECT_EQ(s.patches_per_subject, 400);
  TrainingConfig bad = tiny_config();
  bad.input_resolutions_mm = {1.0};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Data, SubjectsResampleToTargetGrid) {
  const auto subjects = small_subjects(1, 3);
  const Subject s = resample_subject(subjects[0], 2.0);
  EXPECT_EQ(s.tensors.dims(), (Dims{20, 20, 20}));
  EXPECT_EQ(s.t1w.dims(), (Dims{20, 20, 20}));
  EXPECT_EQ(s.mask.kind(), VolumeKind::Mask);
  EXPECT_DOUBLE_EQ(s.tensors.spacing_mm(), 2.0);
  const Subject same = resample_subject(subjects[0], 1.25);
  EXPECT_EQ(same.tensors, subjects[0].tensors);
  EXPECT_EQ(same.t1w.dims(), subjects[0].tensors.dims());
}

TEST(Data, EpochPlanIsDeterministicAndShuffled) {
  const auto subjects = small_subjects(2, 5);
  const TrainingConfig c = tiny_config();
  const TrainingData data = prepare_training_data(subjects, c);
  ASSERT_EQ(data.subjects.size(), 2u);
  EXPECT_EQ(data.subjects[0].lr_norm.size(), 2u);
  EXPECT_LT(data.normalization.t1w.lo, data.normalization.t1w.hi);
  const auto a = make_epoch_plan(data, c, 0);
  const auto b = make_epoch_plan(data, c, 0);
  const auto e1 = make_epoch_plan(data, c, 1);
  ASSERT_EQ(a.size(), 12u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].origin, b[i].origin);
    EXPECT_EQ(a[i].augment_seed, b[i].augment_seed);
    differs |= a[i].origin != e1[i].origin;
  }
  EXPECT_TRUE(differs);
  bool mixed = false;
  for (std::size_t i = 1; i < a.size(); ++i) mixed |= a[i].subject != a[0].subject;
  EXPECT_TRUE(mixed);
  for (const auto& t : make_epoch_dataset(data, c, 0)) {
    EXPECT_EQ(t.data.size(), static_cast<std::size_t>(16 * 16 * 16 * 13));
  }
}

TEST(Train, CheckpointsAndResumeMatchUninterruptedRun) {
  const auto subjects = small_subjects(1, 8);
  const TrainingConfig c = tiny_config();
  const TrainingData data = prepare_training_data(subjects, c);
  const fs::path dir = fresh_dir("full");
  const TrainState full = iqt::train::train(data, c, {dir, {}});
  ASSERT_EQ(full.loss_history.size(), 3u);
  for (int e = 1; e <= 3; ++e) EXPECT_TRUE(fs::exists(checkpoint_path(dir, e)));
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));

  const TrainState resumed = iqt::train::train(data, c, {}, state_from_checkpoint(ad::read_checkpoint(checkpoint_path(dir, 1))));
  ASSERT_EQ(resumed.loss_history.size(), 3u);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(resumed.loss_history[e].loss, full.loss_history[e].loss);
  for (std::size_t i = 0; i < full.params.params.size(); ++i) {
    EXPECT_EQ(resumed.params.params[i].value.data, full.params.params[i].value.data);
  }
  const TrainState reloaded = state_from_checkpoint(ad::read_checkpoint(dir / "final.ckpt"));
  EXPECT_EQ(reloaded.epoch, 3);
  EXPECT_EQ(reloaded.normalization, full.normalization);
  EXPECT_EQ(to_json(config_from_checkpoint(ad::read_checkpoint(dir / "final.ckpt"))), to_json(c));
  fs::remove_all(dir);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  const auto subjects = small_subjects(1, 9);
  TrainingConfig c = tiny_config();
  c.epochs = 1;
  const TrainingData data = prepare_training_data(subjects, c);
  const TrainState one = iqt::train::train(data, c);
  c.threads = 3;
  const TrainState three = iqt::train::train(data, c);
  EXPECT_EQ(one.loss_history[0].loss, three.loss_history[0].loss);
  for (std::size_t i = 0; i < one.params.params.size(); ++i) {
    EXPECT_EQ(one.params.params[i].value.data, three.params.params[i].value.data);
  }
}

TEST(Train, MismatchedResumeIsRejected) {
  const auto subjects = small_subjects(1, 10);
  TrainingConfig c = tiny_config();
  c.epochs = 1;
  const TrainingData data = prepare_training_data(subjects, c);
  TrainState s = iqt::train::train(data, c);
  c.network.multimodal = false;
  EXPECT_THROW(iqt::train::train(data, c, {}, s), ConfigError);
  TrainingConfig too_big = tiny_config();
  too_big.batch_size = 100;
  EXPECT_THROW(iqt::train::train(data, too_big), ConfigError);
}

TEST(Train, NonFiniteInputAbortsWithNumericError) {
  TrainingConfig c = tiny_config();
  TrainState s = initial_state(c, {});
  pipeline::PatchTriplet t;
  t.data.assign(16 * 16 * 16 * 13, 0.5f);
  t.data[10] = NAN;
  const pipeline::PatchTriplet* batch[] = {&t};
  const auto before = s.params.params[0].value.data;
  EXPECT_THROW(train_batch(s, batch, 1e-3, 1), NumericError);
  EXPECT_EQ(s.params.params[0].value.data, before);
}

TEST(Train, FixedTripletsReduceLoss) {
  const auto subjects = small_subjects(1, 12);
  TrainingConfig c = tiny_config();
  c.epochs = 8;
  c.lr0 = 3e-3;
  c.checkpoint_every = 0;
  const TrainingData data = prepare_training_data(subjects, c);
  const auto triplets = make_epoch_dataset(data, c, 0);
  const TrainState s = train_fixed(triplets, c, data.normalization);
  EXPECT_LT(s.loss_history.back().loss, s.loss_history.front().loss);
}

TEST(Grid, RowsMirrorTheExperimentTable) {
  const TrainingConfig base = tiny_config();
  const auto g1 = experiment_grid(1, base);
  ASSERT_EQ(g1.size(), 4u);
  EXPECT_EQ(g1[0].name, "standard");
  EXPECT_EQ(g1[0].config.input_resolutions_mm, (std::vector<double>{1.5625, 1.875, 2.5, 3.125}));
  EXPECT_TRUE(g1[0].config.multimodal());
  EXPECT_EQ(g1[1].config.input_resolutions_mm, (std::vector<double>{1.5625}));
  EXPECT_EQ(g1[2].config.input_resolutions_mm, (std::vector<double>{3.125}));
  EXPECT_FALSE(g1[3].config.multimodal());
  const auto g3 = experiment_grid(3, base);
  ASSERT_EQ(g3.size(), 3u);
  EXPECT_DOUBLE_EQ(g3[0].config.target_resolution_mm, 2.0);
  EXPECT_EQ(g3[1].config.input_resolutions_mm, (std::vector<double>{3.2}));
  EXPECT_FALSE(g3[2].config.multimodal());
  for (const auto& e : g1) EXPECT_EQ(e.config.epochs, base.epochs);
  EXPECT_THROW(experiment_grid(4, base), ConfigError);
}

TEST(Grid, FailingEntryIsRecordedAndGridContinues) {
  const auto subjects = small_subjects(1, 13);
  TrainingConfig ok = tiny_config();
  ok.epochs = 1;
  TrainingConfig broken = ok;
  broken.batch_size = 1000;
  const std::vector<GridEntry> grid{{"broken", broken}, {"ok", ok}};
  const fs::path dir = fresh_dir("grid");
  const auto results = run_experiment_grid(grid, subjects, dir);
  ASSERT_EQ(results.size(), 2u);
  EXPECT_FALSE(results[0].state.has_value());
  EXPECT_FALSE(results[0].error.empty());
  EXPECT_TRUE(results[1].state.has_value());
  EXPECT_TRUE(fs::exists(dir / "ok" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "grid_manifest.json"));
  fs::remove_all(dir);
}

}  // namespace
