#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "iqt/ad/adam.hpp"

namespace iqt::ad {

/// Parameters, optimizer state and an opaque JSON block owned by the caller
/// (network config, normalization, training progress).
struct Checkpoint {
  ParameterSet params;
  AdamState adam;
  nlohmann::json extra = nlohmann::json::object();
};

/// Single file: a one-line JSON manifest (layer names and shapes, optimizer
/// hyperparameters, step count, `extra`) followed by little-endian float32
/// payloads: all parameter values in manifest order, then all first moments,
/// then all second moments.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace iqt::ad
