#pragma once

#include "iqt/network.hpp"
#include "iqt/pipeline.hpp"
#include "iqt/volume.hpp"

namespace iqt::eval {

/// Tiles the volume into 16^3 patches with 4-voxel overlap, runs the model on
/// each normalized patch, averages overlaps and maps back to mm^2/s.
/// `lr_dti` must already sit on the target grid; `t1w` (on the same grid) is
/// required exactly when the model is multimodal.
Volume infer_volume(const net::ModelParams& params, const Volume& lr_dti, const Volume* t1w,
                    const pipeline::NormalizationSpec& norm);

/// Linear interpolation of a native low-resolution tensor field onto the
/// grid of spacing `target_spacing_mm`.
Volume linear_baseline(const Volume& lr_native, double target_spacing_mm);
/// Same, onto explicit target dims.
Volume linear_baseline(const Volume& lr_native, Dims target_dims, double target_spacing_mm);

}  // namespace iqt::eval
