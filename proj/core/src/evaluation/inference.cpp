#include "iqt/evaluation/inference.hpp"

#include "iqt/error.hpp"
#include "iqt/resample.hpp"

namespace iqt::eval {

Volume infer_volume(const net::ModelParams& params, const Volume& lr_dti, const Volume* t1w, const pipeline::NormalizationSpec& norm) {
  if (lr_dti.channels() != 6) throw ShapeError("infer_volume: low-resolution input must be a 6-channel tensor field");
  const bool multimodal = params.config.multimodal;
  if (multimodal && t1w == nullptr) throw PreconditionError("infer_volume: multimodal model requires a T1w volume");
  if (multimodal && (!same_grid(*t1w, lr_dti) || t1w->channels() != 1)) {
    throw ShapeError("infer_volume: T1w and DTI input must share the target grid");
  }
  const std::vector<pipeline::Origin> origins = pipeline::tile_for_inference(lr_dti.dims());
  const Volume lr = pipeline::normalize(lr_dti.with_kind(VolumeKind::DTI), norm);
  std::optional<Volume> t1;
  if (multimodal) t1 = pipeline::normalize(t1w->with_kind(VolumeKind::T1w), norm);

  pipeline::Blender blender(lr_dti.dims(), 6);
  const ad::Shape lr_shape{1, 6, pipeline::kPatchSize, pipeline::kPatchSize, pipeline::kPatchSize};
  const ad::Shape t1_shape{1, 1, pipeline::kPatchSize, pipeline::kPatchSize, pipeline::kPatchSize};
  for (const auto& o : origins) {
    const ad::Tensor lr_patch(lr_shape, pipeline::cut_patch(lr, o));
    ad::Tensor t1_patch;
    if (t1) t1_patch = ad::Tensor(t1_shape, pipeline::cut_patch(*t1, o));
    const ad::Tensor out = net::predict(params, lr_patch, t1 ? &t1_patch : nullptr);
    blender.add(o, out.data);
  }
  const Volume blended = blender.finish(lr_dti.spacing_mm(), VolumeKind::DTI);
  return pipeline::denormalize(blended, norm);
}

Volume linear_baseline(const Volume& lr_native, double target_spacing_mm) {
  if (target_spacing_mm > lr_native.spacing_mm()) throw PreconditionError("linear_baseline: target spacing exceeds source");
  return resample::linear_resample(lr_native, target_spacing_mm);
}

Volume linear_baseline(const Volume& lr_native, Dims target_dims, double target_spacing_mm) {
  if (target_spacing_mm > lr_native.spacing_mm()) throw PreconditionError("linear_baseline: target spacing exceeds source");
  return resample::resample_to_grid(lr_native, target_dims, target_spacing_mm);
}

}  // namespace iqt::eval
