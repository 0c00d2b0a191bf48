#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "iqt/ad/graph.hpp"
#include "iqt/error.hpp"

namespace iqt::ad {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatRM>;
using CMapMat = Eigen::Map<const MatRM>;

struct Vol5 {
  int n, c, d, h, w;
  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
};

Vol5 as5(const Shape& s, const char* op) {
  if (s.size() != 5) throw ShapeError(std::string(op) + ": expected a 5D tensor, got " + shape_string(s));
  return {s[0], s[1], s[2], s[3], s[4]};
}

// Unfolds one sample [C, D, H, W] into columns [C*k^3, D*H*W] with zero padding k/2.
void im2col(const float* src, int channels, int d, int h, int w, int k, float* col) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t vol = plane * d;
  float* row = col;
  for (int c = 0; c < channels; ++c) {
    const float* s = src + c * vol;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, row += vol) {
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(w, w + pad - kx);
          for (int z = 0; z < d; ++z) {
            const int iz = z + kz - pad;
            float* dst_plane = row + z * plane;
            if (iz < 0 || iz >= d) {
              std::fill(dst_plane, dst_plane + plane, 0.0f);
              continue;
            }
            for (int y = 0; y < h; ++y) {
              const int iy = y + ky - pad;
              float* dst = dst_plane + y * w;
              if (iy < 0 || iy >= h) {
                std::fill(dst, dst + w, 0.0f);
                continue;
              }
              const float* srow = s + iz * plane + iy * w + (x0 + kx - pad);
              std::fill(dst, dst + x0, 0.0f);
              std::copy(srow, srow + (x1 - x0), dst + x0);
              std::fill(dst + x1, dst + w, 0.0f);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the sample.
void col2im_add(const float* col, int channels, int d, int h, int w, int k, float* dst) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t vol = plane * d;
  const float* row = col;
  for (int c = 0; c < channels; ++c) {
    float* s = dst + c * vol;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, row += vol) {
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(w, w + pad - kx);
          for (int z = 0; z < d; ++z) {
            const int iz = z + kz - pad;
            if (iz < 0 || iz >= d) continue;
            for (int y = 0; y < h; ++y) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const float* src = row + z * plane + y * w + x0;
              float* out = s + iz * plane + iy * w + (x0 + kx - pad);
              for (int x = 0; x < x1 - x0; ++x) out[x] += src[x];
            }
          }
        }
      }
    }
  }
}

// Half-pixel 2x linear upsampling weights for output index o on an axis of length n.
struct Tap {
  int i0, i1;
  float w0, w1;
};

std::vector<Tap> upsample_taps(int n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    double s = (o + 0.5) * 0.5 - 0.5;
    if (s < 0.0) s = 0.0;
    const int i0 = std::min(static_cast<int>(std::floor(s)), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = s - i0;
    taps[o] = Tap{i0, i1, static_cast<float>(1.0 - f), static_cast<float>(f)};
  }
  return taps;
}

// Tensor viewed as [outer, n, inner] -> [outer, 2n, inner].
void upsample_axis(const float* src, float* dst, std::size_t outer, int n, std::size_t inner) {
  const auto taps = upsample_taps(n);
  for (std::size_t o = 0; o < outer; ++o) {
    const float* s = src + o * n * inner;
    float* t = dst + o * 2 * n * inner;
    for (int j = 0; j < 2 * n; ++j) {
      const Tap& tp = taps[j];
      const float* a = s + tp.i0 * inner;
      const float* b = s + tp.i1 * inner;
      float* out = t + j * inner;
      for (std::size_t i = 0; i < inner; ++i) out[i] = tp.w0 * a[i] + tp.w1 * b[i];
    }
  }
}

// Adjoint of upsample_axis; accumulates into dst ([outer, n, inner]).
void upsample_axis_adjoint(const float* grad, float* dst, std::size_t outer, int n, std::size_t inner) {
  const auto taps = upsample_taps(n);
  for (std::size_t o = 0; o < outer; ++o) {
    const float* g = grad + o * 2 * n * inner;
    float* t = dst + o * n * inner;
    for (int j = 0; j < 2 * n; ++j) {
      const Tap& tp = taps[j];
      const float* gi = g + j * inner;
      float* a = t + tp.i0 * inner;
      float* b = t + tp.i1 * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += tp.w0 * gi[i];
        b[i] += tp.w1 * gi[i];
      }
    }
  }
}

}  // namespace

Var conv3d(Graph& g, Var input, Var kernel, Var bias) {
  const Vol5 in = as5(g.shape(input), "conv3d");
  const Shape& ks = g.shape(kernel);
  if (ks.size() != 5 || ks[2] != ks[3] || ks[3] != ks[4] || ks[2] % 2 == 0) {
    throw ShapeError("conv3d: kernel must be [C_out, C_in, k, k, k] with odd k, got " + shape_string(ks));
  }
  if (ks[1] != in.c) {
    throw ShapeError("conv3d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " + std::to_string(in.c));
  }
  const int cout = ks[0];
  const int k = ks[2];
  if (g.shape(bias) != Shape{cout}) {
    throw ShapeError("conv3d: bias must have shape (" + std::to_string(cout) + "), got " + shape_string(g.shape(bias)));
  }
  const std::size_t vox = in.spatial();
  const int rows = in.c * k * k * k;

  Tensor out(Shape{in.n, cout, in.d, in.h, in.w});
  {
    const Tensor& x = g.value(input);
    CMapMat wmat(g.value(kernel).data.data(), cout, rows);
    Eigen::Map<const Eigen::VectorXf> b(g.value(bias).data.data(), cout);
    std::vector<float> col(k == 1 ? 0 : static_cast<std::size_t>(rows) * vox);
    for (int n = 0; n < in.n; ++n) {
      const float* xs = x.data.data() + static_cast<std::size_t>(n) * in.c * vox;
      const float* colp = xs;
      if (k != 1) {
        im2col(xs, in.c, in.d, in.h, in.w, k, col.data());
        colp = col.data();
      }
      MapMat o(out.data.data() + static_cast<std::size_t>(n) * cout * vox, cout, static_cast<Eigen::Index>(vox));
      o.noalias() = wmat * CMapMat(colp, rows, static_cast<Eigen::Index>(vox));
      o.colwise() += b;
    }
  }

  return g.record(std::move(out), {input, kernel, bias}, [input, kernel, bias, in, cout, k, rows, vox](Graph& gr, Var self) {
    const auto dout = gr.grad(self);
    const Tensor& x = gr.value(input);
    const bool need_x = gr.requires_grad(input);
    const bool need_w = gr.requires_grad(kernel);
    const bool need_b = gr.requires_grad(bias);
    CMapMat wmat(gr.value(kernel).data.data(), cout, rows);
    std::vector<float> col(k == 1 ? 0 : static_cast<std::size_t>(rows) * vox);
    std::vector<float> dcol(need_x && k != 1 ? static_cast<std::size_t>(rows) * vox : 0);
    for (int n = 0; n < in.n; ++n) {
      CMapMat go(dout.data() + static_cast<std::size_t>(n) * cout * vox, cout, static_cast<Eigen::Index>(vox));
      const float* xs = x.data.data() + static_cast<std::size_t>(n) * in.c * vox;
      if (need_w) {
        const float* colp = xs;
        if (k != 1) {
          im2col(xs, in.c, in.d, in.h, in.w, k, col.data());
          colp = col.data();
        }
        MapMat gw(gr.grad_buffer(kernel).data(), cout, rows);
        gw.noalias() += go * CMapMat(colp, rows, static_cast<Eigen::Index>(vox)).transpose();
      }
      if (need_b) {
        auto gb = gr.grad_buffer(bias);
        const float* gp = dout.data() + static_cast<std::size_t>(n) * cout * vox;
        for (int o = 0; o < cout; ++o) {
          double s = 0.0;
          for (std::size_t i = 0; i < vox; ++i) s += gp[static_cast<std::size_t>(o) * vox + i];
          gb[o] += static_cast<float>(s);
        }
      }
      if (need_x) {
        float* gx = gr.grad_buffer(input).data() + static_cast<std::size_t>(n) * in.c * vox;
        if (k == 1) {
          MapMat gxm(gx, rows, static_cast<Eigen::Index>(vox));
          gxm.noalias() += wmat.transpose() * go;
        } else {
          MapMat dc(dcol.data(), rows, static_cast<Eigen::Index>(vox));
          dc.noalias() = wmat.transpose() * go;
          col2im_add(dcol.data(), in.c, in.d, in.h, in.w, k, gx);
        }
      }
    }
  });
}

Var relu(Graph& g, Var input) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
  return g.record(std::move(out), {input}, [input](Graph& gr, Var self) {
    const auto go = gr.grad(self);
    const auto& xv = gr.value(input).data;
    auto gx = gr.grad_buffer(input);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0f) gx[i] += go[i];
    }
  });
}

Var maxpool2(Graph& g, Var input) {
  const Vol5 in = as5(g.shape(input), "maxpool2");
  if (in.d % 2 || in.h % 2 || in.w % 2) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_string(g.shape(input)));
  }
  const int od = in.d / 2, oh = in.h / 2, ow = in.w / 2;
  Tensor out(Shape{in.n, in.c, od, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const Tensor& x = g.value(input);
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  std::size_t o = 0;
  for (int nc = 0; nc < in.n * in.c; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * in.spatial();
    for (int z = 0; z < od; ++z) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = base + (2 * z) * plane + (2 * y) * in.w + 2 * xx;
          float best_v = x.data[best];
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx = base + (2 * z + dz) * plane + (2 * y + dy) * in.w + 2 * xx + dx;
                if (x.data[idx] > best_v) {
                  best_v = x.data[idx];
                  best = idx;
                }
              }
            }
          }
          out.data[o] = best_v;
          (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return g.record(std::move(out), {input}, [input, argmax](Graph& gr, Var self) {
    const auto go = gr.grad(self);
    auto gx = gr.grad_buffer(input);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
  });
}

Var upsample2_trilinear(Graph& g, Var input) {
  const Vol5 in = as5(g.shape(input), "upsample2_trilinear");
  const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
  const Tensor& x = g.value(input);
  // W, then H, then D.
  std::vector<float> t1(nc * in.d * in.h * 2 * in.w);
  upsample_axis(x.data.data(), t1.data(), nc * in.d * in.h, in.w, 1);
  std::vector<float> t2(nc * in.d * 2 * in.h * 2 * in.w);
  upsample_axis(t1.data(), t2.data(), nc * in.d, in.h, static_cast<std::size_t>(2) * in.w);
  Tensor out(Shape{in.n, in.c, 2 * in.d, 2 * in.h, 2 * in.w});
  upsample_axis(t2.data(), out.data.data(), nc, in.d, static_cast<std::size_t>(4) * in.h * in.w);

  return g.record(std::move(out), {input}, [input, in, nc](Graph& gr, Var self) {
    const auto go = gr.grad(self);
    std::vector<float> a2(nc * in.d * 2 * in.h * 2 * in.w, 0.0f);
    upsample_axis_adjoint(go.data(), a2.data(), nc, in.d, static_cast<std::size_t>(4) * in.h * in.w);
    std::vector<float> a1(nc * in.d * in.h * 2 * in.w, 0.0f);
    upsample_axis_adjoint(a2.data(), a1.data(), nc * in.d, in.h, static_cast<std::size_t>(2) * in.w);
    auto gx = gr.grad_buffer(input);
    upsample_axis_adjoint(a1.data(), gx.data(), nc * in.d * in.h, in.w, 1);
  });
}

Var average_fuse(Graph& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) {
    throw ShapeError("average_fuse: shape mismatch " + shape_string(g.shape(a)) + " vs " + shape_string(g.shape(b)));
  }
  const auto& av = g.value(a).data;
  const auto& bv = g.value(b).data;
  Tensor out(g.shape(a));
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = 0.5f * (av[i] + bv[i]);
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, Var self) {
    const auto go = gr.grad(self);
    for (Var p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto gp = gr.grad_buffer(p);
      for (std::size_t i = 0; i < go.size(); ++i) gp[i] += 0.5f * go[i];
    }
  });
}

Var concat_channels(Graph& g, std::initializer_list<Var> parts) {
  return concat_channels(g, std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_channels(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Vol5 first = as5(g.shape(parts[0]), "concat_channels");
  std::vector<int> channels;
  int total = 0;
  for (Var p : parts) {
    const Vol5 s = as5(g.shape(p), "concat_channels");
    if (s.n != first.n || s.d != first.d || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + shape_string(g.shape(p)) + " vs " + shape_string(g.shape(parts[0])));
    }
    channels.push_back(s.c);
    total += s.c;
  }
  const std::size_t vox = first.spatial();
  Tensor out(Shape{first.n, total, first.d, first.h, first.w});
  for (int n = 0; n < first.n; ++n) {
    float* dst = out.data.data() + static_cast<std::size_t>(n) * total * vox;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t len = static_cast<std::size_t>(channels[i]) * vox;
      const float* src = g.value(parts[i]).data.data() + static_cast<std::size_t>(n) * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [saved, channels, total, vox, batch = first.n](Graph& gr, Var self) {
    const auto go = gr.grad(self);
    for (int n = 0; n < batch; ++n) {
      const float* src = go.data() + static_cast<std::size_t>(n) * total * vox;
      for (std::size_t i = 0; i < saved.size(); ++i) {
        const std::size_t len = static_cast<std::size_t>(channels[i]) * vox;
        if (gr.requires_grad(saved[i])) {
          float* dst = gr.grad_buffer(saved[i]).data() + static_cast<std::size_t>(n) * len;
          for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
        }
        src += len;
      }
    }
  });
}

Var l1_loss(Graph& g, Var pred, const Tensor& target) {
  if (g.shape(pred) != target.shape) {
    throw ShapeError("l1_loss: shape mismatch " + shape_string(g.shape(pred)) + " vs " + shape_string(target.shape));
  }
  const auto& p = g.value(pred).data;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(static_cast<double>(p[i]) - target.data[i]);
  Tensor out(Shape{1}, static_cast<float>(sum / static_cast<double>(p.size())));
  auto tgt = std::make_shared<const std::vector<float>>(target.data);
  return g.record(std::move(out), {pred}, [pred, tgt](Graph& gr, Var self) {
    const float scale = gr.grad(self)[0] / static_cast<float>(tgt->size());
    const auto& pv = gr.value(pred).data;
    auto gp = gr.grad_buffer(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const float d = pv[i] - (*tgt)[i];
      if (d > 0.0f) {
        gp[i] += scale;
      } else if (d < 0.0f) {
        gp[i] -= scale;
      }
    }
  });
}

}  // namespace iqt::ad
