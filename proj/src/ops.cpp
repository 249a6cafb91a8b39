#include "parsec/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace parsec::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                " tensor, got shape " + shape_string(t.shape));
}

// Gathers one (batch, group) input slice into a (Cig*kh*kw) x (Ho*Wo) matrix.
// `in` points at the slice's first channel; out-of-bounds taps read as zero.
void im2col(const double* in, int H, int W, int Cig, int kh, int kw, const Conv2dSpec& s, int Ho,
            int Wo, Eigen::MatrixXd& col) {
  for (int ci = 0; ci < Cig; ++ci) {
    const double* chan = in + static_cast<std::ptrdiff_t>(ci) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ci * kh + ky) * kw + kx;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * s.stride - s.padding + ky * s.dilation;
          double* dst = col.data() + row + static_cast<std::ptrdiff_t>(oy) * Wo * col.rows();
          if (y < 0 || y >= H) {
            for (int ox = 0; ox < Wo; ++ox) dst[static_cast<std::ptrdiff_t>(ox) * col.rows()] = 0.0;
            continue;
          }
          for (int ox = 0; ox < Wo; ++ox) {
            const int x = ox * s.stride - s.padding + kx * s.dilation;
            dst[static_cast<std::ptrdiff_t>(ox) * col.rows()] =
                (x >= 0 && x < W) ? chan[y * W + x] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a (Cig*kh*kw) x (Ho*Wo) gradient matrix back onto the input slice.
void col2im_add(const Eigen::MatrixXd& col, int H, int W, int Cig, int kh, int kw,
                const Conv2dSpec& s, int Ho, int Wo, double* din) {
  for (int ci = 0; ci < Cig; ++ci) {
    double* chan = din + static_cast<std::ptrdiff_t>(ci) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ci * kh + ky) * kw + kx;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * s.stride - s.padding + ky * s.dilation;
          if (y < 0 || y >= H) continue;
          const double* src = col.data() + row + static_cast<std::ptrdiff_t>(oy) * Wo * col.rows();
          for (int ox = 0; ox < Wo; ++ox) {
            const int x = ox * s.stride - s.padding + kx * s.dilation;
            if (x >= 0 && x < W) chan[y * W + x] += src[static_cast<std::ptrdiff_t>(ox) * col.rows()];
          }
        }
      }
    }
  }
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding, int dilation) {
  const int eff = dilation * (kernel - 1) + 1;
  const int out = (in + 2 * padding - eff) / stride + 1;
  if (stride < 1) throw std::invalid_argument("conv_out_extent: stride must be >= 1");
  if (in + 2 * padding < eff || out < 1)
    throw std::invalid_argument("conv_out_extent: kernel " + std::to_string(kernel) + " (dilation " +
                                std::to_string(dilation) + ") does not fit input extent " +
                                std::to_string(in) + " with padding " + std::to_string(padding));
  return out;
}

NodeId conv2d(Graph& g, NodeId input, NodeId weight, NodeId bias, const Conv2dSpec& spec) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), Cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (spec.groups < 1 || Ci % spec.groups != 0 || Co % spec.groups != 0)
    throw std::invalid_argument("conv2d: groups " + std::to_string(spec.groups) +
                                " must divide input channels " + std::to_string(Ci) +
                                " and output channels " + std::to_string(Co));
  if (Cig != Ci / spec.groups)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(Cig) +
                                " channels per group but input provides " +
                                std::to_string(Ci / spec.groups));
  const int Ho = conv_out_extent(H, kh, spec.stride, spec.padding, spec.dilation);
  const int Wo = conv_out_extent(W, kw, spec.stride, spec.padding, spec.dilation);
  const int Cog = Co / spec.groups;
  const int K = Cig * kh * kw;
  const int S = Ho * Wo;
  if (bias != kNoNode && (g.value(bias).rank() != 1 || g.value(bias).dim(0) != Co))
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(Co) + ")");

  Tensor out = Tensor::zeros({B, Co, Ho, Wo});
  Eigen::MatrixXd col(K, S);
  for (int b = 0; b < B; ++b) {
    for (int grp = 0; grp < spec.groups; ++grp) {
      const double* in_slice = x.data.data() + (static_cast<std::ptrdiff_t>(b) * Ci + grp * Cig) * H * W;
      im2col(in_slice, H, W, Cig, kh, kw, spec, Ho, Wo, col);
      MapRowC w_map(w.data.data() + static_cast<std::ptrdiff_t>(grp) * Cog * K, Cog, K);
      MapRow out_map(out.data.data() + (static_cast<std::ptrdiff_t>(b) * Co + grp * Cog) * S, Cog, S);
      out_map.noalias() = w_map * col;
    }
  }
  if (bias != kNoNode) {
    const Tensor& bv = g.value(bias);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < Co; ++c)
        out.data.segment((static_cast<std::ptrdiff_t>(b) * Co + c) * S, S) += bv.data(c);
  }

  std::vector<NodeId> ins{input, weight};
  if (bias != kNoNode) ins.push_back(bias);
  return g.record(std::move(out), std::move(ins),
                  [input, weight, bias, spec](Graph& gg, NodeId self) {
                    const Tensor& x = gg.value(input);
                    const Tensor& w = gg.value(weight);
                    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
                    const int Co = w.dim(0), Cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
                    const int Cog = Co / spec.groups;
                    const int K = Cig * kh * kw;
                    const int Ho = gg.value(self).dim(2), Wo = gg.value(self).dim(3);
                    const int S = Ho * Wo;
                    const Tensor& dout = gg.grad(self);
                    const bool need_dx = gg.requires_grad(input);
                    const bool need_dw = gg.requires_grad(weight);
                    Eigen::MatrixXd col(K, S), dcol(K, S);
                    for (int b = 0; b < B; ++b) {
                      for (int grp = 0; grp < spec.groups; ++grp) {
                        const std::ptrdiff_t in_off = (static_cast<std::ptrdiff_t>(b) * Ci + grp * Cig) * H * W;
                        MapRowC w_map(w.data.data() + static_cast<std::ptrdiff_t>(grp) * Cog * K, Cog, K);
                        MapRowC dout_map(dout.data.data() + (static_cast<std::ptrdiff_t>(b) * Co + grp * Cog) * S, Cog, S);
                        if (need_dw) {
                          im2col(x.data.data() + in_off, H, W, Cig, kh, kw, spec, Ho, Wo, col);
                          MapRow dw_map(gg.grad(weight).data.data() + static_cast<std::ptrdiff_t>(grp) * Cog * K, Cog, K);
                          dw_map.noalias() += dout_map * col.transpose();
                        }
                        if (need_dx) {
                          dcol.noalias() = w_map.transpose() * dout_map;
                          col2im_add(dcol, H, W, Cig, kh, kw, spec, Ho, Wo,
                                     gg.grad(input).data.data() + in_off);
                        }
                      }
                    }
                    if (bias != kNoNode && gg.requires_grad(bias)) {
                      Tensor& db = gg.grad(bias);
                      for (int b = 0; b < B; ++b)
                        for (int c = 0; c < Co; ++c)
                          db.data(c) += dout.data.segment((static_cast<std::ptrdiff_t>(b) * Co + c) * S, S).sum();
                    }
                  });
}

NodeId pool2d(Graph& g, NodeId input, PoolKind kind, int kernel, int stride, int padding) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "pool2d input");
  if (stride < 1) throw std::invalid_argument("pool2d: stride must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = conv_out_extent(H, kernel, stride, padding, 1);
  const int Wo = conv_out_extent(W, kernel, stride, padding, 1);
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          double acc = 0.0;
          int count = 0;
          for (int ky = 0; ky < kernel; ++ky) {
            const int y = oy * stride - padding + ky;
            if (y < 0 || y >= H) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int x_ = ox * stride - padding + kx;
              if (x_ < 0 || x_ >= W) continue;
              const double v = x.at4(b, c, y, x_);
              acc += v;
              best = std::max(best, v);
              ++count;
            }
          }
          if (count == 0)
            throw std::invalid_argument("pool2d: window at (" + std::to_string(oy) + "," +
                                        std::to_string(ox) + ") covers no input cells");
          out.at4(b, c, oy, ox) = kind == PoolKind::kAvg ? acc / count : best;
        }
      }
    }
  }
  return g.record(std::move(out), {input}, [input, kind, kernel, stride, padding](Graph& gg, NodeId self) {
    const Tensor& x = gg.value(input);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Tensor& dout = gg.grad(self);
    const int Ho = dout.dim(2), Wo = dout.dim(3);
    Tensor& dx = gg.grad(input);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < Ho; ++oy) {
          for (int ox = 0; ox < Wo; ++ox) {
            const double go = dout.at4(b, c, oy, ox);
            if (kind == PoolKind::kAvg) {
              int count = 0;
              for (int ky = 0; ky < kernel; ++ky) {
                const int y = oy * stride - padding + ky;
                if (y < 0 || y >= H) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                  const int x_ = ox * stride - padding + kx;
                  if (x_ >= 0 && x_ < W) ++count;
                }
              }
              const double share = go / count;
              for (int ky = 0; ky < kernel; ++ky) {
                const int y = oy * stride - padding + ky;
                if (y < 0 || y >= H) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                  const int x_ = ox * stride - padding + kx;
                  if (x_ >= 0 && x_ < W) dx.at4(b, c, y, x_) += share;
                }
              }
            } else {
              // route to the first maximum in scan order
              double best = -std::numeric_limits<double>::infinity();
              int by = -1, bx = -1;
              for (int ky = 0; ky < kernel; ++ky) {
                const int y = oy * stride - padding + ky;
                if (y < 0 || y >= H) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                  const int x_ = ox * stride - padding + kx;
                  if (x_ < 0 || x_ >= W) continue;
                  const double v = x.at4(b, c, y, x_);
                  if (v > best) {
                    best = v;
                    by = y;
                    bx = x_;
                  }
                }
              }
              dx.at4(b, c, by, bx) += go;
            }
          }
        }
      }
    }
  });
}

NodeId batchnorm(Graph& g, NodeId input, NodeId gamma, NodeId beta, Tensor* running_mean,
                 Tensor* running_var, bool training, bool update_running, double eps,
                 double momentum) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "batchnorm input");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Tensor& gam = g.value(gamma);
  const Tensor& bet = g.value(beta);
  if (gam.rank() != 1 || gam.dim(0) != C || bet.rank() != 1 || bet.dim(0) != C)
    throw std::invalid_argument("batchnorm: gamma/beta must have shape (" + std::to_string(C) + ")");
  const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;

  Eigen::VectorXd mean(C), inv_std(C);
  if (training) {
    if (B < 2)
      throw std::invalid_argument("batchnorm: training mode needs batch >= 2, got " + std::to_string(B));
    const double M = static_cast<double>(B) * S;
    Eigen::VectorXd var(C);
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < B; ++b) {
        auto seg = x.data.segment((static_cast<std::ptrdiff_t>(b) * C + c) * S, S);
        s += seg.sum();
        s2 += (seg * seg).sum();
      }
      mean(c) = s / M;
      var(c) = std::max(0.0, s2 / M - mean(c) * mean(c));
    }
    inv_std = (var.array() + eps).rsqrt();
    if (update_running) {
      if (running_mean == nullptr || running_var == nullptr)
        throw std::invalid_argument("batchnorm: update_running requested without running buffers");
      const double unbias = M / (M - 1.0);
      running_mean->data = (1.0 - momentum) * running_mean->data + momentum * mean.array();
      running_var->data = (1.0 - momentum) * running_var->data + momentum * (unbias * var.array());
    }
  } else {
    if (running_mean == nullptr || running_var == nullptr)
      throw std::invalid_argument("batchnorm: inference mode requires running statistics");
    if (running_mean->numel() != C || running_var->numel() != C)
      throw std::invalid_argument("batchnorm: running statistics must have " + std::to_string(C) +
                                  " entries");
    mean = running_mean->data.matrix();
    inv_std = (running_var->data + eps).rsqrt().matrix();
  }

  Tensor out = Tensor::zeros({B, C, H, W});
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      auto seg = x.data.segment((static_cast<std::ptrdiff_t>(b) * C + c) * S, S);
      out.data.segment((static_cast<std::ptrdiff_t>(b) * C + c) * S, S) =
          (seg - mean(c)) * inv_std(c) * gam.data(c) + bet.data(c);
    }
  }

  return g.record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, mean, inv_std, training](Graph& gg, NodeId self) {
        const Tensor& x = gg.value(input);
        const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;
        const double M = static_cast<double>(B) * S;
        const Tensor& dout = gg.grad(self);
        const Tensor& gam = gg.value(gamma);
        for (int c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * C + c) * S;
            auto dy = dout.data.segment(off, S);
            auto xhat = (x.data.segment(off, S) - mean(c)) * inv_std(c);
            sum_dy += dy.sum();
            sum_dy_xhat += (dy * xhat).sum();
          }
          if (gg.requires_grad(gamma)) gg.grad(gamma).data(c) += sum_dy_xhat;
          if (gg.requires_grad(beta)) gg.grad(beta).data(c) += sum_dy;
          if (gg.requires_grad(input)) {
            Tensor& dx = gg.grad(input);
            const double k = gam.data(c) * inv_std(c);
            for (int b = 0; b < B; ++b) {
              const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * C + c) * S;
              auto dy = dout.data.segment(off, S);
              if (training) {
                auto xhat = (x.data.segment(off, S) - mean(c)) * inv_std(c);
                dx.data.segment(off, S) += k * (dy - sum_dy / M - xhat * (sum_dy_xhat / M));
              } else {
                dx.data.segment(off, S) += k * dy;
              }
            }
          }
        }
      });
}

NodeId linear(Graph& g, NodeId input, NodeId weight, NodeId bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  const Tensor& bv = g.value(bias);
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (w.dim(1) != x.dim(1))
    throw std::invalid_argument("linear: weight expects " + std::to_string(w.dim(1)) +
                                " features but input has " + std::to_string(x.dim(1)));
  if (bv.rank() != 1 || bv.dim(0) != w.dim(0))
    throw std::invalid_argument("linear: bias must have shape (" + std::to_string(w.dim(0)) + ")");
  const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  Tensor out = Tensor::zeros({B, O});
  MapRowC x_map(x.data.data(), B, F);
  MapRowC w_map(w.data.data(), O, F);
  MapRow out_map(out.data.data(), B, O);
  out_map.noalias() = x_map * w_map.transpose();
  out_map.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data.data(), O);
  return g.record(std::move(out), {input, weight, bias}, [input, weight, bias](Graph& gg, NodeId self) {
    const Tensor& x = gg.value(input);
    const Tensor& w = gg.value(weight);
    const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
    MapRowC dout(gg.grad(self).data.data(), B, O);
    if (gg.requires_grad(input)) {
      MapRow dx(gg.grad(input).data.data(), B, F);
      dx.noalias() += dout * MapRowC(w.data.data(), O, F);
    }
    if (gg.requires_grad(weight)) {
      MapRow dw(gg.grad(weight).data.data(), O, F);
      dw.noalias() += dout.transpose() * MapRowC(x.data.data(), B, F);
    }
    if (gg.requires_grad(bias))
      gg.grad(bias).data += dout.colwise().sum().transpose().array();
  });
}

NodeId relu(Graph& g, NodeId input) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape, x.data.max(0.0));
  return g.record(std::move(out), {input}, [input](Graph& gg, NodeId self) {
    const Tensor& x = gg.value(input);
    gg.grad(input).data += gg.grad(self).data * (x.data > 0.0).cast<double>();
  });
}

NodeId add(Graph& g, NodeId a, NodeId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (!ta.same_shape(tb))
    throw std::invalid_argument("add: shape " + shape_string(ta.shape) + " vs " + shape_string(tb.shape));
  Tensor out(ta.shape, ta.data + tb.data);
  return g.record(std::move(out), {a, b}, [a, b](Graph& gg, NodeId self) {
    gg.accumulate_grad(a, gg.grad(self).data);
    gg.accumulate_grad(b, gg.grad(self).data);
  });
}

NodeId scale(Graph& g, NodeId input, double factor) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape, x.data * factor);
  return g.record(std::move(out), {input}, [input, factor](Graph& gg, NodeId self) {
    gg.grad(input).data += gg.grad(self).data * factor;
  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (!ta.same_shape(tb))
    throw std::invalid_argument("mul: shape " + shape_string(ta.shape) + " vs " + shape_string(tb.shape));
  Tensor out(ta.shape, ta.data * tb.data);
  return g.record(std::move(out), {a, b}, [a, b](Graph& gg, NodeId self) {
    if (gg.requires_grad(a)) gg.grad(a).data += gg.grad(self).data * gg.value(b).data;
    if (gg.requires_grad(b)) gg.grad(b).data += gg.grad(self).data * gg.value(a).data;
  });
}

NodeId sum(Graph& g, NodeId input) {
  const Tensor& x = g.value(input);
  Tensor out({1}, Eigen::ArrayXd::Constant(1, x.data.sum()));
  return g.record(std::move(out), {input}, [input](Graph& gg, NodeId self) {
    gg.grad(input).data += gg.grad(self).data(0);
  });
}

NodeId concat_channels(Graph& g, const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = g.value(parts[0]);
  require_rank(first, 4, "concat_channels input");
  const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
  int Ctot = 0;
  for (NodeId p : parts) {
    const Tensor& t = g.value(p);
    require_rank(t, 4, "concat_channels input");
    if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: incompatible shape " + shape_string(t.shape) +
                                  " vs " + shape_string(first.shape));
    Ctot += t.dim(1);
  }
  const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;
  Tensor out = Tensor::zeros({B, Ctot, H, W});
  for (int b = 0; b < B; ++b) {
    std::ptrdiff_t coff = 0;
    for (NodeId p : parts) {
      const Tensor& t = g.value(p);
      const int Cp = t.dim(1);
      out.data.segment((static_cast<std::ptrdiff_t>(b) * Ctot + coff) * S, Cp * S) =
          t.data.segment(static_cast<std::ptrdiff_t>(b) * Cp * S, Cp * S);
      coff += Cp;
    }
  }
  return g.record(std::move(out), parts, [parts](Graph& gg, NodeId self) {
    const Tensor& dout = gg.grad(self);
    const int B = dout.dim(0), Ctot = dout.dim(1), H = dout.dim(2), W = dout.dim(3);
    const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;
    for (int b = 0; b < B; ++b) {
      std::ptrdiff_t coff = 0;
      for (NodeId p : parts) {
        const int Cp = gg.value(p).dim(1);
        if (gg.requires_grad(p))
          gg.grad(p).data.segment(static_cast<std::ptrdiff_t>(b) * Cp * S, Cp * S) +=
              dout.data.segment((static_cast<std::ptrdiff_t>(b) * Ctot + coff) * S, Cp * S);
        coff += Cp;
      }
    }
  });
}

NodeId shift_crop(Graph& g, NodeId input, int dy, int dx) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "shift_crop input");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (dy < 0 || dx < 0 || dy >= H || dx >= W)
    throw std::invalid_argument("shift_crop: offset (" + std::to_string(dy) + "," + std::to_string(dx) +
                                ") out of range for " + shape_string(x.shape));
  const int Ho = H - dy, Wo = W - dx;
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int w = 0; w < Wo; ++w) out.at4(b, c, y, w) = x.at4(b, c, y + dy, w + dx);
  return g.record(std::move(out), {input}, [input, dy, dx](Graph& gg, NodeId self) {
    const Tensor& dout = gg.grad(self);
    Tensor& dx_ = gg.grad(input);
    const int B = dout.dim(0), C = dout.dim(1), Ho = dout.dim(2), Wo = dout.dim(3);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
          for (int w = 0; w < Wo; ++w) dx_.at4(b, c, y + dy, w + dx) += dout.at4(b, c, y, w);
  });
}

NodeId global_avg_pool(Graph& g, NodeId input) {
  const Tensor& x = g.value(input);
  require_rank(x, 4, "global_avg_pool input");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;
  Tensor out = Tensor::zeros({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      out.at2(b, c) = x.data.segment((static_cast<std::ptrdiff_t>(b) * C + c) * S, S).mean();
  return g.record(std::move(out), {input}, [input](Graph& gg, NodeId self) {
    const Tensor& x = gg.value(input);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(H) * W;
    const Tensor& dout = gg.grad(self);
    Tensor& dx = gg.grad(input);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        dx.data.segment((static_cast<std::ptrdiff_t>(b) * C + c) * S, S) += dout.at2(b, c) / static_cast<double>(S);
  });
}

CrossEntropyResult softmax_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels) {
  const Tensor& z = g.value(logits);
  require_rank(z, 2, "softmax_cross_entropy logits");
  const int B = z.dim(0), K = z.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(B));
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    if (labels[b] < 0 || labels[b] >= K)
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                                  " outside [0," + std::to_string(K) + ")");
    auto row = z.data.segment(static_cast<std::ptrdiff_t>(b) * K, K);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row - mx).exp().sum());
    total += lse - row(labels[b]);
  }
  const double mean_nll = total / B;
  Tensor out({1}, Eigen::ArrayXd::Constant(1, mean_nll));
  NodeId loss = g.record(std::move(out), {logits}, [logits, labels](Graph& gg, NodeId self) {
    const Tensor& z = gg.value(logits);
    const int B = z.dim(0), K = z.dim(1);
    const double go = gg.grad(self).data(0);
    Tensor& dz = gg.grad(logits);
    for (int b = 0; b < B; ++b) {
      auto row = z.data.segment(static_cast<std::ptrdiff_t>(b) * K, K);
      const double mx = row.maxCoeff();
      Eigen::ArrayXd p = (row - mx).exp();
      p /= p.sum();
      p(labels[b]) -= 1.0;
      dz.data.segment(static_cast<std::ptrdiff_t>(b) * K, K) += go / B * p;
    }
  });
  return {loss, mean_nll, -static_cast<double>(B) * mean_nll};
}

double argmax_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "argmax_accuracy logits");
  const int B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("argmax_accuracy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(B));
  int hits = 0;
  for (int b = 0; b < B; ++b) {
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (logits.at2(b, k) > logits.at2(b, arg)) arg = k;
    if (arg == labels[b]) ++hits;
  }
  return static_cast<double>(hits) / B;
}

}  // namespace parsec::ops
