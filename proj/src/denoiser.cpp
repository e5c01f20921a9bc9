// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

#include "gdr/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "binio.hpp"
#include "gdr/error.hpp"

namespace gdr {

using nlohmann::json;

std::string arch_name(Arch a) { return a == Arch::SeqAttn ? "seqattn" : "pooledmlp"; }

Arch parse_arch(const std::string& s) {
  if (s == "seqattn") return Arch::SeqAttn;
  if (s == "pooledmlp") return Arch::PooledMlp;
  throw Error(Errc::UsageError, "unknown architecture '" + s + "'");
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::Sample: return "sample";
    case Objective::Epsilon: return "epsilon";
    case Objective::Regression: return "regression";
  }
  return "sample";
}

Objective parse_objective(const std::string& s) {
  if (s == "sample") return Objective::Sample;
  if (s == "epsilon") return Objective::Epsilon;
  if (s == "regression") return Objective::Regression;
  throw Error(Errc::UsageError, "unknown objective '" + s + "'");
}

ParamLayout::ParamLayout(Arch arch, const ModelDims& d) {
  if (d.d_a == 0 || d.d_t == 0 || d.hidden == 0 || d.d_tau == 0 || d.d_tau % 2 != 0) {
    throw Error(Errc::InvalidSpec, "model dims must be positive with an even timestep width");
  }
  const std::size_t h = d.hidden;
  if (arch == Arch::SeqAttn) {
    add("in.weight", h, d.d_a);
    add("in.bias", 1, h);
    add("time.weight", h, d.d_tau);
    add("attn.query", h, h);
    add("attn.key", h, d.d_t);
    add("attn.value", h, d.d_t);
    add("ff1.weight", h, h);
    add("ff1.bias", 1, h);
    add("ff2.weight", h, h);
    add("ff2.bias", 1, h);
    add("out.weight", d.d_a, h);
    add("out.bias", 1, d.d_a);
  } else {
    add("hidden.weight", h, d.d_a + d.d_tau + d.d_t);
    add("hidden.bias", 1, h);
    add("out.weight", d.d_a, h);
    add("out.bias", 1, d.d_a);
  }
  if (d.mask_T > 0) add("mask", d.mask_T, d.d_a);
}

void ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  segments_.push_back(ParamSegment{std::move(name), total_, rows, cols});
  total_ += rows * cols;
}

const ParamSegment* ParamLayout::find(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return &s;
  return nullptr;
}

const ParamSegment& ParamLayout::at(const std::string& name) const {
  if (const auto* s = find(name)) return *s;
  throw Error(Errc::ShapeError, "no parameter segment '" + name + "'");
}

const ParamSegment& ParamLayout::owner(std::size_t k) const {
  for (const auto& s : segments_)
    if (k >= s.offset && k < s.offset + s.size()) return s;
  throw Error(Errc::ShapeError, "parameter index out of range");
}

LatentSeq DenoiserModel::mask() const {
  const ParamLayout lay = layout();
  const auto* seg = lay.find("mask");
  if (!seg) throw Error(Errc::ShapeError, "model has no mask sequence");
  return LatentSeq{Mat(seg->rows, seg->cols,
                       std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(seg->offset),
                                           params.begin() + static_cast<std::ptrdiff_t>(seg->offset + seg->size())))};
}

Vec timestep_embedding(int step, std::size_t width) {
  const std::size_t half = width / 2;
  Vec e(width);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    e[k] = std::sin(step * freq);
    e[k + half] = std::cos(step * freq);
  }
  return e;
}

DenoiserModel init_model(Arch arch, const ModelDims& dims, std::uint64_t seed, Objective objective) {
  if (objective == Objective::Regression && dims.mask_T == 0) {
    throw Error(Errc::InvalidSpec, "regression models need mask_T > 0");
  }
  DenoiserModel m{arch, objective, dims, {}, json::object()};
  const ParamLayout lay(arch, dims);
  m.params.assign(lay.total(), 0.0);
  SeededRng rng(seed, 0x6d6f64656cULL);
  for (const auto& seg : lay.segments()) {
    const bool is_bias = seg.name.ends_with(".bias");
    if (is_bias) continue;
    const double sd = seg.name == "mask" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(seg.cols));
    for (std::size_t k = 0; k < seg.size(); ++k) m.params[seg.offset + k] = sd * rng.normal();
  }
  round_to_f32(m.params);
  return m;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y = W x (+ b). W is rows x cols row-major.
inline void affine(const double* w, const double* b, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double s = b ? b[r] : 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

// dx += W^T dy
inline void affine_t(const double* w, std::size_t rows, std::size_t cols, const double* dy, double* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += wr[c] * g;
  }
}

// dW += dy x^T
inline void outer_acc(double* dw, std::size_t rows, std::size_t cols, const double* dy, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* dr = dw + r * cols;
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) dr[c] += g * x[c];
  }
}

struct SeqOffsets {
  std::size_t w_in, b_in, w_time, w_q, w_k, w_v, w_1, b_1, w_2, b_2, w_out, b_out, mask;
  bool has_mask;
};

SeqOffsets seq_offsets(const ParamLayout& lay) {
  const auto* m = lay.find("mask");
  return {lay.at("in.weight").offset,   lay.at("in.bias").offset,    lay.at("time.weight").offset,
          lay.at("attn.query").offset,  lay.at("attn.key").offset,   lay.at("attn.value").offset,
          lay.at("ff1.weight").offset,  lay.at("ff1.bias").offset,   lay.at("ff2.weight").offset,
          lay.at("ff2.bias").offset,    lay.at("out.weight").offset, lay.at("out.bias").offset,
          m ? m->offset : 0,           m != nullptr};
}

struct MlpOffsets {
  std::size_t w_h, b_h, w_out, b_out, mask;
  bool has_mask;
};

MlpOffsets mlp_offsets(const ParamLayout& lay) {
  const auto* m = lay.find("mask");
  return {lay.at("hidden.weight").offset, lay.at("hidden.bias").offset, lay.at("out.weight").offset,
          lay.at("out.bias").offset, m ? m->offset : 0, m != nullptr};
}

// Activations retained for the backward pass of one sequence.
struct SeqCache {
  std::size_t T = 0, L = 0;
  bool null_cond = true;
  Vec emb;       // d_tau
  Vec x0, q;     // T x h
  Vec keys, vals;  // L x h
  Vec attn;      // T x L
  Vec x1, u, g, x2;  // T x h
  Vec y;         // T x d_a
};

void seq_forward(const DenoiserModel& m, const SeqOffsets& o, const Mat& z, int step, const CondSeq& cond,
                 SeqCache& c) {
  const double* p = m.params.data();
  const std::size_t h = m.dims.hidden, da = m.dims.d_a, dt = m.dims.d_t, dtau = m.dims.d_tau;
  const std::size_t T = z.rows();
  c.T = T;
  c.null_cond = cond.is_null;
  c.L = cond.is_null ? 0 : cond.length();
  c.emb = timestep_embedding(step, dtau);

  Vec pe(h);
  affine(p + o.w_time, p + o.b_in, h, dtau, c.emb.data(), pe.data());

  c.x0.assign(T * h, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double* x0 = c.x0.data() + t * h;
    affine(p + o.w_in, nullptr, h, da, z.row(t).data(), x0);
    for (std::size_t k = 0; k < h; ++k) x0[k] += pe[k];
  }

  c.x1 = c.x0;
  if (!c.null_cond) {
    const std::size_t L = c.L;
    c.keys.assign(L * h, 0.0);
    c.vals.assign(L * h, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      affine(p + o.w_k, nullptr, h, dt, cond.tokens.row(l).data(), c.keys.data() + l * h);
      affine(p + o.w_v, nullptr, h, dt, cond.tokens.row(l).data(), c.vals.data() + l * h);
    }
    c.q.assign(T * h, 0.0);
    c.attn.assign(T * L, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));
    for (std::size_t t = 0; t < T; ++t) {
      double* q = c.q.data() + t * h;
      affine(p + o.w_q, nullptr, h, h, c.x0.data() + t * h, q);
      double* a = c.attn.data() + t * L;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < L; ++l) {
        double s = 0.0;
        const double* kl = c.keys.data() + l * h;
        for (std::size_t k = 0; k < h; ++k) s += q[k] * kl[k];
        a[l] = s * scale;
        mx = std::max(mx, a[l]);
      }
      double den = 0.0;
      for (std::size_t l = 0; l < L; ++l) den += (a[l] = std::exp(a[l] - mx));
      for (std::size_t l = 0; l < L; ++l) a[l] /= den;
      double* x1 = c.x1.data() + t * h;
      for (std::size_t l = 0; l < L; ++l) {
        const double* vl = c.vals.data() + l * h;
        for (std::size_t k = 0; k < h; ++k) x1[k] += a[l] * vl[k];
      }
    }
  }

  c.u.assign(T * h, 0.0);
  c.g.assign(T * h, 0.0);
  c.x2 = c.x1;
  c.y.assign(T * da, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double* u = c.u.data() + t * h;
    double* g = c.g.data() + t * h;
    affine(p + o.w_1, p + o.b_1, h, h, c.x1.data() + t * h, u);
    for (std::size_t k = 0; k < h; ++k) g[k] = gelu(u[k]);
    Vec f(h);
    affine(p + o.w_2, p + o.b_2, h, h, g, f.data());
    double* x2 = c.x2.data() + t * h;
    for (std::size_t k = 0; k < h; ++k) x2[k] += f[k];
    affine(p + o.w_out, p + o.b_out, da, h, x2, c.y.data() + t * da);
  }
}

// Accumulates parameter gradients into grad and, when dz is non-null, the
// input gradient into dz (T x d_a).
void seq_backward(const DenoiserModel& m, const SeqOffsets& o, const Mat& z, const CondSeq& cond,
                  const SeqCache& c, const Vec& dy, double* grad, double* dz) {
  const double* p = m.params.data();
  const std::size_t h = m.dims.hidden, da = m.dims.d_a, dt = m.dims.d_t, dtau = m.dims.d_tau;
  const std::size_t T = c.T, L = c.L;

  Vec dx1(T * h, 0.0);
  Vec dpe(h, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dyt = dy.data() + t * da;
    outer_acc(grad + o.w_out, da, h, dyt, c.x2.data() + t * h);
    for (std::size_t k = 0; k < da; ++k) grad[o.b_out + k] += dyt[k];
    double* dx = dx1.data() + t * h;
    affine_t(p + o.w_out, da, h, dyt, dx);  // dx2; the residual passes it to x1
    // feed-forward branch
    outer_acc(grad + o.w_2, h, h, dx, c.g.data() + t * h);
    for (std::size_t k = 0; k < h; ++k) grad[o.b_2 + k] += dx[k];
    Vec du(h, 0.0);
    affine_t(p + o.w_2, h, h, dx, du.data());
    const double* u = c.u.data() + t * h;
    for (std::size_t k = 0; k < h; ++k) du[k] *= gelu_grad(u[k]);
    outer_acc(grad + o.w_1, h, h, du.data(), c.x1.data() + t * h);
    for (std::size_t k = 0; k < h; ++k) grad[o.b_1 + k] += du[k];
    affine_t(p + o.w_1, h, h, du.data(), dx);
  }

  // dx1 now holds dL/dx1; the attention residual passes it through to x0.
  Vec& dx0 = dx1;
  if (!c.null_cond) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));
    Vec dkeys(L * h, 0.0), dvals(L * h, 0.0), dq(h), da_(L), ds(L);
    for (std::size_t t = 0; t < T; ++t) {
      const double* dout = dx1.data() + t * h;  // gradient of attention output
      const double* a = c.attn.data() + t * L;
      double weighted = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double* vl = c.vals.data() + l * h;
        double* dvl = dvals.data() + l * h;
        double s = 0.0;
        for (std::size_t k = 0; k < h; ++k) {
          dvl[k] += a[l] * dout[k];
          s += dout[k] * vl[k];
        }
        da_[l] = s;
        weighted += a[l] * s;
      }
      for (std::size_t l = 0; l < L; ++l) ds[l] = a[l] * (da_[l] - weighted) * scale;
      const double* q = c.q.data() + t * h;
      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t l = 0; l < L; ++l) {
        const double* kl = c.keys.data() + l * h;
        double* dkl = dkeys.data() + l * h;
        for (std::size_t k = 0; k < h; ++k) {
          dq[k] += ds[l] * kl[k];
          dkl[k] += ds[l] * q[k];
        }
      }
      outer_acc(grad + o.w_q, h, h, dq.data(), c.x0.data() + t * h);
      affine_t(p + o.w_q, h, h, dq.data(), dx0.data() + t * h);
    }
    for (std::size_t l = 0; l < L; ++l) {
      outer_acc(grad + o.w_k, h, dt, dkeys.data() + l * h, cond.tokens.row(l).data());
      outer_acc(grad + o.w_v, h, dt, dvals.data() + l * h, cond.tokens.row(l).data());
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    const double* dx = dx0.data() + t * h;
    outer_acc(grad + o.w_in, h, da, dx, z.row(t).data());
    for (std::size_t k = 0; k < h; ++k) dpe[k] += dx[k];
    if (dz) affine_t(p + o.w_in, h, da, dx, dz + t * da);
  }
  for (std::size_t k = 0; k < h; ++k) grad[o.b_in + k] += dpe[k];
  outer_acc(grad + o.w_time, h, dtau, dpe.data(), c.emb.data());
}

struct MlpCache {
  std::size_t T = 0;
  Vec in;   // d_a + d_tau + d_t
  Vec u, g; // h
  Vec y;    // d_a, broadcast over T
};

void mlp_forward(const DenoiserModel& m, const MlpOffsets& o, const Mat& z, int step, const CondSeq& cond,
                 MlpCache& c) {
  const double* p = m.params.data();
  const std::size_t h = m.dims.hidden, da = m.dims.d_a, dt = m.dims.d_t, dtau = m.dims.d_tau;
  c.T = z.rows();
  c.in.assign(da + dtau + dt, 0.0);
  const Vec zp = pool(LatentSeq{z});
  std::copy(zp.begin(), zp.end(), c.in.begin());
  const Vec e = timestep_embedding(step, dtau);
  std::copy(e.begin(), e.end(), c.in.begin() + static_cast<std::ptrdiff_t>(da));
  if (!cond.is_null) {
    for (std::size_t l = 0; l < cond.length(); ++l)
      for (std::size_t k = 0; k < dt; ++k) c.in[da + dtau + k] += cond.tokens(l, k);
    for (std::size_t k = 0; k < dt; ++k) c.in[da + dtau + k] /= static_cast<double>(cond.length());
  }
  c.u.assign(h, 0.0);
  c.g.assign(h, 0.0);
  affine(p + o.w_h, p + o.b_h, h, c.in.size(), c.in.data(), c.u.data());
  for (std::size_t k = 0; k < h; ++k) c.g[k] = gelu(c.u[k]);
  c.y.assign(da, 0.0);
  affine(p + o.w_out, p + o.b_out, da, h, c.g.data(), c.y.data());
}

void mlp_backward(const DenoiserModel& m, const MlpOffsets& o, const MlpCache& c, const Vec& dy, double* grad,
                  double* dz) {
  const double* p = m.params.data();
  const std::size_t h = m.dims.hidden, da = m.dims.d_a;
  Vec dsum(da, 0.0);
  for (std::size_t t = 0; t < c.T; ++t)
    for (std::size_t k = 0; k < da; ++k) dsum[k] += dy[t * da + k];
  outer_acc(grad + o.w_out, da, h, dsum.data(), c.g.data());
  for (std::size_t k = 0; k < da; ++k) grad[o.b_out + k] += dsum[k];
  Vec du(h, 0.0);
  affine_t(p + o.w_out, da, h, dsum.data(), du.data());
  for (std::size_t k = 0; k < h; ++k) du[k] *= gelu_grad(c.u[k]);
  outer_acc(grad + o.w_h, h, c.in.size(), du.data(), c.in.data());
  for (std::size_t k = 0; k < h; ++k) grad[o.b_h + k] += du[k];
  if (dz) {
    Vec din(c.in.size(), 0.0);
    affine_t(p + o.w_h, h, c.in.size(), du.data(), din.data());
    const double inv_t = 1.0 / static_cast<double>(c.T);
    for (std::size_t t = 0; t < c.T; ++t)
      for (std::size_t k = 0; k < da; ++k) dz[t * da + k] += din[k] * inv_t;
  }
}

void check_shapes(const DenoiserModel& m, const Mat& z, const CondSeq& cond) {
  if (z.cols() != m.dims.d_a || z.rows() == 0) {
    throw Error(Errc::ShapeError, "latent has " + std::to_string(z.cols()) + " columns, model expects " +
                                      std::to_string(m.dims.d_a));
  }
  if (cond.tokens.cols() != m.dims.d_t || cond.tokens.rows() == 0) {
    throw Error(Errc::ShapeError, "conditioning has " + std::to_string(cond.tokens.cols()) +
                                      " columns, model expects " + std::to_string(m.dims.d_t));
  }
  if (m.params.size() != ParamLayout(m.arch, m.dims).total()) {
    throw Error(Errc::ShapeError, "parameter vector does not match layout");
  }
}

}  // namespace

LatentSeq forward(const DenoiserModel& model, const LatentSeq& z, int step, const CondSeq& cond) {
  check_shapes(model, z.frames, cond);
  const ParamLayout lay = model.layout();
  const std::size_t T = z.steps(), da = model.dims.d_a;
  Mat out(T, da);
  if (model.arch == Arch::SeqAttn) {
    SeqCache c;
    seq_forward(model, seq_offsets(lay), z.frames, step, cond, c);
    out.data() = std::move(c.y);
  } else {
    MlpCache c;
    mlp_forward(model, mlp_offsets(lay), z.frames, step, cond, c);
    for (std::size_t t = 0; t < T; ++t) std::copy(c.y.begin(), c.y.end(), out.row(t).begin());
  }
  return LatentSeq{std::move(out)};
}

namespace {

// Squared error of one example and its gradient accumulated into grad.
double example_loss_grad(const DenoiserModel& m, const ParamLayout& lay, const TrainExample& ex, double inv_count,
                         double* grad) {
  const bool use_mask = !ex.input.has_value();
  const Mat& z = use_mask ? m.mask().frames : ex.input->frames;
  check_shapes(m, z, ex.cond);
  if (ex.target.frames.rows() != z.rows() || ex.target.frames.cols() != z.cols()) {
    throw Error(Errc::ShapeError, "target shape differs from input shape");
  }
  const std::size_t n = z.size();
  Vec dy(n);
  double sq = 0.0;
  auto residual = [&](const Vec& y) {
    for (std::size_t k = 0; k < n; ++k) {
      const double r = y[k] - ex.target.frames.data()[k];
      sq += r * r;
      dy[k] = 2.0 * r * inv_count;
    }
  };
  Vec dz;
  double* dzp = nullptr;
  const ParamSegment* mask_seg = use_mask ? &lay.at("mask") : nullptr;
  if (use_mask) {
    dz.assign(n, 0.0);
    dzp = dz.data();
  }
  if (m.arch == Arch::SeqAttn) {
    const SeqOffsets o = seq_offsets(lay);
    SeqCache c;
    seq_forward(m, o, z, ex.step, ex.cond, c);
    residual(c.y);
    seq_backward(m, o, z, ex.cond, c, dy, grad, dzp);
  } else {
    const MlpOffsets o = mlp_offsets(lay);
    MlpCache c;
    mlp_forward(m, o, z, ex.step, ex.cond, c);
    Vec y(n);
    for (std::size_t t = 0; t < z.rows(); ++t) std::copy(c.y.begin(), c.y.end(), y.begin() + static_cast<std::ptrdiff_t>(t * m.dims.d_a));
    residual(y);
    mlp_backward(m, o, c, dy, grad, dzp);
  }
  if (use_mask)
    for (std::size_t k = 0; k < n; ++k) grad[mask_seg->offset + k] += dz[k];
  return sq;
}

// Fixed chunking keeps the floating-point reduction order independent of the
// number of worker threads.
constexpr std::size_t kChunk = 8;

}  // namespace

LossGrad loss_and_grad(const DenoiserModel& model, std::span<const TrainExample> batch, unsigned workers) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty batch");
  const ParamLayout lay = model.layout();
  std::size_t count = 0;
  for (const auto& ex : batch) count += ex.target.frames.size();
  const double inv_count = 1.0 / static_cast<double>(count);

  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<Vec> chunk_grads(n_chunks);
  std::vector<double> chunk_sq(n_chunks, 0.0);
  auto run_chunk = [&](std::size_t ci) {
    chunk_grads[ci].assign(lay.total(), 0.0);
    const std::size_t end = std::min(batch.size(), (ci + 1) * kChunk);
    for (std::size_t i = ci * kChunk; i < end; ++i)
      chunk_sq[ci] += example_loss_grad(model, lay, batch[i], inv_count, chunk_grads[ci].data());
  };

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n_chunks));
  if (workers <= 1) {
    for (std::size_t ci = 0; ci < n_chunks; ++ci) run_chunk(ci);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t ci = w; ci < n_chunks; ci += workers) run_chunk(ci);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  LossGrad out{0.0, Vec(lay.total(), 0.0)};
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    out.loss += chunk_sq[ci];
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += chunk_grads[ci][k];
  }
  out.loss *= inv_count;
  return out;
}

double batch_loss(const DenoiserModel& model, std::span<const TrainExample> batch) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty batch");
  double sq = 0.0;
  std::size_t count = 0;
  const LatentSeq mask = model.objective == Objective::Regression ? model.mask() : LatentSeq{};
  for (const auto& ex : batch) {
    const LatentSeq y = forward(model, ex.input ? *ex.input : mask, ex.step, ex.cond);
    for (std::size_t k = 0; k < y.frames.size(); ++k) {
      const double r = y.frames.data()[k] - ex.target.frames.data()[k];
      sq += r * r;
    }
    count += y.frames.size();
  }
  return sq / static_cast<double>(count);
}

GradientReport grad_check(const DenoiserModel& model, double tolerance, SeededRng& rng, std::size_t frames,
                          std::size_t tokens) {
  const std::size_t da = model.dims.d_a, dt = model.dims.d_t;
  if (model.dims.mask_T > 0) frames = model.dims.mask_T;
  std::vector<TrainExample> batch;
  for (int b = 0; b < 2; ++b) {
    TrainExample ex;
    if (model.objective != Objective::Regression || b == 1) ex.input = LatentSeq{gaussian_mat(rng, frames, da)};
    ex.step = 1 + static_cast<int>(rng.uniform_index(50));
    ex.cond = CondSeq{gaussian_mat(rng, tokens, dt), false};
    ex.target = LatentSeq{gaussian_mat(rng, frames, da)};
    batch.push_back(std::move(ex));
  }

  const LossGrad analytic = loss_and_grad(model, batch, 1);
  const ParamLayout lay = model.layout();
  constexpr double kStep = 1e-5;
  DenoiserModel probe = model;
  GradientReport rep;
  rep.tolerance = tolerance;
  for (const auto& seg : lay.segments()) rep.per_segment.push_back({seg.name, 0.0});
  for (std::size_t k = 0; k < probe.params.size(); ++k) {
    const double orig = probe.params[k];
    probe.params[k] = orig + kStep;
    const double lp = batch_loss(probe, batch);
    probe.params[k] = orig - kStep;
    const double lm = batch_loss(probe, batch);
    probe.params[k] = orig;
    const double fd = (lp - lm) / (2.0 * kStep);
    const double ga = analytic.grad[k];
    const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
    const auto& seg = lay.owner(k);
    for (auto& se : rep.per_segment)
      if (se.segment == seg.name) se.max_rel_error = std::max(se.max_rel_error, rel);
    if (k == 0 || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_segment = seg.name;
      rep.worst_index = k;
    }
  }
  rep.pass = rep.max_rel_error <= tolerance;
  return rep;
}

json to_json(const GradientReport& r) {
  json segs = json::array();
  for (const auto& s : r.per_segment) segs.push_back({{"segment", s.segment}, {"max_rel_error", s.max_rel_error}});
  return json{{"max_rel_error", r.max_rel_error}, {"worst_segment", r.worst_segment}, {"worst_index", r.worst_index},
              {"tolerance", r.tolerance},       {"pass", r.pass},                   {"segments", segs}};
}

// ---------------------------------------------------------------------------
// GDRM checkpoint

namespace {

constexpr char kModelMagic[4] = {'G', 'D', 'R', 'M'};
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_model(const DenoiserModel& model) {
  const ParamLayout lay = model.layout();
  if (lay.total() != model.params.size()) throw Error(Errc::ShapeError, "parameter vector does not match layout");
  json segs = json::array();
  for (const auto& s : lay.segments()) segs.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  const json header{{"arch", arch_name(model.arch)},
                    {"objective", objective_name(model.objective)},
                    {"dims",
                     {{"d_a", model.dims.d_a},
                      {"d_t", model.dims.d_t},
                      {"hidden", model.dims.hidden},
                      {"d_tau", model.dims.d_tau},
                      {"mask_T", model.dims.mask_T}}},
                    {"param_count", model.params.size()},
                    {"layout", segs},
                    {"meta", model.meta}};
  const std::string text = header.dump();
  detail::ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  const std::size_t start = w.size();
  for (double x : model.params) w.f32(x);
  const std::uint32_t crc = detail::crc32_of(std::span(w.buffer()).subspan(start));
  w.u32(crc);
  return std::move(w.buffer());
}

DenoiserModel deserialize_model(std::span<const std::uint8_t> bytes, std::optional<Arch> expected) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.str(4) != std::string(kModelMagic, 4)) throw Error(Errc::FormatError, "checkpoint: bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t hlen = r.u32();
  json header;
  try {
    header = json::parse(r.str(hlen));
  } catch (const json::exception& e) {
    r.fail(std::string("malformed header: ") + e.what());
  }
  DenoiserModel m;
  std::size_t count = 0;
  try {
    m.arch = parse_arch(header.at("arch").get<std::string>());
    m.objective = parse_objective(header.at("objective").get<std::string>());
    const auto& d = header.at("dims");
    m.dims = ModelDims{d.at("d_a").get<std::size_t>(), d.at("d_t").get<std::size_t>(),
                       d.at("hidden").get<std::size_t>(), d.at("d_tau").get<std::size_t>(),
                       d.at("mask_T").get<std::size_t>()};
    count = header.at("param_count").get<std::size_t>();
    m.meta = header.value("meta", json::object());
  } catch (const json::exception& e) {
    r.fail(std::string("bad header fields: ") + e.what());
  } catch (const Error& e) {
    r.fail(e.what());
  }
  if (expected && *expected != m.arch) {
    r.fail("checkpoint holds a " + arch_name(m.arch) + " model, expected " + arch_name(*expected));
  }
  if (ParamLayout(m.arch, m.dims).total() != count) r.fail("param_count disagrees with layout");
  if (r.remaining() != count * 4 + 4) r.fail("payload length disagrees with param_count");
  const std::size_t start = r.offset();
  const std::uint32_t crc = detail::crc32_of(r.view(start, start + count * 4));
  m.params.resize(count);
  for (double& x : m.params) x = r.f32();
  if (r.u32() != crc) r.fail("CRC32 mismatch");
  if (!std::all_of(m.params.begin(), m.params.end(), [](double x) { return std::isfinite(x); }))
    throw Error(Errc::FormatError, "checkpoint: non-finite parameter");
  return m;
}

void save_model(const DenoiserModel& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(model));
}

DenoiserModel load_model(const std::filesystem::path& path, std::optional<Arch> expected) {
  return deserialize_model(detail::read_file(path), expected);
}

}  // namespace gdr
