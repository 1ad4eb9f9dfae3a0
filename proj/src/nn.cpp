#include "hacseg/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "hacseg/error.hpp"

namespace hacseg::nn {

// ---- parameters ----

Param& ParamStore::add(const std::string& name, int rows, int cols, Group group, bool decay, Init init,
                       Rng& rng) {
  if (index_.count(name)) fail(ErrorKind::Config, "duplicate parameter " + name);
  Param p;
  p.name = name;
  p.group = group;
  p.decay = decay;
  p.value = Mat::Zero(rows, cols);
  p.grad = Mat::Zero(rows, cols);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      p.value.setOnes();
      break;
    case Init::TruncNormal02: {
      std::normal_distribution<double> n(0.0, 0.02);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        double v = n(rng);
        while (std::abs(v) > 0.04) v = n(rng);
        p.value.data()[i] = static_cast<Real>(v);
      }
      break;
    }
    case Init::He: {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / cols));
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Real>(n(rng));
      break;
    }
  }
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::Config, "unknown parameter " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::Config, "unknown parameter " + name);
  return params_[it->second];
}

std::size_t ParamStore::count(std::optional<Group> g) const {
  std::size_t n = 0;
  for (const Param& p : params_)
    if (!g || p.group == *g) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (Param& p : params_) p.grad.setZero();
}

std::uint64_t ParamStore::checksum(std::optional<Group> g) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param& p : params_) {
    if (g && p.group != *g) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(Real); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---- convolutions ----

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, Group g, Rng& rng)
    : cin_(cin), cout_(cout), k_(k) {
  w_ = &ps.add(name + ".weight", cout, cin * k * k, g, true, Init::He, rng);
  b_ = &ps.add(name + ".bias", cout, 1, g, false, Init::Zeros, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != cin_) fail(ErrorKind::Config, "conv: channel mismatch");
  h_ = x.h;
  w_in_ = x.w;
  const int hw = x.h * x.w;
  Tensor y(cout_, x.h, x.w);
  if (k_ == 1) {
    col_ = x.data;
  } else {
    const int pad = k_ / 2;
    col_.setZero(cin_ * k_ * k_, hw);
    for (int ci = 0; ci < cin_; ++ci)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          Real* row = col_.row((ci * k_ + ky) * k_ + kx).data();
          const Real* src = x.data.row(ci).data();
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(x.w, x.w - dx);
          for (int yy = 0; yy < x.h; ++yy) {
            const int sy = yy + ky - pad;
            if (sy < 0 || sy >= x.h) continue;
            for (int xx = x0; xx < x1; ++xx) row[yy * x.w + xx] = src[sy * x.w + xx + dx];
          }
        }
  }
  y.data.noalias() = w_->value * col_;
  y.data.colwise() += b_->value.col(0);
  return y;
}

Tensor Conv2d::backward(const Tensor& gy, bool need_input_grad) {
  w_->grad.noalias() += gy.data * col_.transpose();
  b_->grad.col(0) += gy.data.rowwise().sum();
  if (!need_input_grad) return {};
  Tensor gx(cin_, h_, w_in_);
  if (k_ == 1) {
    gx.data.noalias() = w_->value.transpose() * gy.data;
    return gx;
  }
  const Mat gcol = w_->value.transpose() * gy.data;
  const int pad = k_ / 2;
  for (int ci = 0; ci < cin_; ++ci)
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        const Real* row = gcol.row((ci * k_ + ky) * k_ + kx).data();
        Real* dst = gx.data.row(ci).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx), x1 = std::min(w_in_, w_in_ - dx);
        for (int yy = 0; yy < h_; ++yy) {
          const int sy = yy + ky - pad;
          if (sy < 0 || sy >= h_) continue;
          for (int xx = x0; xx < x1; ++xx) dst[sy * w_in_ + xx + dx] += row[yy * w_in_ + xx];
        }
      }
  return gx;
}

ConvTranspose2x2::ConvTranspose2x2(ParamStore& ps, const std::string& name, int cin, int cout, Group g,
                                   Rng& rng)
    : cin_(cin), cout_(cout) {
  // Rows ordered (cout, dy, dx); fan-in per output pixel is cin.
  w_ = &ps.add(name + ".weight", cout * 4, cin, g, true, Init::He, rng);
  b_ = &ps.add(name + ".bias", cout, 1, g, false, Init::Zeros, rng);
}

Tensor ConvTranspose2x2::forward(const Tensor& x) {
  if (x.c != cin_) fail(ErrorKind::Config, "transposed conv: channel mismatch");
  x_ = x;
  const Mat y4 = w_->value * x.data;
  Tensor y(cout_, x.h * 2, x.w * 2);
  for (int co = 0; co < cout_; ++co) {
    const Real bias = b_->value(co, 0);
    for (int d = 0; d < 4; ++d) {
      const int dy = d / 2, dx = d % 2;
      const Real* src = y4.row(co * 4 + d).data();
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) y.at(co, 2 * yy + dy, 2 * xx + dx) = src[yy * x.w + xx] + bias;
    }
  }
  return y;
}

Tensor ConvTranspose2x2::backward(const Tensor& gy, bool need_input_grad) {
  const int h = x_.h, w = x_.w;
  Mat g4(cout_ * 4, h * w);
  for (int co = 0; co < cout_; ++co) {
    b_->grad(co, 0) += gy.data.row(co).sum();
    for (int d = 0; d < 4; ++d) {
      const int dy = d / 2, dx = d % 2;
      Real* dst = g4.row(co * 4 + d).data();
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) dst[yy * w + xx] = gy.at(co, 2 * yy + dy, 2 * xx + dx);
    }
  }
  w_->grad.noalias() += g4 * x_.data.transpose();
  if (!need_input_grad) return {};
  Tensor gx(cin_, h, w);
  gx.data.noalias() = w_->value.transpose() * g4;
  return gx;
}

// ---- normalisation and pointwise ----

Norm::Norm(ParamStore& ps, const std::string& name, int channels, Group g, Rng& rng) {
  gamma_ = &ps.add(name + ".gamma", channels, 1, g, false, Init::Ones, rng);
  beta_ = &ps.add(name + ".beta", channels, 1, g, false, Init::Zeros, rng);
}

Tensor Norm::forward(const Tensor& x) {
  constexpr Real eps = 1e-5f;
  const Real n = static_cast<Real>(x.h * x.w);
  Tensor y(x.c, x.h, x.w);
  xhat_.resize(x.c, x.h * x.w);
  inv_std_.resize(x.c);
  for (int c = 0; c < x.c; ++c) {
    const Real mean = x.data.row(c).sum() / n;
    const Real var = (x.data.row(c).array() - mean).square().sum() / n;
    inv_std_(c) = 1.0f / std::sqrt(var + eps);
    xhat_.row(c) = (x.data.row(c).array() - mean) * inv_std_(c);
    y.data.row(c) = xhat_.row(c).array() * gamma_->value(c, 0) + beta_->value(c, 0);
  }
  return y;
}

Tensor Norm::backward(const Tensor& gy) {
  const Real n = static_cast<Real>(gy.h * gy.w);
  Tensor gx(gy.c, gy.h, gy.w);
  for (int c = 0; c < gy.c; ++c) {
    const auto g = gy.data.row(c).array();
    const auto xh = xhat_.row(c).array();
    gamma_->grad(c, 0) += (g * xh).sum();
    beta_->grad(c, 0) += g.sum();
    const Real gamma = gamma_->value(c, 0);
    const Real sum_g = g.sum() * gamma;
    const Real sum_gx = (g * xh).sum() * gamma;
    gx.data.row(c) = (inv_std_(c) / n) * (n * gamma * g - sum_g - xh * sum_gx);
  }
  return gx;
}

Tensor Relu::forward(const Tensor& x) {
  y_ = x;
  y_.data = x.data.cwiseMax(0.0f);
  return y_;
}

Tensor Relu::backward(const Tensor& gy) const {
  Tensor gx = gy;
  gx.data = (y_.data.array() > 0.0f).select(gy.data, 0.0f);
  return gx;
}

Tensor MaxPool2::forward(const Tensor& x) {
  if (x.h % 2 || x.w % 2) fail(ErrorKind::Config, "max-pool needs even spatial size");
  c_ = x.c;
  h_ = x.h;
  w_ = x.w;
  Tensor y(x.c, x.h / 2, x.w / 2);
  arg_.assign(static_cast<std::size_t>(y.c) * y.h * y.w, 0);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) {
        int best = (2 * yy) * x.w + 2 * xx;
        for (int d = 1; d < 4; ++d) {
          const int i = (2 * yy + d / 2) * x.w + 2 * xx + d % 2;
          if (x.data(c, i) > x.data(c, best)) best = i;
        }
        y.at(c, yy, xx) = x.data(c, best);
        arg_[(static_cast<std::size_t>(c) * y.h + yy) * y.w + xx] = best;
      }
  return y;
}

Tensor MaxPool2::backward(const Tensor& gy) const {
  Tensor gx(c_, h_, w_);
  for (int c = 0; c < gy.c; ++c)
    for (int i = 0; i < gy.h * gy.w; ++i)
      gx.data(c, arg_[static_cast<std::size_t>(c) * gy.h * gy.w + i]) += gy.data(c, i);
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  y_ = x;
  y_.data = (1.0f + (-x.data.array()).exp()).inverse().matrix();
  return y_;
}

Tensor Sigmoid::backward(const Tensor& gy) const {
  Tensor gx = gy;
  gx.data = (gy.data.array() * y_.data.array() * (1.0f - y_.data.array())).matrix();
  return gx;
}

DoubleConv::DoubleConv(ParamStore& ps, const std::string& name, int cin, int cout, Group g, Rng& rng)
    : c1_(ps, name + ".conv1", cin, cout, 3, g, rng),
      c2_(ps, name + ".conv2", cout, cout, 3, g, rng),
      n1_(ps, name + ".norm1", cout, g, rng),
      n2_(ps, name + ".norm2", cout, g, rng) {}

Tensor DoubleConv::forward(const Tensor& x) {
  return r2_.forward(n2_.forward(c2_.forward(r1_.forward(n1_.forward(c1_.forward(x))))));
}

Tensor DoubleConv::backward(const Tensor& gy, bool need_input_grad) {
  const Tensor g = c2_.backward(n2_.backward(r2_.backward(gy)));
  return c1_.backward(n1_.backward(r1_.backward(g)), need_input_grad);
}

// ---- token layers ----

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim, Group g, Rng& rng) {
  gamma_ = &ps.add(name + ".gamma", 1, dim, g, false, Init::Ones, rng);
  beta_ = &ps.add(name + ".beta", 1, dim, g, false, Init::Zeros, rng);
}

Mat LayerNorm::forward(const Mat& x) {
  constexpr Real eps = 1e-6f;
  const Real d = static_cast<Real>(x.cols());
  xhat_.resize(x.rows(), x.cols());
  inv_std_.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Real mean = x.row(r).sum() / d;
    const Real var = (x.row(r).array() - mean).square().sum() / d;
    inv_std_(r) = 1.0f / std::sqrt(var + eps);
    xhat_.row(r) = (x.row(r).array() - mean) * inv_std_(r);
  }
  Mat y = (xhat_.array().rowwise() * gamma_->value.row(0).array()).matrix();
  y.rowwise() += beta_->value.row(0);
  return y;
}

Mat LayerNorm::backward(const Mat& gy) {
  const Real d = static_cast<Real>(gy.cols());
  gamma_->grad.row(0) += (gy.array() * xhat_.array()).colwise().sum().matrix();
  beta_->grad.row(0) += gy.colwise().sum();
  const Mat g = (gy.array().rowwise() * gamma_->value.row(0).array()).matrix();
  Mat gx(gy.rows(), gy.cols());
  for (Eigen::Index r = 0; r < gy.rows(); ++r) {
    const Real sum_g = g.row(r).sum();
    const Real sum_gx = g.row(r).dot(xhat_.row(r));
    gx.row(r) = (inv_std_(r) / d) * (d * g.row(r).array() - sum_g - xhat_.row(r).array() * sum_gx);
  }
  return gx;
}

Linear::Linear(ParamStore& ps, const std::string& name, int din, int dout, Group g, Rng& rng) {
  w_ = &ps.add(name + ".weight", din, dout, g, true, Init::TruncNormal02, rng);
  b_ = &ps.add(name + ".bias", 1, dout, g, false, Init::Zeros, rng);
}

Mat Linear::forward(const Mat& x) {
  x_ = x;
  Mat y = x * w_->value;
  y.rowwise() += b_->value.row(0);
  return y;
}

Mat Linear::backward(const Mat& gy) {
  w_->grad.noalias() += x_.transpose() * gy;
  b_->grad.row(0) += gy.colwise().sum();
  return gy * w_->value.transpose();
}

Mat Gelu::forward(const Mat& x) {
  x_ = x;
  return x.unaryExpr([](Real v) { return 0.5f * v * (1.0f + std::erf(v * static_cast<Real>(std::numbers::sqrt2 / 2))); });
}

Mat Gelu::backward(const Mat& gy) const {
  const Real inv_sqrt_2pi = static_cast<Real>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  const Mat d = x_.unaryExpr([&](Real v) {
    return 0.5f * (1.0f + std::erf(v * static_cast<Real>(std::numbers::sqrt2 / 2))) +
           v * inv_sqrt_2pi * std::exp(-0.5f * v * v);
  });
  return gy.cwiseProduct(d);
}

Mat Dropout::forward(const Mat& x, double rate, bool training, Rng& rng) {
  active_ = training && rate > 0.0;
  if (!active_) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const Real scale = static_cast<Real>(1.0 / (1.0 - rate));
  mask_.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = keep(rng) ? scale : 0.0f;
  return x.cwiseProduct(mask_);
}

Mat Dropout::backward(const Mat& gy) const { return active_ ? gy.cwiseProduct(mask_) : gy; }

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, int dim, int heads, Group g,
                                       Rng& rng)
    : q_(ps, name + ".q", dim, dim, g, rng),
      k_(ps, name + ".k", dim, dim, g, rng),
      v_(ps, name + ".v", dim, dim, g, rng),
      o_(ps, name + ".proj", dim, dim, g, rng),
      dim_(dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) fail(ErrorKind::Config, "embed dim must be divisible by heads");
}

Mat MultiHeadAttention::forward(const Mat& x) {
  qm_ = q_.forward(x);
  km_ = k_.forward(x);
  vm_ = v_.forward(x);
  const int dk = dim_ / heads_;
  const Real scale = 1.0f / std::sqrt(static_cast<Real>(dk));
  Mat concat(x.rows(), dim_);
  attn_.resize(heads_);
  for (int h = 0; h < heads_; ++h) {
    Mat s = qm_.middleCols(h * dk, dk) * km_.middleCols(h * dk, dk).transpose() * scale;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const Real mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp().matrix();
      s.row(r) /= s.row(r).sum();
    }
    concat.middleCols(h * dk, dk).noalias() = s * vm_.middleCols(h * dk, dk);
    attn_[h] = std::move(s);
  }
  return o_.forward(concat);
}

Mat MultiHeadAttention::backward(const Mat& gy) {
  const Mat gconcat = o_.backward(gy);
  const int dk = dim_ / heads_;
  const Real scale = 1.0f / std::sqrt(static_cast<Real>(dk));
  Mat gq(qm_.rows(), dim_), gk(km_.rows(), dim_), gv(vm_.rows(), dim_);
  for (int h = 0; h < heads_; ++h) {
    const Mat& a = attn_[h];
    const auto go = gconcat.middleCols(h * dk, dk);
    const Mat ga = go * vm_.middleCols(h * dk, dk).transpose();
    gv.middleCols(h * dk, dk).noalias() = a.transpose() * go;
    const Eigen::VectorXf row_dot = (ga.array() * a.array()).rowwise().sum();
    Mat gs = (a.array() * (ga.array().colwise() - row_dot.array())).matrix() * scale;
    gq.middleCols(h * dk, dk).noalias() = gs * km_.middleCols(h * dk, dk);
    gk.middleCols(h * dk, dk).noalias() = gs.transpose() * qm_.middleCols(h * dk, dk);
  }
  Mat gx = q_.backward(gq);
  gx += k_.backward(gk);
  gx += v_.backward(gv);
  return gx;
}

double drop_path_scale(double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return 1.0;
  if (rate >= 1.0) return 0.0;
  return std::bernoulli_distribution(1.0 - rate)(rng) ? 1.0 / (1.0 - rate) : 0.0;
}

EncoderBlock::EncoderBlock(ParamStore& ps, const std::string& name, int dim, int heads, double mlp_ratio,
                           Group g, Rng& rng)
    : ln1_(ps, name + ".ln1", dim, g, rng),
      ln2_(ps, name + ".ln2", dim, g, rng),
      attn_(ps, name + ".attn", dim, heads, g, rng),
      fc1_(ps, name + ".fc1", dim, static_cast<int>(std::lround(dim * mlp_ratio)), g, rng),
      fc2_(ps, name + ".fc2", static_cast<int>(std::lround(dim * mlp_ratio)), dim, g, rng) {}

Mat EncoderBlock::forward(const Mat& z, double drop_path, double dropout, bool training, Rng& rng) {
  keep1_ = drop_path_scale(drop_path, training, rng);
  Mat z1 = z;
  if (keep1_ != 0.0) {
    z1 += static_cast<Real>(keep1_) * drop_attn_.forward(attn_.forward(ln1_.forward(z)), dropout, training, rng);
  }
  keep2_ = drop_path_scale(drop_path, training, rng);
  Mat out = z1;
  if (keep2_ != 0.0) {
    const Mat hidden = gelu_.forward(fc1_.forward(ln2_.forward(z1)));
    out += static_cast<Real>(keep2_) * drop_mlp_.forward(fc2_.forward(hidden), dropout, training, rng);
  }
  return out;
}

Mat EncoderBlock::backward(const Mat& gy) {
  Mat gz1 = gy;
  if (keep2_ != 0.0) {
    const Mat g = drop_mlp_.backward(gy * static_cast<Real>(keep2_));
    gz1 += ln2_.backward(fc1_.backward(gelu_.backward(fc2_.backward(g))));
  }
  Mat gz = gz1;
  if (keep1_ != 0.0) {
    const Mat g = drop_attn_.backward(gz1 * static_cast<Real>(keep1_));
    gz += ln1_.backward(attn_.backward(g));
  }
  return gz;
}

}  // namespace hacseg::nn
