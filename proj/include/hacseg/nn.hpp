// Minimal float32 layers with hand-written backward passes. Batch size is
// always 1; every layer caches what its backward pass needs from the most
// recent forward call.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace hacseg::nn {

using Real = float;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// Feature map, channels x (height*width), each channel row-major.
struct Tensor {
  int c = 0, h = 0, w = 0;
  Mat data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(Mat::Zero(c_, h_ * w_)) {}
  Real& at(int ch, int y, int x) { return data(ch, y * w + x); }
  Real at(int ch, int y, int x) const { return data(ch, y * w + x); }
};

enum class Group { Attention, UNet, Recon };

struct Param {
  std::string name;
  Group group = Group::Attention;
  bool decay = true;  // weight decay applies (kernels, projections)
  Mat value, grad, m, v;
};

enum class Init { Zeros, Ones, TruncNormal02, He };

/// Owns all parameters in registration order (stable addresses).
class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols, Group group, bool decay, Init init, Rng& rng);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }
  std::size_t count(std::optional<Group> g = {}) const;

  void zero_grad();
  /// FNV-1a over the raw float bytes of the group's parameters, in order.
  std::uint64_t checksum(std::optional<Group> g = {}) const;

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, Group g, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy, bool need_input_grad = true);
  int out_channels() const { return cout_; }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
  int cin_ = 0, cout_ = 0, k_ = 1;
  Mat col_;
  int h_ = 0, w_in_ = 0;
};

/// 2x2 kernel, stride 2: doubles the spatial size.
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(ParamStore& ps, const std::string& name, int cin, int cout, Group g, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy, bool need_input_grad = true);

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
  int cin_ = 0, cout_ = 0;
  Tensor x_;
};

/// Per-channel normalisation with statistics of the current batch (one
/// sample, so statistics are spatial), learnable scale and offset.
class Norm {
 public:
  Norm() = default;
  Norm(ParamStore& ps, const std::string& name, int channels, Group g, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
  Mat xhat_;
  Eigen::VectorXf inv_std_;
};

class Relu {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  Tensor y_;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  std::vector<int> arg_;
  int c_ = 0, h_ = 0, w_ = 0;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;
  const Tensor& output() const { return y_; }

 private:
  Tensor y_;
};

/// conv3x3 -> norm -> relu, twice.
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(ParamStore& ps, const std::string& name, int cin, int cout, Group g, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy, bool need_input_grad = true);

 private:
  Conv2d c1_, c2_;
  Norm n1_, n2_;
  Relu r1_, r2_;
};

// ---- token layers (rows = tokens) ----

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim, Group g, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
  Mat xhat_;
  Eigen::VectorXf inv_std_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int din, int dout, Group g, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);

 private:
  Param* w_ = nullptr;  // din x dout
  Param* b_ = nullptr;  // 1 x dout
  Mat x_;
};

class Gelu {
 public:
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy) const;

 private:
  Mat x_;
};

/// Inverted dropout; identity when not training or rate 0.
class Dropout {
 public:
  Mat forward(const Mat& x, double rate, bool training, Rng& rng);
  Mat backward(const Mat& gy) const;

 private:
  Mat mask_;
  bool active_ = false;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, int dim, int heads, Group g, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& gy);
  /// Softmax weights of the last forward call, one N x N matrix per head.
  const std::vector<Mat>& attention() const { return attn_; }

 private:
  Linear q_, k_, v_, o_;
  int dim_ = 0, heads_ = 1;
  Mat qm_, km_, vm_;
  std::vector<Mat> attn_;
};

/// Pre-norm transformer block with DropPath on both residual branches.
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(ParamStore& ps, const std::string& name, int dim, int heads, double mlp_ratio, Group g, Rng& rng);
  Mat forward(const Mat& z, double drop_path, double dropout, bool training, Rng& rng);
  Mat backward(const Mat& gy);
  const MultiHeadAttention& attention() const { return attn_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Linear fc1_, fc2_;
  Gelu gelu_;
  Dropout drop_attn_, drop_mlp_;
  double keep1_ = 1.0, keep2_ = 1.0;  // DropPath scale per branch (0 = dropped)
};

/// Returns 0 (branch dropped) or 1/(1-rate) during training, 1 at evaluation.
double drop_path_scale(double rate, bool training, Rng& rng);

}  // namespace hacseg::nn
