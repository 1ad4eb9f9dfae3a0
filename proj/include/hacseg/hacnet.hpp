#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"

#include "hacseg/nn.hpp"
#include "hacseg/raster.hpp"

namespace hacseg {

struct HacConfig {
  int image_size = 512;
  int patch = 8;
  int embed_dim = 384;
  int depth = 8;
  int heads = 4;
  double mlp_ratio = 4.0;
  double dropout = 0.1;
  double drop_path = 0.1;  // rho_max
  int unet_base = 32;
  std::vector<int> unet_scales{1, 2, 4, 8};
  bool pos_embed = true;

  static HacConfig full_size();
  static HacConfig toy();

  int grid() const { return image_size / patch; }
  int tokens() const { return grid() * grid(); }
  int decoder_blocks() const;  // log2(patch)

  /// Throws Error{Config} on divisibility or range violations.
  void validate() const;

  nlohmann::json to_json() const;
  static HacConfig from_json(const nlohmann::json& j);
  friend bool operator==(const HacConfig&, const HacConfig&) = default;
};

/// rho_l = rho_max * l / L for l = 1..L.
std::vector<double> droppath_schedule(const HacConfig& cfg);

/// clamp(P_A + 2 P_U - 1, 0, 1).
ProbMap fuse(const ProbMap& pa, const ProbMap& pu);

/// Row-major token order: token t <-> grid cell (t / grid, t % grid).
nn::Tensor tokens_to_grid(const nn::Mat& z, int grid);
nn::Mat grid_to_tokens(const nn::Tensor& x);

nn::Tensor to_tensor(const RasterImage& img);
ProbMap to_probmap(const nn::Tensor& t);
RasterImage to_image(const nn::Tensor& t);

class HacNet {
 public:
  explicit HacNet(const HacConfig& cfg, std::uint64_t seed = 42);
  HacNet(const HacNet&) = delete;
  HacNet& operator=(const HacNet&) = delete;

  const HacConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  struct Maps {
    ProbMap pa, pu, phac;
  };

  /// Full pipeline. Evaluation mode (training = false) is deterministic.
  Maps forward(const RasterImage& img, bool training = false, std::uint64_t seed = 0);
  /// Stage-1 reconstruction through the full network.
  RasterImage forward_recon(const RasterImage& img, bool training = false, std::uint64_t seed = 0);

  // Stage building blocks; each caches its forward for the matching backward.

  /// N x d tokens of the p x p patch projection (plus positional embedding).
  nn::Mat patch_embed(const nn::Tensor& img);
  nn::Mat encode(const nn::Mat& tokens, bool training, nn::Rng& rng);
  /// Tokens -> P_A (1 x H x W).
  nn::Tensor prior_decode(const nn::Mat& z);
  nn::Tensor attention_forward(const nn::Tensor& img, bool training, nn::Rng& rng);
  void attention_backward(const nn::Tensor& g_pa);

  /// [I; P_A] -> final decoder features (unet_base x H x W).
  nn::Tensor unet_forward(const nn::Tensor& img, const nn::Tensor& pa);
  /// Returns the gradient w.r.t. the 4-channel input when requested.
  nn::Tensor unet_backward(const nn::Tensor& g_features, bool need_input_grad);
  nn::Tensor seg_head_forward(const nn::Tensor& features);  // P_U
  nn::Tensor seg_head_backward(const nn::Tensor& g_pu);
  nn::Tensor recon_head_forward(const nn::Tensor& features);
  nn::Tensor recon_head_backward(const nn::Tensor& g_recon);

  nn::EncoderBlock& block(int i) { return blocks_.at(static_cast<std::size_t>(i)); }

 private:
  HacConfig cfg_;
  nn::ParamStore params_;
  std::vector<double> rates_;

  nn::Param* patch_w_ = nullptr;  // 3p^2 x d
  nn::Param* patch_b_ = nullptr;
  nn::Param* pos_ = nullptr;      // N x d
  nn::Mat patches_;
  std::vector<nn::EncoderBlock> blocks_;
  struct DecoderBlock {
    nn::ConvTranspose2x2 up;
    nn::Norm norm;
    nn::Relu act;
  };
  std::vector<DecoderBlock> decoder_;
  nn::Conv2d pa_head_;
  nn::Sigmoid pa_sigmoid_;

  std::vector<nn::DoubleConv> enc_;
  std::vector<nn::MaxPool2> pools_;
  nn::DoubleConv bottleneck_;
  std::vector<nn::ConvTranspose2x2> ups_;
  std::vector<nn::DoubleConv> dec_;
  std::vector<int> enc_channels_;
  nn::Conv2d seg_head_, recon_head_;
  nn::Sigmoid seg_sigmoid_, recon_sigmoid_;
};

std::size_t count_parameters(const HacConfig& cfg);

/// Versioned little-endian container: magic, version, JSON header (config +
/// `meta`), named float32 blobs, FNV-1a checksum of all preceding bytes.
void save_checkpoint(const HacNet& net, const std::filesystem::path& path, const nlohmann::json& meta = {});

struct LoadedCheckpoint {
  std::unique_ptr<HacNet> net;
  nlohmann::json meta;
};

/// Throws Error{Data} for unreadable/corrupt files and Error{Config} when
/// `expected` is given and differs from the stored configuration.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<HacConfig>& expected = {});

}  // namespace hacseg
