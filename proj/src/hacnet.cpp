#include "hacseg/hacnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hacseg/error.hpp"

namespace hacseg {

using nn::Group;
using nn::Mat;
using nn::Real;
using nn::Tensor;

// ---- configuration ----

HacConfig HacConfig::full_size() { return {}; }

HacConfig HacConfig::toy() {
  HacConfig c;
  c.image_size = 64;
  c.patch = 8;
  c.embed_dim = 32;
  c.depth = 2;
  c.heads = 4;
  c.unet_base = 8;
  return c;
}

int HacConfig::decoder_blocks() const { return std::countr_zero(static_cast<unsigned>(patch)); }

void HacConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "hac config: " + what); };
  if (image_size <= 0 || patch <= 0) bad("image_size and patch must be positive");
  if (image_size % patch != 0) bad("image_size must be divisible by patch");
  if (!std::has_single_bit(static_cast<unsigned>(patch)) || patch < 2) {
    bad("patch must be a power of two >= 2 (decoder uses log2(patch) upsampling blocks)");
  }
  if (heads <= 0 || embed_dim <= 0 || embed_dim % heads != 0) bad("embed_dim must be divisible by heads");
  if (embed_dim % patch != 0) bad("embed_dim must be divisible by patch (decoder halves channels per block)");
  if (depth < 1) bad("depth must be >= 1");
  if (!(mlp_ratio > 0.0)) bad("mlp_ratio must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0,1)");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) bad("drop_path must lie in [0,1)");
  if (unet_base < 1 || unet_scales.empty()) bad("unet needs a positive base and at least one scale");
  for (int s : unet_scales)
    if (s < 1) bad("unet scales must be positive");
  const int down = 1 << unet_scales.size();
  if (image_size % down != 0) {
    bad("image_size must be divisible by " + std::to_string(down) + " for the U-Net");
  }
}

nlohmann::json HacConfig::to_json() const {
  return {{"image_size", image_size}, {"patch", patch},         {"embed_dim", embed_dim},
          {"depth", depth},           {"heads", heads},         {"mlp_ratio", mlp_ratio},
          {"dropout", dropout},       {"drop_path", drop_path}, {"unet_base", unet_base},
          {"unet_scales", unet_scales}, {"pos_embed", pos_embed}};
}

HacConfig HacConfig::from_json(const nlohmann::json& j) {
  try {
    HacConfig c;
    c.image_size = j.at("image_size");
    c.patch = j.at("patch");
    c.embed_dim = j.at("embed_dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.dropout = j.at("dropout");
    c.drop_path = j.at("drop_path");
    c.unet_base = j.at("unet_base");
    c.unet_scales = j.at("unet_scales").get<std::vector<int>>();
    c.pos_embed = j.at("pos_embed");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed config record: ") + e.what());
  }
}

std::vector<double> droppath_schedule(const HacConfig& cfg) {
  std::vector<double> r(static_cast<std::size_t>(cfg.depth));
  for (int l = 1; l <= cfg.depth; ++l) r[l - 1] = cfg.drop_path * l / cfg.depth;
  return r;
}

ProbMap fuse(const ProbMap& pa, const ProbMap& pu) {
  if (pa.width() != pu.width() || pa.height() != pu.height()) fail(ErrorKind::Data, "fuse: shape mismatch");
  ProbMap out(pa.width(), pa.height());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = std::clamp(pa[i] + (2.0 * pu[i] - 1.0), 0.0, 1.0);
  return out;
}

Tensor tokens_to_grid(const Mat& z, int grid) {
  if (z.rows() != static_cast<Eigen::Index>(grid) * grid) fail(ErrorKind::Config, "token count does not match grid");
  Tensor x(static_cast<int>(z.cols()), grid, grid);
  x.data = z.transpose();  // token t sits at (t / grid, t % grid)
  return x;
}

Mat grid_to_tokens(const Tensor& x) { return x.data.transpose(); }

Tensor to_tensor(const RasterImage& img) {
  Tensor t(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<Real>(img(x, y, c));
  return t;
}

ProbMap to_probmap(const Tensor& t) {
  ProbMap p(t.w, t.h);
  for (int i = 0; i < t.h * t.w; ++i) p[static_cast<std::size_t>(i)] = static_cast<double>(t.data(0, i));
  return p;
}

RasterImage to_image(const Tensor& t) {
  RasterImage img(t.w, t.h);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < 3; ++c) img(x, y, c) = static_cast<double>(t.at(c, y, x));
  return img;
}

// ---- network ----

HacNet::HacNet(const HacConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  rates_ = droppath_schedule(cfg_);
  const int d = cfg_.embed_dim;
  const int p = cfg_.patch;
  patch_w_ = &params_.add("patch.weight", 3 * p * p, d, Group::Attention, true, nn::Init::TruncNormal02, rng);
  patch_b_ = &params_.add("patch.bias", 1, d, Group::Attention, false, nn::Init::Zeros, rng);
  if (cfg_.pos_embed) {
    pos_ = &params_.add("pos_embed", cfg_.tokens(), d, Group::Attention, false, nn::Init::TruncNormal02, rng);
  }
  blocks_.reserve(static_cast<std::size_t>(cfg_.depth));
  for (int l = 0; l < cfg_.depth; ++l) {
    blocks_.emplace_back(params_, "block" + std::to_string(l), d, cfg_.heads, cfg_.mlp_ratio, Group::Attention, rng);
  }
  int ch = d;
  for (int b = 0; b < cfg_.decoder_blocks(); ++b) {
    const std::string name = "prior" + std::to_string(b);
    decoder_.push_back({nn::ConvTranspose2x2(params_, name + ".up", ch, ch / 2, Group::Attention, rng),
                        nn::Norm(params_, name + ".norm", ch / 2, Group::Attention, rng), nn::Relu()});
    ch /= 2;
  }
  pa_head_ = nn::Conv2d(params_, "prior_head", ch, 1, 1, Group::Attention, rng);

  int in = 4;
  for (std::size_t i = 0; i < cfg_.unet_scales.size(); ++i) {
    const int c = cfg_.unet_base * cfg_.unet_scales[i];
    enc_channels_.push_back(c);
    enc_.emplace_back(params_, "unet.enc" + std::to_string(i), in, c, Group::UNet, rng);
    pools_.emplace_back();
    in = c;
  }
  bottleneck_ = nn::DoubleConv(params_, "unet.bottleneck", in, 2 * in, Group::UNet, rng);
  in *= 2;
  ups_.resize(enc_channels_.size());
  dec_.resize(enc_channels_.size());
  for (int i = static_cast<int>(enc_channels_.size()) - 1; i >= 0; --i) {
    const int c = enc_channels_[i];
    ups_[i] = nn::ConvTranspose2x2(params_, "unet.up" + std::to_string(i), in, c, Group::UNet, rng);
    dec_[i] = nn::DoubleConv(params_, "unet.dec" + std::to_string(i), 2 * c, c, Group::UNet, rng);
    in = c;
  }
  seg_head_ = nn::Conv2d(params_, "unet.head", in, 1, 1, Group::UNet, rng);
  recon_head_ = nn::Conv2d(params_, "recon.head", in, 3, 1, Group::Recon, rng);
}

Mat HacNet::patch_embed(const Tensor& img) {
  if (img.c != 3 || img.h != cfg_.image_size || img.w != cfg_.image_size) {
    fail(ErrorKind::Data, "input is " + std::to_string(img.w) + "x" + std::to_string(img.h) + ", network expects " +
                              std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size));
  }
  const int p = cfg_.patch;
  const int g = cfg_.grid();
  patches_.resize(cfg_.tokens(), 3 * p * p);
  for (int ty = 0; ty < g; ++ty)
    for (int tx = 0; tx < g; ++tx) {
      Real* row = patches_.row(ty * g + tx).data();
      for (int c = 0; c < 3; ++c)
        for (int ky = 0; ky < p; ++ky)
          for (int kx = 0; kx < p; ++kx) *row++ = img.at(c, ty * p + ky, tx * p + kx);
    }
  Mat z = patches_ * patch_w_->value;
  z.rowwise() += patch_b_->value.row(0);
  if (pos_) z += pos_->value;
  return z;
}

Mat HacNet::encode(const Mat& tokens, bool training, nn::Rng& rng) {
  Mat z = tokens;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    z = blocks_[l].forward(z, rates_[l], cfg_.dropout, training, rng);
    if (!z.allFinite()) fail(ErrorKind::Numeric, "non-finite activation in encoder block " + std::to_string(l));
  }
  return z;
}

Tensor HacNet::prior_decode(const Mat& z) {
  Tensor x = tokens_to_grid(z, cfg_.grid());
  for (auto& b : decoder_) x = b.act.forward(b.norm.forward(b.up.forward(x)));
  return pa_sigmoid_.forward(pa_head_.forward(x));
}

Tensor HacNet::attention_forward(const Tensor& img, bool training, nn::Rng& rng) {
  return prior_decode(encode(patch_embed(img), training, rng));
}

void HacNet::attention_backward(const Tensor& g_pa) {
  Tensor g = pa_head_.backward(pa_sigmoid_.backward(g_pa));
  for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
    g = it->up.backward(it->norm.backward(it->act.backward(g)));
  }
  Mat gz = grid_to_tokens(g);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) gz = it->backward(gz);
  if (pos_) pos_->grad += gz;
  patch_w_->grad.noalias() += patches_.transpose() * gz;
  patch_b_->grad.row(0) += gz.colwise().sum();
}

Tensor HacNet::unet_forward(const Tensor& img, const Tensor& pa) {
  Tensor x(4, img.h, img.w);
  x.data.topRows(3) = img.data;
  x.data.row(3) = pa.data.row(0);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    skips.push_back(enc_[i].forward(x));
    x = pools_[i].forward(skips.back());
  }
  x = bottleneck_.forward(x);
  for (int i = static_cast<int>(enc_.size()) - 1; i >= 0; --i) {
    const Tensor up = ups_[i].forward(x);
    Tensor cat(up.c + skips[i].c, up.h, up.w);
    cat.data.topRows(up.c) = up.data;
    cat.data.bottomRows(skips[i].c) = skips[i].data;
    x = dec_[i].forward(cat);
  }
  return x;
}

Tensor HacNet::unet_backward(const Tensor& g_features, bool need_input_grad) {
  Tensor g = g_features;
  std::vector<Tensor> g_skips(enc_.size());
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const Tensor gcat = dec_[i].backward(g);
    const int c = enc_channels_[i];
    Tensor gup(c, gcat.h, gcat.w);
    gup.data = gcat.data.topRows(c);
    g_skips[i] = Tensor(c, gcat.h, gcat.w);
    g_skips[i].data = gcat.data.bottomRows(c);
    g = ups_[i].backward(gup);
  }
  g = bottleneck_.backward(g);
  for (int i = static_cast<int>(enc_.size()) - 1; i >= 0; --i) {
    g = pools_[i].backward(g);
    g.data += g_skips[i].data;
    g = enc_[i].backward(g, need_input_grad || i > 0);
  }
  return g;
}

Tensor HacNet::seg_head_forward(const Tensor& features) { return seg_sigmoid_.forward(seg_head_.forward(features)); }

Tensor HacNet::seg_head_backward(const Tensor& g_pu) { return seg_head_.backward(seg_sigmoid_.backward(g_pu)); }

Tensor HacNet::recon_head_forward(const Tensor& features) {
  return recon_sigmoid_.forward(recon_head_.forward(features));
}

Tensor HacNet::recon_head_backward(const Tensor& g_recon) {
  return recon_head_.backward(recon_sigmoid_.backward(g_recon));
}

HacNet::Maps HacNet::forward(const RasterImage& img, bool training, std::uint64_t seed) {
  nn::Rng rng(seed);
  const Tensor x = to_tensor(img);
  const Tensor pa = attention_forward(x, training, rng);
  const Tensor pu = seg_head_forward(unet_forward(x, pa));
  Maps m{to_probmap(pa), to_probmap(pu), {}};
  m.phac = fuse(m.pa, m.pu);
  return m;
}

RasterImage HacNet::forward_recon(const RasterImage& img, bool training, std::uint64_t seed) {
  nn::Rng rng(seed);
  const Tensor x = to_tensor(img);
  const Tensor pa = attention_forward(x, training, rng);
  return to_image(recon_head_forward(unet_forward(x, pa)));
}

std::size_t count_parameters(const HacConfig& cfg) { return HacNet(cfg, 0).params().count(); }

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'H', 'A', 'C', 'S', 'E', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) fail(ErrorKind::Data, "checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const HacNet& net, const std::filesystem::path& path, const nlohmann::json& meta) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  nlohmann::json header = {{"config", net.config().to_json()}, {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
  const std::string hdr = header.dump();
  put_u32(out, static_cast<std::uint32_t>(hdr.size()));
  out += hdr;
  const auto& params = net.params().all();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const nn::Param& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(p.value.data()[i]));
  }
  put_u64(out, fnv1a(out.data(), out.size()));
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<HacConfig>& expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorKind::Data, "not a checkpoint: " + path.string());
  }
  {
    Reader tail{buf, buf.size() - 8};
    if (tail.u64() != fnv1a(buf.data(), buf.size() - 8)) fail(ErrorKind::Data, "checkpoint checksum mismatch");
  }
  Reader r{buf, sizeof kMagic};
  const std::uint32_t version = r.u32();
  if (version != kVersion) fail(ErrorKind::Data, "unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("checkpoint header: ") + e.what());
  }
  const HacConfig cfg = HacConfig::from_json(header.at("config"));
  if (expected && !(*expected == cfg)) {
    fail(ErrorKind::Config, "checkpoint config mismatch: stored " + cfg.to_json().dump() + ", expected " +
                                expected->to_json().dump());
  }
  LoadedCheckpoint out;
  out.meta = header.value("meta", nlohmann::json::object());
  out.net = std::make_unique<HacNet>(cfg, 0);
  const std::uint32_t n = r.u32();
  if (n != out.net->params().all().size()) fail(ErrorKind::Data, "checkpoint parameter count mismatch");
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::string name = r.bytes(r.u32());
    nn::Param& p = out.net->params().get(name);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != p.value.rows() || cols != p.value.cols()) fail(ErrorKind::Data, "checkpoint shape mismatch for " + name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = std::bit_cast<float>(r.u32());
  }
  return out;
}

}  // namespace hacseg
