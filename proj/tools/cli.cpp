#include "hacseg/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "hacseg/losses.hpp"
#include "hacseg/manifest.hpp"
#include "hacseg/metrics.hpp"
#include "hacseg/raster.hpp"
#include "hacseg/topology.hpp"

namespace hacseg::cli {

namespace fs = std::filesystem;

// ---- configuration ----

const std::vector<ConfigKey>& config_schema() {
  using K = KeyType;
  static const std::vector<ConfigKey> schema = {
      {"data.root", K::Text, "", "dataset root for relative manifest paths (falls back to BLAVESS_DATA_DIR)"},
      {"model.image_size", K::Int, "512", "input height = width (px)"},
      {"model.patch", K::Int, "8", "patch size p"},
      {"model.embed_dim", K::Int, "384", "token dimension d"},
      {"model.depth", K::Int, "8", "encoder blocks L"},
      {"model.heads", K::Int, "4", "attention heads"},
      {"model.mlp_ratio", K::Real, "4.0", "MLP hidden width / d"},
      {"model.dropout", K::Real, "0.1", "dropout rate in encoder branches"},
      {"model.drop_path", K::Real, "0.1", "deepest-block DropPath rate"},
      {"model.unet_base", K::Int, "32", "U-Net base channels"},
      {"model.unet_scales", K::IntList, "1,2,4,8", "U-Net channel multipliers per stage"},
      {"model.pos_embed", K::Bool, "true", "learned positional embedding"},
      {"train.warmup_epochs", K::Real, "10", "linear warmup length (epochs)"},
      {"train.base_lr", K::Real, "1e-4", "peak learning rate"},
      {"train.batch_size", K::Int, "1", "samples per optimiser step"},
      {"train.beta1", K::Real, "0.9", "AdamW beta1"},
      {"train.beta2", K::Real, "0.999", "AdamW beta2"},
      {"train.weight_decay", K::Real, "0.01", "AdamW decoupled weight decay"},
      {"train.eps", K::Real, "1e-8", "AdamW epsilon"},
      {"train.patience", K::Int, "50", "early-stopping patience (epochs)"},
      {"train.validation_frames", K::Int, "5", "training pairs held out for early stopping"},
      {"train.max_iterations", K::Int, "0", "iteration cap per stage (0 = none)"},
      {"stage1.epochs", K::Int, "100", "pretraining epochs"},
      {"stage2.epochs", K::Int, "200", "attention training epochs"},
      {"stage3.epochs", K::Int, "100", "refinement epochs"},
      {"stage2.tversky", K::Real, "1.5", "stage-2 Tversky weight"},
      {"stage2.cldice", K::Real, "0.4", "stage-2 soft clDice weight"},
      {"stage2.dice", K::Real, "0.2", "stage-2 soft Dice weight"},
      {"stage2.bce", K::Real, "1.0", "stage-2 BCE weight"},
      {"stage2.alpha", K::Real, "0.2", "stage-2 Tversky false-positive weight"},
      {"stage2.beta", K::Real, "0.8", "stage-2 Tversky false-negative weight"},
      {"stage3.tversky", K::Real, "2.0", "stage-3 Tversky weight"},
      {"stage3.cldice", K::Real, "1.5", "stage-3 soft clDice weight"},
      {"stage3.alpha", K::Real, "0.1", "stage-3 Tversky false-positive weight"},
      {"stage3.beta", K::Real, "0.9", "stage-3 Tversky false-negative weight"},
      {"loss.skeleton_iters", K::Int, "10", "soft-skeleton iterations"},
      {"targets.min_path", K::Real, "100", "shortest kept skeleton component (px)"},
      {"augment.bubble_count_min", K::Int, "2", "bubbles per frame, lower bound"},
      {"augment.bubble_count_max", K::Int, "6", "bubbles per frame, upper bound"},
      {"augment.bubble_axis_min", K::Real, "4", "bubble semi-axis lower bound (px)"},
      {"augment.bubble_axis_max", K::Real, "24", "bubble semi-axis upper bound (px)"},
      {"augment.vignette_min", K::Real, "0", "vignetting strength lower bound"},
      {"augment.vignette_max", K::Real, "0.45", "vignetting strength upper bound"},
      {"augment.gain_min", K::Real, "0.7", "global gain lower bound"},
      {"augment.gain_max", K::Real, "1.3", "global gain upper bound"},
      {"augment.contrast_min", K::Real, "0.1", "local contrast reduction lower bound"},
      {"augment.contrast_max", K::Real, "0.4", "local contrast reduction upper bound"},
      {"augment.contrast_window", K::Int, "9", "box window of the contrast reduction (odd px)"},
      {"augment.mode", K::Text, "joint", "joint | single"},
      {"profile.fov_threshold", K::Real, "0.04", "FOV luminance threshold"},
      {"profile.ti_chord_step", K::Int, "4", "tortuosity polyline step (px)"},
      {"profile.vi_center", K::Real, "0.4", "vignetting centre radius fraction"},
      {"profile.vi_periphery", K::Real, "0.75", "vignetting periphery radius fraction"},
      {"eval.threshold", K::Real, "0.5", "binarisation threshold"},
      {"overlay.threshold", K::Real, "0.5", "overlay binarisation threshold"},
      {"overlay.color", K::IntList, "0,255,0", "overlay RGB colour"},
      {"overlay.alpha", K::Real, "0.7", "overlay opacity"},
      {"synthetic.seed", K::Int, "7", "seed of the synthetic vessel corpus"},
      {"synthetic.holdout", K::Real, "0.1", "fraction of the synthetic corpus kept for eval"},
  };
  return schema;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : config_schema())
    if (k.name == name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
std::optional<T> parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

std::optional<std::vector<int>> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = parse_number<int>(trim(item));
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

bool well_typed(KeyType type, const std::string& v) {
  switch (type) {
    case KeyType::Int: return parse_number<long>(v).has_value();
    case KeyType::Real: return parse_number<double>(v).has_value();
    case KeyType::Bool: return v == "true" || v == "false";
    case KeyType::IntList: return parse_list(v).has_value();
    case KeyType::Text: return true;
  }
  return false;
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::Int: return "integer";
    case KeyType::Real: return "number";
    case KeyType::Bool: return "true/false";
    case KeyType::IntList: return "comma-separated integers";
    case KeyType::Text: return "text";
  }
  return "value";
}

}  // namespace

RunConfig::RunConfig() {
  for (const ConfigKey& k : config_schema()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (!k) fail(ErrorKind::Config, "unknown config key '" + key + "'");
  if (!well_typed(k->type, value)) {
    fail(ErrorKind::Config, "config key '" + key + "' expects " + type_name(k->type) + ", got '" + value + "'");
  }
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorKind::Config, "expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Config, "cannot read config file " + path.string());
  std::string line;
  std::map<std::string, int> seen;
  for (int lineno = 1; std::getline(f, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (seen.count(key)) {
      fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": key '" + key + "' repeated");
    }
    seen[key] = lineno;
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Config, "unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::integer(const std::string& key) const { return *parse_number<long>(text(key)); }
double RunConfig::real(const std::string& key) const { return *parse_number<double>(text(key)); }
bool RunConfig::boolean(const std::string& key) const { return text(key) == "true"; }
std::vector<int> RunConfig::int_list(const std::string& key) const { return *parse_list(text(key)); }

std::string RunConfig::dump() const {
  std::string out;
  for (const ConfigKey& k : config_schema()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const ConfigKey& k : config_schema()) j[k.name] = values_.at(k.name);
  return j;
}

std::string config_help() {
  std::ostringstream os;
  os << "Config keys (key default description); set them in --config files or with --set key=value:\n";
  for (const ConfigKey& k : config_schema()) {
    const std::string def = k.default_value.empty() ? "\"\"" : k.default_value;
    os << "  " << std::left << std::setw(28) << k.name << ' ' << std::setw(10) << def << ' ' << k.help << '\n';
  }
  return os.str();
}

HacConfig model_config(const RunConfig& c) {
  HacConfig m;
  m.image_size = static_cast<int>(c.integer("model.image_size"));
  m.patch = static_cast<int>(c.integer("model.patch"));
  m.embed_dim = static_cast<int>(c.integer("model.embed_dim"));
  m.depth = static_cast<int>(c.integer("model.depth"));
  m.heads = static_cast<int>(c.integer("model.heads"));
  m.mlp_ratio = c.real("model.mlp_ratio");
  m.dropout = c.real("model.dropout");
  m.drop_path = c.real("model.drop_path");
  m.unet_base = static_cast<int>(c.integer("model.unet_base"));
  m.unet_scales = c.int_list("model.unet_scales");
  m.pos_embed = c.boolean("model.pos_embed");
  m.validate();
  return m;
}

TrainPlan train_plan(const RunConfig& c, int stage, std::uint64_t seed) {
  TrainPlan p = TrainPlan::defaults(stage);
  p.epochs = static_cast<int>(c.integer("stage" + std::to_string(stage) + ".epochs"));
  p.warmup_epochs = c.real("train.warmup_epochs");
  p.base_lr = c.real("train.base_lr");
  p.batch_size = static_cast<int>(c.integer("train.batch_size"));
  p.beta1 = c.real("train.beta1");
  p.beta2 = c.real("train.beta2");
  p.weight_decay = c.real("train.weight_decay");
  p.eps = c.real("train.eps");
  p.patience = static_cast<int>(c.integer("train.patience"));
  p.validation_frames = static_cast<int>(c.integer("train.validation_frames"));
  if (const long cap = c.integer("train.max_iterations"); cap > 0) p.max_iterations = cap;
  p.min_path = c.real("targets.min_path");
  p.threshold = c.real("eval.threshold");
  p.seed = seed;
  if (stage == 2) {
    p.weights = LossWeights::stage2();
    p.weights.tversky = c.real("stage2.tversky");
    p.weights.cldice = c.real("stage2.cldice");
    p.weights.dice = c.real("stage2.dice");
    p.weights.bce = c.real("stage2.bce");
    p.weights.alpha = c.real("stage2.alpha");
    p.weights.beta = c.real("stage2.beta");
  } else if (stage == 3) {
    p.weights = LossWeights::stage3();
    p.weights.tversky = c.real("stage3.tversky");
    p.weights.cldice = c.real("stage3.cldice");
    p.weights.alpha = c.real("stage3.alpha");
    p.weights.beta = c.real("stage3.beta");
  }
  p.weights.skeleton_iters = static_cast<int>(c.integer("loss.skeleton_iters"));
  p.validate();
  return p;
}

CorruptionSpec corruption_spec(const RunConfig& c, std::uint64_t seed) {
  CorruptionSpec s;
  s.bubble_count = {static_cast<int>(c.integer("augment.bubble_count_min")),
                    static_cast<int>(c.integer("augment.bubble_count_max"))};
  s.bubble_axes = {c.real("augment.bubble_axis_min"), c.real("augment.bubble_axis_max")};
  s.vignette_strength = {c.real("augment.vignette_min"), c.real("augment.vignette_max")};
  s.gain = {c.real("augment.gain_min"), c.real("augment.gain_max")};
  s.contrast_strength = {c.real("augment.contrast_min"), c.real("augment.contrast_max")};
  s.contrast_patch_scale = static_cast<int>(c.integer("augment.contrast_window"));
  const std::string& mode = c.text("augment.mode");
  if (mode == "joint") {
    s.mode = CorruptionMode::Joint;
  } else if (mode == "single") {
    s.mode = CorruptionMode::Single;
  } else {
    fail(ErrorKind::Config, "augment.mode must be joint or single, got '" + mode + "'");
  }
  s.seed = seed;
  s.validate();
  return s;
}

ProfileOptions profile_options(const RunConfig& c) {
  ProfileOptions o;
  o.fov_threshold = c.real("profile.fov_threshold");
  o.ti_chord_step = static_cast<int>(c.integer("profile.ti_chord_step"));
  o.vi_center_fraction = c.real("profile.vi_center");
  o.vi_periphery_fraction = c.real("profile.vi_periphery");
  if (o.ti_chord_step < 1) fail(ErrorKind::Config, "profile.ti_chord_step must be >= 1");
  if (!(o.vi_center_fraction > 0 && o.vi_center_fraction < o.vi_periphery_fraction &&
        o.vi_periphery_fraction < 1)) {
    fail(ErrorKind::Config, "need 0 < profile.vi_center < profile.vi_periphery < 1");
  }
  return o;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data:
    case ErrorKind::Io:
    case ErrorKind::UndefinedMetric: return 3;
    case ErrorKind::Numeric: return 4;
  }
  return 1;
}

// ---- commands ----

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 42;
  int threads = 1;
  std::string out;
};

struct Context {
  RunConfig config;
  std::uint64_t seed = 42;
  fs::path out;
  std::ostream* log = nullptr;
};

std::optional<fs::path> data_root(const RunConfig& c) {
  if (!c.text("data.root").empty()) return fs::path(c.text("data.root"));
  if (const char* env = std::getenv("BLAVESS_DATA_DIR"); env && *env) return fs::path(env);
  return std::nullopt;
}

fs::path resolve_input(const RunConfig& c, const std::string& arg, const char* what) {
  if (arg.empty()) fail(ErrorKind::Config, std::string("missing --") + what);
  fs::path p(arg);
  if (!fs::exists(p) && p.is_relative()) {
    if (auto root = data_root(c); root && fs::exists(*root / p)) p = *root / p;
  }
  if (!fs::exists(p)) fail(ErrorKind::Data, std::string(what) + " not found: " + arg);
  return p;
}

std::vector<ManifestEntry> manifest_of(const Context& ctx, const std::string& arg) {
  return read_manifest(resolve_input(ctx.config, arg, "in"), data_root(ctx.config));
}

fs::path require_out(const Context& ctx) {
  if (ctx.out.empty()) fail(ErrorKind::Config, "missing --out");
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + ctx.out.string());
  return ctx.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) fail(ErrorKind::Io, "cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json echo(const Context& ctx, const std::string& command) {
  return {{"command", command}, {"seed", ctx.seed}, {"config", ctx.config.to_json()}};
}

void echo_config(const Context& ctx, const fs::path& dir, const std::string& command) {
  write_text(dir / (command + ".config"), "# effective configuration, seed = " + std::to_string(ctx.seed) + "\n" +
                                             ctx.config.dump());
}

// Synthetic corpus split: training commands use the head, eval the tail.
std::vector<LabeledFrame> synthetic_split(const Context& ctx, int count, bool training) {
  const int size = static_cast<int>(ctx.config.integer("model.image_size"));
  auto all = make_synthetic_dataset(count, size, static_cast<std::uint64_t>(ctx.config.integer("synthetic.seed")));
  const double holdout = ctx.config.real("synthetic.holdout");
  if (!(holdout >= 0.0 && holdout < 1.0)) fail(ErrorKind::Config, "synthetic.holdout must lie in [0,1)");
  const auto n_test = static_cast<std::size_t>(std::lround(holdout * count));
  const auto cut = all.begin() + static_cast<std::ptrdiff_t>(all.size() - n_test);
  return training ? std::vector<LabeledFrame>(all.begin(), cut) : std::vector<LabeledFrame>(cut, all.end());
}

std::vector<LabeledFrame> labeled_inputs(const Context& ctx, const std::string& in, int synthetic, bool training) {
  if (synthetic > 0) return synthetic_split(ctx, synthetic, training);
  return load_labeled(manifest_of(ctx, in));
}

int cmd_profile(const Context& ctx, const std::string& in) {
  const auto entries = manifest_of(ctx, in);
  const DatasetReport report = profile_dataset(entries, profile_options(ctx.config));
  const fs::path dir = require_out(ctx);
  nlohmann::json j = to_json(report);
  j["run"] = echo(ctx, "profile");
  write_json(dir / "profile.json", j);
  write_text(dir / "profile_table.csv", to_table_csv(report));
  echo_config(ctx, dir, "profile");
  *ctx.log << "profiled " << report.frames.size() << " frames (" << report.failures.size() << " failed) -> "
           << (dir / "profile.json").string() << "\n";
  return 0;
}

int cmd_targets(const Context& ctx, const std::string& in) {
  const auto entries = manifest_of(ctx, in);
  const fs::path dir = require_out(ctx);
  const double min_path = ctx.config.real("targets.min_path");
  if (!(min_path >= 0.0)) fail(ErrorKind::Config, "targets.min_path must be >= 0");
  nlohmann::json frames = nlohmann::json::array();
  for (const ManifestEntry& e : entries) {
    if (!e.mask) fail(ErrorKind::Data, "manifest entry without mask: " + e.image.string());
    const BinaryMask annotation = load_mask(*e.mask);
    const PruneResult r = prune_targets_detailed(annotation, min_path);
    const fs::path path = dir / (frame_stem(e.image) + "_mstar.png");
    save_mask(r.target, path);
    frames.push_back({{"frame", frame_stem(e.image)},
                      {"target", path.filename().string()},
                      {"annotation_px", annotation.count()},
                      {"target_px", r.target.count()},
                      {"skeleton_px", r.pruned_skeleton.count()}});
  }
  nlohmann::json j = echo(ctx, "targets");
  j["frames"] = frames;
  write_json(dir / "targets.json", j);
  echo_config(ctx, dir, "targets");
  *ctx.log << "wrote " << entries.size() << " targets to " << dir.string() << "\n";
  return 0;
}

int cmd_augment(const Context& ctx, const std::string& in) {
  const auto entries = manifest_of(ctx, in);
  const fs::path dir = require_out(ctx);
  const auto written = augment_dataset(entries, corruption_spec(ctx.config, ctx.seed), dir);
  echo_config(ctx, dir, "augment");
  *ctx.log << "wrote " << written.size() << " corrupted frames to " << dir.string() << "\n";
  return 0;
}

nlohmann::json checkpoint_meta(const Context& ctx, int stage, const TrainResult& r, const std::string& command) {
  return {{"stage", stage},
          {"command", command},
          {"seed", ctx.seed},
          {"iterations", r.iterations},
          {"diverged", r.diverged},
          {"config", ctx.config.to_json()}};
}

int finish_training(const Context& ctx, HacNet& net, int stage, TrainResult& r, const std::string& command) {
  const fs::path dir = require_out(ctx);
  const fs::path ckpt = dir / ("stage" + std::to_string(stage) + ".ckpt");
  save_checkpoint(net, ckpt, checkpoint_meta(ctx, stage, r, command));
  r.manifest["run"] = echo(ctx, command);
  r.manifest["checkpoint"] = ckpt.filename().string();
  write_json(dir / ("stage" + std::to_string(stage) + "_manifest.json"), r.manifest);
  echo_config(ctx, dir, command);
  if (r.diverged) {
    fail(ErrorKind::Numeric, "training diverged (non-finite loss); last finite weights saved to " + ckpt.string());
  }
  const double last = r.losses.empty() ? 0.0 : r.losses.back();
  *ctx.log << "stage " << stage << ": " << r.iterations << " iterations, last loss " << last << " -> "
           << ckpt.string() << "\n";
  return 0;
}

std::unique_ptr<HacNet> load_for(const Context& ctx, const std::string& path, int min_stage, const char* missing) {
  if (path.empty() || !fs::exists(path)) {
    fail(ErrorKind::Config, std::string(missing) + (path.empty() ? "" : ": " + path));
  }
  LoadedCheckpoint ck = load_checkpoint(path, model_config(ctx.config));
  const int stage = ck.meta.value("stage", 0);
  if (stage < min_stage) {
    fail(ErrorKind::Config, std::string(missing) + ": " + path + " holds stage-" + std::to_string(stage) + " weights");
  }
  return std::move(ck.net);
}

int cmd_pretrain(const Context& ctx, const std::string& in, int synthetic) {
  std::vector<RasterImage> frames;
  if (synthetic > 0) {
    for (auto& f : synthetic_split(ctx, synthetic, true)) frames.push_back(std::move(f.image));
  } else {
    for (const ManifestEntry& e : manifest_of(ctx, in)) {
      RasterImage img = load_image(e.image);
      img.set_fov(extract_fov(img, ctx.config.real("profile.fov_threshold")).mask);
      frames.push_back(std::move(img));
    }
  }
  HacNet net(model_config(ctx.config), ctx.seed);
  TrainResult r = run_stage1(net, train_plan(ctx.config, 1, ctx.seed), frames, corruption_spec(ctx.config, ctx.seed));
  return finish_training(ctx, net, 1, r, "pretrain");
}

int cmd_train_attn(const Context& ctx, const std::string& in, int synthetic, const std::string& init) {
  const auto pairs = labeled_inputs(ctx, in, synthetic, true);
  std::unique_ptr<HacNet> net = init.empty() ? std::make_unique<HacNet>(model_config(ctx.config), ctx.seed)
                                             : load_for(ctx, init, 1, "missing pretraining checkpoint");
  TrainResult r = run_stage2(*net, train_plan(ctx.config, 2, ctx.seed), pairs);
  r.manifest["initialised_from"] = init.empty() ? "random" : fs::path(init).filename().string();
  return finish_training(ctx, *net, 2, r, "train-attn");
}

int cmd_train_hac(const Context& ctx, const std::string& in, int synthetic, const std::string& init) {
  std::unique_ptr<HacNet> net = load_for(ctx, init, 2, "missing attention checkpoint");
  const auto pairs = labeled_inputs(ctx, in, synthetic, true);
  TrainResult r = run_stage3(*net, train_plan(ctx.config, 3, ctx.seed), pairs);
  r.manifest["initialised_from"] = fs::path(init).filename().string();
  return finish_training(ctx, *net, 3, r, "train-hac");
}

int cmd_eval(const Context& ctx, const std::string& in, int synthetic, const std::string& ckpt) {
  std::unique_ptr<HacNet> net = load_for(ctx, ckpt, 0, "missing checkpoint");
  const auto frames = labeled_inputs(ctx, in, synthetic, false);
  if (frames.empty()) fail(ErrorKind::Data, "no evaluation frames");
  const double thr = ctx.config.real("eval.threshold");
  const Evaluation ev = evaluate(*net, frames, thr);
  nlohmann::json j = echo(ctx, "eval");
  j["checkpoint"] = fs::path(ckpt).filename().string();
  j["hac"] = to_json(ev.hac, thr);
  j["attention"] = to_json(ev.attention, thr);
  j["unet"] = to_json(ev.unet, thr);
  const fs::path dir = require_out(ctx);
  write_json(dir / "metrics.json", j);
  echo_config(ctx, dir, "eval");
  const MetricsSummary s = summarize(ev.hac);
  *ctx.log << "evaluated " << frames.size() << " frames: dice " << s.mean.at("dice") << ", cldice "
           << (s.mean.count("cldice") ? s.mean.at("cldice") : 0.0) << "\n";
  return 0;
}

int cmd_infer(const Context& ctx, const std::string& in, const std::string& ckpt) {
  std::unique_ptr<HacNet> net = load_for(ctx, ckpt, 0, "missing checkpoint");
  if (ctx.out.empty()) fail(ErrorKind::Config, "missing --out <stem>");
  RasterImage img = load_image(resolve_input(ctx.config, in, "in"));
  img.set_fov(extract_fov(img, ctx.config.real("profile.fov_threshold")).mask);
  const auto maps = net->forward(img);
  if (ctx.out.has_parent_path()) fs::create_directories(ctx.out.parent_path());
  const std::string stem = ctx.out.string();
  save_probmap(maps.pa, stem + "_pa.png");
  save_probmap(maps.pu, stem + "_pu.png");
  save_probmap(maps.phac, stem + "_phac.png");
  *ctx.log << "wrote " << stem << "_{pa,pu,phac}.png\n";
  return 0;
}

int cmd_overlay(const Context& ctx, const std::string& in, const std::string& prob, const std::string& ckpt) {
  RasterImage img = load_image(resolve_input(ctx.config, in, "in"));
  ProbMap p;
  if (!prob.empty()) {
    p = load_probmap(resolve_input(ctx.config, prob, "prob"));
  } else if (!ckpt.empty()) {
    img.set_fov(extract_fov(img, ctx.config.real("profile.fov_threshold")).mask);
    p = load_for(ctx, ckpt, 0, "missing checkpoint")->forward(img).phac;
  } else {
    fail(ErrorKind::Config, "overlay needs --prob or --ckpt");
  }
  if (!p.same_shape(img.fov())) fail(ErrorKind::Data, "probability map and image sizes differ");
  const auto color = ctx.config.int_list("overlay.color");
  if (color.size() != 3) fail(ErrorKind::Config, "overlay.color needs three components");
  const double alpha = ctx.config.real("overlay.alpha");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::Config, "overlay.alpha must lie in [0,1]");
  const BinaryMask hit = p.threshold(ctx.config.real("overlay.threshold"));
  RasterImage out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (!hit(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        out(x, y, c) = (1.0 - alpha) * img(x, y, c) + alpha * std::clamp(color[c], 0, 255) / 255.0;
      }
    }
  if (ctx.out.empty()) fail(ErrorKind::Config, "missing --out <png>");
  if (ctx.out.has_parent_path()) fs::create_directories(ctx.out.parent_path());
  save_image(out, ctx.out);
  *ctx.log << "wrote " << ctx.out.string() << " (" << hit.count() << " px above threshold)\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vessel segmentation toolkit: profiling, targets, corruption, staged training, evaluation."};
  app.name("hacseg");
  app.require_subcommand(1);
  app.footer(config_help());
  Globals g;
  app.add_option("--config", g.config_file, "key = value configuration file");
  app.add_option("--set", g.overrides, "override one config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "random seed; 0 draws one from the system entropy source")->default_val(42);
  app.add_option("--threads", g.threads, "worker threads for linear algebra")->default_val(1);
  app.add_option("--out", g.out, "output directory (infer/overlay: output stem/file)");

  std::string in, prob, ckpt, init, spec_file;
  int synthetic = 0;
  std::optional<double> min_path;

  auto* profile = app.add_subcommand("profile", "image-quality metrics per frame and dataset aggregate");
  profile->add_option("--in", in, "manifest (image[,mask] per line)")->required();

  auto* targets = app.add_subcommand("targets", "topology-aware pruned training targets");
  targets->add_option("--in", in, "labeled manifest")->required();
  targets->add_option("--min-path", min_path, "shortest kept skeleton component (px)");

  auto* augment = app.add_subcommand("augment", "physics-aware corruption preview with provenance sidecars");
  augment->add_option("--in", in, "manifest")->required();
  augment->add_option("--spec", spec_file, "corruption configuration (same format as --config)");

  auto* pretrain = app.add_subcommand("pretrain", "stage 1: corruption-reconstruction pretraining");
  auto* train_attn = app.add_subcommand("train-attn", "stage 2: attention backbone on pruned targets");
  auto* train_hac = app.add_subcommand("train-hac", "stage 3: U-Net refinement with frozen attention");
  auto* eval = app.add_subcommand("eval", "thresholded metrics of P_HAC, P_A and P_U");
  for (auto* sc : {pretrain, train_attn, train_hac, eval}) {
    sc->add_option("--in", in, "manifest (labeled for train-attn, train-hac, eval)");
    sc->add_option("--synthetic", synthetic, "use N procedurally generated frames instead of a manifest");
  }
  train_attn->add_option("--init", init, "stage-1 checkpoint");
  train_hac->add_option("--init", init, "stage-2 checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();

  auto* infer = app.add_subcommand("infer", "write P_A, P_U and P_HAC for one image");
  infer->add_option("--ckpt", ckpt, "checkpoint")->required();
  infer->add_option("--in", in, "input image")->required();

  auto* overlay = app.add_subcommand("overlay", "draw P_HAC >= threshold over the input frame");
  overlay->add_option("--in", in, "input image")->required();
  overlay->add_option("--prob", prob, "probability map PNG");
  overlay->add_option("--ckpt", ckpt, "checkpoint (instead of --prob)");

  for (auto* sc : app.get_subcommands({})) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "hacseg: error[config]: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    Context ctx;
    if (!g.config_file.empty()) ctx.config.load_file(g.config_file);
    if (!spec_file.empty()) ctx.config.load_file(spec_file);
    for (const std::string& o : g.overrides) ctx.config.set_assignment(o);
    if (min_path) ctx.config.set("targets.min_path", std::to_string(*min_path));
    if (g.threads < 1) fail(ErrorKind::Config, "--threads must be >= 1");
    Eigen::setNbThreads(g.threads);
    ctx.seed = g.seed != 0 ? g.seed : (static_cast<std::uint64_t>(std::random_device{}()) << 32) | std::random_device{}();
    ctx.out = g.out;
    ctx.log = &out;
    if (synthetic < 0) fail(ErrorKind::Config, "--synthetic must be >= 0");

    if (profile->parsed()) return cmd_profile(ctx, in);
    if (targets->parsed()) return cmd_targets(ctx, in);
    if (augment->parsed()) return cmd_augment(ctx, in);
    if (pretrain->parsed()) return cmd_pretrain(ctx, in, synthetic);
    if (train_attn->parsed()) return cmd_train_attn(ctx, in, synthetic, init);
    if (train_hac->parsed()) return cmd_train_hac(ctx, in, synthetic, init);
    if (eval->parsed()) return cmd_eval(ctx, in, synthetic, ckpt);
    if (infer->parsed()) return cmd_infer(ctx, in, ckpt);
    if (overlay->parsed()) return cmd_overlay(ctx, in, prob, ckpt);
    fail(ErrorKind::Config, "no command given");
  } catch (const Error& e) {
    err << "hacseg: error[" << to_string(e.kind()) << "]: " << one_line(e.what()) << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "hacseg: error[internal]: " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace hacseg::cli
