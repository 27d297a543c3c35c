#include "adwm/backbone.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "adwm/io.hpp"

namespace adwm {

namespace {

constexpr Index kKernel = 3;
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor conv_weight(Index out, Index in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kKernel * kKernel));
  return Tensor::uniform({out, in, kKernel, kKernel}, rng, -bound, bound, true);
}

Tensor conv_bias(Index out, Index in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kKernel * kKernel));
  return Tensor::uniform({out}, rng, -bound, bound, true);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::baseline: return "baseline";
    case Variant::ifw: return "ifw";
    case Variant::cfw: return "cfw";
    case Variant::adwm: return "adwm";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "ifw") return Variant::ifw;
  if (name == "cfw") return Variant::cfw;
  if (name == "adwm") return Variant::adwm;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::string_view to_string(Upsampling mode) { return mode == Upsampling::bilinear ? "bilinear" : "nearest"; }

Upsampling parse_upsampling(std::string_view name) {
  if (name == "bilinear") return Upsampling::bilinear;
  if (name == "nearest") return Upsampling::nearest;
  throw ConfigError("unknown upsampling '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (bands < 1) throw ConfigError("bands must be >= 1");
  if (channels < 2) throw ConfigError("hidden channels must be >= 2");
  if (blocks < 1) throw ConfigError("blocks must be >= 1");
  if (has_adwm()) adwm_config().validate();
}

AdwmConfig ModelConfig::adwm_config() const {
  AdwmConfig a;
  a.n_layers = blocks;
  a.channels = channels;
  a.ifw_d_fraction = ifw_d_fraction;
  a.cfw_d_fraction = cfw_d_fraction;
  a.share_ifw = share_ifw;
  a.method = method;
  a.ifw = (variant == Variant::ifw || variant == Variant::adwm) ? IfwMode::adaptive : IfwMode::identity;
  a.cfw = (variant == Variant::cfw || variant == Variant::adwm) ? CfwMode::adaptive : CfwMode::uniform;
  return a;
}

Tensor ResidualBlock::forward(const Tensor& x) const {
  Tensor h = leaky_relu(conv2d(x, w1) + b1);
  return x + (conv2d(h, w2) + b2);
}

namespace {

struct Built {
  Tensor encoder_w, encoder_b, decoder_w, decoder_b;
  std::vector<ResidualBlock> blocks;
  SequentialSegment body;
};

Built build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index c = config.bands, ch = config.channels;
  Tensor ew = conv_weight(ch, c + 1, rng);
  Tensor eb = conv_bias(ch, c + 1, rng);
  std::vector<ResidualBlock> blocks;
  std::vector<FeatureBlock> fns;
  for (Index i = 0; i < config.blocks; ++i) {
    ResidualBlock b{conv_weight(ch, ch, rng), conv_bias(ch, ch, rng), conv_weight(ch, ch, rng), conv_bias(ch, ch, rng)};
    blocks.push_back(b);
    fns.push_back([b](const Tensor& x) { return b.forward(x); });
  }
  Tensor dw = conv_weight(c, ch, rng);
  Tensor db = conv_bias(c, ch, rng);
  // ADWM heads draw from their own stream so backbone weights do not depend on the variant.
  std::mt19937_64 head_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  SequentialSegment body = config.has_adwm()
                               ? SequentialSegment(std::move(fns), Adwm(config.adwm_config(), head_rng))
                               : SequentialSegment(std::move(fns), Aggregation::last);
  return {ew, eb, dw, db, std::move(blocks), std::move(body)};
}

}  // namespace

PansharpenModel::PansharpenModel(ModelConfig config, std::uint64_t seed)
    : config_(config), body_({[](const Tensor& x) { return x; }}, Aggregation::last) {
  Built b = build(config_, seed);
  encoder_w = b.encoder_w;
  encoder_b = b.encoder_b;
  decoder_w = b.decoder_w;
  decoder_b = b.decoder_b;
  blocks = std::move(b.blocks);
  body_ = std::move(b.body);
}

Tensor PansharpenModel::upsample(const Tensor& lrms_chw) const {
  return config_.upsampling == Upsampling::bilinear ? upsample_bilinear(lrms_chw, ModelConfig::scale)
                                                    : upsample_nearest(lrms_chw, ModelConfig::scale);
}

Tensor PansharpenModel::forward(const Tensor& pan, const Tensor& lrms, SequentialSegment::Trace* trace) const {
  if (pan.rank() != 2) throw DimensionError("pan must be [H,W], got " + to_string(pan.shape()));
  if (lrms.rank() != 3 || lrms.dim(2) != config_.bands) {
    throw DimensionError("lrms must be [h,w," + std::to_string(config_.bands) + "], got " + to_string(lrms.shape()));
  }
  const Index h = pan.dim(0), w = pan.dim(1);
  if (lrms.dim(0) * ModelConfig::scale != h || lrms.dim(1) * ModelConfig::scale != w) {
    throw DimensionError("pan " + to_string(pan.shape()) + " is not 4x lrms " + to_string(lrms.shape()));
  }
  Tensor up = upsample(hwc_to_chw(lrms));  // [c,H,W]
  std::vector<Tensor> parts{reshape(pan, {1, h, w}), up};
  Tensor x = leaky_relu(conv2d(concat(parts), encoder_w) + encoder_b);
  Tensor fused = body_.forward(x, trace);
  Tensor detail = conv2d(fused, decoder_w) + decoder_b;
  return chw_to_hwc(up + detail);
}

std::vector<Tensor> PansharpenModel::parameters() const {
  std::vector<Tensor> params{encoder_w, encoder_b};
  for (const ResidualBlock& b : blocks) params.insert(params.end(), {b.w1, b.b1, b.w2, b.b2});
  params.insert(params.end(), {decoder_w, decoder_b});
  auto heads = body_.parameters();
  params.insert(params.end(), heads.begin(), heads.end());
  return params;
}

Index PansharpenModel::parameter_count(const ModelConfig& config) {
  const Index c = config.bands, ch = config.channels, k2 = kKernel * kKernel;
  Index total = ch * (c + 1) * k2 + ch;
  total += config.blocks * 2 * (ch * ch * k2 + ch);
  total += c * ch * k2 + c;
  if (config.has_adwm()) total += Adwm::parameter_count(config.adwm_config());
  return total;
}

Tensor model_forward(const PansharpenModel& model, const Tensor& pan, const Tensor& lrms) {
  return model.forward(pan, lrms);
}

// ---------------------------------------------------------------- checkpoints

std::string serialize_config(const ModelConfig& config) {
  std::ostringstream out;
  out << "bands=" << config.bands << '\n'
      << "channels=" << config.channels << '\n'
      << "blocks=" << config.blocks << '\n'
      << "variant=" << to_string(config.variant) << '\n'
      << "upsampling=" << to_string(config.upsampling) << '\n'
      << "ifw_d_fraction=" << format_double(config.ifw_d_fraction) << '\n'
      << "cfw_d_fraction=" << format_double(config.cfw_d_fraction) << '\n'
      << "share_ifw=" << (config.share_ifw ? 1 : 0) << '\n'
      << "method=" << to_string(config.method) << '\n';
  return out.str();
}

ModelConfig parse_model_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("config block lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.bands = std::stoll(need("bands"));
    c.channels = std::stoll(need("channels"));
    c.blocks = std::stoll(need("blocks"));
    c.variant = parse_variant(need("variant"));
    c.upsampling = parse_upsampling(need("upsampling"));
    c.ifw_d_fraction = std::stod(need("ifw_d_fraction"));
    c.cfw_d_fraction = std::stod(need("cfw_d_fraction"));
    c.share_ifw = need("share_ifw") == "1";
    c.method = parse_weight_method(need("method"));
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad config value: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const PansharpenModel& model, const CheckpointInfo& info) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("ADWM", 4);
  le::put_u32(out, kCheckpointVersion);
  std::string cfg = serialize_config(model.config());
  cfg += "epochs=" + std::to_string(info.epochs) + "\n";
  cfg += "seed=" + std::to_string(info.seed) + "\n";
  le::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = model.parameters();
  le::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor& p : params) write_tensor(out, p);
  if (!out) throw FormatError("failed writing " + path.string());
}

PansharpenModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "ADWM") {
    throw FormatError(path.string() + ": bad checkpoint magic at byte 0");
  }
  std::uint64_t offset = 4;
  const std::uint32_t version = le::get_u32(in, offset, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t len = le::get_u32(in, offset, "config length");
  std::string cfg(len, '\0');
  in.read(cfg.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) {
    throw FormatError(path.string() + ": truncated config block at byte " + std::to_string(offset + in.gcount()));
  }
  offset += len;
  ModelConfig config = parse_model_config(cfg);
  CheckpointInfo meta;
  {
    std::istringstream lines(cfg);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.rfind("epochs=", 0) == 0) meta.epochs = static_cast<std::uint32_t>(std::stoul(line.substr(7)));
      if (line.rfind("seed=", 0) == 0) meta.seed = std::stoull(line.substr(5));
    }
  }
  PansharpenModel model(config, 0);
  const auto params = model.parameters();
  const std::uint32_t count = le::get_u32(in, offset, "tensor count");
  if (count != params.size()) {
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(params.size()));
  }
  for (Tensor p : params) {
    Tensor t = read_tensor(in, offset);
    if (t.shape() != p.shape()) {
      throw FormatError(path.string() + ": tensor at byte " + std::to_string(offset) + " has shape " +
                        to_string(t.shape()) + ", expected " + to_string(p.shape()));
    }
    offset += tnsr_size(t.shape());
    p.mutable_data() = t.data();
  }
  if (info) *info = meta;
  return model;
}

}  // namespace adwm
