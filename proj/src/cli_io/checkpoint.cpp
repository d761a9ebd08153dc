#include "featup/checkpoint.hpp"

#include <cstring>

#include "featup/io.hpp"

namespace featup {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'U', 'P', '1'};
constexpr std::size_t kFixedHeader = 4 + 4 + 4 + 8;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(std::string_view s, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

struct Writer {
  json tensors = json::array();
  std::string payload;

  template <typename P>
  void add(const P& params, const std::string& prefix) {
    params.visit([&](const char* name, const Tensor<float>& t) {
      tensors.push_back({{"name", prefix + name}, {"shape", t.shape()}});
      for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &t[i], 4);
        put_le(payload, u);
      }
    });
  }
};

std::string assemble(CheckpointKind kind, json meta, const Writer& w) {
  meta["tensors"] = w.tensors;
  const std::string text = meta.dump();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += w.payload;
  return out;
}

// Hands out payload tensors by name after checking the declared layout.
class Reader {
 public:
  Reader(const json& listing, std::string_view payload, const std::string& origin) : origin_(origin) {
    std::size_t offset = 0;
    for (const auto& entry : listing) {
      Slot s;
      s.shape = entry.at("shape").get<std::vector<int>>();
      std::size_t count = 1;
      for (int d : s.shape) {
        if (d < 0) throw FormatError(origin + ": negative tensor dimension");
        count *= static_cast<std::size_t>(d);
      }
      s.offset = offset;
      s.count = count;
      offset += count * 4;
      if (!slots_.emplace(entry.at("name").get<std::string>(), s).second) {
        throw FormatError(origin + ": duplicate tensor " + entry.at("name").get<std::string>());
      }
    }
    if (offset != payload.size()) {
      throw FormatError(origin + ": payload has " + std::to_string(payload.size()) + " bytes, tensors declare " +
                        std::to_string(offset));
    }
    payload_ = payload;
  }

  template <typename P>
  void fill(P& params, const std::string& prefix) {
    params.visit([&](const char* name, Tensor<float>& t) {
      const std::string key = prefix + name;
      auto it = slots_.find(key);
      if (it == slots_.end()) throw FormatError(origin_ + ": missing tensor " + key);
      if (it->second.shape != t.shape()) throw FormatError(origin_ + ": tensor " + key + " has an unexpected shape");
      for (std::size_t i = 0; i < it->second.count; ++i) {
        const auto u = get_le<std::uint32_t>(payload_, it->second.offset + 4 * i);
        std::memcpy(&t[i], &u, 4);
      }
      ++used_;
    });
  }

  void finish() const {
    if (used_ != slots_.size()) throw FormatError(origin_ + ": checkpoint lists tensors this model does not use");
  }

 private:
  struct Slot {
    std::vector<int> shape;
    std::size_t offset = 0, count = 0;
  };
  std::string origin_;
  std::map<std::string, Slot> slots_;
  std::string_view payload_;
  std::size_t used_ = 0;
};

json transforms_json(const std::vector<JitterTransform>& ts) {
  json out = json::array();
  for (const auto& t : ts) out.push_back(to_json(t));
  return out;
}

json pca_json(const PcaModel& p) {
  return {{"channels", p.channels},
          {"k", p.k},
          {"mean", p.mean},
          {"components", p.components},
          {"explained_variance", p.explained_variance}};
}

PcaModel pca_from_json(const json& j, const std::string& origin) {
  PcaModel p;
  p.channels = j.at("channels").get<int>();
  p.k = j.at("k").get<int>();
  p.mean = j.at("mean").get<std::vector<double>>();
  p.components = j.at("components").get<std::vector<double>>();
  p.explained_variance = j.at("explained_variance").get<std::vector<double>>();
  if (p.channels < 1 || p.k < 1 || p.mean.size() != static_cast<std::size_t>(p.channels) ||
      p.components.size() != static_cast<std::size_t>(p.k) * p.channels ||
      p.explained_variance.size() != static_cast<std::size_t>(p.k)) {
    throw FormatError(origin + ": inconsistent PCA block");
  }
  return p;
}

ImplicitModel decode_implicit(const json& meta, Reader& r, const std::string& origin) {
  ImplicitModel m;
  m.config = config_from_json(meta.at("config"));
  const json& x = meta.at("extra");
  m.image_h = x.at("image_h").get<int>();
  m.image_w = x.at("image_w").get<int>();
  m.feature_h = x.at("feature_h").get<int>();
  m.feature_w = x.at("feature_w").get<int>();
  m.fourier.num_freqs = x.at("num_freqs").get<int>();
  m.fourier.include_color = x.at("include_color").get<bool>();
  m.fourier.validate();
  m.pca = pca_from_json(x.at("pca"), origin);
  m.loss_trace = x.at("loss_trace").get<std::vector<double>>();
  m.reconstruction_trace = x.at("reconstruction_trace").get<std::vector<double>>();
  for (const auto& t : meta.at("transforms")) m.transforms.push_back(transform_from_json(t));
  m.mlp = ImplicitParams<float>::init(m.fourier, m.config.hidden, m.pca.k, 0);
  m.downsampler = AttentionDownsamplerParams<float>::init(m.pca.k, m.config.kernel_size, 0);
  m.head = UncertaintyParams<float>::init(m.pca.k);
  r.fill(m.mlp, "mlp.");
  r.fill(m.downsampler, "down.");
  r.fill(m.head, "head.");
  r.finish();
  return m;
}

JbuModel decode_jbu(const json& meta, Reader& r) {
  JbuModel m;
  m.config = config_from_json(meta.at("config"));
  const json& x = meta.at("extra");
  m.channels = x.at("channels").get<int>();
  m.loss_trace = x.at("loss_trace").get<std::vector<double>>();
  const int stages = x.at("stages").get<int>();
  if (stages < 0 || stages > 16) throw FormatError("checkpoint declares " + std::to_string(stages) + " stages");
  for (int s = 0; s < stages; ++s) {
    m.stages.push_back(JbuParams<float>::init(m.config.radius, 0));
    r.fill(m.stages.back(), "jbu" + std::to_string(s) + ".");
  }
  m.downsampler = AttentionDownsamplerParams<float>::init(m.config.proj_dim, m.config.kernel_size, 0);
  m.head = UncertaintyParams<float>::init(m.config.proj_dim);
  r.fill(m.downsampler, "down.");
  r.fill(m.head, "head.");
  r.finish();
  return m;
}

}  // namespace

json to_json(const TrainConfig& c) {
  json j = {{"steps", c.steps},         {"jitters", c.jitters},   {"batch", c.batch},
            {"max_pad", c.max_pad},     {"max_zoom", c.max_zoom}, {"proj_dim", c.proj_dim},
            {"kernel_size", c.kernel_size}, {"tv_weight", c.tv_weight}, {"lr", c.lr},
            {"seed", c.seed},           {"hidden", c.hidden},     {"num_freqs", c.num_freqs},
            {"radius", c.radius},       {"clip_norm", c.clip_norm}};
  j["view_seed"] = c.view_seed ? json(*c.view_seed) : json(nullptr);
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.jitters = j.at("jitters").get<int>();
  c.batch = j.at("batch").get<int>();
  c.max_pad = j.at("max_pad").get<int>();
  c.max_zoom = j.at("max_zoom").get<double>();
  c.proj_dim = j.at("proj_dim").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.tv_weight = j.at("tv_weight").get<double>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden = j.at("hidden").get<int>();
  c.num_freqs = j.at("num_freqs").get<int>();
  c.radius = j.at("radius").get<int>();
  c.clip_norm = j.at("clip_norm").get<double>();
  if (!j.at("view_seed").is_null()) c.view_seed = j.at("view_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

json to_json(const JitterTransform& t) {
  return {{"hash", t.hash()},
          {"ref_height", t.ref_height},
          {"ref_width", t.ref_width},
          {"pad_left", t.pad_left},
          {"pad_right", t.pad_right},
          {"pad_top", t.pad_top},
          {"pad_bottom", t.pad_bottom},
          {"zoom", t.zoom},
          {"crop_offset_y", t.crop_offset_y},
          {"crop_offset_x", t.crop_offset_x},
          {"hflip", t.hflip}};
}

JitterTransform transform_from_json(const json& j) {
  JitterTransform t;
  t.ref_height = j.at("ref_height").get<int>();
  t.ref_width = j.at("ref_width").get<int>();
  t.pad_left = j.at("pad_left").get<int>();
  t.pad_right = j.at("pad_right").get<int>();
  t.pad_top = j.at("pad_top").get<int>();
  t.pad_bottom = j.at("pad_bottom").get<int>();
  t.zoom = j.at("zoom").get<double>();
  t.crop_offset_y = j.at("crop_offset_y").get<double>();
  t.crop_offset_x = j.at("crop_offset_x").get<double>();
  t.hflip = j.at("hflip").get<bool>();
  t.validate();
  if (j.contains("hash") && j.at("hash").get<std::string>() != t.hash()) {
    throw FormatError("transform hash " + j.at("hash").get<std::string>() + " does not match its fields (" +
                      describe(t) + ")");
  }
  return t;
}

std::string encode_checkpoint(const ImplicitModel& m) {
  json meta;
  meta["kind"] = "implicit";
  meta["config"] = to_json(m.config);
  meta["transforms"] = transforms_json(m.transforms);
  meta["extra"] = {{"image_h", m.image_h},
                   {"image_w", m.image_w},
                   {"feature_h", m.feature_h},
                   {"feature_w", m.feature_w},
                   {"num_freqs", m.fourier.num_freqs},
                   {"include_color", m.fourier.include_color},
                   {"pca", pca_json(m.pca)},
                   {"loss_trace", m.loss_trace},
                   {"reconstruction_trace", m.reconstruction_trace}};
  Writer w;
  w.add(m.mlp, "mlp.");
  w.add(m.downsampler, "down.");
  w.add(m.head, "head.");
  return assemble(CheckpointKind::implicit, std::move(meta), w);
}

std::string encode_checkpoint(const JbuModel& m) {
  json meta;
  meta["kind"] = "jbu";
  meta["config"] = to_json(m.config);
  meta["transforms"] = json::array();
  meta["extra"] = {{"channels", m.channels}, {"stages", m.stages.size()}, {"loss_trace", m.loss_trace}};
  Writer w;
  for (std::size_t s = 0; s < m.stages.size(); ++s) w.add(m.stages[s], "jbu" + std::to_string(s) + ".");
  w.add(m.downsampler, "down.");
  w.add(m.head, "head.");
  return assemble(CheckpointKind::jbu, std::move(meta), w);
}

Model decode_checkpoint(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < kFixedHeader || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(origin + ": not a FeatUp checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto kind = get_le<std::uint32_t>(bytes, 8);
  const auto meta_len = get_le<std::uint64_t>(bytes, 12);
  if (meta_len > bytes.size() - kFixedHeader) throw FormatError(origin + ": truncated metadata block");
  try {
    const json meta = json::parse(bytes.substr(kFixedHeader, meta_len));
    Reader reader(meta.at("tensors"), bytes.substr(kFixedHeader + meta_len), origin);
    if (kind == static_cast<std::uint32_t>(CheckpointKind::implicit)) return decode_implicit(meta, reader, origin);
    if (kind == static_cast<std::uint32_t>(CheckpointKind::jbu)) return decode_jbu(meta, reader);
  } catch (const json::exception& e) {
    throw FormatError(origin + ": bad checkpoint metadata: " + e.what());
  }
  throw FormatError(origin + ": unknown checkpoint kind " + std::to_string(kind));
}

void save_checkpoint(const ImplicitModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

void save_checkpoint(const JbuModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path), path.string()); }

}  // namespace featup
