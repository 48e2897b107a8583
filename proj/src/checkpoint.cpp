#include "ppcgen/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ppc {

namespace {

constexpr char kMagic[8] = {'P', 'P', 'C', 'C', 'K', 'P', 'T', '\0'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw IoError("checkpoint: truncated stream");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw IoError("checkpoint: truncated stream");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : blobs)
    if (n == name) return t;
  throw IoError("checkpoint: missing blob '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : blobs)
    if (n == name) return true;
  return false;
}

void Checkpoint::save(std::ostream& os) const {
  os.write(kMagic, 8);
  write_u32(os, kFormatVersion);
  const std::string hdr = header.dump();
  write_u32(os, static_cast<uint32_t>(hdr.size()));
  os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  write_u32(os, static_cast<uint32_t>(blobs.size()));
  for (const auto& [name, t] : blobs) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
  }
  if (!os) throw IoError("checkpoint: write failed");
}

void Checkpoint::save_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  save(f);
}

Checkpoint Checkpoint::load(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic, not a checkpoint file");
  const uint32_t version = read_u32(is);
  if (version != kFormatVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const uint32_t hdr_len = read_u32(is);
  std::string hdr(hdr_len, '\0');
  is.read(hdr.data(), hdr_len);
  if (!is) throw IoError("checkpoint: truncated header");
  Checkpoint out;
  out.header = nlohmann::json::parse(hdr);
  const uint32_t count = read_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (uint32_t j = 0; j < ndim; ++j) shape[j] = static_cast<int64_t>(read_u64(is));
    int64_t numel = 1;
    for (int64_t d : shape) numel *= d;
    std::vector<double> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(double))));
    if (!is) throw IoError("checkpoint: truncated blob '" + name + "'");
    out.blobs.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

Checkpoint Checkpoint::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  return load(f);
}

// ---- conversions ------------------------------------------------------------

nlohmann::json lm_config_to_json(const LMConfig& cfg) {
  return nlohmann::json{{"vocab_size", cfg.vocab_size},   {"d_model", cfg.d_model},
                        {"n_layers", cfg.n_layers},       {"n_heads", cfg.n_heads},
                        {"context_len", cfg.context_len}, {"prefix_len", cfg.prefix_len}};
}

LMConfig lm_config_from_json(const nlohmann::json& j) {
  LMConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.d_model = j.at("d_model").get<int64_t>();
  cfg.n_layers = j.at("n_layers").get<int64_t>();
  cfg.n_heads = j.at("n_heads").get<int64_t>();
  cfg.context_len = j.at("context_len").get<int64_t>();
  cfg.prefix_len = j.at("prefix_len").get<int64_t>();
  cfg.validate();
  return cfg;
}

Checkpoint checkpoint_from_lm(const LanguageModel& lm) {
  Checkpoint ckpt;
  ckpt.header["format_version"] = Checkpoint::kFormatVersion;
  ckpt.header["kind"] = "lm";
  ckpt.header["config"] = lm_config_to_json(lm.config());
  ckpt.header["seed"] = lm.init_seed();
  for (const auto& [name, t] : lm.named_parameters()) ckpt.add(name, t);
  return ckpt;
}

LanguageModel lm_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header.at("kind").get<std::string>() != "lm")
    throw IoError("checkpoint: expected kind 'lm'");
  const LMConfig cfg = lm_config_from_json(ckpt.header.at("config"));
  LanguageModel lm = LanguageModel::init(cfg, ckpt.header.at("seed").get<uint64_t>());
  for (auto& [name, t] : lm.named_parameters()) {
    const Tensor& blob = ckpt.find(name);
    if (blob.shape() != t.shape())
      throw IoError("checkpoint: blob '" + name + "' has shape " + blob.shape_str() +
                    ", expected " + t.shape_str());
    std::copy(blob.data().begin(), blob.data().end(), t.mutable_data().begin());
  }
  return lm;
}

Checkpoint checkpoint_from_discriminator(const Discriminator& disc, const LMConfig& cfg) {
  Checkpoint ckpt;
  ckpt.header["format_version"] = Checkpoint::kFormatVersion;
  ckpt.header["kind"] = "discriminator";
  ckpt.header["config"] = lm_config_to_json(cfg);
  ckpt.header["class_names"] = disc.class_names();
  ckpt.add("head_w", disc.head_w);
  ckpt.add("head_b", disc.head_b);
  return ckpt;
}

Discriminator discriminator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header.at("kind").get<std::string>() != "discriminator")
    throw IoError("checkpoint: expected kind 'discriminator'");
  std::vector<std::string> names = ckpt.header.at("class_names").get<std::vector<std::string>>();
  return Discriminator(ckpt.find("head_w").clone(), ckpt.find("head_b").clone(), std::move(names));
}

Checkpoint checkpoint_from_rldaf(const LoraAdapter& adapter, const PrefixState& prefix,
                                 const LMConfig& cfg) {
  Checkpoint ckpt;
  ckpt.header["format_version"] = Checkpoint::kFormatVersion;
  ckpt.header["kind"] = "rldaf";
  ckpt.header["config"] = lm_config_to_json(cfg);
  ckpt.header["lora_rank"] = adapter.rank;
  ckpt.header["lora_scale"] = adapter.scale;
  for (const auto& f : adapter.factors) {
    ckpt.add(f.name + ".a", f.a);
    ckpt.add(f.name + ".b", f.b);
  }
  for (size_t l = 0; l < prefix.keys.size(); ++l) {
    ckpt.add("prefix.keys." + std::to_string(l), prefix.keys[l]);
    ckpt.add("prefix.values." + std::to_string(l), prefix.values[l]);
  }
  return ckpt;
}

void rldaf_from_checkpoint(const Checkpoint& ckpt, const LMConfig& cfg, LoraAdapter& adapter,
                           PrefixState& prefix) {
  if (ckpt.header.at("kind").get<std::string>() != "rldaf")
    throw IoError("checkpoint: expected kind 'rldaf'");
  adapter = LoraAdapter{};
  adapter.rank = ckpt.header.at("lora_rank").get<int64_t>();
  adapter.scale = ckpt.header.at("lora_scale").get<double>();
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    static const char* kProjNames[] = {"w_q", "w_k", "w_v", "w_o"};
    for (const char* pname : kProjNames) {
      LoraAdapter::Factor f;
      f.name = "layers." + std::to_string(l) + "." + pname;
      f.a = ckpt.find(f.name + ".a").clone();
      f.b = ckpt.find(f.name + ".b").clone();
      adapter.factors.push_back(std::move(f));
    }
  }
  prefix = PrefixState{};
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string kname = "prefix.keys." + std::to_string(l);
    if (!ckpt.has(kname)) break;
    prefix.keys.push_back(ckpt.find(kname).clone());
    prefix.values.push_back(ckpt.find("prefix.values." + std::to_string(l)).clone());
  }
}

}  // namespace ppc
