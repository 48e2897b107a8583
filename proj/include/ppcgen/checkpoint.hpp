#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ppcgen/attribute.hpp"
#include "ppcgen/lm.hpp"
#include "ppcgen/rldaf.hpp"
#include "ppcgen/tensor.hpp"

namespace ppc {

// Versioned binary container: magic, format version, a JSON header (kind,
// config, seed, metadata), then named parameter blobs with shapes. A
// load -> save round trip is byte-identical.
struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> blobs;

  void add(const std::string& name, const Tensor& t) { blobs.emplace_back(name, t); }
  const Tensor& find(const std::string& name) const;
  bool has(const std::string& name) const;

  void save(std::ostream& os) const;
  void save_file(const std::string& path) const;
  static Checkpoint load(std::istream& is);
  static Checkpoint load_file(const std::string& path);
};

// ---- model adapters -------------------------------------------------------

Checkpoint checkpoint_from_lm(const LanguageModel& lm);
LanguageModel lm_from_checkpoint(const Checkpoint& ckpt);

Checkpoint checkpoint_from_discriminator(const Discriminator& disc, const LMConfig& cfg);
Discriminator discriminator_from_checkpoint(const Checkpoint& ckpt);

// Adapter factors plus the trained prefix initialization.
Checkpoint checkpoint_from_rldaf(const LoraAdapter& adapter, const PrefixState& prefix,
                                 const LMConfig& cfg);
void rldaf_from_checkpoint(const Checkpoint& ckpt, const LMConfig& cfg, LoraAdapter& adapter,
                           PrefixState& prefix);

nlohmann::json lm_config_to_json(const LMConfig& cfg);
LMConfig lm_config_from_json(const nlohmann::json& j);

}  // namespace ppc
