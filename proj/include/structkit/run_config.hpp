#pragma once

// Flat key=value run configuration. Lines starting with '#' are comments.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "structkit/corruption.hpp"
#include "structkit/model.hpp"
#include "structkit/numkit.hpp"

namespace structkit::pipeline {

struct RunConfig {
  model::ModelConfig model;
  numkit::AdamWConfig optim;
  model::LossWeights loss;
  model::StructureFlags structure;
  corruption::CorruptionConfig corruption;
  int batch_size = 8;
  int steps = 2000;
  bool lr_decay = false;  // linear decay of lr to 0 at `steps`
  std::optional<std::uint64_t> seed;
  int checkpoint_every = 0;    // 0 = only at the end
  bool swap_direction = false;  // text2code records train code -> text instead
  std::size_t vocab_max = 512;

  /// Sets one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" lines.
  void load(std::istream& in);
  void load_file(const std::string& path);
  void validate() const;

  /// Explicit seed, else STRUCTKIT_SEED, else 0.
  std::uint64_t resolved_seed() const;

  /// Every key with its current value, in a stable order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

}  // namespace structkit::pipeline
