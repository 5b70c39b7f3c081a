// Self-describing checkpoint container: a text metadata block (format
// version, model config, vocab/merges digests), then one record per
// parameter (name, shape, raw little-endian float32 values). Save/load
// round-trips bit-exactly.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "rnng/model.hpp"

namespace rnng {

struct CheckpointMeta {
  int format_version = 1;
  ModelConfig config;
  uint64_t vocab_digest = 0;
  uint64_t merges_digest = 0;  // 0 when not a subword model
  uint64_t seed = 0;
  int64_t step = 0;
};

void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  Model model;
};
// `dt` selects the runtime precision; stored values are always float32.
LoadedCheckpoint load_checkpoint(const std::string& path, Dtype dt);

}  // namespace rnng
