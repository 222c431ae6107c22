#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ltcse/cells.hpp"
#include "ltcse/training.hpp"

namespace ltcse {

/// Flat key -> value map describing one complete run configuration.
/// Keys are namespaced ("cell.hidden_size", "train.learning_rate"); values
/// are the canonical text forms (enums by name, reals via format_real,
/// booleans as "true"/"false"). std::map keeps the serialized order stable.
using ConfigMap = std::map<std::string, std::string>;

/// Every field of both structs, so from_config(to_config(c, t)) == (c, t).
ConfigMap to_config(const CellConfig& cell, const TrainConfig& train);

/// Strict inverse of to_config. Starts from default-constructed structs so
/// a partial map (e.g. a user config file) is legal, then applies each
/// entry. Throws ConfigError on an unknown key (naming it), an unparsable
/// value, a cell/train hidden-size mismatch, or any combination the
/// validators reject (e.g. kind=ctrnn with solver=fused).
std::pair<CellConfig, TrainConfig> from_config(const ConfigMap& map);

/// Everything a checkpoint stores.
struct CheckpointData {
  CellConfig cell;
  TrainConfig train;
  CellParams params;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;  // e.g. {"test_accuracy": 0.94}
  bool float32 = false;                   // storage dtype for the blob
};

/// Binary layout: magic "LTCSE1\n", uint32 little-endian manifest length,
/// a JSON manifest {format_version, config, tensors, seed, metrics}, then
/// the raw blob of little-endian IEEE-754 values in manifest order. Tensors
/// are written in canonical (lexicographic) name order with strictly
/// increasing, non-overlapping byte offsets. Saving the same data twice
/// produces byte-identical files. data.float32 selects f32 storage (lossy;
/// the per-tensor dtype records it).
void save_checkpoint(const CheckpointData& data, const std::string& path);

/// Throws DataError on a bad magic, an unknown format_version, a manifest
/// or blob whose length disagrees with the directory (reporting expected
/// and actual byte counts), or overlapping tensor extents. Byte offsets in
/// the manifest are authoritative, so a hand-reordered directory still
/// loads; re-saving restores canonical order.
CheckpointData load_checkpoint(const std::string& path);

/// Summary CSV ("task,model,metric,mean,std,seeds"), one row per summary.
/// An empty list produces a header-only file. Values use format_real, so
/// parsing a row back recovers every number exactly.
void export_metrics(const std::vector<RepeatSummary>& summaries,
                    const std::string& path);

}  // namespace ltcse
