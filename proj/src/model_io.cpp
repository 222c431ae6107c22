#include "ltcse/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ltcse/data.hpp"

namespace ltcse {

namespace {

using nlohmann::json;

constexpr char kMagic[] = "LTCSE1\n";  // 7 bytes, no terminator on disk
constexpr std::size_t kMagicLen = 7;
constexpr int kFormatVersion = 1;

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": \"" + value + "\"");
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE ||
      value.find('-') != std::string::npos) {
    throw ConfigError("invalid integer for " + key + ": \"" + value + "\"");
  }
  return static_cast<std::uint64_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("invalid real for " + key + ": \"" + value + "\"");
  }
  return v;
}

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

void append_f64le(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void append_f32le(std::string& out, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  append_u32le(out, bits);
}

double read_f64le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

double read_f32le(const unsigned char* p) {
  return static_cast<double>(std::bit_cast<float>(read_u32le(p)));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace

ConfigMap to_config(const CellConfig& cell, const TrainConfig& train) {
  ConfigMap m;
  m["cell.kind"] = to_string(cell.kind);
  m["cell.hidden_size"] = std::to_string(cell.hidden_size);
  m["cell.input_size"] = std::to_string(cell.input_size);
  m["cell.output_size"] = std::to_string(cell.output_size);
  m["cell.input_mapping"] = to_string(cell.input_mapping);
  m["cell.solver"] = to_string(cell.solver);
  m["cell.ode_unfolds"] = std::to_string(cell.ode_unfolds);
  m["cell.ctgru_scales"] = std::to_string(cell.ctgru_scales);
  m["cell.tau_min"] = format_real(cell.tau_min);
  m["cell.scale_ratio"] = format_real(cell.scale_ratio);
  m["cell.activation"] = to_string(cell.activation);
  m["train.hidden_units"] = std::to_string(train.hidden_units);
  m["train.minibatch"] = std::to_string(train.minibatch);
  m["train.learning_rate"] = format_real(train.learning_rate);
  m["train.lr_explicit"] = bool_text(train.lr_explicit);
  m["train.beta1"] = format_real(train.beta1);
  m["train.beta2"] = format_real(train.beta2);
  m["train.adam_epsilon"] = format_real(train.adam_epsilon);
  m["train.bptt_len"] = std::to_string(train.bptt_len);
  m["train.epochs"] = std::to_string(train.epochs);
  m["train.eval_every"] = std::to_string(train.eval_every);
  m["train.repeats"] = std::to_string(train.repeats);
  m["train.seed"] = std::to_string(train.seed);
  m["train.test_on_final_weights"] = bool_text(train.test_on_final_weights);
  m["train.jobs"] = std::to_string(train.jobs);
  return m;
}

std::pair<CellConfig, TrainConfig> from_config(const ConfigMap& map) {
  CellConfig cell;
  TrainConfig train;
  bool cell_hidden_set = false;
  bool train_hidden_set = false;
  for (const auto& [key, value] : map) {
    if (key == "cell.kind") {
      cell.kind = cell_kind_from_string(value);
    } else if (key == "cell.hidden_size") {
      cell.hidden_size = parse_uint(key, value);
      cell_hidden_set = true;
    } else if (key == "cell.input_size") {
      cell.input_size = parse_uint(key, value);
    } else if (key == "cell.output_size") {
      cell.output_size = parse_uint(key, value);
    } else if (key == "cell.input_mapping") {
      cell.input_mapping = input_mapping_from_string(value);
    } else if (key == "cell.solver") {
      cell.solver = solver_from_string(value);
    } else if (key == "cell.ode_unfolds") {
      cell.ode_unfolds = parse_uint(key, value);
    } else if (key == "cell.ctgru_scales") {
      cell.ctgru_scales = parse_uint(key, value);
    } else if (key == "cell.tau_min") {
      cell.tau_min = parse_real(key, value);
    } else if (key == "cell.scale_ratio") {
      cell.scale_ratio = parse_real(key, value);
    } else if (key == "cell.activation") {
      cell.activation = activation_from_string(value);
    } else if (key == "train.hidden_units") {
      train.hidden_units = parse_uint(key, value);
      train_hidden_set = true;
    } else if (key == "train.minibatch") {
      train.minibatch = parse_uint(key, value);
    } else if (key == "train.learning_rate") {
      train.learning_rate = parse_real(key, value);
    } else if (key == "train.lr_explicit") {
      train.lr_explicit = parse_bool(key, value);
    } else if (key == "train.beta1") {
      train.beta1 = parse_real(key, value);
    } else if (key == "train.beta2") {
      train.beta2 = parse_real(key, value);
    } else if (key == "train.adam_epsilon") {
      train.adam_epsilon = parse_real(key, value);
    } else if (key == "train.bptt_len") {
      train.bptt_len = parse_uint(key, value);
    } else if (key == "train.epochs") {
      train.epochs = parse_uint(key, value);
    } else if (key == "train.eval_every") {
      train.eval_every = parse_uint(key, value);
    } else if (key == "train.repeats") {
      train.repeats = parse_uint(key, value);
    } else if (key == "train.seed") {
      train.seed = parse_uint(key, value);
    } else if (key == "train.test_on_final_weights") {
      train.test_on_final_weights = parse_bool(key, value);
    } else if (key == "train.jobs") {
      train.jobs = parse_uint(key, value);
    } else {
      throw ConfigError("unknown config key: \"" + key + "\"");
    }
  }
  // Keep the two views of the hidden width consistent: if only one side was
  // given, mirror it; if both were, they must agree.
  if (cell_hidden_set && !train_hidden_set) {
    train.hidden_units = cell.hidden_size;
  } else if (train_hidden_set && !cell_hidden_set) {
    cell.hidden_size = train.hidden_units;
  } else if (cell_hidden_set && train_hidden_set &&
             cell.hidden_size != train.hidden_units) {
    throw ConfigError("cell.hidden_size (" + std::to_string(cell.hidden_size) +
                      ") and train.hidden_units (" +
                      std::to_string(train.hidden_units) + ") disagree");
  }
  validate_config(cell);
  validate_train_config(train);
  return {cell, train};
}

void save_checkpoint(const CheckpointData& data, const std::string& path) {
  const std::size_t value_size = data.float32 ? 4 : 8;
  const char* dtype = data.float32 ? "f32" : "f64";

  json directory = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, tensor] : data.params.tensors) {  // lexicographic
    const std::size_t bytes = tensor.size() * value_size;
    json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["dtype"] = dtype;
    entry["byte_offset"] = offset;
    entry["byte_length"] = bytes;
    directory.push_back(std::move(entry));
    for (const double v : tensor.data()) {
      if (data.float32) {
        append_f32le(blob, v);
      } else {
        append_f64le(blob, v);
      }
    }
    offset += bytes;
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = to_config(data.cell, data.train);
  manifest["tensors"] = std::move(directory);
  manifest["seed"] = data.seed;
  manifest["metrics"] = data.metrics;  // non-finite values serialize as null
  const std::string manifest_text = manifest.dump();
  if (manifest_text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("checkpoint manifest too large");
  }

  std::string bytes;
  bytes.reserve(kMagicLen + 4 + manifest_text.size() + blob.size());
  bytes.append(kMagic, kMagicLen);
  append_u32le(bytes, static_cast<std::uint32_t>(manifest_text.size()));
  bytes += manifest_text;
  bytes += blob;
  write_file(path, bytes);
}

CheckpointData load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kMagicLen + 4 ||
      bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw DataError("not a checkpoint (bad magic): " + path);
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t manifest_len = read_u32le(raw + kMagicLen);
  const std::size_t blob_start = kMagicLen + 4 + manifest_len;
  if (bytes.size() < blob_start) {
    throw DataError("checkpoint manifest truncated: expected " +
                    std::to_string(blob_start) + " header bytes, file has " +
                    std::to_string(bytes.size()));
  }

  json manifest;
  try {
    manifest = json::parse(bytes.substr(kMagicLen + 4, manifest_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") +
                    e.what());
  }
  if (!manifest.contains("format_version") ||
      !manifest["format_version"].is_number_integer()) {
    throw DataError("checkpoint manifest missing format_version");
  }
  const int version = manifest["format_version"].get<int>();
  if (version != kFormatVersion) {
    throw DataError("unknown checkpoint format_version " +
                    std::to_string(version) + " (this build reads " +
                    std::to_string(kFormatVersion) + ")");
  }

  CheckpointData data;
  ConfigMap config;
  for (const auto& [key, value] : manifest.at("config").items()) {
    config[key] = value.get<std::string>();
  }
  std::tie(data.cell, data.train) = from_config(config);
  data.seed = manifest.at("seed").get<std::uint64_t>();
  if (manifest.contains("metrics")) {
    for (const auto& [key, value] : manifest["metrics"].items()) {
      data.metrics[key] = value.is_number()
                              ? value.get<double>()
                              : std::numeric_limits<double>::quiet_NaN();
    }
  }

  // Offsets are authoritative: validate the directory against the blob.
  // Entries may appear in any order, so overlap is checked on the sorted
  // extents afterwards.
  const std::size_t blob_len = bytes.size() - blob_start;
  std::size_t expected_len = 0;
  std::vector<std::pair<std::size_t, std::size_t>> extents;  // (offset, end)
  bool any_f32 = false;
  for (const auto& entry : manifest.at("tensors")) {
    const std::size_t off = entry.at("byte_offset").get<std::size_t>();
    const std::size_t len = entry.at("byte_length").get<std::size_t>();
    extents.emplace_back(off, off + len);
    expected_len += len;

    const std::string name = entry.at("name").get<std::string>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f64" && dtype != "f32") {
      throw DataError("checkpoint tensor \"" + name + "\" has unknown dtype " +
                      dtype);
    }
    const std::size_t value_size = dtype == "f32" ? 4 : 8;
    any_f32 |= dtype == "f32";
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (const std::size_t d : shape) count *= d;
    if (count * value_size != len) {
      throw DataError("checkpoint tensor \"" + name + "\" length mismatch: " +
                      "shape needs " + std::to_string(count * value_size) +
                      " bytes, directory says " + std::to_string(len));
    }
    if (off + len > blob_len) {
      throw DataError("checkpoint blob truncated: tensor \"" + name +
                      "\" needs bytes up to " + std::to_string(off + len) +
                      ", blob has " + std::to_string(blob_len));
    }
    std::vector<double> values(count);
    const unsigned char* src = raw + blob_start + off;
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = dtype == "f32" ? read_f32le(src + 4 * i)
                                 : read_f64le(src + 8 * i);
    }
    data.params.tensors.emplace(name,
                                Tensor::from_data(shape, values, true));
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].first < extents[i - 1].second) {
      throw DataError("checkpoint tensor extents overlap at blob offset " +
                      std::to_string(extents[i].first));
    }
  }
  if (blob_len != expected_len) {
    throw DataError("checkpoint blob length mismatch: expected " +
                    std::to_string(expected_len) + " bytes, got " +
                    std::to_string(blob_len));
  }
  data.float32 = any_f32;
  return data;
}

void export_metrics(const std::vector<RepeatSummary>& summaries,
                    const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write metrics CSV: " + path);
  out << "task,model,metric,mean,std,seeds\n";
  for (const auto& s : summaries) {
    out << s.task << ',' << s.model << ',' << s.metric_name << ','
        << format_real(s.mean) << ',' << format_real(s.stddev) << ','
        << s.runs.size() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace ltcse
