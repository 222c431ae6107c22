#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltcse/cells.hpp"
#include "ltcse/data.hpp"
#include "ltcse/model_io.hpp"
#include "ltcse/rng.hpp"
#include "ltcse/tensor.hpp"
#include "ltcse/training.hpp"

using namespace ltcse;

namespace {

std::filesystem::path temp_dir() {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("ltcse_io_test_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

bool params_bitwise_equal(const CellParams& a, const CellParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, ta] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end()) return false;
    const Tensor& tb = it->second;
    if (ta.shape() != tb.shape()) return false;
    const auto da = ta.data();
    const auto db = tb.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (std::memcmp(&da[i], &db[i], sizeof(double)) != 0) return false;
    }
  }
  return true;
}

CheckpointData sample_checkpoint(CellKind kind = CellKind::Ltc) {
  CheckpointData data;
  data.cell = make_cell_config(kind, 6, 3, 2);
  data.train.hidden_units = 6;
  data.train.epochs = 12;
  data.train.seed = 7;
  data.params = init_cell_params(data.cell, 7);
  data.seed = 7;
  data.metrics = {{"test_accuracy", 0.9375}, {"best_valid", 0.9453125}};
  return data;
}

CellConfig random_cell_config(SplitMix64& rng) {
  static const CellKind kinds[] = {CellKind::Ltc,  CellKind::Ctrnn,
                                   CellKind::Node, CellKind::Ctgru,
                                   CellKind::Lstm, CellKind::Gru};
  CellConfig c = make_cell_config(kinds[rng.below(6)], 1 + rng.below(64),
                                  1 + rng.below(8), 1 + rng.below(5));
  static const InputMapping mappings[] = {
      InputMapping::Identity, InputMapping::Linear, InputMapping::Affine};
  c.input_mapping = mappings[rng.below(3)];
  if (c.kind == CellKind::Ltc) {
    static const SolverKind solvers[] = {SolverKind::Fused, SolverKind::Euler,
                                         SolverKind::Rk4};
    c.solver = solvers[rng.below(3)];
  } else {
    c.solver = rng.below(2) ? SolverKind::Euler : SolverKind::Rk4;
  }
  c.ode_unfolds = 1 + rng.below(12);
  c.ctgru_scales = 1 + rng.below(9);
  c.tau_min = rng.uniform(1e-3, 10.0);
  c.scale_ratio = rng.uniform(1.5, 10.0);
  static const ActivationKind acts[] = {ActivationKind::Tanh,
                                        ActivationKind::Sigmoid,
                                        ActivationKind::Relu,
                                        ActivationKind::HardTanh};
  c.activation = acts[rng.below(4)];
  return c;
}

TrainConfig random_train_config(SplitMix64& rng, std::size_t hidden) {
  TrainConfig t;
  t.hidden_units = hidden;
  t.minibatch = 1 + rng.below(64);
  t.lr_explicit = rng.below(2) == 1;
  t.learning_rate =
      t.lr_explicit ? rng.uniform(1e-5, 0.5) : rng.uniform(0.001, 0.01);
  t.beta1 = rng.uniform(0.0, 0.99);
  t.beta2 = rng.uniform(0.9, 0.9999);
  t.adam_epsilon = rng.uniform(1e-10, 1e-6);
  t.bptt_len = 1 + rng.below(64);
  t.epochs = rng.below(200);
  t.eval_every = 1 + rng.below(10);
  t.repeats = 1 + rng.below(8);
  t.seed = rng.next();
  t.test_on_final_weights = rng.below(2) == 1;
  t.jobs = 1 + rng.below(4);
  return t;
}

// Rebuild a checkpoint file around an edited manifest, fixing the length
// field. Returns magic + u32le(len) + manifest + blob.
std::string reassemble(const std::string& manifest,
                       const std::string& blob) {
  std::string bytes = "LTCSE1\n";
  const auto len = static_cast<std::uint32_t>(manifest.size());
  for (int i = 0; i < 4; ++i)
    bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  bytes += manifest;
  bytes += blob;
  return bytes;
}

struct SplitFile {
  std::string manifest;
  std::string blob;
};

SplitFile split_checkpoint(const std::string& bytes) {
  REQUIRE(bytes.size() >= 11);
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i)
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[7 + i]))
           << (8 * i);
  REQUIRE(bytes.size() >= 11 + len);
  return {bytes.substr(11, len), bytes.substr(11 + len)};
}

}  // namespace

TEST_CASE("config map: defaults round trip and cover every field") {
  const CellConfig cell;
  const TrainConfig train;
  const ConfigMap m = to_config(cell, train);
  CHECK(m.size() == 25);
  CHECK(m.at("cell.kind") == "ltc");
  CHECK(m.at("cell.hidden_size") == "32");
  CHECK(m.at("cell.solver") == "fused");
  CHECK(m.at("train.learning_rate") == "0.01");
  CHECK(m.at("train.test_on_final_weights") == "false");

  const auto [cell2, train2] = from_config(m);
  CHECK(cell2 == cell);
  CHECK(train2 == train);
}

TEST_CASE("config map: 500 random valid configs round trip exactly") {
  SplitMix64 rng(0x10c0ffee);
  for (int i = 0; i < 500; ++i) {
    const CellConfig cell = random_cell_config(rng);
    const TrainConfig train = random_train_config(rng, cell.hidden_size);
    const auto [cell2, train2] = from_config(to_config(cell, train));
    REQUIRE(cell2 == cell);
    REQUIRE(train2 == train);
  }
}

TEST_CASE("config map: unknown key is rejected by name") {
  ConfigMap m = to_config(CellConfig{}, TrainConfig{});
  m["dropout"] = "0.5";
  CHECK_THROWS_WITH_AS(from_config(m),
                       doctest::Contains("dropout"), ConfigError);
}

TEST_CASE("config map: illegal combinations and bad values") {
  SUBCASE("fused solver on a ctrnn cell") {
    ConfigMap m;
    m["cell.kind"] = "ctrnn";
    m["cell.solver"] = "fused";
    CHECK_THROWS_AS(from_config(m), ConfigError);
  }
  SUBCASE("unparsable integer names the key") {
    ConfigMap m;
    m["cell.hidden_size"] = "abc";
    CHECK_THROWS_WITH_AS(from_config(m),
                         doctest::Contains("cell.hidden_size"), ConfigError);
  }
  SUBCASE("negative integer rejected") {
    ConfigMap m;
    m["train.epochs"] = "-3";
    CHECK_THROWS_AS(from_config(m), ConfigError);
  }
  SUBCASE("bad boolean rejected") {
    ConfigMap m;
    m["train.lr_explicit"] = "yes";
    CHECK_THROWS_AS(from_config(m), ConfigError);
  }
  SUBCASE("hidden size disagreement is rejected") {
    ConfigMap m;
    m["cell.hidden_size"] = "32";
    m["train.hidden_units"] = "16";
    CHECK_THROWS_WITH_AS(from_config(m),
                         doctest::Contains("hidden"), ConfigError);
  }
  SUBCASE("partial map mirrors hidden size into the other struct") {
    ConfigMap m;
    m["cell.hidden_size"] = "48";
    const auto [cell, train] = from_config(m);
    CHECK(cell.hidden_size == 48);
    CHECK(train.hidden_units == 48);
    ConfigMap m2;
    m2["train.hidden_units"] = "24";
    const auto [cell2, train2] = from_config(m2);
    CHECK(cell2.hidden_size == 24);
    CHECK(train2.hidden_units == 24);
  }
  SUBCASE("out-of-range learning rate needs the explicit flag") {
    ConfigMap m;
    m["train.learning_rate"] = "0.5";
    CHECK_THROWS_AS(from_config(m), ConfigError);
    m["train.lr_explicit"] = "true";
    const auto [cell, train] = from_config(m);
    CHECK(train.learning_rate == 0.5);
    (void)cell;
  }
}

TEST_CASE("checkpoint: save -> load preserves everything bitwise") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  const CheckpointData data = sample_checkpoint();
  save_checkpoint(data, path);

  const CheckpointData loaded = load_checkpoint(path);
  CHECK(loaded.cell == data.cell);
  CHECK(loaded.train == data.train);
  CHECK(loaded.seed == data.seed);
  CHECK(loaded.float32 == false);
  CHECK(loaded.metrics == data.metrics);
  CHECK(params_bitwise_equal(loaded.params, data.params));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
  const auto dir = temp_dir();
  const auto p1 = (dir / "a.ckpt").string();
  const auto p2 = (dir / "b.ckpt").string();
  const CheckpointData data = sample_checkpoint(CellKind::Ctgru);
  save_checkpoint(data, p1);
  save_checkpoint(load_checkpoint(p1), p2);
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: model outputs are bitwise identical after reload") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  CheckpointData data = sample_checkpoint();
  save_checkpoint(data, path);
  const CheckpointData loaded = load_checkpoint(path);

  SplitMix64 rng(99);
  std::vector<Tensor> steps;
  for (int t = 0; t < 4; ++t) {
    steps.push_back(Tensor::uniform({2, 3}, -1.0, 1.0, rng));
  }
  NoGradGuard guard;
  const Tensor before = sequence_forward(data.cell, data.params, steps);
  const Tensor after = sequence_forward(loaded.cell, loaded.params, steps);
  REQUIRE(before.size() == after.size());
  const auto a = before.data();
  const auto b = after.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: truncation reports expected and actual byte counts") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  save_checkpoint(sample_checkpoint(), path);
  const std::string bytes = slurp(path);

  SUBCASE("mid-blob truncation") {
    dump(path, bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("truncated"), DataError);
    try {
      load_checkpoint(path);
    } catch (const DataError& e) {
      const std::string msg = e.what();
      // Both the promised and the observed byte counts are in the message.
      CHECK(msg.find_first_of("0123456789") != std::string::npos);
      CHECK(msg.find("blob") != std::string::npos);
    }
  }
  SUBCASE("mid-manifest truncation") {
    dump(path, bytes.substr(0, 20));
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("manifest truncated"), DataError);
  }
  SUBCASE("trailing garbage is a length mismatch, not silently ignored") {
    dump(path, bytes + std::string(8, '\0'));
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("length mismatch"), DataError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: bad magic and unknown version are rejected") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  save_checkpoint(sample_checkpoint(), path);
  const std::string bytes = slurp(path);

  SUBCASE("bad magic") {
    std::string evil = bytes;
    evil[0] = 'X';
    dump(path, evil);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                         DataError);
  }
  SUBCASE("unknown format_version") {
    const SplitFile parts = split_checkpoint(bytes);
    auto manifest = nlohmann::json::parse(parts.manifest);
    manifest["format_version"] = 2;
    dump(path, reassemble(manifest.dump(), parts.blob));
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("format_version"), DataError);
  }
  SUBCASE("empty file") {
    dump(path, "");
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: hand-reordered manifest loads; re-save canonicalizes") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  const auto reordered = (dir / "reordered.ckpt").string();
  const auto resaved = (dir / "resaved.ckpt").string();
  const CheckpointData data = sample_checkpoint();
  save_checkpoint(data, path);
  const std::string original = slurp(path);

  // Reverse the tensor directory but leave offsets (and the blob) alone.
  const SplitFile parts = split_checkpoint(original);
  auto manifest = nlohmann::json::parse(parts.manifest);
  auto tensors = manifest.at("tensors");
  REQUIRE(tensors.size() > 2);
  std::reverse(tensors.begin(), tensors.end());
  manifest["tensors"] = tensors;
  dump(reordered, reassemble(manifest.dump(), parts.blob));

  const CheckpointData loaded = load_checkpoint(reordered);
  CHECK(params_bitwise_equal(loaded.params, data.params));
  CHECK(loaded.cell == data.cell);

  save_checkpoint(loaded, resaved);
  CHECK(slurp(resaved) == original);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: overlapping tensor extents are rejected") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  save_checkpoint(sample_checkpoint(), path);
  const SplitFile parts = split_checkpoint(slurp(path));
  auto manifest = nlohmann::json::parse(parts.manifest);
  auto& tensors = manifest.at("tensors");
  REQUIRE(tensors.size() >= 2);
  // Second entry now claims bytes inside the first entry's extent.
  tensors[1]["byte_offset"] = tensors[0]["byte_offset"];
  dump(path, reassemble(manifest.dump(), parts.blob));
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("overlap"),
                       DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: f32 export is lossy, recorded, and stable") {
  const auto dir = temp_dir();
  const auto p64 = (dir / "m64.ckpt").string();
  const auto p32 = (dir / "m32.ckpt").string();
  const auto p32b = (dir / "m32b.ckpt").string();
  CheckpointData data = sample_checkpoint();
  save_checkpoint(data, p64);
  data.float32 = true;
  save_checkpoint(data, p32);

  const std::string b64 = slurp(p64);
  const std::string b32 = slurp(p32);
  CHECK(b32.size() < b64.size());
  CHECK(b32.find("\"dtype\":\"f32\"") != std::string::npos);

  const CheckpointData loaded = load_checkpoint(p32);
  CHECK(loaded.float32 == true);
  // Values are exactly the f32-rounded originals.
  for (const auto& [name, tensor] : data.params.tensors) {
    const auto orig = tensor.data();
    const auto got = loaded.params.at(name).data();
    REQUIRE(orig.size() == got.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
      REQUIRE(got[i] == static_cast<double>(static_cast<float>(orig[i])));
    }
  }
  // Round-tripping the f32 file is byte-stable too.
  save_checkpoint(loaded, p32b);
  CHECK(slurp(p32b) == b32);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: non-finite metrics survive as NaN") {
  const auto dir = temp_dir();
  const auto path = (dir / "model.ckpt").string();
  CheckpointData data = sample_checkpoint();
  data.metrics["valid_metric"] = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint(data, path);
  const CheckpointData loaded = load_checkpoint(path);
  REQUIRE(loaded.metrics.count("valid_metric") == 1);
  CHECK(std::isnan(loaded.metrics.at("valid_metric")));
  CHECK(loaded.metrics.at("test_accuracy") == 0.9375);
  std::filesystem::remove_all(dir);
}

TEST_CASE("export_metrics: rows per summary, header-only when empty") {
  const auto dir = temp_dir();
  const auto path = (dir / "summary.csv").string();

  SUBCASE("empty list") {
    export_metrics({}, path);
    CHECK(slurp(path) == "task,model,metric,mean,std,seeds\n");
  }
  SUBCASE("two summaries, values recoverable exactly") {
    RepeatSummary a;
    a.task = "occupancy";
    a.model = "ltc";
    a.metric_name = "accuracy";
    a.mean = 0.9408921190821;
    a.stddev = 0.012345678901234567;
    a.runs.resize(5);
    RepeatSummary b;
    b.task = "traffic";
    b.model = "lstm";
    b.metric_name = "mse";
    b.mean = 1.0 / 3.0;
    b.stddev = 0.0;
    b.runs.resize(3);
    export_metrics({a, b}, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "task,model,metric,mean,std,seeds");
    std::getline(in, line);
    auto fields = split_csv_line(line);
    REQUIRE(fields.size() == 6);
    CHECK(fields[0] == "occupancy");
    CHECK(fields[2] == "accuracy");
    CHECK(std::strtod(fields[3].c_str(), nullptr) == a.mean);
    CHECK(std::strtod(fields[4].c_str(), nullptr) == a.stddev);
    CHECK(fields[5] == "5");
    std::getline(in, line);
    fields = split_csv_line(line);
    CHECK(std::strtod(fields[3].c_str(), nullptr) == b.mean);
    CHECK(fields[5] == "3");
    CHECK_FALSE(std::getline(in, line));
  }
  std::filesystem::remove_all(dir);
}
