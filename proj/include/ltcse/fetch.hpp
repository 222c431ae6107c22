#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ltcse/data.hpp"

namespace ltcse {

// ---------------------------------------------------------------------------
// Small content utilities (hashing, gzip, zip). These exist so the
// download cache can verify integrity and unpack the upstream archives
// without shelling out; the writers double as test oracles for the readers.
// ---------------------------------------------------------------------------

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

std::string gzip_compress(std::string_view bytes);
std::string gzip_decompress(std::string_view bytes);

struct ZipEntry {
  std::string name;
  std::string data;
  bool deflate = true;  // false stores the entry uncompressed
};

/// Minimal zip writer (local headers + central directory + end record).
std::string zip_archive(const std::vector<ZipEntry>& entries);

/// Entry names in central-directory order.
std::vector<std::string> zip_entry_names(std::string_view zip);

/// Extract one entry by exact name; verifies size and CRC-32.
std::string zip_extract(std::string_view zip, const std::string& name);

/// First entry whose name ends with `suffix`; error when absent.
std::string zip_extract_suffix(std::string_view zip, const std::string& suffix);

// ---------------------------------------------------------------------------
// Calendar helpers for feature derivation.
// ---------------------------------------------------------------------------

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
long civil_days(int year, unsigned month, unsigned day);

/// Weekday with Monday = 0 ... Sunday = 6.
unsigned weekday_monday0(int year, unsigned month, unsigned day);

// ---------------------------------------------------------------------------
// Raw-archive preparation: upstream archive bytes -> canonical CSV text in
// the schema that load_csv(task_spec(name)) expects.
// ---------------------------------------------------------------------------

std::string prepare_occupancy(const std::string& zip_bytes);
std::string prepare_har(const std::string& zip_bytes);
std::string prepare_traffic(const std::string& zip_bytes);
std::string prepare_power(const std::string& zip_bytes);
std::string prepare_ozone(const std::string& zip_bytes);

/// Dispatch on task name.
std::string prepare_archive(const std::string& task, const std::string& zip_bytes);

// ---------------------------------------------------------------------------
// Download cache with trust-on-first-use integrity.
// ---------------------------------------------------------------------------

struct TaskSource {
  std::string url;           // upstream archive
  std::string archive_name;  // file name inside the cache
};

/// Upstream source per task.
const std::map<std::string, TaskSource>& task_sources();

/// HTTP GET hook: fill `body` and return true on success, or fill `error`.
/// Injectable so tests can serve fabricated archives or assert that no
/// network call happens.
using HttpGet =
    std::function<bool(const std::string& url, std::string& body, std::string& error)>;

/// $LTCSE_CACHE if set, else ~/.cache/ltcse.
std::string default_cache_root();

/// Manages <cache>/raw/<task>/<archive> downloads and <cache>/<task>.csv
/// canonical tables. A JSON manifest records {url, sha256, bytes} for each
/// archive on first fetch (trust on first use); every later read verifies
/// against it and refuses mismatches. All errors are DataError with
/// manual-download instructions where applicable.
class Fetcher {
 public:
  explicit Fetcher(std::string cache_root = default_cache_root(),
                   bool offline = false);

  void set_http(HttpGet get) { http_ = std::move(get); }
  const std::string& cache_root() const { return cache_root_; }
  bool offline() const { return offline_; }

  std::string canonical_csv_path(const std::string& task) const;
  std::string manifest_path() const;

  /// Verified raw archive bytes: reads the cache when present, otherwise
  /// downloads (unless offline). Records or checks the manifest hash.
  std::string raw_archive(const std::string& task);

  /// Ensure the canonical CSV exists (fetching and preparing if needed)
  /// and return its path. Holds an exclusive per-task lock while building.
  std::string ensure_canonical_csv(const std::string& task);

 private:
  std::string cache_root_;
  bool offline_ = false;
  HttpGet http_;
};

}  // namespace ltcse
