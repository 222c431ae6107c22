#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "ltcse/fetch.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace ltcse {

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) !=
      1) {
    throw DataError("sha256: digest computation failed");
  }
  static const char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(std::size_t(len) * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// zlib-backed streams
// ---------------------------------------------------------------------------

namespace {

void require_stream_size(std::string_view in) {
  if (in.size() > 0xFFFFFFFFull) {
    throw DataError("zlib: stream larger than 4 GiB is not supported");
  }
}

std::string zlib_inflate(std::string_view in, int window_bits,
                         std::size_t size_hint = 0) {
  require_stream_size(in);
  z_stream zs{};
  if (inflateInit2(&zs, window_bits) != Z_OK) {
    throw DataError("zlib: inflateInit failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  out.reserve(size_hint ? size_hint : in.size() * 3);
  char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    const std::size_t produced = sizeof buf - zs.avail_out;
    out.append(buf, produced);
    if (rc == Z_OK || rc == Z_STREAM_END) continue;
    const std::string msg = zs.msg ? zs.msg : "code " + std::to_string(rc);
    inflateEnd(&zs);
    throw DataError(rc == Z_BUF_ERROR ? "zlib: truncated stream"
                                      : "zlib: inflate failed: " + msg);
  }
  inflateEnd(&zs);
  return out;
}

std::string zlib_deflate(std::string_view in, int window_bits) {
  require_stream_size(in);
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, window_bits, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK) {
    throw DataError("zlib: deflateInit failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = deflate(&zs, Z_FINISH);
    out.append(buf, sizeof buf - zs.avail_out);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      deflateEnd(&zs);
      throw DataError("zlib: deflate failed");
    }
  }
  deflateEnd(&zs);
  return out;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos),
                static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string gzip_compress(std::string_view bytes) {
  return zlib_deflate(bytes, 15 + 16);
}

std::string gzip_decompress(std::string_view bytes) {
  return zlib_inflate(bytes, 15 + 32);
}

// ---------------------------------------------------------------------------
// Minimal zip reader/writer. Only what the UCI archives need: stored and
// deflated entries, no encryption, no zip64, sizes taken from the central
// directory (authoritative even when local headers carry data descriptors).
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;

std::uint16_t rd16(std::string_view s, std::size_t at) {
  if (at + 2 > s.size()) throw DataError("zip: truncated archive");
  const auto* p = reinterpret_cast<const unsigned char*>(s.data() + at);
  return std::uint16_t(p[0] | (p[1] << 8));
}

std::uint32_t rd32(std::string_view s, std::size_t at) {
  if (at + 4 > s.size()) throw DataError("zip: truncated archive");
  const auto* p = reinterpret_cast<const unsigned char*>(s.data() + at);
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

void wr16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char((v >> 8) & 0xFF));
}

void wr32(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char((v >> 8) & 0xFF));
  out.push_back(char((v >> 16) & 0xFF));
  out.push_back(char((v >> 24) & 0xFF));
}

struct CentralEntry {
  std::string name;
  std::uint16_t method = 0;
  std::uint32_t crc = 0;
  std::uint32_t compressed = 0;
  std::uint32_t uncompressed = 0;
  std::uint32_t local_offset = 0;
};

std::vector<CentralEntry> central_directory(std::string_view zip) {
  // End-of-central-directory record: fixed 22 bytes plus a comment of up
  // to 65535 bytes; scan backwards for its signature.
  if (zip.size() < 22) throw DataError("zip: truncated archive");
  const std::size_t scan_from =
      zip.size() >= 22 + 65535 ? zip.size() - 22 - 65535 : 0;
  std::size_t end_at = std::string::npos;
  for (std::size_t i = zip.size() - 22 + 1; i-- > scan_from;) {
    if (rd32(zip, i) == kEndSig) {
      end_at = i;
      break;
    }
  }
  if (end_at == std::string::npos) {
    throw DataError("zip: end-of-central-directory record not found");
  }
  const std::uint16_t count = rd16(zip, end_at + 10);
  const std::uint32_t cd_size = rd32(zip, end_at + 12);
  const std::uint32_t cd_offset = rd32(zip, end_at + 16);
  if (std::size_t(cd_offset) + cd_size > zip.size()) {
    throw DataError("zip: central directory extends past end of file");
  }
  std::vector<CentralEntry> entries;
  entries.reserve(count);
  std::size_t at = cd_offset;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (rd32(zip, at) != kCentralSig) {
      throw DataError("zip: bad central directory entry signature");
    }
    const std::uint16_t flags = rd16(zip, at + 8);
    if (flags & 1u) throw DataError("zip: encrypted entries are not supported");
    CentralEntry e;
    e.method = rd16(zip, at + 10);
    e.crc = rd32(zip, at + 16);
    e.compressed = rd32(zip, at + 20);
    e.uncompressed = rd32(zip, at + 24);
    const std::uint16_t name_len = rd16(zip, at + 28);
    const std::uint16_t extra_len = rd16(zip, at + 30);
    const std::uint16_t comment_len = rd16(zip, at + 32);
    e.local_offset = rd32(zip, at + 42);
    if (at + 46 + name_len > zip.size()) throw DataError("zip: truncated archive");
    e.name.assign(zip.data() + at + 46, name_len);
    entries.push_back(std::move(e));
    at += 46 + std::size_t(name_len) + extra_len + comment_len;
  }
  return entries;
}

std::string extract_entry(std::string_view zip, const CentralEntry& e) {
  const std::size_t at = e.local_offset;
  if (rd32(zip, at) != kLocalSig) {
    throw DataError("zip: bad local header for entry " + e.name);
  }
  const std::uint16_t name_len = rd16(zip, at + 26);
  const std::uint16_t extra_len = rd16(zip, at + 28);
  const std::size_t data_at = at + 30 + name_len + extra_len;
  if (data_at + e.compressed > zip.size()) {
    throw DataError("zip: entry " + e.name + " extends past end of file");
  }
  const std::string_view raw = zip.substr(data_at, e.compressed);
  std::string out;
  if (e.method == 0) {
    out.assign(raw);
  } else if (e.method == 8) {
    out = zlib_inflate(raw, -15, e.uncompressed);
  } else {
    throw DataError("zip: unsupported compression method " +
                    std::to_string(e.method) + " for entry " + e.name);
  }
  if (out.size() != e.uncompressed || crc32_of(out) != e.crc) {
    throw DataError("zip: integrity check failed for entry " + e.name);
  }
  return out;
}

}  // namespace

std::string zip_archive(const std::vector<ZipEntry>& entries) {
  std::string out;
  std::vector<CentralEntry> central;
  central.reserve(entries.size());
  for (const ZipEntry& entry : entries) {
    CentralEntry e;
    e.name = entry.name;
    e.crc = crc32_of(entry.data);
    e.uncompressed = static_cast<std::uint32_t>(entry.data.size());
    std::string packed =
        entry.deflate ? zlib_deflate(entry.data, -15) : entry.data;
    e.method = entry.deflate ? 8 : 0;
    e.compressed = static_cast<std::uint32_t>(packed.size());
    e.local_offset = static_cast<std::uint32_t>(out.size());
    wr32(out, kLocalSig);
    wr16(out, 20);  // version needed
    wr16(out, 0);   // flags
    wr16(out, e.method);
    wr16(out, 0);  // mod time
    wr16(out, 0);  // mod date
    wr32(out, e.crc);
    wr32(out, e.compressed);
    wr32(out, e.uncompressed);
    wr16(out, static_cast<std::uint16_t>(e.name.size()));
    wr16(out, 0);  // extra
    out += e.name;
    out += packed;
    central.push_back(std::move(e));
  }
  const std::uint32_t cd_offset = static_cast<std::uint32_t>(out.size());
  for (const CentralEntry& e : central) {
    wr32(out, kCentralSig);
    wr16(out, 20);  // version made by
    wr16(out, 20);  // version needed
    wr16(out, 0);   // flags
    wr16(out, e.method);
    wr16(out, 0);  // mod time
    wr16(out, 0);  // mod date
    wr32(out, e.crc);
    wr32(out, e.compressed);
    wr32(out, e.uncompressed);
    wr16(out, static_cast<std::uint16_t>(e.name.size()));
    wr16(out, 0);  // extra
    wr16(out, 0);  // comment
    wr16(out, 0);  // disk
    wr16(out, 0);  // internal attrs
    wr32(out, 0);  // external attrs
    wr32(out, e.local_offset);
    out += e.name;
  }
  const std::uint32_t cd_size = static_cast<std::uint32_t>(out.size()) - cd_offset;
  wr32(out, kEndSig);
  wr16(out, 0);  // disk
  wr16(out, 0);  // cd start disk
  wr16(out, static_cast<std::uint16_t>(central.size()));
  wr16(out, static_cast<std::uint16_t>(central.size()));
  wr32(out, cd_size);
  wr32(out, cd_offset);
  wr16(out, 0);  // comment
  return out;
}

std::vector<std::string> zip_entry_names(std::string_view zip) {
  std::vector<std::string> names;
  for (const CentralEntry& e : central_directory(zip)) names.push_back(e.name);
  return names;
}

std::string zip_extract(std::string_view zip, const std::string& name) {
  for (const CentralEntry& e : central_directory(zip)) {
    if (e.name == name) return extract_entry(zip, e);
  }
  throw DataError("zip: no entry named " + name);
}

std::string zip_extract_suffix(std::string_view zip, const std::string& suffix) {
  for (const CentralEntry& e : central_directory(zip)) {
    if (e.name.size() >= suffix.size() &&
        e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return extract_entry(zip, e);
    }
  }
  throw DataError("zip: no entry ending with " + suffix);
}

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

long civil_days(int year, unsigned month, unsigned day) {
  year -= month <= 2;
  const long era = (year >= 0 ? year : year - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(year - era * 400);
  const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + long(doe) - 719468;
}

unsigned weekday_monday0(int year, unsigned month, unsigned day) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  const long days = civil_days(year, month, day);
  return unsigned(((days % 7) + 7 + 3) % 7);
}

// ---------------------------------------------------------------------------
// Raw-archive preparation
// ---------------------------------------------------------------------------

namespace {

void write_canonical_header(std::ostream& out, const TaskSpec& spec) {
  out << spec.timestamp_column;
  for (const std::string& c : spec.feature_columns) out << ',' << c;
  out << ',' << spec.target_column << '\n';
}

std::size_t find_column(const std::vector<std::string>& header,
                        const std::string& name, const std::string& context) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(context + ": raw header is missing column " + name);
}

bool blank_line(const std::string& line) {
  return line.empty() || line == "\r";
}

}  // namespace

std::string prepare_occupancy(const std::string& zip_bytes) {
  const TaskSpec spec = task_spec("occupancy");
  std::ostringstream out;
  write_canonical_header(out, spec);
  // The three source files cover consecutive date ranges in this order.
  static const std::array<const char*, 3> parts = {"datatest.txt",
                                                   "datatraining.txt",
                                                   "datatest2.txt"};
  std::vector<std::string> wanted = {spec.timestamp_column};
  wanted.insert(wanted.end(), spec.feature_columns.begin(),
                spec.feature_columns.end());
  wanted.push_back(spec.target_column);
  for (const char* part : parts) {
    std::istringstream lines(zip_extract_suffix(zip_bytes, part));
    std::string line;
    if (!std::getline(lines, line)) {
      throw DataError("occupancy: raw file " + std::string(part) + " is empty");
    }
    std::vector<std::string> header = split_csv_line(line);
    std::vector<std::size_t> cols;
    for (const std::string& name : wanted) {
      cols.push_back(find_column(header, name, "occupancy"));
    }
    while (std::getline(lines, line)) {
      if (blank_line(line)) continue;
      const std::vector<std::string> fields = split_csv_line(line);
      // Data rows carry an unnamed leading row-number column.
      const std::size_t shift = fields.size() - header.size();
      if (shift > 1) {
        throw DataError("occupancy: malformed row in " + std::string(part));
      }
      for (std::size_t j = 0; j < cols.size(); ++j) {
        out << (j ? "," : "") << fields[cols[j] + shift];
      }
      out << '\n';
    }
  }
  return out.str();
}

namespace {

std::vector<std::vector<double>> parse_har_matrix(const std::string& text,
                                                  std::size_t cols,
                                                  const std::string& what) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (blank_line(line)) continue;
    std::istringstream fields(line);
    std::vector<double> row;
    row.reserve(cols);
    double v;
    while (fields >> v) row.push_back(v);
    if (row.size() != cols) {
      throw DataError("har: " + what + " row " + std::to_string(rows.size()) +
                      " has " + std::to_string(row.size()) + " values, expected " +
                      std::to_string(cols));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<int> parse_har_labels(const std::string& text, const std::string& what) {
  std::vector<int> labels;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (blank_line(line)) continue;
    const int label = std::atoi(line.c_str());
    if (label < 1 || label > 6) {
      throw DataError("har: " + what + " contains label " + std::to_string(label) +
                      " outside 1..6");
    }
    labels.push_back(label);
  }
  return labels;
}

}  // namespace

std::string prepare_har(const std::string& zip_bytes) {
  const TaskSpec spec = task_spec("har");
  std::ostringstream out;
  write_canonical_header(out, spec);
  std::size_t t = 0;
  for (const char* part : {"train", "test"}) {
    const std::string prefix = std::string(part) + "/";
    auto x = parse_har_matrix(
        zip_extract_suffix(zip_bytes, prefix + "X_" + part + ".txt"),
        spec.input_size, prefix + "X");
    auto y = parse_har_labels(
        zip_extract_suffix(zip_bytes, prefix + "y_" + part + ".txt"), prefix + "y");
    if (x.size() != y.size()) {
      throw DataError("har: " + prefix + " has " + std::to_string(x.size()) +
                      " feature rows but " + std::to_string(y.size()) + " labels");
    }
    for (std::size_t r = 0; r < x.size(); ++r, ++t) {
      out << t;
      for (double v : x[r]) out << ',' << format_real(v);
      out << ',' << (y[r] - 1) << '\n';  // labels shifted to 0..5
    }
  }
  return out.str();
}

std::string prepare_traffic(const std::string& zip_bytes) {
  const TaskSpec spec = task_spec("traffic");
  std::string csv;
  bool found = false;
  for (const std::string& name : zip_entry_names(zip_bytes)) {
    if (name.size() >= 7 && name.compare(name.size() - 7, 7, ".csv.gz") == 0) {
      csv = gzip_decompress(zip_extract(zip_bytes, name));
      found = true;
      break;
    }
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".csv") == 0) {
      csv = zip_extract(zip_bytes, name);
      found = true;
      break;
    }
  }
  if (!found) throw DataError("traffic: no .csv or .csv.gz entry in archive");

  std::istringstream lines(csv);
  std::string line;
  if (!std::getline(lines, line)) throw DataError("traffic: raw file is empty");
  const std::vector<std::string> header = split_csv_line(line);
  const std::size_t c_holiday = find_column(header, "holiday", "traffic");
  const std::size_t c_temp = find_column(header, "temp", "traffic");
  const std::size_t c_rain = find_column(header, "rain_1h", "traffic");
  const std::size_t c_snow = find_column(header, "snow_1h", "traffic");
  const std::size_t c_clouds = find_column(header, "clouds_all", "traffic");
  const std::size_t c_dt = find_column(header, "date_time", "traffic");
  const std::size_t c_target = find_column(header, "traffic_volume", "traffic");

  std::ostringstream out;
  write_canonical_header(out, spec);
  while (std::getline(lines, line)) {
    if (blank_line(line)) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw DataError("traffic: malformed row: " + line);
    }
    int year = 0;
    unsigned month = 0, day = 0, hour = 0;
    if (std::sscanf(f[c_dt].c_str(), "%d-%u-%u %u", &year, &month, &day, &hour) !=
        4) {
      throw DataError("traffic: unparseable date_time: " + f[c_dt]);
    }
    const unsigned dow = weekday_monday0(year, month, day);
    const bool weekend = dow >= 5;
    const bool holiday = !f[c_holiday].empty() && f[c_holiday] != "None";
    out << f[c_dt] << ',' << f[c_temp] << ',' << f[c_rain] << ',' << f[c_snow]
        << ',' << f[c_clouds] << ',' << hour << ',' << dow << ','
        << (weekend ? 1 : 0) << ',' << (holiday ? 1 : 0) << ',' << f[c_target]
        << '\n';
  }
  return out.str();
}

std::string prepare_power(const std::string& zip_bytes) {
  const TaskSpec spec = task_spec("power");
  const std::string text =
      zip_extract_suffix(zip_bytes, "household_power_consumption.txt");
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line)) throw DataError("power: raw file is empty");
  const std::vector<std::string> header = split_csv_line(line, ';');
  const std::size_t c_date = find_column(header, "Date", "power");
  const std::size_t c_time = find_column(header, "Time", "power");
  // Features first, target (Global_active_power) last — canonical order.
  std::vector<std::string> numeric = spec.feature_columns;
  numeric.push_back(spec.target_column);
  std::vector<std::size_t> cols;
  for (const std::string& name : numeric) {
    cols.push_back(find_column(header, name, "power"));
  }

  std::ostringstream out;
  write_canonical_header(out, spec);

  std::string key;           // "dd/mm/yyyy HH"
  std::string key_datetime;  // canonical "yyyy-mm-dd HH:00:00"
  std::vector<double> sums(numeric.size(), 0.0);
  std::vector<std::size_t> counts(numeric.size(), 0);
  auto flush = [&]() {
    if (key.empty()) return;
    out << key_datetime;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      out << ',';
      if (counts[j] == 0) {
        out << '?';
      } else {
        out << format_real(sums[j] / double(counts[j]));
      }
    }
    out << '\n';
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
  };

  while (std::getline(lines, line)) {
    if (blank_line(line)) continue;
    const std::vector<std::string> f = split_csv_line(line, ';');
    if (f.size() != header.size()) {
      throw DataError("power: malformed row: " + line);
    }
    unsigned day = 0, month = 0, hour = 0;
    int year = 0;
    if (std::sscanf(f[c_date].c_str(), "%u/%u/%d", &day, &month, &year) != 3 ||
        std::sscanf(f[c_time].c_str(), "%u", &hour) != 1) {
      throw DataError("power: unparseable timestamp: " + f[c_date] + " " +
                      f[c_time]);
    }
    char hour_key[24];
    std::snprintf(hour_key, sizeof hour_key, "%s %02u", f[c_date].c_str(), hour);
    if (hour_key != key) {
      flush();
      key = hour_key;
      char canonical[32];
      std::snprintf(canonical, sizeof canonical, "%04d-%02u-%02u %02u:00:00", year,
                    month, day, hour);
      key_datetime = canonical;
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::string& v = f[cols[j]];
      if (v.empty() || v == "?") continue;  // missing minute value
      char* end = nullptr;
      const double parsed = std::strtod(v.c_str(), &end);
      if (end == v.c_str()) continue;
      sums[j] += parsed;
      ++counts[j];
    }
  }
  flush();
  return out.str();
}

std::string prepare_ozone(const std::string& zip_bytes) {
  const TaskSpec spec = task_spec("ozone");
  const std::string text = zip_extract_suffix(zip_bytes, "eighthr.data");
  std::ostringstream out;
  write_canonical_header(out, spec);
  const std::size_t expected = spec.input_size + 2;  // date + features + class
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (blank_line(line)) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != expected) {
      throw DataError("ozone: row has " + std::to_string(f.size()) +
                      " fields, expected " + std::to_string(expected));
    }
    for (std::size_t j = 0; j < f.size(); ++j) out << (j ? "," : "") << f[j];
    out << '\n';
  }
  return out.str();
}

std::string prepare_archive(const std::string& task, const std::string& zip_bytes) {
  if (task == "occupancy") return prepare_occupancy(zip_bytes);
  if (task == "har") return prepare_har(zip_bytes);
  if (task == "traffic") return prepare_traffic(zip_bytes);
  if (task == "power") return prepare_power(zip_bytes);
  if (task == "ozone") return prepare_ozone(zip_bytes);
  throw DataError("unknown task: " + task);
}

// ---------------------------------------------------------------------------
// Download cache
// ---------------------------------------------------------------------------

const std::map<std::string, TaskSource>& task_sources() {
  static const std::map<std::string, TaskSource> sources = {
      {"occupancy",
       {"https://archive.ics.uci.edu/static/public/357/occupancy+detection.zip",
        "occupancy.zip"}},
      {"har",
       {"https://archive.ics.uci.edu/static/public/240/"
        "human+activity+recognition+using+smartphones.zip",
        "har.zip"}},
      {"traffic",
       {"https://archive.ics.uci.edu/static/public/492/"
        "metro+interstate+traffic+volume.zip",
        "traffic.zip"}},
      {"power",
       {"https://archive.ics.uci.edu/static/public/235/"
        "individual+household+electric+power+consumption.zip",
        "power.zip"}},
      {"ozone",
       {"https://archive.ics.uci.edu/static/public/172/ozone+level+detection.zip",
        "ozone.zip"}},
  };
  return sources;
}

std::string default_cache_root() {
  if (const char* env = std::getenv("LTCSE_CACHE"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) {
    return std::string(home) + "/.cache/ltcse";
  }
  return ".ltcse_cache";
}

namespace {

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Exclusive advisory lock held for the lifetime of the guard.
class FileLock {
 public:
  explicit FileLock(const std::string& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ >= 0) ::flock(fd_, LOCK_EX);
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

bool https_get(const std::string& url, std::string& body, std::string& error) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    error = "malformed url";
    return false;
  }
  const std::size_t path_at = url.find('/', scheme_end + 3);
  const std::string origin =
      path_at == std::string::npos ? url : url.substr(0, path_at);
  const std::string path = path_at == std::string::npos ? "/" : url.substr(path_at);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(300, 0);
  auto res = client.Get(path);
  if (!res) {
    error = httplib::to_string(res.error());
    return false;
  }
  if (res->status != 200) {
    error = "HTTP status " + std::to_string(res->status);
    return false;
  }
  body = std::move(res->body);
  return true;
}

}  // namespace

Fetcher::Fetcher(std::string cache_root, bool offline)
    : cache_root_(std::move(cache_root)), offline_(offline) {}

std::string Fetcher::canonical_csv_path(const std::string& task) const {
  return (fs::path(cache_root_) / (task + ".csv")).string();
}

std::string Fetcher::manifest_path() const {
  return (fs::path(cache_root_) / "manifest.json").string();
}

std::string Fetcher::raw_archive(const std::string& task) {
  const auto source_it = task_sources().find(task);
  if (source_it == task_sources().end()) throw DataError("unknown task: " + task);
  const TaskSource& source = source_it->second;

  const fs::path dir = fs::path(cache_root_) / "raw" / task;
  fs::create_directories(dir);
  const fs::path path = dir / source.archive_name;

  using nlohmann::json;
  json manifest = json::object();
  if (fs::exists(manifest_path())) {
    manifest = json::parse(read_file_bytes(manifest_path()));
  }

  auto verify_or_record = [&](const std::string& bytes) {
    const std::string hash = sha256_hex(bytes);
    if (manifest.contains(task)) {
      const std::string expected = manifest[task].value("sha256", "");
      const std::uint64_t expected_bytes = manifest[task].value("bytes", 0ull);
      if (expected != hash || expected_bytes != bytes.size()) {
        throw DataError(task + ": integrity mismatch for " + path.string() +
                        ": manifest records sha256 " + expected + " (" +
                        std::to_string(expected_bytes) + " bytes) but file has sha256 " +
                        hash + " (" + std::to_string(bytes.size()) +
                        " bytes); delete the file to refetch or restore the "
                        "recorded copy");
      }
    } else {
      manifest[task] = {{"url", source.url},
                        {"sha256", hash},
                        {"bytes", bytes.size()}};
      write_file_atomic(manifest_path(), manifest.dump(2) + "\n");
    }
  };

  if (fs::exists(path)) {
    std::string bytes = read_file_bytes(path);
    verify_or_record(bytes);
    return bytes;
  }

  const std::string manual = "; download " + source.url +
                             " manually and place it at " + path.string();
  if (offline_) {
    throw DataError(task + ": raw archive is not cached and offline mode is on" +
                    manual);
  }
  HttpGet get = http_ ? http_ : https_get;
  std::string body, error;
  if (!get(source.url, body, error)) {
    throw DataError(task + ": download failed (" + error + ")" + manual);
  }
  verify_or_record(body);
  write_file_atomic(path, body);
  return body;
}

std::string Fetcher::ensure_canonical_csv(const std::string& task) {
  const std::string csv = canonical_csv_path(task);
  if (fs::exists(csv)) return csv;
  fs::create_directories(fs::path(cache_root_) / "raw");
  FileLock lock((fs::path(cache_root_) / "raw" / (task + ".lock")).string());
  if (fs::exists(csv)) return csv;  // another process built it while we waited
  const std::string bytes = raw_archive(task);
  write_file_atomic(csv, prepare_archive(task, bytes));
  return csv;
}

}  // namespace ltcse
