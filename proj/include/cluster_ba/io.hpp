#pragma once

// Text file formats: scans, poses, association, feature definitions, key/value
// manifests and run reports. Numbers are written with 17 significant digits
// so that every value reads back bit-identical.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cluster_ba/error.hpp"
#include "cluster_ba/geometry.hpp"
#include "cluster_ba/problem.hpp"
#include "cluster_ba/simulator.hpp"

namespace cluster_ba {

/// Shortest form that round-trips: %.17g.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

struct LineReader {
  std::string path;
  std::ifstream in;
  int line_no = 0;

  explicit LineReader(const std::filesystem::path& p) : path(p.string()), in(p) {
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  }

  /// Next line with comments, CR and surrounding blanks removed; empty lines
  /// are skipped. Returns false at end of file.
  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
        line.pop_back();
      const auto start = line.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      line.erase(0, start);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::Parse, path + ":" + std::to_string(line_no) + ": " + msg);
  }
};

inline std::vector<std::string_view> split_fields(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view f, const LineReader& r, std::size_t field) {
  double x = 0.0;
  const auto res = std::from_chars(f.data(), f.data() + f.size(), x);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    r.fail("field " + std::to_string(field + 1) + ": not a number: '" + std::string(f) + "'");
  }
  return x;
}

inline long long parse_int(std::string_view f, const LineReader& r, std::size_t field) {
  long long x = 0;
  const auto res = std::from_chars(f.data(), f.data() + f.size(), x);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    r.fail("field " + std::to_string(field + 1) + ": not an integer: '" + std::string(f) + "'");
  }
  return x;
}

inline std::vector<std::string_view> expect_fields(const std::string& line, std::size_t n,
                                                   const LineReader& r) {
  auto f = split_fields(line);
  if (f.size() != n) {
    r.fail("expected " + std::to_string(n) + " fields, got " + std::to_string(f.size()));
  }
  return f;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& p) {
  out.close();
  if (!out) throw Error(ErrorCode::Io, "write failed: " + p.string());
}

}  // namespace detail

// Scan file: "x y z" per line, meters, local frame.

inline void write_scan(const std::filesystem::path& p, const std::vector<Vec3>& points) {
  auto out = detail::open_out(p);
  for (const auto& x : points) {
    out << format_double(x.x()) << ' ' << format_double(x.y()) << ' ' << format_double(x.z())
        << '\n';
  }
  detail::close_out(out, p);
}

inline std::vector<Vec3> read_scan(const std::filesystem::path& p) {
  detail::LineReader r(p);
  std::vector<Vec3> pts;
  std::string line;
  while (r.next(line)) {
    const auto f = detail::expect_fields(line, 3, r);
    pts.emplace_back(detail::parse_double(f[0], r, 0), detail::parse_double(f[1], r, 1),
                     detail::parse_double(f[2], r, 2));
  }
  return pts;
}

// Pose file: "j r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz", j 1-based.

inline std::string pose_line(std::size_t j1, const Pose& T) {
  std::string s = std::to_string(j1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += ' ' + format_double(T.R(r, c));
    s += ' ' + format_double(T.t[r]);
  }
  return s;
}

inline void write_poses(const std::filesystem::path& p, std::span<const Pose> poses) {
  auto out = detail::open_out(p);
  for (std::size_t j = 0; j < poses.size(); ++j) out << pose_line(j + 1, poses[j]) << '\n';
  detail::close_out(out, p);
}

/// Poses must be listed as 1, 2, ..., M in order.
inline std::vector<Pose> read_poses(const std::filesystem::path& p) {
  detail::LineReader r(p);
  std::vector<Pose> poses;
  std::string line;
  while (r.next(line)) {
    const auto f = detail::expect_fields(line, 13, r);
    const long long j = detail::parse_int(f[0], r, 0);
    if (j != static_cast<long long>(poses.size()) + 1) {
      r.fail("pose index " + std::to_string(j) + ", expected " + std::to_string(poses.size() + 1));
    }
    Pose T;
    for (int row = 0; row < 3; ++row) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t k = 1 + 4 * row + c;
        T.R(row, c) = detail::parse_double(f[k], r, k);
      }
      const std::size_t k = 4 + 4 * row;
      T.t[row] = detail::parse_double(f[k], r, k);
    }
    if ((T.R * T.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        T.R.determinant() < 0.0) {
      r.fail("rotation is not orthonormal");
    }
    poses.push_back(T);
  }
  if (poses.empty()) throw Error(ErrorCode::Parse, p.string() + ": no poses");
  return poses;
}

// Association file: "feature_id pose_id point_index"; feature and pose ids are
// 1-based, point indices 0-based into the pose's scan file.

inline void write_association(const std::filesystem::path& p,
                              const std::vector<std::vector<Track>>& association) {
  auto out = detail::open_out(p);
  out << "# feature_id pose_id point_index\n";
  for (std::size_t i = 0; i < association.size(); ++i) {
    for (const auto& tr : association[i]) {
      for (auto k : tr.points) out << i + 1 << ' ' << tr.pose + 1 << ' ' << k << '\n';
    }
  }
  detail::close_out(out, p);
}

/// Rebuilds per-feature tracks sorted by pose; point order within a track
/// follows the file.
inline std::vector<std::vector<Track>> read_association(const std::filesystem::path& p,
                                                        std::span<const std::size_t> scan_sizes) {
  detail::LineReader r(p);
  std::vector<std::vector<std::vector<std::size_t>>> table;  // [feature][pose] indices
  std::string line;
  while (r.next(line)) {
    const auto f = detail::expect_fields(line, 3, r);
    const long long fid = detail::parse_int(f[0], r, 0);
    const long long pid = detail::parse_int(f[1], r, 1);
    const long long k = detail::parse_int(f[2], r, 2);
    if (fid < 1) r.fail("feature id must be >= 1");
    if (pid < 1 || pid > static_cast<long long>(scan_sizes.size())) {
      r.fail("pose id " + std::to_string(pid) + " out of range 1.." +
             std::to_string(scan_sizes.size()));
    }
    if (k < 0 || k >= static_cast<long long>(scan_sizes[pid - 1])) {
      r.fail("point index " + std::to_string(k) + " out of range for scan " + std::to_string(pid));
    }
    if (table.size() < static_cast<std::size_t>(fid)) table.resize(fid);
    auto& per_pose = table[fid - 1];
    if (per_pose.empty()) per_pose.resize(scan_sizes.size());
    per_pose[pid - 1].push_back(static_cast<std::size_t>(k));
  }
  std::vector<std::vector<Track>> out(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < table[i].size(); ++j) {
      if (!table[i][j].empty()) out[i].push_back({j, std::move(table[i][j])});
    }
    if (out[i].empty()) {
      throw Error(ErrorCode::Parse, p.string() + ": feature " + std::to_string(i + 1) +
                                        " has no points");
    }
  }
  return out;
}

// Feature file: "feature_id kind nx ny nz qx qy qz" (ground-truth geometry;
// only the kind is needed to build a problem).

inline void write_features(const std::filesystem::path& p, const std::vector<FeatureDef>& defs) {
  auto out = detail::open_out(p);
  out << "# feature_id kind nx ny nz qx qy qz\n";
  for (std::size_t i = 0; i < defs.size(); ++i) {
    out << i + 1 << ' ' << to_string(defs[i].kind);
    for (int a = 0; a < 3; ++a) out << ' ' << format_double(defs[i].n[a]);
    for (int a = 0; a < 3; ++a) out << ' ' << format_double(defs[i].q[a]);
    out << '\n';
  }
  detail::close_out(out, p);
}

inline std::vector<FeatureDef> read_features(const std::filesystem::path& p) {
  detail::LineReader r(p);
  std::vector<FeatureDef> defs;
  std::string line;
  while (r.next(line)) {
    const auto f = detail::expect_fields(line, 8, r);
    if (detail::parse_int(f[0], r, 0) != static_cast<long long>(defs.size()) + 1) {
      r.fail("feature ids must be 1, 2, ... in order");
    }
    FeatureDef d;
    if (f[1] == "plane") {
      d.kind = FeatureKind::Plane;
    } else if (f[1] == "edge") {
      d.kind = FeatureKind::Edge;
    } else {
      r.fail("field 2: unknown feature kind '" + std::string(f[1]) + "'");
    }
    for (int a = 0; a < 3; ++a) d.n[a] = detail::parse_double(f[2 + a], r, 2 + a);
    for (int a = 0; a < 3; ++a) d.q[a] = detail::parse_double(f[5 + a], r, 5 + a);
    defs.push_back(d);
  }
  return defs;
}

/// Ordered "key = value" pairs.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline const std::string* find_value(const KeyValues& kv, std::string_view key) {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

/// A CSV section: header plus rows of already formatted cells.
struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const Table&) const = default;
};

/// Structured run record: configuration echo, scalar metrics and CSV tables.
///
///   [config]
///   key = value
///   [metrics]
///   key = value
///   [table cost_trace]
///   iteration,cost
///   0,12.5
struct RunReport {
  KeyValues config;
  KeyValues metrics;
  std::vector<Table> tables;

  void set_config(std::string key, std::string value) { config.emplace_back(std::move(key), std::move(value)); }
  void set_metric(std::string key, std::string value) { metrics.emplace_back(std::move(key), std::move(value)); }
  void set_metric(std::string key, double value) { set_metric(std::move(key), format_double(value)); }
  void set_metric(std::string key, long long value) { set_metric(std::move(key), std::to_string(value)); }
  void set_metric(std::string key, int value) { set_metric(std::move(key), std::to_string(value)); }
  void set_metric(std::string key, std::size_t value) { set_metric(std::move(key), std::to_string(value)); }

  bool operator==(const RunReport&) const = default;
};

namespace detail {

inline void check_token(const std::string& s, bool allow_comma) {
  for (char c : s) {
    if (c == '\n' || c == '\r' || c == '#' || (!allow_comma && c == ',')) {
      throw Error(ErrorCode::InvalidProblem, "report: value '" + s + "' contains a reserved character");
    }
  }
}

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    check_token(k, false);
    check_token(v, true);
    if (k.empty() || k.find('=') != std::string::npos || k.front() == '[' ||
        k.find_first_of(" \t") != std::string::npos) {
      throw Error(ErrorCode::InvalidProblem, "report: bad key '" + k + "'");
    }
    out << k << " = " << v << '\n';
  }
}

inline std::string join_csv(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    check_token(cells[c], false);
    if (c) s += ',';
    s += cells[c];
  }
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

inline std::string to_text(const RunReport& r) {
  std::ostringstream out;
  out << "# cluster_ba run report\n[config]\n";
  detail::write_key_values(out, r.config);
  out << "[metrics]\n";
  detail::write_key_values(out, r.metrics);
  for (const auto& t : r.tables) {
    detail::check_token(t.name, false);
    out << "[table " << t.name << "]\n" << detail::join_csv(t.header) << '\n';
    for (const auto& row : t.rows) {
      if (row.size() != t.header.size()) {
        throw Error(ErrorCode::InvalidProblem, "report: table " + t.name + " has a ragged row");
      }
      out << detail::join_csv(row) << '\n';
    }
  }
  return out.str();
}

inline void write_report(const std::filesystem::path& p, const RunReport& r) {
  auto out = detail::open_out(p);
  out << to_text(r);
  detail::close_out(out, p);
}

inline RunReport read_report(const std::filesystem::path& p) {
  detail::LineReader r(p);
  RunReport rep;
  enum { None, Config, Metrics, TableHeader, TableRows } section = None;
  std::string line;
  while (r.next(line)) {
    if (line.front() == '[') {
      if (line == "[config]") {
        section = Config;
      } else if (line == "[metrics]") {
        section = Metrics;
      } else if (line.starts_with("[table ") && line.back() == ']') {
        rep.tables.push_back({line.substr(7, line.size() - 8), {}, {}});
        section = TableHeader;
      } else {
        r.fail("unknown section " + line);
      }
      continue;
    }
    switch (section) {
      case None:
        r.fail("content before the first section");
      case Config:
      case Metrics: {
        const auto eq = line.find(" = ");
        const auto bare = line.find(" =");
        std::string key, value;
        if (eq != std::string::npos) {
          key = line.substr(0, eq);
          value = line.substr(eq + 3);
        } else if (bare != std::string::npos && bare + 2 == line.size()) {
          key = line.substr(0, bare);  // empty value, trailing blank stripped
        } else {
          r.fail("expected 'key = value'");
        }
        (section == Config ? rep.config : rep.metrics).emplace_back(key, value);
        break;
      }
      case TableHeader:
        rep.tables.back().header = detail::split_csv(line);
        section = TableRows;
        break;
      case TableRows: {
        auto row = detail::split_csv(line);
        if (row.size() != rep.tables.back().header.size()) {
          r.fail("expected " + std::to_string(rep.tables.back().header.size()) + " columns");
        }
        rep.tables.back().rows.push_back(std::move(row));
        break;
      }
    }
  }
  return rep;
}

/// Plain CSV: header line, then one line per row.
inline std::string to_csv(const Table& t) {
  std::string s = detail::join_csv(t.header) + '\n';
  for (const auto& row : t.rows) s += detail::join_csv(row) + '\n';
  return s;
}

inline void write_csv(const std::filesystem::path& p, const Table& t) {
  auto out = detail::open_out(p);
  out << to_csv(t);
  detail::close_out(out, p);
}

inline void write_key_value_file(const std::filesystem::path& p, const KeyValues& kv) {
  auto out = detail::open_out(p);
  detail::write_key_values(out, kv);
  detail::close_out(out, p);
}

inline KeyValues read_key_value_file(const std::filesystem::path& p) {
  detail::LineReader r(p);
  KeyValues kv;
  std::string line;
  while (r.next(line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

/// Scene directory layout written by the simulate command.
struct SceneFiles {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.txt"; }
  std::filesystem::path gt_poses() const { return dir / "poses_gt.txt"; }
  std::filesystem::path init_poses() const { return dir / "poses_init.txt"; }
  std::filesystem::path association() const { return dir / "association.txt"; }
  std::filesystem::path features() const { return dir / "features.txt"; }
  std::filesystem::path scan(std::size_t j) const {
    char name[32];
    std::snprintf(name, sizeof name, "scan_%04zu.txt", j + 1);
    return dir / "scans" / name;
  }
};

/// Writes scans, gt poses, association and feature definitions.
inline void write_scene(const SceneFiles& files, const Scene& scene) {
  for (std::size_t j = 0; j < scene.scans.size(); ++j) write_scan(files.scan(j), scene.scans[j]);
  write_poses(files.gt_poses(), scene.gt_poses);
  write_association(files.association(), scene.association);
  write_features(files.features(), scene.features);
}

/// Reads a scene back; the scan count is taken from the gt pose file.
inline Scene read_scene(const SceneFiles& files) {
  Scene s;
  s.gt_poses = read_poses(files.gt_poses());
  for (std::size_t j = 0; j < s.gt_poses.size(); ++j) s.scans.push_back(read_scan(files.scan(j)));
  std::vector<std::size_t> sizes;
  for (const auto& sc : s.scans) sizes.push_back(sc.size());
  s.association = read_association(files.association(), sizes);
  s.features = read_features(files.features());
  if (s.features.size() != s.association.size()) {
    throw Error(ErrorCode::Parse, files.association().string() + ": " +
                                      std::to_string(s.association.size()) + " features but " +
                                      files.features().string() + " lists " +
                                      std::to_string(s.features.size()));
  }
  return s;
}

}  // namespace cluster_ba
