#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "nlmpc/errors.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

using nlohmann::json;

/// 17 significant digits: enough to round-trip any double exactly.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json mat_to_json(const Mat& m) {
  json arr = json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  return arr;
}

inline Mat mat_from_json(const json& arr, Eigen::Index rows, Eigen::Index cols) {
  require(static_cast<Eigen::Index>(arr.size()) == rows * cols, "matrix json size mismatch");
  Mat m(rows, cols);
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = arr[at++].get<double>();
  return m;
}

inline json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vec vec_from_json(const json& arr) {
  Vec v(arr.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = arr[i].get<double>();
  return v;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_json(const std::filesystem::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

inline json load_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// FNV-1a over a string; used for config hashes in stage manifests.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace nlmpc
