#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nlmpc/dynamics.hpp"
#include "nlmpc/serialize.hpp"

namespace nlmpc {

enum class Provenance { demo, random, mpc_rollout };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::demo: return "demo";
    case Provenance::random: return "random";
    case Provenance::mpc_rollout: return "mpc_rollout";
  }
  return "?";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "demo") return Provenance::demo;
  if (s == "random") return Provenance::random;
  if (s == "mpc_rollout") return Provenance::mpc_rollout;
  throw ContractViolation("unknown provenance tag: " + s);
}

/// one-step record (x, u, x+); the universal dataset element
struct TransitionTuple {
  Vec x, u, x_plus;
};

struct Dataset {
  std::string plant;
  Provenance provenance = Provenance::random;
  std::vector<TransitionTuple> tuples;
  /// rows where the generating controller failed (zero input recorded);
  /// empty means no flags
  std::vector<std::uint32_t> flagged_rows;

  size_t size() const { return tuples.size(); }
  bool empty() const { return tuples.empty(); }
  int nx() const { return tuples.empty() ? 0 : static_cast<int>(tuples.front().x.size()); }
  int nu() const { return tuples.empty() ? 0 : static_cast<int>(tuples.front().u.size()); }

  Mat states() const {
    Mat X(tuples.size(), nx());
    for (size_t r = 0; r < tuples.size(); ++r) X.row(r) = tuples[r].x.transpose();
    return X;
  }
  Mat inputs() const {
    Mat U(tuples.size(), nu());
    for (size_t r = 0; r < tuples.size(); ++r) U.row(r) = tuples[r].u.transpose();
    return U;
  }
  Mat next_states() const {
    Mat XP(tuples.size(), nx());
    for (size_t r = 0; r < tuples.size(); ++r) XP.row(r) = tuples[r].x_plus.transpose();
    return XP;
  }

  Dataset without_flagged() const {
    if (flagged_rows.empty()) return *this;
    Dataset out;
    out.plant = plant;
    out.provenance = provenance;
    std::vector<bool> bad(tuples.size(), false);
    for (auto r : flagged_rows)
      if (r < tuples.size()) bad[r] = true;
    for (size_t r = 0; r < tuples.size(); ++r)
      if (!bad[r]) out.tuples.push_back(tuples[r]);
    return out;
  }
};

inline std::filesystem::path dataset_manifest_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p += ".manifest.json";
  return p;
}

/// CSV layout: header `x0..x{n-1},u0..u{m-1},xp0..xp{n-1}`, one tuple per row;
/// plant tag, provenance and flagged rows live in the sidecar manifest.
inline void save_dataset(const std::filesystem::path& csv_path, const Dataset& ds) {
  require(!ds.empty(), "save_dataset: empty dataset");
  std::string out;
  const int n = ds.nx(), m = ds.nu();
  for (int i = 0; i < n; ++i) out += "x" + std::to_string(i) + ",";
  for (int i = 0; i < m; ++i) out += "u" + std::to_string(i) + ",";
  for (int i = 0; i < n; ++i) out += "xp" + std::to_string(i) + (i + 1 < n ? "," : "");
  out += "\n";
  for (const auto& t : ds.tuples) {
    for (int i = 0; i < n; ++i) out += fmt17(t.x[i]) + ",";
    for (int i = 0; i < m; ++i) out += fmt17(t.u[i]) + ",";
    for (int i = 0; i < n; ++i) out += fmt17(t.x_plus[i]) + (i + 1 < n ? "," : "");
    out += "\n";
  }
  write_text_file(csv_path, out);

  json manifest;
  manifest["plant"] = ds.plant;
  manifest["provenance"] = to_string(ds.provenance);
  manifest["count"] = ds.size();
  manifest["nx"] = n;
  manifest["nu"] = m;
  manifest["flagged_rows"] = ds.flagged_rows;
  save_json(dataset_manifest_path(csv_path), manifest);
}

inline Dataset load_dataset(const std::filesystem::path& csv_path) {
  const json manifest = load_json(dataset_manifest_path(csv_path));
  Dataset ds;
  ds.plant = manifest.at("plant").get<std::string>();
  ds.provenance = provenance_from_string(manifest.at("provenance").get<std::string>());
  ds.flagged_rows = manifest.at("flagged_rows").get<std::vector<std::uint32_t>>();
  const int n = manifest.at("nx").get<int>();
  const int m = manifest.at("nu").get<int>();

  const std::string text = read_text_file(csv_path);
  size_t pos = text.find('\n');
  require(pos != std::string::npos, "load_dataset: missing header");
  while (pos < text.size()) {
    size_t end = text.find('\n', pos + 1);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos + 1, end - pos - 1);
    pos = end;
    if (line.empty()) continue;
    TransitionTuple t;
    t.x.resize(n);
    t.u.resize(m);
    t.x_plus.resize(n);
    const char* c = line.c_str();
    char* next = nullptr;
    auto take = [&]() {
      const double v = std::strtod(c, &next);
      require(next != c, "load_dataset: malformed row");
      c = (*next == ',') ? next + 1 : next;
      return v;
    };
    for (int i = 0; i < n; ++i) t.x[i] = take();
    for (int i = 0; i < m; ++i) t.u[i] = take();
    for (int i = 0; i < n; ++i) t.x_plus[i] = take();
    ds.tuples.push_back(std::move(t));
  }
  require(ds.size() == manifest.at("count").get<size_t>(), "load_dataset: row count mismatch");
  return ds;
}

/// n tuples with x ~ Uniform(X), u ~ Uniform(U), x+ from the model
inline Dataset sample_random_transitions(const DynamicsModel& model, const BoxSet& X,
                                         const BoxSet& U, int n, Rng& rng) {
  require(n > 0, "sample_random_transitions: n must be positive");
  Dataset ds;
  ds.plant = model.name();
  ds.provenance = Provenance::random;
  ds.tuples.reserve(n);
  for (int i = 0; i < n; ++i) {
    TransitionTuple t;
    t.x = X.sample(rng);
    t.u = U.sample(rng);
    t.x_plus = model.step(t.x, t.u);
    ds.tuples.push_back(std::move(t));
  }
  return ds;
}

/// empirical one-step model error: max ||f(x,u) - fhat(x,u)|| over a test set
inline double estimate_model_error(const DynamicsModel& truth, const DynamicsModel& approx,
                                   const Dataset& test) {
  double mu = 0.0;
  for (const auto& t : test.tuples)
    mu = std::max(mu, (truth.step(t.x, t.u) - approx.step(t.x, t.u)).norm());
  return mu;
}

}  // namespace nlmpc
