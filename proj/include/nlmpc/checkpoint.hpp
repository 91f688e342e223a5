#pragma once

#include "nlmpc/mlp.hpp"
#include "nlmpc/serialize.hpp"
#include "nlmpc/surrogate.hpp"

namespace nlmpc {

/// Checkpoint format: one JSON document per model with layer shapes,
/// activation tags, and weight/bias arrays in row-major order.
inline json mlp_to_json(const Mlp& net) {
  json doc;
  doc["input_dim"] = net.input_dim();
  doc["output_dim"] = net.output_dim();
  json layers = json::array();
  for (const auto& l : net.layers) {
    json jl;
    jl["rows"] = l.W.rows();
    jl["cols"] = l.W.cols();
    jl["activation"] = to_string(l.act);
    jl["weight"] = mat_to_json(l.W);
    jl["bias"] = l.b ? vec_to_json(*l.b) : json(nullptr);
    layers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

inline Mlp mlp_from_json(const json& doc) {
  Mlp net;
  for (const auto& jl : doc.at("layers")) {
    MlpLayer l;
    const auto rows = jl.at("rows").get<Eigen::Index>();
    const auto cols = jl.at("cols").get<Eigen::Index>();
    l.W = mat_from_json(jl.at("weight"), rows, cols);
    if (!jl.at("bias").is_null()) l.b = vec_from_json(jl.at("bias"));
    l.act = activation_from_string(jl.at("activation").get<std::string>());
    net.layers.push_back(std::move(l));
  }
  net.validate();
  require(net.input_dim() == doc.at("input_dim").get<int>(), "mlp checkpoint: input_dim mismatch");
  return net;
}

inline json surrogate_to_json(const SurrogateModel& m) {
  json doc;
  doc["kind"] = to_string(m.kind);
  doc["dt"] = m.dt;
  doc["net"] = mlp_to_json(m.net);
  return doc;
}

inline SurrogateModel surrogate_from_json(const json& doc) {
  SurrogateModel m;
  m.kind = surrogate_kind_from_string(doc.at("kind").get<std::string>());
  m.dt = doc.at("dt").get<double>();
  m.net = mlp_from_json(doc.at("net"));
  return m;
}

}  // namespace nlmpc
