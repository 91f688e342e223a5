#include <catch2/catch_amalgamated.hpp>

#include "nlmpc/config.hpp"
#include "nlmpc/pipeline.hpp"

using namespace nlmpc;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "nlmpc_io_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("default configs round trip through JSON exactly") {
  for (bool surrogate : {false, true}) {
    for (const RunConfig& cfg :
         {default_pendulum_config(surrogate), default_car_config(surrogate)}) {
      const json doc = run_config_to_json(cfg);
      const RunConfig back = run_config_from_json(doc);
      CHECK(run_config_to_json(back).dump() == doc.dump());
    }
  }
}

TEST_CASE("pendulum defaults carry the documented values") {
  RunConfig cfg = default_pendulum_config(false);
  CHECK(cfg.pendulum.dt == 0.01);
  CHECK(cfg.U.lower[0] == -0.64);
  CHECK(cfg.U.upper[0] == 0.64);
  CHECK(cfg.Q(0, 0) == 0.1);
  CHECK(cfg.demonstrator.N == 5);
  CHECK(cfg.demonstrator.terminal_scale == 500.0);
  CHECK(cfg.nlmpc.N == 1);
  CHECK(cfg.nlmpc.sqp.n_steps == 18);
  CHECK(cfg.nlmpc.sqp.r_trust == 0.5);
  CHECK(cfg.learning.alpha_list.size() == 10);
  CHECK(cfg.learning.alpha_list.front() == Catch::Approx(0.2));
  CHECK(cfg.learning.alpha_list.back() == Catch::Approx(2.0));
  CHECK(cfg.lyapunov.weight_decay == 0.002);
  CHECK(cfg.learning.reinit_V == false);

  RunConfig car = default_car_config(false);
  CHECK(car.car.dt == 0.2);
  CHECK(car.learning.alpha_list == std::vector<double>{1, 6, 11, 16, 21, 26, 31, 36});
  CHECK(car.nlmpc.sqp.r_trust == 0.005);
  CHECK(car.demonstrator.terminal == "stage_q");
  CHECK(car.learning.reinit_V == true);
  CHECK(car.lyapunov.l_ell == Catch::Approx(0.001 * M_PI));
}

TEST_CASE("missing required fields are reported with their JSON pointer") {
  json doc = run_config_to_json(default_pendulum_config(false));
  doc["lyapunov"].erase("rho");
  try {
    run_config_from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/lyapunov/rho") != std::string::npos);
  }
}

TEST_CASE("config hash is stable and sensitive") {
  RunConfig a = default_pendulum_config(false);
  RunConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  b.seed = 123;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("emit_level_set_grid geometry") {
  // V = ||x||^2
  LyapunovFunction V;
  MlpLayer l;
  l.W = Mat::Zero(2, 2);
  l.b = Vec::Zero(2);
  l.act = Activation::linear;
  V.v_net.layers.push_back(l);
  V.l_ell = 1.0;
  V.beta_raw = softplus_inv(1.0);
  V.n_V = 1;

  const auto dir = fresh_dir("grid");
  std::vector<GridAxis> axes = {GridAxis{-1, 1, std::nullopt}, GridAxis{-1, 1, std::nullopt}};
  pipeline::emit_level_set_grid(V, 0.5, axes, 3, dir / "grid.csv");

  const std::string text = read_text_file(dir / "grid.csv");
  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  REQUIRE(lines.size() == 10);  // header + 9 rows
  CHECK(lines[0] == "x0,x1,V");
  // center row value 0, corner (1,1) -> 2
  bool found_center = false, found_corner = false;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i] == "0,0,0") found_center = true;
    if (lines[i] == "1,1,2") found_corner = true;
  }
  CHECK(found_center);
  CHECK(found_corner);

  const json manifest = load_json(dir / "grid.csv.manifest.json");
  CHECK(manifest.at("l_s").get<double>() == 0.5);
  CHECK(manifest.at("rows").get<int>() == 9);

  SECTION("fixed dimension stays constant in every row") {
    LyapunovFunction V3;
    MlpLayer l3;
    l3.W = Mat::Zero(3, 3);
    l3.b = Vec::Zero(3);
    l3.act = Activation::linear;
    V3.v_net.layers.push_back(l3);
    V3.l_ell = 1.0;
    V3.beta_raw = softplus_inv(1.0);
    V3.n_V = 1;
    std::vector<GridAxis> axes3 = {GridAxis{-1, 1, std::nullopt}, GridAxis{-1, 1, std::nullopt},
                                   GridAxis{0, 0, 0.0}};
    pipeline::emit_level_set_grid(V3, 1.0, axes3, 3, dir / "grid3.csv");
    const std::string t3 = read_text_file(dir / "grid3.csv");
    size_t p = t3.find('\n') + 1;
    int rows = 0;
    while (p < t3.size()) {
      size_t end = t3.find('\n', p);
      if (end == std::string::npos) break;
      const std::string line = t3.substr(p, end - p);
      // third coordinate column is constant 0
      size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
      CHECK(line.substr(c2 + 1, c3 - c2 - 1) == "0");
      ++rows;
      p = end + 1;
    }
    CHECK(rows == 9);
  }
}

TEST_CASE("byte-identical stage reruns with the same config and seed") {
  RunConfig cfg = default_pendulum_config(false);
  cfg.surrogate.n_samples = 300;
  cfg.surrogate.train.epochs = 5;
  cfg.surrogate.train.batch = 100;

  const auto dir_a = fresh_dir("repro_a");
  const auto dir_b = fresh_dir("repro_b");
  cfg.output_dir = dir_a.string();
  pipeline::stage_gen_random(cfg);
  pipeline::stage_train_surrogate(cfg);
  cfg.output_dir = dir_b.string();
  pipeline::stage_gen_random(cfg);
  pipeline::stage_train_surrogate(cfg);

  for (const char* name : {"random.csv", "random.csv.manifest.json", "surrogate.json",
                           "surrogate_curves.json"}) {
    CHECK(read_text_file(dir_a / name) == read_text_file(dir_b / name));
  }
  // idempotent skip without --force
  CHECK_FALSE(pipeline::stage_gen_random(cfg));
  CHECK(pipeline::stage_gen_random(cfg, /*force=*/true));
}

TEST_CASE("mlp checkpoint file round trip is bit exact") {
  Rng rng(44);
  Mlp net = make_mlp(2, {5, 4}, 3, Activation::tanh, BiasInit::standard_normal, rng);
  const auto dir = fresh_dir("ckpt");
  save_json(dir / "net.json", mlp_to_json(net));
  const json doc = load_json(dir / "net.json");
  Mlp back = mlp_from_json(doc);
  save_json(dir / "net2.json", mlp_to_json(back));
  CHECK(read_text_file(dir / "net.json") == read_text_file(dir / "net2.json"));
}
