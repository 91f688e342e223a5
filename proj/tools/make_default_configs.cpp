// Regenerates the shipped config files for the four experiment arms.
#include <iostream>

#include "nlmpc/config.hpp"

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : "configs";
  using namespace nlmpc;
  save_json(std::filesystem::path(dir) / "pendulum-nominal.json",
            run_config_to_json(default_pendulum_config(false)));
  save_json(std::filesystem::path(dir) / "pendulum-surrogate.json",
            run_config_to_json(default_pendulum_config(true)));
  save_json(std::filesystem::path(dir) / "car-nominal.json",
            run_config_to_json(default_car_config(false)));
  save_json(std::filesystem::path(dir) / "car-surrogate.json",
            run_config_to_json(default_car_config(true)));
  std::cout << "wrote 4 configs to " << dir << "\n";
  return 0;
}
