#include "gproc/fixtures.hpp"
#include "gproc/model_io.hpp"

#include <iostream>

using namespace gproc;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  save_model(dir / "facade.obj", facade_fixture());
  save_model(dir / "ablation.ply", ablation_cloud().cloud);
  save_model(dir / "cube.obj", unit_cube());
  return 0;
}
