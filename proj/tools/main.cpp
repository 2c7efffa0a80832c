#include <string>
#include <vector>

#include "cli.hpp"
#include "contour/runtime.hpp"

int main(int argc, char** argv) {
  contour::tune_allocator();
  return contour::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
