#include <string>
#include <vector>

#include "adaptune/allocator.hpp"
#include "adaptune/cli.hpp"

int main(int argc, char** argv) {
  adaptune::tune_allocator();
  return adaptune::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
