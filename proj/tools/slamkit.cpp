#include <iostream>
#include <string>
#include <vector>

#include "allocation_counter.hpp"
#include "slamkit/cli.hpp"

int main(int argc, char** argv) {
  slamkit::cli::Hooks hooks;
  hooks.allocations = &slamkit::tools::g_allocations;
  return slamkit::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr, hooks);
}
