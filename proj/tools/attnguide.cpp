#include <string>
#include <vector>

#include "attnguide/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return attnguide::run_cli(args);
}
