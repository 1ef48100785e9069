#include "groundcheck/cli.hpp"

int main(int argc, char** argv) {
  return groundcheck::cli::run({argv + 1, argv + argc});
}
