#include "dpk/cli.hpp"

int main(int argc, char** argv) {
  return dpk::cli::run(argc, argv);
}
