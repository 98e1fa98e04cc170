#include "carrierscope/cli.hpp"

int main(int argc, char** argv) {
  return carrierscope::run_cli({argv + 1, argv + argc});
}
