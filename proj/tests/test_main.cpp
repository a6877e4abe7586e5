#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstring>
#include <string>

std::string g_cli_path;

int main(int argc, char** argv) {
  std::vector<char*> args;
  for (int i = 0; i < argc; ++i) {
    if (std::strcmp(argv[i], "--cli-path") == 0 && i + 1 < argc) {
      g_cli_path = argv[i + 1];
      ++i;
      continue;
    }
    args.push_back(argv[i]);
  }
  doctest::Context ctx(static_cast<int>(args.size()), args.data());
  return ctx.run();
}
