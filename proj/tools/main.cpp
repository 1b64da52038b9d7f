#include <cstdio>

int main() {
  std::puts("seqmi: command-line interface not wired up yet");
  return 2;
}
