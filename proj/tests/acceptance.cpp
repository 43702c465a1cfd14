// Acceptance suite: one pass/fail line per criterion. Placeholder until the
// full suite lands.
#include <iostream>

int main() {
  std::cout << "acceptance suite placeholder\n";
  return 1;
}
