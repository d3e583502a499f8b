#include <cstdio>
int main() { std::puts("playmimic: cli not wired yet"); return 0; }
