#include <cstdio>
int main() { std::puts("bodyrep"); return 0; }
