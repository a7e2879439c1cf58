#include "rediffuse/rng.hpp"

namespace rediffuse {

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t derive_stream(uint64_t seed, uint64_t purpose, uint64_t index) {
  return splitmix64(splitmix64(seed ^ (purpose * 0x9e3779b97f4a7c15ULL)) + index);
}

}  // namespace rediffuse
