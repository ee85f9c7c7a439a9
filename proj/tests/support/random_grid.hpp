#pragma once

#include <random>

#include "pamod/grid.hpp"

namespace oracle {

// Four buses, a spanning tree plus one chord, a local unit at every bus large
// enough to cover local demand, and a cheap unit at bus 1.
inline pamod::GridModel random_grid4(std::uint64_t seed, int T = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  pamod::GridModel g;
  g.buses = {1, 2, 3, 4};
  for (int b = 2; b <= 4; ++b) {
    const int a = 1 + static_cast<int>(rng() % (b - 1));
    g.lines.push_back({a, b, 0.05 + 0.3 * U(rng), 5.0 + 25.0 * U(rng)});
  }
  g.lines.push_back({1, 4, 0.05 + 0.3 * U(rng), 5.0 + 25.0 * U(rng)});
  for (int b = 1; b <= 4; ++b) {
    pamod::Series d;
    for (int t = 1; t <= T; ++t) d.push_back(5.0 + 30.0 * U(rng));
    g.loads.push_back({b, d, {}});
    pamod::Generator gen;
    gen.name = "g" + std::to_string(b);
    gen.bus = b;
    gen.pmax = {60.0};
    gen.cost = {20.0 + 40.0 * U(rng)};
    g.generators.push_back(gen);
  }
  pamod::Generator base;
  base.name = "base";
  base.bus = 1;
  base.pmax = {30.0 + 30.0 * U(rng)};
  base.cost = {5.0 + 5.0 * U(rng)};
  g.generators.push_back(base);
  return g;
}

}  // namespace oracle
