#pragma once

// Small worlds and helpers shared by the unit suites.

#include <cmath>
#include <vector>

#include "refloop/agent.hpp"
#include "refloop/world.hpp"

namespace refloop::testing {

inline World standard_world(int size = 256, std::uint64_t seed = 7) {
  return World(generate_library(AttributeSchema::standard(), size, seed));
}

/// One family of cardinality 2 and no fillers: |V| = 4.
inline World tiny_world(int max_len) {
  const std::vector<int> cards{2};
  const auto schema = AttributeSchema::with_cardinalities(cards);
  ShapeLibrary lib{schema, {}};
  for (int i = 0; i < 10; ++i) lib.shapes.push_back(make_shape(schema, i, {i % 2}));
  return World(std::move(lib), 0, max_len);
}

/// Two families of cardinality 2 and no fillers: |V| = 6, four distinct shapes.
inline World small_world(int max_len) {
  const std::vector<int> cards{2, 2};
  const auto schema = AttributeSchema::with_cardinalities(cards);
  ShapeLibrary lib{schema, {}};
  for (int i = 0; i < 10; ++i) lib.shapes.push_back(make_shape(schema, i, {i % 2, (i / 2) % 2}));
  return World(std::move(lib), 0, max_len);
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace refloop::testing
