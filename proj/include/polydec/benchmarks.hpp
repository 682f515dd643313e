#pragma once

#include <string>

#include "polydec/system.hpp"

namespace polydec {

enum class BenchmarkId { cartpole, biped3, manip2, manip3 };

BenchmarkId benchmark_from_string(const std::string& id);

ControlSystem load_benchmark(BenchmarkId id);
ControlSystem load_benchmark(const std::string& id);

/// True if the string names a known benchmark.
bool is_benchmark(const std::string& id);

}  // namespace polydec
