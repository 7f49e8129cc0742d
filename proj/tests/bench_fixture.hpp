#pragma once

#include "dfzsl/benchmark.hpp"

namespace testing {

// The default synthetic benchmark, generated once per process.
inline const dfzsl::Benchmark& default_benchmark() {
    static const dfzsl::Benchmark b = dfzsl::generate_benchmark(dfzsl::BenchmarkSpec{});
    return b;
}

}  // namespace testing
