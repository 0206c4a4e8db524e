#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace anyir {

struct CheckOutcome {
    std::string module;
    std::string name;
    bool passed = false;
    std::string detail;
};

// Central-difference check of an L1 loss through a minimal double-precision
// model, differentiated w.r.t. the patch embedding. Returns the relative error.
double end_to_end_grad_error(std::uint64_t seed);

// Invariant checks for every module, run in-process. `progress` receives each
// outcome as it completes.
std::vector<CheckOutcome> run_selftest(std::uint64_t seed,
                                       const std::function<void(const CheckOutcome&)>& progress = {});

}  // namespace anyir
