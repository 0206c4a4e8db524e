#include "doctest.h"

#include <cmath>

#include "anyir/gradcheck.hpp"
#include "anyir/ops.hpp"

using namespace anyir;

TEST_CASE("every registered op passes central differences on three shapes") {
    const auto lines = run_registered_grad_checks(1e-3, 1e-4, 2024);
    REQUIRE(lines.size() >= 3 * registered_grad_cases().size());
    for (const auto& l : lines) {
        INFO(l.op << " trial " << l.trial << " shapes " << l.shapes << " err " << l.max_rel_error);
        CHECK(l.passed);
    }
}
