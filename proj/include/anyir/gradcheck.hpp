#pragma once

#include <functional>
#include <string>
#include <vector>

#include "anyir/autograd.hpp"
#include "anyir/rng.hpp"

namespace anyir {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::int64_t worst_index = 0;
};

using DiffFn = std::function<VarD(const std::vector<VarD>&)>;

// Compares reverse-mode gradients of a random projection sum(w * fn(x)) with
// central differences (f(x+h) - f(x-h)) / 2h, all evaluated in double.
// The error for each input is max_i |analytic_i - numeric_i| divided by the
// larger of the two gradients' max-abs (floored at 1e-12); the result is the
// maximum over inputs. Inputs listed in `constant_inputs` are not perturbed.
GradCheckResult grad_check(const DiffFn& fn, const std::vector<TensorD>& inputs, double h,
                           std::uint64_t projection_seed = 7,
                           const std::vector<std::size_t>& constant_inputs = {});

// A differentiable op with the input shapes it is checked on.
struct GradCheckCase {
    std::string op;
    std::vector<std::vector<Shape>> shape_sets;  // one input-shape list per trial
    DiffFn fn;
    // Fills inputs; defaults to U(-1, 1).
    std::function<TensorD(const Shape&, std::size_t input_index, Rng&)> make_input;
};

// Every differentiable op of the engine, each with three input-shape sets.
const std::vector<GradCheckCase>& registered_grad_cases();

struct GradCheckReportLine {
    std::string op;
    std::size_t trial = 0;
    std::string shapes;
    double max_rel_error = 0.0;
    bool passed = false;
};

std::vector<GradCheckReportLine> run_registered_grad_checks(double h, double tolerance,
                                                            std::uint64_t seed);

}  // namespace anyir
