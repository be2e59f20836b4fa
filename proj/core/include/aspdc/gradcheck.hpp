#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aspdc/rng.hpp"
#include "aspdc/tensor.hpp"

namespace aspdc {

struct GradcheckOptions {
  double step = 1e-3;       // central-difference step
  double tolerance = 1e-3;  // max relative error
  int seeds = 5;
  std::uint64_t base_seed = 1;
  // Elements perturbed per input tensor; larger tensors are subsampled.
  int max_elements = 24;
};

// Compares backward() against central differences of L = sum(r * f()) for a
// fixed random r. The error of one input is max_i |analytic_i - numeric_i|
// divided by max(max_i |numeric_i|, 1e-5); the returned value is the largest
// over all inputs. When the one-sided slopes of a stencil disagree (a kink
// lies inside it) the step is divided by ten, up to three times; if they
// still disagree the point is on the kink and the analytic value is compared
// with the nearer one-sided slope. `wrt` tensors must be read by `fn`.
double gradient_error(const std::function<Tensor64()>& fn, const std::vector<Tensor64>& wrt, Rng& rng,
                      const GradcheckOptions& options = {});

struct GradcheckResult {
  std::string name;
  int seeds = 0;
  double max_error = 0.0;
  bool passed = false;
};

// Finite-difference suite over every differentiable op and small networks.
// `progress` is called once per finished check.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {},
                                                 const std::function<void(const GradcheckResult&)>& progress = {});

}  // namespace aspdc
