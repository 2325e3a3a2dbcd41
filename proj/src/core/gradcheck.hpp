#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace nforge {

struct GradCheckReport {
    std::string op_name;
    Scalar max_rel_error = 0.0;
    Scalar tolerance = 1e-5;
    bool passed = false;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences. All coordinates are checked when their total is at most
// max_coords; otherwise a seeded sample of max_coords coordinates is used.
// Relative error denominator: max(|analytic|, |numeric|, 1e-8).
GradCheckReport gradcheck(const std::string& op_name,
                          const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, Scalar tolerance = 1e-5,
                          uint64_t seed = 0, int64_t max_coords = 200, Scalar h = 1e-5);

}  // namespace nforge
