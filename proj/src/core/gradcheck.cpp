#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nforge {

GradCheckReport gradcheck(const std::string& op_name,
                          const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, Scalar tolerance, uint64_t seed,
                          int64_t max_coords, Scalar h) {
    GradCheckReport rep;
    rep.op_name = op_name;
    rep.tolerance = tolerance;

    for (auto& t : inputs) t.zero_grad();
    Tensor loss = fn(inputs);
    backward(loss);

    // Flat coordinate space across all inputs that carry gradients.
    std::vector<std::pair<size_t, int64_t>> coords;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        for (int64_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
    }
    if (static_cast<int64_t>(coords.size()) > max_coords) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<size_t>(max_coords));
    }

    NoGradGuard no_grad;
    for (auto [i, j] : coords) {
        Scalar analytic =
            inputs[i].has_grad() ? inputs[i].grad()[static_cast<size_t>(j)] : 0.0;
        Scalar orig = inputs[i].values()[static_cast<size_t>(j)];
        inputs[i].mutable_values()[static_cast<size_t>(j)] = orig + h;
        Scalar fp = fn(inputs).item();
        inputs[i].mutable_values()[static_cast<size_t>(j)] = orig - h;
        Scalar fm = fn(inputs).item();
        inputs[i].mutable_values()[static_cast<size_t>(j)] = orig;
        Scalar numeric = (fp - fm) / (2.0 * h);
        Scalar denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        Scalar rel = std::abs(analytic - numeric) / denom;
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
    rep.passed = rep.max_rel_error <= tolerance;
    return rep;
}

}  // namespace nforge
