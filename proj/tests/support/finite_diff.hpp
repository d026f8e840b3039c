#pragma once

// Central finite-difference gradient checking. The oracle is independent
// of the analytic backward path: it only re-evaluates the scalar loss under
// point perturbations of each parameter entry.

#include "flexsdr/policy.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace test_util {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    long worst_index = -1;
    long entries = 0;
};

// `params` is perturbed in place and restored. `loss` must re-evaluate the
// scalar objective from the current parameter values; `analytic` holds the
// gradient under test, tensor-aligned with `params`.
template <typename ParamsT>
GradCheckResult check_gradients(ParamsT& params, const ParamsT& analytic,
                                const std::function<double()>& loss, double delta = 1e-5) {
    GradCheckResult result;
    auto views = params.tensors();
    auto grads = analytic.tensors();

    for (std::size_t ti = 0; ti < views.size(); ++ti) {
        double* data = views[ti].data;
        const double* g = grads[ti].data;
        for (long i = 0; i < views[ti].size(); ++i) {
            const double keep = data[i];
            data[i] = keep + delta;
            const double up = loss();
            data[i] = keep - delta;
            const double down = loss();
            data[i] = keep;

            const double numeric = (up - down) / (2.0 * delta);
            const double scale = std::max({1e-6, std::abs(numeric), std::abs(g[i])});
            const double rel = std::abs(numeric - g[i]) / scale;
            ++result.entries;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = views[ti].name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace test_util
