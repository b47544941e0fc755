#pragma once

// Central finite-difference checking utilities shared by the unit tests and
// the acceptance suite's gradient criteria. Networks under test run in
// double precision so the difference quotient itself is trustworthy.

#include <cmath>
#include <functional>

#include "typlab/nn.hpp"

namespace fdcheck {

inline double numeric_partial(const std::function<double()>& loss, double* coord,
                              double h = 1e-5) {
    const double orig = *coord;
    *coord = orig + h;
    const double lp = loss();
    *coord = orig - h;
    const double lm = loss();
    *coord = orig;
    return (lp - lm) / (2 * h);
}

struct GradReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric, double scale) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), scale});
    return std::abs(analytic - numeric) / denom;
}

/// Compares analytic parameter gradients against central differences.
/// `loss` must recompute the full forward pass from current parameter
/// values; `analytic` holds gradients already accumulated for the same
/// point. Coordinates are subsampled with `stride` for large tensors.
inline GradReport check_params(const std::function<double()>& loss,
                               typlab::nn::ParamList<double>& params, double h = 1e-5,
                               std::size_t stride = 1) {
    GradReport report;
    double gmax = 0;
    for (auto& p : params)
        for (const auto& g : p.grad->data) gmax = std::max(gmax, std::abs(g));
    const double scale = std::max(1e-6 * gmax, 1e-9);
    for (auto& p : params) {
        for (std::size_t j = 0; j < p.value->numel(); j += stride) {
            const double numeric = numeric_partial(loss, &p.value->data[j], h);
            const double analytic = p.grad->data[j];
            report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic, numeric, scale));
            report.max_abs_err = std::max(report.max_abs_err, std::abs(analytic - numeric));
            ++report.checked;
        }
    }
    return report;
}

/// Same check for gradients with respect to an input tensor.
inline GradReport check_input(const std::function<double()>& loss, typlab::Tensor<double>& input,
                              const typlab::Tensor<double>& analytic, double h = 1e-5,
                              std::size_t stride = 1) {
    GradReport report;
    double gmax = 0;
    for (const auto& g : analytic.data) gmax = std::max(gmax, std::abs(g));
    const double scale = std::max(1e-6 * gmax, 1e-9);
    for (std::size_t j = 0; j < input.numel(); j += stride) {
        const double numeric = numeric_partial(loss, &input.data[j], h);
        report.max_rel_err =
            std::max(report.max_rel_err, rel_err(analytic.data[j], numeric, scale));
        report.max_abs_err = std::max(report.max_abs_err, std::abs(analytic.data[j] - numeric));
        ++report.checked;
    }
    return report;
}

}  // namespace fdcheck
