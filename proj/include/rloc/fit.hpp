#pragma once

#include "rloc/common.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace rloc {

struct ExpDecayFit {
    double alpha = 0.0;
    double beta = 1.0;
    bool converged = false;
    int iterations = 0;
};

// Fits y(x) = exp(-alpha*x) * beta * scale to (x_i, y_i) by Gauss-Newton,
// initialized from a log-linear least-squares pass over the positive points.
// Stops when the step norm falls below 1e-9 or after 100 iterations.
inline ExpDecayFit fit_exp_decay(const std::vector<double>& xs, const std::vector<double>& ys, double scale) {
    if (xs.size() != ys.size()) throw data_error("fit_exp_decay: mismatched inputs");
    if (xs.size() < 2) throw training_error("fit_exp_decay: need at least 2 points");
    if (!(scale > 0.0)) throw training_error("fit_exp_decay: scale must be > 0");

    // log-linear init: ln(y/scale) = ln(beta) - alpha*x
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(ys[i] > 0.0)) continue;
        double ly = std::log(ys[i] / scale);
        sx += xs[i];
        sy += ly;
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ly;
        ++n_pos;
    }
    if (n_pos < 2) throw training_error("fit_exp_decay: need at least 2 positive points");
    double denom = n_pos * sxx - sx * sx;
    if (denom == 0.0) throw training_error("fit_exp_decay: degenerate abscissae");
    double slope = (n_pos * sxy - sx * sy) / denom;
    double intercept = (sy - slope * sx) / n_pos;

    ExpDecayFit fit;
    fit.alpha = -slope;
    fit.beta = std::exp(intercept);

    for (int iter = 0; iter < 100; ++iter) {
        // residuals r_i = y(x_i) - y_i, Jacobian rows (dy/dalpha, dy/dbeta)
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, jtr0 = 0, jtr1 = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double model = std::exp(-fit.alpha * xs[i]) * fit.beta * scale;
            double r = model - ys[i];
            double ja = -xs[i] * model;
            double jb = model / fit.beta;
            jtj00 += ja * ja;
            jtj01 += ja * jb;
            jtj11 += jb * jb;
            jtr0 += ja * r;
            jtr1 += jb * r;
        }
        double det = jtj00 * jtj11 - jtj01 * jtj01;
        if (!(std::abs(det) > 1e-300)) break;
        double da = -(jtj11 * jtr0 - jtj01 * jtr1) / det;
        double db = -(-jtj01 * jtr0 + jtj00 * jtr1) / det;
        fit.alpha += da;
        fit.beta += db;
        if (fit.beta <= 0.0) fit.beta = 1e-12;
        fit.iterations = iter + 1;
        if (std::hypot(da, db) < 1e-9) {
            fit.converged = true;
            break;
        }
    }
    if (!std::isfinite(fit.alpha) || !std::isfinite(fit.beta))
        throw training_error("fit_exp_decay: fit diverged");
    return fit;
}

} // namespace rloc
