#pragma once

#include <vector>

#include "olfc/common.hpp"

namespace olfc {

// per-bus quadratic objective 0.5*c1*x^2 + c2*x + c3.
// generator buses: c1 > 0 (generation cost, minimized).
// load buses:      c1 < 0 (disutility is the negated concave utility; the
//                  program maximizes utility, i.e. minimizes -U with -U convex
//                  in the aggregate sense used here).
struct cost_model {
    VectorXd c1, c2, c3;  // size n each

    int n() const { return static_cast<int>(c1.size()); }
    // curvature magnitudes used by the gain certificates: a_i = c1_i, b_i = |c1_i|
    double a(int i) const { return c1(i); }
    double b(int i) const { return std::abs(c1(i)); }

    double value(int i, double x) const { return 0.5 * c1(i) * x * x + c2(i) * x + c3(i); }
    double grad(int i, double x) const { return c1(i) * x + c2(i); }
    // inverse of the gradient map, needed by the primal update
    double grad_inv(int i, double y) const { return (y - c2(i)) / c1(i); }

    VectorXd grad(const VectorXd& x) const { return c1.cwiseProduct(x) + c2; }
    VectorXd grad_inv(const VectorXd& y) const { return (y - c2).cwiseQuotient(c1); }
};

inline void validate_costs(const cost_model& cm, int n_g) {
    for (int i = 0; i < cm.n(); ++i) {
        if (i < n_g && cm.c1(i) <= 0.0)
            throw config_error("cost: generator curvature c1 must be > 0");
        if (i >= n_g && cm.c1(i) >= 0.0)
            throw config_error("cost: load curvature c1 must be < 0");
    }
}

}  // namespace olfc
