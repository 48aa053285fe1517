#pragma once

#include <string>

#include "olfc/common.hpp"
#include "olfc/cost.hpp"
#include "olfc/network.hpp"

namespace olfc {

// optimal dispatch for one uncontrollable-load profile r
struct olfc_solution {
    VectorXd Pm;      // per generator
    VectorXd d;       // per load
    VectorXd P;       // per line, minimum-norm representative (flows are
                      // non-unique on meshed networks and cost-free)
    VectorXd lam;     // per bus
    VectorXd Lambda;  // per area
    bool feasible = true;
    bool converged = true;
    double infeasibility = 0.0;
    std::string certificate;  // reason when not feasible / not converged
    long iterations = 0;
};

inline double olfc_objective(const cost_model& cost, int n_g, const VectorXd& Pm,
                             const VectorXd& d) {
    double f = 0;
    for (int i = 0; i < n_g; ++i) f += cost.value(i, Pm(i));
    for (int i = 0; i < static_cast<int>(d.size()); ++i) f -= cost.value(n_g + i, d(i));
    return f;
}

namespace detail {

// per-area net demand the dispatch must cover: scheduled export plus local load
inline VectorXd area_balance(const power_network& net, const VectorXd& r) {
    VectorXd b = net.scheduled_tie;
    for (int i = net.n_g; i < net.n(); ++i) b(net.area[i] - 1) += r(i - net.n_g);
    return b;
}

// ±1 aggregation of (Pm, d) into per-area net generation
inline MatrixXd balance_rows(const power_network& net) {
    MatrixXd A = MatrixXd::Zero(net.k(), net.n());
    for (int i = 0; i < net.n(); ++i)
        A(net.area[i] - 1, i) = net.is_gen(i) ? 1.0 : -1.0;
    return A;
}

// attach minimum-norm flows and the bus prices; flags infeasibility when the
// injections cannot be carried by any flow vector
inline void finish_solution(olfc_solution& sol, const power_network& net,
                            const network_matrices& m, const VectorXd& r) {
    VectorXd p(net.n());
    p.head(net.n_g) = sol.Pm;
    p.tail(net.n_l) = -sol.d - r;
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(m.Cp);
    sol.P = cod.solve(p);
    sol.infeasibility = (m.Cp * sol.P - p).lpNorm<Eigen::Infinity>();
    if (sol.infeasibility >= 1e-9) {
        sol.feasible = false;
        sol.certificate = "no flow vector realizes the dispatch (residual " +
                          std::to_string(sol.infeasibility) +
                          "; scheduled exchanges sum to " +
                          std::to_string(net.scheduled_tie.sum()) + ")";
    }
    sol.lam = m.E.transpose() * sol.Lambda;
}

// textbook closed form: equal marginal price per area, price picked so the
// area balances
inline void analytic_dispatch(const power_network& net, const cost_model& cost,
                              const VectorXd& b, VectorXd& Pm, VectorXd& d,
                              VectorXd& Lambda) {
    const int ng = net.n_g, nl = net.n_l, k = net.k();
    Pm.resize(ng);
    d.resize(nl);
    Lambda.resize(k);
    for (int s = 0; s < k; ++s) {
        double coef = 0, cnst = 0;
        for (int i = 0; i < ng; ++i)
            if (net.area[i] == s + 1) {
                coef -= 1.0 / cost.c1(i);
                cnst -= cost.c2(i) / cost.c1(i);
            }
        for (int i = ng; i < net.n(); ++i)
            if (net.area[i] == s + 1) {
                coef += 1.0 / cost.c1(i);
                cnst += cost.c2(i) / cost.c1(i);
            }
        Lambda(s) = (b(s) - cnst) / coef;
        for (int i = 0; i < net.n(); ++i) {
            if (net.area[i] != s + 1) continue;
            const double x = (-Lambda(s) - cost.c2(i)) / cost.c1(i);
            if (net.is_gen(i)) Pm(i) = x;
            else d(i - ng) = x;
        }
    }
}

}  // namespace detail

// direct solver: assemble the first-order optimality system for the quadratic
// program and solve it in one shot
inline olfc_solution solve_olfc_kkt(const power_network& net, const network_matrices& m,
                                    const cost_model& cost, const VectorXd& r) {
    const int ng = net.n_g, nl = net.n_l, k = net.k(), nv = ng + nl + k;
    const VectorXd b = detail::area_balance(net, r);

    MatrixXd A = MatrixXd::Zero(nv, nv);
    VectorXd rhs = VectorXd::Zero(nv);
    for (int i = 0; i < ng + nl; ++i) {
        A(i, i) = cost.c1(i);
        A(i, ng + nl + net.area[i] - 1) = 1.0;
        rhs(i) = -cost.c2(i);
        A(ng + nl + net.area[i] - 1, i) = net.is_gen(i) ? 1.0 : -1.0;
    }
    rhs.tail(k) = b;
    Eigen::FullPivLU<MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw model_error("olfc: optimality system is singular");
    const VectorXd x = lu.solve(rhs);

    olfc_solution sol;
    sol.Pm = x.head(ng);
    sol.d = x.segment(ng, nl);
    sol.Lambda = x.tail(k);
    detail::finish_solution(sol, net, m, r);
    return sol;
}

// iterative cross-check: projected gradient on (Pm, d) over the per-area
// balance set, fixed step 1/L, started from the analytic dispatch unless a
// start point is supplied
inline olfc_solution solve_olfc_pgd(const power_network& net, const network_matrices& m,
                                    const cost_model& cost, const VectorXd& r,
                                    const VectorXd* start = nullptr) {
    const int ng = net.n_g, nl = net.n_l, nb = ng + nl;
    const VectorXd b = detail::area_balance(net, r);
    const MatrixXd A = detail::balance_rows(net);
    VectorXd AAt(net.k());  // A A' is diagonal: per-area bus counts
    for (int s = 0; s < net.k(); ++s) AAt(s) = A.row(s).array().square().sum();

    auto project = [&](const VectorXd& x) -> VectorXd {
        return x - A.transpose() * ((A * x - b).cwiseQuotient(AAt));
    };
    auto gradient = [&](const VectorXd& x) -> VectorXd {
        VectorXd g(nb);
        for (int i = 0; i < nb; ++i) {
            const double gi = cost.c1(i) * x(i) + cost.c2(i);
            g(i) = net.is_gen(i) ? gi : -gi;  // objective counts load utility negatively
        }
        return g;
    };

    VectorXd x(nb);
    if (start) {
        if (start->size() != nb) throw config_error("pgd: start point has wrong length");
        x = project(*start);
    } else {
        VectorXd Pm, d, Lam;
        detail::analytic_dispatch(net, cost, b, Pm, d, Lam);
        x << Pm, d;
    }

    const double step = 1.0 / cost.c1.cwiseAbs().maxCoeff();
    olfc_solution sol;
    const long cap = 1000000;
    long it = 0;
    for (; it <= cap; ++it) {
        const VectorXd g = gradient(x);
        const VectorXd gp = g - A.transpose() * ((A * g).cwiseQuotient(AAt));
        if (gp.lpNorm<Eigen::Infinity>() < 1e-10) break;
        if (it == cap) {
            sol.converged = false;
            sol.certificate = "projected gradient did not reach tolerance within cap";
            break;
        }
        x = project(x - step * g);
    }
    sol.iterations = it;
    sol.Pm = x.head(ng);
    sol.d = x.tail(nl);
    const VectorXd g = gradient(x);
    sol.Lambda = -(A * g).cwiseQuotient(AAt);
    detail::finish_solution(sol, net, m, r);
    return sol;
}

// named first-order residuals of a candidate dispatch; pure diagnostic
struct kkt_report {
    double gen_balance = 0;        // generation vs flows at generator buses
    double load_balance = 0;       // consumption vs flows at load buses
    double tie_balance = 0;        // area interchange vs schedule
    double gen_stationarity = 0;   // marginal cost vs price
    double load_stationarity = 0;  // marginal utility vs price
    double lambda_spread = 0;      // max intra-area price disagreement

    double worst() const {
        return std::max({gen_balance, load_balance, tie_balance, gen_stationarity,
                         load_stationarity, lambda_spread});
    }
    bool pass(double tol) const { return worst() < tol; }
};

inline kkt_report check_kkt(const olfc_solution& sol, const power_network& net,
                            const network_matrices& m, const cost_model& cost,
                            const VectorXd& r) {
    kkt_report rep;
    const int ng = net.n_g, nl = net.n_l;
    rep.gen_balance = (sol.Pm - m.CpG * sol.P).lpNorm<Eigen::Infinity>();
    rep.load_balance = (r + sol.d + m.CpL * sol.P).lpNorm<Eigen::Infinity>();
    rep.tie_balance =
        (m.E * (m.Cp * sol.P) - net.scheduled_tie).lpNorm<Eigen::Infinity>();
    rep.gen_stationarity =
        (cost.c1.head(ng).cwiseProduct(sol.Pm) + cost.c2.head(ng) + sol.lam.head(ng))
            .lpNorm<Eigen::Infinity>();
    rep.load_stationarity =
        (cost.c1.tail(nl).cwiseProduct(sol.d) + cost.c2.tail(nl) + sol.lam.tail(nl))
            .lpNorm<Eigen::Infinity>();
    for (int s = 0; s < net.k(); ++s) {
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < net.n(); ++i)
            if (net.area[i] == s + 1) {
                lo = std::min(lo, sol.lam(i));
                hi = std::max(hi, sol.lam(i));
            }
        rep.lambda_spread = std::max(rep.lambda_spread, hi - lo);
    }
    return rep;
}

}  // namespace olfc
