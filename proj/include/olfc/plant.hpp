#pragma once

#include "olfc/common.hpp"
#include "olfc/network.hpp"

namespace olfc {

// physical parameters, all p.u. except time constants (s);
// frequency deviations are in rad/s throughout
struct plant_params {
    VectorXd M;   // generator inertia, size n_g
    VectorXd D;   // generator damping, size n_g
    VectorXd T;   // turbine time constant, size n_g
    VectorXd R;   // droop coefficient, size n_g
    VectorXd Dl;  // load-bus frequency sensitivity, size n_l
    VectorXd r;   // uncontrollable load, size n_l
};

inline void validate_plant(const plant_params& p, const power_network& net) {
    auto need = [](const VectorXd& v, int n, const char* name) {
        if (static_cast<int>(v.size()) != n)
            throw config_error(std::string("plant: ") + name + " has wrong length");
    };
    need(p.M, net.n_g, "M");
    need(p.D, net.n_g, "D");
    need(p.T, net.n_g, "T");
    need(p.R, net.n_g, "R");
    need(p.Dl, net.n_l, "load D");
    need(p.r, net.n_l, "r");
    for (int i = 0; i < net.n_g; ++i)
        if (p.M(i) <= 0 || p.T(i) <= 0 || p.R(i) <= 0 || p.D(i) <= 0)
            throw config_error("plant: generator M, D, T, R must all be > 0");
    for (int i = 0; i < net.n_l; ++i)
        if (p.Dl(i) <= 0)
            throw config_error(
                "plant: load-bus D must be > 0; the frequency-insensitive load model "
                "(D = 0 with its own algebraic elimination) is not supported here");
}

// branch power flows for a given vector of angle differences
inline VectorXd line_flows(const network_matrices& m, const VectorXd& xi) {
    return m.Tp.cwiseProduct(xi.array().sin().matrix());
}

// algebraic load-bus frequencies: D_l w_l = -d - r - (load rows of Cp) * flows
inline VectorXd load_bus_freq(const network_matrices& m, const plant_params& p,
                              const VectorXd& xi, const VectorXd& d) {
    for (int i = 0; i < p.Dl.size(); ++i)
        if (p.Dl(i) <= 0)
            throw model_error(
                "load bus with D = 0 reached the frequency elimination; "
                "this build requires strictly positive load damping");
    const VectorXd P = line_flows(m, xi);
    return (-(d + p.r + m.CpL * P)).cwiseQuotient(p.Dl);
}

struct plant_derivs {
    VectorXd dxi, dw, dPm;
};

// swing + turbine dynamics with the load buses eliminated algebraically
inline plant_derivs plant_rhs(const network_matrices& m, const plant_params& p,
                              const VectorXd& xi, const VectorXd& w_g, const VectorXd& Pm,
                              const VectorXd& Pc, const VectorXd& d) {
    const VectorXd P = line_flows(m, xi);
    const VectorXd w_l = load_bus_freq(m, p, xi, d);
    plant_derivs out;
    out.dxi = m.CpG.transpose() * w_g + m.CpL.transpose() * w_l;
    out.dw = (-p.D.cwiseProduct(w_g) + Pm - m.CpG * P).cwiseQuotient(p.M);
    out.dPm = (-w_g.cwiseQuotient(p.R) - Pm + Pc).cwiseQuotient(p.T);
    return out;
}

// solve Cp * Tp sin(Cp' theta) = injections for the angle differences xi.
// Newton iteration with the last bus grounded; a usable operating point must
// exist with every |xi_e| < pi/2, otherwise the model assumptions fail.
inline VectorXd solve_power_flow(const network_matrices& m, const VectorXd& injections) {
    const int n = static_cast<int>(m.Cp.rows());
    if (std::abs(injections.sum()) > 1e-9)
        throw model_error("power flow: injections do not balance");
    const MatrixXd Cr = m.Cp.topRows(n - 1);  // grounded incidence
    VectorXd theta = VectorXd::Zero(n - 1);
    for (int it = 0; it < 50; ++it) {
        const VectorXd xi = Cr.transpose() * theta;
        const VectorXd f = Cr * m.Tp.cwiseProduct(xi.array().sin().matrix()) -
                           injections.head(n - 1);
        if (f.lpNorm<Eigen::Infinity>() < 1e-12) break;
        const VectorXd w = m.Tp.cwiseProduct(xi.array().cos().matrix());
        const MatrixXd Jac = Cr * w.asDiagonal() * Cr.transpose();
        theta -= Jac.ldlt().solve(f);
    }
    const VectorXd xi = Cr.transpose() * theta;
    const VectorXd res = m.Cp * m.Tp.cwiseProduct(xi.array().sin().matrix()) - injections;
    if (res.lpNorm<Eigen::Infinity>() >= 1e-9)
        throw model_error("power flow: Newton iteration did not converge");
    if ((xi.array().abs() >= pi / 2).any())
        throw model_error("power flow: no normal operating point (some |xi| >= pi/2)");
    return xi;
}

}  // namespace olfc
