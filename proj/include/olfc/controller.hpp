#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "olfc/common.hpp"
#include "olfc/cost.hpp"
#include "olfc/network.hpp"
#include "olfc/plant.hpp"

namespace olfc {

struct controller_gains {
    VectorXd alpha;  // size n, > 0, uniform within each area
    VectorXd K;      // size n, >= 0
    VectorXd Mhat;   // size n_g, inertia values the controller believes in
    VectorXd eps;    // size n, > 0, strictness margin of the certificates
    double D_min = 0.0, D_max = 0.0;  // damping envelope assumed by the certificates

    static controller_gains uniform(const power_network& net, const plant_params& p,
                                    double alpha_v, double K_v, double eps_v = 0.01) {
        controller_gains g;
        const int n = net.n();
        g.alpha = VectorXd::Constant(n, alpha_v);
        g.K = VectorXd::Constant(n, K_v);
        g.Mhat = p.M;
        g.eps = VectorXd::Constant(n, eps_v);
        VectorXd allD(n);
        allD << p.D, p.Dl;
        g.D_min = allD.minCoeff();
        g.D_max = allD.maxCoeff();
        return g;
    }
};

inline void validate_gains(const controller_gains& g, const power_network& net) {
    const int n = net.n();
    if (g.alpha.size() != n || g.K.size() != n || g.eps.size() != n ||
        g.Mhat.size() != net.n_g)
        throw config_error("gains: vector length mismatch");
    if ((g.alpha.array() <= 0).any()) throw config_error("gains: alpha must be > 0");
    if ((g.K.array() < 0).any()) throw config_error("gains: K must be >= 0");
    if ((g.eps.array() <= 0).any()) throw config_error("gains: epsilon must be > 0");
    if ((g.Mhat.array() <= 0).any()) throw config_error("gains: inertia estimates must be > 0");
    if (g.D_min <= 0 || g.D_max < g.D_min)
        throw config_error("gains: damping envelope needs 0 < D_min <= D_max");
    std::vector<double> area_alpha(net.k(), -1.0);
    for (int i = 0; i < n; ++i) {
        double& a = area_alpha[net.area[i] - 1];
        if (a < 0) a = g.alpha(i);
        else if (std::abs(a - g.alpha(i)) > 1e-15)
            throw config_error("gains: alpha must be uniform within each area");
    }
}

// ---------------------------------------------------------------------------
// closed-loop controller, matrix form.  The k = 1 reduced variant drops the
// inter-area coordination states (gamma, z stay frozen) and steers phi with
// the frequency/price disagreement alone.
// ---------------------------------------------------------------------------

struct controller_derivs {
    VectorXd dPc, dd, dlam, dphi, dgam, dz;
};

inline controller_derivs controller_rhs(const network_matrices& m, const power_network& net,
                                        const plant_params& p, const cost_model& cost,
                                        const controller_gains& g, const VectorXd& xi,
                                        const VectorXd& w_g, const VectorXd& w_l,
                                        const VectorXd& Pm, const VectorXd& Pc,
                                        const VectorXd& d, const VectorXd& lam,
                                        const VectorXd& phi, const VectorXd& gam,
                                        const VectorXd& z) {
    const int ng = net.n_g, nl = net.n_l, n = net.n();
    const VectorXd P = line_flows(m, xi);
    const VectorXd aG = g.alpha.head(ng), aL = g.alpha.tail(nl);
    const VectorXd c1g = cost.c1.head(ng), c2g = cost.c2.head(ng);
    const VectorXd c1l = cost.c1.tail(nl), c2l = cost.c2.tail(nl);
    const VectorXd lamG = lam.head(ng), lamL = lam.tail(nl);

    // primal proposals from the current prices
    const VectorXd uG =
        (-lamG - g.Mhat.cwiseQuotient(aG).cwiseProduct(w_g) - c2g).cwiseQuotient(c1g);
    const VectorXd uL = (-lamL - c2l).cwiseQuotient(c1l);

    controller_derivs out;
    const VectorXd aG2c1 = aG.array().square().matrix().cwiseProduct(c1g);
    out.dPc = Pm - (VectorXd::Ones(ng) + aG2c1).cwiseProduct(Pc) + aG2c1.cwiseProduct(uG);
    const VectorXd aL2c1 = aL.array().square().matrix().cwiseProduct(c1l);
    out.dd = aL2c1.cwiseProduct(d) - aL2c1.cwiseProduct(uL) + w_l;

    const VectorXd Lcphi = m.Lc * phi;
    const VectorXd aR = aG.cwiseProduct(p.R);
    out.dlam.resize(n);
    out.dlam.head(ng) =
        (g.K.head(ng).cwiseProduct(w_g) - Pm - aR.cwiseProduct(Pc) +
         (VectorXd::Ones(ng) + aR).cwiseProduct(uG) + m.CpG * P - Lcphi.head(ng))
            .cwiseQuotient(aG);
    out.dlam.tail(nl) =
        (g.K.tail(nl).cwiseProduct(w_l) + (VectorXd::Ones(nl) + aL).cwiseProduct(d) -
         (VectorXd::Ones(nl) + aL).cwiseProduct(uL) + m.CpL * P - Lcphi.tail(nl))
            .cwiseQuotient(aL);

    VectorXd Mw = VectorXd::Zero(n);
    Mw.head(ng) = g.Mhat.cwiseProduct(w_g);
    if (net.k() == 1) {
        out.dphi = m.Lc * (Mw + g.alpha.cwiseProduct(lam));
        out.dgam = VectorXd::Zero(n);
        out.dz = VectorXd::Zero(n);
    } else {
        out.dphi = m.Lc * (Mw + g.alpha.cwiseProduct(lam) - gam);
        out.dgam = -m.L * z - m.L * gam + Lcphi - m.J * net.scheduled_tie;
        out.dz = m.L * gam;
    }
    return out;
}

// ---------------------------------------------------------------------------
// per-bus form.  Everything a bus may legally see: its own state, flows on its
// incident lines, and per-link neighbor packets.  z is shared over intra-area
// links only; touching a neighbor's z across an area boundary is a breach of
// the information contract.
// ---------------------------------------------------------------------------

class neighbor_view {
  public:
    neighbor_view(int bus, double weight, bool same_area, double Mw, double alpha,
                  double lambda, double phi, double gamma, double z)
        : bus_(bus), w_(weight), same_(same_area), Mw_(Mw), alpha_(alpha),
          lambda_(lambda), phi_(phi), gamma_(gamma), z_(z) {}

    int bus() const { return bus_; }
    double weight() const { return w_; }
    bool same_area() const { return same_; }
    double Mw() const { return Mw_; }
    double alpha() const { return alpha_; }
    double lambda() const { return lambda_; }
    double phi() const { return phi_; }
    double gamma() const { return gamma_; }
    double z() const {
        if (!same_)
            throw contract_error("neighbor z requested across an area boundary");
        return z_;
    }

  private:
    int bus_;
    double w_;
    bool same_;
    double Mw_, alpha_, lambda_, phi_, gamma_, z_;
};

struct bus_state {
    bool is_gen = false;
    double w = 0;                    // own frequency deviation
    double Pm = 0, Pc = 0;           // generator-only
    double d = 0;                    // load-only
    double lam = 0, phi = 0, gam = 0, z = 0;
    double net_flow = 0;             // sum of incident line flows, signed out of the bus
    double tie_target = 0;           // scheduled area export if this is the designated bus
};

struct bus_derivs {
    double dPc = 0, dd = 0, dlam = 0, dphi = 0, dgam = 0, dz = 0;
};

inline bus_derivs controller_rhs_bus(int i, const bus_state& s,
                                     const std::vector<neighbor_view>& nbrs,
                                     const cost_model& cost, const plant_params& p,
                                     const controller_gains& g, int n_g,
                                     bool single_area) {
    const double a_i = g.alpha(i), K_i = g.K(i);
    const double c1 = cost.c1(i), c2 = cost.c2(i);
    bus_derivs out;

    double u;
    if (s.is_gen) {
        u = (-s.lam - g.Mhat(i) / a_i * s.w - c2) / c1;
        out.dPc = s.Pm - (1.0 + a_i * a_i * c1) * s.Pc + a_i * a_i * c1 * u;
    } else {
        u = (-s.lam - c2) / c1;
        out.dd = a_i * a_i * c1 * s.d - a_i * a_i * c1 * u + s.w;
    }

    double Lcphi = 0, dis = 0, Lz = 0, Lgam = 0;
    const double own_mix = (s.is_gen ? g.Mhat(i) * s.w : 0.0) + a_i * s.lam -
                           (single_area ? 0.0 : s.gam);
    for (const auto& nb : nbrs) {
        Lcphi += nb.weight() * (s.phi - nb.phi());
        const double nb_mix =
            nb.Mw() + nb.alpha() * nb.lambda() - (single_area ? 0.0 : nb.gamma());
        dis += nb.weight() * (own_mix - nb_mix);
        if (!single_area && nb.same_area()) {
            Lz += nb.weight() * (s.z - nb.z());
            Lgam += nb.weight() * (s.gam - nb.gamma());
        }
    }

    if (s.is_gen) {
        const double aR = a_i * p.R(i);
        out.dlam = (K_i * s.w - s.Pm - aR * s.Pc + (1.0 + aR) * u + s.net_flow - Lcphi) / a_i;
    } else {
        out.dlam =
            (K_i * s.w + (1.0 + a_i) * s.d - (1.0 + a_i) * u + s.net_flow - Lcphi) / a_i;
    }
    out.dphi = dis;
    if (!single_area) {
        out.dgam = -Lz - Lgam + Lcphi - s.tie_target;
        out.dz = Lgam;
    }
    (void)n_g;
    return out;
}

// assemble per-link packets for bus i from global state; what the cyber layer
// would deliver in a real deployment
inline std::vector<neighbor_view> gather_neighbors(int i, const power_network& net,
                                                   const comm_graph& comm,
                                                   const controller_gains& g,
                                                   const VectorXd& w_g, const VectorXd& lam,
                                                   const VectorXd& phi, const VectorXd& gam,
                                                   const VectorXd& z) {
    std::vector<neighbor_view> out;
    for (const auto& e : comm.edges) {
        int j = (e.i == i) ? e.j : (e.j == i) ? e.i : -1;
        if (j < 0) continue;
        const bool same = net.area[i] == net.area[j];
        const double Mw = net.is_gen(j) ? g.Mhat(j) * w_g(j) : 0.0;
        out.emplace_back(j, e.weight, same, Mw, g.alpha(j), lam(j), phi(j), gam(j), z(j));
    }
    return out;
}

// full per-bus sweep; exists to pin the matrix form against the per-bus law
inline controller_derivs controller_rhs_by_bus(
    const network_matrices& m, const power_network& net, const comm_graph& comm,
    const plant_params& p, const cost_model& cost, const controller_gains& g,
    const VectorXd& xi, const VectorXd& w_g, const VectorXd& w_l, const VectorXd& Pm,
    const VectorXd& Pc, const VectorXd& d, const VectorXd& lam, const VectorXd& phi,
    const VectorXd& gam, const VectorXd& z) {
    const int ng = net.n_g, nl = net.n_l, n = net.n();
    const bool single = net.k() == 1;
    const VectorXd P = line_flows(m, xi);
    const VectorXd flow_in = m.Cp * P;

    controller_derivs out;
    out.dPc.setZero(ng);
    out.dd.setZero(nl);
    out.dlam.setZero(n);
    out.dphi.setZero(n);
    out.dgam.setZero(n);
    out.dz.setZero(n);
    for (int i = 0; i < n; ++i) {
        bus_state s;
        s.is_gen = net.is_gen(i);
        s.w = s.is_gen ? w_g(i) : w_l(i - ng);
        if (s.is_gen) {
            s.Pm = Pm(i);
            s.Pc = Pc(i);
        } else {
            s.d = d(i - ng);
        }
        s.lam = lam(i);
        s.phi = phi(i);
        s.gam = gam(i);
        s.z = z(i);
        s.net_flow = flow_in(i);
        const int ar = net.area[i] - 1;
        if (comm.designated[ar] == i) s.tie_target = net.scheduled_tie(ar);
        const auto nbrs = gather_neighbors(i, net, comm, g, w_g, lam, phi, gam, z);
        const auto b = controller_rhs_bus(i, s, nbrs, cost, p, g, ng, single);
        if (s.is_gen) out.dPc(i) = b.dPc;
        else out.dd(i - ng) = b.dd;
        out.dlam(i) = b.dlam;
        out.dphi(i) = b.dphi;
        out.dgam(i) = b.dgam;
        out.dz(i) = b.dz;
    }
    return out;
}

// ---------------------------------------------------------------------------
// gain certificates and their distributed evaluation
// ---------------------------------------------------------------------------

// certified dissipation bound for one bus; alpha_i must not exceed the area's
// 1 / max(rho) for the Lyapunov argument to go through
inline double rho_star_bus(bool is_gen, double a, double b, double K, double R,
                           double D_min, double D_max, double eps) {
    const double core = b * K * K / (4.0 * D_min) - b * K / 2.0 + b * D_max / 4.0;
    if (is_gen) return core + b * R / a - R + eps;
    return core - b / a - 1.0 + eps;
}

inline VectorXd rho_star(const power_network& net, const cost_model& cost,
                         const plant_params& p, const controller_gains& g) {
    VectorXd rho(net.n());
    for (int i = 0; i < net.n(); ++i) {
        const bool gen = net.is_gen(i);
        rho(i) = rho_star_bus(gen, cost.a(i), cost.b(i), g.K(i), gen ? p.R(i) : 0.0,
                              g.D_min, g.D_max, g.eps(i));
    }
    return rho;
}

// synchronous max gossip.  Returns the limit values and the number of rounds
// that changed anything; a graph that cannot agree within n rounds is
// disconnected and rejected.
inline std::pair<VectorXd, int> max_consensus(const VectorXd& init,
                                              const std::vector<std::pair<int, int>>& edges) {
    const int n = static_cast<int>(init.size());
    VectorXd x = init;
    int rounds = 0;
    for (int round = 0; round < n; ++round) {
        VectorXd next = x;
        for (const auto& [i, j] : edges) {
            next(i) = std::max(next(i), x(j));
            next(j) = std::max(next(j), x(i));
        }
        if ((next - x).lpNorm<Eigen::Infinity>() == 0.0) break;
        x = next;
        ++rounds;
    }
    if (std::abs(x.maxCoeff() - x.minCoeff()) > 0.0)
        throw config_error("max consensus: graph is disconnected, no agreement reached");
    return {x, rounds};
}

struct gain_certificate {
    VectorXd rho;         // per bus
    VectorXd alpha_star;  // per area; +inf when the bound is vacuous
    bool pass = false;
    std::vector<std::string> notes;  // per-area verdict lines
};

inline gain_certificate certify_gains(const power_network& net, const cost_model& cost,
                                      const plant_params& p, const controller_gains& g) {
    gain_certificate cert;
    cert.rho = rho_star(net, cost, p, g);
    cert.alpha_star.resize(net.k());
    cert.pass = true;
    for (int s = 0; s < net.k(); ++s) {
        double rho_max = -std::numeric_limits<double>::infinity();
        double alpha_used = 0.0;
        for (int i = 0; i < net.n(); ++i)
            if (net.area[i] == s + 1) {
                rho_max = std::max(rho_max, cert.rho(i));
                alpha_used = g.alpha(i);
            }
        const double astar =
            rho_max > 0 ? 1.0 / rho_max : std::numeric_limits<double>::infinity();
        cert.alpha_star(s) = astar;
        const bool ok = alpha_used <= astar;
        cert.pass = cert.pass && ok;
        cert.notes.push_back("area " + std::to_string(s + 1) + ": alpha = " +
                             std::to_string(alpha_used) + ", bound = " +
                             (std::isinf(astar) ? std::string("unbounded")
                                                : std::to_string(astar)) +
                             (ok ? "  PASS" : "  FAIL"));
    }
    return cert;
}

// same certificate, but each area agrees on max(rho) by gossip instead of a
// central collection; must coincide with certify_gains
inline gain_certificate certify_gains_distributed(const power_network& net,
                                                  const comm_graph& comm,
                                                  const cost_model& cost,
                                                  const plant_params& p,
                                                  const controller_gains& g,
                                                  int* rounds_out = nullptr) {
    gain_certificate cert;
    cert.rho = rho_star(net, cost, p, g);
    cert.alpha_star.resize(net.k());
    cert.pass = true;
    int worst_rounds = 0;
    for (int s = 0; s < net.k(); ++s) {
        std::vector<int> members;
        std::vector<int> slot(net.n(), -1);
        for (int i = 0; i < net.n(); ++i)
            if (net.area[i] == s + 1) {
                slot[i] = static_cast<int>(members.size());
                members.push_back(i);
            }
        VectorXd init(members.size());
        for (size_t q = 0; q < members.size(); ++q) init(q) = cert.rho(members[q]);
        std::vector<std::pair<int, int>> intra;
        for (const auto& e : comm.edges)
            if (slot[e.i] >= 0 && slot[e.j] >= 0) intra.push_back({slot[e.i], slot[e.j]});
        auto [vals, rounds] = max_consensus(init, intra);
        worst_rounds = std::max(worst_rounds, rounds);
        const double rho_max = vals(0);
        cert.alpha_star(s) =
            rho_max > 0 ? 1.0 / rho_max : std::numeric_limits<double>::infinity();
        for (int i : members)
            if (g.alpha(i) > cert.alpha_star(s)) cert.pass = false;
    }
    if (rounds_out) *rounds_out = worst_rounds;
    return cert;
}

// ---------------------------------------------------------------------------
// AGC baseline: per-area ACE integral dispatched through participation factors;
// load-side setpoints stay frozen
// ---------------------------------------------------------------------------

struct agc_params {
    VectorXd pf;              // per generator, sums to 1 inside each area
    VectorXd bias;            // per area, frequency-bias coefficient
    std::vector<int> ref_gen; // per area, generator whose speed feeds the ACE
    double ace_gain = 0.2;
    VectorXd Pc_base;         // per generator
    VectorXd d_frozen;        // per load
};

// default bias: sum of damping plus inverse droop over the area; default
// participation: proportional to generation cost curvature; reference
// generator: lowest external id in the area
inline agc_params make_agc_params(const power_network& net, const cost_model& cost,
                                  const plant_params& p, const VectorXd& Pc_base,
                                  const VectorXd& d_frozen) {
    agc_params ap;
    const int ng = net.n_g, k = net.k();
    ap.pf.setZero(ng);
    ap.bias.setZero(k);
    ap.ref_gen.assign(k, -1);
    ap.Pc_base = Pc_base;
    ap.d_frozen = d_frozen;
    for (int s = 0; s < k; ++s) {
        double c1_sum = 0;
        for (int i = 0; i < ng; ++i)
            if (net.area[i] == s + 1) {
                c1_sum += cost.c1(i);
                ap.bias(s) += p.D(i) + 1.0 / p.R(i);
                if (ap.ref_gen[s] < 0 || net.bus_id[i] < net.bus_id[ap.ref_gen[s]])
                    ap.ref_gen[s] = i;
            }
        if (ap.ref_gen[s] < 0)
            throw config_error("agc: every area needs at least one generator");
        for (int i = ng; i < net.n(); ++i)
            if (net.area[i] == s + 1) ap.bias(s) += p.Dl(i - ng);
        for (int i = 0; i < ng; ++i)
            if (net.area[i] == s + 1) ap.pf(i) = cost.c1(i) / c1_sum;
    }
    return ap;
}

// scale user-provided participation factors to sum to 1 per area; returns a
// warning line per rescaled area
inline std::vector<std::string> normalize_pf(const power_network& net, VectorXd& pf) {
    std::vector<std::string> warnings;
    for (int s = 0; s < net.k(); ++s) {
        double sum = 0;
        for (int i = 0; i < net.n_g; ++i)
            if (net.area[i] == s + 1) sum += pf(i);
        if (std::abs(sum - 1.0) > 1e-12) {
            if (std::abs(sum) < 1e-12)
                throw config_error("agc: participation factors sum to zero in an area");
            for (int i = 0; i < net.n_g; ++i)
                if (net.area[i] == s + 1) pf(i) /= sum;
            warnings.push_back("agc: participation factors in area " + std::to_string(s + 1) +
                               " rescaled to sum to 1 (was " + std::to_string(sum) + ")");
        }
    }
    return warnings;
}

struct agc_derivs {
    VectorXd dxi, dw, dPm, dA;
};

inline VectorXd agc_setpoints(const power_network& net, const agc_params& ap,
                              const VectorXd& A) {
    VectorXd Pc(net.n_g);
    for (int i = 0; i < net.n_g; ++i)
        Pc(i) = ap.Pc_base(i) + ap.pf(i) * A(net.area[i] - 1);
    return Pc;
}

inline agc_derivs agc_rhs(const network_matrices& m, const power_network& net,
                          const plant_params& p, const agc_params& ap, const VectorXd& xi,
                          const VectorXd& w_g, const VectorXd& Pm, const VectorXd& A) {
    const VectorXd Pc = agc_setpoints(net, ap, A);
    const VectorXd P = line_flows(m, xi);
    const VectorXd w_l = (-(ap.d_frozen + p.r + m.CpL * P)).cwiseQuotient(p.Dl);
    agc_derivs out;
    out.dxi = m.CpG.transpose() * w_g + m.CpL.transpose() * w_l;
    out.dw = (-p.D.cwiseProduct(w_g) + Pm - m.CpG * P).cwiseQuotient(p.M);
    out.dPm = (-w_g.cwiseQuotient(p.R) - Pm + Pc).cwiseQuotient(p.T);
    VectorXd ace = m.E * (m.Cp * P) - net.scheduled_tie;
    for (int s = 0; s < net.k(); ++s) ace(s) += ap.bias(s) * w_g(ap.ref_gen[s]);
    out.dA = -ap.ace_gain * ace;
    return out;
}

}  // namespace olfc
