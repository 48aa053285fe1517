#include <cmath>
#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "olfc/plant.hpp"

using namespace olfc;
using Catch::Approx;

namespace {

power_network ring4() {
    power_network net;
    net.n_g = 2;
    net.n_l = 2;
    net.lines = {{0, 2, 2.0}, {2, 1, 1.5}, {1, 3, 1.0}, {3, 0, 2.5}};
    net.area = {1, 2, 1, 2};
    net.scheduled_tie = (VectorXd(2) << 0.2, -0.2).finished();
    net.bus_id = {10, 20, 30, 40};
    return net;
}

plant_params ring4_plant() {
    plant_params p;
    p.M = (VectorXd(2) << 10.0, 12.0).finished();
    p.D = (VectorXd(2) << 1.0, 0.9).finished();
    p.T = (VectorXd(2) << 0.30, 0.35).finished();
    p.R = (VectorXd(2) << 0.05, 0.05).finished();
    p.Dl = (VectorXd(2) << 1.2, 0.8).finished();
    p.r = (VectorXd(2) << 0.1, -0.05).finished();
    return p;
}

VectorXd random_vec(std::mt19937& rng, int n, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

// a bare bus/line skeleton for power-flow cases; only the matrices matter
network_matrices chain3_matrices() {
    power_network net;
    net.n_g = 1;
    net.n_l = 2;
    net.lines = {{0, 1, 2.0}, {1, 2, 1.0}};
    net.area = {1, 1, 1};
    net.scheduled_tie = VectorXd::Zero(1);
    net.bus_id = {1, 2, 3};
    return build_matrices(net, mirror_comm(net));
}

network_matrices triangle_matrices() {
    power_network net;
    net.n_g = 1;
    net.n_l = 2;
    net.lines = {{0, 1, 0.2}, {1, 2, 1.0}, {0, 2, 1.0}};
    net.area = {1, 1, 1};
    net.scheduled_tie = VectorXd::Zero(1);
    net.bus_id = {1, 2, 3};
    return build_matrices(net, mirror_comm(net));
}

}  // namespace

TEST_CASE("plant validation checks sizes and signs") {
    const auto net = ring4();
    REQUIRE_NOTHROW(validate_plant(ring4_plant(), net));

    auto p = ring4_plant();
    p.M.resize(3);
    CHECK_THROWS_AS(validate_plant(p, net), config_error);

    p = ring4_plant();
    p.T(1) = 0.0;
    CHECK_THROWS_AS(validate_plant(p, net), config_error);

    p = ring4_plant();
    p.D(0) = -0.2;
    CHECK_THROWS_AS(validate_plant(p, net), config_error);

    p = ring4_plant();
    p.Dl(0) = 0.0;
    CHECK_THROWS_AS(validate_plant(p, net), config_error);
}

TEST_CASE("line flows follow the sine law") {
    const auto net = ring4();
    const auto m = build_matrices(net, mirror_comm(net));
    std::mt19937 rng(7);
    const VectorXd xi = random_vec(rng, net.l(), 1.0);
    const VectorXd P = line_flows(m, xi);
    for (int e = 0; e < net.l(); ++e)
        CHECK(P(e) == Approx(net.lines[e].susceptance * std::sin(xi(e))).margin(1e-15));
}

TEST_CASE("load-bus frequencies satisfy the algebraic balance") {
    const auto net = ring4();
    const auto p = ring4_plant();
    const auto m = build_matrices(net, mirror_comm(net));
    std::mt19937 rng(11);
    const VectorXd xi = random_vec(rng, net.l(), 0.8);
    const VectorXd d = random_vec(rng, net.n_l, 0.4);

    const VectorXd w_l = load_bus_freq(m, p, xi, d);
    const VectorXd residual =
        p.Dl.cwiseProduct(w_l) + d + p.r + m.CpL * line_flows(m, xi);
    CHECK(residual.lpNorm<Eigen::Infinity>() < 1e-14);

    auto bad = p;
    bad.Dl(1) = 0.0;  // past validation, the elimination itself must refuse
    CHECK_THROWS_AS(load_bus_freq(m, bad, xi, d), model_error);
}

TEST_CASE("swing and turbine equations, bus by bus") {
    const auto net = ring4();
    const auto p = ring4_plant();
    const auto m = build_matrices(net, mirror_comm(net));
    std::mt19937 rng(23);
    const VectorXd xi = random_vec(rng, net.l(), 0.6);
    const VectorXd w_g = random_vec(rng, net.n_g, 0.3);
    const VectorXd Pm = random_vec(rng, net.n_g, 0.5);
    const VectorXd Pc = random_vec(rng, net.n_g, 0.5);
    const VectorXd d = random_vec(rng, net.n_l, 0.4);

    const auto out = plant_rhs(m, p, xi, w_g, Pm, Pc, d);
    const VectorXd P = line_flows(m, xi);
    const VectorXd w_l = load_bus_freq(m, p, xi, d);

    // angle differences: per line, frequency of the from-bus minus the to-bus
    auto bus_freq = [&](int i) { return i < net.n_g ? w_g(i) : w_l(i - net.n_g); };
    for (int e = 0; e < net.l(); ++e) {
        const double expect = bus_freq(net.lines[e].from) - bus_freq(net.lines[e].to);
        CHECK(out.dxi(e) == Approx(expect).margin(1e-14));
    }
    // swing equation per generator bus
    for (int i = 0; i < net.n_g; ++i) {
        double flow = 0;
        for (int e = 0; e < net.l(); ++e) {
            if (net.lines[e].from == i) flow += P(e);
            if (net.lines[e].to == i) flow -= P(e);
        }
        const double expect = (-p.D(i) * w_g(i) + Pm(i) - flow) / p.M(i);
        CHECK(out.dw(i) == Approx(expect).margin(1e-14));
        const double turb = (-w_g(i) / p.R(i) - Pm(i) + Pc(i)) / p.T(i);
        CHECK(out.dPm(i) == Approx(turb).margin(1e-14));
    }
}

TEST_CASE("power flow on a chain has a closed-form answer") {
    const auto m = chain3_matrices();
    const VectorXd inj = (VectorXd(3) << 0.3, -0.1, -0.2).finished();
    const VectorXd xi = solve_power_flow(m, inj);
    REQUIRE(xi.size() == 2);
    // flows are fixed by the injections alone on a tree
    CHECK(xi(0) == Approx(std::asin(0.3 / 2.0)).margin(1e-10));
    CHECK(xi(1) == Approx(std::asin(0.2 / 1.0)).margin(1e-10));
}

TEST_CASE("power flow on a mesh reproduces the injections") {
    const auto m = triangle_matrices();
    const VectorXd inj = (VectorXd(3) << 0.5, -0.5, 0.0).finished();
    const VectorXd xi = solve_power_flow(m, inj);
    const VectorXd residual = m.Cp * line_flows(m, xi) - inj;
    CHECK(residual.lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((xi.array().abs() < pi / 2).all());
}

TEST_CASE("power flow rejects unusable inputs") {
    const auto m = chain3_matrices();

    SECTION("unbalanced injections") {
        const VectorXd inj = (VectorXd(3) << 0.3, 0.0, -0.2).finished();
        CHECK_THROWS_AS(solve_power_flow(m, inj), model_error);
    }
    SECTION("transfer beyond line capacity") {
        const VectorXd inj = (VectorXd(3) << 2.5, -2.5, 0.0).finished();
        CHECK_THROWS_AS(solve_power_flow(m, inj), model_error);
    }
    SECTION("solvable point outside the stability region") {
        // the weak direct line is driven past 90 degrees while the detour
        // through the third bus still carries the rest
        const auto tm = triangle_matrices();
        const VectorXd inj = (VectorXd(3) << 0.93, -0.93, 0.0).finished();
        CHECK_THROWS_WITH(solve_power_flow(tm, inj),
                          Catch::Matchers::ContainsSubstring("no normal operating point"));
    }
}
