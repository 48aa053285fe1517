#include <cmath>
#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "support.hpp"

using namespace olfc;
using Catch::Approx;

namespace {

system_model fivebus_model() {
    const auto nb = load_network_file(support::data_path("fivebus.net"));
    controller_gains g = controller_gains::uniform(nb.net, nb.plant, 1.0, 1.2, 0.01);
    return make_model(nb.net, nb.comm, nb.plant, nb.cost, g);
}

system_model ieee39_model() {
    const auto nb = load_network_file(support::data_path("ieee39.net"));
    controller_gains g = controller_gains::uniform(nb.net, nb.plant, 1.0, 1.2, 0.01);
    g.D_min = 0.8;
    g.D_max = 1.2;
    return make_model(nb.net, nb.comm, nb.plant, nb.cost, g);
}

}  // namespace

TEST_CASE("fixed-step core reproduces exponential decay") {
    const rhs_fn f = [](double, const VectorXd& x) -> VectorXd { return -x; };
    VectorXd x = VectorXd::Constant(1, 1.0);
    double worst = 0;
    const bool ok = rk4_span(f, x, 0.0, 5.0, 1e-3, 0.01, [&](double t, const VectorXd& v) {
        worst = std::max(worst, std::abs(v(0) - std::exp(-t)));
    });
    REQUIRE(ok);
    CHECK(worst < 1e-10);
    CHECK(x(0) == Approx(std::exp(-5.0)).margin(1e-10));
}

TEST_CASE("sampling grid is hit exactly and in order") {
    const rhs_fn f = [](double, const VectorXd&) -> VectorXd {
        return VectorXd::Constant(1, 1.0);
    };
    VectorXd x = VectorXd::Zero(1);
    std::vector<double> times;
    const bool ok = rk4_span(f, x, 0.0, 1.0, 1e-3, 0.01,
                             [&](double t, const VectorXd& v) {
                                 times.push_back(t);
                                 CHECK(v(0) == Approx(t).margin(1e-12));
                             });
    REQUIRE(ok);
    REQUIRE(times.size() == 100);
    for (size_t q = 0; q < times.size(); ++q)
        CHECK(times[q] == Approx(0.01 * (q + 1)).margin(1e-12));
}

TEST_CASE("halving the step shrinks the error fourth-order") {
    const rhs_fn f = [](double, const VectorXd& x) -> VectorXd {
        return x.array() * (1.0 - x.array());
    };
    const double exact = 1.0 / (1.0 + 9.0 * std::exp(-2.0));
    auto err_at = [&](double h) {
        VectorXd x = VectorXd::Constant(1, 0.1);
        rk4_span(f, x, 0.0, 2.0, h, 2.0, [](double, const VectorXd&) {});
        return std::abs(x(0) - exact);
    };
    const double coarse = err_at(0.02), fine = err_at(0.01);
    CHECK(coarse > 1e-13);  // errors must sit above roundoff for the ratio to mean anything
    CHECK(coarse / fine > 8.0);
}

TEST_CASE("steady-state detection on derivative records") {
    SECTION("exponential decay settles when the derivative crosses the bar") {
        std::vector<double> t, rn;
        for (int q = 0; q <= 2000; ++q) {
            t.push_back(0.01 * q);
            rn.push_back(std::exp(-0.01 * q));
        }
        const auto when = detect_steady_state(t, rn);
        REQUIRE(when.has_value());
        CHECK(*when == Approx(-std::log(1e-6)).margin(0.02));
    }
    SECTION("quiet from the start") {
        std::vector<double> t, rn;
        for (int q = 0; q <= 200; ++q) {
            t.push_back(0.01 * q);
            rn.push_back(0.0);
        }
        CHECK(detect_steady_state(t, rn).value() == 0.0);
    }
    SECTION("a truncated quiet run still counts") {
        std::vector<double> t{0.0, 0.01, 0.02}, rn{0.0, 0.0, 0.0};
        CHECK(detect_steady_state(t, rn).value() == 0.0);
    }
    SECTION("a spike inside the window restarts the clock") {
        std::vector<double> t, rn;
        for (int q = 0; q <= 400; ++q) {
            t.push_back(0.01 * q);
            rn.push_back(q == 50 ? 1.0 : 0.0);
        }
        CHECK(detect_steady_state(t, rn).value() == Approx(0.51));
    }
    SECTION("never quiet") {
        std::vector<double> t{0.0, 1.0, 2.0}, rn{1.0, 1.0, 1.0};
        CHECK_FALSE(detect_steady_state(t, rn).has_value());
    }
    SECTION("empty record") {
        CHECK_FALSE(detect_steady_state({}, {}).has_value());
    }
}

TEST_CASE("network potential behaves like a squared distance near the target") {
    const auto md = fivebus_model();
    const closed_loop_state eq = initial_state(md);
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    SECTION("second-order expansion at small amplitude") {
        for (int rep = 0; rep < 20; ++rep) {
            VectorXd dir(md.net.l());
            for (int e = 0; e < dir.size(); ++e) dir(e) = u(rng);
            dir *= 1e-4 / dir.norm();
            const double w = energy_W(eq.xi + dir, eq.xi, md.m.Tp);
            double quad = 0;
            for (int e = 0; e < dir.size(); ++e)
                quad += 0.5 * md.m.Tp(e) * std::cos(eq.xi(e)) * dir(e) * dir(e);
            CHECK(w == Approx(quad).epsilon(1e-4));
        }
    }
    SECTION("nonnegative across the admissible region") {
        int checked = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            VectorXd xi(md.net.l());
            for (int e = 0; e < xi.size(); ++e) {
                const double lo = -pi - eq.xi(e) + 1e-6, hi = pi - eq.xi(e) - 1e-6;
                xi(e) = lo + (hi - lo) * (u(rng) * 0.5 + 0.5);
            }
            bool dom = false;
            const double w = energy_W(xi, eq.xi, md.m.Tp, &dom);
            REQUIRE(dom);
            CHECK(w >= -1e-12);
            ++checked;
        }
        CHECK(checked == 1000);
    }
    SECTION("domain flag trips outside the admissible region") {
        VectorXd xi = eq.xi;
        xi(0) = pi - eq.xi(0) + 0.1;
        bool dom = true;
        energy_W(xi, eq.xi, md.m.Tp, &dom);
        CHECK_FALSE(dom);
    }
}

TEST_CASE("energy function is zero at rest and positive around it") {
    const auto md = fivebus_model();
    const closed_loop_state eq = initial_state(md);
    CHECK(lyapunov_V(md, eq, eq) == 0.0);

    auto bumped = [&](auto&& poke) {
        closed_loop_state s = eq;
        poke(s);
        return lyapunov_V(md, s, eq);
    };
    CHECK(bumped([](closed_loop_state& s) { s.xi(0) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.w_g(0) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.Pm(1) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.Pc(0) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.d(2) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.lam(3) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.phi(1) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.gam(2) += 0.01; }) > 0.0);
    CHECK(bumped([](closed_loop_state& s) { s.z(4) += 0.01; }) > 0.0);
}

TEST_CASE("equilibrium construction honors the conserved quantities") {
    SECTION("single area") {
        const auto md = fivebus_model();
        conservation_anchors a;
        a.phi_sum = 0.7;
        a.gam_sum = -0.3;
        a.Ez = (VectorXd(1) << 0.4).finished();
        const auto eq = find_equilibrium(md, md.plant.r, a);
        CHECK(closed_loop_rhs(md, eq, md.plant.r).to_vec().lpNorm<Eigen::Infinity>() <
              1e-8);
        CHECK(eq.phi.sum() == Approx(0.7).margin(1e-8));
        CHECK((eq.gam.array() - (-0.3 / 5.0)).abs().maxCoeff() < 1e-12);
        CHECK((eq.z.array() - 0.4 / 5.0).abs().maxCoeff() < 1e-12);
    }
    SECTION("two areas") {
        const auto md = ieee39_model();
        conservation_anchors a;
        a.phi_sum = 0.7;
        a.gam_sum = -0.3;
        a.Ez = (VectorXd(2) << 0.2, 0.5).finished();
        const auto eq = find_equilibrium(md, md.plant.r, a);
        CHECK(closed_loop_rhs(md, eq, md.plant.r).to_vec().lpNorm<Eigen::Infinity>() <
              1e-8);
        CHECK(eq.phi.sum() == Approx(0.7).margin(1e-8));
        CHECK(eq.gam.sum() == Approx(-0.3).margin(1e-8));
        CHECK((md.m.E * eq.z - a.Ez).lpNorm<Eigen::Infinity>() < 1e-8);
        // at rest the dispatch and its setpoint agree and the angles carry it
        CHECK((eq.Pc - eq.Pm).lpNorm<Eigen::Infinity>() < 1e-12);
    }
}

TEST_CASE("closed-loop run conserves its invariants and instruments cleanly") {
    const auto md = fivebus_model();
    const closed_loop_state x0 = initial_state(md);
    disturbance_event ev;
    ev.time = 0.5;
    ev.delta_r = VectorXd::Zero(md.net.n_l);
    ev.delta_r(1) = 0.1;
    const std::vector<disturbance_event> events{ev};
    integrate_options opt{3.0, 1e-3, 0.01};

    trajectory tr = integrate(md, x0, events, opt);
    REQUIRE_FALSE(tr.aborted);
    REQUIRE(tr.t.size() == 301);

    const VectorXd r_post = load_at(md, events, opt.t_end, true);
    const auto eq_post = find_equilibrium(md, r_post, conservation_anchors::of(md, x0));
    instrument(tr, md, events, eq_post);

    const double phi0 = tr.x[0].phi.sum(), gam0 = tr.x[0].gam.sum();
    const VectorXd Ez0 = md.m.E * tr.x[0].z;
    for (const auto& s : tr.x) {
        CHECK(std::abs(s.phi.sum() - phi0) < 1e-10);
        CHECK(std::abs(s.gam.sum() - gam0) < 1e-10);
        CHECK((md.m.E * s.z - Ez0).lpNorm<Eigen::Infinity>() < 1e-10);
    }

    // before the event the system rests; afterwards the energy stays in range
    CHECK(tr.rhs_norm[0] < 1e-8);
    CHECK(tr.tie_dev[0].lpNorm<Eigen::Infinity>() < 1e-9);
    for (size_t q = 0; q < tr.t.size(); ++q) {
        CHECK(tr.V[q] >= -1e-12);
        CHECK(tr.W[q] >= -1e-12);
        CHECK(tr.in_domain[q] == 1);
    }
}

TEST_CASE("disturbance instants cut the integration grid exactly") {
    const auto md = fivebus_model();
    const closed_loop_state x0 = initial_state(md);
    const int l = md.net.l();
    disturbance_event ev;
    ev.time = 0.503;  // deliberately off the sampling grid
    ev.delta_r = VectorXd::Zero(md.net.n_l);
    ev.delta_r(0) = 0.08;
    integrate_options opt{1.2, 1e-3, 0.01};

    const trajectory tr = integrate(md, x0, {ev}, opt);
    REQUIRE_FALSE(tr.aborted);

    // replaying the two spans by hand must give bit-identical states
    VectorXd x = x0.to_vec();
    const VectorXd r0 = md.plant.r;
    const VectorXd r1 = md.plant.r + ev.delta_r;
    auto rhs_for = [&](const VectorXd& r) -> rhs_fn {
        return [&md, r, l](double, const VectorXd& v) {
            return closed_loop_rhs(md, closed_loop_state::from_vec(v, md.net, l), r)
                .to_vec();
        };
    };
    auto nothing = [](double, const VectorXd&) {};
    REQUIRE(rk4_span(rhs_for(r0), x, 0.0, 0.503, opt.h, opt.sample_dt, nothing));
    REQUIRE(rk4_span(rhs_for(r1), x, 0.503, 1.2, opt.h, opt.sample_dt, nothing));
    CHECK((tr.x.back().to_vec() - x).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("event bookkeeping for the load profile") {
    const auto md = fivebus_model();
    disturbance_event a, b;
    a.time = 1.0;
    a.delta_r = VectorXd::Zero(md.net.n_l);
    a.delta_r(0) = 0.1;
    b.time = 1.0;
    b.delta_r = VectorXd::Zero(md.net.n_l);
    b.delta_r(0) = 0.05;
    const std::vector<disturbance_event> events{a, b};

    CHECK(load_at(md, events, 0.5, true)(0) == Approx(md.plant.r(0)));
    CHECK(load_at(md, events, 1.0, false)(0) == Approx(md.plant.r(0)));
    CHECK(load_at(md, events, 1.0, true)(0) == Approx(md.plant.r(0) + 0.15));
    CHECK(load_at(md, events, 2.0, false)(0) == Approx(md.plant.r(0) + 0.15));
}

TEST_CASE("integration options are sanity-checked") {
    const auto md = fivebus_model();
    const closed_loop_state x0 = initial_state(md);
    CHECK_THROWS_AS(integrate(md, x0, {}, integrate_options{1.0, 0.0, 0.01}),
                    config_error);
    CHECK_THROWS_AS(integrate(md, x0, {}, integrate_options{1.0, 0.02, 0.01}),
                    config_error);
    CHECK_THROWS_AS(integrate(md, x0, {}, integrate_options{-1.0, 1e-3, 0.01}),
                    config_error);
}

TEST_CASE("non-finite states abort the span") {
    const rhs_fn f = [](double, const VectorXd& x) -> VectorXd {
        return x.array().square().matrix();
    };
    VectorXd x = VectorXd::Constant(1, 10.0);
    const bool ok = rk4_span(f, x, 0.0, 50.0, 0.5, 0.5, [](double, const VectorXd&) {});
    CHECK_FALSE(ok);
    CHECK(x.allFinite());  // the last accepted state is kept

    // a grossly unstable step on the full model is caught the same way
    const auto md = ieee39_model();
    const closed_loop_state x0 = initial_state(md);
    disturbance_event ev;
    ev.time = 2.0;
    ev.delta_r = VectorXd::Zero(md.net.n_l);
    ev.delta_r(15) = 0.13;
    const trajectory tr = integrate(md, x0, {ev}, integrate_options{400.0, 2.0, 2.0});
    CHECK(tr.aborted);
    CHECK(tr.abort_time > 0.0);
    for (const auto& s : tr.x) CHECK(s.to_vec().allFinite());
}
