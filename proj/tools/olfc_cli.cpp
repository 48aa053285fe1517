// command line front end: scenario simulation, steady-state dispatch solving,
// gain certification and controller comparison
#include <filesystem>
#include <future>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "olfc/config.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_checks = 1;
constexpr int exit_config = 2;
constexpr int exit_diverged = 3;
constexpr int exit_infeasible = 4;

struct shared_opts {
    std::vector<std::string> configs;
    std::string out = ".";
    bool allow_uncertified = false;
    int jobs = 1;
    double step = 0.0;   // 0 keeps the scenario value
    double t_end = 0.0;  // 0 keeps the scenario value
};

olfc::run_setup load_setup(const std::string& cfg, const shared_opts& so) {
    olfc::scenario_config sc = olfc::load_scenario_file(cfg);
    if (so.step > 0) sc.h = so.step;
    if (so.t_end > 0) sc.t_end = so.t_end;
    return olfc::make_setup(sc);
}

// refuse uncertified gains unless the caller forces them
std::vector<std::string> gate_gains(const olfc::run_setup& rs, bool allow) {
    const auto cert =
        olfc::certify_gains(rs.md.net, rs.md.cost, rs.md.plant, rs.md.gains);
    if (cert.pass) return {};
    std::string msg = "gains fall outside the certified stability range:";
    for (const auto& n : cert.notes) msg += "  " + n;
    if (!allow)
        throw olfc::config_error(msg + "  (pass --allow-uncertified to run anyway)");
    return {msg + "  (forced by --allow-uncertified)"};
}

std::string report_header(const olfc::run_setup& rs, const char* mode) {
    std::ostringstream os;
    os << "scenario: " << rs.sc.name << "\n"
       << "network: " << rs.sc.network_path << " (" << rs.md.net.n() << " buses, "
       << rs.md.net.k() << (rs.md.net.k() == 1 ? " area)" : " areas)") << "\n"
       << "controller: " << mode << "\n"
       << "horizon: " << rs.sc.t_end << " s, step " << rs.sc.h << " s, sample "
       << rs.sc.sample_dt << " s\n";
    return os.str();
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw olfc::config_error("cannot write " + path);
    out << body;
}

int run_simulate_one(const std::string& cfg, const shared_opts& so, std::ostream& log) {
    olfc::run_setup rs = load_setup(cfg, so);
    const auto forced = gate_gains(rs, so.allow_uncertified);
    fs::create_directories(so.out);
    const std::string stem = (fs::path(so.out) / rs.sc.name).string();
    int code = exit_ok;

    if (rs.sc.controller != olfc::controller_kind::agc) {
        olfc::sim_outcome oc = olfc::run_distributed(rs);
        oc.report.warnings.insert(oc.report.warnings.begin(), forced.begin(),
                                  forced.end());
        const std::string body = report_header(rs, "distributed") + oc.report.text();
        write_text(stem + ".report.txt", body);
        log << body;
        if (oc.diverged) return exit_diverged;
        olfc::write_csv(stem + ".csv", rs.md, oc.tr);
        olfc::write_manifest(stem + ".columns.txt", olfc::csv_columns(rs.md));
        log << "trajectory: " << stem << ".csv\n";
        if (!oc.report.all_pass()) code = std::max(code, exit_checks);
    }
    if (rs.sc.controller != olfc::controller_kind::distributed) {
        olfc::agc_outcome ac = olfc::run_agc(rs);
        ac.report.warnings.insert(ac.report.warnings.begin(), forced.begin(),
                                  forced.end());
        const bool solo = rs.sc.controller == olfc::controller_kind::agc;
        const std::string astem = solo ? stem : stem + "_agc";
        const std::string body = report_header(rs, "agc") + ac.report.text();
        write_text(astem + ".report.txt", body);
        log << body;
        if (ac.diverged) return exit_diverged;
        olfc::write_agc_csv(astem + ".csv", rs.md, ac.tr);
        olfc::write_manifest(astem + ".columns.txt", olfc::agc_csv_columns(rs.md));
        log << "trajectory: " << astem << ".csv\n";
        if (!ac.report.all_pass()) code = std::max(code, exit_checks);
    }
    return code;
}

int run_solve_one(const std::string& cfg, const shared_opts& so, std::ostream& log) {
    olfc::run_setup rs = load_setup(cfg, so);
    const olfc::system_model& md = rs.md;
    const olfc::VectorXd r = olfc::load_at(
        md, rs.events, std::numeric_limits<double>::infinity(), true);

    const olfc::olfc_solution kkt = olfc::solve_olfc_kkt(md.net, md.m, md.cost, r);
    std::ostringstream os;
    os << report_header(rs, "steady-state dispatch");
    if (!kkt.feasible) {
        os << "infeasible: " << kkt.certificate << "\n";
        log << os.str();
        fs::create_directories(so.out);
        write_text((fs::path(so.out) / (rs.sc.name + ".olfc.txt")).string(), os.str());
        return exit_infeasible;
    }
    const olfc::olfc_solution pgd = olfc::solve_olfc_pgd(md.net, md.m, md.cost, r);
    if (!pgd.converged) {
        log << "projected-gradient solver failed: " << pgd.certificate << "\n";
        return exit_diverged;
    }
    double gap = (kkt.Pm - pgd.Pm).lpNorm<Eigen::Infinity>();
    gap = std::max(gap, (kkt.d - pgd.d).lpNorm<Eigen::Infinity>());
    gap = std::max(gap, (kkt.Lambda - pgd.Lambda).lpNorm<Eigen::Infinity>());
    const olfc::kkt_report kr = olfc::check_kkt(kkt, md.net, md.m, md.cost, r);

    os << "objective (generation cost minus load utility): "
       << olfc::fmt17(olfc::olfc_objective(md.cost, md.net.n_g, kkt.Pm, kkt.d)) << "\n";
    for (int s = 0; s < md.net.k(); ++s)
        os << "area " << s + 1 << " price: " << olfc::fmt17(kkt.Lambda(s)) << "\n";
    os << "bus  role  setpoint\n";
    for (int i = 0; i < md.net.n(); ++i) {
        const bool gen = md.net.is_gen(i);
        const double x = gen ? kkt.Pm(i) : kkt.d(i - md.net.n_g);
        os << md.net.bus_id[i] << "  " << (gen ? "gen " : "load") << "  "
           << olfc::fmt17(x) << "\n";
    }
    os << "solver agreement (direct vs projected gradient): " << olfc::fmt3(gap) << "\n"
       << "worst first-order residual: " << olfc::fmt3(kr.worst()) << "\n";
    const bool ok = gap < 1e-8 && kr.pass(1e-8);
    os << (ok ? "result: PASS\n" : "result: FAIL\n");
    log << os.str();
    fs::create_directories(so.out);
    write_text((fs::path(so.out) / (rs.sc.name + ".olfc.txt")).string(), os.str());
    return ok ? exit_ok : exit_checks;
}

int run_certify_one(const std::string& cfg, const shared_opts& so, std::ostream& log) {
    olfc::run_setup rs = load_setup(cfg, so);
    const olfc::system_model& md = rs.md;
    const olfc::gain_certificate central =
        olfc::certify_gains(md.net, md.cost, md.plant, md.gains);
    int rounds = 0;
    const olfc::gain_certificate dist = olfc::certify_gains_distributed(
        md.net, md.comm, md.cost, md.plant, md.gains, &rounds);

    bool agree = true;
    for (int s = 0; s < md.net.k(); ++s) {
        const double a = central.alpha_star(s), b = dist.alpha_star(s);
        if (std::isinf(a) || std::isinf(b))
            agree = agree && std::isinf(a) && std::isinf(b);
        else
            agree = agree && std::abs(a - b) < 1e-12;
    }

    std::ostringstream os;
    os << report_header(rs, "gain certification");
    for (const auto& n : central.notes) os << n << "\n";
    os << "largest per-bus stability coefficient: " << olfc::fmt3(central.rho.maxCoeff())
       << "\n"
       << "gossip rounds to agree on each area bound: " << rounds << "\n"
       << "distributed bounds match central bounds: " << (agree ? "yes" : "NO") << "\n";
    const bool ok = central.pass && dist.pass && agree;
    os << (ok ? "result: PASS\n" : "result: FAIL\n");
    log << os.str();
    fs::create_directories(so.out);
    write_text((fs::path(so.out) / (rs.sc.name + ".gains.txt")).string(), os.str());
    return ok ? exit_ok : exit_checks;
}

int run_compare_one(const std::string& cfg, const shared_opts& so, std::ostream& log) {
    olfc::run_setup rs = load_setup(cfg, so);
    const auto forced = gate_gains(rs, so.allow_uncertified);
    fs::create_directories(so.out);
    const std::string stem = (fs::path(so.out) / rs.sc.name).string();

    if (rs.sc.controller == olfc::controller_kind::agc) {
        olfc::agc_outcome ac = olfc::run_agc(rs);
        if (ac.diverged) {
            log << "AGC run diverged at t = " << olfc::fmt3(ac.tr.abort_time) << "\n";
            return exit_diverged;
        }
        olfc::write_agc_csv(stem + ".csv", rs.md, ac.tr);
        olfc::write_manifest(stem + ".columns.txt", olfc::agc_csv_columns(rs.md));
        log << report_header(rs, "agc")
            << "baseline-only run: channels written, nothing to compare\n";
        return exit_ok;
    }

    if (rs.sc.probe_bus < 0)
        throw olfc::config_error("compare needs probe_bus in [scenario]");
    auto it = rs.nb.index_of.find(rs.sc.probe_bus);
    if (it == rs.nb.index_of.end())
        throw olfc::config_error("probe_bus " + std::to_string(rs.sc.probe_bus) +
                                 " does not exist");
    const int probe = it->second;

    olfc::sim_outcome oc = olfc::run_distributed(rs);
    olfc::agc_outcome ac = olfc::run_agc(rs);
    if (oc.diverged || ac.diverged) {
        log << "a run diverged; nothing to compare\n";
        return exit_diverged;
    }
    olfc::write_csv(stem + ".csv", rs.md, oc.tr);
    olfc::write_manifest(stem + ".columns.txt", olfc::csv_columns(rs.md));
    olfc::write_agc_csv(stem + "_agc.csv", rs.md, ac.tr);
    olfc::write_manifest(stem + "_agc.columns.txt", olfc::agc_csv_columns(rs.md));

    double t_event = std::numeric_limits<double>::infinity();
    for (const auto& e : rs.events) t_event = std::min(t_event, e.time);
    if (rs.events.empty()) t_event = 0.0;

    const olfc::response_stats d =
        olfc::probe_stats(oc.tr.t, olfc::probe_series(rs.md, oc.tr, probe), t_event);
    const olfc::response_stats a =
        olfc::probe_stats(ac.tr.t, olfc::probe_series(rs.md, ac.tr, probe), t_event);

    std::ostringstream os;
    os << report_header(rs, "distributed vs agc");
    for (const auto& w : forced) os << "warning: " << w << "\n";
    os << "probe bus: " << rs.sc.probe_bus << "\n"
       << "distributed: nadir " << olfc::fmt17(d.nadir) << ", peak "
       << olfc::fmt17(d.peak) << ", settle " << olfc::fmt17(d.settle) << " s\n"
       << "agc:         nadir " << olfc::fmt17(a.nadir) << ", peak "
       << olfc::fmt17(a.peak) << ", settle " << olfc::fmt17(a.settle) << " s\n";
    int code;
    if (d.peak == 0.0 && a.peak == 0.0) {
        os << "verdict: tie (no disturbance response at the probe bus)\n";
        code = exit_ok;
    } else {
        const bool nadir_ok = d.nadir >= a.nadir - 1e-12;
        const bool settle_ok = d.settle <= a.settle + 1e-12;
        os << "nadir no deeper than baseline: " << (nadir_ok ? "yes" : "NO") << "\n"
           << "settles no later than baseline: " << (settle_ok ? "yes" : "NO") << "\n"
           << "verdict: " << (nadir_ok && settle_ok ? "distributed wins or ties\n"
                                                    : "baseline wins\n");
        code = nadir_ok && settle_ok ? exit_ok : exit_checks;
    }
    log << os.str();
    write_text(stem + ".compare.txt", os.str());
    return code;
}

// run one job per config, possibly concurrently; outputs are replayed in
// submission order so logs stay deterministic
template <class Fn>
int run_many(const shared_opts& so, Fn&& one) {
    auto job = [&](const std::string& cfg) -> std::pair<int, std::string> {
        std::ostringstream log;
        int code;
        try {
            code = one(cfg, so, log);
        } catch (const olfc::config_error& e) {
            log << "config error: " << e.what() << "\n";
            code = exit_config;
        } catch (const olfc::infeasible_error& e) {
            log << "infeasible: " << e.what() << "\n";
            code = exit_infeasible;
        } catch (const olfc::model_error& e) {
            log << "model error: " << e.what() << "\n";
            code = exit_diverged;
        }
        return {code, log.str()};
    };
    int worst = exit_ok;
    if (so.jobs <= 1 || so.configs.size() <= 1) {
        for (const auto& cfg : so.configs) {
            auto [code, text] = job(cfg);
            std::cout << text;
            worst = std::max(worst, code);
        }
        return worst;
    }
    std::vector<std::future<std::pair<int, std::string>>> futs;
    futs.reserve(so.configs.size());
    size_t next = 0;
    while (next < so.configs.size() || !futs.empty()) {
        while (next < so.configs.size() &&
               futs.size() < static_cast<size_t>(so.jobs)) {
            futs.push_back(std::async(std::launch::async, job, so.configs[next]));
            ++next;
        }
        auto [code, text] = futs.front().get();
        futs.erase(futs.begin());
        std::cout << text;
        worst = std::max(worst, code);
    }
    return worst;
}

void add_common(CLI::App* cmd, shared_opts& so, bool with_jobs) {
    cmd->add_option("--config", so.configs, "scenario config file(s)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", so.out, "output directory");
    cmd->add_flag("--allow-uncertified", so.allow_uncertified,
                  "run even if the gains fail certification");
    cmd->add_option("--step", so.step, "override the integration step (s)");
    cmd->add_option("--t-end", so.t_end, "override the horizon (s)");
    if (with_jobs)
        cmd->add_option("--jobs", so.jobs, "run configs concurrently")
            ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulation and verification engine for distributed "
                 "frequency-regulating optimal dispatch"};
    app.require_subcommand(1);

    shared_opts so_sim, so_solve, so_cert, so_cmp;
    CLI::App* sim = app.add_subcommand("simulate", "integrate a scenario and verify it");
    add_common(sim, so_sim, true);
    CLI::App* solve =
        app.add_subcommand("solve-olfc", "solve the steady-state dispatch problem");
    add_common(solve, so_solve, false);
    CLI::App* cert =
        app.add_subcommand("certify-gains", "check gains against the stability bound");
    add_common(cert, so_cert, false);
    CLI::App* cmp =
        app.add_subcommand("compare", "distributed controller vs AGC baseline");
    add_common(cmp, so_cmp, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_config;
    }

    if (sim->parsed()) return run_many(so_sim, run_simulate_one);
    if (solve->parsed()) return run_many(so_solve, run_solve_one);
    if (cert->parsed()) return run_many(so_cert, run_certify_one);
    if (cmp->parsed()) return run_many(so_cmp, run_compare_one);
    return exit_config;
}
