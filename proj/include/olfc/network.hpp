#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "olfc/common.hpp"

namespace olfc {

// one transmission line; endpoints are internal bus indices (0-based, generators first)
struct line {
    int from = 0;
    int to = 0;
    double susceptance = 0.0;  // T_pe > 0, p.u.
};

// physical grid: buses 0..n_g-1 are generator buses, n_g..n-1 are load buses
struct power_network {
    int n_g = 0;
    int n_l = 0;
    std::vector<line> lines;
    std::vector<int> area;      // size n, values 1..k
    VectorXd scheduled_tie;     // size k, p.u. net export per area
    std::vector<int> bus_id;    // external bus numbers, size n (reporting only)

    int n() const { return n_g + n_l; }
    int l() const { return static_cast<int>(lines.size()); }
    int k() const { return static_cast<int>(scheduled_tie.size()); }
    bool is_gen(int i) const { return i < n_g; }
};

struct comm_edge {
    int i = 0;
    int j = 0;
    double weight = 1.0;  // -l_cij > 0
};

// cyber graph: per-area connected subgraphs plus inter-area links along tie lines
struct comm_graph {
    std::vector<comm_edge> edges;
    std::vector<int> designated;  // one internal bus index per area
};

namespace detail {

inline void check_connected(int n, const std::vector<std::pair<int, int>>& edges,
                            const std::vector<int>& members, const char* what) {
    if (members.empty()) throw config_error(std::string(what) + ": no buses");
    std::vector<char> in(n, 0), seen(n, 0);
    for (int b : members) in[b] = 1;
    std::vector<int> stack{members.front()};
    seen[members.front()] = 1;
    int count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (const auto& [a, b] : edges) {
            int u = (a == v) ? b : (b == v) ? a : -1;
            if (u >= 0 && in[u] && !seen[u]) {
                seen[u] = 1;
                ++count;
                stack.push_back(u);
            }
        }
    }
    if (count != static_cast<int>(members.size()))
        throw config_error(std::string(what) + ": graph is not connected");
}

inline void check_simple(const std::vector<std::pair<int, int>>& edges, const char* what) {
    std::set<std::pair<int, int>> seen;
    for (const auto& [a, b] : edges) {
        if (a == b) throw config_error(std::string(what) + ": self-loop at a bus");
        auto key = std::minmax(a, b);
        if (!seen.insert({key.first, key.second}).second)
            throw config_error(std::string(what) + ": duplicate edge between one bus pair");
    }
}

}  // namespace detail

inline void validate_network(const power_network& net) {
    const int n = net.n(), k = net.k();
    if (net.n_g < 1 || net.n_l < 0) throw config_error("network: need at least one generator bus");
    if (static_cast<int>(net.area.size()) != n) throw config_error("network: area map size mismatch");
    std::vector<std::pair<int, int>> ed;
    for (const auto& e : net.lines) {
        if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
            throw config_error("network: line endpoint out of range");
        if (e.susceptance <= 0.0) throw config_error("network: line susceptance must be > 0");
        ed.push_back({e.from, e.to});
    }
    detail::check_simple(ed, "network lines");
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    detail::check_connected(n, ed, all, "transmission network");
    for (int i = 0; i < n; ++i)
        if (net.area[i] < 1 || net.area[i] > k)
            throw config_error("network: bus assigned to an undeclared area");
    for (int s = 1; s <= k; ++s)
        if (std::count(net.area.begin(), net.area.end(), s) == 0)
            throw config_error("network: declared area has no buses");
    if (std::abs(net.scheduled_tie.sum()) > 1e-12)
        throw config_error("network: scheduled tie-line exchanges must sum to zero");
}

inline void validate_comm(const comm_graph& comm, const power_network& net) {
    const int n = net.n(), k = net.k();
    std::vector<std::pair<int, int>> ed;
    std::set<std::pair<int, int>> phys_ties;
    for (const auto& e : net.lines)
        if (net.area[e.from] != net.area[e.to]) {
            auto key = std::minmax(e.from, e.to);
            phys_ties.insert({key.first, key.second});
        }
    for (const auto& e : comm.edges) {
        if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n)
            throw config_error("comm: edge endpoint out of range");
        if (e.weight <= 0.0) throw config_error("comm: edge weight must be > 0");
        ed.push_back({e.i, e.j});
        if (net.area[e.i] != net.area[e.j]) {
            auto key = std::minmax(e.i, e.j);
            if (!phys_ties.count({key.first, key.second}))
                throw config_error("comm: inter-area link must follow a physical tie line");
        }
    }
    detail::check_simple(ed, "comm links");
    for (int s = 1; s <= k; ++s) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (net.area[i] == s) members.push_back(i);
        std::vector<std::pair<int, int>> intra;
        for (const auto& [a, b] : ed)
            if (net.area[a] == s && net.area[b] == s) intra.push_back({a, b});
        if (members.size() > 1)
            detail::check_connected(n, intra, members, "comm area subgraph");
    }
    if (static_cast<int>(comm.designated.size()) != k)
        throw config_error("comm: need exactly one designated bus per area");
    for (int s = 0; s < k; ++s) {
        int b = comm.designated[s];
        if (b < 0 || b >= n || net.area[b] != s + 1)
            throw config_error("comm: designated bus lies outside its declared area");
    }
}

// default cyber topology: one link per transmission line, unit weights,
// designated bus = lowest external id in each area
inline comm_graph mirror_comm(const power_network& net) {
    comm_graph g;
    for (const auto& e : net.lines) g.edges.push_back({e.from, e.to, 1.0});
    g.designated.assign(net.k(), -1);
    for (int i = 0; i < net.n(); ++i) {
        int s = net.area[i] - 1;
        if (g.designated[s] < 0 || net.bus_id[i] < net.bus_id[g.designated[s]])
            g.designated[s] = i;
    }
    return g;
}

inline MatrixXd build_incidence(const power_network& net) {
    MatrixXd Cp = MatrixXd::Zero(net.n(), net.l());
    for (int e = 0; e < net.l(); ++e) {
        Cp(net.lines[e].from, e) = 1.0;
        Cp(net.lines[e].to, e) = -1.0;
    }
    return Cp;
}

inline std::pair<MatrixXd, MatrixXd> build_laplacians(const comm_graph& comm,
                                                      const power_network& net) {
    const int n = net.n();
    MatrixXd Lc = MatrixXd::Zero(n, n), L = MatrixXd::Zero(n, n);
    auto add = [](MatrixXd& M, int i, int j, double w) {
        M(i, i) += w;
        M(j, j) += w;
        M(i, j) -= w;
        M(j, i) -= w;
    };
    for (const auto& e : comm.edges) {
        add(Lc, e.i, e.j, e.weight);
        if (net.area[e.i] == net.area[e.j]) add(L, e.i, e.j, e.weight);
    }
    return {Lc, L};
}

inline std::pair<MatrixXd, MatrixXd> build_area_matrices(const power_network& net,
                                                         const comm_graph& comm) {
    const int n = net.n(), k = net.k();
    MatrixXd E = MatrixXd::Zero(k, n), J = MatrixXd::Zero(n, k);
    for (int i = 0; i < n; ++i) E(net.area[i] - 1, i) = 1.0;
    for (int s = 0; s < k; ++s) J(comm.designated[s], s) = 1.0;
    return {E, J};
}

// all derived matrices bundled; every downstream module works off this
struct network_matrices {
    MatrixXd Cp, CpG, CpL;  // incidence and its generator/load row blocks
    VectorXd Tp;            // line susceptances
    MatrixXd Lc, L;         // cyber Laplacians (full, intra-area)
    MatrixXd E, J;          // area aggregation and designated-bus selector
};

inline network_matrices build_matrices(const power_network& net, const comm_graph& comm) {
    network_matrices m;
    m.Cp = build_incidence(net);
    m.CpG = m.Cp.topRows(net.n_g);
    m.CpL = m.Cp.bottomRows(net.n_l);
    m.Tp.resize(net.l());
    for (int e = 0; e < net.l(); ++e) m.Tp(e) = net.lines[e].susceptance;
    std::tie(m.Lc, m.L) = build_laplacians(comm, net);
    std::tie(m.E, m.J) = build_area_matrices(net, comm);
    return m;
}

}  // namespace olfc
