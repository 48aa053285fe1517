#pragma once

// shared fixtures for the test suite: paths into the data corpus, a seeded
// generator of small random dispatch instances, and graph helpers used to
// bound gossip round counts.

#include <algorithm>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "olfc/config.hpp"

namespace support {

inline std::string data_path(const std::string& name) {
    return std::string(OLFC_DATA_DIR) + "/" + name;
}

// a small random power system: connected graph, contiguous areas, mixed
// generator/load buses, well-scaled quadratic costs.  Deterministic per seed.
struct rand_instance {
    olfc::power_network net;
    olfc::comm_graph comm;
    olfc::network_matrices m;
    olfc::plant_params plant;
    olfc::cost_model cost;
    olfc::VectorXd r;
};

inline rand_instance make_instance(unsigned seed, int max_areas = 3) {
    std::mt19937 rng(seed);
    auto uni = [&](double a, double b) {
        return std::uniform_real_distribution<double>(a, b)(rng);
    };
    auto uin = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

    rand_instance in;
    const int n = uin(3, 8);
    const int ng = uin(1, n - 1);
    const int k = uin(1, std::min(max_areas, n));
    in.net.n_g = ng;
    in.net.n_l = n - ng;

    // spanning tree plus a few extra links
    std::set<std::pair<int, int>> used;
    for (int i = 1; i < n; ++i) used.insert({uin(0, i - 1), i});
    for (int extra = uin(0, n); extra > 0; --extra) {
        const int a = uin(0, n - 1), b = uin(0, n - 1);
        if (a == b) continue;
        const auto key = std::minmax(a, b);
        used.insert({key.first, key.second});
    }
    for (const auto& [a, b] : used) in.net.lines.push_back({a, b, uni(0.5, 3.0)});

    // contiguous areas: chop a breadth-first ordering into k runs
    std::vector<int> order;
    {
        std::vector<char> seen(n, 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            order.push_back(v);
            for (const auto& [a, b] : used) {
                const int u = (a == v) ? b : (b == v) ? a : -1;
                if (u >= 0 && !seen[u]) {
                    seen[u] = 1;
                    q.push(u);
                }
            }
        }
    }
    std::vector<int> cut{0};
    while (static_cast<int>(cut.size()) < k) {
        const int c = uin(1, n - 1);
        if (std::find(cut.begin(), cut.end(), c) == cut.end()) cut.push_back(c);
    }
    cut.push_back(n);
    std::sort(cut.begin(), cut.end());
    in.net.area.assign(n, 1);
    for (int s = 0; s < k; ++s)
        for (int q = cut[s]; q < cut[s + 1]; ++q) in.net.area[order[q]] = s + 1;

    in.net.scheduled_tie.resize(k);
    double sum = 0;
    for (int s = 0; s + 1 < k; ++s) {
        in.net.scheduled_tie(s) = uni(-0.4, 0.4);
        sum += in.net.scheduled_tie(s);
    }
    in.net.scheduled_tie(k - 1) = -sum;
    in.net.bus_id.resize(n);
    for (int i = 0; i < n; ++i) in.net.bus_id[i] = i + 1;

    in.comm = olfc::mirror_comm(in.net);
    in.m = olfc::build_matrices(in.net, in.comm);

    in.plant.M.resize(ng);
    in.plant.D.resize(ng);
    in.plant.T.resize(ng);
    in.plant.R.resize(ng);
    for (int i = 0; i < ng; ++i) {
        in.plant.M(i) = uni(2.0, 15.0);
        in.plant.D(i) = uni(0.8, 1.2);
        in.plant.T(i) = uni(0.2, 0.5);
        in.plant.R(i) = 0.05;
    }
    in.plant.Dl.resize(n - ng);
    in.plant.r.resize(n - ng);
    for (int i = 0; i < n - ng; ++i) {
        in.plant.Dl(i) = uni(0.8, 1.2);
        in.plant.r(i) = uni(-0.5, 0.5);
    }
    in.r = in.plant.r;

    in.cost.c1.resize(n);
    in.cost.c2.resize(n);
    in.cost.c3 = olfc::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        in.cost.c1(i) = (i < ng ? 1.0 : -1.0) * uni(0.5, 5.0);
        in.cost.c2(i) = uni(-2.0, 2.0);
    }
    return in;
}

// diameter of one area's share of a link list; -1 when the subgraph is not
// connected (never expected for valid fixtures)
inline int area_diameter(const olfc::power_network& net,
                         const std::vector<olfc::comm_edge>& edges, int area) {
    std::vector<int> members;
    for (int i = 0; i < net.n(); ++i)
        if (net.area[i] == area) members.push_back(i);
    int diam = 0;
    for (const int src : members) {
        std::vector<int> dist(net.n(), -1);
        std::queue<int> q;
        q.push(src);
        dist[src] = 0;
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            for (const auto& e : edges) {
                const int u = (e.i == v) ? e.j : (e.j == v) ? e.i : -1;
                if (u < 0 || net.area[u] != area || dist[u] >= 0) continue;
                dist[u] = dist[v] + 1;
                q.push(u);
            }
        }
        for (const int m : members) {
            if (dist[m] < 0) return -1;
            diam = std::max(diam, dist[m]);
        }
    }
    return diam;
}

}  // namespace support
