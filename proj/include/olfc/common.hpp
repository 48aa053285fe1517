#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace olfc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// configuration / input file problems -> CLI exit 2
struct config_error : std::runtime_error {
    explicit config_error(const std::string& m) : std::runtime_error(m) {}
};

// violations of model assumptions discovered at runtime (bad equilibrium, divergence)
struct model_error : std::runtime_error {
    explicit model_error(const std::string& m) : std::runtime_error(m) {}
};

// the steady-state dispatch problem has no solution -> CLI exit 4
struct infeasible_error : model_error {
    explicit infeasible_error(const std::string& m) : model_error(m) {}
};

// breach of the peer-to-peer information contract (e.g. z requested across areas)
struct contract_error : std::logic_error {
    explicit contract_error(const std::string& m) : std::logic_error(m) {}
};

inline constexpr double pi = 3.14159265358979323846;

}  // namespace olfc
