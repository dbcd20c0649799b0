#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bridgeflow/costs.hpp"
#include "bridgeflow/matrix.hpp"
#include "bridgeflow/rng.hpp"

namespace bridgeflow {

struct OTConfig {
    double epsilon = 5e-3;   // entropy regularization on mean-normalized costs
    double tau_x = 1.0;      // unbalancedness, tau = lambda/(lambda+eps); 1 = balanced
    double tau_y = 1.0;
    double alpha = 0.5;      // FGW trade-off between quadratic and linear terms
    int max_iters = 2000;    // Sinkhorn sweeps per solve
    double tolerance = 1e-6; // marginal violation (balanced) / dual change (unbalanced)
    int gw_outer_iters = 50;
    bool check_monotone = false;  // assert dual ascent per sweep (debug)

    void validate() const;
};

struct SolverReport {
    std::string solver;
    int iterations = 0;        // total Sinkhorn sweeps
    int outer_iterations = 0;  // GW/FGW linearization steps
    double marginal_violation = 0.0;
    double objective = 0.0;    // entropic objective of the returned coupling
    bool converged = false;
    bool objective_increase_warning = false;
    bool anchor_fallback = false;  // set by alignment when costs fall back to GW
};

struct Coupling {
    Matrix values;            // n x m nonnegative mass
    Vector source_marginal;   // intended a
    Vector target_marginal;   // intended b
    SolverReport report;

    Vector row_sums() const { return values.rowwise().sum(); }
    Vector col_sums() const { return values.colwise().sum().transpose(); }
    double total_mass() const { return values.sum(); }
};

// Entropic objective <C,pi> - eps*H(pi) with H(pi) = -sum pi log pi.
double entropic_objective(const Matrix& cost, const Matrix& pi, double epsilon);

// Quadratic (Gromov) cost <T(pi), pi> with T the square-loss linearization.
double gw_quadratic_value(const Matrix& c_xx, const Matrix& c_yy, const Matrix& pi);

// Log-domain Sinkhorn for (unbalanced) linear entropic OT. tau = 1 recovers
// the balanced solver on the same code path.
Coupling sinkhorn(const Vector& a, const Vector& b, const CostMatrix& cost, const OTConfig& cfg);
Coupling sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, const OTConfig& cfg);

// Entropic Gromov-Wasserstein by alternating linearization; balanced only.
Coupling entropic_gw(const CostMatrix& c_xx, const CostMatrix& c_yy, const Vector& a,
                     const Vector& b, const OTConfig& cfg);

// Entropic fused GW: alpha * quadratic + (1-alpha) * C_XY^2. alpha = 0 reduces
// exactly to sinkhorn on the squared inter cost; alpha = 1 to entropic_gw.
Coupling fgw(const CostMatrix& c_xx, const CostMatrix& c_yy, const CostMatrix& c_xy,
             const Vector& a, const Vector& b, const OTConfig& cfg);

// i.i.d. draws from pi normalized to a probability table; two-stage: row
// marginal first, then the conditional row.
std::vector<std::pair<Index, Index>> sample_pairs(const Coupling& pi, Index count, Rng& rng);
std::vector<std::pair<Index, Index>> sample_pairs(const Coupling& pi, Index count,
                                                  std::uint64_t seed);

// Probability mass the coupling places on the ground-truth pairing,
// sum_i pi(i, truth(i)) / total mass: the exact expectation of the sampled
// estimate below.
double expected_matching_accuracy(const Coupling& pi, const PairedSet& truth);

// Monte-Carlo variant matching the sampling procedure used in evaluation.
double sampled_matching_accuracy(const Coupling& pi, const PairedSet& truth, Index samples,
                                 Rng& rng);

}  // namespace bridgeflow
