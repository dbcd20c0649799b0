#include "bridgeflow/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bridgeflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_weights(const Vector& w, Index expected, const char* name) {
    if (w.size() != expected)
        throw ShapeError(std::string("sinkhorn: ") + name + " has size " +
                         std::to_string(w.size()) + ", expected " + std::to_string(expected));
    if ((w.array() < 0.0).any())
        throw InputError(std::string("sinkhorn: ") + name + " has negative entries");
    if (std::abs(w.sum() - 1.0) > 1e-8)
        throw InputError(std::string("sinkhorn: ") + name + " must sum to 1, got " +
                         std::to_string(w.sum()));
}

Vector safe_log(const Vector& w) {
    Vector out(w.size());
    for (Index i = 0; i < w.size(); ++i) out[i] = w[i] > 0.0 ? std::log(w[i]) : -kInf;
    return out;
}

// Row-wise eps * logsumexp((duals_j - C_ij)/eps) into `out`, using `work` as
// an n x m scratch buffer.
void row_lse(const Matrix& c, const Vector& duals, double eps, Matrix& work, Vector& out) {
    work = -c;
    work.rowwise() += duals.transpose();
    out.resize(c.rows());
    for (Index i = 0; i < c.rows(); ++i) {
        const double mx = work.row(i).maxCoeff();
        if (mx == -kInf) {
            out[i] = -kInf;
            continue;
        }
        const double s = ((work.row(i).array() - mx) / eps).exp().sum();
        out[i] = mx + eps * std::log(s);
    }
}

struct SinkhornState {
    Vector f, g;       // duals
    int sweeps = 0;
    double violation = kInf;
    bool converged = false;
};

// One shared log-domain core; tau-damped dual updates. tau == 1 exactly
// reproduces the balanced update (multiplication by 1.0 preserves bits).
SinkhornState sinkhorn_core(const Vector& a, const Vector& b, const Matrix& c,
                            const Matrix& c_t, const OTConfig& cfg, Vector f, Vector g) {
    const Index n = c.rows(), m = c.cols();
    const double eps = cfg.epsilon;
    const Vector la = safe_log(a), lb = safe_log(b);
    const bool balanced = cfg.tau_x == 1.0 && cfg.tau_y == 1.0;

    SinkhornState st;
    st.f = std::move(f);
    st.g = std::move(g);
    if (st.f.size() != n) st.f = Vector::Zero(n);
    if (st.g.size() != m) st.g = Vector::Zero(m);

    Matrix work(n, m), work_t(m, n);
    Vector s(n), t(m), rowsum(n);
    double prev_dual = -kInf;

    for (int sweep = 0; sweep < cfg.max_iters; ++sweep) {
        row_lse(c, st.g, eps, work, s);
        if (balanced) {
            // row sums under the current duals come free from s
            double viol = 0.0;
            for (Index i = 0; i < n; ++i) {
                const double rs = (st.f[i] == -kInf || s[i] == -kInf)
                                      ? 0.0
                                      : std::exp((st.f[i] + s[i]) / eps);
                rowsum[i] = rs;
                viol = std::max(viol, std::abs(rs - a[i]));
            }
            st.violation = viol;
            if (sweep > 0 && viol <= cfg.tolerance) {
                st.converged = true;
                break;
            }
        }

        Vector f_new(n), g_new(m);
        for (Index i = 0; i < n; ++i)
            f_new[i] = (la[i] == -kInf) ? -kInf : cfg.tau_x * (eps * la[i] - s[i]);
        row_lse(c_t, f_new, eps, work_t, t);
        for (Index j = 0; j < m; ++j)
            g_new[j] = (lb[j] == -kInf) ? -kInf : cfg.tau_y * (eps * lb[j] - t[j]);

        if (!balanced) {
            double dmax = 0.0;
            for (Index i = 0; i < n; ++i)
                if (st.f[i] != -kInf || f_new[i] != -kInf)
                    dmax = std::max(dmax, std::abs(f_new[i] - st.f[i]));
            for (Index j = 0; j < m; ++j)
                if (st.g[j] != -kInf || g_new[j] != -kInf)
                    dmax = std::max(dmax, std::abs(g_new[j] - st.g[j]));
            st.f = std::move(f_new);
            st.g = std::move(g_new);
            ++st.sweeps;
            if (dmax <= cfg.tolerance) {
                st.converged = true;
                break;
            }
            continue;
        }

        st.f = std::move(f_new);
        st.g = std::move(g_new);
        ++st.sweeps;

        if (cfg.check_monotone) {
            // block-coordinate ascent on the balanced dual:
            //   D(f,g) = <f,a> + <g,b> - eps * sum exp((f+g-C)/eps)
            double mass = 0.0, fa = 0.0, gb = 0.0;
            for (Index i = 0; i < n; ++i)
                if (a[i] > 0.0) fa += st.f[i] * a[i];
            for (Index j = 0; j < m; ++j)
                if (b[j] > 0.0) gb += st.g[j] * b[j];
            row_lse(c, st.g, eps, work, s);
            for (Index i = 0; i < n; ++i)
                if (st.f[i] != -kInf && s[i] != -kInf) mass += std::exp((st.f[i] + s[i]) / eps);
            const double dual = fa + gb - eps * mass;
            if (dual < prev_dual - 1e-9)
                throw NumericalError("sinkhorn: dual objective decreased across a sweep");
            prev_dual = dual;
        }
    }
    return st;
}

Matrix materialize(const Vector& f, const Vector& g, const Matrix& c, double eps) {
    const Index n = c.rows(), m = c.cols();
    Matrix pi(n, m);
    for (Index i = 0; i < n; ++i) {
        if (f[i] == -kInf) {
            pi.row(i).setZero();
            continue;
        }
        for (Index j = 0; j < m; ++j)
            pi(i, j) = (g[j] == -kInf) ? 0.0 : std::exp((f[i] + g[j] - c(i, j)) / eps);
    }
    return pi;
}

double final_violation(const Matrix& pi, const Vector& a, const Vector& b) {
    const Vector rs = pi.rowwise().sum();
    const Vector cs = pi.colwise().sum().transpose();
    return std::max((rs - a).cwiseAbs().maxCoeff(), (cs - b).cwiseAbs().maxCoeff());
}

Coupling run_sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, const OTConfig& cfg,
                      const char* label) {
    cfg.validate();
    validate_weights(a, cost.rows(), "a");
    validate_weights(b, cost.cols(), "b");
    require_finite(cost, "sinkhorn cost matrix");

    const Matrix cost_t = cost.transpose();
    SinkhornState st = sinkhorn_core(a, b, cost, cost_t, cfg, Vector(), Vector());

    Coupling out;
    out.values = materialize(st.f, st.g, cost, cfg.epsilon);
    out.source_marginal = a;
    out.target_marginal = b;
    out.report.solver = label;
    out.report.iterations = st.sweeps;
    out.report.converged = st.converged;
    out.report.marginal_violation = final_violation(out.values, a, b);
    out.report.objective = entropic_objective(cost, out.values, cfg.epsilon);
    return out;
}

}  // namespace

void OTConfig::validate() const {
    if (!(epsilon > 0.0)) throw InputError("OTConfig: epsilon must be > 0");
    if (!(tau_x > 0.0 && tau_x <= 1.0) || !(tau_y > 0.0 && tau_y <= 1.0))
        throw InputError("OTConfig: tau must lie in (0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("OTConfig: alpha must lie in [0, 1]");
    if (max_iters < 1) throw InputError("OTConfig: max_iters must be >= 1");
    if (!(tolerance > 0.0)) throw InputError("OTConfig: tolerance must be > 0");
}

double entropic_objective(const Matrix& cost, const Matrix& pi, double epsilon) {
    double lin = 0.0, ent = 0.0;
    for (Index i = 0; i < pi.rows(); ++i)
        for (Index j = 0; j < pi.cols(); ++j) {
            const double p = pi(i, j);
            if (p > 0.0) {
                lin += cost(i, j) * p;
                ent -= p * std::log(p);
            }
        }
    return lin - epsilon * ent;
}

double gw_quadratic_value(const Matrix& c_xx, const Matrix& c_yy, const Matrix& pi) {
    const Vector r = pi.rowwise().sum();
    const Vector c = pi.colwise().sum().transpose();
    const Vector hx = c_xx.array().square().matrix() * r;
    const Vector hy = c_yy.array().square().matrix() * c;
    const Matrix cross = c_xx * pi * c_yy.transpose();
    double v = 0.0;
    for (Index i = 0; i < pi.rows(); ++i)
        for (Index j = 0; j < pi.cols(); ++j)
            v += (hx[i] + hy[j] - 2.0 * cross(i, j)) * pi(i, j);
    return v;
}

Coupling sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, const OTConfig& cfg) {
    return run_sinkhorn(a, b, cost, cfg, "linear");
}

Coupling sinkhorn(const Vector& a, const Vector& b, const CostMatrix& cost, const OTConfig& cfg) {
    return run_sinkhorn(a, b, cost.values, cfg, "linear");
}

namespace {

// Shared alternating-linearization core for entropic (F)GW. The inter-space
// term enters pre-squared; alpha = 1 ignores it.
Coupling fgw_core(const Matrix& c_xx, const Matrix& c_yy, const Matrix& c_xy_sq, double alpha,
                  const Vector& a, const Vector& b, const OTConfig& cfg, const char* label) {
    cfg.validate();
    require_shape(c_xx.rows() == c_xx.cols(), "gw: C_XX must be square");
    require_shape(c_yy.rows() == c_yy.cols(), "gw: C_YY must be square");
    const Index n = c_xx.rows(), m = c_yy.rows();
    require_shape(c_xy_sq.rows() == n && c_xy_sq.cols() == m, "gw: C_XY shape mismatch");
    validate_weights(a, n, "a");
    validate_weights(b, m, "b");
    require_finite(c_xx, "C_XX");
    require_finite(c_yy, "C_YY");
    require_finite(c_xy_sq, "C_XY");
    if (cfg.tau_x != 1.0 || cfg.tau_y != 1.0)
        throw InputError("gw/fgw: only balanced marginals are supported (tau must be 1)");

    const Matrix cxx_sq = c_xx.array().square().matrix();
    const Matrix cyy_sq = c_yy.array().square().matrix();

    Matrix pi = a * b.transpose();
    Vector f, g;  // warm-started duals across outer steps
    Matrix lin_cost(n, m), lin_cost_t(m, n);

    Coupling out;
    out.source_marginal = a;
    out.target_marginal = b;
    out.report.solver = label;

    double prev_obj = kInf;
    bool converged = false;
    for (int outer = 0; outer < cfg.gw_outer_iters; ++outer) {
        const Vector r = pi.rowwise().sum();
        const Vector c = pi.colwise().sum().transpose();
        const Vector hx = cxx_sq * r;
        const Vector hy = cyy_sq * c;
        const Matrix cross = c_xx * pi * c_yy.transpose();

        // gradient of the quadratic term is 2*T(pi)
        lin_cost = (-2.0 * cross).eval();
        lin_cost.colwise() += hx;
        lin_cost.rowwise() += hy.transpose();
        double obj = 0.0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) obj += lin_cost(i, j) * pi(i, j);
        obj = alpha * obj + (1.0 - alpha) * (c_xy_sq.array() * pi.array()).sum();
        {
            double ent = 0.0;
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < m; ++j)
                    if (pi(i, j) > 0.0) ent -= pi(i, j) * std::log(pi(i, j));
            obj -= cfg.epsilon * ent;
        }
        if (outer > 0 && obj > prev_obj + 1e-9) out.report.objective_increase_warning = true;
        prev_obj = obj;

        lin_cost *= 2.0 * alpha;
        lin_cost += (1.0 - alpha) * c_xy_sq;
        lin_cost_t = lin_cost.transpose();

        SinkhornState st = sinkhorn_core(a, b, lin_cost, lin_cost_t, cfg, std::move(f), std::move(g));
        f = std::move(st.f);
        g = std::move(st.g);
        out.report.iterations += st.sweeps;
        out.report.outer_iterations = outer + 1;

        Matrix pi_new = materialize(f, g, lin_cost, cfg.epsilon);
        const double delta = (pi_new - pi).cwiseAbs().maxCoeff();
        pi = std::move(pi_new);
        if (delta <= cfg.tolerance) {
            converged = st.converged;
            break;
        }
    }

    out.values = std::move(pi);
    out.report.converged = converged;
    out.report.marginal_violation = final_violation(out.values, a, b);
    out.report.objective = alpha * gw_quadratic_value(c_xx, c_yy, out.values) +
                           (1.0 - alpha) * (c_xy_sq.array() * out.values.array()).sum() -
                           cfg.epsilon * [&] {
                               double ent = 0.0;
                               for (Index i = 0; i < n; ++i)
                                   for (Index j = 0; j < m; ++j)
                                       if (out.values(i, j) > 0.0)
                                           ent -= out.values(i, j) * std::log(out.values(i, j));
                               return ent;
                           }();
    return out;
}

}  // namespace

Coupling entropic_gw(const CostMatrix& c_xx, const CostMatrix& c_yy, const Vector& a,
                     const Vector& b, const OTConfig& cfg) {
    const Matrix zero = Matrix::Zero(c_xx.rows(), c_yy.rows());
    return fgw_core(c_xx.values, c_yy.values, zero, 1.0, a, b, cfg, "gw");
}

Coupling fgw(const CostMatrix& c_xx, const CostMatrix& c_yy, const CostMatrix& c_xy,
             const Vector& a, const Vector& b, const OTConfig& cfg) {
    if (cfg.alpha == 0.0) {
        // exact reduction: linear entropic OT on the squared inter cost
        Coupling out = run_sinkhorn(a, b, c_xy.values.array().square().matrix(), cfg, "fgw");
        return out;
    }
    const Matrix c_xy_sq = c_xy.values.array().square().matrix();
    return fgw_core(c_xx.values, c_yy.values, c_xy_sq, cfg.alpha, a, b, cfg, "fgw");
}

std::vector<std::pair<Index, Index>> sample_pairs(const Coupling& pi, Index count, Rng& rng) {
    const double mass = pi.total_mass();
    if (!(mass > 0.0)) throw InputError("sample_pairs: coupling has zero mass");
    const Index n = pi.values.rows(), m = pi.values.cols();
    Vector row_cdf(n);
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
        acc += pi.values.row(i).sum();
        row_cdf[i] = acc;
    }
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index s = 0; s < count; ++s) {
        const double u = rng.uniform01() * mass;
        Index i = 0;
        while (i < n - 1 && row_cdf[i] <= u) ++i;
        const double row_mass = pi.values.row(i).sum();
        Index j = 0;
        if (row_mass > 0.0) {
            const double v = rng.uniform01() * row_mass;
            double cacc = 0.0;
            for (j = 0; j < m; ++j) {
                cacc += pi.values(i, j);
                if (cacc > v) break;
            }
            if (j == m) j = m - 1;
        }
        out.emplace_back(i, j);
    }
    return out;
}

std::vector<std::pair<Index, Index>> sample_pairs(const Coupling& pi, Index count,
                                                  std::uint64_t seed) {
    Rng rng(seed);
    return sample_pairs(pi, count, rng);
}

double expected_matching_accuracy(const Coupling& pi, const PairedSet& truth) {
    const double mass = pi.total_mass();
    if (!(mass > 0.0)) throw InputError("expected_matching_accuracy: coupling has zero mass");
    truth.validate(pi.values.rows(), pi.values.cols());
    double hit = 0.0;
    for (const auto& [i, j] : truth.pairs) hit += pi.values(i, j);
    return hit / mass;
}

double sampled_matching_accuracy(const Coupling& pi, const PairedSet& truth, Index samples,
                                 Rng& rng) {
    truth.validate(pi.values.rows(), pi.values.cols());
    std::vector<Index> truth_of(static_cast<std::size_t>(pi.values.rows()), Index{-1});
    for (const auto& [i, j] : truth.pairs) truth_of[static_cast<std::size_t>(i)] = j;
    const auto draws = sample_pairs(pi, samples, rng);
    Index hits = 0;
    for (const auto& [i, j] : draws)
        if (truth_of[static_cast<std::size_t>(i)] == j) ++hits;
    return static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace bridgeflow
