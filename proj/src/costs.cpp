#include "bridgeflow/costs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

namespace bridgeflow {

void FeatureMatrix::validate() const {
    if (!points.allFinite()) throw InputError("feature matrix contains non-finite values");
    if (labels && static_cast<Index>(labels->size()) != n())
        throw InputError("feature matrix has " + std::to_string(n()) + " rows but " +
                         std::to_string(labels->size()) + " labels");
}

void PairedSet::validate(Index n, Index m) const {
    std::set<Index> src, tgt;
    for (const auto& [i, j] : pairs) {
        if (i < 0 || i >= n)
            throw InputError("paired set: source index " + std::to_string(i) + " out of range [0," +
                             std::to_string(n) + ")");
        if (j < 0 || j >= m)
            throw InputError("paired set: target index " + std::to_string(j) + " out of range [0," +
                             std::to_string(m) + ")");
        if (!src.insert(i).second)
            throw InputError("paired set: duplicate source index " + std::to_string(i));
        if (!tgt.insert(j).second)
            throw InputError("paired set: duplicate target index " + std::to_string(j));
    }
}

bool PairedSet::contains(Index i, Index j) const {
    for (const auto& [a, b] : pairs)
        if (a == i && b == j) return true;
    return false;
}

const char* cost_kind_name(CostKind k) {
    switch (k) {
        case CostKind::Cosine: return "cosine";
        case CostKind::SqEuclidean: return "sq_euclidean";
        case CostKind::OneMinusPearson: return "one_minus_pearson";
        case CostKind::Bridge: return "bridge";
        case CostKind::Knn: return "knn";
        case CostKind::Kcca: return "kcca";
    }
    return "unknown";
}

CostKind cost_kind_from_name(const std::string& name) {
    if (name == "cosine") return CostKind::Cosine;
    if (name == "sq_euclidean") return CostKind::SqEuclidean;
    if (name == "one_minus_pearson") return CostKind::OneMinusPearson;
    if (name == "bridge") return CostKind::Bridge;
    if (name == "knn") return CostKind::Knn;
    if (name == "kcca") return CostKind::Kcca;
    throw InputError("unknown cost kind '" + name + "'");
}

Matrix pairwise_euclidean(const Matrix& a, const Matrix& b) {
    const Vector an = a.rowwise().squaredNorm();
    const Vector bn = b.rowwise().squaredNorm();
    Matrix d = -2.0 * (a * b.transpose());
    d.colwise() += an;
    d.rowwise() += bn.transpose();
    // scalar sqrt: Eigen's vectorized psqrt can be one ulp off, which breaks
    // exact agreement with scalar-path oracles
    return d.cwiseMax(0.0).unaryExpr([](double v) { return std::sqrt(v); });
}

Matrix pairwise_cosine_distance(const Matrix& a, const Matrix& b) {
    Vector an = a.rowwise().norm();
    Vector bn = b.rowwise().norm();
    for (Index i = 0; i < an.size(); ++i)
        if (an[i] == 0.0)
            throw InputError("cosine distance: zero-norm row " + std::to_string(i) +
                             " in left operand");
    for (Index j = 0; j < bn.size(); ++j)
        if (bn[j] == 0.0)
            throw InputError("cosine distance: zero-norm row " + std::to_string(j) +
                             " in right operand");
    Matrix c = a * b.transpose();
    c.array().colwise() /= an.array();
    c.array().rowwise() /= bn.transpose().array();
    return (1.0 - c.array()).cwiseMax(0.0).matrix();
}

CostMatrix intra_cost(const FeatureMatrix& x, CostKind metric) {
    x.validate();
    const Index n = x.n();
    if (n < 2) throw InputError("intra_cost needs at least 2 points");
    CostMatrix out;
    out.kind = metric;
    switch (metric) {
        case CostKind::Cosine:
            out.values = pairwise_cosine_distance(x.points, x.points);
            break;
        case CostKind::SqEuclidean: {
            Matrix d = pairwise_euclidean(x.points, x.points);
            out.values = d.array().square().matrix();
            break;
        }
        case CostKind::OneMinusPearson: {
            const Index d = x.dim();
            if (d < 2) throw InputError("one_minus_pearson needs dimension >= 2");
            Matrix centered = x.points;
            centered.colwise() -= Vector(x.points.rowwise().mean());
            Vector sd = (centered.rowwise().squaredNorm() / static_cast<double>(d)).cwiseSqrt();
            for (Index i = 0; i < n; ++i)
                if (sd[i] == 0.0)
                    throw InputError("one_minus_pearson: constant row " + std::to_string(i));
            Matrix cov = (centered * centered.transpose()) / static_cast<double>(d);
            cov.array().colwise() /= sd.array();
            cov.array().rowwise() /= sd.transpose().array();
            out.values = (1.0 - cov.array()).cwiseMax(0.0).matrix();
            break;
        }
        default:
            throw InputError(std::string("intra_cost: '") + cost_kind_name(metric) +
                             "' is not an intra metric");
    }
    // symmetrize rounding noise and pin the diagonal at exactly zero
    out.values = 0.5 * (out.values + Matrix(out.values.transpose()));
    out.values.diagonal().setZero();
    return out;
}

CostMatrix normalize_by_mean(CostMatrix c) {
    require_finite(c.values, "cost matrix");
    const double mean = c.values.mean();
    if (!(mean > 0.0))
        throw InputError("normalize_by_mean: degenerate cost matrix with mean " +
                         std::to_string(mean));
    c.values /= mean;
    c.normalized = true;
    return c;
}

CostMatrix bridge_cost(const CostMatrix& c_xx, const CostMatrix& c_yy, const PairedSet& pairs) {
    if (pairs.empty()) throw InputError("bridge_cost: empty paired set");
    require_shape(c_xx.rows() == c_xx.cols(), "bridge_cost: C_XX must be square");
    require_shape(c_yy.rows() == c_yy.cols(), "bridge_cost: C_YY must be square");
    const Index n = c_xx.rows(), m = c_yy.rows();
    pairs.validate(n, m);
    const Index l = pairs.size();

    // gather anchor columns: A(i,p) = C_XX(i, x_p), B(p,j) = C_YY(y_p, j)
    Matrix a(n, l), b(l, m);
    for (Index p = 0; p < l; ++p) {
        a.col(p) = c_xx.values.col(pairs.pairs[static_cast<std::size_t>(p)].first);
        b.row(p) = c_yy.values.row(pairs.pairs[static_cast<std::size_t>(p)].second);
    }

    CostMatrix out;
    out.kind = CostKind::Bridge;
    out.values.resize(n, m);
    // min-plus product over anchors
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m; ++j) {
            double best = a(i, 0) + b(0, j);
            for (Index p = 1; p < l; ++p) best = std::min(best, a(i, p) + b(p, j));
            out.values(i, j) = best;
        }
    }
    for (const auto& [i, j] : pairs.pairs) out.values(i, j) = 0.0;
    return out;
}

namespace {

struct Edge {
    Index to;
    double w;
};

// Symmetric kNN adjacency: an edge is kept if either endpoint lists the other.
void add_knn_edges(const Matrix& pts, int k, Index offset, std::vector<std::vector<Edge>>& adj) {
    const Index n = pts.rows();
    Matrix d = pairwise_euclidean(pts, pts);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::vector<std::set<std::pair<Index, Index>>> seen;
    std::set<std::pair<Index, Index>> added;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) order[static_cast<std::size_t>(j)] = j;
        std::sort(order.begin(), order.end(), [&](Index p, Index q) {
            if (d(i, p) != d(i, q)) return d(i, p) < d(i, q);
            return p < q;  // deterministic tie-break
        });
        int taken = 0;
        for (Index j : order) {
            if (j == i) continue;
            if (taken++ >= k) break;
            const auto key = std::minmax(i, j);
            if (!added.insert({key.first, key.second}).second) continue;
            adj[static_cast<std::size_t>(offset + i)].push_back({offset + j, d(i, j)});
            adj[static_cast<std::size_t>(offset + j)].push_back({offset + i, d(i, j)});
        }
    }
}

}  // namespace

CostMatrix knn_fused_cost(const FeatureMatrix& x, const FeatureMatrix& y, const PairedSet& pairs,
                          const KnnOptions& opts) {
    x.validate();
    y.validate();
    const Index n = x.n(), m = y.n();
    pairs.validate(n, m);
    if (opts.k < 1) throw InputError("knn_fused_cost: k must be >= 1");
    if (opts.k >= n || opts.k >= m)
        throw InputError("knn_fused_cost: k = " + std::to_string(opts.k) +
                         " must be smaller than both n and m");

    const Index total = n + m;
    std::vector<std::vector<Edge>> adj(static_cast<std::size_t>(total));
    add_knn_edges(x.points, opts.k, 0, adj);
    add_knn_edges(y.points, opts.k, n, adj);
    for (const auto& [i, j] : pairs.pairs) {
        adj[static_cast<std::size_t>(i)].push_back({n + j, opts.cross_weight});
        adj[static_cast<std::size_t>(n + j)].push_back({i, opts.cross_weight});
    }

    CostMatrix out;
    out.kind = CostKind::Knn;
    out.values.resize(n, m);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<Index> unreachable_sources;
    std::vector<double> dist(static_cast<std::size_t>(total));
    using QItem = std::pair<double, Index>;
    for (Index s = 0; s < n; ++s) {
        std::fill(dist.begin(), dist.end(), inf);
        dist[static_cast<std::size_t>(s)] = 0.0;
        std::priority_queue<QItem, std::vector<QItem>, std::greater<>> pq;
        pq.push({0.0, s});
        while (!pq.empty()) {
            auto [du, u] = pq.top();
            pq.pop();
            if (du > dist[static_cast<std::size_t>(u)]) continue;
            for (const Edge& e : adj[static_cast<std::size_t>(u)]) {
                const double nd = du + e.w;
                if (nd < dist[static_cast<std::size_t>(e.to)]) {
                    dist[static_cast<std::size_t>(e.to)] = nd;
                    pq.push({nd, e.to});
                }
            }
        }
        bool ok = true;
        for (Index j = 0; j < m; ++j) {
            out.values(s, j) = dist[static_cast<std::size_t>(n + j)];
            if (!std::isfinite(out.values(s, j))) ok = false;
        }
        if (!ok) unreachable_sources.push_back(s);
    }
    if (!unreachable_sources.empty()) {
        std::string msg = "knn_fused_cost: fused graph disconnected; source nodes with unreachable"
                          " targets:";
        for (std::size_t i = 0; i < unreachable_sources.size() && i < 16; ++i)
            msg += " " + std::to_string(unreachable_sources[i]);
        if (unreachable_sources.size() > 16) msg += " ...";
        throw ConnectivityError(msg);
    }
    return out;
}

namespace {

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double bandwidth) {
    Matrix d = pairwise_euclidean(a, b);
    const double g = 1.0 / (2.0 * bandwidth * bandwidth);
    return (-g * d.array().square()).exp().matrix();
}

// Center a training Gram matrix: K <- HKH with H = I - 11^T/l.
Matrix center_gram(const Matrix& k) {
    const Index l = k.rows();
    const Vector row_mean = k.rowwise().mean();
    const Vector col_mean = k.colwise().mean();
    const double total = k.mean();
    Matrix out = k;
    out.colwise() -= row_mean;
    out.rowwise() -= col_mean.transpose();
    out.array() += total;
    (void)l;
    return out;
}

// Center kernel sections of new points against the anchors, consistently with
// the training centering.
Matrix center_sections(const Matrix& sections, const Matrix& train_gram) {
    const Vector train_col_mean = train_gram.colwise().mean();
    const double train_total = train_gram.mean();
    Matrix out = sections;
    out.colwise() -= Vector(sections.rowwise().mean());
    out.rowwise() -= train_col_mean.transpose();
    out.array() += train_total;
    return out;
}

double median_pairwise_distance(const Matrix& pts) {
    const Index n = pts.rows();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) d.push_back((pts.row(i) - pts.row(j)).norm());
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    return d[d.size() / 2];
}

}  // namespace

CostMatrix kcca_fused_cost(const FeatureMatrix& x, const FeatureMatrix& y, const PairedSet& pairs,
                           const KccaOptions& opts) {
    x.validate();
    y.validate();
    const Index n = x.n(), m = y.n();
    pairs.validate(n, m);
    const Index l = pairs.size();
    Index c = opts.components > 0 ? opts.components : std::min<Index>(l - 1, 10);
    if (l < c + 1)
        throw InputError("kcca_fused_cost: need at least components+1 = " + std::to_string(c + 1) +
                         " pairs, got " + std::to_string(l));
    if (!(opts.regularization > 0.0)) throw InputError("kcca_fused_cost: regularization must be > 0");

    Matrix xp(l, x.dim()), yp(l, y.dim());
    for (Index p = 0; p < l; ++p) {
        xp.row(p) = x.points.row(pairs.pairs[static_cast<std::size_t>(p)].first);
        yp.row(p) = y.points.row(pairs.pairs[static_cast<std::size_t>(p)].second);
    }

    double bw_x = opts.bandwidth, bw_y = opts.bandwidth;
    if (bw_x <= 0.0) {
        bw_x = median_pairwise_distance(xp);
        bw_y = median_pairwise_distance(yp);
        if (bw_x <= 0.0 || bw_y <= 0.0)
            throw InputError("kcca_fused_cost: degenerate anchors (zero median distance)");
    }

    const Matrix kx = center_gram(rbf_kernel(xp, xp, bw_x));
    const Matrix ky = center_gram(rbf_kernel(yp, yp, bw_y));

    // Generalized symmetric eigenproblem
    //   [0, Kx Ky; Ky Kx, 0] v = rho [(Kx+kI)^2, 0; 0, (Ky+kI)^2] v
    // whose top eigenvectors carry the paired projection directions.
    Matrix lhs = Matrix::Zero(2 * l, 2 * l);
    lhs.block(0, l, l, l) = kx * ky;
    lhs.block(l, 0, l, l) = ky * kx;
    Matrix ax = kx + opts.regularization * Matrix::Identity(l, l);
    Matrix ay = ky + opts.regularization * Matrix::Identity(l, l);
    Matrix rhs = Matrix::Zero(2 * l, 2 * l);
    rhs.block(0, 0, l, l) = ax * ax;
    rhs.block(l, l, l, l) = ay * ay;

    const Eigen::MatrixXd lhs_cm = lhs;
    const Eigen::MatrixXd rhs_cm = rhs;
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(lhs_cm, rhs_cm);
    if (es.info() != Eigen::Success)
        throw NumericalError("kcca_fused_cost: generalized eigensolver failed");

    // eigenvalues ascend; the top `c` carry the strongest correlations
    Matrix alpha(l, c), beta(l, c);
    for (Index q = 0; q < c; ++q) {
        const Index col = 2 * l - 1 - q;
        alpha.col(q) = es.eigenvectors().col(col).head(l);
        beta.col(q) = es.eigenvectors().col(col).tail(l);
    }

    const Matrix sx = center_sections(rbf_kernel(x.points, xp, bw_x), rbf_kernel(xp, xp, bw_x));
    const Matrix sy = center_sections(rbf_kernel(y.points, yp, bw_y), rbf_kernel(yp, yp, bw_y));
    Matrix ux = sx * alpha;  // n x c
    Matrix uy = sy * beta;   // m x c

    if (!ux.allFinite() || !uy.allFinite())
        throw NumericalError("kcca_fused_cost: non-finite projections");
    for (Index i = 0; i < n; ++i)
        if (ux.row(i).norm() == 0.0)
            throw NumericalError("kcca_fused_cost: zero-norm projection for source row " +
                                 std::to_string(i));
    for (Index j = 0; j < m; ++j)
        if (uy.row(j).norm() == 0.0)
            throw NumericalError("kcca_fused_cost: zero-norm projection for target row " +
                                 std::to_string(j));

    CostMatrix out;
    out.kind = CostKind::Kcca;
    out.values = pairwise_cosine_distance(ux, uy);
    return out;
}

}  // namespace bridgeflow
