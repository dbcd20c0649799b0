#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "bridgeflow/costs.hpp"
#include "bridgeflow/rng.hpp"

using namespace bridgeflow;

namespace {

FeatureMatrix fm(Matrix m) { return FeatureMatrix{std::move(m), std::nullopt, {}}; }

// Brute-force bridge oracle: exhaustive double loop over all anchors.
Matrix bridge_oracle(const Matrix& cxx, const Matrix& cyy, const PairedSet& p) {
    Matrix out(cxx.rows(), cyy.rows());
    for (Index i = 0; i < cxx.rows(); ++i)
        for (Index j = 0; j < cyy.rows(); ++j) {
            if (p.contains(i, j)) {
                out(i, j) = 0.0;
                continue;
            }
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [xp, yp] : p.pairs) best = std::min(best, cxx(i, xp) + cyy(yp, j));
            out(i, j) = best;
        }
    return out;
}

// Independent fused-graph construction + Floyd-Warshall for the KNN oracle.
Matrix knn_floyd_warshall_oracle(const Matrix& x, const Matrix& y, const PairedSet& p, int k,
                                 double cross_weight) {
    const Index n = x.rows(), m = y.rows(), total = n + m;
    const double inf = std::numeric_limits<double>::infinity();
    Matrix d = Matrix::Constant(total, total, inf);
    for (Index i = 0; i < total; ++i) d(i, i) = 0.0;

    auto add_space = [&](const Matrix& pts, Index offset) {
        const Index nn = pts.rows();
        for (Index i = 0; i < nn; ++i) {
            std::vector<Index> order(static_cast<std::size_t>(nn));
            std::iota(order.begin(), order.end(), Index{0});
            std::sort(order.begin(), order.end(), [&](Index a, Index b) {
                const double da = (pts.row(i) - pts.row(a)).norm();
                const double db = (pts.row(i) - pts.row(b)).norm();
                if (da != db) return da < db;
                return a < b;
            });
            int taken = 0;
            for (Index j : order) {
                if (j == i) continue;
                if (taken++ >= k) break;
                const double w = (pts.row(i) - pts.row(j)).norm();
                d(offset + i, offset + j) = std::min(d(offset + i, offset + j), w);
                d(offset + j, offset + i) = std::min(d(offset + j, offset + i), w);
            }
        }
    };
    add_space(x, 0);
    add_space(y, n);
    for (const auto& [i, j] : p.pairs) {
        d(i, n + j) = std::min(d(i, n + j), cross_weight);
        d(n + j, i) = std::min(d(n + j, i), cross_weight);
    }
    for (Index mid = 0; mid < total; ++mid)
        for (Index i = 0; i < total; ++i)
            for (Index j = 0; j < total; ++j)
                d(i, j) = std::min(d(i, j), d(i, mid) + d(mid, j));
    return d.block(0, n, n, m);
}

}  // namespace

TEST_CASE("cosine intra cost: zero diagonal, symmetric, nonnegative") {
    Rng rng(1);
    CostMatrix c = intra_cost(fm(rng.normal_matrix(8, 4)), CostKind::Cosine);
    CHECK(c.values.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK((c.values - Matrix(c.values.transpose())).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.values.minCoeff() >= 0.0);
}

TEST_CASE("cosine intra cost rejects zero-norm rows naming the row") {
    Matrix m = Matrix::Ones(3, 2);
    m.row(2).setZero();
    CHECK_THROWS_WITH_AS(intra_cost(fm(m), CostKind::Cosine), doctest::Contains("2"), InputError);
}

TEST_CASE("one_minus_pearson of x and -x is 2") {
    Rng rng(2);
    Matrix m(2, 6);
    m.row(0) = rng.normal_matrix(1, 6);
    m.row(1) = -m.row(0);
    CostMatrix c = intra_cost(fm(m), CostKind::OneMinusPearson);
    CHECK(c.values(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(c.values(0, 0) == 0.0);
}

TEST_CASE("one_minus_pearson matches a loop-based recomputation") {
    Rng rng(3);
    Matrix m = rng.normal_matrix(3, 7);
    CostMatrix c = intra_cost(fm(m), CostKind::OneMinusPearson);
    const Index d = m.cols();
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
            if (i == j) continue;
            double mi = 0, mj = 0;
            for (Index t = 0; t < d; ++t) {
                mi += m(i, t);
                mj += m(j, t);
            }
            mi /= d;
            mj /= d;
            double cov = 0, vi = 0, vj = 0;
            for (Index t = 0; t < d; ++t) {
                cov += (m(i, t) - mi) * (m(j, t) - mj);
                vi += (m(i, t) - mi) * (m(i, t) - mi);
                vj += (m(j, t) - mj) * (m(j, t) - mj);
            }
            const double expect = 1.0 - cov / std::sqrt(vi * vj);
            CHECK(c.values(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("intra cost is permutation-equivariant") {
    Rng rng(4);
    Matrix m = rng.normal_matrix(6, 3);
    CostMatrix c = intra_cost(fm(m), CostKind::SqEuclidean);
    std::vector<Index> perm = {3, 1, 5, 0, 4, 2};
    Matrix pm(6, 3);
    for (Index i = 0; i < 6; ++i) pm.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
    CostMatrix cp = intra_cost(fm(pm), CostKind::SqEuclidean);
    for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 6; ++j)
            CHECK(cp.values(i, j) ==
                  doctest::Approx(c.values(perm[static_cast<std::size_t>(i)],
                                           perm[static_cast<std::size_t>(j)]))
                      .epsilon(1e-12));
}

TEST_CASE("normalize_by_mean") {
    SUBCASE("constant matrix becomes all ones") {
        CostMatrix c{Matrix::Constant(3, 3, 4.2), CostKind::Cosine, false};
        CostMatrix n = normalize_by_mean(c);
        CHECK((n.values.array() - 1.0).abs().maxCoeff() < 1e-15);
        CHECK(n.normalized);
        CHECK(n.kind == CostKind::Cosine);
    }
    SUBCASE("hand example") {
        Matrix m(2, 2);
        m << 1, 3, 2, 2;
        CostMatrix n = normalize_by_mean({m, CostKind::SqEuclidean, false});
        Matrix expect(2, 2);
        expect << 0.5, 1.5, 1, 1;
        CHECK((n.values - expect).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("idempotent") {
        Rng rng(5);
        Matrix m = rng.normal_matrix(4, 4).cwiseAbs();
        CostMatrix once = normalize_by_mean({m, CostKind::Cosine, false});
        CostMatrix twice = normalize_by_mean(once);
        CHECK((twice.values - once.values).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("all-zero matrix is degenerate") {
        CHECK_THROWS_AS(normalize_by_mean({Matrix::Zero(2, 2), CostKind::Cosine, false}),
                        InputError);
    }
}

TEST_CASE("bridge cost: zero on pairs, oracle match, anchor bound") {
    Rng rng(6);
    const Index n = 20, m = 30;
    CostMatrix cxx = intra_cost(fm(rng.normal_matrix(n, 5)), CostKind::SqEuclidean);
    CostMatrix cyy = intra_cost(fm(rng.normal_matrix(m, 4)), CostKind::SqEuclidean);
    PairedSet p;
    p.pairs = {{0, 3}, {4, 9}, {7, 0}, {11, 21}, {19, 29}};
    CostMatrix b = bridge_cost(cxx, cyy, p);

    for (const auto& [i, j] : p.pairs) CHECK(b.values(i, j) == 0.0);
    Matrix oracle = bridge_oracle(cxx.values, cyy.values, p);
    CHECK((b.values - oracle).cwiseAbs().maxCoeff() == 0.0);
    // relaxed triangle bound through every anchor
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j)
            for (const auto& [xp, yp] : p.pairs)
                CHECK(b.values(i, j) <= cxx.values(i, xp) + cyy.values(yp, j));
}

TEST_CASE("bridge cost: fully paired identity case") {
    Rng rng(7);
    const Index n = 6;
    CostMatrix cxx = intra_cost(fm(rng.normal_matrix(n, 3)), CostKind::SqEuclidean);
    CostMatrix cyy = intra_cost(fm(rng.normal_matrix(n, 3)), CostKind::SqEuclidean);
    PairedSet p;
    for (Index i = 0; i < n; ++i) p.pairs.push_back({i, i});
    CostMatrix b = bridge_cost(cxx, cyy, p);
    CHECK(b.values.diagonal().cwiseAbs().maxCoeff() == 0.0);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            if (i == j) continue;
            double best = std::numeric_limits<double>::infinity();
            for (Index q = 0; q < n; ++q)
                best = std::min(best, cxx.values(i, q) + cyy.values(q, j));
            CHECK(b.values(i, j) == best);
        }
}

TEST_CASE("bridge cost rejects an empty paired set") {
    Rng rng(8);
    CostMatrix c = intra_cost(fm(rng.normal_matrix(3, 2)), CostKind::SqEuclidean);
    CHECK_THROWS_AS(bridge_cost(c, c, PairedSet{}), InputError);
}

TEST_CASE("knn fused cost: paired entries are zero and a path graph sums edges") {
    // two 4-node path graphs in 1-D, one bridge at (0, 0)
    Matrix x(4, 1), y(4, 1);
    x << 0, 1, 2, 3;
    y << 10, 11, 12, 13;
    PairedSet p;
    p.pairs = {{0, 0}};
    KnnOptions opts;
    opts.k = 1;
    CostMatrix c = knn_fused_cost(fm(x), fm(y), p, opts);
    CHECK(c.values(0, 0) == 0.0);
    // x3 -> x0 walks three unit edges, bridge, then j unit edges in y
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j)
            CHECK(c.values(i, j) == static_cast<double>(i + j));
}

TEST_CASE("knn fused cost matches Floyd-Warshall exactly on integer grids") {
    // Integer 1-D coordinates make every edge weight and path sum exact, so
    // the comparison can demand bitwise equality. Disconnected draws are
    // re-sampled; connectivity is not the point here.
    Rng rng(9);
    int done = 0, attempts = 0;
    while (done < 10 && attempts < 200) {
        ++attempts;
        const Index n = 8 + static_cast<Index>(rng.uniform_index(10));
        const Index m = 8 + static_cast<Index>(rng.uniform_index(10));
        Matrix x(n, 1), y(m, 1);
        for (Index i = 0; i < n; ++i) x(i, 0) = static_cast<double>(rng.uniform_index(100));
        for (Index j = 0; j < m; ++j) y(j, 0) = static_cast<double>(rng.uniform_index(100));
        PairedSet p;
        const Index l = 1 + static_cast<Index>(rng.uniform_index(4));
        for (Index q = 0; q < l; ++q) p.pairs.push_back({q, q});
        KnnOptions opts;
        opts.k = 3;
        CostMatrix c;
        try {
            c = knn_fused_cost(fm(x), fm(y), p, opts);
        } catch (const ConnectivityError&) {
            continue;
        }
        Matrix oracle = knn_floyd_warshall_oracle(x, y, p, opts.k, opts.cross_weight);
        CHECK((c.values - oracle).cwiseAbs().maxCoeff() == 0.0);
        ++done;
    }
    CHECK(done == 10);
}

TEST_CASE("knn fused cost matches Floyd-Warshall on float instances") {
    Rng rng(10);
    Matrix x = rng.normal_matrix(15, 3);
    Matrix y = rng.normal_matrix(12, 3);
    PairedSet p;
    p.pairs = {{0, 0}, {5, 7}, {9, 11}};
    KnnOptions opts;
    opts.k = 4;
    CostMatrix c = knn_fused_cost(fm(x), fm(y), p, opts);
    Matrix oracle = knn_floyd_warshall_oracle(x, y, p, opts.k, opts.cross_weight);
    CHECK((c.values - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("knn fused cost: increasing k never increases any entry") {
    Rng rng(11);
    Matrix x = rng.normal_matrix(14, 2);
    Matrix y = rng.normal_matrix(13, 2);
    PairedSet p;
    p.pairs = {{2, 3}, {8, 1}};
    KnnOptions k3{3, 0.0}, k5{5, 0.0};
    CostMatrix c3 = knn_fused_cost(fm(x), fm(y), p, k3);
    CostMatrix c5 = knn_fused_cost(fm(x), fm(y), p, k5);
    CHECK(((c3.values - c5.values).array() >= -1e-15).all());
}

TEST_CASE("knn fused cost satisfies the 4-point cross inequality") {
    Rng rng(12);
    Matrix x = rng.normal_matrix(10, 2);
    Matrix y = rng.normal_matrix(9, 2);
    PairedSet p;
    p.pairs = {{0, 0}, {4, 4}};
    CostMatrix c = knn_fused_cost(fm(x), fm(y), p, {3, 0.0});
    // d(xi,yj) <= d(xi,yj') + d(xi',yj') + d(xi',yj) for a graph metric
    Rng probe(13);
    for (int t = 0; t < 200; ++t) {
        const Index i = static_cast<Index>(probe.uniform_index(10));
        const Index i2 = static_cast<Index>(probe.uniform_index(10));
        const Index j = static_cast<Index>(probe.uniform_index(9));
        const Index j2 = static_cast<Index>(probe.uniform_index(9));
        CHECK(c.values(i, j) <=
              c.values(i, j2) + c.values(i2, j2) + c.values(i2, j) + 1e-12);
    }
}

TEST_CASE("knn fused cost reports disconnected components") {
    // two far clusters per space, no pairs linking the second ones
    Matrix x(4, 1), y(4, 1);
    x << 0, 1, 100, 101;
    y << 0, 1, 100, 101;
    PairedSet p;
    p.pairs = {{0, 0}};
    CHECK_THROWS_AS(knn_fused_cost(fm(x), fm(y), p, {1, 0.0}), ConnectivityError);
}

TEST_CASE("kcca: identical spaces with identity pairs give a zero diagonal") {
    Rng rng(14);
    Matrix pts = rng.normal_matrix(20, 3);
    PairedSet p;
    for (Index i = 0; i < 12; ++i) p.pairs.push_back({i, i});
    KccaOptions opts;
    opts.components = 3;
    CostMatrix c = kcca_fused_cost(fm(pts), fm(pts), p, opts);
    for (Index i = 0; i < 20; ++i) CHECK(c.values(i, i) < 1e-8);
    CHECK(c.values.minCoeff() >= 0.0);
    CHECK(c.values.maxCoeff() <= 2.0 + 1e-12);
}

TEST_CASE("kcca on linearly correlated 1-d data ranks pairs below average, like exact CCA") {
    Rng rng(15);
    const Index n = 24;
    Matrix x(n, 1), y(n, 1);
    for (Index i = 0; i < n; ++i) {
        x(i, 0) = rng.normal();
        y(i, 0) = 2.0 * x(i, 0) + 0.5;  // perfectly linearly correlated
    }
    PairedSet p;
    for (Index i = 0; i < n; ++i) p.pairs.push_back({i, i});

    // Exact CCA oracle on raw 1-d features: projections are the standardized
    // variables, so paired projections coincide and their cosine distance is
    // 0, below the average over all pairs.
    const double mx = x.col(0).mean(), my = y.col(0).mean();
    Vector u = (x.col(0).array() - mx).matrix().normalized();
    Vector v = (y.col(0).array() - my).matrix().normalized();
    double oracle_paired = 0.0, oracle_all = 0.0;
    for (Index i = 0; i < n; ++i) {
        oracle_paired += (u[i] * v[i] > 0) ? 0.0 : 2.0;
        for (Index j = 0; j < n; ++j) oracle_all += (u[i] * v[j] > 0) ? 0.0 : 2.0;
    }
    oracle_paired /= static_cast<double>(n);
    oracle_all /= static_cast<double>(n * n);
    CHECK(oracle_paired <= oracle_all);

    KccaOptions opts;
    opts.components = 1;
    CostMatrix c = kcca_fused_cost(fm(x), fm(y), p, opts);
    double paired = 0.0;
    for (Index i = 0; i < n; ++i) paired += c.values(i, i);
    paired /= static_cast<double>(n);
    CHECK(paired <= c.values.mean());
}

TEST_CASE("kcca validates the pair budget") {
    Rng rng(16);
    Matrix pts = rng.normal_matrix(6, 2);
    PairedSet p;
    p.pairs = {{0, 0}, {1, 1}};
    KccaOptions opts;
    opts.components = 2;
    CHECK_THROWS_AS(kcca_fused_cost(fm(pts), fm(pts), p, opts), InputError);
}

TEST_CASE("fused costs are zero on paired indices and nonnegative") {
    Rng rng(17);
    Matrix x = rng.normal_matrix(12, 3);
    Matrix y = rng.normal_matrix(11, 4);
    PairedSet p;
    p.pairs = {{1, 2}, {4, 6}, {7, 9}, {10, 0}, {0, 1}, {2, 3}, {3, 4}, {5, 5}};
    CostMatrix cxx = intra_cost(fm(x), CostKind::Cosine);
    CostMatrix cyy = intra_cost(fm(y), CostKind::Cosine);
    CostMatrix b = bridge_cost(cxx, cyy, p);
    CostMatrix k = knn_fused_cost(fm(x), fm(y), p, {3, 0.0});
    CostMatrix kc = kcca_fused_cost(fm(x), fm(y), p, {0.0, 1e-3, 3});
    for (const auto& [i, j] : p.pairs) {
        CHECK(b.values(i, j) == 0.0);
        CHECK(k.values(i, j) == 0.0);
    }
    CHECK(b.values.minCoeff() >= 0.0);
    CHECK(k.values.minCoeff() >= 0.0);
    CHECK(kc.values.minCoeff() >= 0.0);
}
