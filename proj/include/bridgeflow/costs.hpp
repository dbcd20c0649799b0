#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bridgeflow/matrix.hpp"

namespace bridgeflow {

// A set of latent points, one per row, with optional integer class labels.
struct FeatureMatrix {
    Matrix points;
    std::optional<std::vector<int>> labels;
    std::vector<std::string> ids;

    Index n() const { return points.rows(); }
    Index dim() const { return points.cols(); }
    void validate() const;
};

// Known cross-domain correspondences (source index, target index).
struct PairedSet {
    std::vector<std::pair<Index, Index>> pairs;

    Index size() const { return static_cast<Index>(pairs.size()); }
    bool empty() const { return pairs.empty(); }
    // in-range indices, no duplicate source and no duplicate target
    void validate(Index n, Index m) const;
    bool contains(Index i, Index j) const;
};

enum class CostKind { Cosine, SqEuclidean, OneMinusPearson, Bridge, Knn, Kcca };

const char* cost_kind_name(CostKind k);
CostKind cost_kind_from_name(const std::string& name);

struct CostMatrix {
    Matrix values;
    CostKind kind = CostKind::Cosine;
    bool normalized = false;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

// Symmetric n-by-n intra-space costs with an exactly zero diagonal.
CostMatrix intra_cost(const FeatureMatrix& x, CostKind metric);

// Scale so the mean entry is 1. Throws InputError on an all-zero matrix.
CostMatrix normalize_by_mean(CostMatrix c);

// Inter-space cost routed through the cheapest paired anchor; exactly zero on
// paired index pairs.
CostMatrix bridge_cost(const CostMatrix& c_xx, const CostMatrix& c_yy, const PairedSet& pairs);

struct KnnOptions {
    int k = 10;
    // Weight of the pair-linking cross edges. The fused adjacency marks pairs
    // with an indicator; treating those links as zero-cost keeps all fused
    // costs zero on paired indices.
    double cross_weight = 0.0;
};

// Shortest-path distance from each source point to each target point in the
// fused graph: symmetric kNN graphs per space with Euclidean edge weights,
// plus one cross edge per labelled pair.
CostMatrix knn_fused_cost(const FeatureMatrix& x, const FeatureMatrix& y, const PairedSet& pairs,
                          const KnnOptions& opts = {});

struct KccaOptions {
    double bandwidth = 0.0;      // 0 -> median pairwise distance among anchors
    double regularization = 1e-3;
    Index components = 0;        // 0 -> min(|P| - 1, 10)
};

// Kernel CCA fitted on the paired anchors with a Gaussian RBF kernel; all
// points are projected through their kernel sections against the anchors and
// compared by cosine distance in the shared space.
CostMatrix kcca_fused_cost(const FeatureMatrix& x, const FeatureMatrix& y, const PairedSet& pairs,
                           const KccaOptions& opts = {});

// Pairwise Euclidean distances (helper shared with metrics).
Matrix pairwise_euclidean(const Matrix& a, const Matrix& b);

// Cosine distance 1 - <a_i,b_j>/(|a_i||b_j|); throws on zero-norm rows.
Matrix pairwise_cosine_distance(const Matrix& a, const Matrix& b);

}  // namespace bridgeflow
