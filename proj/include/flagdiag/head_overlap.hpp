// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flagdiag/grassmann.hpp"
#include "flagdiag/tensor_io.hpp"

namespace flagdiag {

/// Query subspaces of the h heads of one attention layer.
struct HeadSet {
    int layer = 0;
    Eigen::Index d = 0;
    Eigen::Index h = 0;
    Eigen::Index d_k = 0;  // declared head width, read from the tensor shape
    std::vector<Subspace> heads;
};

struct HeadBasisOptions {
    /// Keep numerically deficient heads at their reduced rank instead of throwing
    /// RankDeficientHead. R stays normalized by the declared d_k.
    bool allow_rank_reduction = false;
};

/// W_Q as a d x (h d_k) matrix: the first d columns of a combined (d, 3d) QKV
/// weight, or the transpose of a (h d_k, d) q_proj weight.
Matrix query_matrix(const Tensor& tensor);

/// Splits W_Q into column blocks [i d_k, (i+1) d_k). Requires attrs["h"];
/// attrs["d_k"] and attrs["d"] are checked against the shape when present.
HeadSet head_bases(const Tensor& tensor, int layer, const HeadBasisOptions& options = {});

/// Builds a head set directly from per-head d x d_k matrices.
HeadSet head_set_from_matrices(const std::vector<Matrix>& heads, int layer = 0,
                               const HeadBasisOptions& options = {});

/// R = 2/(h(h-1)) sum_{i<j} ||U_i^T U_j||_F^2 / d_k, in [0, 1].
double overlap_R(const HeadSet& heads);

/// Same quantity through explicit projectors, ||P_i P_j||_F^2.
double overlap_R_projector(const HeadSet& heads);

/// Symmetric h x h matrix of ||U_i^T U_j||_F^2 / d_k.
Matrix pairwise_overlaps(const HeadSet& heads);

struct HaarBaseline {
    double mean = 0.0;
    double std = 0.0;      // sample standard deviation of per-trial R
    double analytic = 0.0; // d_k / d
    std::vector<double> per_trial;
};

/// R of `trials` sets of h independent Haar d_k-frames in R^d.
HaarBaseline haar_baseline(Eigen::Index d, Eigen::Index d_k, Eigen::Index h, int trials, std::uint64_t seed,
                           int jobs = 1);

struct LayerOverlap {
    int layer = 0;
    std::string tensor;
    Eigen::Index d = 0;
    Eigen::Index h = 0;
    Eigen::Index d_k = 0;
    double R = 0.0;
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
    double analytic = 0.0;
    double excess = 0.0;
    bool significant = false;  // R > baseline_mean + 2 baseline_std
    Matrix pairwise;
};

struct OverlapReport {
    std::vector<LayerOverlap> layers;
    double mean_R = 0.0;
    int significant_layers = 0;
    int trials = 0;
};

/// Every tensor named "layer.<l>.wq", in layer order. Layers sharing (d, d_k, h)
/// share one baseline drawn from `seed`.
OverlapReport model_overlap_report(const TensorContainer& container, int trials, std::uint64_t seed,
                                   int jobs = 1, const HeadBasisOptions& options = {});

struct SharingIdentity {
    double penalty = 0.0;       // ||W1||^2 + ||W2||^2
    double half_sum_sq = 0.0;   // ||W1 + W2||^2 / 2
    double disagreement = 0.0;  // ||W1 - W2||^2 / 2
    double identity_residual = 0.0;
    bool equality = false;      // disagreement < 1e-12
};

SharingIdentity sharing_identity(const Matrix& w1, const Matrix& w2);

}  // namespace flagdiag
