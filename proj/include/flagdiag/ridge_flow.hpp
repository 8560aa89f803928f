// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flagdiag/grassmann.hpp"

namespace flagdiag {

/// Ridge classifier problem L(W) = 1/2 ||WH - Y||_F^2 + lambda/2 ||W||_F^2 with
/// frozen features H (d x n), labels Y (c x n) and initial classifier W0 (c x d).
struct RidgeProblem {
    Matrix features;
    Matrix labels;
    double lambda = 1.0;
    Matrix initial;

    Eigen::Index feature_dim() const { return features.rows(); }
    Eigen::Index classes() const { return labels.rows(); }

    /// Throws ShapeMismatch or NonPositiveLambda.
    void validate() const;

    /// Random problem with rank(H) = feature_rank < d so the orthogonal complement
    /// of col(H) is non-trivial. H = A B / sqrt(n) with Gaussian A, B.
    static RidgeProblem random(Eigen::Index d, Eigen::Index n, Eigen::Index c, Eigen::Index feature_rank,
                               double lambda, Rng& rng);
};

double ridge_objective(const RidgeProblem& prob, const Matrix& w);
/// (WH - Y)H^T + lambda W
Matrix ridge_gradient(const RidgeProblem& prob, const Matrix& w);

/// W* = Y H^T (H H^T + lambda I)^{-1} via a Cholesky solve.
Matrix ridge_solution(const Matrix& features, const Matrix& labels, double lambda);

/// col(H) at the default rank tolerance.
Subspace feature_subspace(const Matrix& features);

/// ||W (I - P_V)||_F
double orthogonal_norm(const Matrix& w, const Subspace& v);

/// Exact gradient flow W(t) = W* + (W0 - W*) exp(-t (H H^T + lambda I)), with the
/// exponential taken through the symmetric eigendecomposition. Construction does
/// the factorizations once.
class ClosedFormFlow {
public:
    explicit ClosedFormFlow(RidgeProblem prob);

    const RidgeProblem& problem() const { return prob_; }
    const Matrix& minimizer() const { return minimizer_; }
    const Subspace& subspace() const { return subspace_; }
    /// Largest eigenvalue of H H^T + lambda I.
    double stiffness() const { return eigenvalues_.maxCoeff(); }

    Matrix at(double t) const;

private:
    RidgeProblem prob_;
    Matrix minimizer_;
    Vector eigenvalues_;
    Matrix eigenvectors_;
    Subspace subspace_;
};

Matrix flow_closed_form(const RidgeProblem& prob, double t);

inline constexpr double kRateFitFloor = 1e-12;

struct FlowTrace {
    std::vector<double> times;
    std::vector<double> orth_norms;
    std::vector<double> objective;
    /// Negative slope of the least-squares line through (t, log orth_norm) over
    /// samples above 1e-12; empty when fewer than two such samples exist.
    std::optional<double> fitted_rate;
    Matrix terminal;
};

std::optional<double> fit_decay_rate(const std::vector<double>& times, const std::vector<double>& norms);

/// Classical RK4 with `steps` uniform steps on [0, t_end]. Throws StepTooLarge
/// if ||W|| grows past 10x its scale.
FlowTrace flow_integrate(const RidgeProblem& prob, double t_end, int steps);

/// Closed-form trace sampled on `samples`+1 uniform points of [0, t_end].
FlowTrace flow_trace_closed_form(const RidgeProblem& prob, double t_end, int samples);

struct Level2Report {
    Eigen::Index classifier_rank = 0;
    Eigen::Index feature_rank = 0;
    double alignment = 0.0;  // mean cos^2 of the principal angles
    double null_mean = 0.0;
    double null_std = 0.0;
    std::optional<double> z_score;  // empty when the null has zero spread
    double containment_defect = 0.0;
    bool contained = false;
    /// Present when rank(W) = rank(H): whether row(W) = col(H).
    std::optional<bool> equal;
};

/// Row space of W against col(H), with a Haar null over `null_trials` random
/// subspace pairs of the same ranks.
Level2Report level2_verdict(const Matrix& w, const Matrix& features, double tolerance = 1e-6,
                            int null_trials = 200, std::uint64_t seed = 0, int jobs = 1);

}  // namespace flagdiag
