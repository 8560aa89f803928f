// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/git_strata.hpp"

#include <cmath>
#include <numbers>

#include "flagdiag/error.hpp"
#include "flagdiag/parallel.hpp"

namespace flagdiag {

namespace {

void require_ordered_pair(const Subspace& v, const Subspace& u) {
    if (v.ambient_dim() != u.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch, "subspaces live in different ambient spaces");
    if (v.rank() > u.rank())
        throw Error(ErrorCode::DimensionMismatch, "expected rank(V) <= rank(U)");
}

constexpr double kAmbiguityFactor = 100.0;

}  // namespace

StratumLabel stratum_index(const Subspace& v, const Subspace& u, double tolerance) {
    require_ordered_pair(v, u);
    return {intersection_dim(v, u, tolerance), v.rank(), u.rank(), v.ambient_dim()};
}

AdaptedFrame adapted_frame(const Subspace& v, const Subspace& u, double tolerance) {
    require_ordered_pair(v, u);
    const Eigen::Index d = v.ambient_dim();
    const Eigen::Index r1 = v.rank();
    const Eigen::Index r2 = u.rank();

    AdaptedFrame frame;
    frame.r1 = r1;
    frame.r2 = r2;

    Matrix va(d, r1), ub(d, r2);
    if (r2 > 0) {
        if (r1 > 0) {
            Eigen::JacobiSVD<Matrix> svd(v.basis().transpose() * u.basis(),
                                         Eigen::ComputeFullU | Eigen::ComputeFullV);
            const Vector& cosines = svd.singularValues();
            for (Eigen::Index j = 0; j < r1; ++j) {
                const double gap = 1.0 - std::min(cosines(j), 1.0);
                if (gap <= tolerance) {
                    ++frame.k;
                } else if (gap < kAmbiguityFactor * tolerance) {
                    throw Error(ErrorCode::DegenerateInput,
                                "principal cosine " + std::to_string(cosines(j)) +
                                    " is too close to the incidence tolerance");
                }
            }
            va = v.basis() * svd.matrixU();
            ub = u.basis() * svd.matrixV();
        } else {
            ub = u.basis();
        }
    }
    frame.s = r1 - frame.k;

    Matrix g(d, d);
    g.leftCols(r2) = ub;
    for (Eigen::Index j = 0; j < frame.s; ++j)
        g.col(r2 + j) = va.col(frame.k + j) - ub.col(frame.k + j);

    const Eigen::Index filled = r2 + frame.s;
    if (filled < d) {
        Eigen::HouseholderQR<Matrix> qr(g.leftCols(filled));
        Matrix full_q = qr.householderQ();
        g.rightCols(d - filled) = full_q.rightCols(d - filled);
    }
    frame.g = std::move(g);
    return frame;
}

Matrix one_parameter_map(const AdaptedFrame& frame, double t) {
    Vector scale = Vector::Ones(frame.d());
    scale.segment(frame.r2, frame.s).setConstant(t);
    Matrix scaled = frame.g * scale.asDiagonal();
    // g Λ g^{-1} = (g^{-T} (g Λ)^T)^T
    return frame.g.transpose().partialPivLu().solve(scaled.transpose()).transpose();
}

Subspace degeneration_path(const Subspace& v, const Subspace& u, double t, double tolerance) {
    if (!(t > 0.0)) throw Error(ErrorCode::InvalidParams, "degeneration parameter must be positive");
    AdaptedFrame frame = adapted_frame(v, u, tolerance);
    if (frame.s == 0 || t == 1.0) return v;

    Matrix coords = frame.g.partialPivLu().solve(v.basis());
    coords.middleRows(frame.r2, frame.s) *= t;
    return orthonormalize(frame.g * coords);
}

Statistic parse_statistic(std::string_view name) {
    if (name == "intersection_dim") return Statistic::IntersectionDim;
    if (name == "angle_sum") return Statistic::AngleSum;
    if (name == "projector_distance_sq") return Statistic::ProjectorDistanceSq;
    if (name == "frobenius_overlap") return Statistic::FrobeniusOverlap;
    throw Error(ErrorCode::UnknownStatistic, std::string(name));
}

std::string_view statistic_name(Statistic statistic) {
    switch (statistic) {
        case Statistic::IntersectionDim: return "intersection_dim";
        case Statistic::AngleSum: return "angle_sum";
        case Statistic::ProjectorDistanceSq: return "projector_distance_sq";
        case Statistic::FrobeniusOverlap: return "frobenius_overlap";
    }
    return "unknown";
}

double evaluate_statistic(Statistic statistic, const Subspace& v, const Subspace& u) {
    switch (statistic) {
        case Statistic::IntersectionDim: return intersection_dim(v, u);
        case Statistic::AngleSum: return principal_angles(v, u).sum();
        case Statistic::ProjectorDistanceSq: return projector_distance_sq(v, u);
        case Statistic::FrobeniusOverlap: {
            const Eigen::Index m = std::min(v.rank(), u.rank());
            if (m == 0) return 0.0;
            return (v.basis().transpose() * u.basis()).squaredNorm() / static_cast<double>(m);
        }
    }
    throw Error(ErrorCode::UnknownStatistic, "unhandled statistic");
}

Subspace apply_map(const Matrix& g, const Subspace& s) {
    if (g.rows() != s.ambient_dim() || g.cols() != s.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch, "map does not act on this ambient space");
    if (s.rank() == 0) return s;
    return orthonormalize(g * s.basis());
}

double statistic_deviation(Statistic statistic, const Subspace& v, const Subspace& u, const Matrix& g) {
    const double before = evaluate_statistic(statistic, v, u);
    const double after = evaluate_statistic(statistic, apply_map(g, v), apply_map(g, u));
    return std::abs(after - before);
}

ProbeReport invariance_probe(Statistic statistic, const Subspace& v, const Subspace& u, int trials,
                             std::uint64_t seed, int jobs) {
    if (v.ambient_dim() != u.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch, "subspaces live in different ambient spaces");
    if (trials < 1) throw Error(ErrorCode::InvalidParams, "trials must be positive");
    const Eigen::Index d = v.ambient_dim();

    std::vector<double> orth_dev(static_cast<std::size_t>(trials));
    std::vector<double> inv_dev(static_cast<std::size_t>(trials));
    std::vector<int> resamples(static_cast<std::size_t>(trials));
    parallel_for(trials, jobs, [&](int i) {
        Rng orth_rng = make_rng(seed, 2 * static_cast<std::uint64_t>(i));
        orth_dev[i] = statistic_deviation(statistic, v, u, haar_orthogonal(d, orth_rng));

        Rng inv_rng = make_rng(seed, 2 * static_cast<std::uint64_t>(i) + 1);
        Matrix g = gaussian_matrix(d, d, inv_rng);
        while (condition_number(g) > kProbeConditionBound) {
            ++resamples[i];
            g = gaussian_matrix(d, d, inv_rng);
        }
        inv_dev[i] = statistic_deviation(statistic, v, u, g);
    });

    ProbeReport report;
    report.statistic = statistic;
    report.trials = trials;
    report.base_value = evaluate_statistic(statistic, v, u);
    for (int i = 0; i < trials; ++i) {
        report.orthogonal_max_deviation = std::max(report.orthogonal_max_deviation, orth_dev[i]);
        report.invertible_max_deviation = std::max(report.invertible_max_deviation, inv_dev[i]);
        report.invertible_resamples += resamples[i];
    }
    return report;
}

ShearWitness shear_witness() {
    Matrix u(3, 1);
    u << 1.0 / std::numbers::sqrt2, 1.0 / std::numbers::sqrt2, 0.0;
    Matrix g = Matrix::Identity(3, 3);
    g(0, 1) = 1.0;
    return {Subspace::coordinate(3, {0}), Subspace(u), g};
}

}  // namespace flagdiag
