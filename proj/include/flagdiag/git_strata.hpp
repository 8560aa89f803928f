// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "flagdiag/grassmann.hpp"

namespace flagdiag {

/// Relative position of a pair (V, U) with rank(V) <= rank(U): k = dim(V ∩ U).
struct StratumLabel {
    int k = 0;
    Eigen::Index r1 = 0;
    Eigen::Index r2 = 0;
    Eigen::Index d = 0;

    bool is_flag() const { return k == r1; }
};

StratumLabel stratum_index(const Subspace& v, const Subspace& u, double tolerance = kIncidenceTolerance);

// Change of basis g whose columns f_1..f_d put the pair in normal form:
//   U = span(f_1, ..., f_r2)
//   V = span(f_1, ..., f_k, f_{r2+1} + f_{k+1}, ..., f_{r2+s} + f_{k+s}),  s = r1 - k.
// f_1..f_r2 are the principal vectors of U, f_{r2+j} = v_{k+j} - u_{k+j} for the
// non-intersecting principal pairs, and the rest is an orthonormal complement.
struct AdaptedFrame {
    Matrix g;
    int k = 0;
    Eigen::Index s = 0;
    Eigen::Index r1 = 0;
    Eigen::Index r2 = 0;

    Eigen::Index d() const { return g.rows(); }
};

/// Throws DegenerateInput when a principal cosine falls inside the ambiguity band
/// [1 - 100 tolerance, 1 - tolerance), where the frame would be ill-conditioned.
AdaptedFrame adapted_frame(const Subspace& v, const Subspace& u, double tolerance = kIncidenceTolerance);

/// g diag(1, ..., t on coordinates r2+1..r2+s, ..., 1) g^{-1}.
Matrix one_parameter_map(const AdaptedFrame& frame, double t);

/// lambda(t) V in original coordinates. U is fixed by lambda(t); as t -> 0 the
/// result approaches a subspace of U.
Subspace degeneration_path(const Subspace& v, const Subspace& u, double t,
                           double tolerance = kIncidenceTolerance);

// Invariance probing under random group actions applied jointly to (V, U).

enum class Statistic { IntersectionDim, AngleSum, ProjectorDistanceSq, FrobeniusOverlap };

/// Accepts intersection_dim, angle_sum, projector_distance_sq, frobenius_overlap.
Statistic parse_statistic(std::string_view name);
std::string_view statistic_name(Statistic statistic);

/// frobenius_overlap is ||Q_V^T Q_U||_F^2 / min(r1, r2).
double evaluate_statistic(Statistic statistic, const Subspace& v, const Subspace& u);

/// span(g Q) for invertible g.
Subspace apply_map(const Matrix& g, const Subspace& s);

/// |stat(gV, gU) - stat(V, U)|.
double statistic_deviation(Statistic statistic, const Subspace& v, const Subspace& u, const Matrix& g);

inline constexpr double kProbeConditionBound = 1e6;

struct ProbeReport {
    Statistic statistic = Statistic::IntersectionDim;
    int trials = 0;
    double base_value = 0.0;
    double orthogonal_max_deviation = 0.0;
    double invertible_max_deviation = 0.0;
    int invertible_resamples = 0;  // draws rejected by the condition bound
};

/// `trials` Haar orthogonal maps and `trials` Gaussian invertible maps with
/// condition number <= 1e6. Trial i draws from its own seeded stream.
ProbeReport invariance_probe(Statistic statistic, const Subspace& v, const Subspace& u, int trials,
                             std::uint64_t seed, int jobs = 1);

/// A pair and a shear in R^3 that moves the angle sum: V = span(e1),
/// U = span(e1 + e2), g = I + e1 e2^T maps e1 + e2 to 2 e1 + e2, so the angle
/// drops from pi/4 to atan(1/2).
struct ShearWitness {
    Subspace v;
    Subspace u;
    Matrix g;
};
ShearWitness shear_witness();

}  // namespace flagdiag
