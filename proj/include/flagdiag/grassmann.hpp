// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "flagdiag/linalg.hpp"

namespace flagdiag {

inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kIncidenceTolerance = 1e-8;
inline constexpr double kOrthonormalityTolerance = 1e-8;

/// A linear subspace of R^d held by an orthonormal d x r basis. r = 0 is allowed.
class Subspace {
public:
    /// Throws NotOrthonormal if ||Q^T Q - I||_F >= 1e-8.
    explicit Subspace(Matrix basis);

    static Subspace zero(Eigen::Index ambient_dim);
    /// span(e_i for i in indices), indices zero-based.
    static Subspace coordinate(Eigen::Index ambient_dim, const std::vector<Eigen::Index>& indices);

    Eigen::Index ambient_dim() const { return basis_.rows(); }
    Eigen::Index rank() const { return basis_.cols(); }
    const Matrix& basis() const { return basis_; }
    Matrix projector() const { return flagdiag::projector(basis_); }

private:
    Matrix basis_;
};

/// Orthonormal basis for span(M). Numerical rank counts singular values above
/// rank_tolerance * sigma_1; a deficient M throws RankDeficient unless
/// allow_rank_reduction is set. Full-rank input is handled by a sign-fixed thin
/// QR, so orthonormalizing an orthonormal basis returns it unchanged.
Subspace orthonormalize(const Matrix& m, bool allow_rank_reduction = false,
                        double rank_tolerance = kRankTolerance);

/// Angles between two subspaces, ascending in [0, pi/2]; min(r1, r2) of them.
struct PrincipalAngleSet {
    std::vector<double> angles;

    double sum() const;
};

/// Cosines of the principal angles, descending, clamped to [0, 1].
std::vector<double> principal_cosines(const Subspace& v, const Subspace& u);

/// Small angles are taken from the sine of the residual so that near-coincident
/// subspaces resolve below sqrt(machine epsilon).
PrincipalAngleSet principal_angles(const Subspace& v, const Subspace& u);

/// Number of principal angles with cos >= 1 - tolerance.
int intersection_dim(const Subspace& v, const Subspace& u, double tolerance = kIncidenceTolerance);

/// ||P_V - P_U||_F^2 = r1 + r2 - 2 sum cos^2, without forming d x d projectors.
double projector_distance_sq(const Subspace& v, const Subspace& u);

/// Sum of consecutive projector distances along the list.
double drift(const std::vector<Subspace>& chain);

struct FlagTest {
    bool is_flag = false;
    double defect = 0.0;  // sum of sin^2 of the principal angles of v against u
};

/// Containment test v ⊆ u. Requires rank(v) <= rank(u).
FlagTest is_flag(const Subspace& v, const Subspace& u, double tolerance = kIncidenceTolerance);

/// Ordered subspaces of a shared ambient space with non-decreasing ranks.
class FlagChain {
public:
    explicit FlagChain(std::vector<Subspace> members, double tolerance = kIncidenceTolerance);

    const std::vector<Subspace>& members() const { return members_; }
    double tolerance() const { return tolerance_; }
    std::vector<Eigen::Index> ranks() const;

    /// Every consecutive pair passes is_flag at the chain's tolerance.
    bool is_nested() const;
    double drift() const { return flagdiag::drift(members_); }

private:
    std::vector<Subspace> members_;
    double tolerance_;
};

// Dimension counting for rank profiles 0 < r_1 <= ... <= r_L <= d.

/// sum_i (r_i - r_{i-1})(d - r_i), r_0 = 0.
std::int64_t flag_dimension(const std::vector<std::int64_t>& ranks, std::int64_t d);
/// sum_i r_i (d - r_i).
std::int64_t independent_dimension(const std::vector<std::int64_t>& ranks, std::int64_t d);

struct ParameterCounts {
    std::int64_t flag_params = 0;         // d r_L + sum_i r_i (r_L - r_i)
    std::int64_t independent_params = 0;  // sum_i d r_i
};
ParameterCounts parameter_counts(const std::vector<std::int64_t>& ranks, std::int64_t d);

}  // namespace flagdiag
