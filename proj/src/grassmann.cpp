// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/grassmann.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flagdiag/error.hpp"

namespace flagdiag {

namespace {

void require_same_ambient(const Subspace& v, const Subspace& u) {
    if (v.ambient_dim() != u.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    "ambient dimensions " + std::to_string(v.ambient_dim()) + " and " +
                        std::to_string(u.ambient_dim()));
}

Vector singular_values(const Matrix& m) {
    if (m.size() == 0) return Vector();
    return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

// Orders the pair so the first has the smaller rank.
std::pair<const Subspace*, const Subspace*> small_first(const Subspace& v, const Subspace& u) {
    return v.rank() <= u.rank() ? std::pair{&v, &u} : std::pair{&u, &v};
}

void validate_ranks(const std::vector<std::int64_t>& ranks, std::int64_t d) {
    if (ranks.empty()) throw Error(ErrorCode::InvalidRanks, "empty rank profile");
    std::int64_t prev = 0;
    for (auto r : ranks) {
        if (r <= 0 || r < prev || r > d)
            throw Error(ErrorCode::InvalidRanks, "ranks must satisfy 0 < r_1 <= ... <= r_L <= d");
        prev = r;
    }
}

}  // namespace

Subspace::Subspace(Matrix basis) : basis_(std::move(basis)) {
    const Eigen::Index r = basis_.cols();
    if (r == 0) return;
    double err = (basis_.transpose() * basis_ - Matrix::Identity(r, r)).norm();
    if (!(err < kOrthonormalityTolerance))
        throw Error(ErrorCode::NotOrthonormal, "||Q^T Q - I||_F = " + std::to_string(err));
}

Subspace Subspace::zero(Eigen::Index ambient_dim) { return Subspace(Matrix(ambient_dim, 0)); }

Subspace Subspace::coordinate(Eigen::Index ambient_dim, const std::vector<Eigen::Index>& indices) {
    Matrix q = Matrix::Zero(ambient_dim, static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) q(indices[j], static_cast<Eigen::Index>(j)) = 1.0;
    return Subspace(std::move(q));
}

Subspace orthonormalize(const Matrix& m, bool allow_rank_reduction, double rank_tolerance) {
    const Eigen::Index d = m.rows();
    const Eigen::Index k = m.cols();
    if (d < 1 || k < 1) throw Error(ErrorCode::InvalidParams, "orthonormalize needs a non-empty matrix");

    Eigen::HouseholderQR<Matrix> qr(m);
    const Eigen::Index p = std::min(d, k);
    Matrix r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    Matrix q = qr.householderQ() * Matrix::Identity(d, p);

    // R shares its singular values with M.
    Eigen::JacobiSVD<Matrix> svd(r, Eigen::ComputeFullU);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) throw Error(ErrorCode::ZeroMatrix, "matrix is zero");
    Eigen::Index rank = 0;
    while (rank < s.size() && s(rank) > rank_tolerance * s(0)) ++rank;

    if (rank == k) {
        for (Eigen::Index j = 0; j < k; ++j)
            if (r(j, j) < 0.0) q.col(j) = -q.col(j);
        return Subspace(std::move(q));
    }
    if (!allow_rank_reduction)
        throw Error(ErrorCode::RankDeficient,
                    "numerical rank " + std::to_string(rank) + " < " + std::to_string(k) + " columns");
    Matrix basis = q * svd.matrixU().leftCols(rank);
    return Subspace(std::move(basis));
}

double PrincipalAngleSet::sum() const {
    double total = 0.0;
    for (double a : angles) total += a;
    return total;
}

std::vector<double> principal_cosines(const Subspace& v, const Subspace& u) {
    require_same_ambient(v, u);
    Vector s = singular_values(v.basis().transpose() * u.basis());
    std::vector<double> cosines(static_cast<std::size_t>(s.size()));
    for (Eigen::Index j = 0; j < s.size(); ++j) cosines[j] = std::clamp(s(j), 0.0, 1.0);
    return cosines;
}

PrincipalAngleSet principal_angles(const Subspace& v, const Subspace& u) {
    auto cosines = principal_cosines(v, u);
    auto [small, large] = small_first(v, u);
    PrincipalAngleSet out;
    if (cosines.empty()) return out;

    // Residual of the smaller basis after projecting onto the larger subspace;
    // its singular values are the sines, descending.
    Matrix cross = large->basis().transpose() * small->basis();
    Matrix residual = small->basis() - large->basis() * cross;
    Vector sines = singular_values(residual);

    const std::size_t m = cosines.size();
    out.angles.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        // j-th largest cosine pairs with the j-th smallest sine.
        const double c = cosines[j];
        const double s = std::clamp(sines(static_cast<Eigen::Index>(m - 1 - j)), 0.0, 1.0);
        out.angles[j] = c * c >= 0.5 ? std::asin(s) : std::acos(c);
    }
    std::sort(out.angles.begin(), out.angles.end());
    return out;
}

int intersection_dim(const Subspace& v, const Subspace& u, double tolerance) {
    int k = 0;
    for (double c : principal_cosines(v, u))
        if (c >= 1.0 - tolerance) ++k;
    return k;
}

double projector_distance_sq(const Subspace& v, const Subspace& u) {
    double sum_cos_sq = 0.0;
    for (double c : principal_cosines(v, u)) sum_cos_sq += c * c;
    return static_cast<double>(v.rank() + u.rank()) - 2.0 * sum_cos_sq;
}

double drift(const std::vector<Subspace>& chain) {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) total += projector_distance_sq(chain[i + 1], chain[i]);
    return total;
}

FlagTest is_flag(const Subspace& v, const Subspace& u, double tolerance) {
    require_same_ambient(v, u);
    if (v.rank() > u.rank())
        throw Error(ErrorCode::DimensionMismatch, "flag test needs rank(V) <= rank(U)");
    if (v.rank() == 0) return {true, 0.0};
    // ||(I - P_U) Q_V||_F^2 = sum_j sin^2(theta_j)
    Matrix residual = v.basis() - u.basis() * (u.basis().transpose() * v.basis());
    const double defect = residual.squaredNorm();
    return {defect < tolerance, defect};
}

FlagChain::FlagChain(std::vector<Subspace> members, double tolerance)
    : members_(std::move(members)), tolerance_(tolerance) {
    for (std::size_t i = 1; i < members_.size(); ++i) {
        require_same_ambient(members_[i - 1], members_[i]);
        if (members_[i].rank() < members_[i - 1].rank())
            throw Error(ErrorCode::InvalidRanks, "flag chain ranks must be non-decreasing");
    }
}

std::vector<Eigen::Index> FlagChain::ranks() const {
    std::vector<Eigen::Index> out;
    for (const auto& s : members_) out.push_back(s.rank());
    return out;
}

bool FlagChain::is_nested() const {
    for (std::size_t i = 0; i + 1 < members_.size(); ++i)
        if (!is_flag(members_[i], members_[i + 1], tolerance_).is_flag) return false;
    return true;
}

std::int64_t flag_dimension(const std::vector<std::int64_t>& ranks, std::int64_t d) {
    validate_ranks(ranks, d);
    std::int64_t total = 0, prev = 0;
    for (auto r : ranks) {
        total += (r - prev) * (d - r);
        prev = r;
    }
    return total;
}

std::int64_t independent_dimension(const std::vector<std::int64_t>& ranks, std::int64_t d) {
    validate_ranks(ranks, d);
    std::int64_t total = 0;
    for (auto r : ranks) total += r * (d - r);
    return total;
}

ParameterCounts parameter_counts(const std::vector<std::int64_t>& ranks, std::int64_t d) {
    validate_ranks(ranks, d);
    const std::int64_t top = ranks.back();
    ParameterCounts out;
    out.flag_params = d * top;
    for (auto r : ranks) {
        out.flag_params += r * (top - r);
        out.independent_params += d * r;
    }
    return out;
}

}  // namespace flagdiag
