// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "flagdiag/grassmann.hpp"

namespace flagdiag {

/// Expected squared activation Jacobian D^2, held densely or as its diagonal.
/// c = tr(D^2)/d is the conformal part and A = D^2 - cI the anisotropy.
class ActivationMetric {
public:
    /// Symmetric to 1e-10 and PSD to -1e-10, else InvalidParams.
    static ActivationMetric dense(Matrix m);
    /// Entries must be >= 0.
    static ActivationMetric diagonal(Vector entries);

    bool is_diagonal() const { return diagonal_; }
    Eigen::Index dim() const { return diagonal_ ? entries_.size() : matrix_.rows(); }
    double conformal() const { return conformal_; }
    /// ||D^2 - cI||_F
    double anisotropy_norm() const;

    /// Materialized d x d matrix (for the diagonal form too).
    Matrix to_dense() const;
    const Vector& diagonal_entries() const { return entries_; }
    const Matrix& dense_matrix() const { return matrix_; }

    ActivationMetric scaled(double alpha) const;

private:
    ActivationMetric() = default;

    bool diagonal_ = false;
    Vector entries_;
    Matrix matrix_;
    double conformal_ = 0.0;
};

/// Diagonal D^2 from an n x d matrix of activation-derivative samples:
/// D^2_i = mean over rows of gate^2. Rows are reduced by pairwise summation, so
/// the result does not depend on how rows are sharded.
ActivationMetric estimate_D2_diag(const Matrix& gate_samples);

/// ||[D^2, P_V]||_F. The diagonal form uses sum_ij (m_i - m_j)^2 (P_V)_ij^2 with
/// P_V entries formed on the fly; the dense form subtracts M P_V - P_V M.
double commutator_norm(const ActivationMetric& metric, const Subspace& v);

inline constexpr double kRelativeCommutatorEpsilon = 1e-8;
inline constexpr double kGeometricConsistencyThreshold = 0.5;

/// comm / (||A||_F sqrt(r) + 1e-8)
double relative_commutator(const ActivationMetric& metric, const Subspace& v);

struct GcGate {
    double rel_gap = 0.0;
    bool acceptable = false;
};

/// rel_gap = ||D^2 - cI||_F / (c sqrt(d)), acceptable iff rel_gap < 0.5.
/// Throws ZeroConformal when c = 0.
GcGate gc_gate(const ActivationMetric& metric);

struct CommutatorReport {
    double comm_norm = 0.0;
    double conformal = 0.0;
    double aniso_norm = 0.0;
    std::optional<double> rel_gap;  // empty when c = 0
    double c_rel = 0.0;
    bool gc_acceptable = false;
};

CommutatorReport commutator_report(const ActivationMetric& metric, const Subspace& v);

enum class Level3Status { WellDefined, IllDefined };
std::string_view level3_status_name(Level3Status status);

inline constexpr double kSpectralGapGuard = 0.1;

struct Level3Report {
    Level3Status status = Level3Status::IllDefined;
    double min_relative_gap = 0.0;
    /// Basis-matching score with only U_class rotated by Q.
    std::optional<double> a3;
    /// Both bases rotated (U_feat P vs U_class Q): the mean singular value.
    std::optional<double> a3_procrustes;
};

/// min_i (s_i - s_{i+1}) / s_1 over the leading `count` entries of a descending
/// spectrum; +inf when fewer than two entries are retained.
double min_relative_gap(const std::vector<double>& spectrum, std::size_t count);

/// A3 from the SVD U_feat^T U_class = P S Q^T. Within a cluster of equal singular
/// values the free rotation is fixed by maximizing the diagonal of P. Ill-defined,
/// with both scores omitted, when the feature spectrum's relative gap is below 0.1.
Level3Report level3_score(const Subspace& features, const Subspace& classifier,
                          const std::vector<double>& spectrum);

struct ResidualTerms {
    double dissipative = 0.0;  // ||2 (P_U - P_V)||_F^2
    double k_nc = 0.0;         // ||[D^2, P_V]||_F^2
    double lie_norm = 0.0;     // ||P_V^perp Δ P_V + P_V Δ P_V^perp||_F, Δ = D^2 - cI
    /// |lie_norm - comm_norm|; the two agree in exact arithmetic.
    double lie_identity_residual = 0.0;
};

inline constexpr Eigen::Index kExplicitComplementLimit = 4096;

ResidualTerms residual_terms(const Subspace& u, const Subspace& v, const ActivationMetric& metric);

}  // namespace flagdiag
