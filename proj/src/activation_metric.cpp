// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/activation_metric.hpp"

#include <cmath>
#include <limits>

#include "flagdiag/error.hpp"

namespace flagdiag {

namespace {

void require_dims(const ActivationMetric& metric, const Subspace& v) {
    if (metric.dim() != v.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    "metric has dimension " + std::to_string(metric.dim()) + " but subspace lives in R^" +
                        std::to_string(v.ambient_dim()));
}

// Column sums of rows [begin, end), reduced as a balanced binary tree.
Vector pairwise_column_sum(const Matrix& m, Eigen::Index begin, Eigen::Index end) {
    const Eigen::Index n = end - begin;
    if (n <= 8) {
        Vector s = Vector::Zero(m.cols());
        for (Eigen::Index i = begin; i < end; ++i) s += m.row(i).transpose();
        return s;
    }
    const Eigen::Index mid = begin + n / 2;
    return pairwise_column_sum(m, begin, mid) + pairwise_column_sum(m, mid, end);
}

// Off-diagonal block P^perp X Q for X symmetric, as X Q - Q (Q^T X Q).
Matrix off_diagonal_block(const Matrix& x, const Matrix& q) {
    Matrix xq = x * q;
    return xq - q * (q.transpose() * xq);
}

constexpr double kSingularClusterTolerance = 1e-8;

}  // namespace

ActivationMetric ActivationMetric::dense(Matrix m) {
    if (m.rows() != m.cols() || m.rows() == 0)
        throw Error(ErrorCode::InvalidParams, "dense activation metric must be square and non-empty");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw Error(ErrorCode::InvalidParams, "activation metric is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10)
        throw Error(ErrorCode::InvalidParams, "activation metric is not positive semidefinite");
    ActivationMetric out;
    out.diagonal_ = false;
    out.conformal_ = m.trace() / static_cast<double>(m.rows());
    out.matrix_ = std::move(m);
    return out;
}

ActivationMetric ActivationMetric::diagonal(Vector entries) {
    if (entries.size() == 0) throw Error(ErrorCode::InvalidParams, "empty activation metric");
    if (entries.minCoeff() < 0.0) throw Error(ErrorCode::InvalidParams, "negative diagonal entry");
    ActivationMetric out;
    out.diagonal_ = true;
    out.conformal_ = entries.mean();
    out.entries_ = std::move(entries);
    return out;
}

double ActivationMetric::anisotropy_norm() const {
    if (diagonal_) return (entries_.array() - conformal_).matrix().norm();
    Matrix a = matrix_;
    a.diagonal().array() -= conformal_;
    return a.norm();
}

Matrix ActivationMetric::to_dense() const {
    if (diagonal_) return entries_.asDiagonal();
    return matrix_;
}

ActivationMetric ActivationMetric::scaled(double alpha) const {
    ActivationMetric out = *this;
    if (diagonal_)
        out.entries_ *= alpha;
    else
        out.matrix_ *= alpha;
    out.conformal_ *= alpha;
    return out;
}

ActivationMetric estimate_D2_diag(const Matrix& gate_samples) {
    if (gate_samples.rows() == 0) throw Error(ErrorCode::EmptyBatch, "no gate samples");
    Matrix squared = gate_samples.cwiseProduct(gate_samples);
    Vector mean = pairwise_column_sum(squared, 0, squared.rows()) / static_cast<double>(squared.rows());
    return ActivationMetric::diagonal(std::move(mean));
}

double commutator_norm(const ActivationMetric& metric, const Subspace& v) {
    require_dims(metric, v);
    if (v.rank() == 0) return 0.0;
    const Matrix& q = v.basis();
    if (metric.is_diagonal()) {
        const Vector& m = metric.diagonal_entries();
        const Eigen::Index d = m.size();
        double total = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i + 1; j < d; ++j) {
                const double diff = m(i) - m(j);
                if (diff == 0.0) continue;
                const double p = q.row(i).dot(q.row(j));
                total += diff * diff * p * p;
            }
        }
        return std::sqrt(2.0 * total);  // (i, j) and (j, i) contribute equally
    }
    const Matrix& m = metric.dense_matrix();
    Matrix p = projector(q);
    return (m * p - p * m).norm();
}

double relative_commutator(const ActivationMetric& metric, const Subspace& v) {
    const double comm = commutator_norm(metric, v);
    return comm / (metric.anisotropy_norm() * std::sqrt(static_cast<double>(v.rank())) +
                   kRelativeCommutatorEpsilon);
}

GcGate gc_gate(const ActivationMetric& metric) {
    const double c = metric.conformal();
    if (!(c > 0.0)) throw Error(ErrorCode::ZeroConformal, "conformal scalar is zero");
    GcGate gate;
    gate.rel_gap = metric.anisotropy_norm() / (c * std::sqrt(static_cast<double>(metric.dim())));
    gate.acceptable = gate.rel_gap < kGeometricConsistencyThreshold;
    return gate;
}

CommutatorReport commutator_report(const ActivationMetric& metric, const Subspace& v) {
    CommutatorReport r;
    r.comm_norm = commutator_norm(metric, v);
    r.conformal = metric.conformal();
    r.aniso_norm = metric.anisotropy_norm();
    r.c_rel = r.comm_norm / (r.aniso_norm * std::sqrt(static_cast<double>(v.rank())) +
                             kRelativeCommutatorEpsilon);
    if (r.conformal > 0.0) {
        GcGate gate = gc_gate(metric);
        r.rel_gap = gate.rel_gap;
        r.gc_acceptable = gate.acceptable;
    }
    return r;
}

std::string_view level3_status_name(Level3Status status) {
    return status == Level3Status::WellDefined ? "well_defined" : "ill_defined";
}

double min_relative_gap(const std::vector<double>& spectrum, std::size_t count) {
    count = std::min(count, spectrum.size());
    if (count < 2) return std::numeric_limits<double>::infinity();
    if (!(spectrum[0] > 0.0)) return 0.0;
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < count; ++i) gap = std::min(gap, (spectrum[i] - spectrum[i + 1]) / spectrum[0]);
    return gap;
}

Level3Report level3_score(const Subspace& features, const Subspace& classifier,
                          const std::vector<double>& spectrum) {
    if (features.ambient_dim() != classifier.ambient_dim() || features.rank() != classifier.rank())
        throw Error(ErrorCode::DimensionMismatch, "level-3 score needs equal ambient dimension and rank");
    const Eigen::Index r = features.rank();
    Level3Report report;
    report.min_relative_gap = min_relative_gap(spectrum, static_cast<std::size_t>(r));
    if (r == 0 || report.min_relative_gap < kSpectralGapGuard) {
        report.status = Level3Status::IllDefined;
        return report;
    }
    report.status = Level3Status::WellDefined;

    Eigen::JacobiSVD<Matrix> svd(features.basis().transpose() * classifier.basis(),
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sigma = svd.singularValues();
    Matrix p = svd.matrixU();
    Matrix q = svd.matrixV();
    // Repeated singular values leave (P, Q) free up to a shared rotation R of the
    // cluster's columns. Take the R that maximizes the cluster's diagonal of P R,
    // the polar factor of the diagonal block, so equal inputs give P = Q = I.
    for (Eigen::Index begin = 0; begin < r;) {
        Eigen::Index end = begin + 1;
        while (end < r && sigma(end - 1) - sigma(end) <= kSingularClusterTolerance) ++end;
        const Eigen::Index len = end - begin;
        if (len > 1) {
            Eigen::JacobiSVD<Matrix> polar(p.block(begin, begin, len, len), Eigen::ComputeFullU | Eigen::ComputeFullV);
            const Matrix rot = polar.matrixV() * polar.matrixU().transpose();
            p.middleCols(begin, len) = p.middleCols(begin, len) * rot;
            q.middleCols(begin, len) = q.middleCols(begin, len) * rot;
        }
        begin = end;
    }
    Matrix rotated = classifier.basis() * q;
    double a3 = 0.0;
    for (Eigen::Index i = 0; i < r; ++i) a3 += std::abs(features.basis().col(i).dot(rotated.col(i)));
    report.a3 = a3 / static_cast<double>(r);
    report.a3_procrustes = sigma.mean();
    return report;
}

ResidualTerms residual_terms(const Subspace& u, const Subspace& v, const ActivationMetric& metric) {
    if (u.ambient_dim() != v.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch, "U and V live in different ambient spaces");
    require_dims(metric, v);

    ResidualTerms out;
    out.dissipative = 4.0 * projector_distance_sq(u, v);
    const double comm = commutator_norm(metric, v);
    out.k_nc = comm * comm;

    Matrix delta = metric.to_dense();
    delta.diagonal().array() -= metric.conformal();
    const Eigen::Index d = v.ambient_dim();
    if (d <= kExplicitComplementLimit) {
        Matrix p = v.projector();
        Matrix perp = Matrix::Identity(d, d) - p;
        out.lie_norm = (perp * delta * p + p * delta * perp).norm();
    } else {
        // The two terms are transposes living in orthogonal blocks.
        out.lie_norm = std::sqrt(2.0) * off_diagonal_block(delta, v.basis()).norm();
    }
    out.lie_identity_residual = std::abs(out.lie_norm - comm);
    return out;
}

}  // namespace flagdiag
