// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/linalg.hpp"

#include <limits>

#include "flagdiag/error.hpp"

namespace flagdiag {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingBlob: return "MissingBlob";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::ManifestInvalid: return "ManifestInvalid";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::ZeroMatrix: return "ZeroMatrix";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::InvalidRanks: return "InvalidRanks";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::UnknownStatistic: return "UnknownStatistic";
        case ErrorCode::NonPositiveLambda: return "NonPositiveLambda";
        case ErrorCode::StepTooLarge: return "StepTooLarge";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::ZeroConformal: return "ZeroConformal";
        case ErrorCode::UnknownLayout: return "UnknownLayout";
        case ErrorCode::ShapeInconsistent: return "ShapeInconsistent";
        case ErrorCode::RankDeficientHead: return "RankDeficientHead";
        case ErrorCode::InvalidDims: return "InvalidDims";
        case ErrorCode::InvalidParams: return "InvalidParams";
        case ErrorCode::Diverged: return "Diverged";
        case ErrorCode::UnknownTensor: return "UnknownTensor";
        case ErrorCode::NotOrthonormal: return "NotOrthonormal";
    }
    return "Unknown";
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x666c6167u};
    return Rng(seq);
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    // Fill row by row so the draw order matches the row-major convention used on disk.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

Matrix haar_frame(Eigen::Index d, Eigen::Index k, Rng& rng) {
    Matrix g = gaussian_matrix(d, k, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(d, k);
    const Matrix& r = qr.matrixQR();
    for (Eigen::Index j = 0; j < k; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

Matrix haar_orthogonal(Eigen::Index d, Rng& rng) { return haar_frame(d, d, rng); }

Matrix projector(const Matrix& basis) { return basis * basis.transpose(); }

double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    if (s.size() == 0) return std::numeric_limits<double>::infinity();
    double smin = s(s.size() - 1);
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return s(0) / smin;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace flagdiag
