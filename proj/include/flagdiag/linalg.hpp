// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace flagdiag {

// Column-major for the math; tensor-io converts to and from row-major blobs.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

// Independent generator for sub-task `stream` of a seeded job, so results do
// not depend on the order in which sub-tasks run.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Thin QR of a Gaussian d x k matrix with the diagonal of R made positive.
// The columns are a Haar-distributed orthonormal k-frame in R^d.
Matrix haar_frame(Eigen::Index d, Eigen::Index k, Rng& rng);

// Haar-distributed orthogonal d x d matrix.
Matrix haar_orthogonal(Eigen::Index d, Rng& rng);

// P = Q Q^T for orthonormal Q.
Matrix projector(const Matrix& basis);

// 2-norm condition number via SVD; infinity for singular input.
double condition_number(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace flagdiag
