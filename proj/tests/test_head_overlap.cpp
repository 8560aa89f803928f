// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "flagdiag/head_overlap.hpp"
#include "test_support.hpp"

using namespace flagdiag;
using flagdiag::testing::error_of;

namespace {

Tensor query_tensor(const std::string& name, const Matrix& m, std::string_view layout, int h) {
    Tensor t = Tensor::from_matrix(name, m, DType::F64, std::string(layout));
    t.attrs["h"] = std::to_string(h);
    return t;
}

std::vector<Matrix> random_heads(Eigen::Index d, Eigen::Index d_k, int h, Rng& rng) {
    std::vector<Matrix> out;
    for (int i = 0; i < h; ++i) out.push_back(gaussian_matrix(d, d_k, rng));
    return out;
}

}  // namespace

TEST_CASE("combined QKV layout takes the first d columns") {
    Rng rng = make_rng(1);
    Matrix qkv = gaussian_matrix(4, 12, rng);
    Tensor t = query_tensor("layer.0.wq", qkv, kLayoutCombinedQkv, 2);
    t.attrs["d_k"] = "2";
    t.attrs["d"] = "4";
    CHECK(query_matrix(t) == qkv.leftCols(4));
    HeadSet hs = head_bases(t, 0);
    CHECK(hs.h == 2);
    CHECK(hs.d_k == 2);
    REQUIRE(hs.heads.size() == 2);
    CHECK(projector_distance_sq(hs.heads[0], orthonormalize(qkv.leftCols(2))) < 1e-12);
    CHECK(projector_distance_sq(hs.heads[1], orthonormalize(qkv.middleCols(2, 2))) < 1e-12);

    Tensor wrong = query_tensor("layer.0.wq", gaussian_matrix(4, 8, rng), kLayoutCombinedQkv, 2);
    CHECK(error_of([&] { head_bases(wrong, 0); }) == ErrorCode::ShapeInconsistent);
}

TEST_CASE("out-by-in layout is transposed before slicing") {
    Rng rng = make_rng(2);
    Matrix qproj = gaussian_matrix(6, 8, rng);  // h d_k = 6, d = 8
    Tensor t = query_tensor("layer.3.wq", qproj, kLayoutQprojOutByIn, 3);
    CHECK(query_matrix(t) == qproj.transpose());
    HeadSet hs = head_bases(t, 3);
    CHECK(hs.d == 8);
    CHECK(hs.d_k == 2);
    for (int i = 0; i < 3; ++i)
        CHECK(projector_distance_sq(hs.heads[i], orthonormalize(Matrix(qproj.middleRows(2 * i, 2).transpose()))) <
              1e-12);
}

TEST_CASE("head basis errors") {
    Rng rng = make_rng(3);
    Matrix m = gaussian_matrix(8, 8, rng);
    Tensor bad_dk = query_tensor("layer.0.wq", m, kLayoutQprojOutByIn, 2);
    bad_dk.attrs["d_k"] = "3";
    CHECK(error_of([&] { head_bases(bad_dk, 0); }) == ErrorCode::ShapeInconsistent);

    Tensor uneven = query_tensor("layer.0.wq", m, kLayoutQprojOutByIn, 3);
    CHECK(error_of([&] { head_bases(uneven, 0); }) == ErrorCode::ShapeInconsistent);

    Tensor no_h = Tensor::from_matrix("layer.0.wq", m, DType::F64, std::string(kLayoutQprojOutByIn));
    CHECK(error_of([&] { head_bases(no_h, 0); }) == ErrorCode::ShapeInconsistent);

    Tensor generic = query_tensor("layer.0.wq", m, kLayoutRowMajor, 2);
    CHECK(error_of([&] { head_bases(generic, 0); }) == ErrorCode::UnknownLayout);

    Matrix deficient = m;
    deficient.row(1) = deficient.row(0);  // head 0 of the transposed matrix has rank 3 of 4
    Tensor t = query_tensor("layer.0.wq", deficient, kLayoutQprojOutByIn, 2);
    CHECK(error_of([&] { head_bases(t, 0); }) == ErrorCode::RankDeficientHead);
    HeadSet reduced = head_bases(t, 0, HeadBasisOptions{true});
    CHECK(reduced.heads[0].rank() == 3);
    CHECK(reduced.d_k == 4);
    const double r = overlap_R(reduced);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
}

TEST_CASE("overlap extremes") {
    Rng rng = make_rng(4);
    Matrix one = gaussian_matrix(10, 3, rng);
    HeadSet same = head_set_from_matrices({one, one, 2.0 * one, -one});
    CHECK(overlap_R(same) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(overlap_R(head_set_from_matrices({one, one})) == doctest::Approx(1.0).epsilon(1e-14));

    Matrix q = haar_orthogonal(12, rng);
    HeadSet orth = head_set_from_matrices({q.leftCols(3), q.middleCols(3, 3), q.middleCols(6, 3), q.rightCols(3)});
    CHECK(overlap_R(orth) < 1e-14);
    CHECK(overlap_R_projector(orth) < 1e-14);
}

TEST_CASE("frame and projector forms agree") {
    Rng rng = make_rng(5);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index d = 6 + t % 10;
        const Eigen::Index dk = 1 + t % 4;
        const int h = 2 + t % 5;
        HeadSet hs = head_set_from_matrices(random_heads(d, dk, h, rng));
        const double a = overlap_R(hs);
        CHECK(std::abs(a - overlap_R_projector(hs)) < 1e-10);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);

        // pairwise matrix averages back to R
        Matrix pw = pairwise_overlaps(hs);
        double s = 0.0;
        for (int i = 0; i < h; ++i)
            for (int j = i + 1; j < h; ++j) s += pw(i, j);
        CHECK(std::abs(2.0 * s / (h * (h - 1)) - a) < 1e-12);
    }
}

TEST_CASE("overlap is invariant to a shared rotation and to head order") {
    Rng rng = make_rng(6);
    for (int t = 0; t < 30; ++t) {
        auto heads = random_heads(9, 2, 4, rng);
        const double base = overlap_R(head_set_from_matrices(heads));
        Matrix g = haar_orthogonal(9, rng);
        std::vector<Matrix> rotated;
        for (const auto& m : heads) rotated.push_back(g * m);
        CHECK(std::abs(overlap_R(head_set_from_matrices(rotated)) - base) < 1e-12);
        std::reverse(heads.begin(), heads.end());
        std::swap(heads[0], heads[2]);
        CHECK(std::abs(overlap_R(head_set_from_matrices(heads)) - base) < 1e-12);
    }
}

TEST_CASE("Haar baseline") {
    HaarBaseline full = haar_baseline(5, 5, 3, 4, 1);
    CHECK(full.mean == doctest::Approx(1.0).epsilon(1e-12));

    HaarBaseline b = haar_baseline(64, 8, 6, 400, 2, 4);
    CHECK(b.analytic == 0.125);
    CHECK(std::abs(b.mean - b.analytic) < 4 * b.std / std::sqrt(400.0));

    // halves of the trials against the whole
    double first = 0.0, second = 0.0;
    for (int i = 0; i < 200; ++i) first += b.per_trial[i];
    for (int i = 200; i < 400; ++i) second += b.per_trial[i];
    first /= 200;
    second /= 200;
    const double se_half = b.std / std::sqrt(200.0), se_all = b.std / std::sqrt(400.0);
    CHECK(std::abs(first - b.mean) < 3 * std::hypot(se_half, se_all));
    CHECK(std::abs(second - b.mean) < 3 * std::hypot(se_half, se_all));

    HaarBaseline again = haar_baseline(64, 8, 6, 400, 2, 1);
    CHECK(again.per_trial == b.per_trial);

    CHECK(error_of([] { haar_baseline(4, 5, 2, 10, 0); }) == ErrorCode::InvalidDims);
    CHECK(error_of([] { haar_baseline(8, 2, 2, 1, 0); }) == ErrorCode::InvalidParams);
}

TEST_CASE("Haar baseline at Llama shape") {
    HaarBaseline b = haar_baseline(2048, 64, 32, 4, 3, 4);
    CHECK(b.analytic == doctest::Approx(0.03125));
    CHECK(std::abs(b.mean - 0.0313) < 1e-3);
}

TEST_CASE("model report") {
    Rng rng = make_rng(7);
    const Eigen::Index d = 32, dk = 4;
    const int h = 4;

    SUBCASE("random heads are not significant") {
        TensorContainer c;
        for (int l = 0; l < 6; ++l) {
            Tensor t = query_tensor("layer." + std::to_string(l) + ".wq", gaussian_matrix(d, 3 * d, rng),
                                    kLayoutCombinedQkv, h);
            t.attrs["d_k"] = std::to_string(d / h);
            c.add(t);
        }
        OverlapReport r = model_overlap_report(c, 200, 11, 4);
        REQUIRE(r.layers.size() == 6);
        CHECK(r.significant_layers <= 1);
        CHECK(std::abs(r.mean_R - 0.25) < 0.05);
        for (const auto& row : r.layers) {
            CHECK(row.analytic == 0.25);
            CHECK(row.excess == doctest::Approx(row.R - row.baseline_mean));
        }
    }
    SUBCASE("equal heads per layer are significant with R = 1") {
        TensorContainer c;
        for (int l = 2; l >= 0; --l) {
            Matrix block = gaussian_matrix(dk, d, rng);
            Matrix qproj(h * dk, d);
            for (int i = 0; i < h; ++i) qproj.middleRows(i * dk, dk) = block;
            c.add(query_tensor("layer." + std::to_string(l) + ".wq", qproj, kLayoutQprojOutByIn, h));
        }
        c.add(Tensor::from_matrix("layer.0.wk", Matrix::Zero(2, 2)));
        OverlapReport r = model_overlap_report(c, 50, 1);
        REQUIRE(r.layers.size() == 3);
        CHECK(r.significant_layers == 3);
        for (int l = 0; l < 3; ++l) {
            CHECK(r.layers[l].layer == l);
            CHECK(r.layers[l].R == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("no query tensors") {
        TensorContainer c;
        c.add(Tensor::from_matrix("other", Matrix::Zero(2, 2)));
        CHECK(error_of([&] { model_overlap_report(c, 10, 0); }) == ErrorCode::UnknownTensor);
    }
}

TEST_CASE("sharing identity") {
    Rng rng = make_rng(8);
    Matrix w = gaussian_matrix(6, 3, rng);
    SharingIdentity same = sharing_identity(w, w);
    CHECK(same.disagreement == 0.0);
    CHECK(same.equality);
    CHECK(same.penalty == doctest::Approx(same.half_sum_sq));

    SharingIdentity opposite = sharing_identity(w, -w);
    CHECK(opposite.half_sum_sq == 0.0);
    CHECK(opposite.penalty == doctest::Approx(2 * w.squaredNorm()));
    CHECK_FALSE(opposite.equality);

    for (int t = 0; t < 1000; ++t) {
        SharingIdentity s = sharing_identity(gaussian_matrix(5, 4, rng), gaussian_matrix(5, 4, rng));
        CHECK(s.identity_residual < 1e-12);
        CHECK(s.penalty >= s.half_sum_sq);
        CHECK_FALSE(s.equality);
    }
    CHECK(error_of([&] { sharing_identity(w, w.transpose()); }) == ErrorCode::ShapeMismatch);
}
