// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "flagdiag/git_strata.hpp"
#include "test_support.hpp"

using namespace flagdiag;
using flagdiag::testing::error_of;

namespace {

Subspace haar(Eigen::Index d, Eigen::Index r, Rng& rng) { return Subspace(haar_frame(d, r, rng)); }

Subspace span_of(std::initializer_list<std::initializer_list<double>> cols) {
    const Eigen::Index d = static_cast<Eigen::Index>(cols.begin()->size());
    Matrix m(d, static_cast<Eigen::Index>(cols.size()));
    Eigen::Index j = 0;
    for (const auto& c : cols) {
        Eigen::Index i = 0;
        for (double x : c) m(i++, j) = x;
        ++j;
    }
    return orthonormalize(m);
}

// Pair (V, U) with dim(V ∩ U) = k exactly: U random, V = k directions of U plus
// r1 - k generic directions.
std::pair<Subspace, Subspace> pair_with_intersection(Eigen::Index d, Eigen::Index r1, Eigen::Index r2,
                                                     Eigen::Index k, Rng& rng) {
    Subspace u = haar(d, r2, rng);
    Matrix v(d, r1);
    v.leftCols(k) = u.basis() * gaussian_matrix(r2, k, rng);
    v.rightCols(r1 - k) = gaussian_matrix(d, r1 - k, rng);
    return {orthonormalize(v), u};
}

// Checks the normal form: in g-coordinates U = span(e_1..e_r2) and
// V = span(e_1..e_k, e_{r2+j} + e_{k+j}).
double normal_form_defect(const AdaptedFrame& f, const Subspace& v, const Subspace& u) {
    const Eigen::Index d = f.d();
    Matrix ginv = f.g.inverse();
    Matrix target_u = Matrix::Identity(d, d).leftCols(f.r2);
    Matrix target_v = Matrix::Zero(d, f.r1);
    for (int i = 0; i < f.k; ++i) target_v(i, i) = 1.0;
    for (Eigen::Index j = 0; j < f.s; ++j) {
        target_v(f.r2 + j, f.k + j) = 1.0;
        target_v(f.k + j, f.k + j) = 1.0;
    }
    Subspace gu = orthonormalize(ginv * u.basis());
    Subspace gv = orthonormalize(ginv * v.basis());
    return projector_distance_sq(gu, orthonormalize(target_u)) + projector_distance_sq(gv, orthonormalize(target_v));
}

}  // namespace

TEST_CASE("stratum index") {
    Rng rng = make_rng(1);
    Subspace u = haar(5, 3, rng);
    Subspace v(u.basis().leftCols(2));
    StratumLabel flag = stratum_index(v, u);
    CHECK(flag.k == 2);
    CHECK(flag.is_flag());

    for (int t = 0; t < 50; ++t) CHECK(stratum_index(haar(7, 3, rng), haar(7, 4, rng)).k == 0);

    StratumLabel one = stratum_index(span_of({{1, 0, 0}, {0, 1, 0}}), span_of({{0, 1, 0}, {0, 0, 1}}));
    CHECK(one.k == 1);
    CHECK_FALSE(one.is_flag());
    CHECK(error_of([&] { stratum_index(u, v); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("stratum index is invariant under well-conditioned invertible maps") {
    Rng rng = make_rng(2);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index k = t % 3;
        auto [v, u] = pair_with_intersection(6, 2, 3, k, rng);
        Matrix g = gaussian_matrix(6, 6, rng);
        if (condition_number(g) > 1e4) continue;
        CHECK(stratum_index(apply_map(g, v), apply_map(g, u)).k == k);
    }
}

TEST_CASE("adapted frame normal forms") {
    SUBCASE("flag pair in coordinate position: g is the identity up to column signs") {
        AdaptedFrame f = adapted_frame(Subspace::coordinate(3, {0}), Subspace::coordinate(3, {0, 1}));
        CHECK(f.k == 1);
        CHECK(f.s == 0);
        CHECK((f.g.cwiseAbs() - Matrix::Identity(3, 3)).norm() < 1e-14);
    }
    SUBCASE("r1 = r2 = 1 generic pair in R^4") {
        Rng rng = make_rng(3);
        Subspace v = haar(4, 1, rng), u = haar(4, 1, rng);
        AdaptedFrame f = adapted_frame(v, u);
        CHECK(f.k == 0);
        CHECK(f.s == 1);
        Matrix ginv = f.g.inverse();
        Subspace gu = orthonormalize(ginv * u.basis());
        Subspace gv = orthonormalize(ginv * v.basis());
        CHECK(projector_distance_sq(gu, span_of({{1, 0, 0, 0}})) < 1e-12);
        CHECK(projector_distance_sq(gv, span_of({{1, 1, 0, 0}})) < 1e-12);
    }
    SUBCASE("V inside U") {
        Rng rng = make_rng(4);
        Subspace u = haar(5, 3, rng);
        Subspace v = orthonormalize(u.basis() * gaussian_matrix(3, 2, rng));
        AdaptedFrame f = adapted_frame(v, u);
        CHECK(f.s == 0);
        CHECK(normal_form_defect(f, v, u) < 1e-12);
    }
    SUBCASE("random pairs across strata") {
        Rng rng = make_rng(5);
        for (int t = 0; t < 60; ++t) {
            const Eigen::Index k = t % 3;
            auto [v, u] = pair_with_intersection(7, 2, 3, k, rng);
            AdaptedFrame f = adapted_frame(v, u);
            CHECK(f.k == k);
            CHECK(f.s == 2 - k);
            CHECK(normal_form_defect(f, v, u) < 1e-8);
        }
    }
    SUBCASE("perpendicular pair") {
        AdaptedFrame f = adapted_frame(Subspace::coordinate(2, {1}), Subspace::coordinate(2, {0}));
        CHECK(std::abs(f.g.determinant()) > 0.5);
    }
}

TEST_CASE("adapted frame refuses an ambiguous incidence") {
    const double alpha = 1e-4;  // 1 - cos(alpha) = 5e-9 passes; inside the band below
    const double beta = std::acos(1.0 - 5e-8);
    Matrix v(2, 1);
    v << std::cos(beta), std::sin(beta);
    CHECK(error_of([&] { adapted_frame(Subspace(v), Subspace::coordinate(2, {0})); }) == ErrorCode::DegenerateInput);
    v << std::cos(alpha), std::sin(alpha);
    CHECK(adapted_frame(Subspace(v), Subspace::coordinate(2, {0})).k == 1);
}

TEST_CASE("degeneration path") {
    SUBCASE("t = 1 returns V") {
        Rng rng = make_rng(6);
        Subspace v = haar(4, 2, rng), u = haar(4, 2, rng);
        CHECK((degeneration_path(v, u, 1.0).basis() - v.basis()).norm() == 0.0);
    }
    SUBCASE("2-D closed form") {
        Subspace u = span_of({{1, 0}});
        Subspace v = span_of({{1, 1}});
        Subspace w = degeneration_path(v, u, 0.01);
        const double angle = principal_angles(w, u).angles[0];
        CHECK(angle <= std::atan(0.01));
        // the path is (1 - t) u + t v in the frame's normalization
        const double expected = std::atan(0.01 / std::sqrt(2.0) / (0.99 + 0.01 / std::sqrt(2.0)));
        CHECK(angle == doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("flag pair is fixed") {
        Subspace u = Subspace::coordinate(4, {0, 1, 2});
        Subspace v = span_of({{1, 1, 0, 0}});
        for (double t : {2.0, 0.3, 1e-6}) CHECK((degeneration_path(v, u, t).basis() - v.basis()).norm() == 0.0);
    }
    SUBCASE("t must be positive") {
        CHECK(error_of([] {
                  degeneration_path(Subspace::coordinate(2, {0}), Subspace::coordinate(2, {1}), 0.0);
              }) == ErrorCode::InvalidParams);
    }
    SUBCASE("monotone defect toward the flag locus") {
        Rng rng = make_rng(7);
        const std::vector<double> grid = {1, 0.5, 0.1, 0.01, 0.001};
        struct Shape {
            Eigen::Index r1, r2, d;
        };
        for (Shape sh : {Shape{1, 1, 2}, Shape{1, 2, 4}, Shape{2, 3, 6}, Shape{2, 2, 5}})
            for (int t = 0; t < 20; ++t) {
                Subspace v = haar(sh.d, sh.r1, rng), u = haar(sh.d, sh.r2, rng);
                double prev = is_flag(v, u).defect;
                REQUIRE(prev > 1e-6);
                for (double s : grid) {
                    const double defect = is_flag(degeneration_path(v, u, s), u).defect;
                    CHECK(defect <= prev + 1e-15);
                    prev = defect;
                }
                CHECK(prev < 1e-4);
            }
    }
    SUBCASE("the one-parameter map fixes U") {
        Rng rng = make_rng(8);
        for (int t = 0; t < 20; ++t) {
            Subspace v = haar(6, 2, rng), u = haar(6, 3, rng);
            AdaptedFrame f = adapted_frame(v, u);
            for (double s : {0.5, 0.01}) {
                Matrix lam = one_parameter_map(f, s);
                for (double a : principal_angles(orthonormalize(lam * u.basis()), u).angles) CHECK(a < 1e-10);
                // and acting on V agrees with degeneration_path
                CHECK(projector_distance_sq(orthonormalize(lam * v.basis()), degeneration_path(v, u, s)) < 1e-12);
            }
        }
    }
}

TEST_CASE("statistic names") {
    for (auto s : {Statistic::IntersectionDim, Statistic::AngleSum, Statistic::ProjectorDistanceSq,
                   Statistic::FrobeniusOverlap})
        CHECK(parse_statistic(statistic_name(s)) == s);
    CHECK(error_of([] { parse_statistic("cka"); }) == ErrorCode::UnknownStatistic);
}

TEST_CASE("invariance probe") {
    Rng rng = make_rng(9);
    auto [v, u] = pair_with_intersection(6, 2, 3, 1, rng);

    ProbeReport dim = invariance_probe(Statistic::IntersectionDim, v, u, 200, 42, 4);
    CHECK(dim.base_value == 1.0);
    CHECK(dim.invertible_max_deviation == 0.0);
    CHECK(dim.orthogonal_max_deviation == 0.0);

    ProbeReport angles = invariance_probe(Statistic::AngleSum, v, u, 200, 42, 4);
    CHECK(angles.orthogonal_max_deviation < 1e-8);
    CHECK(angles.invertible_max_deviation > 0.01);

    ShearWitness w = shear_witness();
    CHECK(std::abs(w.g.determinant() - 1.0) < 1e-15);
    const double dev = statistic_deviation(Statistic::AngleSum, w.v, w.u, w.g);
    CHECK(dev == doctest::Approx(std::numbers::pi / 4 - std::atan(0.5)).epsilon(1e-12));
    CHECK(dev > 0.01);
    CHECK(statistic_deviation(Statistic::IntersectionDim, w.v, w.u, w.g) == 0.0);
}

TEST_CASE("probe results do not depend on the number of jobs") {
    Rng rng = make_rng(10);
    Subspace v = haar(5, 2, rng), u = haar(5, 3, rng);
    ProbeReport a = invariance_probe(Statistic::FrobeniusOverlap, v, u, 64, 7, 1);
    ProbeReport b = invariance_probe(Statistic::FrobeniusOverlap, v, u, 64, 7, 8);
    CHECK(a.orthogonal_max_deviation == b.orthogonal_max_deviation);
    CHECK(a.invertible_max_deviation == b.invertible_max_deviation);
    CHECK(a.invertible_resamples == b.invertible_resamples);
}
