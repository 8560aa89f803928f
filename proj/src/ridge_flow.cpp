// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/ridge_flow.hpp"

#include <cmath>

#include "flagdiag/error.hpp"
#include "flagdiag/parallel.hpp"

namespace flagdiag {

namespace {

Matrix gram_plus_ridge(const Matrix& h, double lambda) {
    Matrix m = h * h.transpose();
    m.diagonal().array() += lambda;
    return m;
}

double mean_cos_sq(const Subspace& a, const Subspace& b) {
    auto cosines = principal_cosines(a, b);
    if (cosines.empty()) return 0.0;
    double s = 0.0;
    for (double c : cosines) s += c * c;
    return s / static_cast<double>(cosines.size());
}

}  // namespace

void RidgeProblem::validate() const {
    if (!(lambda > 0.0)) throw Error(ErrorCode::NonPositiveLambda, "lambda must be positive");
    if (features.cols() != labels.cols())
        throw Error(ErrorCode::ShapeMismatch, "H and Y need the same number of samples");
    if (initial.rows() != labels.rows() || initial.cols() != features.rows())
        throw Error(ErrorCode::ShapeMismatch, "W0 must be c x d");
}

RidgeProblem RidgeProblem::random(Eigen::Index d, Eigen::Index n, Eigen::Index c, Eigen::Index feature_rank,
                                  double lambda, Rng& rng) {
    RidgeProblem p;
    p.features = gaussian_matrix(d, feature_rank, rng) * gaussian_matrix(feature_rank, n, rng) /
                 std::sqrt(static_cast<double>(n * feature_rank));
    p.labels = gaussian_matrix(c, n, rng);
    p.lambda = lambda;
    p.initial = gaussian_matrix(c, d, rng);
    return p;
}

double ridge_objective(const RidgeProblem& prob, const Matrix& w) {
    return 0.5 * (w * prob.features - prob.labels).squaredNorm() + 0.5 * prob.lambda * w.squaredNorm();
}

Matrix ridge_gradient(const RidgeProblem& prob, const Matrix& w) {
    return (w * prob.features - prob.labels) * prob.features.transpose() + prob.lambda * w;
}

Matrix ridge_solution(const Matrix& features, const Matrix& labels, double lambda) {
    if (!(lambda > 0.0)) throw Error(ErrorCode::NonPositiveLambda, "lambda must be positive");
    if (features.cols() != labels.cols())
        throw Error(ErrorCode::ShapeMismatch, "H and Y need the same number of samples");
    Eigen::LLT<Matrix> llt(gram_plus_ridge(features, lambda));
    // (H H^T + lambda I) W*^T = H Y^T
    Matrix wt = llt.solve(features * labels.transpose());
    return wt.transpose();
}

Subspace feature_subspace(const Matrix& features) { return orthonormalize(features, true); }

double orthogonal_norm(const Matrix& w, const Subspace& v) {
    if (v.rank() == 0) return w.norm();
    return (w - (w * v.basis()) * v.basis().transpose()).norm();
}

ClosedFormFlow::ClosedFormFlow(RidgeProblem prob)
    : prob_(std::move(prob)), subspace_(Subspace::zero(prob_.features.rows())) {
    prob_.validate();
    minimizer_ = ridge_solution(prob_.features, prob_.labels, prob_.lambda);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram_plus_ridge(prob_.features, prob_.lambda));
    eigenvalues_ = eig.eigenvalues();
    eigenvectors_ = eig.eigenvectors();
    subspace_ = feature_subspace(prob_.features);
}

Matrix ClosedFormFlow::at(double t) const {
    if (t < 0.0) throw Error(ErrorCode::InvalidParams, "flow time must be non-negative");
    if (t == 0.0) return prob_.initial;
    Vector decay = (-t * eigenvalues_).array().exp();
    Matrix expm = eigenvectors_ * decay.asDiagonal() * eigenvectors_.transpose();
    return minimizer_ + (prob_.initial - minimizer_) * expm;
}

Matrix flow_closed_form(const RidgeProblem& prob, double t) { return ClosedFormFlow(prob).at(t); }

std::optional<double> fit_decay_rate(const std::vector<double>& times, const std::vector<double>& norms) {
    double n = 0, st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < times.size() && i < norms.size(); ++i) {
        if (!(norms[i] > kRateFitFloor)) continue;
        const double y = std::log(norms[i]);
        n += 1;
        st += times[i];
        sy += y;
        stt += times[i] * times[i];
        sty += times[i] * y;
    }
    if (n < 2) return std::nullopt;
    const double denom = n * stt - st * st;
    if (denom == 0.0) return std::nullopt;
    return -(n * sty - st * sy) / denom;
}

FlowTrace flow_integrate(const RidgeProblem& prob, double t_end, int steps) {
    prob.validate();
    if (steps < 10) throw Error(ErrorCode::InvalidParams, "need at least 10 steps");
    if (!(t_end > 0.0)) throw Error(ErrorCode::InvalidParams, "t_end must be positive");

    const Matrix m = gram_plus_ridge(prob.features, prob.lambda);
    const Matrix forcing = prob.labels * prob.features.transpose();
    const Subspace v = feature_subspace(prob.features);
    auto rhs = [&](const Matrix& w) -> Matrix { return forcing - w * m; };

    const double h = t_end / steps;
    const Matrix w_star = ridge_solution(prob.features, prob.labels, prob.lambda);
    const double scale = std::max({prob.initial.norm(), w_star.norm(), 1e-300});

    FlowTrace trace;
    Matrix w = prob.initial;
    auto record = [&](double t) {
        trace.times.push_back(t);
        trace.orth_norms.push_back(orthogonal_norm(w, v));
        trace.objective.push_back(ridge_objective(prob, w));
    };
    record(0.0);
    for (int i = 1; i <= steps; ++i) {
        Matrix k1 = rhs(w);
        Matrix k2 = rhs(w + 0.5 * h * k1);
        Matrix k3 = rhs(w + 0.5 * h * k2);
        Matrix k4 = rhs(w + h * k3);
        w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const double norm = w.norm();
        if (!std::isfinite(norm) || norm > 10.0 * scale)
            throw Error(ErrorCode::StepTooLarge,
                        "integration diverged at step " + std::to_string(i) + " (h = " + std::to_string(h) + ")");
        record(i * h);
    }
    trace.fitted_rate = fit_decay_rate(trace.times, trace.orth_norms);
    trace.terminal = std::move(w);
    return trace;
}

FlowTrace flow_trace_closed_form(const RidgeProblem& prob, double t_end, int samples) {
    if (samples < 1) throw Error(ErrorCode::InvalidParams, "need at least one sample interval");
    ClosedFormFlow flow(prob);
    FlowTrace trace;
    for (int i = 0; i <= samples; ++i) {
        const double t = t_end * i / samples;
        Matrix w = flow.at(t);
        trace.times.push_back(t);
        trace.orth_norms.push_back(orthogonal_norm(w, flow.subspace()));
        trace.objective.push_back(ridge_objective(flow.problem(), w));
        if (i == samples) trace.terminal = std::move(w);
    }
    trace.fitted_rate = fit_decay_rate(trace.times, trace.orth_norms);
    return trace;
}

Level2Report level2_verdict(const Matrix& w, const Matrix& features, double tolerance, int null_trials,
                            std::uint64_t seed, int jobs) {
    if (w.cols() != features.rows())
        throw Error(ErrorCode::ShapeMismatch, "W must have as many columns as H has rows");
    if (null_trials < 2) throw Error(ErrorCode::InvalidParams, "need at least two null trials");

    const Subspace cls = orthonormalize(w.transpose(), true);
    const Subspace feat = feature_subspace(features);
    const Eigen::Index d = features.rows();

    Level2Report report;
    report.classifier_rank = cls.rank();
    report.feature_rank = feat.rank();
    report.alignment = mean_cos_sq(cls, feat);

    Matrix residual = cls.basis() - feat.basis() * (feat.basis().transpose() * cls.basis());
    report.containment_defect = residual.squaredNorm();
    report.contained = cls.rank() <= feat.rank() && report.containment_defect < tolerance;
    if (cls.rank() == feat.rank())
        report.equal = report.contained && intersection_dim(cls, feat) == feat.rank();

    std::vector<double> null(static_cast<std::size_t>(null_trials));
    parallel_for(null_trials, jobs, [&](int i) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
        Subspace a(haar_frame(d, cls.rank(), rng));
        Subspace b(haar_frame(d, feat.rank(), rng));
        null[i] = mean_cos_sq(a, b);
    });
    double mean = 0.0;
    for (double x : null) mean += x;
    mean /= null_trials;
    double var = 0.0;
    for (double x : null) var += (x - mean) * (x - mean);
    var /= (null_trials - 1);
    report.null_mean = mean;
    report.null_std = std::sqrt(var);
    if (report.null_std > 1e-15) report.z_score = (report.alignment - mean) / report.null_std;
    return report;
}

}  // namespace flagdiag
