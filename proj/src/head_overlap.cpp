// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/head_overlap.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <tuple>

#include "flagdiag/error.hpp"
#include "flagdiag/parallel.hpp"

namespace flagdiag {

namespace {

std::optional<Eigen::Index> attr_int(const Tensor& t, const std::string& key) {
    auto it = t.attrs.find(key);
    if (it == t.attrs.end()) return std::nullopt;
    Eigen::Index v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error(ErrorCode::ShapeInconsistent, t.name + ": attr " + key + "='" + s + "' is not an integer");
    return v;
}

Subspace head_subspace(const Matrix& block, int layer, std::size_t index, const HeadBasisOptions& options) {
    Subspace s = orthonormalize(block, true);
    if (s.rank() < block.cols() && !options.allow_rank_reduction)
        throw Error(ErrorCode::RankDeficientHead, "layer " + std::to_string(layer) + " head " +
                                                      std::to_string(index) + " has numerical rank " +
                                                      std::to_string(s.rank()));
    return s;
}

double pair_sum_to_R(double pair_sum, Eigen::Index h, Eigen::Index d_k) {
    return 2.0 * pair_sum / (static_cast<double>(h) * static_cast<double>(h - 1) * static_cast<double>(d_k));
}

// sum_{i<j} ||U_i^T U_j||_F^2 with one product per head against all later heads.
double unordered_pair_sum(const std::vector<Matrix>& bases) {
    const std::size_t h = bases.size();
    if (h < 2) return 0.0;
    const Eigen::Index d = bases[0].rows();
    Eigen::Index total = 0;
    for (const auto& b : bases) total += b.cols();
    Matrix stacked(d, total);
    std::vector<Eigen::Index> offset(h + 1, 0);
    for (std::size_t i = 0; i < h; ++i) {
        stacked.middleCols(offset[i], bases[i].cols()) = bases[i];
        offset[i + 1] = offset[i] + bases[i].cols();
    }
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < h; ++i) {
        const Eigen::Index rest = total - offset[i + 1];
        Matrix block = bases[i].transpose() * stacked.rightCols(rest);
        sum += block.squaredNorm();
    }
    return sum;
}

bool parse_layer_name(const std::string& name, int& layer) {
    constexpr std::string_view prefix = "layer.";
    constexpr std::string_view suffix = ".wq";
    if (name.size() <= prefix.size() + suffix.size()) return false;
    if (name.compare(0, prefix.size(), prefix) != 0) return false;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
    const char* b = name.data() + prefix.size();
    const char* e = name.data() + name.size() - suffix.size();
    auto [ptr, ec] = std::from_chars(b, e, layer);
    return ec == std::errc() && ptr == e && layer >= 0;
}

}  // namespace

Matrix query_matrix(const Tensor& tensor) {
    if (tensor.shape.size() != 2)
        throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": query weight must be 2-D");
    Matrix m = tensor.as_matrix();
    if (tensor.layout == kLayoutCombinedQkv) {
        const Eigen::Index d = m.rows();
        if (m.cols() != 3 * d)
            throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": combined QKV weight must be (d, 3d)");
        return m.leftCols(d);
    }
    if (tensor.layout == kLayoutQprojOutByIn) return m.transpose();
    throw Error(ErrorCode::UnknownLayout, tensor.name + ": layout '" + tensor.layout + "'");
}

HeadSet head_bases(const Tensor& tensor, int layer, const HeadBasisOptions& options) {
    Matrix wq = query_matrix(tensor);
    auto h = attr_int(tensor, "h");
    if (!h) throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": missing attr h");
    if (*h < 2) throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": need at least two heads");
    if (wq.cols() % *h != 0)
        throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": " + std::to_string(wq.cols()) +
                                                      " query columns do not split into " + std::to_string(*h) +
                                                      " heads");
    const Eigen::Index d_k = wq.cols() / *h;
    if (auto declared = attr_int(tensor, "d_k"); declared && *declared != d_k)
        throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": attr d_k=" + std::to_string(*declared) +
                                                      " but shape gives " + std::to_string(d_k));
    if (auto declared = attr_int(tensor, "d"); declared && *declared != wq.rows())
        throw Error(ErrorCode::ShapeInconsistent, tensor.name + ": attr d=" + std::to_string(*declared) +
                                                      " but shape gives " + std::to_string(wq.rows()));

    HeadSet hs;
    hs.layer = layer;
    hs.d = wq.rows();
    hs.h = *h;
    hs.d_k = d_k;
    for (Eigen::Index i = 0; i < *h; ++i)
        hs.heads.push_back(head_subspace(wq.middleCols(i * d_k, d_k), layer, static_cast<std::size_t>(i), options));
    return hs;
}

HeadSet head_set_from_matrices(const std::vector<Matrix>& heads, int layer, const HeadBasisOptions& options) {
    if (heads.size() < 2) throw Error(ErrorCode::ShapeInconsistent, "need at least two heads");
    HeadSet hs;
    hs.layer = layer;
    hs.d = heads[0].rows();
    hs.h = static_cast<Eigen::Index>(heads.size());
    hs.d_k = heads[0].cols();
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i].rows() != hs.d || heads[i].cols() != hs.d_k)
            throw Error(ErrorCode::ShapeInconsistent, "heads must share a shape");
        hs.heads.push_back(head_subspace(heads[i], layer, i, options));
    }
    return hs;
}

double overlap_R(const HeadSet& heads) {
    std::vector<Matrix> bases;
    bases.reserve(heads.heads.size());
    for (const auto& s : heads.heads) bases.push_back(s.basis());
    return pair_sum_to_R(unordered_pair_sum(bases), heads.h, heads.d_k);
}

double overlap_R_projector(const HeadSet& heads) {
    std::vector<Matrix> projectors;
    for (const auto& s : heads.heads) projectors.push_back(s.projector());
    double sum = 0.0;
    for (std::size_t i = 0; i < projectors.size(); ++i)
        for (std::size_t j = i + 1; j < projectors.size(); ++j) sum += (projectors[i] * projectors[j]).squaredNorm();
    return pair_sum_to_R(sum, heads.h, heads.d_k);
}

Matrix pairwise_overlaps(const HeadSet& heads) {
    const Eigen::Index h = heads.h;
    Matrix out = Matrix::Zero(h, h);
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = i; j < h; ++j) {
            const double v = (heads.heads[i].basis().transpose() * heads.heads[j].basis()).squaredNorm() /
                             static_cast<double>(heads.d_k);
            out(i, j) = out(j, i) = v;
        }
    }
    return out;
}

HaarBaseline haar_baseline(Eigen::Index d, Eigen::Index d_k, Eigen::Index h, int trials, std::uint64_t seed,
                           int jobs) {
    if (d < 1 || d_k < 1 || d_k > d) throw Error(ErrorCode::InvalidDims, "need 1 <= d_k <= d");
    if (h < 2) throw Error(ErrorCode::InvalidDims, "need at least two heads");
    if (trials < 2) throw Error(ErrorCode::InvalidParams, "need at least two trials");

    HaarBaseline out;
    out.analytic = static_cast<double>(d_k) / static_cast<double>(d);
    out.per_trial.resize(static_cast<std::size_t>(trials));
    parallel_for(trials, jobs, [&](int trial) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(trial));
        std::vector<Matrix> frames;
        frames.reserve(static_cast<std::size_t>(h));
        for (Eigen::Index i = 0; i < h; ++i) frames.push_back(haar_frame(d, d_k, rng));
        out.per_trial[trial] = pair_sum_to_R(unordered_pair_sum(frames), h, d_k);
    });
    for (double r : out.per_trial) out.mean += r;
    out.mean /= trials;
    double var = 0.0;
    for (double r : out.per_trial) var += (r - out.mean) * (r - out.mean);
    out.std = std::sqrt(var / (trials - 1));
    return out;
}

OverlapReport model_overlap_report(const TensorContainer& container, int trials, std::uint64_t seed, int jobs,
                                   const HeadBasisOptions& options) {
    std::vector<std::pair<int, const Tensor*>> query_tensors;
    for (const auto& t : container.tensors()) {
        int layer = 0;
        if (parse_layer_name(t.name, layer)) query_tensors.emplace_back(layer, &t);
    }
    if (query_tensors.empty())
        throw Error(ErrorCode::UnknownTensor, "container has no layer.<l>.wq tensors");
    std::sort(query_tensors.begin(), query_tensors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<HeadSet> sets(query_tensors.size());
    parallel_for(static_cast<int>(query_tensors.size()), jobs, [&](int i) {
        sets[i] = head_bases(*query_tensors[i].second, query_tensors[i].first, options);
    });

    std::map<std::tuple<Eigen::Index, Eigen::Index, Eigen::Index>, HaarBaseline> baselines;
    OverlapReport report;
    report.trials = trials;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const HeadSet& hs = sets[i];
        auto key = std::make_tuple(hs.d, hs.d_k, hs.h);
        auto it = baselines.find(key);
        if (it == baselines.end()) it = baselines.emplace(key, haar_baseline(hs.d, hs.d_k, hs.h, trials, seed, jobs)).first;
        const HaarBaseline& base = it->second;

        LayerOverlap row;
        row.layer = hs.layer;
        row.tensor = query_tensors[i].second->name;
        row.d = hs.d;
        row.h = hs.h;
        row.d_k = hs.d_k;
        row.R = overlap_R(hs);
        row.baseline_mean = base.mean;
        row.baseline_std = base.std;
        row.analytic = base.analytic;
        row.excess = row.R - base.mean;
        row.significant = row.R > base.mean + 2.0 * base.std;
        row.pairwise = pairwise_overlaps(hs);
        report.mean_R += row.R;
        if (row.significant) ++report.significant_layers;
        report.layers.push_back(std::move(row));
    }
    report.mean_R /= static_cast<double>(report.layers.size());
    return report;
}

SharingIdentity sharing_identity(const Matrix& w1, const Matrix& w2) {
    if (w1.rows() != w2.rows() || w1.cols() != w2.cols())
        throw Error(ErrorCode::ShapeMismatch, "head matrices must share a shape");
    SharingIdentity out;
    out.penalty = w1.squaredNorm() + w2.squaredNorm();
    out.half_sum_sq = 0.5 * (w1 + w2).squaredNorm();
    out.disagreement = 0.5 * (w1 - w2).squaredNorm();
    out.identity_residual = std::abs(out.penalty - out.half_sum_sq - out.disagreement);
    out.equality = out.disagreement < 1e-12;
    return out;
}

}  // namespace flagdiag
