// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "flagdiag/activation_metric.hpp"
#include "flagdiag/error.hpp"
#include "flagdiag/git_strata.hpp"
#include "flagdiag/head_overlap.hpp"
#include "flagdiag/mlp_lab.hpp"
#include "flagdiag/parallel.hpp"
#include "flagdiag/ridge_flow.hpp"
#include "flagdiag/tensor_io.hpp"

namespace flagdiag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix parse_csv_matrix(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingBlob, "cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        rows.push_back(parse_real_list(line));
    }
    if (rows.empty()) throw Error(ErrorCode::InvalidParams, path.string() + " has no rows");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw Error(ErrorCode::InvalidParams, path.string() + ": ragged CSV row " + std::to_string(i));
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

std::string env_seed_default() {
    const char* s = std::getenv("FLAGDIAG_SEED");
    return s ? std::string(s) : std::string("0");
}

struct Common {
    std::string out_path;
    bool csv = false;
    int jobs = default_jobs();
    std::uint64_t seed = 0;
};

// Matrix arguments resolved through one loader so each container is read once
// and each input digest recorded once.
class Inputs {
public:
    Matrix matrix(const std::string& spec) { return load_matrix_arg(spec, &digests_); }
    Subspace subspace(const std::string& spec) { return orthonormalize(matrix(spec), true); }
    const std::vector<InputDigest>& digests() const { return digests_; }

private:
    std::vector<InputDigest> digests_;
};

json subspace_summary(const Subspace& s) { return {{"ambient_dim", s.ambient_dim()}, {"rank", s.rank()}}; }

MlpConfig mlp_config_from(int depth, int width, const std::string& activation, const std::string& init, double lr,
                          int epochs, std::uint64_t seed) {
    MlpConfig c;
    c.depth = depth;
    c.width = width;
    c.activation = parse_activation(activation);
    c.init = parse_init(init);
    c.learning_rate = lr;
    c.epochs = epochs;
    c.seed = seed;
    c.validate();
    return c;
}

ExperimentArch parse_arch(const std::string& spec, int width, double lr, int epochs) {
    // <activation>-<depth>[-<init>]
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, '-');) parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 3)
        throw Error(ErrorCode::InvalidParams, "architecture '" + spec + "' is not <activation>-<depth>[-<init>]");
    ExperimentArch arch;
    arch.tag = spec;
    int depth = 0;
    try {
        depth = std::stoi(parts[1]);
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidParams, "architecture '" + spec + "' has no integer depth");
    }
    arch.config = mlp_config_from(depth, width, parts[0], parts.size() == 3 ? parts[2] : "xavier_uniform", lr,
                                  epochs, 0);
    return arch;
}

}  // namespace

std::vector<std::int64_t> parse_int_list(const std::string& text) {
    std::vector<std::int64_t> out;
    for (double v : parse_real_list(text)) {
        if (v != std::floor(v)) throw Error(ErrorCode::InvalidParams, "'" + text + "' is not a list of integers");
        out.push_back(static_cast<std::int64_t>(v));
    }
    return out;
}

std::vector<double> parse_real_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string cell; std::getline(ss, cell, ',');) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        if (b == std::string::npos) throw Error(ErrorCode::InvalidParams, "empty value in '" + text + "'");
        cell = cell.substr(b, e - b + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(cell, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != cell.size()) throw Error(ErrorCode::InvalidParams, "'" + cell + "' is not a number");
        out.push_back(v);
    }
    return out;
}

Matrix load_matrix_arg(const std::string& spec, std::vector<InputDigest>* inputs) {
    const auto colon = spec.rfind(':');
    if (colon != std::string::npos && colon > 0 && fs::is_directory(spec.substr(0, colon))) {
        const fs::path root = spec.substr(0, colon);
        TensorContainer c = load_container(root);
        if (inputs) {
            const std::string path = (root / "manifest.json").string();
            bool seen = false;
            for (const auto& d : *inputs) seen = seen || d.path == path;
            if (!seen) inputs->push_back({path, sha256_file(root / "manifest.json")});
        }
        const Tensor& t = c.at(spec.substr(colon + 1));
        return t.as_matrix();
    }
    if (!fs::exists(spec)) throw Error(ErrorCode::MissingBlob, "no container or CSV file at '" + spec + "'");
    if (inputs) inputs->push_back({spec, sha256_file(spec)});
    return parse_csv_matrix(spec);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"flagdiag: subspace-incidence diagnostics for network weights", "flagdiag"};
    app.require_subcommand(1);
    app.fallthrough();

    Common common;
    std::string seed_text = env_seed_default();
    app.add_option("--out", common.out_path, "Write the report to this file instead of stdout");
    app.add_flag("--csv", common.csv, "Emit CSV rows instead of line-delimited JSON");
    app.add_option("--jobs", common.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed_text, "Seed for every random draw (default: $FLAGDIAG_SEED or 0)");

    // Subcommand state lives here; each handler fills a Report.
    std::map<CLI::App*, std::function<Report()>> handlers;
    Inputs inputs;

    std::string a_spec, b_spec;
    double eps = kIncidenceTolerance;
    {
        auto* sub = app.add_subcommand("angles", "Principal angles between two spans");
        sub->add_option("--a", a_spec, "First span (<container>:<tensor> or CSV)")->required();
        sub->add_option("--b", b_spec, "Second span")->required();
        handlers[sub] = [&] {
            Subspace v = inputs.subspace(a_spec), u = inputs.subspace(b_spec);
            Report r;
            r.params = {{"a", a_spec}, {"b", b_spec}};
            auto angles = principal_angles(v, u);
            for (std::size_t j = 0; j < angles.angles.size(); ++j)
                r.rows.push_back({{"index", j}, {"angle", angles.angles[j]}, {"cosine", std::cos(angles.angles[j])}});
            r.summary = {{"a", subspace_summary(v)},
                         {"b", subspace_summary(u)},
                         {"angle_sum", angles.sum()},
                         {"projector_distance_sq", projector_distance_sq(v, u)},
                         {"intersection_dim", intersection_dim(v, u)}};
            return r;
        };
    }
    {
        auto* sub = app.add_subcommand("intersect", "Numerical dim(V ∩ U) and the flag test");
        sub->add_option("--a", a_spec, "V")->required();
        sub->add_option("--b", b_spec, "U")->required();
        sub->add_option("--eps", eps, "Incidence tolerance on 1 - cos");
        handlers[sub] = [&] {
            Subspace v = inputs.subspace(a_spec), u = inputs.subspace(b_spec);
            Report r;
            r.params = {{"a", a_spec}, {"b", b_spec}, {"eps", eps}};
            r.summary = {{"a", subspace_summary(v)}, {"b", subspace_summary(u)},
                         {"intersection_dim", intersection_dim(v, u, eps)}};
            const Subspace& small = v.rank() <= u.rank() ? v : u;
            const Subspace& large = v.rank() <= u.rank() ? u : v;
            FlagTest f = is_flag(small, large, eps);
            r.summary["is_flag"] = f.is_flag;
            r.summary["flag_defect"] = f.defect;
            return r;
        };
    }
    std::vector<std::string> chain_specs;
    {
        auto* sub = app.add_subcommand("drift", "Cumulative projector drift along a chain");
        sub->add_option("--chain", chain_specs, "Spans in chain order")->required()->expected(2, -1);
        sub->add_option("--eps", eps, "Nesting tolerance");
        handlers[sub] = [&] {
            std::vector<Subspace> chain;
            for (const auto& s : chain_specs) chain.push_back(inputs.subspace(s));
            Report r;
            r.params = {{"chain", chain_specs}, {"eps", eps}};
            double nested_value = 0.0;
            for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
                json row = {{"index", i},
                            {"rank_from", chain[i].rank()},
                            {"rank_to", chain[i + 1].rank()},
                            {"distance_sq", projector_distance_sq(chain[i + 1], chain[i])}};
                if (chain[i].rank() <= chain[i + 1].rank()) {
                    FlagTest f = is_flag(chain[i], chain[i + 1], eps);
                    row["is_flag"] = f.is_flag;
                    row["defect"] = f.defect;
                }
                nested_value += std::abs(static_cast<double>(chain[i + 1].rank() - chain[i].rank()));
                r.rows.push_back(std::move(row));
            }
            r.summary = {{"drift", drift(chain)}, {"nested_minimum", nested_value}};
            bool monotone = true;
            for (std::size_t i = 1; i < chain.size(); ++i) monotone = monotone && chain[i].rank() >= chain[i - 1].rank();
            r.summary["nested"] = monotone ? json(FlagChain(chain, eps).is_nested()) : json(false);
            return r;
        };
    }
    std::string ranks_text;
    std::int64_t ambient = 0;
    {
        auto* sub = app.add_subcommand("flagdim", "Flag-variety and product-of-Grassmannian dimensions");
        sub->add_option("--ranks", ranks_text, "Comma-separated r_1 <= ... <= r_L")->required();
        sub->add_option("--d", ambient, "Ambient dimension")->required();
        handlers[sub] = [&] {
            auto ranks = parse_int_list(ranks_text);
            Report r;
            r.params = {{"ranks", ranks}, {"d", ambient}};
            ParameterCounts pc = parameter_counts(ranks, ambient);
            r.summary = {{"flag_dimension", flag_dimension(ranks, ambient)},
                         {"independent_dimension", independent_dimension(ranks, ambient)},
                         {"flag_params", pc.flag_params},
                         {"independent_params", pc.independent_params}};
            return r;
        };
    }
    std::string t_text = "1,0.5,0.1,0.01,0.001";
    {
        auto* sub = app.add_subcommand("degenerate", "One-parameter degeneration of V toward U");
        sub->add_option("--a", a_spec, "V (rank r1)")->required();
        sub->add_option("--b", b_spec, "U (rank r2 >= r1)")->required();
        sub->add_option("--t", t_text, "Comma-separated path parameters");
        sub->add_option("--eps", eps, "Incidence tolerance");
        handlers[sub] = [&] {
            Subspace v = inputs.subspace(a_spec), u = inputs.subspace(b_spec);
            auto ts = parse_real_list(t_text);
            Report r;
            r.params = {{"a", a_spec}, {"b", b_spec}, {"t", ts}, {"eps", eps}};
            AdaptedFrame frame = adapted_frame(v, u, eps);
            bool monotone = true;
            double prev = 0.0;
            for (std::size_t i = 0; i < ts.size(); ++i) {
                FlagTest f = is_flag(degeneration_path(v, u, ts[i], eps), u, eps);
                if (i > 0 && ts[i] < ts[i - 1] && f.defect > prev) monotone = false;
                prev = f.defect;
                r.rows.push_back({{"t", ts[i]}, {"defect", f.defect}, {"is_flag", f.is_flag}});
            }
            r.summary = {{"k", frame.k},   {"s", frame.s},   {"r1", frame.r1}, {"r2", frame.r2},
                         {"d", frame.d()}, {"monotone", monotone}, {"frame_condition", condition_number(frame.g)}};
            return r;
        };
    }
    std::string statistic = "intersection_dim";
    int trials = 200;
    {
        auto* sub = app.add_subcommand("probe-invariance", "Deviation of a statistic under random group actions");
        sub->add_option("--statistic", statistic,
                        "intersection_dim | angle_sum | projector_distance_sq | frobenius_overlap");
        sub->add_option("--a", a_spec, "V (defaults to the shear witness pair)");
        sub->add_option("--b", b_spec, "U");
        sub->add_option("--trials", trials, "Maps per group")->check(CLI::PositiveNumber);
        handlers[sub] = [&] {
            Statistic stat = parse_statistic(statistic);
            ShearWitness w = shear_witness();
            const bool explicit_pair = !a_spec.empty() || !b_spec.empty();
            if (explicit_pair && (a_spec.empty() || b_spec.empty()))
                throw Error(ErrorCode::InvalidParams, "give both --a and --b or neither");
            Subspace v = explicit_pair ? inputs.subspace(a_spec) : w.v;
            Subspace u = explicit_pair ? inputs.subspace(b_spec) : w.u;
            ProbeReport p = invariance_probe(stat, v, u, trials, common.seed, common.jobs);
            Report r;
            r.params = {{"statistic", statistic}, {"a", a_spec}, {"b", b_spec}, {"trials", trials}};
            r.summary = {{"statistic", std::string(statistic_name(stat))},
                         {"base_value", p.base_value},
                         {"orthogonal_max_deviation", p.orthogonal_max_deviation},
                         {"invertible_max_deviation", p.invertible_max_deviation},
                         {"invertible_resamples", p.invertible_resamples},
                         {"condition_bound", kProbeConditionBound},
                         {"shear_witness_deviation", statistic_deviation(stat, w.v, w.u, w.g)}};
            return r;
        };
    }
    int rd = 8, rn = 20, rc = 3, rrank = 0, steps = 0, samples = 100;
    double lambda = 0.5, t_end = 20.0;
    {
        auto* sub = app.add_subcommand("ridge", "Ridge gradient flow on a generated problem");
        sub->add_option("--d", rd, "Feature dimension")->check(CLI::PositiveNumber);
        sub->add_option("--n", rn, "Samples")->check(CLI::PositiveNumber);
        sub->add_option("--c", rc, "Classes")->check(CLI::PositiveNumber);
        sub->add_option("--rank", rrank, "rank(H) (default d/2)");
        sub->add_option("--lambda", lambda, "Weight decay");
        sub->add_option("--t-end", t_end, "Integration horizon");
        sub->add_option("--steps", steps, "RK4 steps (default: step <= 0.01 / ||HH^T + lambda I||)");
        sub->add_option("--samples", samples, "Trace rows emitted")->check(CLI::PositiveNumber);
        handlers[sub] = [&] {
            const int feature_rank = rrank > 0 ? rrank : std::max(1, rd / 2);
            if (feature_rank > std::min(rd, rn))
                throw Error(ErrorCode::InvalidParams, "rank must not exceed min(d, n)");
            Rng rng = make_rng(common.seed);
            RidgeProblem prob = RidgeProblem::random(rd, rn, rc, feature_rank, lambda, rng);
            ClosedFormFlow flow(prob);
            const int n_steps =
                steps > 0 ? steps : std::max(1000, static_cast<int>(std::ceil(t_end * flow.stiffness() / 0.01)));
            FlowTrace trace = flow_integrate(prob, t_end, n_steps);
            FlowTrace exact = flow_trace_closed_form(prob, t_end, n_steps);

            Report r;
            r.params = {{"d", rd},         {"n", rn},       {"c", rc},         {"rank", feature_rank},
                        {"lambda", lambda}, {"t_end", t_end}, {"steps", n_steps}, {"samples", samples}};
            const double orth0 = trace.orth_norms.front();
            double law_error = 0.0;
            for (std::size_t i = 0; i < exact.times.size(); ++i)
                law_error = std::max(law_error,
                                     std::abs(exact.orth_norms[i] - std::exp(-lambda * exact.times[i]) * orth0));
            const int stride = std::max(1, n_steps / samples);
            for (int i = 0; i <= n_steps; i += stride)
                r.rows.push_back({{"t", trace.times[i]},
                                  {"orth_norm", trace.orth_norms[i]},
                                  {"closed_form_orth_norm", exact.orth_norms[i]},
                                  {"predicted", std::exp(-lambda * trace.times[i]) * orth0},
                                  {"objective", trace.objective[i]}});

            const Matrix& w_star = flow.minimizer();
            Level2Report start = level2_verdict(prob.initial, prob.features, 1e-6, 200, common.seed, common.jobs);
            Level2Report end = level2_verdict(trace.terminal, prob.features, 1e-6, 200, common.seed, common.jobs);
            Level2Report opt = level2_verdict(w_star, prob.features, 1e-6, 200, common.seed, common.jobs);
            auto l2 = [](const Level2Report& x) {
                json j = {{"alignment", x.alignment},
                          {"null_mean", x.null_mean},
                          {"null_std", x.null_std},
                          {"z_score", optional_json(x.z_score)},
                          {"containment_defect", x.containment_defect},
                          {"contained", x.contained},
                          {"statistic", "mean_cos_sq"}};
                j["equal"] = x.equal ? json(*x.equal) : json(nullptr);
                return j;
            };
            r.summary = {{"lambda", lambda},
                         {"fitted_rate", optional_json(trace.fitted_rate)},
                         {"closed_form_fitted_rate", optional_json(exact.fitted_rate)},
                         {"max_law_error_closed_form", law_error},
                         {"terminal_relative_error",
                          (trace.terminal - exact.terminal).norm() / std::max(exact.terminal.norm(), 1e-300)},
                         {"step", t_end / n_steps},
                         {"stiffness", flow.stiffness()},
                         {"minimizer_gradient_norm", ridge_gradient(prob, w_star).norm()},
                         {"level2_initial", l2(start)},
                         {"level2_terminal", l2(end)},
                         {"level2_minimizer", l2(opt)}};
            return r;
        };
    }
    std::string v_spec, u_spec, gates_spec, metric_spec;
    {
        auto* sub = app.add_subcommand("commutator", "Commutator diagnostics of D^2 against a subspace");
        sub->add_option("--v", v_spec, "Feature span V")->required();
        auto* g = sub->add_option("--gates", gates_spec, "n x d activation-derivative samples");
        auto* m = sub->add_option("--metric", metric_spec, "D^2 as a d-vector (diagonal) or d x d matrix");
        g->excludes(m);
        sub->add_option("--u", u_spec, "Classifier span U, adds the residual-law terms");
        handlers[sub] = [&] {
            if (gates_spec.empty() == metric_spec.empty())
                throw Error(ErrorCode::InvalidParams, "give exactly one of --gates or --metric");
            Subspace v = inputs.subspace(v_spec);
            ActivationMetric metric = [&] {
                if (!gates_spec.empty()) return estimate_D2_diag(inputs.matrix(gates_spec));
                Matrix mm = inputs.matrix(metric_spec);
                if (mm.rows() == 1 || mm.cols() == 1) return ActivationMetric::diagonal(mm.reshaped());
                return ActivationMetric::dense(std::move(mm));
            }();
            CommutatorReport c = commutator_report(metric, v);
            Report r;
            r.params = {{"v", v_spec}, {"gates", gates_spec}, {"metric", metric_spec}, {"u", u_spec}};
            r.summary = {{"comm_norm", c.comm_norm},
                         {"c", c.conformal},
                         {"aniso_norm", c.aniso_norm},
                         {"rel_gap", optional_json(c.rel_gap)},
                         {"c_rel", c.c_rel},
                         {"gc_acceptable", c.gc_acceptable},
                         {"gc_threshold", kGeometricConsistencyThreshold},
                         {"form", metric.is_diagonal() ? "diagonal" : "dense"},
                         {"v", subspace_summary(v)}};
            if (!u_spec.empty()) {
                ResidualTerms t = residual_terms(inputs.subspace(u_spec), v, metric);
                r.summary["dissipative"] = t.dissipative;
                r.summary["k_nc"] = t.k_nc;
                r.summary["lie_norm"] = t.lie_norm;
                r.summary["lie_identity_residual"] = t.lie_identity_residual;
            }
            return r;
        };
    }
    std::string feat_spec, class_spec, spectrum_spec;
    {
        auto* sub = app.add_subcommand("level3", "Basis-matching Level-3 score");
        sub->add_option("--feat", feat_spec, "U_feat")->required();
        sub->add_option("--class", class_spec, "U_class")->required();
        sub->add_option("--spectrum", spectrum_spec, "Feature singular values, descending")->required();
        handlers[sub] = [&] {
            Subspace f = inputs.subspace(feat_spec), c = inputs.subspace(class_spec);
            Matrix s = inputs.matrix(spectrum_spec);
            std::vector<double> spectrum(s.data(), s.data() + s.size());
            Level3Report l = level3_score(f, c, spectrum);
            Report r;
            r.params = {{"feat", feat_spec}, {"class", class_spec}, {"spectrum", spectrum_spec}};
            r.summary = {{"status", std::string(level3_status_name(l.status))},
                         {"min_relative_gap", std::isfinite(l.min_relative_gap) ? json(l.min_relative_gap) : json(nullptr)},
                         {"gap_guard", kSpectralGapGuard},
                         {"a3", optional_json(l.a3)},
                         {"a3_procrustes", optional_json(l.a3_procrustes)}};
            return r;
        };
    }
    std::string model_dir;
    bool allow_reduction = false;
    int head_trials = 100;
    {
        auto* sub = app.add_subcommand("heads", "Layerwise Frobenius overlap of attention-head query subspaces");
        sub->add_option("--model", model_dir, "Container with layer.<l>.wq tensors")->required();
        sub->add_option("--trials", head_trials, "Haar baseline trials")->check(CLI::Range(2, 1000000));
        sub->add_flag("--allow-rank-reduction", allow_reduction, "Keep numerically deficient heads");
        handlers[sub] = [&] {
            TensorContainer c = load_container(model_dir);
            const fs::path manifest = fs::path(model_dir) / "manifest.json";
            Report r;
            r.inputs.push_back({manifest.string(), sha256_file(manifest)});
            r.params = {{"model", model_dir}, {"trials", head_trials}, {"allow_rank_reduction", allow_reduction}};
            OverlapReport o = model_overlap_report(c, head_trials, common.seed, common.jobs,
                                                   HeadBasisOptions{allow_reduction});
            for (const auto& l : o.layers)
                r.rows.push_back({{"layer", l.layer},
                                  {"tensor", l.tensor},
                                  {"d", l.d},
                                  {"h", l.h},
                                  {"d_k", l.d_k},
                                  {"R", l.R},
                                  {"baseline_mean", l.baseline_mean},
                                  {"baseline_std", l.baseline_std},
                                  {"analytic_baseline", l.analytic},
                                  {"excess", l.excess},
                                  {"significant", l.significant},
                                  {"pairwise", matrix_json(l.pairwise)}});
            r.summary = {{"mean_R", o.mean_R},
                         {"significant_layers", o.significant_layers},
                         {"layers", o.layers.size()},
                         {"trials", o.trials},
                         {"significance_rule", "R > baseline_mean + 2 baseline_std"}};
            return r;
        };
    }
    Eigen::Index hd = 768, hdk = 64, hh = 12;
    {
        auto* sub = app.add_subcommand("haar-baseline", "Empirical Haar baseline of the head overlap");
        sub->add_option("--d", hd, "Ambient dimension");
        sub->add_option("--dk", hdk, "Head width");
        sub->add_option("--heads", hh, "Heads");
        sub->add_option("--trials", head_trials, "Trials")->check(CLI::Range(2, 1000000));
        handlers[sub] = [&] {
            HaarBaseline b = haar_baseline(hd, hdk, hh, head_trials, common.seed, common.jobs);
            Report r;
            r.params = {{"d", hd}, {"d_k", hdk}, {"h", hh}, {"trials", head_trials}};
            for (std::size_t i = 0; i < b.per_trial.size(); ++i) r.rows.push_back({{"trial", i}, {"R", b.per_trial[i]}});
            r.summary = {{"mean", b.mean},
                         {"std", b.std},
                         {"analytic", b.analytic},
                         {"abs_error", std::abs(b.mean - b.analytic)},
                         {"standard_error", b.std / std::sqrt(static_cast<double>(head_trials))}};
            return r;
        };
    }
    std::string w1_spec, w2_spec;
    {
        auto* sub = app.add_subcommand("sharing", "Weight-decay decomposition for two query heads");
        sub->add_option("--w1", w1_spec, "First head matrix")->required();
        sub->add_option("--w2", w2_spec, "Second head matrix")->required();
        handlers[sub] = [&] {
            SharingIdentity s = sharing_identity(inputs.matrix(w1_spec), inputs.matrix(w2_spec));
            Report r;
            r.params = {{"w1", w1_spec}, {"w2", w2_spec}};
            r.summary = {{"penalty", s.penalty},
                         {"half_sum_sq", s.half_sum_sq},
                         {"disagreement", s.disagreement},
                         {"identity_residual", s.identity_residual},
                         {"equality", s.equality}};
            return r;
        };
    }
    int depth = 4, width = 24, epochs = 200, n_per_class = 64, dim = 16, classes = 4;
    double lr = 0.05, separation = 4.0;
    std::string activation = "relu", init = "xavier_uniform", dump_dir;
    std::uint64_t data_seed = 1234;
    auto add_data_options = [&](CLI::App* sub) {
        sub->add_option("--n-per-class", n_per_class, "Samples per class");
        sub->add_option("--dim", dim, "Input dimension");
        sub->add_option("--classes", classes, "Classes");
        sub->add_option("--separation", separation, "Cluster mean radius");
        sub->add_option("--data-seed", data_seed, "Dataset seed");
        sub->add_option("--width", width, "Hidden width");
        sub->add_option("--lr", lr, "Peak learning rate");
        sub->add_option("--epochs", epochs, "Full-batch epochs");
    };
    {
        auto* sub = app.add_subcommand("train-mlp", "Train one MLP and report its commutator diagnostics");
        sub->add_option("--depth", depth, "Linear layers");
        sub->add_option("--activation", activation, "linear | relu");
        sub->add_option("--init", init, "xavier_uniform | orthogonal");
        sub->add_option("--dump", dump_dir, "Write features, gates and weights as a container");
        add_data_options(sub);
        handlers[sub] = [&] {
            ExperimentArch arch;
            arch.tag = activation + "-" + std::to_string(depth);
            arch.config = mlp_config_from(depth, width, activation, init, lr, epochs, common.seed);
            Dataset data = make_synthetic_dataset(data_seed, n_per_class, dim, classes, separation);
            TrainResult trained = train_mlp(arch.config, data);
            FeatureExtraction fx = extract_features(trained.model, data.inputs);
            ActivationMetric metric = estimate_D2_diag(fx.gates);
            CommutatorReport c = commutator_report(metric, fx.basis);
            if (!dump_dir.empty()) save_container(experiment_container(trained.model, fx), dump_dir);

            Report r;
            r.params = {{"depth", depth},        {"width", width},     {"activation", activation},
                        {"init", init},          {"lr", lr},           {"epochs", epochs},
                        {"n_per_class", n_per_class}, {"dim", dim},    {"classes", classes},
                        {"separation", separation},   {"data_seed", data_seed}};
            for (std::size_t e = 0; e < trained.loss_history.size(); ++e)
                r.rows.push_back({{"epoch", e}, {"loss", trained.loss_history[e]}});
            r.summary = {{"train_accuracy", trained.train_accuracy},
                         {"feature_rank", fx.basis.rank()},
                         {"c", c.conformal},
                         {"comm_norm", c.comm_norm},
                         {"d2_mean", metric.diagonal_entries().mean()},
                         {"rel_gap", optional_json(c.rel_gap)},
                         {"gc_acceptable", c.gc_acceptable}};
            return r;
        };
    }
    std::vector<std::string> arch_specs = {"linear-8", "relu-4"};
    int n_seeds = 5;
    {
        auto* sub = app.add_subcommand("nc-experiment", "Linear-versus-ReLU commutator table over seeds");
        sub->add_option("--arch", arch_specs, "<activation>-<depth>[-<init>], repeatable");
        sub->add_option("--seeds", n_seeds, "Seeds per row (seed, seed+1, ...)")->check(CLI::Range(3, 10000));
        add_data_options(sub);
        handlers[sub] = [&] {
            std::vector<ExperimentArch> archs;
            for (const auto& s : arch_specs) archs.push_back(parse_arch(s, width, lr, epochs));
            std::vector<std::uint64_t> seeds;
            for (int i = 0; i < n_seeds; ++i) seeds.push_back(common.seed + static_cast<std::uint64_t>(i));
            ExperimentData data{n_per_class, dim, classes, separation, data_seed};
            auto rows = commutator_experiment(archs, seeds, data, common.jobs);
            Report r;
            r.params = {{"arch", arch_specs},     {"seeds", n_seeds}, {"width", width},
                        {"lr", lr},               {"epochs", epochs}, {"n_per_class", n_per_class},
                        {"dim", dim},             {"classes", classes}, {"separation", separation},
                        {"data_seed", data_seed}};
            int excluded = 0;
            for (const auto& row : rows) {
                json per_seed = json::array();
                for (const auto& s : row.seeds)
                    per_seed.push_back({{"seed", s.seed},
                                        {"c", s.conformal},
                                        {"comm_norm", s.comm_norm},
                                        {"d2_mean", s.d2_mean},
                                        {"train_accuracy", s.train_accuracy},
                                        {"feature_rank", s.feature_rank}});
                r.rows.push_back({{"model", row.tag},
                                  {"c_mean", row.c_mean},
                                  {"c_std", row.c_std},
                                  {"comm_mean", row.comm_mean},
                                  {"comm_std", row.comm_std},
                                  {"comm_min", row.comm_min},
                                  {"d2_mean", row.d2_mean},
                                  {"accuracy_mean", row.accuracy_mean},
                                  {"level3_status", row.level3_status},
                                  {"excluded", row.excluded},
                                  {"exclusion_reason", row.exclusion_reason},
                                  {"per_seed", per_seed}});
                excluded += row.excluded ? 1 : 0;
            }
            r.summary = {{"rows", rows.size()}, {"excluded_rows", excluded}, {"dying_threshold", kDyingThreshold}};
            return r;
        };
    }

    std::vector<const char*> argv;
    argv.push_back("flagdiag");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "flagdiag: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        common.seed = static_cast<std::uint64_t>(std::stoull(seed_text));
    } catch (const std::exception&) {
        err << "flagdiag: seed '" << seed_text << "' is not a non-negative integer\n";
        return kExitUsage;
    }

    CLI::App* selected = app.get_subcommands().front();
    try {
        Report report = handlers.at(selected)();
        report.command = selected->get_name();
        report.params["seed"] = common.seed;
        for (const auto& d : inputs.digests()) report.inputs.push_back(d);
        std::ostringstream buffer;
        if (common.csv)
            report.write_csv(buffer);
        else
            report.write_jsonl(buffer);
        if (common.out_path.empty()) {
            out << buffer.str();
        } else {
            std::ofstream f(common.out_path, std::ios::trunc);
            f << buffer.str();
            if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + common.out_path);
        }
    } catch (const std::exception& e) {
        err << "flagdiag: " << e.what() << '\n';
        return kExitComputation;
    }
    return kExitOk;
}

}  // namespace flagdiag
