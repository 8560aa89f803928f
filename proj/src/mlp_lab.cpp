// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/mlp_lab.hpp"

#include <cmath>
#include <numbers>

#include "flagdiag/error.hpp"
#include "flagdiag/parallel.hpp"

namespace flagdiag {

namespace {

Matrix apply_activation(Activation a, const Matrix& z) {
    if (a == Activation::Linear) return z;
    return z.cwiseMax(0.0);
}

Matrix activation_derivative(Activation a, const Matrix& z) {
    if (a == Activation::Linear) return Matrix::Ones(z.rows(), z.cols());
    return (z.array() > 0.0).cast<double>().matrix();
}

Matrix affine(const Matrix& a, const Matrix& w, const Vector& b) {
    Matrix z = a * w.transpose();
    z.rowwise() += b.transpose();
    return z;
}

Matrix init_weight(Init init, Eigen::Index out, Eigen::Index in, Rng& rng) {
    if (init == Init::Orthogonal) {
        if (out >= in) return haar_frame(out, in, rng);
        return haar_frame(in, out, rng).transpose();
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Matrix w(out, in);
    for (Eigen::Index i = 0; i < out; ++i)
        for (Eigen::Index j = 0; j < in; ++j) w(i, j) = uniform(rng);
    return w;
}

// Mean cross-entropy and its gradient with respect to the logits.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* grad) {
    const Eigen::Index n = logits.rows();
    double loss = 0.0;
    if (grad) grad->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
        const double sum = e.sum();
        loss += std::log(sum) + mx - logits(i, labels[i]);
        if (grad) {
            grad->row(i) = e / sum;
            (*grad)(i, labels[i]) -= 1.0;
        }
    }
    if (grad) *grad /= static_cast<double>(n);
    return loss / static_cast<double>(n);
}

bool model_finite(const Mlp& m) {
    for (const auto& w : m.weights)
        if (!w.allFinite()) return false;
    for (const auto& b : m.biases)
        if (!b.allFinite()) return false;
    return true;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "linear") return Activation::Linear;
    if (name == "relu") return Activation::Relu;
    throw Error(ErrorCode::InvalidParams, "unknown activation '" + std::string(name) + "'");
}

Init parse_init(std::string_view name) {
    if (name == "xavier_uniform") return Init::XavierUniform;
    if (name == "orthogonal") return Init::Orthogonal;
    throw Error(ErrorCode::InvalidParams, "unknown init '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) { return a == Activation::Linear ? "linear" : "relu"; }
std::string_view init_name(Init i) { return i == Init::Orthogonal ? "orthogonal" : "xavier_uniform"; }

void MlpConfig::validate() const {
    if (depth < 2) throw Error(ErrorCode::InvalidParams, "depth must be at least 2");
    if (width < 4) throw Error(ErrorCode::InvalidParams, "width must be at least 4");
    if (epochs < 1) throw Error(ErrorCode::InvalidParams, "epochs must be positive");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidParams, "learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw Error(ErrorCode::InvalidParams, "momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw Error(ErrorCode::InvalidParams, "weight decay must be non-negative");
}

Dataset make_synthetic_dataset(std::uint64_t seed, int n_per_class, int dim, int classes, double separation) {
    if (classes < 2) throw Error(ErrorCode::InvalidParams, "need at least two classes");
    if (n_per_class < 1 || dim < 1) throw Error(ErrorCode::InvalidParams, "n_per_class and dim must be positive");
    if (!(separation >= 0.0)) throw Error(ErrorCode::InvalidParams, "separation must be non-negative");

    Rng rng = make_rng(seed);
    Matrix directions;
    if (classes <= dim) {
        directions = haar_frame(dim, classes, rng);
    } else {
        directions = gaussian_matrix(dim, classes, rng);
        for (int k = 0; k < classes; ++k) directions.col(k).normalize();
    }
    const int n = n_per_class * classes;
    Dataset data;
    data.classes = classes;
    data.inputs = gaussian_matrix(n, dim, rng);
    data.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int k = i % classes;
        data.labels[i] = k;
        data.inputs.row(i) += separation * directions.col(k).transpose();
    }
    return data;
}

Matrix Mlp::logits(const Matrix& inputs) const {
    Matrix a = inputs;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Matrix z = affine(a, weights[l], biases[l]);
        a = l + 1 < weights.size() ? apply_activation(activation, z) : std::move(z);
    }
    return a;
}

double accuracy(const Mlp& model, const Dataset& data) {
    Matrix logits = model.logits(data.inputs);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        if (arg == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

TrainResult train_mlp(const MlpConfig& config, const Dataset& data) {
    config.validate();
    const Eigen::Index in = data.inputs.cols();
    const int layers = config.depth;

    Rng rng = make_rng(config.seed, 0x6d6c70);
    TrainResult result;
    Mlp& m = result.model;
    m.activation = config.activation;
    for (int l = 0; l < layers; ++l) {
        const Eigen::Index fan_in = l == 0 ? in : config.width;
        const Eigen::Index fan_out = l + 1 == layers ? data.classes : config.width;
        m.weights.push_back(init_weight(config.init, fan_out, fan_in, rng));
        m.biases.push_back(Vector::Zero(fan_out));
    }
    std::vector<Matrix> vel_w;
    std::vector<Vector> vel_b;
    for (int l = 0; l < layers; ++l) {
        vel_w.push_back(Matrix::Zero(m.weights[l].rows(), m.weights[l].cols()));
        vel_b.push_back(Vector::Zero(m.biases[l].size()));
    }

    std::vector<Matrix> acts(static_cast<std::size_t>(layers));
    std::vector<Matrix> pre(static_cast<std::size_t>(layers));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        acts[0] = data.inputs;
        for (int l = 0; l < layers; ++l) {
            pre[l] = affine(acts[l], m.weights[l], m.biases[l]);
            if (l + 1 < layers) acts[l + 1] = apply_activation(m.activation, pre[l]);
        }
        Matrix delta;
        const double loss = cross_entropy(pre[layers - 1], data.labels, &delta);
        if (!std::isfinite(loss))
            throw Error(ErrorCode::Diverged, "loss is not finite at epoch " + std::to_string(epoch));
        result.loss_history.push_back(loss);

        const double lr = 0.5 * config.learning_rate *
                          (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(config.epochs)));
        for (int l = layers - 1; l >= 0; --l) {
            Matrix grad_w = delta.transpose() * acts[l];
            Vector grad_b = delta.colwise().sum().transpose();
            if (l > 0) delta = (delta * m.weights[l]).cwiseProduct(activation_derivative(m.activation, pre[l - 1]));
            vel_w[l] = config.momentum * vel_w[l] + grad_w + config.weight_decay * m.weights[l];
            vel_b[l] = config.momentum * vel_b[l] + grad_b + config.weight_decay * m.biases[l];
            m.weights[l] -= lr * vel_w[l];
            m.biases[l] -= lr * vel_b[l];
        }
        if (!model_finite(m))
            throw Error(ErrorCode::Diverged, "weights are not finite at epoch " + std::to_string(epoch));
    }
    const double final_loss = cross_entropy(m.logits(data.inputs), data.labels, nullptr);
    if (!std::isfinite(final_loss)) throw Error(ErrorCode::Diverged, "final loss is not finite");
    result.train_accuracy = accuracy(m, data);
    return result;
}

double linear_probe_accuracy(const Dataset& data, int epochs, double learning_rate) {
    const Eigen::Index dim = data.inputs.cols();
    Mlp probe;
    probe.activation = Activation::Linear;
    probe.weights.push_back(Matrix::Zero(data.classes, dim));
    probe.biases.push_back(Vector::Zero(data.classes));
    for (int e = 0; e < epochs; ++e) {
        Matrix grad;
        cross_entropy(probe.logits(data.inputs), data.labels, &grad);
        probe.weights[0] -= learning_rate * grad.transpose() * data.inputs;
        probe.biases[0] -= learning_rate * grad.colwise().sum().transpose();
    }
    return accuracy(probe, data);
}

FeatureExtraction extract_features(const Mlp& model, const Matrix& inputs) {
    const std::size_t layers = model.weights.size();
    Matrix a = inputs;
    Matrix last_pre;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        last_pre = affine(a, model.weights[l], model.biases[l]);
        a = apply_activation(model.activation, last_pre);
    }
    FeatureExtraction out{a, {}, Subspace::zero(a.cols()), activation_derivative(model.activation, last_pre)};

    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    out.spectrum.assign(s.data(), s.data() + s.size());
    const double energy = s.squaredNorm();
    if (energy > 0.0) {
        Eigen::Index r = 0;
        double kept = 0.0;
        while (r < s.size() && kept / energy <= kFeatureVarianceFraction) {
            kept += s(r) * s(r);
            ++r;
        }
        out.basis = Subspace(svd.matrixV().leftCols(r));
    }
    if (out.gates.cols() != out.basis.ambient_dim())
        throw Error(ErrorCode::DimensionMismatch, "gate width does not match the feature space");
    return out;
}

TensorContainer experiment_container(const Mlp& model, const FeatureExtraction& extraction) {
    TensorContainer c;
    c.add(Tensor::from_matrix("features", extraction.features));
    c.add(Tensor::from_matrix("gates.final", extraction.gates));
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        c.add(Tensor::from_matrix("weights." + std::to_string(l), model.weights[l]));
        c.add(Tensor::from_matrix("biases." + std::to_string(l), Matrix(model.biases[l])));
    }
    return c;
}

SeedResult run_seed(const ExperimentArch& arch, const Dataset& data, std::uint64_t seed) {
    MlpConfig config = arch.config;
    config.seed = seed;
    TrainResult trained = train_mlp(config, data);
    Mlp& model = trained.model;
    if (arch.dead_bias_shift != 0.0 && model.biases.size() >= 2)
        model.biases[model.biases.size() - 2].array() += arch.dead_bias_shift;

    FeatureExtraction fx = extract_features(model, data.inputs);
    // Linear gates are identically one, so this is exactly I for linear models.
    ActivationMetric metric = estimate_D2_diag(fx.gates);

    SeedResult r;
    r.seed = seed;
    r.conformal = metric.conformal();
    r.comm_norm = commutator_norm(metric, fx.basis);
    r.d2_mean = metric.diagonal_entries().mean();
    r.train_accuracy = trained.train_accuracy;
    r.feature_rank = fx.basis.rank();

    // Level-3 on the leading m = min(r_feat, r_class) directions of each side.
    const Matrix& classifier = model.weights.back();
    Eigen::JacobiSVD<Matrix> csvd(classifier, Eigen::ComputeThinV);
    Eigen::Index cls_rank = 0;
    const Vector& cs = csvd.singularValues();
    while (cls_rank < cs.size() && cs(cls_rank) > kRankTolerance * cs(0)) ++cls_rank;
    const Eigen::Index m = std::min(fx.basis.rank(), cls_rank);
    if (m > 0) {
        r.level3 = level3_score(Subspace(fx.basis.basis().leftCols(m)), Subspace(csvd.matrixV().leftCols(m)),
                                fx.spectrum);
    }
    return r;
}

std::vector<ExperimentRow> commutator_experiment(const std::vector<ExperimentArch>& archs,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const ExperimentData& data_params, int jobs) {
    if (seeds.size() < 3) throw Error(ErrorCode::InvalidParams, "need at least three seeds per row");
    const Dataset data = make_synthetic_dataset(data_params.seed, data_params.n_per_class, data_params.dim,
                                                data_params.classes, data_params.separation);

    const int per_arch = static_cast<int>(seeds.size());
    const int total = static_cast<int>(archs.size()) * per_arch;
    std::vector<SeedResult> results(static_cast<std::size_t>(total));
    parallel_for(total, jobs, [&](int job) {
        results[job] = run_seed(archs[job / per_arch], data, seeds[job % per_arch]);
    });

    std::vector<ExperimentRow> rows;
    for (std::size_t a = 0; a < archs.size(); ++a) {
        ExperimentRow row;
        row.tag = archs[a].tag;
        std::vector<double> cs, comms, d2s, accs;
        bool all_defined = true;
        for (int s = 0; s < per_arch; ++s) {
            const SeedResult& sr = results[a * per_arch + s];
            cs.push_back(sr.conformal);
            comms.push_back(sr.comm_norm);
            d2s.push_back(sr.d2_mean);
            accs.push_back(sr.train_accuracy);
            all_defined = all_defined && sr.level3.status == Level3Status::WellDefined;
            row.seeds.push_back(sr);
        }
        row.c_mean = mean_of(cs);
        row.c_std = sample_std(cs);
        row.comm_mean = mean_of(comms);
        row.comm_std = sample_std(comms);
        row.comm_min = *std::min_element(comms.begin(), comms.end());
        row.d2_mean = mean_of(d2s);
        row.accuracy_mean = mean_of(accs);
        row.level3_status = std::string(level3_status_name(all_defined ? Level3Status::WellDefined
                                                                        : Level3Status::IllDefined));
        if (row.d2_mean < kDyingThreshold) {
            row.excluded = true;
            row.exclusion_reason = "dying units: mean D^2 = " + std::to_string(row.d2_mean) + " < 0.05";
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace flagdiag
