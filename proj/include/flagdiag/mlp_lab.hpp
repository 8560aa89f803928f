// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flagdiag/activation_metric.hpp"
#include "flagdiag/grassmann.hpp"
#include "flagdiag/tensor_io.hpp"

namespace flagdiag {

enum class Activation { Linear, Relu };
enum class Init { XavierUniform, Orthogonal };

Activation parse_activation(std::string_view name);
Init parse_init(std::string_view name);
std::string_view activation_name(Activation a);
std::string_view init_name(Init i);

/// depth counts linear layers: input -> width, (depth - 2) x width -> width,
/// width -> classes, with the activation after every layer but the last.
/// Full-batch gradient descent with heavy-ball momentum, coupled weight decay
/// and a cosine learning-rate schedule.
struct MlpConfig {
    int depth = 4;
    int width = 24;
    Activation activation = Activation::Relu;
    Init init = Init::XavierUniform;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 200;
    std::uint64_t seed = 0;

    /// Throws InvalidParams.
    void validate() const;
};

struct Dataset {
    Matrix inputs;            // n x dim
    std::vector<int> labels;  // in [0, classes)
    int classes = 0;
};

/// Gaussian clusters with unit covariance around separation * (unit direction)
/// per class. Directions are a Haar orthonormal frame when classes <= dim and
/// independent random unit vectors otherwise. Sample i belongs to class i % classes.
Dataset make_synthetic_dataset(std::uint64_t seed, int n_per_class, int dim, int classes, double separation);

struct Mlp {
    Activation activation = Activation::Relu;
    std::vector<Matrix> weights;  // out x in
    std::vector<Vector> biases;

    Matrix logits(const Matrix& inputs) const;
};

struct TrainResult {
    Mlp model;
    double train_accuracy = 0.0;
    std::vector<double> loss_history;  // mean cross-entropy before each update
};

/// Throws Diverged when the loss or any weight becomes non-finite.
TrainResult train_mlp(const MlpConfig& config, const Dataset& data);

double accuracy(const Mlp& model, const Dataset& data);

/// Softmax regression on the raw inputs, trained by full-batch gradient descent;
/// returns training accuracy.
double linear_probe_accuracy(const Dataset& data, int epochs = 300, double learning_rate = 0.5);

inline constexpr double kFeatureVarianceFraction = 0.99;

struct FeatureExtraction {
    Matrix features;               // n x width, penultimate activations
    std::vector<double> spectrum;  // singular values of the features, descending
    Subspace basis;                // leading right singular vectors past 99% of the energy
    Matrix gates;                  // n x width, activation derivative at the last interface
};

FeatureExtraction extract_features(const Mlp& model, const Matrix& inputs);

/// Tensors "features", "gates.final", "weights.<i>", "biases.<i>" for re-analysis.
TensorContainer experiment_container(const Mlp& model, const FeatureExtraction& extraction);

struct ExperimentArch {
    std::string tag;
    MlpConfig config;
    /// Added to the last hidden bias after training. A large negative value kills
    /// every unit at the last interface; used to exercise the dying-unit gate.
    double dead_bias_shift = 0.0;
};

struct ExperimentData {
    int n_per_class = 64;
    int dim = 16;
    int classes = 4;
    double separation = 4.0;
    std::uint64_t seed = 1234;
};

inline constexpr double kDyingThreshold = 0.05;

struct SeedResult {
    std::uint64_t seed = 0;
    double conformal = 0.0;
    double comm_norm = 0.0;
    double d2_mean = 0.0;
    double train_accuracy = 0.0;
    Eigen::Index feature_rank = 0;
    Level3Report level3;
};

struct ExperimentRow {
    std::string tag;
    double c_mean = 0.0;
    double c_std = 0.0;
    double comm_mean = 0.0;
    double comm_std = 0.0;
    double comm_min = 0.0;
    double d2_mean = 0.0;
    double accuracy_mean = 0.0;
    std::string level3_status;  // well_defined only if every seed is
    bool excluded = false;
    std::string exclusion_reason;
    std::vector<SeedResult> seeds;
};

SeedResult run_seed(const ExperimentArch& arch, const Dataset& data, std::uint64_t seed);

/// One row per architecture, statistics over seeds (sample std). Needs >= 3 seeds.
std::vector<ExperimentRow> commutator_experiment(const std::vector<ExperimentArch>& archs,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const ExperimentData& data = {}, int jobs = 1);

}  // namespace flagdiag
