// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flagdiag/linalg.hpp"

namespace flagdiag {

enum class DType { F32, F64 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_width(DType dtype);

// Layout tags understood by the readers.
inline constexpr std::string_view kLayoutRowMajor = "row_major_matrix";
inline constexpr std::string_view kLayoutCombinedQkv = "combined_qkv_in_by_out";
inline constexpr std::string_view kLayoutQprojOutByIn = "qproj_out_by_in";

/// A named tensor: manifest metadata plus values widened to double, row-major.
struct Tensor {
    std::string name;
    DType dtype = DType::F64;
    std::vector<std::int64_t> shape;
    std::string file;
    std::uint64_t byte_offset = 0;
    std::string layout = std::string(kLayoutRowMajor);
    std::map<std::string, std::string> attrs;
    std::optional<std::string> sha256;
    std::vector<double> values;

    std::size_t element_count() const;

    /// Rows = shape[0], cols = product of the remaining dims (1 for vectors).
    Matrix as_matrix() const;

    static Tensor from_matrix(std::string name, const Matrix& m, DType dtype = DType::F64,
                              std::string layout = std::string(kLayoutRowMajor));
};

class TensorContainer {
public:
    TensorContainer() = default;
    explicit TensorContainer(std::vector<Tensor> tensors);

    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }

    const Tensor* find(std::string_view name) const;
    /// Throws UnknownTensor.
    const Tensor& at(std::string_view name) const;

    /// Appends; throws DuplicateName.
    void add(Tensor tensor);

private:
    std::vector<Tensor> tensors_;
};

struct LoadOptions {
    bool allow_nonfinite = false;
};

TensorContainer load_container(const std::filesystem::path& root, const LoadOptions& options = {});

/// Writes manifest.json and blobs under `root` (created if needed). Tensors with an
/// empty `file` get "<name>.bin"; tensors sharing a file are packed in order and
/// their byte_offset is recomputed. A sha256 is always written.
void save_container(const TensorContainer& container, const std::filesystem::path& root);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Little-endian encoding of a tensor's values at its declared dtype.
std::vector<std::uint8_t> encode_values(const Tensor& tensor);

}  // namespace flagdiag
