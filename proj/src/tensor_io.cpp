// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "flagdiag/error.hpp"
#include "json.hpp"

namespace flagdiag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

template <typename T>
T byteswap_value(T v) {
    std::array<std::uint8_t, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

template <typename T>
T read_le(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    return v;
}

template <typename T>
void write_le(T v, std::uint8_t* p) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    std::memcpy(p, &v, sizeof(T));
}

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw Error(ErrorCode::ManifestInvalid, "unsupported dtype '" + s + "'");
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingBlob, "cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Tensor parse_entry(const json& j) {
    Tensor t;
    try {
        t.name = j.at("name").get<std::string>();
        t.dtype = parse_dtype(j.at("dtype").get<std::string>());
        t.shape = j.at("shape").get<std::vector<std::int64_t>>();
        t.file = j.at("file").get<std::string>();
        t.byte_offset = j.value("byte_offset", std::uint64_t{0});
        t.layout = j.value("layout", std::string(kLayoutRowMajor));
        if (j.contains("attrs")) t.attrs = j.at("attrs").get<std::map<std::string, std::string>>();
        if (j.contains("sha256")) t.sha256 = j.at("sha256").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ManifestInvalid, e.what());
    }
    if (t.shape.empty())
        throw Error(ErrorCode::ManifestInvalid, t.name + ": empty shape");
    for (auto s : t.shape)
        if (s <= 0) throw Error(ErrorCode::ManifestInvalid, t.name + ": non-positive dimension");
    return t;
}

}  // namespace

std::string_view dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

std::size_t dtype_width(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= static_cast<std::size_t>(s);
    return n;
}

Matrix Tensor::as_matrix() const {
    const Eigen::Index rows = shape.empty() ? 0 : shape[0];
    const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(element_count()) / rows;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
    return m;
}

Tensor Tensor::from_matrix(std::string name, const Matrix& m, DType dtype, std::string layout) {
    Tensor t;
    t.name = std::move(name);
    t.dtype = dtype;
    t.shape = {m.rows(), m.cols()};
    t.layout = std::move(layout);
    t.values.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            if (dtype == DType::F32) v = static_cast<double>(static_cast<float>(v));
            t.values[i * m.cols() + j] = v;
        }
    return t;
}

TensorContainer::TensorContainer(std::vector<Tensor> tensors) {
    for (auto& t : tensors) add(std::move(t));
}

const Tensor* TensorContainer::find(std::string_view name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return &t;
    return nullptr;
}

const Tensor& TensorContainer::at(std::string_view name) const {
    if (const Tensor* t = find(name)) return *t;
    throw Error(ErrorCode::UnknownTensor, "no tensor named '" + std::string(name) + "'");
}

void TensorContainer::add(Tensor tensor) {
    if (find(tensor.name)) throw Error(ErrorCode::DuplicateName, tensor.name);
    tensors_.push_back(std::move(tensor));
}

std::vector<std::uint8_t> encode_values(const Tensor& tensor) {
    const std::size_t width = dtype_width(tensor.dtype);
    std::vector<std::uint8_t> out(tensor.values.size() * width);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        if (tensor.dtype == DType::F32)
            write_le(static_cast<float>(tensor.values[i]), out.data() + i * width);
        else
            write_le(tensor.values[i], out.data() + i * width);
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorCode::IoFailure, "sha256 failed");
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
    return os.str();
}

std::string sha256_file(const fs::path& path) {
    auto bytes = read_file(path);
    return sha256_hex(bytes);
}

TensorContainer load_container(const fs::path& root, const LoadOptions& options) {
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw Error(ErrorCode::ManifestInvalid, "missing " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ManifestInvalid, e.what());
    }
    if (manifest.value("version", 0) != kManifestVersion)
        throw Error(ErrorCode::ManifestInvalid, "unsupported manifest version");
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
        throw Error(ErrorCode::ManifestInvalid, "manifest has no tensor list");

    std::map<std::string, std::vector<std::uint8_t>> blobs;
    TensorContainer container;
    for (const auto& j : manifest["tensors"]) {
        Tensor t = parse_entry(j);
        if (container.find(t.name)) throw Error(ErrorCode::DuplicateName, t.name);

        auto it = blobs.find(t.file);
        if (it == blobs.end()) {
            const fs::path blob_path = root / t.file;
            if (!fs::exists(blob_path))
                throw Error(ErrorCode::MissingBlob, t.name + " -> " + blob_path.string());
            it = blobs.emplace(t.file, read_file(blob_path)).first;
        }
        const auto& blob = it->second;
        const std::size_t width = dtype_width(t.dtype);
        const std::size_t nbytes = t.element_count() * width;
        if (t.byte_offset > blob.size() || nbytes > blob.size() - t.byte_offset)
            throw Error(ErrorCode::ShapeMismatch,
                        t.name + ": declares " + std::to_string(nbytes) + " bytes at offset " +
                            std::to_string(t.byte_offset) + " but " + t.file + " has " +
                            std::to_string(blob.size()));
        const std::uint8_t* base = blob.data() + t.byte_offset;
        if (t.sha256) {
            std::string actual = sha256_hex(std::span(base, nbytes));
            if (actual != *t.sha256)
                throw Error(ErrorCode::ChecksumMismatch, t.name + ": sha256 " + actual);
        }
        t.values.resize(t.element_count());
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            t.values[i] = t.dtype == DType::F32
                              ? static_cast<double>(read_le<float>(base + i * width))
                              : read_le<double>(base + i * width);
            if (!options.allow_nonfinite && !std::isfinite(t.values[i]))
                throw Error(ErrorCode::NonFinite, t.name + " element " + std::to_string(i));
        }
        container.add(std::move(t));
    }
    return container;
}

void save_container(const TensorContainer& container, const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + root.string());

    std::map<std::string, std::vector<std::uint8_t>> blobs;
    std::vector<std::string> blob_order;
    json entries = json::array();
    for (const auto& t : container.tensors()) {
        if (t.values.size() != t.element_count())
            throw Error(ErrorCode::ShapeMismatch, t.name + ": value count does not match shape");
        const std::string file = t.file.empty() ? t.name + ".bin" : t.file;
        auto [it, inserted] = blobs.try_emplace(file);
        if (inserted) blob_order.push_back(file);
        auto bytes = encode_values(t);
        const std::uint64_t offset = it->second.size();
        it->second.insert(it->second.end(), bytes.begin(), bytes.end());

        json e;
        e["name"] = t.name;
        e["dtype"] = std::string(dtype_name(t.dtype));
        e["shape"] = t.shape;
        e["file"] = file;
        e["byte_offset"] = offset;
        e["layout"] = t.layout;
        e["attrs"] = t.attrs;
        e["sha256"] = sha256_hex(bytes);
        entries.push_back(std::move(e));
    }

    for (const auto& file : blob_order) {
        const auto& bytes = blobs[file];
        std::ofstream out(root / file, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (root / file).string());
    }

    json manifest;
    manifest["version"] = kManifestVersion;
    manifest["tensors"] = std::move(entries);
    std::ofstream out(root / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write manifest in " + root.string());
}

}  // namespace flagdiag
