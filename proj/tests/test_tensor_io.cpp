// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "flagdiag/tensor_io.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace flagdiag;
using flagdiag::testing::error_of;
using flagdiag::testing::TempDir;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Hand-rolled little-endian f64 encoding, independent of encode_values.
std::vector<std::uint8_t> le_f64(const std::vector<double>& values) {
    std::vector<std::uint8_t> out;
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
    return out;
}

void write_manifest(const std::filesystem::path& root, const json& tensors) {
    std::ofstream(root / "manifest.json") << json{{"version", 1}, {"tensors", tensors}}.dump();
}

json entry(const std::string& name, const std::string& file, std::vector<int> shape, std::string dtype = "f64") {
    return {{"name", name},   {"dtype", dtype},
            {"shape", shape}, {"file", file},
            {"byte_offset", 0}, {"layout", "row_major_matrix"},
            {"attrs", json::object()}};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return gaussian_matrix(r, c, rng);
}

}  // namespace

TEST_CASE("hand-written manifest with a 2x2 identity loads") {
    TempDir dir;
    write_bytes(dir / "eye.bin", le_f64({1, 0, 0, 1}));
    write_manifest(dir.path(), json::array({entry("eye", "eye.bin", {2, 2})}));
    TensorContainer c = load_container(dir.path());
    REQUIRE(c.size() == 1);
    CHECK(c.at("eye").as_matrix() == Matrix::Identity(2, 2));
}

TEST_CASE("missing blob") {
    TempDir dir;
    write_manifest(dir.path(), json::array({entry("w", "nowhere.bin", {2, 2})}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::MissingBlob);
}

TEST_CASE("declared bytes exceeding the blob") {
    TempDir dir;
    write_bytes(dir / "short.bin", le_f64({1, 2, 3}));
    write_manifest(dir.path(), json::array({entry("w", "short.bin", {2, 2})}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ShapeMismatch);

    json off = entry("w", "short.bin", {1, 3});
    off["byte_offset"] = 8;
    write_manifest(dir.path(), json::array({off}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("duplicate names are rejected on load and on add") {
    TempDir dir;
    write_bytes(dir / "a.bin", le_f64({1}));
    write_manifest(dir.path(), json::array({entry("w", "a.bin", {1}), entry("w", "a.bin", {1})}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::DuplicateName);

    TensorContainer c;
    c.add(Tensor::from_matrix("x", Matrix::Zero(1, 1)));
    CHECK(error_of([&] { c.add(Tensor::from_matrix("x", Matrix::Zero(1, 1))); }) == ErrorCode::DuplicateName);
}

TEST_CASE("non-finite values need allow_nonfinite") {
    TempDir dir;
    write_bytes(dir / "n.bin", le_f64({1.0, std::numeric_limits<double>::quiet_NaN()}));
    write_manifest(dir.path(), json::array({entry("n", "n.bin", {2})}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::NonFinite);
    TensorContainer c = load_container(dir.path(), LoadOptions{true});
    CHECK(std::isnan(c.at("n").values[1]));
}

TEST_CASE("checksum is verified when present") {
    TempDir dir;
    const auto bytes = le_f64({3.0, 4.0});
    write_bytes(dir / "v.bin", bytes);
    json e = entry("v", "v.bin", {2});
    e["sha256"] = sha256_hex(bytes);
    write_manifest(dir.path(), json::array({e}));
    CHECK(load_container(dir.path()).at("v").values == std::vector<double>{3.0, 4.0});

    e["sha256"] = std::string(64, '0');
    write_manifest(dir.path(), json::array({e}));
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ChecksumMismatch);
}

TEST_CASE("malformed manifests") {
    TempDir dir;
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ManifestInvalid);
    std::ofstream(dir / "manifest.json") << "{not json";
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ManifestInvalid);
    std::ofstream(dir / "manifest.json") << json{{"version", 2}, {"tensors", json::array()}}.dump();
    CHECK(error_of([&] { load_container(dir.path()); }) == ErrorCode::ManifestInvalid);
}

TEST_CASE("sha256 of a known string") {
    const std::string abc = "abc";
    std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
    CHECK(sha256_hex(bytes) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("empty container round-trips") {
    TempDir dir;
    save_container(TensorContainer{}, dir.path());
    std::ifstream in(dir / "manifest.json");
    json m = json::parse(in);
    CHECK(m["version"] == 1);
    CHECK(m["tensors"].empty());
    CHECK(load_container(dir.path()).size() == 0);
}

TEST_CASE("1x1 value 0.5 is written as 8 little-endian bytes") {
    TempDir dir;
    TensorContainer c;
    Matrix m(1, 1);
    m(0, 0) = 0.5;
    c.add(Tensor::from_matrix("half", m));
    save_container(c, dir.path());
    const std::vector<std::uint8_t> expected = {0, 0, 0, 0, 0, 0, 0xE0, 0x3F};
    CHECK(read_bytes(dir / "half.bin") == expected);
}

TEST_CASE("random 16x16 f64 round-trips exactly") {
    TempDir dir;
    const Matrix m = random_matrix(16, 16, 11);
    TensorContainer c;
    c.add(Tensor::from_matrix("w", m));
    save_container(c, dir.path());
    const Matrix back = load_container(dir.path()).at("w").as_matrix();
    CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("f32 combined QKV tensor keeps its shape and exact float values") {
    TempDir dir;
    const Matrix m = random_matrix(768, 2304, 5);
    TensorContainer c;
    Tensor t = Tensor::from_matrix("layer.0.wq", m, DType::F32, std::string(kLayoutCombinedQkv));
    t.attrs = {{"h", "12"}, {"d_k", "64"}, {"d", "768"}};
    c.add(t);
    save_container(c, dir.path());
    TensorContainer back = load_container(dir.path());
    const Tensor& r = back.at("layer.0.wq");
    CHECK(r.dtype == DType::F32);
    CHECK(r.layout == kLayoutCombinedQkv);
    CHECK(r.attrs.at("d_k") == "64");
    const Matrix got = r.as_matrix();
    REQUIRE(got.rows() == 768);
    REQUIRE(got.cols() == 2304);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            worst = std::max(worst, std::abs(got(i, j) - static_cast<double>(static_cast<float>(m(i, j)))));
    CHECK(worst == 0.0);
    CHECK(std::filesystem::file_size(dir / "layer.0.wq.bin") == 768u * 2304u * 4u);
}

TEST_CASE("save, load, save gives byte-identical blobs") {
    TempDir a, b;
    TensorContainer c;
    c.add(Tensor::from_matrix("x", random_matrix(3, 5, 1)));
    c.add(Tensor::from_matrix("y", random_matrix(4, 2, 2), DType::F32));
    Tensor packed1 = Tensor::from_matrix("p.0", random_matrix(2, 2, 3));
    Tensor packed2 = Tensor::from_matrix("p.1", random_matrix(3, 1, 4));
    packed1.file = packed2.file = "packed.bin";
    c.add(packed1);
    c.add(packed2);
    save_container(c, a.path());
    save_container(load_container(a.path()), b.path());
    for (const char* f : {"manifest.json", "x.bin", "y.bin", "packed.bin"})
        CHECK_MESSAGE(read_bytes(a / f) == read_bytes(b / f), f);
    TensorContainer back = load_container(b.path());
    CHECK(back.at("p.1").byte_offset == 32);
    CHECK(back.at("p.1").as_matrix() == packed2.as_matrix());
}

TEST_CASE("vector tensors read as a column") {
    Tensor t;
    t.name = "v";
    t.shape = {3};
    t.values = {1, 2, 3};
    const Matrix m = t.as_matrix();
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 1);
    CHECK(m(2, 0) == 3);
}

TEST_CASE("unknown tensor lookup") {
    TensorContainer c;
    CHECK(c.find("nope") == nullptr);
    CHECK(error_of([&] { c.at("nope"); }) == ErrorCode::UnknownTensor);
}
