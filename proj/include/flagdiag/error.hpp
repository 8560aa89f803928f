// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flagdiag {

enum class ErrorCode {
    MissingBlob,
    ShapeMismatch,
    DuplicateName,
    NonFinite,
    IoFailure,
    ManifestInvalid,
    ChecksumMismatch,
    RankDeficient,
    ZeroMatrix,
    DimensionMismatch,
    InvalidRanks,
    DegenerateInput,
    UnknownStatistic,
    NonPositiveLambda,
    StepTooLarge,
    EmptyBatch,
    ZeroConformal,
    UnknownLayout,
    ShapeInconsistent,
    RankDeficientHead,
    InvalidDims,
    InvalidParams,
    Diverged,
    UnknownTensor,
    NotOrthonormal,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace flagdiag
