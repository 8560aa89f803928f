// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace flagdiag {

inline constexpr const char* kReportSchema = "flagdiag-report/1";
inline constexpr const char* kToolVersion = "0.1.0";

struct InputDigest {
    std::string path;
    std::string sha256;
};

/// Machine-readable command output. Serialized as line-delimited JSON: a header
/// record, one {"row": ...} record per row, then a {"summary": ...} record.
struct Report {
    std::string command;
    nlohmann::json params = nlohmann::json::object();
    std::vector<InputDigest> inputs;
    std::vector<nlohmann::json> rows;
    nlohmann::json summary = nlohmann::json::object();

    /// Throws NonFinite if any number in the report is NaN or infinite.
    void validate() const;

    void write_jsonl(std::ostream& out) const;
    /// Scalar row fields only; columns from the first row, in key order.
    void write_csv(std::ostream& out) const;
};

/// Parses the line-delimited form back.
Report read_report(std::istream& in);

}  // namespace flagdiag
