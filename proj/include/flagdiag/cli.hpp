// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "flagdiag/grassmann.hpp"
#include "flagdiag/report.hpp"

namespace flagdiag {

inline constexpr int kExitOk = 0;
inline constexpr int kExitComputation = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the flagdiag tool. The report goes to --out when given,
/// otherwise to `out`; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A matrix argument: "<container-dir>:<tensor-name>" or a path to a small CSV
/// file of comma-separated rows. The digest of the input is appended to `inputs`.
Matrix load_matrix_arg(const std::string& spec, std::vector<InputDigest>* inputs = nullptr);

/// Parses "1,2,3" into integers or reals.
std::vector<std::int64_t> parse_int_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);

}  // namespace flagdiag
