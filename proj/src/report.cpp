// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "flagdiag/report.hpp"

#include <cmath>
#include <sstream>

#include "flagdiag/error.hpp"

namespace flagdiag {

using nlohmann::json;

namespace {

void check_finite(const json& j, const std::string& where) {
    if (j.is_number_float()) {
        if (!std::isfinite(j.get<double>())) throw Error(ErrorCode::NonFinite, "report field " + where);
    } else if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) check_finite(it.value(), where + "." + it.key());
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) check_finite(j[i], where + "[" + std::to_string(i) + "]");
    }
}

std::string csv_cell(const json& v) {
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string quoted = "\"";
        for (char c : s) {
            if (c == '"') quoted += '"';
            quoted += c;
        }
        return quoted + "\"";
    }
    if (v.is_null()) return "";
    return v.dump();
}

}  // namespace

void Report::validate() const {
    check_finite(params, "params");
    for (std::size_t i = 0; i < rows.size(); ++i) check_finite(rows[i], "rows[" + std::to_string(i) + "]");
    check_finite(summary, "summary");
}

void Report::write_jsonl(std::ostream& out) const {
    validate();
    json header;
    header["schema"] = kReportSchema;
    header["tool_version"] = kToolVersion;
    header["command"] = command;
    header["params"] = params;
    json ins = json::array();
    for (const auto& in : inputs) ins.push_back({{"path", in.path}, {"sha256", in.sha256}});
    header["inputs"] = std::move(ins);
    out << header.dump() << '\n';
    for (const auto& row : rows) out << json{{"row", row}}.dump() << '\n';
    out << json{{"summary", summary}}.dump() << '\n';
}

void Report::write_csv(std::ostream& out) const {
    validate();
    if (rows.empty()) {
        for (auto it = summary.begin(); it != summary.end(); ++it)
            if (!it.value().is_structured()) out << it.key() << ',' << csv_cell(it.value()) << '\n';
        return;
    }
    std::vector<std::string> columns;
    for (auto it = rows.front().begin(); it != rows.front().end(); ++it)
        if (!it.value().is_structured()) columns.push_back(it.key());
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < columns.size(); ++c)
            out << (c ? "," : "") << (row.contains(columns[c]) ? csv_cell(row[columns[c]]) : "");
        out << '\n';
    }
}

Report read_report(std::istream& in) {
    Report r;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (!header) {
            if (j.value("schema", "") != kReportSchema)
                throw Error(ErrorCode::ManifestInvalid, "not a " + std::string(kReportSchema) + " report");
            r.command = j.at("command").get<std::string>();
            r.params = j.at("params");
            for (const auto& i : j.at("inputs")) r.inputs.push_back({i.at("path"), i.at("sha256")});
            header = true;
        } else if (j.contains("row")) {
            r.rows.push_back(j["row"]);
        } else if (j.contains("summary")) {
            r.summary = j["summary"];
        }
    }
    if (!header) throw Error(ErrorCode::ManifestInvalid, "empty report");
    return r;
}

}  // namespace flagdiag
