// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "qcg/error.hpp"

namespace qcg {

/// A report cell; monostate renders as an empty CSV field / JSON null.
using Cell = std::variant<std::monostate, bool, std::int64_t, double, std::string>;

enum class OutputFormat { table, csv, json };

inline OutputFormat parse_output_format(const std::string& s) {
  if (s == "table") return OutputFormat::table;
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  throw Error(ErrorKind::parameter, "unknown output format '" + s + "'");
}

/// Tabular result with a fixed column set; every analysis emits one.
struct Report {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    require(row.size() == columns.size(), ErrorKind::inconsistency, "report row width differs from header");
    rows.push_back(std::move(row));
  }
};

inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string cell_text(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return format_number(d); }
    std::string operator()(const std::string& s) const { return s; }
  } visitor;
  return std::visit(visitor, c);
}

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string to_csv(const Report& r) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_field(fields[i]);
    }
    out += "\r\n";
  };
  line(r.columns);
  for (const auto& row : r.rows) {
    std::vector<std::string> f;
    for (const auto& c : row) f.push_back(cell_text(c));
    line(f);
  }
  return out;
}

inline nlohmann::json to_json(const Report& r) {
  auto arr = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < r.columns.size(); ++i) {
      const auto& c = row[i];
      nlohmann::json v;
      if (const auto* b = std::get_if<bool>(&c)) v = *b;
      else if (const auto* n = std::get_if<std::int64_t>(&c)) v = *n;
      else if (const auto* d = std::get_if<double>(&c)) v = std::isfinite(*d) ? nlohmann::json(*d) : nlohmann::json();
      else if (const auto* s = std::get_if<std::string>(&c)) v = *s;
      obj[r.columns[i]] = v;
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

inline std::string to_table(const Report& r) {
  std::vector<std::size_t> width(r.columns.size());
  std::vector<std::vector<std::string>> text;
  for (std::size_t i = 0; i < r.columns.size(); ++i) width[i] = r.columns[i].size();
  for (const auto& row : r.rows) {
    std::vector<std::string> t;
    for (std::size_t i = 0; i < row.size(); ++i) {
      auto s = cell_text(row[i]);
      if (s.empty()) s = "n/a";
      width[i] = std::max(width[i], s.size());
      t.push_back(std::move(s));
    }
    text.push_back(std::move(t));
  }
  std::string out;
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += "  ";
      out += f[i];
      if (i + 1 < f.size()) out.append(width[i] - f[i].size(), ' ');
    }
    out += '\n';
  };
  line(r.columns);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& t : text) line(t);
  return out;
}

inline std::string render(const Report& r, OutputFormat f) {
  switch (f) {
    case OutputFormat::csv: return to_csv(r);
    case OutputFormat::json: return to_json(r).dump(2) + "\n";
    case OutputFormat::table: return to_table(r);
  }
  return to_table(r);
}

}  // namespace qcg
