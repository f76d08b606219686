#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dcl/exact.hpp"
#include "dcl/rng.hpp"
#include "dcl/sampling.hpp"

namespace dcl {

/// A flat table with metadata; rendered as JSON or CSV carrying the same data.
struct Report {
  using Cell = std::variant<std::monostate, std::string, double, long long>;
  std::vector<std::pair<std::string, Cell>> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_meta(std::string key, Cell value) { meta.emplace_back(std::move(key), std::move(value)); }
};

enum class ReportFormat { csv, json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw Error("unknown format '" + s + "' (expected csv or json)");
}

namespace detail {

inline nlohmann::ordered_json cell_json(const Report::Cell& c) {
  if (std::holds_alternative<std::string>(c)) return std::get<std::string>(c);
  if (std::holds_alternative<double>(c)) {
    const double v = std::get<double>(c);
    if (!std::isfinite(v)) return nullptr;
    return v;
  }
  if (std::holds_alternative<long long>(c)) return std::get<long long>(c);
  return nullptr;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string cell_csv(const Report::Cell& c) {
  if (std::holds_alternative<std::monostate>(c)) return "";
  if (std::holds_alternative<std::string>(c)) return csv_escape(std::get<std::string>(c));
  const auto j = cell_json(c);
  return j.is_null() ? "" : j.dump();
}

}  // namespace detail

inline void write_report(std::ostream& os, const Report& r, ReportFormat f) {
  if (f == ReportFormat::json) {
    nlohmann::ordered_json j;
    j["meta"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.meta) j["meta"][k] = detail::cell_json(v);
    j["columns"] = r.columns;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
      nlohmann::ordered_json o = nlohmann::ordered_json::object();
      for (std::size_t c = 0; c < r.columns.size(); ++c) o[r.columns[c]] = detail::cell_json(row[c]);
      rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    os << j.dump(1) << "\n";
    return;
  }
  for (const auto& [k, v] : r.meta) os << "# " << k << "=" << detail::cell_csv(v) << "\n";
  for (std::size_t c = 0; c < r.columns.size(); ++c) os << (c ? "," : "") << r.columns[c];
  os << "\n";
  for (const auto& row : r.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << detail::cell_csv(row[c]);
    os << "\n";
  }
}

/// Metadata shared by the exact reports.
inline void add_exact_meta(Report& r, const ExactAnalysis& x) {
  r.add_meta("horizon", static_cast<long long>(x.model.horizon));
  r.add_meta("discount", x.model.discount);
  r.add_meta("returns", to_string(x.enumeration.options.returns));
  r.add_meta("state_values", to_string(x.enumeration.options.state_keys));
  r.add_meta("parameterization", to_string(x.policy.parameterization()));
  r.add_meta("history_classes", static_cast<long long>(x.enumeration.nodes.size()));
  r.add_meta("entries", static_cast<long long>(x.enumeration.num_entries()));
}

inline std::string node_label(const ExactAnalysis& x, std::size_t node) {
  return format_joint_history(x.model, x.enumeration.history(node));
}

/// Visitation and every Q table, one row per entry.
inline Report values_report(const ExactAnalysis& x) {
  Report r;
  add_exact_meta(r, x);
  r.add_meta("J", x.values.expected_return);
  r.columns = {"table", "t", "history", "multiplicity", "state", "action", "value"};
  const auto& en = x.enumeration;
  const auto& v = x.visitation;
  const auto& m = x.model;
  const auto A = en.num_joint_actions;
  using C = Report::Cell;
  const C none{};
  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& nd = en.nodes[n];
    const auto h = node_label(x, n);
    const C t{static_cast<long long>(nd.t)}, mult{nd.multiplicity};
    for (std::size_t e = nd.entry_begin; e < nd.entry_begin + nd.entry_count; ++e) {
      const C s{m.states[en.entry_state[e]]};
      r.rows.push_back({C{"eta"}, t, C{h}, mult, s, none, C{v.eta[e]}});
      r.rows.push_back({C{"rho"}, t, C{h}, mult, s, none, C{v.rho[e]}});
      r.rows.push_back({C{"rho_s_given_h"}, t, C{h}, mult, s, none, C{v.rho_s_given_h[e]}});
      r.rows.push_back({C{"rho_h_given_s"}, t, C{h}, mult, s, none, C{v.rho_h_given_s[e]}});
      for (JointActionIndex a = 0; a < A; ++a)
        r.rows.push_back({C{"q_hsa"}, t, C{h}, mult, s, C{m.joint_action_label(a)}, C{x.values.hsa(e, a)}});
    }
    for (JointActionIndex a = 0; a < A; ++a) {
      r.rows.push_back({C{"q_ha"}, t, C{h}, mult, none, C{m.joint_action_label(a)}, C{x.values.ha(n, a)}});
      r.rows.push_back({C{"e_s_q_sa"}, t, C{h}, mult, none, C{m.joint_action_label(a)}, C{x.values.es_sa(n, a)}});
    }
  }
  const bool timed = en.options.state_keys == StateValueKeying::timed;
  for (std::size_t k = 0; k < v.num_state_keys; ++k) {
    if (!(v.rho_state_key[k] > 0.0)) continue;
    const auto s = k % en.num_states;
    const C t = timed ? C{static_cast<long long>(k / en.num_states)} : none;
    for (JointActionIndex a = 0; a < A; ++a)
      r.rows.push_back({C{"q_sa"}, t, none, none, C{m.states[s]}, C{m.joint_action_label(a)}, C{x.values.sa(k, a)}});
  }
  r.rows.push_back({C{"J"}, none, none, none, none, none, C{x.values.expected_return}});
  return r;
}

inline Report bias_table_report(const ExactAnalysis& x, const BiasReport& b) {
  Report r;
  add_exact_meta(r, x);
  r.add_meta("max_abs_bias", b.max_abs_bias);
  if (b.argmax != SIZE_MAX) {
    r.add_meta("argmax_history", node_label(x, b.entries[b.argmax].node));
    r.add_meta("argmax_action", x.model.joint_action_label(b.entries[b.argmax].action));
  }
  r.columns = {"t", "history", "action", "q_ha", "e_s_q_sa", "bias"};
  using C = Report::Cell;
  for (const auto& e : b.entries)
    r.rows.push_back({C{static_cast<long long>(x.enumeration.nodes[e.node].t)}, C{node_label(x, e.node)},
                      C{x.model.joint_action_label(e.action)}, C{x.values.ha(e.node, e.action)},
                      C{x.values.es_sa(e.node, e.action)}, C{e.bias}});
  return r;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// One row per parameter; one value column per report.
inline Report gradient_table_report(const ExactAnalysis& x, const ParameterLayout& L,
                                    const std::vector<GradientReport>& gs) {
  Report r;
  add_exact_meta(r, x);
  if (!gs.empty()) r.add_meta("normalizer", gs.front().normalizer);
  for (const auto& g : gs) r.add_meta("gradient_norm_" + to_string(g.kind), norm(g.gradient));
  r.columns = {"agent", "history", "action"};
  for (const auto& g : gs) r.columns.push_back("grad_" + to_string(g.kind));
  using C = Report::Cell;
  for (std::size_t i = 0; i < L.keys.size(); ++i)
    for (const auto& key : L.keys[i]) {
      const auto off = L.offset(i, key);
      for (std::size_t a = 0; a < L.num_actions[i]; ++a) {
        std::vector<C> row{C{static_cast<long long>(i)}, C{format_key(x.model, i, x.policy.agents[i].view(), key)},
                           C{x.model.actions[i][a]}};
        for (const auto& g : gs) row.push_back(C{g.gradient[off + a]});
        r.rows.push_back(std::move(row));
      }
    }
  return r;
}

inline Report variance_table_report(const ExactAnalysis& x, const std::vector<GradientReport>& gs,
                                     double max_abs_bias) {
  Report r;
  add_exact_meta(r, x);
  r.add_meta("max_abs_bias", max_abs_bias);
  r.columns = {"kind", "variance", "second_moment", "gradient_norm"};
  using C = Report::Cell;
  for (const auto& g : gs)
    r.rows.push_back({C{to_string(g.kind)}, C{g.variance}, C{g.second_moment}, C{norm(g.gradient)}});
  return r;
}

/// Empirical moments beside the exact values, with z-scores.
inline Report sample_table_report(const ExactAnalysis& x, const ParameterLayout& L,
                                  const EmpiricalMoments& mo, const GradientReport& exact) {
  Report r;
  add_exact_meta(r, x);
  r.add_meta("kind", to_string(mo.kind));
  r.add_meta("n", static_cast<long long>(mo.n));
  r.add_meta("seed", static_cast<long long>(mo.seed));
  r.add_meta("threads", static_cast<long long>(mo.threads));
  r.add_meta("rng", std::string(kRngAlgorithm));
  r.columns = {"quantity", "agent", "history", "action", "empirical", "std_error", "exact", "z"};
  using C = Report::Cell;
  const C none{};
  auto z_of = [](double emp, double se, double ex) -> C {
    if (se > 0.0) return C{(emp - ex) / se};
    return std::abs(emp - ex) <= 1e-12 * std::max(1.0, std::abs(ex)) ? C{0.0}
                                                                    : C{std::numeric_limits<double>::infinity()};
  };
  for (std::size_t i = 0; i < L.keys.size(); ++i)
    for (const auto& key : L.keys[i]) {
      const auto off = L.offset(i, key);
      for (std::size_t a = 0; a < L.num_actions[i]; ++a) {
        const auto j = off + a;
        r.rows.push_back({C{"mean"}, C{static_cast<long long>(i)},
                          C{format_key(x.model, i, x.policy.agents[i].view(), key)}, C{x.model.actions[i][a]},
                          C{mo.mean[j]}, mo.n >= 2 ? C{mo.mean_se[j]} : none, C{exact.gradient[j]},
                          mo.n >= 2 ? z_of(mo.mean[j], mo.mean_se[j], exact.gradient[j]) : none});
      }
    }
  r.rows.push_back({C{"variance"}, none, none, none, mo.variance ? C{*mo.variance} : none,
                    mo.variance_se ? C{*mo.variance_se} : none, C{exact.variance},
                    mo.variance ? z_of(*mo.variance, *mo.variance_se, exact.variance) : none});
  return r;
}

/// Largest |z| over the report's rows (0 if none).
inline double max_abs_z(const Report& r) {
  std::size_t zc = r.columns.size();
  for (std::size_t c = 0; c < r.columns.size(); ++c)
    if (r.columns[c] == "z") zc = c;
  double m = 0.0;
  if (zc == r.columns.size()) return m;
  for (const auto& row : r.rows)
    if (std::holds_alternative<double>(row[zc])) m = std::max(m, std::abs(std::get<double>(row[zc])));
  return m;
}

}  // namespace dcl
