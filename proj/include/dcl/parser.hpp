#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/model.hpp"
#include "dcl/policy.hpp"

namespace dcl {

struct ModelSource {
  std::string text;
  std::string origin = "<inline>";
};

/// File could not be read.
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string origin, std::size_t line, std::size_t column, std::string message,
             std::string token)
      : Error(origin + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        origin_(std::move(origin)),
        line_(line),
        column_(column),
        message_(std::move(message)),
        token_(std::move(token)) {}

  const std::string& origin() const { return origin_; }
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::string& message() const { return message_; }
  const std::string& token() const { return token_; }

 private:
  std::string origin_;
  std::size_t line_, column_;
  std::string message_, token_;
};

/// The text parsed but describes an invalid model.
class ModelInvalidError : public Error {
 public:
  explicit ModelInvalidError(ValidationReport report)
      : Error(render(report)), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  static std::string render(const ValidationReport& r) {
    std::string out = "model is invalid:";
    for (const auto& v : r) out += "\n  " + v.location + ": " + v.message;
    return out;
  }
  ValidationReport report_;
};

inline ModelSource read_source(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return {ss.str(), path};
}

struct ParseWarning {
  std::size_t line;
  std::string message;
};

struct ParsedModel {
  DecPomdpModel model;
  std::vector<ParseWarning> warnings;
};

namespace detail {

struct Token {
  std::string text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> out;
  std::size_t i = 0;
  const auto end = line.find('#');
  const std::size_t n = end == std::string::npos ? line.size() : end;
  while (i < n) {
    while (i < n && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= n) break;
    const std::size_t start = i;
    while (i < n && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t b = 0;
  while (true) {
    const auto c = s.find(',', b);
    parts.push_back(s.substr(b, c == std::string::npos ? c : c - b));
    if (c == std::string::npos) break;
    b = c + 1;
  }
  return parts;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

inline bool parse_int(const std::string& s, long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtol(s.c_str(), &end, 10);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_short(double v) {
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}

class Cursor {
 public:
  Cursor(const ModelSource& src, std::size_t line, const std::vector<Token>& toks)
      : src_(src), line_(line), toks_(toks) {}

  [[noreturn]] void fail(std::size_t tok, const std::string& msg) const {
    const auto& t = toks_[std::min(tok, toks_.size() - 1)];
    throw ParseError(src_.origin, line_, t.column, msg, tok < toks_.size() ? t.text : "");
  }
  const Token& at(std::size_t i) const { return toks_[i]; }
  std::size_t size() const { return toks_.size(); }

 private:
  const ModelSource& src_;
  std::size_t line_;
  const std::vector<Token>& toks_;
};

}  // namespace detail

/// Parses the line-oriented model format:
///
///   agents: <n>            discount: <g>           horizon: <H>
///   states: <labels...>    actions <i>: <labels>   observations <i>: <labels>
///   start: <probs...>
///   T: <s> <a1,..,an> -> <s'> <p>
///   O: <a1,..,an> <s'> -> <o1,..,on> <p>
///   R: <s> <a1,..,an> <s'|*> <value>
///
/// `*` expands over a whole axis (state, one agent's action, or one agent's observation).
/// Unlisted T/O/R entries are 0; a repeated explicit cell keeps the last value and warns.
inline ParsedModel parse_model_with_warnings(const ModelSource& src) {
  using detail::Cursor;
  ParsedModel out;
  DecPomdpModel& m = out.model;
  const auto lines = detail::split_lines(src.text);

  long n_agents = -1;
  bool have_states = false, have_start = false, have_horizon = false, tables_ready = false;
  std::vector<bool> have_actions, have_observations;
  std::set<std::pair<char, std::size_t>> explicit_cells;
  std::size_t last_line = 1;

  auto ensure_tables = [&](const Cursor& c) {
    if (tables_ready) return;
    if (!have_states) c.fail(0, "states must be declared before this directive");
    for (long i = 0; i < n_agents; ++i) {
      if (!have_actions[static_cast<std::size_t>(i)])
        c.fail(0, "actions for agent " + std::to_string(i) + " must be declared before this directive");
      if (!have_observations[static_cast<std::size_t>(i)])
        c.fail(0, "observations for agent " + std::to_string(i) + " must be declared before this directive");
    }
    auto initial = m.initial;
    m.resize_tables();
    if (have_start) m.initial = initial;
    tables_ready = true;
  };

  auto require_agents = [&](const Cursor& c) {
    if (n_agents < 0) c.fail(0, "agents must be declared before this directive");
  };

  // Expands a state token ("*" or label) to indices.
  auto states_of = [&](const Cursor& c, std::size_t tok) {
    std::vector<StateIndex> v;
    const auto& t = c.at(tok).text;
    if (t == "*") {
      for (StateIndex s = 0; s < m.num_states(); ++s) v.push_back(s);
      return v;
    }
    for (StateIndex s = 0; s < m.num_states(); ++s)
      if (m.states[s] == t) return std::vector<StateIndex>{s};
    c.fail(tok, "unknown state '" + t + "'");
  };

  // Expands a comma-joined per-agent tuple to flat joint indices.
  auto joint_of = [&](const Cursor& c, std::size_t tok,
                      const std::vector<std::vector<std::string>>& sets, const Radix& radix,
                      const char* what) {
    const auto parts = detail::split_commas(c.at(tok).text);
    if (parts.size() != static_cast<std::size_t>(n_agents))
      c.fail(tok, std::string("arity mismatch: expected ") + std::to_string(n_agents) + " " + what +
                      "s, got " + std::to_string(parts.size()));
    std::vector<std::vector<std::size_t>> choices(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i] == "*") {
        for (std::size_t k = 0; k < sets[i].size(); ++k) choices[i].push_back(k);
        continue;
      }
      for (std::size_t k = 0; k < sets[i].size(); ++k)
        if (sets[i][k] == parts[i]) choices[i].push_back(k);
      if (choices[i].empty())
        c.fail(tok, std::string("unknown ") + what + " '" + parts[i] + "' for agent " + std::to_string(i));
    }
    std::vector<std::size_t> out_idx{0};
    for (std::size_t i = 0; i < choices.size(); ++i) {
      std::vector<std::size_t> next;
      for (auto base : out_idx)
        for (auto k : choices[i]) next.push_back(base * radix.digit_size(i) + k);
      out_idx = std::move(next);
    }
    return out_idx;
  };

  auto number = [&](const Cursor& c, std::size_t tok, const char* what) {
    double v;
    if (!detail::parse_double(c.at(tok).text, v))
      c.fail(tok, std::string("expected a numeric ") + what + ", got '" + c.at(tok).text + "'");
    return v;
  };

  auto labels_from = [](const Cursor& c, std::size_t first) {
    std::vector<std::string> v;
    for (std::size_t i = first; i < c.size(); ++i) v.push_back(c.at(i).text);
    if (v.empty()) c.fail(first - 1, "expected at least one label");
    return v;
  };

  auto record = [&](char table, std::size_t cell, bool wildcard, std::size_t line) {
    if (wildcard) return;
    if (!explicit_cells.insert({table, cell}).second)
      out.warnings.push_back({line, std::string(1, table) + " entry set more than once; last value kept"});
  };

  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::tokenize(lines[ln]);
    if (toks.empty()) continue;
    const std::size_t line_no = ln + 1;
    last_line = line_no;
    Cursor c(src, line_no, toks);
    const std::string& d = toks[0].text;

    if (d == "agents:") {
      if (toks.size() != 2) c.fail(0, "agents: expects one integer");
      if (n_agents >= 0) c.fail(0, "agents declared twice");
      long n;
      if (!detail::parse_int(toks[1].text, n) || n < 1) c.fail(1, "agent count must be a positive integer");
      n_agents = n;
      m.actions.assign(static_cast<std::size_t>(n), {});
      m.observations.assign(static_cast<std::size_t>(n), {});
      have_actions.assign(static_cast<std::size_t>(n), false);
      have_observations.assign(static_cast<std::size_t>(n), false);
    } else if (d == "discount:") {
      if (toks.size() != 2) c.fail(0, "discount: expects one number");
      m.discount = number(c, 1, "discount");
    } else if (d == "horizon:") {
      if (toks.size() != 2) c.fail(0, "horizon: expects one integer");
      long h;
      if (!detail::parse_int(toks[1].text, h)) c.fail(1, "horizon must be an integer");
      m.horizon = static_cast<int>(h);
      have_horizon = true;
    } else if (d == "states:") {
      if (have_states) c.fail(0, "states declared twice");
      m.states = labels_from(c, 1);
      have_states = true;
    } else if (d == "actions" || d == "observations") {
      require_agents(c);
      if (toks.size() < 2 || toks[1].text.empty() || toks[1].text.back() != ':')
        c.fail(0, d + " expects '<agent-index>:'");
      long i;
      if (!detail::parse_int(toks[1].text.substr(0, toks[1].text.size() - 1), i) || i < 0 ||
          i >= n_agents)
        c.fail(1, "agent index out of range");
      if (tables_ready) c.fail(0, d + " must be declared before start/T/O/R");
      auto& have = d == "actions" ? have_actions : have_observations;
      if (have[static_cast<std::size_t>(i)]) c.fail(0, d + " for agent " + std::to_string(i) + " declared twice");
      (d == "actions" ? m.actions : m.observations)[static_cast<std::size_t>(i)] = labels_from(c, 2);
      have[static_cast<std::size_t>(i)] = true;
    } else if (d == "start:") {
      require_agents(c);
      if (!have_states) c.fail(0, "states must be declared before start");
      if (toks.size() - 1 != m.num_states())
        c.fail(toks.size() - 1, "arity mismatch: start lists " + std::to_string(toks.size() - 1) +
                                    " probabilities for " + std::to_string(m.num_states()) + " states");
      m.initial.assign(m.num_states(), 0.0);
      for (std::size_t k = 1; k < toks.size(); ++k) m.initial[k - 1] = number(c, k, "probability");
      have_start = true;
    } else if (d == "T:") {
      require_agents(c);
      ensure_tables(c);
      if (toks.size() != 6 || toks[3].text != "->")
        c.fail(0, "arity mismatch: expected 'T: <s> <a1,..,an> -> <s'> <p>'");
      const auto ss = states_of(c, 1);
      const auto as = joint_of(c, 2, m.actions, m.action_radix(), "action");
      const auto ns = states_of(c, 4);
      const double p = number(c, 5, "probability");
      const bool wild = toks[1].text == "*" || toks[4].text == "*" || toks[2].text.find('*') != std::string::npos;
      for (auto s : ss)
        for (auto a : as)
          for (auto n : ns) {
            m.T(s, a, n) = p;
            record('T', m.transition_offset(s, a) + n, wild, line_no);
          }
    } else if (d == "O:") {
      require_agents(c);
      ensure_tables(c);
      if (toks.size() != 6 || toks[3].text != "->")
        c.fail(0, "arity mismatch: expected 'O: <a1,..,an> <s'> -> <o1,..,on> <p>'");
      const auto as = joint_of(c, 1, m.actions, m.action_radix(), "action");
      const auto ns = states_of(c, 2);
      const auto os = joint_of(c, 4, m.observations, m.observation_radix(), "observation");
      const double p = number(c, 5, "probability");
      const bool wild = toks[2].text == "*" || toks[1].text.find('*') != std::string::npos ||
                        toks[4].text.find('*') != std::string::npos;
      for (auto a : as)
        for (auto n : ns)
          for (auto o : os) {
            m.O(a, n, o) = p;
            record('O', m.observation_offset(a, n) + o, wild, line_no);
          }
    } else if (d == "R:") {
      require_agents(c);
      ensure_tables(c);
      if (toks.size() != 5) c.fail(0, "arity mismatch: expected 'R: <s> <a1,..,an> <s'|*> <value>'");
      const auto ss = states_of(c, 1);
      const auto as = joint_of(c, 2, m.actions, m.action_radix(), "action");
      const auto ns = states_of(c, 3);
      const double v = number(c, 4, "reward");
      const bool wild = toks[1].text == "*" || toks[3].text == "*" || toks[2].text.find('*') != std::string::npos;
      for (auto s : ss)
        for (auto a : as)
          for (auto n : ns) {
            m.R(s, a, n) = v;
            record('R', m.transition_offset(s, a) + n, wild, line_no);
          }
    } else {
      c.fail(0, "unknown directive '" + d + "'");
    }
  }

  auto missing = [&](const std::string& what) {
    const std::size_t col = 1;
    throw ParseError(src.origin, last_line, col, "missing '" + what + "' directive", "");
  };
  if (n_agents < 0) missing("agents:");
  if (!have_states) missing("states:");
  for (long i = 0; i < n_agents; ++i) {
    if (!have_actions[static_cast<std::size_t>(i)]) missing("actions " + std::to_string(i) + ":");
    if (!have_observations[static_cast<std::size_t>(i)]) missing("observations " + std::to_string(i) + ":");
  }
  if (!have_start) missing("start:");
  if (!have_horizon) missing("horizon:");
  if (!tables_ready) {
    auto initial = m.initial;
    m.resize_tables();
    m.initial = initial;
  }
  if (auto report = validate(m); !report.empty()) throw ModelInvalidError(std::move(report));
  return out;
}

inline DecPomdpModel parse_model(const ModelSource& src) { return parse_model_with_warnings(src).model; }

inline std::string serialize_model(const DecPomdpModel& m) {
  if (auto report = validate(m); !report.empty())
    throw PreconditionError("cannot serialize an invalid model: " + report.front().location + ": " +
                            report.front().message);
  std::ostringstream os;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
    return s;
  };
  os << "agents: " << m.num_agents() << "\n";
  os << "discount: " << detail::fmt17(m.discount) << "\n";
  os << "horizon: " << m.horizon << "\n";
  os << "states: " << join(m.states) << "\n";
  for (std::size_t i = 0; i < m.num_agents(); ++i) os << "actions " << i << ": " << join(m.actions[i]) << "\n";
  for (std::size_t i = 0; i < m.num_agents(); ++i)
    os << "observations " << i << ": " << join(m.observations[i]) << "\n";
  os << "start:";
  for (double p : m.initial) os << " " << detail::fmt17(p);
  os << "\n";
  const auto S = m.num_states(), A = m.num_joint_actions(), O = m.num_joint_observations();
  for (StateIndex s = 0; s < S; ++s)
    for (JointActionIndex a = 0; a < A; ++a)
      for (StateIndex n = 0; n < S; ++n)
        if (m.T(s, a, n) != 0.0)
          os << "T: " << m.states[s] << " " << m.joint_action_label(a) << " -> " << m.states[n] << " "
             << detail::fmt17(m.T(s, a, n)) << "\n";
  for (JointActionIndex a = 0; a < A; ++a)
    for (StateIndex n = 0; n < S; ++n)
      for (JointObservationIndex o = 0; o < O; ++o)
        if (m.O(a, n, o) != 0.0)
          os << "O: " << m.joint_action_label(a) << " " << m.states[n] << " -> "
             << m.joint_observation_label(o) << " " << detail::fmt17(m.O(a, n, o)) << "\n";
  for (StateIndex s = 0; s < S; ++s)
    for (JointActionIndex a = 0; a < A; ++a)
      for (StateIndex n = 0; n < S; ++n)
        if (m.R(s, a, n) != 0.0)
          os << "R: " << m.states[s] << " " << m.joint_action_label(a) << " " << m.states[n] << " "
             << detail::fmt17(m.R(s, a, n)) << "\n";
  return os.str();
}

/// Parses a policy file:
///
///   parameterization: direct|softmax        (optional, default direct)
///   memory <i>: full|last <k>|obs <k>       (optional per agent, default full)
///   policy <i>: <history> -> <action:prob ...>
///   logits <i>: <history> -> <action:value ...>   (softmax only)
///
/// `<history>` is `@` or the agent's own `a/o/a/o/...`. Unlisted histories act uniformly.
inline TabularJointPolicy parse_policy(const ModelSource& src, const DecPomdpModel& m) {
  using detail::Cursor;
  const auto lines = detail::split_lines(src.text);
  Parameterization param = Parameterization::direct;
  std::vector<HistoryView> views(m.num_agents(), HistoryView::full());
  std::vector<bool> used(m.num_agents(), false);
  std::vector<std::map<HistoryKey, std::vector<double>>> entries(m.num_agents());
  bool seen_policy = false;

  auto agent_of = [&](const Cursor& c, std::size_t tok) {
    const auto& t = c.at(tok).text;
    long i;
    if (t.empty() || t.back() != ':' || !detail::parse_int(t.substr(0, t.size() - 1), i))
      c.fail(tok, "expected '<agent-index>:'");
    if (i < 0 || static_cast<std::size_t>(i) >= m.num_agents()) c.fail(tok, "agent index out of range");
    return static_cast<std::size_t>(i);
  };

  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::tokenize(lines[ln]);
    if (toks.empty()) continue;
    Cursor c(src, ln + 1, toks);
    const auto& d = toks[0].text;
    if (d == "parameterization:") {
      if (toks.size() != 2) c.fail(0, "parameterization: expects direct or softmax");
      if (seen_policy) c.fail(0, "parameterization must precede policy lines");
      if (toks[1].text == "direct") param = Parameterization::direct;
      else if (toks[1].text == "softmax") param = Parameterization::softmax;
      else c.fail(1, "unknown parameterization '" + toks[1].text + "'");
    } else if (d == "memory") {
      if (toks.size() < 3) c.fail(0, "memory expects '<agent-index>: full|last <k>|obs <k>'");
      const auto i = agent_of(c, 1);
      if (used[i]) c.fail(0, "memory for agent " + std::to_string(i) + " must precede its policy lines");
      const auto& kind = toks[2].text;
      if (kind == "full" && toks.size() == 3) {
        views[i] = HistoryView::full();
      } else if ((kind == "last" || kind == "obs") && toks.size() == 4) {
        long k;
        if (!detail::parse_int(toks[3].text, k) || k < 0) c.fail(3, "memory length must be a non-negative integer");
        views[i] = kind == "last" ? HistoryView::last_steps(static_cast<std::size_t>(k))
                                  : HistoryView::last_observations(static_cast<std::size_t>(k));
      } else {
        c.fail(2, "memory expects full, last <k> or obs <k>");
      }
    } else if (d == "policy" || d == "logits") {
      if (toks.size() < 5 || toks[3].text != "->")
        c.fail(0, "expected '" + d + " <i>: <history> -> <action:value ...>'");
      const bool logits = d == "logits";
      if (logits && param != Parameterization::softmax)
        c.fail(0, "logits lines require 'parameterization: softmax'");
      seen_policy = true;
      const auto i = agent_of(c, 1);
      used[i] = true;
      HistoryKey key;
      try {
        key = parse_key(m, i, views[i], toks[2].text);
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        c.fail(2, e.what());
      }
      const auto na = m.actions[i].size();
      std::vector<double> values(na, logits ? -std::numeric_limits<double>::infinity() : 0.0);
      std::vector<bool> set(na, false);
      double sum = 0.0;
      for (std::size_t k = 4; k < toks.size(); ++k) {
        const auto& t = toks[k].text;
        const auto colon = t.rfind(':');
        if (colon == std::string::npos) c.fail(k, "expected '<action>:<value>'");
        const auto label = t.substr(0, colon);
        std::size_t a = na;
        for (std::size_t b = 0; b < na; ++b)
          if (m.actions[i][b] == label) a = b;
        if (a == na) c.fail(k, "unknown action '" + label + "' for agent " + std::to_string(i));
        if (set[a]) c.fail(k, "action '" + label + "' listed twice");
        double v;
        if (!detail::parse_double(t.substr(colon + 1), v))
          c.fail(k, "expected a numeric value, got '" + t.substr(colon + 1) + "'");
        if (!logits && v < 0.0) c.fail(k, "probability must be non-negative");
        values[a] = v;
        set[a] = true;
        sum += v;
      }
      if (!logits) {
        if (std::abs(sum - 1.0) > 1e-9)
          c.fail(2, "distribution sums to " + detail::fmt_short(sum) + " at history '" + toks[2].text + "'");
        if (param == Parameterization::softmax) {
          for (auto& v : values) {
            if (!(v > 0.0)) c.fail(4, "softmax policies need every probability > 0 (use logits lines)");
            v = std::log(v);
          }
        }
      } else {
        for (std::size_t b = 0; b < na; ++b)
          if (!set[b]) c.fail(4, "logits line must list every action");
      }
      entries[i][key] = std::move(values);
    } else {
      c.fail(0, "unknown directive '" + d + "'");
    }
  }
  TabularJointPolicy p;
  for (std::size_t i = 0; i < m.num_agents(); ++i) {
    AgentPolicy ag(m.actions[i].size(), views[i], param);
    for (auto& [k, v] : entries[i]) ag.set(k, v);
    p.agents.push_back(std::move(ag));
  }
  return p;
}

/// Writes a policy in the parse_policy grammar; softmax policies are written as logits
/// so they round-trip exactly.
inline std::string serialize_policy(const TabularJointPolicy& p, const DecPomdpModel& m) {
  std::ostringstream os;
  const auto param = p.parameterization();
  os << "parameterization: " << to_string(param) << "\n";
  for (std::size_t i = 0; i < p.agents.size(); ++i) {
    const auto& ag = p.agents[i];
    os << "memory " << i << ": " << to_string(ag.view()) << "\n";
    for (const auto& [key, theta] : ag.table()) {
      os << (param == Parameterization::softmax ? "logits " : "policy ") << i << ": "
         << format_key(m, i, ag.view(), key) << " ->";
      for (std::size_t a = 0; a < theta.size(); ++a) {
        if (param == Parameterization::direct && theta[a] == 0.0) continue;
        os << " " << m.actions[i][a] << ":" << detail::fmt17(theta[a]);
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace dcl
