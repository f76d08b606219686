#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "dcl/exact.hpp"
#include "dcl/parser.hpp"

namespace dcl {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Cache key over (model, policy, horizon, discount, options).
inline std::string cache_key(const DecPomdpModel& m, const TabularJointPolicy& p, const ExactOptions& o) {
  std::uint64_t h = fnv1a(serialize_model(m));
  h = fnv1a(serialize_policy(p, m), h);
  h = fnv1a(std::to_string(m.horizon) + "|" + detail::fmt17(m.discount) + "|" + to_string(o.returns) + "|" +
                to_string(o.state_keys) + "|" + (o.merge_histories ? "merge" : "nomerge"),
            h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline constexpr std::uint64_t kCacheMagic = 0x31454843'4C43'4400ull;  // "DCLCHE1"

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}
  template <class T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  template <class T>
  void vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    pod<std::uint64_t>(v.size());
    if (!v.empty()) os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  explicit BinReader(std::istream& is) : is_(is) {}
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) throw Error("truncated cache file");
    return v;
  }
  template <class T>
  std::vector<T> vec() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 34)) throw Error("corrupt cache file");
    std::vector<T> v(n);
    if (n) is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is_) throw Error("truncated cache file");
    return v;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void save_enumeration(std::ostream& os, const Enumeration& en) {
  detail::BinWriter w(os);
  w.pod(detail::kCacheMagic);
  w.pod<std::uint64_t>(en.nodes.size());
  for (const auto& n : en.nodes) {
    w.pod<std::int64_t>(n.t);
    w.vec(n.keys);
    w.pod<std::uint64_t>(n.parent);
    w.pod<std::uint64_t>(n.action);
    w.pod<std::uint64_t>(n.observation);
    w.pod(n.multiplicity);
    w.pod<std::uint64_t>(n.entry_begin);
    w.pod<std::uint64_t>(n.entry_count);
    std::vector<std::uint64_t> codes, targets;
    for (auto [c, t] : n.children) codes.push_back(c), targets.push_back(t);
    w.vec(codes);
    w.vec(targets);
  }
  w.vec(en.layer_begin);
  w.vec(en.entry_state);
  w.vec(en.entry_probability);
  w.vec(en.entry_past);
  w.vec(en.terminated);
  w.pod<std::uint64_t>(en.index.num_agents());
  for (std::size_t i = 0; i < en.index.num_agents(); ++i) {
    w.pod<std::uint64_t>(en.index.num_keys(i));
    for (std::uint32_t id = 0; id < en.index.num_keys(i); ++id) w.vec(en.index.key(i, id));
  }
}

/// Restores an enumeration written by save_enumeration for the same (model, policy, options).
inline Enumeration load_enumeration(std::istream& is, const DecPomdpModel& m, const TabularJointPolicy& p,
                                    const ExactOptions& opt) {
  detail::BinReader r(is);
  if (r.pod<std::uint64_t>() != detail::kCacheMagic) throw Error("not an enumeration cache file");
  Enumeration en;
  en.options = opt;
  en.horizon = m.horizon;
  en.discount = m.discount;
  en.num_states = m.num_states();
  en.num_joint_actions = m.num_joint_actions();
  en.num_joint_observations = m.num_joint_observations();
  en.nodes.resize(r.pod<std::uint64_t>());
  for (auto& n : en.nodes) {
    n.t = static_cast<int>(r.pod<std::int64_t>());
    n.keys = r.vec<std::uint32_t>();
    n.parent = r.pod<std::uint64_t>();
    n.action = r.pod<std::uint64_t>();
    n.observation = r.pod<std::uint64_t>();
    n.multiplicity = r.pod<double>();
    n.entry_begin = r.pod<std::uint64_t>();
    n.entry_count = r.pod<std::uint64_t>();
    const auto codes = r.vec<std::uint64_t>();
    const auto targets = r.vec<std::uint64_t>();
    if (codes.size() != targets.size()) throw Error("corrupt cache file");
    for (std::size_t k = 0; k < codes.size(); ++k) n.children.emplace_back(codes[k], targets[k]);
  }
  en.layer_begin = r.vec<std::size_t>();
  en.entry_state = r.vec<StateIndex>();
  en.entry_probability = r.vec<double>();
  en.entry_past = r.vec<double>();
  en.terminated = r.vec<double>();
  en.index = PolicyIndex(m, p);
  const auto agents = r.pod<std::uint64_t>();
  if (agents != m.num_agents()) throw Error("cache file does not match the model");
  for (std::size_t i = 0; i < agents; ++i) {
    const auto nk = r.pod<std::uint64_t>();
    for (std::uint64_t id = 0; id < nk; ++id)
      if (en.index.intern(i, r.vec<std::int32_t>()) != id) throw Error("corrupt cache file");
  }
  return en;
}

/// analyze() with an on-disk enumeration cache in `dir` (no caching when dir is empty).
inline ExactAnalysis analyze_cached(const DecPomdpModel& m, const TabularJointPolicy& p, const ExactOptions& opt,
                                    const std::string& dir) {
  if (dir.empty()) return analyze(m, p, opt);
  namespace fs = std::filesystem;
  const fs::path file = fs::path(dir) / (cache_key(m, p, opt) + ".enum");
  std::optional<Enumeration> en;
  if (fs::exists(file)) {
    try {
      std::ifstream in(file, std::ios::binary);
      en = load_enumeration(in, m, p, opt);
    } catch (const Error&) {
      en.reset();
    }
  }
  if (!en) {
    en = enumerate(m, p, opt);
    std::error_code ec;
    fs::create_directories(dir, ec);
    const auto tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (out) save_enumeration(out, *en);
    }
    fs::rename(tmp, file, ec);
  }
  return complete_analysis(m, p, std::move(*en));
}

/// Directory named by DCL_CACHE_DIR, or empty.
inline std::string cache_dir_from_env() {
  const char* d = std::getenv("DCL_CACHE_DIR");
  return d ? std::string(d) : std::string();
}

}  // namespace dcl
