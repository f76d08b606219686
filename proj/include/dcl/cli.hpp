#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcl/builtin.hpp"
#include "dcl/cache.hpp"
#include "dcl/error.hpp"
#include "dcl/exact.hpp"
#include "dcl/parser.hpp"
#include "dcl/report.hpp"
#include "dcl/sampling.hpp"
#include "dcl/train.hpp"

namespace dcl::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kParse = 2, kResource = 3, kDivergence = 4 };

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// `builtin:<name>` or a model file path, with optional horizon/discount overrides.
inline DecPomdpModel load_model(const std::string& source, int horizon = 0, double discount = -1.0,
                                std::ostream* warnings = nullptr) {
  DecPomdpModel m;
  if (source.rfind("builtin:", 0) == 0) {
    m = builtin_model(source.substr(8));
  } else {
    auto parsed = parse_model_with_warnings(read_source(source));
    if (warnings)
      for (const auto& w : parsed.warnings) *warnings << source << ":" << w.line << ": warning: " << w.message << "\n";
    m = std::move(parsed.model);
  }
  if (horizon > 0) m.horizon = horizon;
  if (discount >= 0.0) m.discount = discount;
  if (auto rep = validate(m); !rep.empty()) throw ModelInvalidError(rep);
  return m;
}

inline TabularJointPolicy load_policy(const std::string& source, const DecPomdpModel& m) {
  if (source.rfind("builtin:", 0) == 0) return builtin_policy(source.substr(8), m);
  return parse_policy(read_source(source), m);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Shared flags of the exact-evaluation subcommands.
struct ExactFlags {
  std::string model = "builtin:dectiger";
  std::string policy = "builtin:uniform";
  int horizon = 0;
  double discount = -1.0;
  std::string returns = "to-go";
  std::string state_values = "timed";
  std::size_t max_entries = 5'000'000;
  bool no_merge = false;
  std::size_t threads = 1;
  std::string out;
  std::string format = "csv";
  bool format_given = false;

  void attach(CLI::App* app) {
    app->add_option("--model", model, "builtin:<name> or model file")->required();
    app->add_option("--policy", policy, "builtin:<name> or policy file");
    app->add_option("--horizon", horizon, "override the model horizon")->check(CLI::PositiveNumber);
    app->add_option("--discount", discount, "override the model discount")->check(CLI::Range(0.0, 1.0));
    app->add_option("--returns", returns, "to-go or episode")->check(CLI::IsMember({"to-go", "episode"}));
    app->add_option("--state-values", state_values, "timed or plain")->check(CLI::IsMember({"timed", "plain"}));
    app->add_option("--max-entries", max_entries, "cap on reachable (history, state) entries");
    app->add_flag("--no-merge", no_merge, "keep every joint history distinct");
    app->add_option("--threads", threads, "worker threads (recorded in metadata)")->check(CLI::PositiveNumber);
    app->add_option("--out", out, "report file ('-' for stdout)");
    app->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  }

  ExactOptions options() const {
    ExactOptions o;
    o.returns = returns == "episode" ? ReturnConvention::episode : ReturnConvention::to_go;
    o.state_keys = state_values == "plain" ? StateValueKeying::plain : StateValueKeying::timed;
    o.max_entries = max_entries;
    o.merge_histories = !no_merge;
    return o;
  }
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Exact evaluation and training for finite-horizon Dec-POMDPs", "dcl"};
    app.require_subcommand(1);

    std::string validate_model;
    auto* v = app.add_subcommand("validate", "check a model and print every violation");
    v->add_option("--model", validate_model, "builtin:<name> or model file")->required();

    ExactFlags fv, fb, fg, fvar, fs;
    bool exact_flag = false;
    auto* values = app.add_subcommand("values", "value tables and J");
    fv.attach(values);
    values->add_flag("--exact", exact_flag, "exact evaluation (always used)");
    auto* bias = app.add_subcommand("bias", "Q(h,a) - E_{s|h} Q(s,a) table");
    fb.attach(bias);
    std::string grad_kind = "all";
    auto* gradient = app.add_subcommand("gradient", "exact policy gradients per critic kind");
    fg.attach(gradient);
    gradient->add_option("--kind", grad_kind, "H, S, HS or all")->check(CLI::IsMember({"H", "S", "HS", "all"}));
    auto* variance = app.add_subcommand("variance", "exact estimator variance per critic kind");
    fvar.attach(variance);

    std::string sample_kind = "H";
    std::size_t sample_n = 100000;
    std::uint64_t sample_seed = 1;
    auto* sample = app.add_subcommand("sample", "Monte-Carlo moments beside exact values");
    fs.attach(sample);
    sample->add_option("--kind", sample_kind, "H, S or HS")->check(CLI::IsMember({"H", "S", "HS"}));
    sample->add_option("--n", sample_n, "number of samples")->check(CLI::PositiveNumber);
    sample->add_option("--seed", sample_seed, "random seed");

    TrainConfig tc;
    std::string train_config, train_critic, train_out, train_policy_out;
    auto* train_cmd = app.add_subcommand("train", "advantage actor-critic with a tabular critic");
    train_cmd->add_option("--config", train_config, "key = value config file");
    auto* o_model = train_cmd->add_option("--model", tc.model, "builtin:<name> or model file");
    auto* o_critic = train_cmd->add_option("--critic", train_critic, "state, history or history-state (S/H/HS)");
    auto* o_episodes = train_cmd->add_option("--episodes", tc.episodes, "training episodes");
    auto* o_alr = train_cmd->add_option("--actor-lr", tc.actor_lr, "actor learning rate");
    auto* o_clr = train_cmd->add_option("--critic-lr", tc.critic_lr, "critic learning rate");
    auto* o_ent = train_cmd->add_option("--entropy", tc.entropy, "entropy bonus coefficient");
    auto* o_at = train_cmd->add_option("--actor-truncation", tc.actor_truncation, "actor history steps (0 = horizon)");
    auto* o_ct = train_cmd->add_option("--critic-truncation", tc.critic_truncation, "critic history steps (0 = horizon)");
    auto* o_ctime = train_cmd->add_flag("--critic-timed", tc.critic_timed, "state critic keyed on (t, s)");
    auto* o_ei = train_cmd->add_option("--eval-interval", tc.eval_interval, "episodes between evaluations");
    auto* o_ee = train_cmd->add_option("--eval-episodes", tc.eval_episodes, "episodes per evaluation");
    auto* o_seed = train_cmd->add_option("--seed", tc.seed, "random seed");
    auto* o_h = train_cmd->add_option("--horizon", tc.horizon, "override the model horizon");
    auto* o_g = train_cmd->add_option("--discount", tc.discount, "override the model discount");
    std::size_t train_threads = 1;
    train_cmd->add_option("--threads", train_threads, "accepted for uniformity; training is sequential");
    train_cmd->add_option("--out", train_out, "learning-curve CSV ('-' or omitted for stdout)");
    train_cmd->add_option("--policy-out", train_policy_out, "final policy file (default <out>.policy)");

    std::string ev_model, ev_policy = "builtin:uniform";
    std::size_t ev_episodes = 100000;
    std::uint64_t ev_seed = 1;
    int ev_horizon = 0;
    bool ev_exact = false;
    auto* evaluate = app.add_subcommand("evaluate", "expected return of a policy");
    evaluate->add_option("--model", ev_model, "builtin:<name> or model file")->required();
    evaluate->add_option("--policy", ev_policy, "builtin:<name> or policy file");
    evaluate->add_option("--horizon", ev_horizon, "override the model horizon");
    auto* o_eve = evaluate->add_option("--episodes", ev_episodes, "Monte-Carlo episodes");
    evaluate->add_option("--seed", ev_seed, "random seed");
    evaluate->add_flag("--exact", ev_exact, "exact J by enumeration")->excludes(o_eve);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out_ << app.help();
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n";
      return kParse;
    }

    try {
      if (*v) return cmd_validate(validate_model);
      if (*values) return cmd_values(fv, values);
      if (*bias) return cmd_bias(fb, bias);
      if (*gradient) return cmd_gradient(fg, gradient, grad_kind);
      if (*variance) return cmd_variance(fvar, variance);
      if (*sample) return cmd_sample(fs, sample, parse_critic_kind(sample_kind), sample_n, sample_seed);
      if (*train_cmd) {
        TrainConfig cfg;
        if (!train_config.empty()) cfg = parse_train_config(read_source(train_config).text);
        if (o_model->count()) cfg.model = tc.model;
        if (o_critic->count()) cfg.critic = parse_critic_kind(train_critic);
        if (o_episodes->count()) cfg.episodes = tc.episodes;
        if (o_alr->count()) cfg.actor_lr = tc.actor_lr;
        if (o_clr->count()) cfg.critic_lr = tc.critic_lr;
        if (o_ent->count()) cfg.entropy = tc.entropy;
        if (o_at->count()) cfg.actor_truncation = tc.actor_truncation;
        if (o_ct->count()) cfg.critic_truncation = tc.critic_truncation;
        if (o_ctime->count()) cfg.critic_timed = tc.critic_timed;
        if (o_ei->count()) cfg.eval_interval = tc.eval_interval;
        if (o_ee->count()) cfg.eval_episodes = tc.eval_episodes;
        if (o_seed->count()) cfg.seed = tc.seed;
        if (o_h->count()) cfg.horizon = tc.horizon;
        if (o_g->count()) cfg.discount = tc.discount;
        return cmd_train(cfg, train_out, train_policy_out);
      }
      if (*evaluate) return cmd_evaluate(ev_model, ev_policy, ev_horizon, ev_exact, ev_episodes, ev_seed);
    } catch (const ModelInvalidError& e) {
      err_ << e.what() << "\n";
      return kValidation;
    } catch (const ParseError& e) {
      err_ << e.what() << "\n";
      return kParse;
    } catch (const IoError& e) {
      err_ << "error: " << e.what() << "\n";
      return kParse;
    } catch (const ResourceError& e) {
      err_ << "error: " << e.what() << "\n";
      return kResource;
    } catch (const DegenerateScoreError& e) {
      err_ << "error: " << e.what() << "\n";
      return kResource;
    } catch (const DivergenceError& e) {
      err_ << "error: " << e.what() << "\n";
      return kDivergence;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << "\n";
      return kParse;
    }
    return kOk;
  }

 private:
  int cmd_validate(const std::string& source) {
    DecPomdpModel m;
    try {
      m = load_model(source, 0, -1.0, &err_);
    } catch (const ModelInvalidError& e) {
      for (const auto& viol : e.report()) out_ << viol.location << ": " << viol.message << "\n";
      return kValidation;
    }
    out_ << "valid: " << m.num_agents() << " agents, " << m.num_states() << " states, "
         << m.num_joint_actions() << " joint actions, " << m.num_joint_observations()
         << " joint observations, horizon " << m.horizon << "\n";
    return kOk;
  }

  ExactAnalysis analysis(const ExactFlags& f) {
    const auto m = load_model(f.model, f.horizon, f.discount, &err_);
    const auto p = load_policy(f.policy, m);
    return analyze_cached(m, p, f.options(), cache_dir_from_env());
  }

  /// Emits the headline lines and the report according to --out / --format.
  void emit(const ExactFlags& f, const CLI::App* app, Report r, const std::vector<std::string>& headline) {
    r.add_meta("model", f.model);
    r.add_meta("policy", f.policy);
    r.add_meta("threads", static_cast<long long>(f.threads));
    const bool format_given = app->count("--format") > 0;
    const auto fmt = parse_format(f.format);
    std::ostream& head = (f.out.empty() && format_given) || f.out == "-" ? err_ : out_;
    for (const auto& line : headline) head << line << "\n";
    if (f.out == "-" || (f.out.empty() && format_given)) {
      write_report(out_, r, fmt);
    } else if (!f.out.empty()) {
      std::ostringstream os;
      write_report(os, r, fmt);
      write_text_file(f.out, os.str());
    }
  }

  int cmd_values(const ExactFlags& f, const CLI::App* app) {
    const auto x = analysis(f);
    emit(f, app, values_report(x), {"J=" + fmt(x.values.expected_return)});
    return kOk;
  }

  int cmd_bias(const ExactFlags& f, const CLI::App* app) {
    const auto x = analysis(f);
    const auto b = bias_report(x);
    std::vector<std::string> head{"max_abs_bias=" + fmt(b.max_abs_bias)};
    if (b.argmax != SIZE_MAX)
      head.push_back("argmax=" + node_label(x, b.entries[b.argmax].node) + " " +
                     x.model.joint_action_label(b.entries[b.argmax].action));
    emit(f, app, bias_table_report(x, b), head);
    return kOk;
  }

  int cmd_gradient(const ExactFlags& f, const CLI::App* app, const std::string& kind) {
    const auto x = analysis(f);
    const auto L = make_layout(x.model, x.policy);
    std::vector<GradientReport> gs;
    std::vector<std::string> head;
    for (auto k : {CriticKind::H, CriticKind::S, CriticKind::HS}) {
      if (kind != "all" && kind != to_string(k)) continue;
      gs.push_back(exact_gradient(x, k, L));
      head.push_back("gradient_norm_" + to_string(k) + "=" + fmt(norm(gs.back().gradient)));
    }
    emit(f, app, gradient_table_report(x, L, gs), head);
    return kOk;
  }

  int cmd_variance(const ExactFlags& f, const CLI::App* app) {
    const auto x = analysis(f);
    const auto L = make_layout(x.model, x.policy);
    std::vector<GradientReport> gs;
    std::vector<std::string> head;
    for (auto k : {CriticKind::H, CriticKind::S, CriticKind::HS}) {
      gs.push_back(exact_gradient(x, k, L));
      head.push_back("var_" + to_string(k) + "=" + fmt(gs.back().variance));
    }
    const auto b = bias_report(x);
    head.push_back("max_abs_bias=" + fmt(b.max_abs_bias));
    emit(f, app, variance_table_report(x, gs, b.max_abs_bias), head);
    return kOk;
  }

  int cmd_sample(const ExactFlags& f, const CLI::App* app, CriticKind kind, std::size_t n, std::uint64_t seed) {
    const auto x = analysis(f);
    const auto L = make_layout(x.model, x.policy);
    const auto exact = exact_gradient(x, kind, L);
    const auto mo = empirical_moments(x, L, kind, n, seed, f.threads);
    auto r = sample_table_report(x, L, mo, exact);
    std::vector<std::string> head{"max_abs_z=" + fmt(max_abs_z(r)),
                                  "variance=" + (mo.variance ? fmt(*mo.variance) : std::string()),
                                  "exact_variance=" + fmt(exact.variance)};
    emit(f, app, std::move(r), head);
    return kOk;
  }

  int cmd_train(const TrainConfig& cfg, const std::string& out_path, std::string policy_path) {
    const auto m = load_model(cfg.model, 0, -1.0, &err_);
    const auto result = train(m, cfg);
    const auto trained = configured_model(m, cfg);
    std::ostringstream csv;
    write_curve_csv(csv, result.curve);
    if (out_path.empty() || out_path == "-") {
      out_ << csv.str();
    } else {
      write_text_file(out_path, csv.str());
    }
    if (policy_path.empty() && !out_path.empty() && out_path != "-") policy_path = out_path + ".policy";
    if (!policy_path.empty()) write_text_file(policy_path, serialize_policy(result.actor.policy, trained));
    std::ostream& head = out_path.empty() || out_path == "-" ? err_ : out_;
    head << "critic=" << to_string(cfg.critic) << " episodes=" << cfg.episodes << " seed=" << cfg.seed
         << " actor_lr=" << fmt(cfg.actor_lr) << " critic_lr=" << fmt(cfg.critic_lr)
         << " entropy=" << fmt(cfg.entropy) << "\n";
    head << "final_mean_return=" << fmt(result.curve.rows.back().mean_return) << "\n";
    try {
      head << "exact_return=" << fmt(evaluate_policy_exact(trained, result.actor.policy)) << "\n";
    } catch (const ResourceError&) {
      head << "exact_return=\n";
    }
    return kOk;
  }

  int cmd_evaluate(const std::string& model, const std::string& policy, int horizon, bool exact,
                   std::size_t episodes, std::uint64_t seed) {
    const auto m = load_model(model, horizon, -1.0, &err_);
    const auto p = load_policy(policy, m);
    if (exact) {
      out_ << "J=" << fmt(evaluate_policy_exact(m, p)) << "\n";
    } else {
      const auto r = evaluate_policy(m, p, episodes, seed);
      out_ << "mean_return=" << fmt(r.mean) << "\nstd_return=" << fmt(r.std) << "\n";
    }
    return kOk;
  }

  std::ostream& out_;
  std::ostream& err_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Runner(out, err).run(argc, argv);
}

}  // namespace dcl::cli
