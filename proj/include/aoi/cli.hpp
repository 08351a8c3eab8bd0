#pragma once

// Config-driven commands: exact-bias, simulate, twoblock, estimate.
// Each command takes a JSON document with a top-level "command" field and
// returns a table; validation errors carry the offending field path.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "aoi/discretize.hpp"
#include "aoi/estimator.hpp"
#include "aoi/io.hpp"
#include "aoi/mc.hpp"
#include "aoi/numeric.hpp"
#include "aoi/population.hpp"
#include "aoi/registry.hpp"
#include "aoi/spectral.hpp"
#include "aoi/twoblock.hpp"

namespace aoi::cli {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config access with field paths

class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const json& raw() const { return *j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& msg) const { throw ValidationError(path_ + ": " + msg); }

  bool has(const char* key) const { return j_->is_object() && j_->contains(key); }

  Node at(const char* key) const {
    if (!j_->is_object()) fail("expected an object");
    if (!j_->contains(key)) throw ValidationError(path_ + "." + key + ": required field missing");
    return Node((*j_)[key], path_ + "." + key);
  }

  std::optional<Node> get(const char* key) const {
    if (!has(key)) return std::nullopt;
    return at(key);
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    if (!j_->is_object()) fail("expected an object");
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool known = false;
      for (const char* k : keys) known = known || it.key() == k;
      if (!known) throw ValidationError(path_ + "." + it.key() + ": unknown field");
    }
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }

  std::size_t count() const {
    if (j_->is_number_unsigned()) return j_->get<std::size_t>();
    if (j_->is_number_integer()) fail("expected a non-negative integer");
    if (j_->is_number_float()) {
      const double v = j_->get<double>();
      if (v >= 0.0 && v == std::floor(v) && v < 9e15) return static_cast<std::size_t>(v);
    }
    fail("expected a non-negative integer");
  }

  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }

  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  std::vector<Node> array() const {
    if (!j_->is_array()) fail("expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < j_->size(); ++i) out.emplace_back((*j_)[i], path_ + "[" + std::to_string(i) + "]");
    return out;
  }

  /// A list, or a scalar standing for a one-element list.
  std::vector<Node> list(bool nonempty = true) const {
    std::vector<Node> out = j_->is_array() ? array() : std::vector<Node>{*this};
    if (nonempty && out.empty()) fail("must not be empty");
    return out;
  }

 private:
  const json* j_;
  std::string path_;
};

/// Runs `f`, prefixing any ValidationError with the node's path.
template <class F>
auto at_path(const Node& n, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    n.fail(e.what());
  }
}

inline Distribution1D parse_distribution(const Node& n) {
  const std::string family = n.at("family").string();
  if (family == "normal") {
    n.allow_only({"family", "mean", "variance"});
    return at_path(n, [&] { return Distribution1D::normal(n.at("mean").number(), n.at("variance").number()); });
  }
  if (family == "logistic") {
    n.allow_only({"family", "location", "scale"});
    return at_path(n, [&] { return Distribution1D::logistic(n.at("location").number(), n.at("scale").number()); });
  }
  if (family == "uniform") {
    n.allow_only({"family", "lo", "hi"});
    return at_path(n, [&] { return Distribution1D::uniform(n.at("lo").number(), n.at("hi").number()); });
  }
  n.at("family").fail("unknown family '" + family + "' (normal, logistic, uniform)");
}

inline ProductLaw parse_product_law(const Node& n) {
  n.allow_only({"a1", "a2"});
  return {parse_distribution(n.at("a1")), parse_distribution(n.at("a2"))};
}

/// "none", "truncate@1e-4", or {"mode": ..., "lambda_min": ...}.
inline Regularization parse_regularization(const Node& n) {
  std::string mode;
  std::optional<double> lambda;
  if (n.raw().is_string()) {
    const std::string s = n.string();
    const auto at = s.find('@');
    mode = s.substr(0, at);
    if (at != std::string::npos) lambda = at_path(n, [&] { return parse_real(s.substr(at + 1), "threshold"); });
  } else {
    n.allow_only({"mode", "lambda_min"});
    mode = n.at("mode").string();
    if (auto l = n.get("lambda_min")) lambda = l->number();
  }
  if (mode == "none") {
    if (lambda) n.fail("mode 'none' takes no threshold");
    return Regularization::none();
  }
  const double l = lambda.value_or(1e-4);
  if (mode == "truncate") return at_path(n, [&] { return Regularization::truncate(l); });
  if (mode == "truncate_zero") return at_path(n, [&] { return Regularization::truncate_zero(l); });
  if (mode == "clamp") return at_path(n, [&] { return Regularization::clamp(l); });
  n.fail("unknown regularization mode '" + mode + "' (none, truncate, truncate_zero, clamp)");
}

inline std::string regularization_label(const Regularization& r) {
  if (r.mode == RegMode::none) return "none";
  return to_string(r.mode) + "@" + format_number(r.lambda_min);
}

inline CorrectionOrder parse_order(const Node& n) {
  if (n.raw().is_string()) return at_path(n, [&] { return CorrectionOrder::parse(n.string()); });
  if (n.raw().is_number()) {
    const double v = n.number();
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e18) n.fail("correction order must be a non-negative integer or \"inf\"");
    return CorrectionOrder(static_cast<std::uint64_t>(v));
  }
  n.fail("expected a correction order");
}

inline std::vector<CorrectionOrder> parse_orders(const std::optional<Node>& n, std::vector<CorrectionOrder> def) {
  if (!n) return def;
  std::vector<CorrectionOrder> out;
  for (const auto& e : n->list()) out.push_back(parse_order(e));
  return out;
}

inline PercentileRule parse_rule(const std::optional<Node>& n) {
  if (!n) return PercentileRule::k_plus_one;
  const std::string s = n->string();
  if (s == "k_plus_one") return PercentileRule::k_plus_one;
  if (s == "midpoint") return PercentileRule::midpoint;
  n->fail("unknown percentile rule '" + s + "' (k_plus_one, midpoint)");
}

inline std::size_t positive_count(const Node& n) {
  const std::size_t v = n.count();
  if (v < 1) n.fail("must be at least 1");
  return v;
}

inline std::vector<std::size_t> parse_periods(const Node& n, bool even) {
  std::vector<std::size_t> out;
  for (const auto& e : n.list()) {
    const std::size_t T = positive_count(e);
    if (even && T % 2 != 0) e.fail("T must be even for the two-block design");
    out.push_back(T);
  }
  return out;
}

inline std::vector<std::string> parse_strings(const Node& n) {
  std::vector<std::string> out;
  for (const auto& e : n.list()) out.push_back(e.string());
  return out;
}

// ---------------------------------------------------------------------------
// Output

struct CommandResult {
  Table table{{}};
  /// Human-readable lines for stderr.
  std::vector<std::string> notes;
};

struct OutputSpec {
  std::optional<std::string> path;
  TableFormat format = TableFormat::csv;
};

inline OutputSpec parse_output(const Node& root) {
  OutputSpec out;
  if (auto o = root.get("output")) {
    o->allow_only({"path", "format"});
    if (auto p = o->get("path")) out.path = p->string();
    if (auto f = o->get("format")) {
      const std::string s = f->string();
      if (s == "csv") {
        out.format = TableFormat::csv;
      } else if (s == "markdown") {
        out.format = TableFormat::markdown;
      } else {
        f->fail("unknown format '" + s + "' (csv, markdown)");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// exact-bias

namespace detail {

inline Covariates parse_covariate_matrix(const Node& n, std::size_t T) {
  const auto rows = n.array();
  if (rows.size() != T) n.fail("expected " + std::to_string(T) + " rows (one per period)");
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t kt = rows[t].raw().is_array() ? rows[t].raw().size() : 1;
    if (t == 0) k = kt;
    if (kt != k) rows[t].fail("all periods need the same number of covariates");
  }
  Covariates x(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(k));
  for (std::size_t t = 0; t < T; ++t) {
    const auto cells = rows[t].list(false);
    for (std::size_t j = 0; j < k; ++j) x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = cells[j].number();
  }
  return x;
}

inline ModelSpec parse_model_spec(const Node& n, std::size_t T) {
  n.allow_only({"id", "beta", "collapse"});
  ModelSpec spec;
  spec.id = n.at("id").string();
  spec.T = T;
  if (auto b = n.get("beta")) {
    for (const auto& e : b->list(false)) spec.beta.push_back(e.number());
  }
  if (auto c = n.get("collapse")) spec.collapse = c->boolean();
  return spec;
}

struct Law {
  std::optional<Distribution1D> scalar;
  std::optional<ProductLaw> product;

  FixedEffectGrid grid(std::size_t K, PercentileRule rule) const {
    return scalar ? quantile_grid(*scalar, K, rule) : product_quantile_grid(*product, K, rule);
  }
  double pdf(std::span<const double> a) const { return scalar ? scalar->pdf(a[0]) : product->pdf(a); }
};

inline Law parse_law(const Node& n, std::size_t dim) {
  Law law;
  if (dim == 1) {
    law.scalar = parse_distribution(n);
  } else if (dim == 2) {
    law.product = parse_product_law(n);
  } else {
    n.fail("laws are supported for one- or two-dimensional fixed effects only");
  }
  return law;
}

inline ExactBiasProblem custom_problem(const Node& root, std::size_t T, std::size_t K, PercentileRule rule) {
  const ModelSpec spec = parse_model_spec(root.at("model"), T);
  const auto model = at_path(root.at("model"), [&] { return make_model(spec); });
  const std::size_t dim = model->effect_dim();
  const Law prior = parse_law(root.at("prior"), dim);
  const Node effect_node = root.at("effect");
  ExactBiasProblem p{model, {}, prior.grid(K, rule),
                     at_path(effect_node, [&] { return make_effect(effect_node.string(), *model); }), {}};
  const bool identity = p.prior.equal_mass();
  for (const auto& d : root.at("design").list()) {
    d.allow_only({"x", "prob", "truth"});
    const Covariates x = d.has("x") ? parse_covariate_matrix(d.at("x"), T) : Covariates(static_cast<Eigen::Index>(T), 0);
    const double prob = d.has("prob") ? d.at("prob").number() : 1.0;
    const Law truth = parse_law(d.at("truth"), dim);
    if (static_cast<std::size_t>(x.cols()) != model->covariate_dim()) {
      d.fail("model '" + spec.id + "' takes " + std::to_string(model->covariate_dim()) + " covariate(s) per period");
    }
    p.design.support.push_back({x, prob, truth.grid(K, rule)});
    if (identity) {
      p.truth_on_prior.push_back(density_ratio_masses(
          p.prior, [&](std::span<const double> a) { return truth.pdf(a); },
          [&](std::span<const double> a) { return prior.pdf(a); }));
    }
  }
  at_path(root.at("design"), [&] { p.design.validate(); return 0; });
  return p;
}

}  // namespace detail

inline CommandResult cmd_exact_bias(const Node& root) {
  root.allow_only({"command", "output", "scenario", "T", "q", "reg", "K", "percentile_rule", "truth", "prior",
                   "target_x", "scale", "link", "model", "design", "effect"});
  const Node sn = root.at("scenario");
  std::string scenario = sn.raw().is_number() ? std::to_string(sn.count()) : sn.string();
  const bool two_block = scenario == "1" || scenario == "2" || scenario == "3";
  if (!two_block && scenario != "binomial" && scenario != "custom") {
    sn.fail("scenario must be 1, 2, 3, \"binomial\" or \"custom\"");
  }
  if (!two_block && !root.has("T")) root.at("T");
  const std::vector<std::size_t> Ts =
      root.has("T") ? parse_periods(root.at("T"), two_block) : std::vector<std::size_t>{2, 6, 20, 30};
  const auto orders = parse_orders(root.get("q"), {0, 1, 10, CorrectionOrder::infinity()});
  std::vector<Regularization> regs{Regularization::none(), Regularization::clamp(1e-4)};
  if (auto r = root.get("reg")) {
    regs.clear();
    for (const auto& e : r->list()) regs.push_back(parse_regularization(e));
  }
  const PercentileRule rule = parse_rule(root.get("percentile_rule"));
  const std::size_t K = root.has("K") ? positive_count(root.at("K")) : (scenario == "binomial" ? 400 : 1000);

  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (root.has(k)) root.at(k).fail("not used by scenario " + scenario);
    }
  };

  std::function<ExactBiasProblem(std::size_t)> make;
  if (two_block) {
    forbid({"scale", "link", "model", "design", "effect"});
    TwoBlockScenarioOptions opt;
    opt.K = K;
    opt.rule = rule;
    if (auto t = root.get("truth")) opt.truth = parse_product_law(*t);
    if (auto p = root.get("prior")) opt.prior = parse_product_law(*p);
    if (auto x = root.get("target_x")) opt.target_x = x->number();
    const int sc = std::stoi(scenario);
    make = [sc, opt](std::size_t T) { return two_block_scenario(sc, T, opt); };
  } else if (scenario == "binomial") {
    forbid({"target_x", "model", "design", "effect"});
    BinomialScenarioOptions opt;
    opt.K = K;
    opt.rule = rule;
    if (auto t = root.get("truth")) opt.truth = parse_distribution(*t);
    if (auto p = root.get("prior")) opt.prior = parse_distribution(*p);
    if (auto s = root.get("scale")) opt.scale = s->number();
    if (auto l = root.get("link")) {
      const std::string s = l->string();
      if (s != "logit" && s != "probit") l->fail("link must be \"logit\" or \"probit\"");
      opt.link = Link{s == "logit" ? LinkKind::logistic : LinkKind::probit};
    }
    make = [opt](std::size_t T) { return binomial_scenario(T, opt); };
  } else {
    forbid({"truth", "target_x", "scale", "link"});
    // Parse once up front so that errors surface before any computation.
    detail::custom_problem(root, Ts.front(), 1, rule);
    make = [&root, K, rule](std::size_t T) { return detail::custom_problem(root, T, K, rule); };
  }

  CommandResult out;
  out.table = Table({"T", "q", "reg", "bias", "asd", "mu0", "thm1_bias", "cs_bound"});
  for (std::size_t T : Ts) {
    const ExactBiasProblem problem = make(T);
    const bool identity = !problem.truth_on_prior.empty();
    for (const auto& row : exact_bias(problem, orders, regs)) {
      out.table.add_row({std::to_string(T), row.q.to_string(), regularization_label(row.reg), format_number(row.bias),
                         format_number(row.asd), format_number(row.mu0),
                         identity ? format_number(row.thm1_bias) : "NA", identity ? format_number(row.cs_bound) : "NA"});
      if (row.max_excursion > kEigenvalueSlack) {
        out.notes.push_back("warning: T=" + std::to_string(T) + " eigenvalue excursion " + format_number(row.max_excursion));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate

inline StudyConfig parse_study(const Node& root, std::size_t T) {
  StudyConfig cfg;
  cfg.T = T;
  if (auto n = root.get("n")) cfg.n = positive_count(*n);
  if (auto r = root.get("reps")) cfg.reps = positive_count(*r);
  if (auto s = root.get("seed")) {
    if (!s->raw().is_number_unsigned()) s->fail("seed must be a non-negative integer");
    cfg.seed = s->raw().get<std::uint64_t>();
  }
  if (auto p = root.get("prior")) {
    if (p->raw().is_object()) {
      cfg.prior = parse_product_law(*p);
      cfg.prior_id = "custom";
    } else {
      const std::size_t id = p->raw().is_string() ? at_path(*p, [&] { return parse_count(p->string(), "prior"); })
                                                  : p->count();
      if (id < 1 || id > 3) p->fail("prior must be 1, 2, 3 or a {\"a1\", \"a2\"} law");
      cfg.prior = study_prior(static_cast<int>(id));
      cfg.prior_id = std::to_string(id);
    }
  }
  if (auto e = root.get("effects")) cfg.effects = parse_strings(*e);
  cfg.orders = parse_orders(root.get("q"), cfg.orders);
  if (auto r = root.get("reg")) cfg.reg = parse_regularization(*r);
  if (auto l = root.get("L")) cfg.L = positive_count(*l);
  cfg.rule = parse_rule(root.get("percentile_rule"));
  if (auto l = root.get("level")) {
    cfg.level = l->number();
    if (!(cfg.level > 0.0 && cfg.level < 1.0)) l->fail("level must lie in (0,1)");
  }
  if (auto d = root.get("dgp")) {
    d->allow_only({"a1_mean", "a1_var", "a2_mean", "a2_var", "x_var", "zero_effects"});
    auto pos = [](const Node& v) {
      const double x = v.number();
      if (!(x > 0.0)) v.fail("variance must be positive");
      return x;
    };
    if (auto v = d->get("a1_mean")) cfg.dgp.a1_mean = v->number();
    if (auto v = d->get("a1_var")) cfg.dgp.a1_var = pos(*v);
    if (auto v = d->get("a2_mean")) cfg.dgp.a2_mean = v->number();
    if (auto v = d->get("a2_var")) cfg.dgp.a2_var = pos(*v);
    if (auto v = d->get("x_var")) cfg.dgp.x_var = pos(*v);
    if (auto v = d->get("zero_effects")) cfg.dgp.zero_effects = v->boolean();
  }
  at_path(root, [&] {
    cfg.validate();
    const auto model = rc_binary_model(cfg.T, Link{LinkKind::logistic}, true);
    for (const auto& id : cfg.effects) make_effect(id, *model);
    return 0;
  });
  return cfg;
}

inline CommandResult cmd_simulate(const Node& root) {
  root.allow_only({"command", "output", "n", "T", "reps", "seed", "prior", "effects", "q", "reg", "L",
                   "percentile_rule", "level", "dgp"});
  std::vector<StudyConfig> configs;
  for (std::size_t T : parse_periods(root.at("T"), false)) configs.push_back(parse_study(root, T));

  CommandResult out;
  out.table = Table({"effect", "prior", "T", "q", "bias", "sd", "se_sd_ratio", "coverage95", "true_value", "reps_used"});
  for (const auto& cfg : configs) {
    const StudyResult res = run_study(cfg);
    for (const auto& r : res.rows) {
      out.table.add_row({r.effect, r.prior, std::to_string(r.T), r.q.to_string(), format_number(r.bias),
                         format_number(r.sd), format_number(r.se_sd_ratio), format_number(r.coverage95),
                         format_number(r.true_value), std::to_string(r.reps_used)});
    }
    if (res.failed_reps > 0) {
      out.notes.push_back("warning: T=" + std::to_string(cfg.T) + ": " + std::to_string(res.failed_reps) +
                          " replication(s) failed and were excluded");
      for (const auto& m : res.failure_messages) out.notes.push_back("  " + m);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// twoblock

inline CommandResult cmd_twoblock(const Node& root) {
  root.allow_only({"command", "output", "T", "eps", "grid_points"});
  const std::vector<std::size_t> Ts =
      root.has("T") ? parse_periods(root.at("T"), true) : std::vector<std::size_t>{4, 8, 16, 24, 32};
  double eps = kDefaultTwoBlockEps;
  if (auto e = root.get("eps")) {
    eps = e->number();
    at_path(*e, [&] { check_eps(eps); return 0; });
  }
  std::size_t grid_points = 21;
  if (auto g = root.get("grid_points")) {
    grid_points = g->count();
    if (grid_points < 2) g->fail("need at least 2 grid points per axis");
  }
  const TwoBlockSweep sweep = two_block_sweep(Ts, eps, grid_points);
  CommandResult out;
  out.table = Table({"T", "eps", "sup_bias", "fitted_slope"});
  for (const auto& r : sweep.rows) {
    out.table.add_row({std::to_string(r.T), format_number(r.eps), format_number(r.sup_bias),
                       format_number(sweep.fitted_slope)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// estimate

inline CommandResult cmd_estimate(const Node& root, const Dataset& data) {
  root.allow_only({"command", "output", "model", "prior", "L", "percentile_rule", "effects", "q", "reg", "level"});
  if (data.empty()) throw ValidationError("data: no units");
  const std::size_t T = data.front().y.size();
  const ModelSpec spec = detail::parse_model_spec(root.at("model"), T);
  const auto model = at_path(root.at("model"), [&] { return make_model(spec); });
  const std::size_t dim = model->effect_dim();

  const Node pn = root.at("prior");
  detail::Law prior;
  if (dim == 2 && (pn.raw().is_number() || pn.raw().is_string())) {
    const std::size_t id = pn.raw().is_string() ? at_path(pn, [&] { return parse_count(pn.string(), "prior"); }) : pn.count();
    if (id < 1 || id > 3) pn.fail("prior must be 1, 2, 3 or a {\"a1\", \"a2\"} law");
    prior.product = study_prior(static_cast<int>(id));
  } else {
    prior = detail::parse_law(pn, dim);
  }
  const std::size_t L = root.has("L") ? positive_count(root.at("L")) : 99;
  const FixedEffectGrid grid = prior.grid(L, parse_rule(root.get("percentile_rule")));

  const Node en = root.at("effects");
  std::vector<EffectFunctional> effects;
  for (const auto& e : en.list()) effects.push_back(at_path(e, [&] { return make_effect(e.string(), *model); }));
  std::vector<const EffectFunctional*> eptr;
  for (const auto& e : effects) eptr.push_back(&e);
  const auto orders = parse_orders(root.get("q"), {CorrectionOrder::infinity()});

  EstimatorOptions opts;
  opts.reg = Regularization::clamp(1e-4);
  if (auto r = root.get("reg")) opts.reg = parse_regularization(*r);
  if (auto l = root.get("level")) {
    opts.level = l->number();
    if (!(opts.level > 0.0 && opts.level < 1.0)) l->fail("level must lie in (0,1)");
  }

  const auto reports = aoi_estimate_many(data, *model, fixed_prior(grid), eptr, orders, opts);
  CommandResult out;
  out.table = Table({"effect", "q", "reg", "estimate", "se", "ci_lo", "ci_hi", "level", "n", "distinct_x", "grid_size",
                     "model"});
  for (const auto& per_effect : reports) {
    for (const auto& r : per_effect) {
      out.table.add_row({r.effect_id, r.q.to_string(), regularization_label(r.reg), format_number(r.estimate),
                         format_number(r.se), format_number(r.ci_lo), format_number(r.ci_hi), format_number(r.level),
                         std::to_string(r.influences.size()), std::to_string(r.distinct_x), std::to_string(r.grid_size),
                         r.model_id});
      std::ostringstream s;
      s << r.effect_id << " (q=" << r.q.to_string() << "): " << format_number(r.estimate) << "  se "
        << format_number(r.se) << "  " << format_number(100.0 * r.level) << "% CI [" << format_number(r.ci_lo) << ", "
        << format_number(r.ci_hi) << "]  n=" << r.influences.size();
      out.notes.push_back(s.str());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

inline json parse_config_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
}

inline json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline Dataset read_data_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  try {
    return read_panel_csv(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Validates the command field against `expected` and runs it. `data` is
/// required for estimate and rejected otherwise.
inline CommandResult run_command(const std::string& expected, const json& config, const Dataset* data = nullptr) {
  const Node root(config, "config");
  if (!config.is_object()) root.fail("expected an object");
  const std::string command = root.at("command").string();
  if (command != expected) root.at("command").fail("is '" + command + "' but the '" + expected + "' command was invoked");
  parse_output(root);
  if (command == "exact-bias") return cmd_exact_bias(root);
  if (command == "simulate") return cmd_simulate(root);
  if (command == "twoblock") return cmd_twoblock(root);
  if (command == "estimate") {
    if (!data) throw ValidationError("estimate needs a data file");
    return cmd_estimate(root, *data);
  }
  root.at("command").fail("unknown command '" + command + "'");
}

inline std::string config_echo(const json& config) { return "config: " + config.dump(); }

/// Writes the table with the config echoed in the header comment.
inline void write_result(const CommandResult& result, const json& config, std::ostream& os) {
  const OutputSpec spec = parse_output(Node(config, "config"));
  result.table.write(os, spec.format, config_echo(config));
}

}  // namespace aoi::cli
