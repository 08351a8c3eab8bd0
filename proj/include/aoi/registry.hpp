#pragma once

// String identifiers for models and effects, as used in run configs.

#include <charconv>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aoi/effect.hpp"
#include "aoi/model.hpp"
#include "aoi/numeric.hpp"

namespace aoi {

inline double parse_real(std::string_view text, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("invalid number '" + std::string(text) + "' in " + what);
  }
  return v;
}

inline std::size_t parse_count(std::string_view text, const std::string& what) {
  std::size_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("invalid integer '" + std::string(text) + "' in " + what);
  }
  return v;
}

struct ModelSpec {
  std::string id;
  std::size_t T = 0;
  std::vector<double> beta;
  bool collapse = true;
};

/// static_logit, binomial_nocov_logit, binomial_nocov_probit, rc_binary_logit,
/// rc_binary_probit.
inline std::shared_ptr<PanelModel> make_model(const ModelSpec& spec) {
  if (spec.id == "static_logit") return std::make_shared<StaticLogitModel>(spec.T, spec.beta, spec.collapse);
  if (spec.id == "binomial_nocov_logit") return binomial_nocov_model(spec.T, Link{LinkKind::logistic});
  if (spec.id == "binomial_nocov_probit") return binomial_nocov_model(spec.T, Link{LinkKind::probit});
  if (spec.id == "rc_binary_logit") return rc_binary_model(spec.T, Link{LinkKind::logistic}, spec.collapse);
  if (spec.id == "rc_binary_probit") return rc_binary_model(spec.T, Link{LinkKind::probit}, spec.collapse);
  throw ValidationError("unknown model id '" + spec.id + "'");
}

namespace detail {

/// 1-based period suffix "@t" → 0-based index.
inline std::optional<std::size_t> period_suffix(std::string_view id, std::string_view base, const PanelModel& model) {
  if (id == base) return std::nullopt;
  const std::size_t t = parse_count(id.substr(base.size() + 1), "effect id");
  if (t < 1 || t > model.periods()) {
    throw ValidationError("effect period " + std::to_string(t) + " outside 1.." + std::to_string(model.periods()));
  }
  return t - 1;
}

inline bool has_prefix(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace detail

/// ape, ape@t, cf_prob:v, ate, ame, ame@t, index_prob:s.
inline EffectFunctional make_effect(const std::string& id, const PanelModel& model) {
  const std::string_view v(id);
  if (v == "ape" || detail::has_prefix(v, "ape@")) {
    if (model.effect_dim() != 2 || model.link().kind != LinkKind::logistic) {
      throw ValidationError("effect 'ape' needs the logistic random-coefficient model");
    }
    auto e = effect_ape_logistic(detail::period_suffix(v, "ape", model));
    return EffectFunctional(id, [e](const Covariates& x, std::span<const double> a) { return e(x, a); });
  }
  if (detail::has_prefix(v, "cf_prob:")) {
    if (model.effect_dim() != 2) throw ValidationError("effect 'cf_prob' needs the random-coefficient model");
    auto e = effect_counterfactual_prob(parse_real(v.substr(8), "effect id"), model.link());
    return EffectFunctional(id, [e](const Covariates& x, std::span<const double> a) { return e(x, a); }, false);
  }
  if (detail::has_prefix(v, "index_prob:")) {
    if (model.effect_dim() != 1) throw ValidationError("effect 'index_prob' needs a scalar fixed effect");
    auto e = effect_index_prob(parse_real(v.substr(11), "effect id"), model.link());
    return EffectFunctional(id, [e](const Covariates& x, std::span<const double> a) { return e(x, a); }, false);
  }
  if (v == "ate" || v == "ame" || detail::has_prefix(v, "ame@")) {
    const auto* sl = dynamic_cast<const StaticLogitModel*>(&model);
    if (!sl) throw ValidationError("effect '" + id + "' needs the static_logit model");
    auto e = v == "ate" ? effect_treatment_effect(*sl) : effect_ame_logit(*sl, detail::period_suffix(v, "ame", model));
    return EffectFunctional(id, [e](const Covariates& x, std::span<const double> a) { return e(x, a); });
  }
  throw ValidationError("unknown effect id '" + id + "'");
}

}  // namespace aoi
