#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fbsdelab/controls.hpp"
#include "fbsdelab/cost.hpp"
#include "fbsdelab/diagnostics.hpp"
#include "fbsdelab/expr.hpp"
#include "fbsdelab/optimizer.hpp"
#include "fbsdelab/serialize.hpp"
#include "fbsdelab/version.hpp"

namespace fbsdelab {

struct DiagnosticsConfig {
  bool enabled = true;
  std::vector<int> levels = {16, 32, 64};
  long n_paths = 0;  // 0: scenario paths, capped at kDefaultCap
  static constexpr long kDefaultCap = 20000;
};

// A fully resolved experiment: coefficients, action space, grids, control,
// sampling sizes, and optional optimizer/diagnostics stages. `resolved` is
// the canonical configuration the scenario hash is computed from; it contains
// every number that can influence an output byte.
struct Scenario {
  std::string name = "custom";
  std::string builtin;
  std::string description;

  CoefficientSet coefficients;
  ActionSpace space = ActionSpace::scalar({0.0});
  TimeGrid sim_grid{1.0, 64};
  nlohmann::json control_selector = {{"type", "uniform"}, {"cells", 1}};
  RelaxedControl control =
      RelaxedControl::uniform(TimeGrid(1.0, 1), ActionSpace::scalar({0.0}));

  std::vector<double> x0{0.0};
  long n_paths = 10000;
  std::uint64_t seed = 1;
  RegressionSpec reg{};
  std::optional<PicardConfig> picard;
  std::optional<OptimizerConfig> optimizer;
  DiagnosticsConfig diagnostics;
  int export_paths = 8;
  std::string output_dir;

  nlohmann::json resolved;

  std::uint64_t hash() const { return json_hash(resolved); }
  std::string hash_hex() const { return hex64(hash()); }
};

namespace detail {

inline void require_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError(context + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Control selectors

// Resolve a control selector against an action space and horizon. Types:
//   {"type":"uniform","cells":N}
//   {"type":"dirac","atom":j,"cells":N}
//   {"type":"chattering","n":k,"cells":N}   (chattering of the uniform measure)
//   {"type":"two-point","atoms":[i,j],"weight":w,"cells":N}
//   {"type":"weights","weights":[[...],...]}
inline RelaxedControl resolve_control(const nlohmann::json& sel,
                                      const ActionSpace& space, double horizon) {
  detail::require_keys(sel, {"type", "cells", "atom", "n", "atoms", "weight", "weights"},
                       "control");
  const std::string type = sel.at("type").get<std::string>();
  const int cells = detail::get_or(sel, "cells", 1);
  TimeGrid grid(horizon, cells);

  if (type == "uniform") return RelaxedControl::uniform(grid, space);

  if (type == "dirac") {
    const int atom = detail::get_or(sel, "atom", 0);
    if (atom < 0 || atom >= static_cast<int>(space.size()))
      throw ConfigError("control: dirac atom index outside the action space");
    return dirac_embed(StrictControl(
        grid, space, std::vector<int>(static_cast<std::size_t>(cells), atom)));
  }

  if (type == "chattering") {
    const int n = detail::get_or(sel, "n", 10);
    return dirac_embed(
        chattering_approximation(RelaxedControl::uniform(grid, space), n));
  }

  if (type == "two-point") {
    const auto atoms = sel.at("atoms").get<std::vector<int>>();
    if (atoms.size() != 2)
      throw ConfigError("control: two-point needs exactly two atom indices");
    const double w = detail::get_or(sel, "weight", 0.5);
    if (!(w >= 0.0 && w <= 1.0))
      throw ConfigError("control: two-point weight must be in [0, 1]");
    for (int a : atoms)
      if (a < 0 || a >= static_cast<int>(space.size()))
        throw ConfigError("control: two-point atom index outside the action space");
    std::vector<double> flat(static_cast<std::size_t>(cells) * space.size(), 0.0);
    for (int c = 0; c < cells; ++c) {
      flat[static_cast<std::size_t>(c) * space.size() +
           static_cast<std::size_t>(atoms[0])] += w;
      flat[static_cast<std::size_t>(c) * space.size() +
           static_cast<std::size_t>(atoms[1])] += 1.0 - w;
    }
    return RelaxedControl(grid, space, std::move(flat));
  }

  if (type == "weights") {
    nlohmann::json j = {{"horizon", horizon},
                        {"cells", static_cast<int>(sel.at("weights").size())},
                        {"atoms", nlohmann::json::array()},
                        {"weights", sel.at("weights")}};
    for (std::size_t a = 0; a < space.size(); ++a) {
      const auto atom = space.atom(a);
      j["atoms"].push_back(std::vector<double>(atom.begin(), atom.end()));
    }
    return control_from_json(j);
  }

  throw ConfigError("control: unknown type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Expression-table coefficients

namespace detail {

inline constexpr std::size_t kMaxExprVars = 48;

inline std::vector<std::string> state_variables(int d, int k, std::size_t u_dim) {
  std::vector<std::string> vars{"t"};
  for (int i = 0; i < d; ++i) vars.push_back("x" + std::to_string(i));
  for (int i = 0; i < k; ++i) vars.push_back("y" + std::to_string(i));
  for (std::size_t i = 0; i < u_dim; ++i) vars.push_back("u" + std::to_string(i));
  if (vars.size() > kMaxExprVars)
    throw ConfigError("coefficients: too many expression variables");
  return vars;
}

inline CoefficientSet::StateFn make_state_fn(std::vector<std::string> sources,
                                             int d, int k, std::size_t u_dim) {
  const auto vars = state_variables(d, k, u_dim);
  auto exprs = std::make_shared<std::vector<Expression>>();
  exprs->reserve(sources.size());
  for (auto& s : sources) exprs->emplace_back(std::move(s), vars);
  const std::size_t nvars = vars.size();
  return [exprs, nvars](double t, std::span<const double> x,
                        std::span<const double> y, std::span<const double> u,
                        std::span<double> out) {
    std::array<double, kMaxExprVars> vals;
    std::size_t o = 0;
    vals[o++] = t;
    for (double v : x) vals[o++] = v;
    for (double v : y) vals[o++] = v;
    for (double v : u) vals[o++] = v;
    const std::span<const double> vspan(vals.data(), nvars);
    for (std::size_t i = 0; i < exprs->size(); ++i) out[i] = (*exprs)[i].eval(vspan);
  };
}

inline CoefficientSet::ScalarFn make_scalar_fn(std::string source, int d, int k,
                                               std::size_t u_dim) {
  const auto vars = state_variables(d, k, u_dim);
  auto expr = std::make_shared<Expression>(std::move(source), vars);
  const std::size_t nvars = vars.size();
  return [expr, nvars](double t, std::span<const double> x,
                       std::span<const double> y, std::span<const double> u) {
    std::array<double, kMaxExprVars> vals;
    std::size_t o = 0;
    vals[o++] = t;
    for (double v : x) vals[o++] = v;
    for (double v : y) vals[o++] = v;
    for (double v : u) vals[o++] = v;
    return expr->eval(std::span<const double>(vals.data(), nvars));
  };
}

template <char Prefix>
std::vector<std::string> point_variables(int n) {
  std::vector<std::string> vars;
  for (int i = 0; i < n; ++i) vars.push_back(std::string(1, Prefix) + std::to_string(i));
  return vars;
}

}  // namespace detail

// Build a coefficient set from an expression table. Expressions for drift,
// diffusion, driver and running_cost see (t, x*, y*, u*); terminal and
// terminal_cost see x*; initial_cost sees y*.
inline CoefficientSet coefficients_from_json(const nlohmann::json& j,
                                             std::size_t u_dim) {
  detail::require_keys(
      j,
      {"d", "m", "k", "coupling", "sigma_controlled", "bound", "lipschitz",
       "drift", "diffusion", "driver", "terminal", "running_cost",
       "terminal_cost", "initial_cost"},
      "coefficients");
  CoefficientSet c;
  c.d = detail::get_or(j, "d", 1);
  c.m = detail::get_or(j, "m", 1);
  c.k = detail::get_or(j, "k", 1);
  const std::string coupling = detail::get_or<std::string>(j, "coupling", "decoupled");
  if (coupling == "decoupled")
    c.coupling = Coupling::kDecoupled;
  else if (coupling == "coupled")
    c.coupling = Coupling::kCoupled;
  else
    throw ConfigError("coefficients: coupling must be 'decoupled' or 'coupled'");
  c.sigma_controlled = detail::get_or(j, "sigma_controlled", false);
  c.bound = detail::get_or(j, "bound", 1e6);
  c.lipschitz = detail::get_or(j, "lipschitz", 0.0);

  auto drift = j.at("drift").get<std::vector<std::string>>();
  if (drift.size() != static_cast<std::size_t>(c.d))
    throw ConfigError("coefficients: drift needs d expressions");
  c.drift = detail::make_state_fn(std::move(drift), c.d, c.k, u_dim);

  auto rows = j.at("diffusion").get<std::vector<std::vector<std::string>>>();
  if (rows.size() != static_cast<std::size_t>(c.d))
    throw ConfigError("coefficients: diffusion needs d rows");
  std::vector<std::string> flat;
  for (auto& r : rows) {
    if (r.size() != static_cast<std::size_t>(c.m))
      throw ConfigError("coefficients: diffusion rows need m expressions");
    for (auto& e : r) flat.push_back(std::move(e));
  }
  c.diffusion = detail::make_state_fn(std::move(flat), c.d, c.k, u_dim);

  auto driver = j.at("driver").get<std::vector<std::string>>();
  if (driver.size() != static_cast<std::size_t>(c.k))
    throw ConfigError("coefficients: driver needs k expressions");
  c.driver = detail::make_state_fn(std::move(driver), c.d, c.k, u_dim);

  auto terminal = j.at("terminal").get<std::vector<std::string>>();
  if (terminal.size() != static_cast<std::size_t>(c.k))
    throw ConfigError("coefficients: terminal needs k expressions");
  {
    const auto vars = detail::point_variables<'x'>(c.d);
    auto exprs = std::make_shared<std::vector<Expression>>();
    for (auto& s : terminal) exprs->emplace_back(std::move(s), vars);
    c.terminal = [exprs](std::span<const double> x, std::span<double> out) {
      for (std::size_t i = 0; i < exprs->size(); ++i) out[i] = (*exprs)[i].eval(x);
    };
  }
  if (j.contains("running_cost"))
    c.running_cost = detail::make_scalar_fn(j.at("running_cost").get<std::string>(),
                                            c.d, c.k, u_dim);
  if (j.contains("terminal_cost")) {
    auto expr = std::make_shared<Expression>(j.at("terminal_cost").get<std::string>(),
                                             detail::point_variables<'x'>(c.d));
    c.terminal_cost = [expr](std::span<const double> x) { return expr->eval(x); };
  }
  if (j.contains("initial_cost")) {
    auto expr = std::make_shared<Expression>(j.at("initial_cost").get<std::string>(),
                                             detail::point_variables<'y'>(c.k));
    c.initial_cost = [expr](std::span<const double> y) { return expr->eval(y); };
  }
  c.validate();
  return c;
}

inline ActionSpace action_space_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"atoms", "equispaced"}, "action_space");
  if (j.contains("atoms") == j.contains("equispaced"))
    throw ConfigError("action_space: give exactly one of 'atoms' or 'equispaced'");
  if (j.contains("atoms"))
    return ActionSpace(j.at("atoms").get<std::vector<std::vector<double>>>());
  const auto& e = j.at("equispaced");
  detail::require_keys(e, {"lo", "hi", "count"}, "action_space.equispaced");
  return ActionSpace::equispaced(e.at("lo").get<double>(), e.at("hi").get<double>(),
                                 e.at("count").get<int>());
}

// ---------------------------------------------------------------------------
// Builtins

namespace detail {

inline CoefficientSet::StateFn constant_state(double v) {
  return [v](double, std::span<const double>, std::span<const double>,
             std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), v);
  };
}

}  // namespace detail

inline std::vector<std::string> list_builtins() {
  return {"chattering",      "lq-decoupled", "coupled-linear",
          "nonconvex-range", "linear-convex", "brownian"};
}

// The shipped model problems. Each returns a complete scenario with pinned
// defaults; JSON configs override fields afterwards.
inline Scenario make_builtin(const std::string& name) {
  Scenario s;
  s.name = name;
  s.builtin = name;

  auto identity_terminal = [](std::span<const double> x, std::span<double> out) {
    out[0] = x[0];
  };
  auto zero_terminal = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };

  if (name == "chattering") {
    s.description =
        "Deterministic fast-switching drift: b=u on {+1,-1}, sigma=0, running "
        "cost x^2. The order-n chattering control keeps |X| <= T/n and the "
        "cost at T^3/(3 n^2), witnessing relaxation by oscillation.";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.drift = [](double, std::span<const double>, std::span<const double>,
                 std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    c.diffusion = detail::constant_state(0.0);
    c.driver = detail::constant_state(0.0);
    c.terminal = zero_terminal;
    c.running_cost = [](double, std::span<const double> x, std::span<const double>,
                        std::span<const double>) { return x[0] * x[0]; };
    s.space = ActionSpace::scalar({1.0, -1.0});
    s.sim_grid = TimeGrid(1.0, 10000);
    s.control_selector = {{"type", "chattering"}, {"n", 10}, {"cells", 1}};
    s.x0 = {0.0};
    s.n_paths = 1;  // sigma = 0 and strict control: one path carries it all
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 1, 1e-10};
    s.diagnostics.n_paths = 2048;
  } else if (name == "lq-decoupled") {
    s.description =
        "Linear decoupled benchmark: b=u on {1}, sigma=1, driver h=0.5*y, "
        "phi(x)=x, g(y)=y. Closed form Y_0 = exp(0.5*T)*(x0 + T).";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.lipschitz = 0.5;
    c.drift = [](double, std::span<const double>, std::span<const double>,
                 std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    c.diffusion = detail::constant_state(1.0);
    c.driver = [](double, std::span<const double>, std::span<const double> y,
                  std::span<const double>, std::span<double> out) {
      out[0] = 0.5 * y[0];
    };
    c.terminal = identity_terminal;
    c.initial_cost = [](std::span<const double> y) { return y[0]; };
    s.space = ActionSpace::scalar({1.0});
    s.sim_grid = TimeGrid(1.0, 64);
    s.control_selector = {{"type", "dirac"}, {"atom", 0}, {"cells", 1}};
    s.x0 = {0.0};
    s.n_paths = 100000;
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 2, 1e-10};
  } else if (name == "coupled-linear") {
    s.description =
        "Fully coupled affine system: b=-y, sigma=1, h=-x, phi(x)=x, g(y)=y, "
        "x0=1. The affine ansatz Y_t = a(t) X_t reduces it to the scalar "
        "Riccati equation a' = 1 + a^2, a(T) = 1.";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.coupling = Coupling::kCoupled;
    c.drift = [](double, std::span<const double>, std::span<const double> y,
                 std::span<const double>, std::span<double> out) { out[0] = -y[0]; };
    c.diffusion = detail::constant_state(1.0);
    c.driver = [](double, std::span<const double> x, std::span<const double>,
                  std::span<const double>, std::span<double> out) { out[0] = -x[0]; };
    c.terminal = identity_terminal;
    c.initial_cost = [](std::span<const double> y) { return y[0]; };
    s.space = ActionSpace::scalar({0.0});
    s.sim_grid = TimeGrid(1.0, 64);
    s.control_selector = {{"type", "dirac"}, {"atom", 0}, {"cells", 1}};
    s.x0 = {1.0};
    s.n_paths = 100000;
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 2, 1e-10};
    PicardConfig pc;
    pc.max_iters = 60;
    pc.tol = 1e-3;
    pc.damping = 0.5;
    s.picard = pc;
  } else if (name == "nonconvex-range") {
    s.description =
        "Strictification negative control: b=u on {-1,+1}, sigma=1, running "
        "cost -u^2. The averaged coefficients (drift 0, cost -1) lie outside "
        "the coefficient range, so no strict control realizes them.";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.drift = [](double, std::span<const double>, std::span<const double>,
                 std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    c.diffusion = detail::constant_state(1.0);
    c.driver = detail::constant_state(0.0);
    c.terminal = zero_terminal;
    c.running_cost = [](double, std::span<const double>, std::span<const double>,
                        std::span<const double> u) { return -u[0] * u[0]; };
    s.space = ActionSpace::scalar({-1.0, 1.0});
    s.sim_grid = TimeGrid(1.0, 32);
    s.control_selector = {{"type", "uniform"}, {"cells", 1}};
    s.x0 = {0.0};
    s.n_paths = 10000;
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 2, 1e-10};
  } else if (name == "linear-convex") {
    s.description =
        "Convex-range strictification case: b=u, running cost u, phi(x)=x, "
        "psi(x)=x, g(y)=y on 21 equispaced atoms in [-1,1]. Every averaged "
        "coefficient tuple is (to atom resolution) attained by some atom.";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.drift = [](double, std::span<const double>, std::span<const double>,
                 std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    c.diffusion = detail::constant_state(1.0);
    c.driver = detail::constant_state(0.0);
    c.terminal = identity_terminal;
    c.running_cost = [](double, std::span<const double>, std::span<const double>,
                        std::span<const double> u) { return u[0]; };
    c.terminal_cost = [](std::span<const double> x) { return x[0]; };
    c.initial_cost = [](std::span<const double> y) { return y[0]; };
    s.space = ActionSpace::equispaced(-1.0, 1.0, 21);
    s.sim_grid = TimeGrid(1.0, 32);
    s.control_selector = {
        {"type", "two-point"}, {"atoms", {0, 20}}, {"weight", 0.5}, {"cells", 1}};
    s.x0 = {0.0};
    s.n_paths = 20000;
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 2, 1e-10};
  } else if (name == "brownian") {
    s.description =
        "Martingale-representation sanity case: b=0, sigma=1, h=0, phi(x)=x, "
        "g(y)=y. Then Y = X, Z = 1, and the integrated |Z|^2 equals T "
        "exactly.";
    CoefficientSet& c = s.coefficients;
    c.d = c.m = c.k = 1;
    c.drift = detail::constant_state(0.0);
    c.diffusion = detail::constant_state(1.0);
    c.driver = detail::constant_state(0.0);
    c.terminal = identity_terminal;
    c.initial_cost = [](std::span<const double> y) { return y[0]; };
    s.space = ActionSpace::scalar({0.0});
    s.sim_grid = TimeGrid(1.0, 64);
    s.control_selector = {{"type", "dirac"}, {"atom", 0}, {"cells", 1}};
    s.x0 = {0.0};
    s.n_paths = 100000;
    s.reg = RegressionSpec{RegressionSpec::Basis::kPolynomial, 1, 1e-10};
  } else {
    throw ConfigError("unknown builtin '" + name + "'");
  }

  s.control = resolve_control(s.control_selector, s.space, s.sim_grid.horizon);
  return s;
}

// ---------------------------------------------------------------------------
// Resolution and hashing

namespace detail {

inline nlohmann::json regression_to_json(const RegressionSpec& r) {
  return {{"basis", r.basis == RegressionSpec::Basis::kPolynomial ? "polynomial" : "bins"},
          {"order", r.order},
          {"ridge", r.ridge}};
}

inline RegressionSpec regression_from_json(const nlohmann::json& j,
                                           RegressionSpec base) {
  require_keys(j, {"basis", "order", "ridge"}, "regression");
  if (j.contains("basis")) {
    const std::string b = j.at("basis").get<std::string>();
    if (b == "polynomial")
      base.basis = RegressionSpec::Basis::kPolynomial;
    else if (b == "bins")
      base.basis = RegressionSpec::Basis::kBins;
    else
      throw ConfigError("regression: basis must be 'polynomial' or 'bins'");
  }
  base.order = get_or(j, "order", base.order);
  base.ridge = get_or(j, "ridge", base.ridge);
  base.validate();
  return base;
}

inline nlohmann::json picard_to_json(const PicardConfig& p) {
  return {{"max_iters", p.max_iters},
          {"tol", p.tol},
          {"damping", p.damping},
          {"probe_paths", p.probe_paths}};
}

inline PicardConfig picard_from_json(const nlohmann::json& j, PicardConfig base) {
  require_keys(j, {"max_iters", "tol", "damping", "probe_paths"}, "picard");
  base.max_iters = get_or(j, "max_iters", base.max_iters);
  base.tol = get_or(j, "tol", base.tol);
  base.damping = get_or(j, "damping", base.damping);
  base.probe_paths = get_or(j, "probe_paths", base.probe_paths);
  base.validate();
  return base;
}

inline nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
  nlohmann::json j{
      {"rule", o.rule == OptimizerConfig::StepRule::kExhaustiveVertex
                   ? "vertex"
                   : "projected-gradient"},
      {"init", o.init == OptimizerConfig::Init::kUniform ? "uniform" : "dirac"},
      {"init_atom", o.init_atom},
      {"control_cells", o.control_cells},
      {"max_sweeps", o.max_sweeps},
      {"cost_tolerance", o.cost_tolerance},
      {"step_size", o.step_size},
      {"shrink", o.shrink},
      {"eval_paths", o.eval_paths},
      {"seed", o.seed},
      {"regression", regression_to_json(o.reg)}};
  if (o.refine_to_cells) j["refine_to_cells"] = *o.refine_to_cells;
  if (o.picard) j["picard"] = picard_to_json(*o.picard);
  return j;
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j,
                                           const Scenario& s) {
  require_keys(j,
               {"rule", "init", "init_atom", "control_cells", "max_sweeps",
                "cost_tolerance", "step_size", "shrink", "eval_paths", "seed",
                "regression", "refine_to_cells", "picard"},
               "optimizer");
  OptimizerConfig o;
  o.seed = CounterRng::derive(s.seed, 0x09E7);
  o.reg = s.reg;
  o.picard = s.picard;
  if (j.contains("rule")) {
    const std::string r = j.at("rule").get<std::string>();
    if (r == "vertex")
      o.rule = OptimizerConfig::StepRule::kExhaustiveVertex;
    else if (r == "projected-gradient")
      o.rule = OptimizerConfig::StepRule::kProjectedGradient;
    else
      throw ConfigError("optimizer: rule must be 'vertex' or 'projected-gradient'");
  }
  if (j.contains("init")) {
    const std::string i = j.at("init").get<std::string>();
    if (i == "uniform")
      o.init = OptimizerConfig::Init::kUniform;
    else if (i == "dirac")
      o.init = OptimizerConfig::Init::kDirac;
    else
      throw ConfigError("optimizer: init must be 'uniform' or 'dirac'");
  }
  o.init_atom = get_or(j, "init_atom", o.init_atom);
  o.control_cells = get_or(j, "control_cells", o.control_cells);
  o.max_sweeps = get_or(j, "max_sweeps", o.max_sweeps);
  o.cost_tolerance = get_or(j, "cost_tolerance", o.cost_tolerance);
  o.step_size = get_or(j, "step_size", o.step_size);
  o.shrink = get_or(j, "shrink", o.shrink);
  o.eval_paths = get_or(j, "eval_paths", o.eval_paths);
  o.seed = get_or(j, "seed", o.seed);
  if (j.contains("regression"))
    o.reg = regression_from_json(j.at("regression"), o.reg);
  if (j.contains("refine_to_cells"))
    o.refine_to_cells = j.at("refine_to_cells").get<int>();
  if (j.contains("picard"))
    o.picard = picard_from_json(j.at("picard"), o.picard.value_or(PicardConfig{}));
  o.validate();
  return o;
}

}  // namespace detail

// Canonical resolved configuration; everything that can influence an output
// number appears here, and the scenario hash is this object's content hash.
inline nlohmann::json resolve_scenario_json(const Scenario& s) {
  nlohmann::json j;
  j["builtin"] = s.builtin;
  j["grid"] = {{"horizon", s.sim_grid.horizon}, {"steps", s.sim_grid.steps}};
  j["control"] = control_to_json(s.control);
  j["x0"] = s.x0;
  j["n_paths"] = s.n_paths;
  j["seed"] = s.seed;
  j["regression"] = detail::regression_to_json(s.reg);
  if (s.picard) j["picard"] = detail::picard_to_json(*s.picard);
  if (s.optimizer) j["optimizer"] = detail::optimizer_to_json(*s.optimizer);
  j["diagnostics"] = {{"enabled", s.diagnostics.enabled},
                      {"levels", s.diagnostics.levels},
                      {"n_paths", s.diagnostics.n_paths}};
  j["export_paths"] = s.export_paths;
  j["version"] = std::string(kVersion);
  return j;
}

// Build a scenario from a JSON config: either a builtin plus overrides, or a
// fully custom specification with an expression-table coefficient set.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  detail::require_keys(
      j,
      {"name", "builtin", "coefficients", "action_space", "grid", "control",
       "x0", "n_paths", "seed", "regression", "picard", "optimizer",
       "diagnostics", "export_paths", "output_dir"},
      "scenario");

  Scenario s;
  const bool is_builtin = j.contains("builtin");
  if (is_builtin == j.contains("coefficients"))
    throw ConfigError("scenario: give exactly one of 'builtin' or 'coefficients'");

  if (is_builtin) {
    s = make_builtin(j.at("builtin").get<std::string>());
  } else {
    if (!j.contains("action_space"))
      throw ConfigError("scenario: custom coefficients need an action_space");
    s.space = action_space_from_json(j.at("action_space"));
    s.coefficients = coefficients_from_json(j.at("coefficients"), s.space.dim());
    if (s.coefficients.coupling == Coupling::kCoupled) s.picard = PicardConfig{};
  }
  if (j.contains("action_space") && is_builtin)
    throw ConfigError("scenario: builtins fix their action space");

  if (j.contains("name")) s.name = j.at("name").get<std::string>();
  if (j.contains("grid")) {
    detail::require_keys(j.at("grid"), {"horizon", "steps"}, "grid");
    s.sim_grid = TimeGrid(
        detail::get_or(j.at("grid"), "horizon", s.sim_grid.horizon),
        detail::get_or(j.at("grid"), "steps", s.sim_grid.steps));
  }
  if (j.contains("x0")) {
    if (j.at("x0").is_number())
      s.x0.assign(static_cast<std::size_t>(s.coefficients.d),
                  j.at("x0").get<double>());
    else
      s.x0 = j.at("x0").get<std::vector<double>>();
  }
  if (s.x0.size() != static_cast<std::size_t>(s.coefficients.d))
    throw ConfigError("scenario: x0 dimension does not match the state");
  s.n_paths = detail::get_or(j, "n_paths", s.n_paths);
  if (s.n_paths < 1) throw ConfigError("scenario: n_paths must be >= 1");
  s.seed = detail::get_or(j, "seed", s.seed);
  if (j.contains("regression"))
    s.reg = detail::regression_from_json(j.at("regression"), s.reg);
  if (j.contains("picard"))
    s.picard = detail::picard_from_json(j.at("picard"), s.picard.value_or(PicardConfig{}));
  if (j.contains("control")) s.control_selector = j.at("control");
  s.control = resolve_control(s.control_selector, s.space, s.sim_grid.horizon);
  if (j.contains("optimizer"))
    s.optimizer = detail::optimizer_from_json(j.at("optimizer"), s);
  if (j.contains("diagnostics")) {
    const auto& dj = j.at("diagnostics");
    detail::require_keys(dj, {"enabled", "levels", "n_paths"}, "diagnostics");
    s.diagnostics.enabled = detail::get_or(dj, "enabled", s.diagnostics.enabled);
    if (dj.contains("levels"))
      s.diagnostics.levels = dj.at("levels").get<std::vector<int>>();
    if (s.diagnostics.levels.empty())
      throw ConfigError("diagnostics: levels must be nonempty");
    s.diagnostics.n_paths = detail::get_or(dj, "n_paths", s.diagnostics.n_paths);
  }
  s.export_paths = detail::get_or(j, "export_paths", s.export_paths);
  if (s.export_paths < 0) throw ConfigError("scenario: export_paths must be >= 0");
  s.output_dir = detail::get_or<std::string>(j, "output_dir", s.output_dir);

  if (!s.sim_grid.refines(s.control.grid()))
    throw ConfigError(
        "scenario: the control grid must coarsen the simulation grid "
        "(cells must divide steps)");
  s.coefficients.validate();
  s.resolved = resolve_scenario_json(s);
  return s;
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open scenario file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(parse_json_text(buf.str()));
}

inline Scenario make_builtin_resolved(const std::string& name) {
  Scenario s = make_builtin(name);
  s.resolved = resolve_scenario_json(s);
  return s;
}

inline std::string describe_builtin(const std::string& name) {
  const Scenario s = make_builtin_resolved(name);
  std::ostringstream out;
  out << s.name << "\n" << s.description << "\n\ndefaults:\n"
      << s.resolved.dump(2) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Running

struct RunResult {
  std::filesystem::path dir;
  nlohmann::json summary;
  bool ok = true;
};

// Execute a scenario into a directory: cost evaluation, optional diagnostics,
// optional optimization + strictification, sample-path export, and a summary
// naming every artifact. Stage failures are recorded, not rethrown, so one
// broken stage leaves the rest of the artifacts usable. Nothing written here
// contains a timestamp: reruns of the same config are byte-identical.
inline RunResult run_scenario(const Scenario& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string hash = s.hash_hex();

  RunResult result;
  result.dir = dir;
  nlohmann::json files = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();

  auto emit_json = [&](const std::string& fname, nlohmann::json j) {
    j["scenario_hash"] = hash;
    write_json_atomic(dir / fname, j);
    files.push_back(fname);
  };
  auto stage = [&](const char* label, auto&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      failures.push_back({{"stage", label}, {"error", e.what()}});
      result.ok = false;
    }
  };

  emit_json("config.json", s.resolved);
  emit_json("control.json", control_to_json(s.control));

  std::optional<PathEnsemble> ens;
  stage("solve", [&] {
    ens = solve_any(s.coefficients, s.control, s.sim_grid, s.x0, s.n_paths,
                    s.seed, s.reg, s.picard);
  });
  if (ens) {
    stage("cost", [&] {
      const CostReport cost = evaluate_cost(s.coefficients, s.control, *ens);
      emit_json("cost.json", cost_report_to_json(cost));
    });
    if (s.export_paths > 0)
      stage("paths", [&] {
        write_text_atomic(dir / "paths.csv", "# scenario_hash=" + hash + "\n" +
                                                 ensemble_to_csv(*ens, s.export_paths));
        files.push_back("paths.csv");
      });
  }

  if (s.diagnostics.enabled && ens) {
    stage("diagnostics", [&] {
      nlohmann::json dj;
      const CvReport cv = conditional_variation(*ens, s.reg);
      dj["conditional_variation"] = cv_report_to_json(cv);
      dj["driver_l1"] = driver_l1(s.coefficients, s.control, *ens);
      const OrthogonalRemainder rem =
          orthogonal_remainder(s.coefficients, s.control, *ens, s.reg);
      dj["orthogonal_remainder"] = {{"value", rem.value},
                                    {"noise_floor", rem.noise_floor}};
      emit_json("diagnostics.json", dj);
    });
    stage("tightness", [&] {
      long diag_paths = s.diagnostics.n_paths;
      if (diag_paths <= 0)
        diag_paths = std::min(s.n_paths, DiagnosticsConfig::kDefaultCap);
      const TightnessReport table = meyer_zheng_table(
          s.coefficients, s.control, s.x0, diag_paths,
          CounterRng::derive(s.seed, 0x7A61), s.reg, s.diagnostics.levels,
          s.picard);
      write_text_atomic(dir / "tightness.tsv", tightness_to_tsv(table, hash));
      files.push_back("tightness.tsv");
    });
  }

  if (s.optimizer) {
    stage("optimize", [&] {
      const MinimizingTrace trace = minimize_relaxed(
          s.coefficients, s.sim_grid, s.x0, s.space, *s.optimizer);
      emit_json("trace.json", trace_to_json(trace));
      const RelaxedControl q_hat(TimeGrid(s.sim_grid.horizon, trace.final_cells),
                                 s.space, trace.final_weights);
      emit_json("optimized_control.json", control_to_json(q_hat));
      const PathEnsemble opt_ens =
          solve_any(s.coefficients, q_hat, s.sim_grid, s.x0,
                    s.optimizer->eval_paths, s.optimizer->seed,
                    s.optimizer->reg, s.optimizer->picard);
      const StrictificationReport sr = strictify(
          s.coefficients, q_hat, opt_ens, s.optimizer->reg, s.optimizer->picard);
      emit_json("strictification.json", strictification_to_json(sr));
    });
  }

  nlohmann::json summary{{"name", s.name},
                         {"builtin", s.builtin},
                         {"scenario_hash", hash},
                         {"version", std::string(kVersion)},
                         {"files", files},
                         {"failures", failures},
                         {"ok", result.ok}};
  nlohmann::json modules;
  for (const auto& [mod, ver] : kModuleVersions)
    modules[std::string(mod)] = std::string(ver);
  summary["modules"] = modules;
  write_json_atomic(dir / "summary.json", summary);
  result.summary = std::move(summary);
  return result;
}

}  // namespace fbsdelab
