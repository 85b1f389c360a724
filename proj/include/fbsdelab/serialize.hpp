#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fbsdelab/controls.hpp"
#include "fbsdelab/cost.hpp"
#include "fbsdelab/diagnostics.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/numerics.hpp"
#include "fbsdelab/optimizer.hpp"

namespace fbsdelab {

static_assert(std::endian::native == std::endian::little,
              "binary ensemble dumps assume a little-endian host");

// Shortest round-trip decimal rendering of a double (what the JSON dumper
// emits), shared by every text format so reruns are byte-identical.
inline std::string format_double(double v) {
  return nlohmann::json(v).dump();
}

// Parse JSON text, converting the library's byte-offset errors into
// line/column positions.
inline nlohmann::json parse_json_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1, col = 1;
    const std::size_t stop = e.byte > 0 ? e.byte - 1 : 0;
    for (std::size_t i = 0; i < stop && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(e.what(), line, col);
  }
}

// Atomic text write: temp file in the target directory, then rename.
inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp~";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw StateError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json_atomic(const std::filesystem::path& path,
                              const nlohmann::json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

// Canonical content hash of a JSON value (object keys are stored sorted, so
// the dump is already canonical).
inline std::uint64_t json_hash(const nlohmann::json& j) { return fnv1a64(j.dump()); }

// ---------------------------------------------------------------------------
// Controls

inline nlohmann::json control_to_json(const RelaxedControl& q) {
  nlohmann::json atoms = nlohmann::json::array();
  for (std::size_t j = 0; j < q.n_atoms(); ++j) {
    const auto a = q.space().atom(j);
    atoms.push_back(std::vector<double>(a.begin(), a.end()));
  }
  nlohmann::json weights = nlohmann::json::array();
  for (int cell = 0; cell < q.grid().steps; ++cell) {
    const auto w = q.cell_weights(static_cast<std::size_t>(cell));
    weights.push_back(std::vector<double>(w.begin(), w.end()));
  }
  return {{"horizon", q.grid().horizon},
          {"cells", q.grid().steps},
          {"atoms", atoms},
          {"weights", weights}};
}

inline RelaxedControl control_from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "horizon" && key != "cells" && key != "atoms" && key != "weights")
      throw ConfigError("control JSON: unknown key '" + key + "'");
  }
  if (!j.contains("horizon") || !j.contains("cells") || !j.contains("atoms") ||
      !j.contains("weights"))
    throw ConfigError("control JSON: requires horizon, cells, atoms, weights");
  TimeGrid grid(j.at("horizon").get<double>(), j.at("cells").get<int>());
  ActionSpace space(j.at("atoms").get<std::vector<std::vector<double>>>());
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  if (rows.size() != static_cast<std::size_t>(grid.steps))
    throw ConfigError("control JSON: weight rows do not match cells");
  std::vector<double> flat;
  flat.reserve(rows.size() * space.size());
  for (const auto& r : rows) {
    if (r.size() != space.size())
      throw ConfigError("control JSON: weight row width does not match atoms");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return RelaxedControl(grid, space, std::move(flat));
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json cost_report_to_json(const CostReport& r) {
  return {{"estimate", r.estimate},
          {"std_error", r.std_error},
          {"terminal", r.terminal},
          {"initial", r.initial},
          {"running", r.running},
          {"n_paths", r.n_paths},
          {"seed", r.seed},
          {"bound_violations", r.bound_violations},
          {"coefficient_max_abs", r.coefficient_max_abs},
          {"bootstrap_resamples", r.bootstrap_resamples}};
}

inline nlohmann::json trace_to_json(const MinimizingTrace& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : t.entries)
    entries.push_back({{"sweep", e.sweep},
                       {"control", e.control_digest},
                       {"cost", e.cost},
                       {"std_error", e.std_error}});
  return {{"entries", entries},
          {"final_weights", t.final_weights},
          {"final_cells", t.final_cells},
          {"final_cost", t.final_cost},
          {"final_std_error", t.final_std_error},
          {"sweeps_run", t.sweeps_run},
          {"converged", t.converged},
          {"evaluations", t.evaluations}};
}

inline nlohmann::json strictification_to_json(const StrictificationReport& r) {
  return {{"selected_atoms", r.selected_atoms},
          {"realization_gap", r.realization_gap},
          {"per_cell_gap", r.per_cell_gap},
          {"cost_relaxed", r.cost_relaxed},
          {"cost_strict", r.cost_strict},
          {"cost_gap", r.cost_gap},
          {"combined_std_error", r.combined_std_error},
          {"fresh_seed", r.fresh_seed},
          {"sigma_in_tuple", r.sigma_in_tuple}};
}

inline nlohmann::json cv_report_to_json(const CvReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : r.per_partition)
    rows.push_back({{"intervals", p.intervals},
                    {"cv", p.cv},
                    {"noise_floor", p.noise_floor}});
  return {{"value", r.value},
          {"noise_floor", r.noise_floor},
          {"per_partition", rows},
          {"conditioning", r.conditioning}};
}

// Delimited table with one row per refinement level; a header names every
// statistic and the up-crossing ladder.
inline std::string tightness_to_tsv(const TightnessReport& r,
                                    const std::string& scenario_hash) {
  std::ostringstream out;
  out << "# scenario_hash=" << scenario_hash << "\n";
  out << "# conditioning=" << r.conditioning << "\n";
  out << "# ladder=";
  for (std::size_t i = 0; i < r.ladder.size(); ++i) {
    if (i) out << ";";
    out << "(" << format_double(r.ladder[i].first) << ","
        << format_double(r.ladder[i].second) << ")";
  }
  out << "\n";
  out << "steps\tcv\tcv_floor\tsup_E_abs_Y\tsup_E_abs_int_Z_dW\tE_sup_X2\t"
         "E_sup_Y2\tE_int_Z2\tE_int_Z2_se";
  for (std::size_t i = 1; i <= r.ladder.size(); ++i) out << "\tup99_" << i;
  out << "\n";
  for (const auto& row : r.rows) {
    out << row.steps << "\t" << format_double(row.cv) << "\t"
        << format_double(row.cv_floor) << "\t" << format_double(row.sup_mean_abs_y)
        << "\t" << format_double(row.sup_mean_abs_zint) << "\t"
        << format_double(row.mean_sup_x2) << "\t" << format_double(row.mean_sup_y2)
        << "\t" << format_double(row.z_l2) << "\t"
        << format_double(row.z_l2_std_error);
    for (double u : row.upcross_p99) out << "\t" << format_double(u);
    out << "\n";
  }
  out << "# bounded cv=" << r.cv_bounded << " y=" << r.y_bounded
      << " zint=" << r.zint_bounded << " x2=" << r.x2_bounded
      << " y2=" << r.y2_bounded << " z2=" << r.z2_bounded
      << " all=" << r.all_bounded << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Ensembles

// Columnar text export: path, step, t, X..., Y..., Z.... Z is undefined on
// the terminal row and left empty there. Optionally restricted to the first
// `max_paths` paths (sample-path exports).
inline std::string ensemble_to_csv(const PathEnsemble& ens, long max_paths = -1) {
  const long n = max_paths < 0 ? ens.n_paths : std::min(max_paths, ens.n_paths);
  std::ostringstream out;
  out << "path,step,t";
  for (int r = 0; r < ens.d; ++r) out << ",x" << r;
  for (int r = 0; r < ens.k; ++r) out << ",y" << r;
  for (int r = 0; r < ens.k * ens.m; ++r) out << ",z" << r;
  out << "\n";
  for (long p = 0; p < n; ++p)
    for (int i = 0; i <= ens.grid.steps; ++i) {
      out << p << "," << i << "," << format_double(ens.grid.node(i));
      for (double v : ens.x(p, i)) out << "," << format_double(v);
      for (double v : ens.y(p, i)) out << "," << format_double(v);
      if (i < ens.grid.steps)
        for (double v : ens.z(p, i)) out << "," << format_double(v);
      else
        for (int r = 0; r < ens.k * ens.m; ++r) out << ",";
      out << "\n";
    }
  return out.str();
}

namespace detail {

inline void put_u64(std::string& buf, std::uint64_t v) {
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  buf.append(bytes, 8);
}

inline std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw ParseError("truncated ensemble dump", 1, 1);
  std::uint64_t v;
  std::memcpy(&v, buf.data() + pos, 8);
  pos += 8;
  return v;
}

inline void put_f64_block(std::string& buf, const std::vector<double>& v) {
  const char* bytes = reinterpret_cast<const char*>(v.data());
  buf.append(bytes, v.size() * sizeof(double));
}

inline void get_f64_block(const std::string& buf, std::size_t& pos,
                          std::vector<double>& v) {
  const std::size_t bytes = v.size() * sizeof(double);
  if (pos + bytes > buf.size()) throw ParseError("truncated ensemble dump", 1, 1);
  std::memcpy(v.data(), buf.data() + pos, bytes);
  pos += bytes;
}

}  // namespace detail

inline constexpr char kEnsembleMagic[4] = {'F', 'B', 'S', 'E'};
inline constexpr unsigned char kEnsembleVersion = 1;

// Compact binary dump: magic, version byte, u64 dims, f64 horizon, then the
// X / Y / Z / dW blocks row-major, all little-endian.
inline std::string ensemble_to_binary(const PathEnsemble& ens) {
  std::string buf;
  buf.append(kEnsembleMagic, 4);
  buf.push_back(static_cast<char>(kEnsembleVersion));
  detail::put_u64(buf, static_cast<std::uint64_t>(ens.n_paths));
  detail::put_u64(buf, static_cast<std::uint64_t>(ens.grid.steps));
  detail::put_u64(buf, static_cast<std::uint64_t>(ens.d));
  detail::put_u64(buf, static_cast<std::uint64_t>(ens.m));
  detail::put_u64(buf, static_cast<std::uint64_t>(ens.k));
  detail::put_u64(buf, ens.has_backward ? 1 : 0);
  detail::put_u64(buf, ens.seed);
  double horizon = ens.grid.horizon;
  char hb[8];
  std::memcpy(hb, &horizon, 8);
  buf.append(hb, 8);
  detail::put_f64_block(buf, ens.X);
  detail::put_f64_block(buf, ens.Y);
  detail::put_f64_block(buf, ens.Z);
  detail::put_f64_block(buf, ens.dW);
  return buf;
}

inline PathEnsemble ensemble_from_binary(const std::string& buf) {
  if (buf.size() < 5 || std::memcmp(buf.data(), kEnsembleMagic, 4) != 0)
    throw ParseError("not an ensemble dump (bad magic)", 1, 1);
  if (static_cast<unsigned char>(buf[4]) != kEnsembleVersion)
    throw ParseError("unsupported ensemble dump version", 1, 1);
  std::size_t pos = 5;
  const long n = static_cast<long>(detail::get_u64(buf, pos));
  const int steps = static_cast<int>(detail::get_u64(buf, pos));
  const int d = static_cast<int>(detail::get_u64(buf, pos));
  const int m = static_cast<int>(detail::get_u64(buf, pos));
  const int k = static_cast<int>(detail::get_u64(buf, pos));
  const bool has_backward = detail::get_u64(buf, pos) != 0;
  const std::uint64_t seed = detail::get_u64(buf, pos);
  if (pos + 8 > buf.size()) throw ParseError("truncated ensemble dump", 1, 1);
  double horizon;
  std::memcpy(&horizon, buf.data() + pos, 8);
  pos += 8;

  PathEnsemble ens = make_forward_ensemble(TimeGrid(horizon, steps), n, d, m, k, seed);
  ens.has_backward = has_backward;
  detail::get_f64_block(buf, pos, ens.X);
  detail::get_f64_block(buf, pos, ens.Y);
  detail::get_f64_block(buf, pos, ens.Z);
  detail::get_f64_block(buf, pos, ens.dW);
  if (pos != buf.size()) throw ParseError("trailing bytes in ensemble dump", 1, 1);
  return ens;
}

}  // namespace fbsdelab
