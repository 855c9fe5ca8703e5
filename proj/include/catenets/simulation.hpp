#pragma once

// Semi-synthetic data: polynomial response surfaces (setups A and B) and
// exponential IHDP-style surfaces (setups C and D).

#include "catenets/core.hpp"
#include "catenets/diffcore/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace catenets::sim {

enum class ColumnType { Continuous, Binary };

struct Covariates {
  Matrix x;
  std::vector<ColumnType> types;
  std::vector<std::string> names;

  Index rows() const { return x.rows(); }
  Index cols() const { return x.cols(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline double parse_number(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw InputError(where + ": non-numeric cell '" + raw + "'");
  return v;
}

/// Header plus rectangular numeric body.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_numeric_csv(const std::string& path) {
  if (!std::filesystem::exists(path)) throw InputError("csv: path not found: " + path);
  std::ifstream in(path);
  if (!in) throw InputError("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      for (auto& c : cells) t.header.push_back(trim(c));
      continue;
    }
    if (cells.size() != t.header.size())
      throw InputError(path + ":" + std::to_string(line_no) + ": ragged row with " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      row.push_back(parse_number(cells[c], path + ":" + std::to_string(line_no) + " column '" + t.header[c] + "'"));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw InputError("csv: empty file " + path);
  if (t.rows.empty()) throw InputError("csv: no data rows in " + path);
  return t;
}

}  // namespace detail

/// A column with at most two distinct values is typed binary.
inline std::vector<ColumnType> infer_column_types(const Matrix& x) {
  std::vector<ColumnType> types;
  for (Index c = 0; c < x.cols(); ++c) {
    std::set<double> seen;
    for (Index r = 0; r < x.rows() && seen.size() <= 2; ++r) seen.insert(x(r, c));
    types.push_back(seen.size() <= 2 ? ColumnType::Binary : ColumnType::Continuous);
  }
  return types;
}

/// Reads a preprocessed covariate matrix (header row, numeric cells).
inline Covariates load_covariates_csv(const std::string& path) {
  const auto t = detail::read_numeric_csv(path);
  Covariates cov;
  cov.names = t.header;
  cov.x.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c) cov.x(static_cast<Index>(r), static_cast<Index>(c)) = t.rows[r][c];
  cov.types = infer_column_types(cov.x);
  return cov;
}

/// d_cont standard normal columns followed by d_bin Bernoulli(0.5) columns.
inline Covariates gen_covariates_synthetic(Index n, Index d_cont, Index d_bin, std::uint64_t seed) {
  if (n <= 0 || d_cont < 0 || d_bin < 0 || d_cont + d_bin == 0)
    throw InputError("gen_covariates_synthetic: need n > 0 and at least one column");
  Rng rng(derive_seed(seed, 0x636f76ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Covariates cov;
  cov.x.resize(n, d_cont + d_bin);
  for (Index c = 0; c < d_cont + d_bin; ++c) {
    const bool binary = c >= d_cont;
    for (Index r = 0; r < n; ++r) cov.x(r, c) = binary ? (coin(rng) ? 1.0 : 0.0) : normal(rng);
    cov.types.push_back(binary ? ColumnType::Binary : ColumnType::Continuous);
    cov.names.push_back("x_" + std::to_string(c + 1));
  }
  return cov;
}

// ---------------------------------------------------------------------------
// Datasets

/// One partition. Rows of x line up with every vector; ids are pool row indices.
struct Split {
  Matrix x;
  Vector w, y, mu0, mu1, tau;
  std::vector<Index> ids;

  Index size() const { return x.rows(); }
  diff::Batch batch() const { return {x, y, w}; }
  /// Rows with the given treatment value.
  diff::Batch arm(double value) const {
    std::vector<Index> idx;
    for (Index i = 0; i < size(); ++i)
      if (w(i) == value) idx.push_back(i);
    return batch().rows(idx);
  }
};

struct Interaction {
  Index j = 0, l = 0;
  double beta = 0.0;
  double omega = 0.0;  // setup B cancellation mask
};

/// Coefficients of the generating surfaces. Polynomial setups fill beta,
/// interactions and gamma (A) or omega (B); IHDP setups fill beta and shift.
struct SurfaceRecord {
  std::string setup;
  double intercept = 0.0;
  Vector beta;
  Vector gamma;
  Vector omega;
  std::vector<Interaction> interactions;
  double ihdp_omega = 0.0;
  double ihdp_offset = 0.5;
};

struct SimulatedDataset {
  std::string setup;
  Split train, test;
  std::optional<double> propensity;  // known constant propensity, randomized designs only
  SurfaceRecord surface;
  double noise_sd = 1.0;

  Index dim() const { return train.x.cols(); }
};

struct Partition {
  std::vector<Index> control, treated, test;
  double propensity = 0.5;
};

/// Draws disjoint control / treated / test rows from a pool of `pool_size`.
inline Partition assign_treatment_random(Index pool_size, Index n0, Index n1, Index n_test, std::uint64_t seed) {
  if (n0 < 0 || n1 < 0 || n_test < 0 || n0 + n1 == 0) throw InputError("assign_treatment_random: invalid sizes");
  if (n0 + n1 + n_test > pool_size)
    throw InputError("insufficient pool: need " + std::to_string(n0 + n1 + n_test) + " rows, pool has " +
                     std::to_string(pool_size));
  std::vector<Index> idx(static_cast<std::size_t>(pool_size));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(derive_seed(seed, 0x70617274ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  Partition p;
  auto it = idx.begin();
  p.control.assign(it, it + n0);
  p.treated.assign(it + n0, it + n0 + n1);
  p.test.assign(it + n0 + n1, it + n0 + n1 + n_test);
  p.propensity = static_cast<double>(n1) / static_cast<double>(n0 + n1);
  std::set<Index> seen;
  for (const auto* part : {&p.control, &p.treated, &p.test})
    for (Index i : *part)
      if (!seen.insert(i).second) throw std::logic_error("assign_treatment_random: partitions overlap");
  return p;
}

/// Noise-free surfaces of a polynomial setup on the rows of x.
inline std::pair<Vector, Vector> polynomial_surfaces(const SurfaceRecord& s, const Matrix& x) {
  const Index n = x.rows();
  Vector mu0 = Vector::Constant(n, s.intercept) + x * s.beta;
  Vector mu1 = mu0;
  if (s.setup == "A") {
    mu1 += x * s.gamma;
  } else {
    mu1 = Vector::Constant(n, s.intercept) + x * s.beta.cwiseProduct((1.0 - s.omega.array()).matrix());
  }
  for (const auto& t : s.interactions) {
    const Vector prod = x.col(t.j).cwiseProduct(x.col(t.l));
    mu0 += t.beta * prod;
    mu1 += (s.setup == "A" ? t.beta : t.beta * (1.0 - t.omega)) * prod;
  }
  return {mu0, mu1};
}

namespace detail {

inline void fill_outcomes(Split& s, double noise_sd, Rng& rng) {
  std::normal_distribution<double> noise(0.0, noise_sd);
  s.tau = s.mu1 - s.mu0;
  s.y.resize(s.size());
  for (Index i = 0; i < s.size(); ++i) s.y(i) = (s.w(i) == 1.0 ? s.mu1(i) : s.mu0(i)) + noise(rng);
}

inline Split gather(const Matrix& pool, const std::vector<Index>& ids) {
  Split s;
  s.ids = ids;
  s.x.resize(static_cast<Index>(ids.size()), pool.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) s.x.row(static_cast<Index>(i)) = pool.row(ids[i]);
  return s;
}

}  // namespace detail

struct DGPConfigAB {
  char setup = 'A';
  double rho = 0.0;
  Index n0 = 500;
  Index n1 = 500;
  Index n_test = 500;
  double p_beta = 0.6;
  double p_inter = 0.3;
  double noise_sd = 1.0;
  double intercept = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (setup != 'A' && setup != 'B') throw InputError("DGPConfigAB: setup must be A or B");
    for (double p : {rho, p_beta, p_inter})
      if (!(p >= 0.0 && p <= 1.0)) throw InputError("DGPConfigAB: probabilities must lie in [0,1]");
    if (n0 < 1 || n1 < 1 || n_test < 1) throw InputError("DGPConfigAB: n0, n1 and n_test must be positive");
    if (!(noise_sd >= 0.0)) throw InputError("DGPConfigAB: noise_sd must be >= 0");
  }
};

/// Random coefficients for setup A or B over the given column types.
/// Interaction terms are the squares of all continuous columns plus one
/// pair per variable from a random perfect matching (an odd leftover pairs
/// with itself).
inline SurfaceRecord draw_polynomial_surface(const DGPConfigAB& cfg, const std::vector<ColumnType>& types, Rng& rng) {
  const Index d = static_cast<Index>(types.size());
  std::bernoulli_distribution b_beta(cfg.p_beta), b_inter(cfg.p_inter), b_rho(cfg.rho);
  SurfaceRecord s;
  s.setup = std::string(1, cfg.setup);
  s.intercept = cfg.intercept;
  s.beta = Vector::NullaryExpr(d, [&] { return b_beta(rng) ? 1.0 : 0.0; });
  for (Index j = 0; j < d; ++j)
    if (types[static_cast<std::size_t>(j)] == ColumnType::Continuous) s.interactions.push_back({j, j, 0.0, 0.0});
  std::vector<Index> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t k = 0; k < perm.size(); k += 2) {
    const Index a = perm[k], b = k + 1 < perm.size() ? perm[k + 1] : perm[k];
    s.interactions.push_back({std::min(a, b), std::max(a, b), 0.0, 0.0});
  }
  for (auto& t : s.interactions) t.beta = b_inter(rng) ? 1.0 : 0.0;
  if (cfg.setup == 'A') {
    s.gamma = Vector::NullaryExpr(d, [&] { return b_rho(rng) ? 1.0 : 0.0; });
    s.omega = Vector::Zero(d);
  } else {
    s.gamma = Vector::Zero(d);
    s.omega = Vector::NullaryExpr(d, [&] { return b_rho(rng) ? 1.0 : 0.0; });
    for (auto& t : s.interactions) t.omega = b_rho(rng) ? 1.0 : 0.0;
  }
  return s;
}

/// Setup A (cfg.setup = 'A': additive gamma terms) or B (cfg.setup = 'B':
/// prognostic terms cancelled in the treated surface). Test rows receive a
/// treatment draw with the training propensity so their residuals are
/// observable too.
inline SimulatedDataset simulate_setup_ab(const Covariates& pool, const DGPConfigAB& cfg) {
  cfg.validate();
  const Partition part = assign_treatment_random(pool.rows(), cfg.n0, cfg.n1, cfg.n_test, cfg.seed);
  Rng coef_rng(derive_seed(cfg.seed, 0x636f6566ULL));
  Rng noise_rng(derive_seed(cfg.seed, 0x6e6f6973ULL));
  SimulatedDataset ds;
  ds.setup = std::string(1, cfg.setup);
  ds.noise_sd = cfg.noise_sd;
  ds.propensity = part.propensity;
  ds.surface = draw_polynomial_surface(cfg, pool.types, coef_rng);

  std::vector<Index> train_ids = part.control;
  train_ids.insert(train_ids.end(), part.treated.begin(), part.treated.end());
  ds.train = detail::gather(pool.x, train_ids);
  ds.train.w = Vector::Zero(ds.train.size());
  ds.train.w.tail(cfg.n1).setOnes();
  ds.test = detail::gather(pool.x, part.test);
  std::bernoulli_distribution test_w(part.propensity);
  ds.test.w = Vector::NullaryExpr(ds.test.size(), [&] { return test_w(noise_rng) ? 1.0 : 0.0; });
  for (Split* s : {&ds.train, &ds.test}) {
    std::tie(s->mu0, s->mu1) = polynomial_surfaces(ds.surface, s->x);
    detail::fill_outcomes(*s, cfg.noise_sd, noise_rng);
  }
  return ds;
}

inline SimulatedDataset simulate_setup_a(const Covariates& pool, DGPConfigAB cfg) {
  cfg.setup = 'A';
  return simulate_setup_ab(pool, cfg);
}

inline SimulatedDataset simulate_setup_b(const Covariates& pool, DGPConfigAB cfg) {
  cfg.setup = 'B';
  return simulate_setup_ab(pool, cfg);
}

// ---------------------------------------------------------------------------
// IHDP-style surfaces

struct DGPConfigIHDP {
  char setup = 'D';
  double offset = 0.5;
  double target_att = 4.0;
  double noise_sd = 1.0;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (setup != 'C' && setup != 'D') throw InputError("DGPConfigIHDP: setup must be C or D");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InputError("DGPConfigIHDP: test_fraction must lie in [0,1)");
    if (!(noise_sd >= 0.0)) throw InputError("DGPConfigIHDP: noise_sd must be >= 0");
  }
};

/// beta_j in {0, .1, .2, .3, .4} with probabilities {.6, .1, .1, .1, .1}.
inline Vector draw_ihdp_beta(Index d, Rng& rng) {
  std::discrete_distribution<int> pick({0.6, 0.1, 0.1, 0.1, 0.1});
  return Vector::NullaryExpr(d, [&] { return 0.1 * pick(rng); });
}

/// mu0 = exp((x + offset) beta); setup C: mu1 = x beta - omega; setup D:
/// mu1 = mu0 + x beta - omega.
inline std::pair<Vector, Vector> ihdp_surfaces(const SurfaceRecord& s, const Matrix& x) {
  const Vector lin = x * s.beta;
  const Vector mu0 = ((x.array() + s.ihdp_offset).matrix() * s.beta).array().exp().matrix();
  Vector mu1 = (lin.array() - s.ihdp_omega).matrix();
  if (s.setup == "D") mu1 += mu0;
  return {mu0, mu1};
}

/// Treatment assignment is supplied, not simulated. omega is chosen so that
/// the mean effect over all treated rows equals cfg.target_att; rows are then
/// split into train and test by a seeded shuffle.
inline SimulatedDataset simulate_ihdp(const Matrix& x, const Vector& w, const DGPConfigIHDP& cfg) {
  cfg.validate();
  if (w.size() == 0) throw InputError("simulate_ihdp: treatment vector is missing");
  if (w.size() != x.rows())
    throw InputError("simulate_ihdp: treatment vector has " + std::to_string(w.size()) + " entries for " +
                     std::to_string(x.rows()) + " rows");
  Index n_treated = 0;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) != 0.0 && w(i) != 1.0) throw InputError("simulate_ihdp: treatment must be 0 or 1");
    n_treated += w(i) == 1.0;
  }
  if (n_treated == 0) throw InputError("simulate_ihdp: no treated rows to calibrate the effect offset");

  Rng coef_rng(derive_seed(cfg.seed, 0x636f6566ULL));
  Rng noise_rng(derive_seed(cfg.seed, 0x6e6f6973ULL));
  SimulatedDataset ds;
  ds.setup = std::string(1, cfg.setup);
  ds.noise_sd = cfg.noise_sd;
  SurfaceRecord& s = ds.surface;
  s.setup = ds.setup;
  s.ihdp_offset = cfg.offset;
  s.beta = draw_ihdp_beta(x.cols(), coef_rng);

  const auto [mu0, mu1_raw] = ihdp_surfaces(s, x);  // omega = 0
  double mean_effect = 0.0;
  for (Index i = 0; i < w.size(); ++i)
    if (w(i) == 1.0) mean_effect += mu1_raw(i) - mu0(i);
  mean_effect /= static_cast<double>(n_treated);
  s.ihdp_omega = mean_effect - cfg.target_att;

  std::vector<Index> ids(static_cast<std::size_t>(x.rows()));
  std::iota(ids.begin(), ids.end(), Index{0});
  Rng split_rng(derive_seed(cfg.seed, 0x73706c74ULL));
  std::shuffle(ids.begin(), ids.end(), split_rng);
  const auto n_test = static_cast<std::ptrdiff_t>(std::floor(cfg.test_fraction * static_cast<double>(x.rows())));
  std::vector<Index> test_ids(ids.end() - n_test, ids.end());
  std::vector<Index> train_ids(ids.begin(), ids.end() - n_test);
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  ds.train = detail::gather(x, train_ids);
  ds.test = detail::gather(x, test_ids);
  for (Split* sp : {&ds.train, &ds.test}) {
    sp->w.resize(sp->size());
    for (Index i = 0; i < sp->size(); ++i) sp->w(i) = w(sp->ids[static_cast<std::size_t>(i)]);
    std::tie(sp->mu0, sp->mu1) = ihdp_surfaces(s, sp->x);
    detail::fill_outcomes(*sp, cfg.noise_sd, noise_rng);
  }
  return ds;
}

inline SimulatedDataset simulate_ihdp_c(const Matrix& x, const Vector& w, DGPConfigIHDP cfg) {
  cfg.setup = 'C';
  return simulate_ihdp(x, w, cfg);
}

inline SimulatedDataset simulate_ihdp_d(const Matrix& x, const Vector& w, DGPConfigIHDP cfg) {
  cfg.setup = 'D';
  return simulate_ihdp(x, w, cfg);
}

/// Stand-in for the real IHDP design when it is not available: 747 rows,
/// 6 continuous and 19 binary covariates, 139 treated rows chosen at random.
inline std::pair<Covariates, Vector> synthetic_ihdp_design(std::uint64_t seed) {
  constexpr Index n = 747, n_treated = 139;
  Covariates cov = gen_covariates_synthetic(n, 6, 19, seed);
  std::vector<Index> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), Index{0});
  Rng rng(derive_seed(seed, 0x69686470ULL));
  std::shuffle(ids.begin(), ids.end(), rng);
  Vector w = Vector::Zero(n);
  for (Index k = 0; k < n_treated; ++k) w(ids[static_cast<std::size_t>(k)]) = 1.0;
  return {cov, w};
}

// ---------------------------------------------------------------------------
// Dataset CSV: id, x_1..x_d, w, y, mu0, mu1, tau, split

inline void write_dataset_csv(const SimulatedDataset& ds, std::ostream& out) {
  const Index d = ds.dim();
  out << "id";
  for (Index j = 0; j < d; ++j) out << ",x_" << (j + 1);
  out << ",w,y,mu0,mu1,tau,split\n";
  out << std::setprecision(17);
  for (int part = 0; part < 2; ++part) {
    const Split& s = part == 0 ? ds.train : ds.test;
    for (Index i = 0; i < s.size(); ++i) {
      out << s.ids[static_cast<std::size_t>(i)];
      for (Index j = 0; j < d; ++j) out << ',' << s.x(i, j);
      out << ',' << s.w(i) << ',' << s.y(i) << ',' << s.mu0(i) << ',' << s.mu1(i) << ',' << s.tau(i) << ','
          << part << '\n';
    }
  }
}

inline void write_dataset_csv(const SimulatedDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write dataset to " + path);
  write_dataset_csv(ds, out);
}

/// Reads a file written by write_dataset_csv. split is 0 for train, 1 for test.
/// Coefficients are not part of the file; propensity is left unset.
inline SimulatedDataset read_dataset_csv(const std::string& path) {
  const auto t = detail::read_numeric_csv(path);
  const std::vector<std::string> tail{"w", "y", "mu0", "mu1", "tau", "split"};
  const std::size_t ncol = t.header.size();
  if (ncol < tail.size() + 2 || t.header[0] != "id" ||
      !std::equal(tail.begin(), tail.end(), t.header.end() - static_cast<std::ptrdiff_t>(tail.size())))
    throw InputError(path + ": expected columns id, x_1..x_d, w, y, mu0, mu1, tau, split");
  const Index d = static_cast<Index>(ncol - tail.size() - 1);
  std::vector<std::size_t> rows[2];
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double sp = t.rows[r].back();
    if (sp != 0.0 && sp != 1.0) throw InputError(path + ": split must be 0 or 1");
    rows[static_cast<int>(sp)].push_back(r);
  }
  SimulatedDataset ds;
  ds.setup = "csv";
  for (int part = 0; part < 2; ++part) {
    Split& s = part == 0 ? ds.train : ds.test;
    const Index n = static_cast<Index>(rows[part].size());
    s.x.resize(n, d);
    s.w.resize(n), s.y.resize(n), s.mu0.resize(n), s.mu1.resize(n), s.tau.resize(n);
    for (Index i = 0; i < n; ++i) {
      const auto& row = t.rows[rows[part][static_cast<std::size_t>(i)]];
      s.ids.push_back(static_cast<Index>(row[0]));
      for (Index j = 0; j < d; ++j) s.x(i, j) = row[static_cast<std::size_t>(j + 1)];
      const auto k = static_cast<std::size_t>(d + 1);
      s.w(i) = row[k], s.y(i) = row[k + 1], s.mu0(i) = row[k + 2], s.mu1(i) = row[k + 3], s.tau(i) = row[k + 4];
    }
  }
  if (ds.train.size() == 0) throw InputError(path + ": no training rows (split = 0)");
  return ds;
}

}  // namespace catenets::sim
