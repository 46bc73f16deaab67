#include "fkb/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "fkb/csv.hpp"
#include "fkb/error.hpp"
#include "fkb/rng.hpp"

namespace fkb {

std::vector<Eigen::Index> LabeledSample::treated_indices() const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < Z.size(); ++i)
    if (Z[i] == 1) out.push_back(i);
  return out;
}

std::vector<Eigen::Index> LabeledSample::control_indices() const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < Z.size(); ++i)
    if (Z[i] == 0) out.push_back(i);
  return out;
}

LabeledSample LabeledSample::subset(std::span<const Eigen::Index> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  LabeledSample out;
  out.X.resize(m, X.cols());
  out.Z.resize(m);
  out.Y.resize(m);
  if (y0) out.y0 = Eigen::VectorXd(m);
  if (y1) out.y1 = Eigen::VectorXd(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = rows[static_cast<std::size_t>(k)];
    if (i < 0 || i >= size()) throw InvalidArgument("subset row index out of range");
    out.X.row(k) = X.row(i);
    out.Z[k] = Z[i];
    out.Y[k] = Y[i];
    if (y0) (*out.y0)[k] = (*y0)[i];
    if (y1) (*out.y1)[k] = (*y1)[i];
  }
  out.dgp_tag = dgp_tag;
  out.covariate_names = covariate_names;
  return out;
}

DgpSpec DgpSpec::tarr(Eigen::Index n, std::uint64_t seed) {
  return DgpSpec{DgpKind::Tarr, n, std::nullopt, seed};
}

DgpSpec DgpSpec::kim(Eigen::Index n, double sigma_eps_sq, std::uint64_t seed) {
  return DgpSpec{DgpKind::Kim, n, sigma_eps_sq, seed};
}

namespace {

double inv_logit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

void allocate(LabeledSample& s, Eigen::Index n, Eigen::Index p) {
  s.X.resize(n, p);
  s.Z.resize(n);
  s.Y.resize(n);
  s.y0 = Eigen::VectorXd(n);
  s.y1 = Eigen::VectorXd(n);
}

void validate(const DgpSpec& spec) {
  if (spec.n < 2) throw InvalidArgument("dgp spec: n must be at least 2");
  if (spec.kind == DgpKind::Kim) {
    if (!spec.sigma_eps_sq || !(*spec.sigma_eps_sq > 0.0))
      throw InvalidArgument("dgp spec: Kim design requires sigma_eps_sq > 0");
  } else if (spec.sigma_eps_sq) {
    throw InvalidArgument("dgp spec: sigma_eps_sq applies to the Kim design only");
  }
}

void set_tarr_row(LabeledSample& s, Eigen::Index i, const debug::TarrUnit& unit, bool treated) {
  for (int j = 0; j < 10; ++j) s.X(i, j) = unit.x[static_cast<std::size_t>(j)];
  s.Z[i] = treated ? 1 : 0;
  (*s.y0)[i] = unit.y0;
  (*s.y1)[i] = unit.y1;
  s.Y[i] = treated ? unit.y1 : unit.y0;
}

LabeledSample gen_tarr(const DgpSpec& spec) {
  Rng rng(spec.seed);
  LabeledSample s;
  allocate(s, spec.n, 10);
  std::array<double, 10> w{};
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (auto& v : w) v = rng.normal();
    const double u = rng.uniform();
    const double eps = rng.normal();
    const auto unit = debug::tarr_unit(w, eps);
    set_tarr_row(s, i, unit, u < unit.propensity);
  }
  s.dgp_tag = DgpTag::Tarr;
  return s;
}

LabeledSample gen_kim(const DgpSpec& spec) {
  Rng rng(spec.seed);
  LabeledSample s;
  allocate(s, spec.n, 6);
  const double r2 = std::sqrt(2.0);
  const double rh = std::sqrt(0.5);
  const double sd_eps = std::sqrt(*spec.sigma_eps_sq);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double e3 = rng.normal();
    const double x1 = r2 * e1;
    const double x2 = e1 / r2 + rh * e2;
    const double x3 = -e1 / r2 + rh * e3;
    const double x4 = -3.0 + 6.0 * rng.uniform();
    const double g = rng.normal();
    const double x5 = g * g;
    const double x6 = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const double eps = sd_eps * rng.normal();
    const double eta = rng.normal();

    const double score = x1 * x1 + 2.0 * x2 * x2 - 2.0 * x3 * x3 - std::pow(x4 + 1.0, 3) -
                         0.5 * std::log(x5 + 10.0) + x6 - 1.5 + eps;
    const double y = std::pow(x1 + x2 + x5, 2) + eta;

    s.X.row(i) << x1, x2, x3, x4, x5, x6;
    s.Z[i] = score > 0.0 ? 1 : 0;
    (*s.y0)[i] = y;
    (*s.y1)[i] = y;
    s.Y[i] = y;
  }
  s.dgp_tag = DgpTag::Kim;
  return s;
}

std::vector<std::string> default_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("X" + std::to_string(j + 1));
  return names;
}

}  // namespace

namespace debug {

TarrUnit tarr_unit(const std::array<double, 10>& w, double eps) {
  TarrUnit u{};
  u.x[0] = std::exp(w[0] / 2.0);
  u.x[1] = w[1] / (1.0 + std::exp(w[0]));
  u.x[2] = std::pow(w[0] * w[2] / 25.0 + 0.6, 3);
  u.x[3] = std::pow(w[1] + w[3] + 20.0, 2);
  for (std::size_t j = 4; j < 10; ++j) u.x[j] = w[j];
  u.propensity = inv_logit(-w[0] - 0.1 * w[3]);
  const double score = 27.4 * w[0] + 13.7 * w[1] + 13.7 * w[2] + 13.7 * w[3];
  u.y0 = 200.0 - 0.5 * score + eps;
  u.y1 = 200.0 + 10.0 + 1.0 * score + eps;
  return u;
}

LabeledSample tarr_from_latent(const Eigen::MatrixXd& W, const Eigen::VectorXd& treatment_uniform,
                               const Eigen::VectorXd& eps) {
  if (W.cols() != 10) throw DimensionMismatch("latent matrix must have 10 columns");
  if (treatment_uniform.size() != W.rows() || eps.size() != W.rows())
    throw DimensionMismatch("latent inputs disagree on n");
  LabeledSample s;
  allocate(s, W.rows(), 10);
  std::array<double, 10> w{};
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    for (int j = 0; j < 10; ++j) w[static_cast<std::size_t>(j)] = W(i, j);
    const auto unit = tarr_unit(w, eps[i]);
    set_tarr_row(s, i, unit, treatment_uniform[i] < unit.propensity);
  }
  s.dgp_tag = DgpTag::Tarr;
  s.covariate_names = default_names(10);
  return s;
}

}  // namespace debug

LabeledSample gen_dataset(const DgpSpec& spec) {
  validate(spec);
  LabeledSample s = spec.kind == DgpKind::Tarr ? gen_tarr(spec) : gen_kim(spec);
  s.covariate_names = default_names(s.X.cols());
  return s;
}

double true_att(const LabeledSample& sample) {
  if (!sample.has_potential_outcomes())
    throw UnavailableTruth("true ATT needs both potential outcomes; sample has none");
  double sum = 0.0;
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    if (sample.Z[i] != 1) continue;
    sum += (*sample.y1)[i] - (*sample.y0)[i];
    ++n1;
  }
  if (n1 == 0) throw UnavailableTruth("true ATT undefined: no treated units");
  return sum / static_cast<double>(n1);
}

namespace {

double parse_double(const std::string& field, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw DataError("row " + std::to_string(row) + ", column '" + col + "': not a finite number: '" +
                    field + "'");
  return v;
}

std::size_t column_index(const csv::Table& t, const std::string& name) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw DataError("column '" + name + "' not found in header");
  return static_cast<std::size_t>(it - t.header.begin());
}

}  // namespace

LabeledSample read_labeled_csv(const std::string& path, const std::string& treatment_col,
                               const std::string& outcome_col) {
  const auto table = csv::read_file(path);
  const auto zc = column_index(table, treatment_col);
  const auto yc = column_index(table, outcome_col);
  if (zc == yc) throw DataError("treatment and outcome must be different columns");

  std::vector<std::size_t> cov_cols;
  LabeledSample s;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == zc || c == yc) continue;
    cov_cols.push_back(c);
    s.covariate_names.push_back(table.header[c]);
  }
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  s.X.resize(n, static_cast<Eigen::Index>(cov_cols.size()));
  s.Z.resize(n);
  s.Y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    const auto row_no = static_cast<std::size_t>(i) + 1;
    const std::string& zf = row[zc];
    if (zf == "0") {
      s.Z[i] = 0;
    } else if (zf == "1") {
      s.Z[i] = 1;
    } else {
      throw DataError("row " + std::to_string(row_no) + ": treatment column '" + treatment_col +
                      "' must be 0 or 1, got '" + zf + "'");
    }
    s.Y[i] = parse_double(row[yc], row_no, outcome_col);
    for (std::size_t k = 0; k < cov_cols.size(); ++k)
      s.X(i, static_cast<Eigen::Index>(k)) = parse_double(row[cov_cols[k]], row_no, table.header[cov_cols[k]]);
  }
  s.dgp_tag = DgpTag::External;
  return s;
}

}  // namespace fkb
