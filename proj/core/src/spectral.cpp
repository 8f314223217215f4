#include "mgcd/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mgcd {

namespace {

std::vector<double> clamped_spectrum(const DenseMatrix& a) {
  std::vector<double> eig = sym_eig(a).eigenvalues;
  for (double& v : eig)
    if (v < 1e-12) v = 0.0;
  return eig;
}

}  // namespace

DenseMatrix autocorrelation(const DenseMatrix& z) {
  if (z.rows() == 0 || z.cols() == 0)
    throw std::invalid_argument("autocorrelation: empty embedding matrix");
  return scale(matmul(transpose(z), z), 1.0 / static_cast<double>(z.rows()));
}

double von_neumann_entropy(const std::vector<double>& eigenvalues) {
  if (eigenvalues.empty())
    throw std::invalid_argument("von_neumann_entropy: empty spectrum");
  double total = 0.0;
  for (double v : eigenvalues) {
    if (v < -1e-9) throw std::invalid_argument("von_neumann_entropy: negative eigenvalue");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-3)
    throw std::invalid_argument(
        "von_neumann_entropy: eigenvalue sum " + std::to_string(total) +
        " is not 1; is the input an autocorrelation spectrum of unit rows?");
  double h = 0.0;
  for (double v : eigenvalues)
    if (v > 0.0) h -= v * std::log(v);
  return h < 0.0 ? 0.0 : h;
}

std::size_t effective_rank_99(const std::vector<double>& eigenvalues) {
  if (eigenvalues.empty())
    throw std::invalid_argument("effective_rank_99: empty spectrum");
  double total = 0.0;
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues[i] < 0.0)
      throw std::invalid_argument("effective_rank_99: negative eigenvalue");
    if (i && eigenvalues[i] > eigenvalues[i - 1])
      throw std::invalid_argument("effective_rank_99: spectrum not descending");
    total += eigenvalues[i];
  }
  if (total <= 0.0)
    throw std::invalid_argument("effective_rank_99: all-zero spectrum");

  // relative slack so an exact 99% split lands on the smaller count
  const double threshold = 0.99 * total * (1.0 - 1e-9);
  double cum = 0.0;
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    cum += eigenvalues[i];
    if (cum >= threshold) return i + 1;
  }
  return eigenvalues.size();
}

double frobenius_to_identity(const DenseMatrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0)
    throw std::invalid_argument("frobenius_to_identity: square matrix required");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12)
        throw std::invalid_argument("frobenius_to_identity: matrix not symmetric");

  double c = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) c += a(i, i);
  c /= static_cast<double>(a.rows());

  double dist = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double gap = a(i, j) - (i == j ? c : 0.0);
      dist += gap * gap;
    }
  return dist;
}

ManifoldStats manifold_stats(const std::vector<double>& eigenvalues,
                             std::size_t point_count) {
  if (point_count == 0)
    throw std::invalid_argument("manifold_stats: point count must be positive");
  if (eigenvalues.empty())
    throw std::invalid_argument("manifold_stats: empty spectrum");

  // pad with zeros or truncate so exactly point_count slots contribute
  double sum = 0.0, sumsq = 0.0;
  const std::size_t used = std::min(point_count, eigenvalues.size());
  for (std::size_t i = 0; i < used; ++i) {
    if (eigenvalues[i] < 0.0)
      throw std::invalid_argument("manifold_stats: negative eigenvalue");
    sum += eigenvalues[i];
    sumsq += eigenvalues[i] * eigenvalues[i];
  }
  if (sumsq <= 0.0)
    throw std::invalid_argument("manifold_stats: all-zero spectrum");

  ManifoldStats out;
  out.radius = std::sqrt(sumsq / static_cast<double>(point_count));
  out.dim = sum * sum / sumsq;
  out.capacity_load = out.radius * std::sqrt(out.dim);
  out.capacity = 1.0 / (1.0 + out.capacity_load * out.capacity_load);
  return out;
}

SpectralReport spectral_report(const DenseMatrix& z) {
  SpectralReport rep;
  rep.eigenvalues = clamped_spectrum(autocorrelation(z));
  rep.entropy = von_neumann_entropy(rep.eigenvalues);
  rep.effective_rank_99 = effective_rank_99(rep.eigenvalues);
  rep.frobenius_to_identity = frobenius_to_identity(autocorrelation(z));
  rep.nuclear_norm = nuclear_norm(z);
  rep.manifold = manifold_stats(rep.eigenvalues, z.rows());
  return rep;
}

TheoryReport verify_theory(const DenseMatrix& z) {
  TheoryReport rep;

  TheoryCheck entropy_rank{"entropy_rank_bound", false, true, 0.0, 0.0, ""};
  TheoryCheck nuclear_bounds{"nuclear_norm_bounds", false, true, 0.0, 0.0, ""};
  TheoryCheck centroid{"centroid_unit_norm", false, true, 0.0, 1.0, ""};
  TheoryCheck band{"uniformity_band", false, false, 0.0, kUniformNuclearBandLo, ""};

  if (z.rows() == 0 || z.cols() == 0) {
    const char* why = "empty embedding matrix";
    for (TheoryCheck* c : {&entropy_rank, &nuclear_bounds, &centroid, &band})
      c->detail = why;
    rep.checks = {entropy_rank, nuclear_bounds, centroid, band};
    rep.all_required_pass = false;
    return rep;
  }

  const double n = static_cast<double>(z.rows());
  const double upper = std::sqrt(n * static_cast<double>(std::min(z.rows(), z.cols())));

  // (a) log of the rank surrogate dominates the entropy. spectrum normalized
  // by its trace so the check stays meaningful for non-unit rows.
  try {
    std::vector<double> eig = clamped_spectrum(autocorrelation(z));
    double trace = 0.0;
    for (double v : eig) trace += v;
    if (trace <= 0.0) throw std::runtime_error("zero spectrum");
    for (double& v : eig) v /= trace;
    const double h = von_neumann_entropy(eig);
    const std::size_t m = effective_rank_99(eig);
    entropy_rank.observed = h;
    entropy_rank.bound = std::log(static_cast<double>(m));
    entropy_rank.pass = entropy_rank.bound >= h - 1e-9;
  } catch (const std::exception& e) {
    entropy_rank.detail = e.what();
  }

  double nn = 0.0;
  try {
    nn = nuclear_norm(z);
    nuclear_bounds.observed = nn;
    nuclear_bounds.bound = upper;
    nuclear_bounds.pass = nn >= 0.0 && nn <= upper + 1e-9;
  } catch (const std::exception& e) {
    nuclear_bounds.detail = e.what();
  }

  // (c) centroid of K identical unit views keeps norm 1; the view is row 0
  // re-normalized so the claim is tested on an exactly unit vector
  try {
    std::vector<double> view(z.cols());
    double norm = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) norm += z(0, j) * z(0, j);
    norm = std::sqrt(norm);
    if (norm <= 0.0) throw std::runtime_error("zero leading row");
    for (std::size_t j = 0; j < z.cols(); ++j) view[j] = z(0, j) / norm;

    double worst = 0.0;
    for (std::size_t k : {1u, 2u, 8u, 64u}) {
      std::vector<double> mean_view(z.cols(), 0.0);
      for (std::size_t rep2 = 0; rep2 < k; ++rep2)
        for (std::size_t j = 0; j < z.cols(); ++j) mean_view[j] += view[j];
      double cn = 0.0;
      for (std::size_t j = 0; j < z.cols(); ++j) {
        mean_view[j] /= static_cast<double>(k);
        cn += mean_view[j] * mean_view[j];
      }
      worst = std::max(worst, std::abs(std::sqrt(cn) - 1.0));
    }
    centroid.observed = worst;
    centroid.bound = 1e-12;
    centroid.pass = worst <= 1e-12;
  } catch (const std::exception& e) {
    centroid.detail = e.what();
  }

  band.observed = upper > 0.0 ? nn / upper : 0.0;
  band.pass = band.observed >= kUniformNuclearBandLo &&
              band.observed <= kUniformNuclearBandHi;
  band.detail = "applies to uniform-on-sphere samples";

  rep.checks = {entropy_rank, nuclear_bounds, centroid, band};
  rep.all_required_pass = true;
  for (const TheoryCheck& c : rep.checks)
    if (c.required && !c.pass) rep.all_required_pass = false;
  return rep;
}

void write_spectrum(const SpectralReport& report, const std::string& csv_path,
                    const std::string& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("write_spectrum: cannot open " + csv_path);
  csv << "index,eigenvalue\n";
  char buf[64];
  for (std::size_t i = 0; i < report.eigenvalues.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", report.eigenvalues[i]);
    csv << i << ',' << buf << '\n';
  }
  if (!csv.good()) throw std::runtime_error("write_spectrum: write failed on " + csv_path);

  nlohmann::json j{
      {"entropy", report.entropy},
      {"effective_rank_99", report.effective_rank_99},
      {"frobenius_to_identity", report.frobenius_to_identity},
      {"nuclear_norm", report.nuclear_norm},
      {"manifold_radius", report.manifold.radius},
      {"manifold_dim", report.manifold.dim},
      {"capacity_load", report.manifold.capacity_load},
      {"capacity", report.manifold.capacity},
      {"dimension", report.eigenvalues.size()},
  };
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("write_spectrum: cannot open " + json_path);
  js << j.dump(2) << '\n';
  if (!js.good()) throw std::runtime_error("write_spectrum: write failed on " + json_path);
}

}  // namespace mgcd
