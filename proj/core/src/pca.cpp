#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "adua/analysis.hpp"

namespace adua {

namespace {

constexpr double kPowerIterTol = 1e-9;
constexpr int kPowerIterMax = 10000;

// Dominant eigenpair of a symmetric matrix by power iteration. The start
// vector comes from a fixed-seed RNG, so results are reproducible and do not
// depend on any caller state. Axes in `exclude` are projected out every step;
// deflation alone leaves rounding residue along earlier axes that would
// otherwise dominate once the remaining spectrum is near zero.
std::pair<double, std::vector<double>> dominant_eigenpair(
    const Matrix& c, const std::vector<std::vector<double>>& exclude) {
  const std::size_t n = c.cols;
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  auto orthogonalize = [&exclude](std::vector<double>& x) {
    for (const auto& u : exclude) {
      double dot = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * u[i];
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dot * u[i];
    }
  };
  auto normalize = [](std::vector<double>& x) {
    double norm = 0.0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& e : x) e /= norm;
    }
    return norm;
  };
  orthogonalize(v);
  normalize(v);

  std::vector<double> next(n);
  for (int iter = 0; iter < kPowerIterMax; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += c.at(i, j) * v[j];
      next[i] = s;
    }
    orthogonalize(next);
    if (normalize(next) == 0.0) {
      // The vector fell into the null space; the remaining spectrum is zero.
      return {0.0, v};
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::fabs(next[i] - v[i]));
    // A sign flip each step means a dominant negative eigenvalue; compare
    // against the flipped vector too so the loop can still converge.
    double delta_flipped = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      delta_flipped = std::max(delta_flipped, std::fabs(next[i] + v[i]));
    }
    v = next;
    if (std::min(delta, delta_flipped) < kPowerIterTol) break;
  }
  double lambda = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += c.at(i, j) * v[j];
    lambda += v[i] * s;
  }
  return {lambda, v};
}

// Deterministic sign: the largest-magnitude coordinate is made positive.
void canonicalize_sign(std::vector<double>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::fabs(v[i]) > std::fabs(v[arg])) arg = i;
  }
  if (v[arg] < 0.0) {
    for (double& e : v) e = -e;
  }
}

}  // namespace

Pca2d pca_project_2d(const Matrix& x) {
  if (x.rows < 2) {
    throw ContractError("pca_project_2d: need at least 2 points, got " +
                        std::to_string(x.rows));
  }
  if (x.cols < 2) {
    throw ContractError("pca_project_2d: need at least 2 dimensions, got " +
                        std::to_string(x.cols));
  }

  Matrix centered(x.rows, x.cols);
  std::vector<double> mean(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) mean[j] += x.at(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(x.rows);
  double spread = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x.at(i, j) - mean[j];
      centered.at(i, j) = d;
      spread = std::max(spread, std::fabs(d));
    }
  }
  if (spread == 0.0) {
    throw DegenerateGeometry("pca_project_2d: all points are identical, no principal directions exist");
  }

  // Sample covariance (n-1 normalization).
  Matrix cov(x.cols, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = centered.data.data() + i * x.cols;
    for (std::size_t a = 0; a < x.cols; ++a) {
      const double ra = row[a];
      if (ra == 0.0) continue;
      for (std::size_t b = a; b < x.cols; ++b) {
        cov.at(a, b) += ra * row[b];
      }
    }
  }
  const double denom = static_cast<double>(x.rows - 1);
  for (std::size_t a = 0; a < x.cols; ++a) {
    for (std::size_t b = a; b < x.cols; ++b) {
      cov.at(a, b) /= denom;
      cov.at(b, a) = cov.at(a, b);
    }
  }

  Pca2d out;
  std::array<std::vector<double>, 2> axes;
  std::vector<std::vector<double>> found;
  for (int comp = 0; comp < 2; ++comp) {
    auto [lambda, v] = dominant_eigenpair(cov, found);
    lambda = std::max(lambda, 0.0);  // covariance spectra are nonnegative
    canonicalize_sign(v);
    out.eigenvalues[static_cast<std::size_t>(comp)] = lambda;
    axes[static_cast<std::size_t>(comp)] = v;
    found.push_back(v);
    // Deflate before extracting the next component.
    for (std::size_t a = 0; a < x.cols; ++a) {
      for (std::size_t b = 0; b < x.cols; ++b) {
        cov.at(a, b) -= lambda * v[a] * v[b];
      }
    }
  }

  out.points = Matrix(x.rows, 2);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = centered.data.data() + i * x.cols;
    for (int comp = 0; comp < 2; ++comp) {
      const auto& axis = axes[static_cast<std::size_t>(comp)];
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) s += row[j] * axis[j];
      out.points.at(i, static_cast<std::size_t>(comp)) = s;
    }
  }
  return out;
}

void write_hidden_matrix(const Matrix& m, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  auto put_u64 = [&out](std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
  };
  put_u64(m.rows);
  put_u64(m.cols);
  for (double v : m.data) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(bits));
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 4);
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

Matrix read_hidden_matrix(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open \"" + file.string() + "\"");
  auto get_u64 = [&in, &file]() {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw SchemaError("truncated hidden matrix \"" + file.string() + "\"");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  };
  const std::uint64_t rows = get_u64();
  const std::uint64_t cols = get_u64();
  Matrix m(rows, cols);
  for (double& v : m.data) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw SchemaError("truncated hidden matrix \"" + file.string() + "\"");
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    v = static_cast<double>(f);
  }
  return m;
}

void write_projection_csv(const std::vector<std::string>& row_domains, const Pca2d& pca,
                          const std::filesystem::path& file) {
  if (row_domains.size() != pca.points.rows) {
    throw ContractError("write_projection_csv: " + std::to_string(row_domains.size()) +
                        " domain labels for " + std::to_string(pca.points.rows) + " points");
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  out << "domain,pc1,pc2\n";
  for (std::size_t i = 0; i < pca.points.rows; ++i) {
    out << row_domains[i] << ',' << format_double(pca.points.at(i, 0)) << ','
        << format_double(pca.points.at(i, 1)) << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

}  // namespace adua
