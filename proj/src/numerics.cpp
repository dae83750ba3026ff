#include "priorstack/numerics.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>

#include "priorstack/errors.hpp"

namespace priorstack {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::atomic<unsigned> g_max_threads{0};
thread_local bool t_in_parallel = false;

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string label)
    : seed_(seed),
      label_(std::move(label)),
      engine_(splitmix64(splitmix64(seed) ^ fnv1a(label_))) {}

RngStream RngStream::child(std::string_view sublabel) const {
  std::string label = label_;
  label += '/';
  label += sublabel;
  return {seed_, std::move(label)};
}

double RngStream::uniform() {
  // 53 random bits, shifted off zero
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw InvalidParameter("RngStream::below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return draw % n;
}

Matrix cholesky_upper(const CorrelationSpec& spec) {
  if (!std::isfinite(spec.rho) || spec.rho < 0.0 || spec.rho >= 1.0) {
    throw InvalidParameter("cholesky_upper: rho must be finite and in [0, 1)");
  }
  if (spec.p == 0) throw InvalidParameter("cholesky_upper: p must be at least 1");
  const auto p = static_cast<Eigen::Index>(spec.p);
  const double tail = std::sqrt(1.0 - spec.rho * spec.rho);
  Matrix r = Matrix::Zero(p, p);
  // Row 0 holds rho^j; row k >= 1 holds sqrt(1 - rho^2) rho^(j-k) for j >= k.
  double power = 1.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    r(0, j) = power;
    power *= spec.rho;
  }
  for (Eigen::Index k = 1; k < p; ++k) {
    double pw = tail;
    for (Eigen::Index j = k; j < p; ++j) {
      r(k, j) = pw;
      pw *= spec.rho;
    }
  }
  return r;
}

Matrix cholesky_upper(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw InvalidParameter("cholesky_upper: matrix must be square and non-empty");
  }
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw InvalidParameter("cholesky_upper: matrix is not positive definite");
  }
  return llt.matrixU();
}

namespace {

Matrix gaussian_noise(RngStream& rng, Eigen::Index n, Eigen::Index p) {
  Matrix e(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) e(i, j) = rng.normal();
  }
  return e;
}

}  // namespace

Matrix mvnormal_sample(RngStream& rng, std::size_t n, const Matrix& upper) {
  const auto p = upper.cols();
  if (upper.rows() != p) throw InvalidParameter("mvnormal_sample: factor must be square");
  if (n == 0) return Matrix(0, p);
  const Matrix e = gaussian_noise(rng, static_cast<Eigen::Index>(n), p);
  return e * upper.triangularView<Eigen::Upper>();
}

Matrix ar1_sample(RngStream& rng, std::size_t n, const CorrelationSpec& spec) {
  if (!std::isfinite(spec.rho) || spec.rho < 0.0 || spec.rho >= 1.0) {
    throw InvalidParameter("ar1_sample: rho must be finite and in [0, 1)");
  }
  const auto p = static_cast<Eigen::Index>(spec.p);
  if (n == 0) return Matrix(0, p);
  Matrix x = gaussian_noise(rng, static_cast<Eigen::Index>(n), p);
  const double tail = std::sqrt(1.0 - spec.rho * spec.rho);
  for (Eigen::Index j = 1; j < p; ++j) {
    x.col(j) = spec.rho * x.col(j - 1) + tail * x.col(j);
  }
  return x;
}

Standardized standardize_columns(const Matrix& x) {
  if (x.rows() < 2) throw InvalidParameter("standardize_columns: need at least 2 rows");
  const auto n = static_cast<double>(x.rows());
  Standardized out;
  out.x = x;
  out.means.resize(x.cols());
  out.sds.resize(x.cols());
  out.constant.assign(static_cast<std::size_t>(x.cols()), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto col = out.x.col(j);
    const double mean = col.sum() / n;
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / n);
    out.means[j] = mean;
    // Relative threshold catches columns that are constant up to rounding.
    if (sd <= 1e-13 * std::max(1.0, std::abs(mean))) {
      out.sds[j] = 0.0;
      out.constant[static_cast<std::size_t>(j)] = true;
      col.setZero();
    } else {
      out.sds[j] = sd;
      col /= sd;
    }
  }
  return out;
}

void set_max_threads(unsigned threads) { g_max_threads.store(threads); }

unsigned max_threads() {
  const unsigned cap = g_max_threads.load();
  if (cap != 0) return cap;
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(max_threads(), count));
  if (count == 0) return;
  if (workers <= 1 || t_in_parallel) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = count;
  auto run = [&] {
    t_in_parallel = true;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
    t_in_parallel = false;
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace priorstack
