#include "swd/evalbench.hpp"

#include <chrono>
#include <cmath>

#include <Eigen/Dense>

#include "swd/parallel.hpp"

namespace swd {

Tensor teacher_features(const DenoiserNet& teacher, const Tensor& samples, std::size_t batch) {
  const std::size_t n = samples.dim(0);
  if (n == 0) throw std::invalid_argument("teacher_features: no samples");
  std::vector<Tensor> parts((n + batch - 1) / batch);
  parallel_for(parts.size(), [&](std::size_t b) {
    NoGradGuard guard;
    const std::size_t start = b * batch, m = std::min(batch, n - start);
    const double zero = 0.0;
    const auto cls = repeat_class(kNullClass, m);
    const Tensor f = teacher.features(slice(samples, 0, start, start + m), std::span<const double>(&zero, 1), cls);
    parts[b] = mean(f, {1});
  });
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void moments(const Tensor& f, Vec& mu, Mat& cov) {
  const auto n = static_cast<Eigen::Index>(f.dim(0)), c = static_cast<Eigen::Index>(f.dim(1));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(f.data().data(), n, c);
  mu = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - mu.transpose();
  cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
}

bool near_singular(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  return es.eigenvalues().minCoeff() <= 1e-9 * top;
}

}  // namespace

FrechetResult frechet_distance(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("frechet_distance: expected N x C feature sets, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (a.dim(0) < 2 || b.dim(0) < 2) throw std::invalid_argument("frechet_distance: need at least 2 rows per side");
  Vec mu1, mu2;
  Mat s1, s2;
  moments(a, mu1, s1);
  moments(b, mu2, s2);
  FrechetResult out;
  if (near_singular(s1) || near_singular(s2)) {
    out.ridge = 1e-6;
    s1.diagonal().array() += out.ridge;
    s2.diagonal().array() += out.ridge;
  }
  // tr((S1 S2)^(1/2)) = tr((A S2 A)^(1/2)) with A = S1^(1/2); the inner product is symmetric.
  Eigen::SelfAdjointEigenSolver<Mat> e1(s1);
  const Vec root = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat half = e1.eigenvectors() * root.asDiagonal() * e1.eigenvectors().transpose();
  Mat inner = half * s2 * half;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> e2(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = e2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  out.distance = std::sqrt(std::max(d2, 0.0));
  return out;
}

double fd_teacher(const Tensor& samples, const Tensor& reference, const DenoiserNet& teacher, FrechetResult* detail) {
  const FrechetResult r = frechet_distance(teacher_features(teacher, samples), teacher_features(teacher, reference));
  if (detail) *detail = r;
  return r.distance;
}

double mmd_metric(const Tensor& samples, const Tensor& reference, const DenoiserNet& teacher,
                  const KernelSpec& kernel) {
  NoGradGuard guard;
  return mmd2(teacher_features(teacher, samples), teacher_features(teacher, reference), kernel, true).item();
}

LatencyResult latency_bench(const std::function<void(std::size_t)>& sampler, std::size_t runs, std::size_t batch,
                            std::size_t warmup) {
  if (runs == 0 || batch == 0) throw std::invalid_argument("latency_bench: runs and batch must be positive");
  for (std::size_t i = 0; i < warmup; ++i) sampler(batch);
  std::vector<double> t;
  for (std::size_t i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    sampler(batch);
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double>(b - a).count() / static_cast<double>(batch));
  }
  LatencyResult r;
  r.runs = runs;
  r.batch = batch;
  for (double x : t) r.mean += x;
  r.mean /= static_cast<double>(runs);
  for (double x : t) r.stddev += (x - r.mean) * (x - r.mean);
  r.stddev = runs > 1 ? std::sqrt(r.stddev / static_cast<double>(runs - 1)) : 0.0;
  return r;
}

double forward_flops(const NetConfig& config, std::size_t tokens) {
  const double l = static_cast<double>(tokens), c = static_cast<double>(config.width);
  const double pd = static_cast<double>(config.patch_dim());
  const double per_block = 4 * l * c * c + 2 * l * l * c + 8 * l * c * c + 6 * c * c;
  const double embed = l * pd * c + l * c * pd + 2 * c * c + 2 * c * c;
  return static_cast<double>(config.depth) * per_block + embed;
}

std::vector<double> step_flops(const NetConfig& config, const ScheduleSpec& schedule) {
  std::vector<double> out;
  const std::size_t tp = config.temporal_patch;
  for (const auto& s : schedule.scales) {
    const std::size_t frames = config.video() ? (s.t + tp - 1) / tp : 1;
    const std::size_t tokens = frames * (s.h / config.patch_size) * (s.w / config.patch_size);
    out.push_back(forward_flops(config, tokens));
  }
  return out;
}

double flop_estimate(const NetConfig& config, const ScheduleSpec& schedule) {
  double total = 0;
  for (double f : step_flops(config, schedule)) total += f;
  return total;
}

}  // namespace swd
