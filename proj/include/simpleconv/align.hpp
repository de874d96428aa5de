#pragma once

// Statistical alignment of trials within a scope (one subject or one
// session): Euclidean Alignment whitens by the inverse square root of the
// scope's mean trial covariance, and channel-wise z-scoring removes pooled
// mean/scale. Both are fit/apply pairs so statistics can come from a scope
// other than the one being transformed (calibration-only fitting online).

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace simpleconv {

struct EAReference {
  Eigen::MatrixXd mean_cov;  // (1/n) sum_i X_i X_i^T
  Eigen::MatrixXd whitener;  // mean_cov^{-1/2}, symmetric
  std::string scope_key;
  int n_trials = 0;
  double eig_floor = 0.0;
  bool rank_warning = false;  // flooring engaged (covariance rank-deficient)
};

inline EAReference fit_ea(const std::vector<Eigen::MatrixXd>& trials,
                          std::string scope_key = {}) {
  if (trials.empty()) throw std::invalid_argument("fit_ea: scope has no trials");
  const Eigen::Index C = trials.front().rows();
  EAReference ref;
  ref.scope_key = std::move(scope_key);
  ref.n_trials = static_cast<int>(trials.size());

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(C, C);
  for (const Eigen::MatrixXd& x : trials) {
    if (x.rows() != C)
      throw std::invalid_argument("fit_ea: inconsistent channel count within scope");
    r.noalias() += x * x.transpose();
  }
  r /= static_cast<double>(trials.size());
  ref.mean_cov = 0.5 * (r + r.transpose());  // enforce exact symmetry

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ref.mean_cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("fit_ea: eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double lmax = lambda.maxCoeff();
  if (lmax <= 0.0) {
    // Degenerate all-zero scope: identity whitener, flagged.
    ref.whitener = Eigen::MatrixXd::Identity(C, C);
    ref.rank_warning = true;
    return ref;
  }
  ref.eig_floor = 1e-10 * lmax;
  Eigen::VectorXd inv_sqrt(C);
  for (Eigen::Index i = 0; i < C; ++i) {
    const double l = lambda(i);
    if (l < ref.eig_floor) ref.rank_warning = true;
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(l, ref.eig_floor));
  }
  ref.whitener = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  return ref;
}

inline Eigen::MatrixXd apply_ea(const Eigen::MatrixXd& trial, const EAReference& ref) {
  if (trial.rows() != ref.whitener.rows())
    throw std::invalid_argument("apply_ea: trial has " + std::to_string(trial.rows()) +
                                " channels, reference expects " +
                                std::to_string(ref.whitener.rows()));
  return ref.whitener * trial;
}

struct ZScoreStats {
  Eigen::VectorXd mean, stddev;  // per channel, stddev floored at 1e-8
  std::string scope_key;
};

inline ZScoreStats fit_zscore(const std::vector<Eigen::MatrixXd>& trials,
                              std::string scope_key = {}) {
  if (trials.empty()) throw std::invalid_argument("fit_zscore: scope has no trials");
  const Eigen::Index C = trials.front().rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(C), sq = Eigen::VectorXd::Zero(C);
  double n = 0.0;
  for (const Eigen::MatrixXd& x : trials) {
    if (x.rows() != C)
      throw std::invalid_argument("fit_zscore: inconsistent channel count within scope");
    sum += x.rowwise().sum();
    sq += x.cwiseProduct(x).rowwise().sum();
    n += static_cast<double>(x.cols());
  }
  if (n <= 0.0) throw std::invalid_argument("fit_zscore: scope has no samples");
  ZScoreStats s;
  s.scope_key = std::move(scope_key);
  s.mean = sum / n;
  s.stddev.resize(C);
  for (Eigen::Index c = 0; c < C; ++c) {
    const double var = std::max(0.0, sq(c) / n - s.mean(c) * s.mean(c));
    s.stddev(c) = std::max(std::sqrt(var), 1e-8);
  }
  return s;
}

inline Eigen::MatrixXd apply_zscore(const Eigen::MatrixXd& trial, const ZScoreStats& stats) {
  if (trial.rows() != stats.mean.rows())
    throw std::invalid_argument("apply_zscore: channel count mismatch");
  return (trial.colwise() - stats.mean).array().colwise() / stats.stddev.array();
}

}  // namespace simpleconv
