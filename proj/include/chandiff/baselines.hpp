#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

#include "chandiff/chansim.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::baselines {

using chansim::ChannelSequence;
using chansim::Snapshot;

/// Second-order model over vectorised real stacked snapshots (dimension 2HW).
struct CovarianceModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double loading = 0.0;
  std::string source;  // "training-set" or "genie-instantaneous"
  std::vector<int> snapshot_shape;
  std::size_t samples = 0;

  Eigen::Index dim() const { return mean.size(); }
};

inline Eigen::VectorXd to_vector(const Snapshot& s) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) v[static_cast<Eigen::Index>(i)] = s[i];
  return v;
}

inline Snapshot to_snapshot(const Eigen::VectorXd& v, const std::vector<int>& shape) {
  Snapshot s(shape);
  detail::require(s.size() == static_cast<std::size_t>(v.size()), "to_snapshot: size mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(v[static_cast<Eigen::Index>(i)]);
  return s;
}

/// Under y = x + n the least-squares estimate is y itself.
inline Snapshot ls_estimate(const Snapshot& y) { return y; }

/// Sample mean and covariance pooled over every slot of every sequence, plus
/// `loading` on the diagonal.
inline CovarianceModel fit_covariance(std::span<const Snapshot> snapshots, double loading = 1e-6) {
  detail::require(snapshots.size() >= 2, "fit_covariance: need at least 2 snapshots");
  detail::require(loading >= 0.0, "fit_covariance: loading must be non-negative");
  const auto n = static_cast<Eigen::Index>(snapshots.front().size());
  Eigen::MatrixXd data(n, static_cast<Eigen::Index>(snapshots.size()));
  for (std::size_t j = 0; j < snapshots.size(); ++j) {
    detail::require(snapshots[j].shape() == snapshots.front().shape(), "fit_covariance: inconsistent shapes");
    data.col(static_cast<Eigen::Index>(j)) = to_vector(snapshots[j]);
  }
  CovarianceModel m;
  m.mean = data.rowwise().mean();
  data.colwise() -= m.mean;
  m.cov = (data * data.transpose()) / static_cast<double>(snapshots.size() - 1);
  m.cov.diagonal().array() += loading;
  m.loading = loading;
  m.source = "training-set";
  m.snapshot_shape = snapshots.front().shape();
  m.samples = snapshots.size();
  if (loading == 0.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(m.cov);
    if (llt.info() != Eigen::Success) throw NumericError("fit_covariance: covariance is rank-deficient and unloaded");
  }
  return m;
}

inline CovarianceModel fit_covariance(std::span<const ChannelSequence> seqs, double loading = 1e-6) {
  std::vector<Snapshot> all;
  for (const auto& s : seqs) all.insert(all.end(), s.snapshots.begin(), s.snapshots.end());
  return fit_covariance(std::span<const Snapshot>(all), loading);
}

/// Wiener filter x_hat = m + R (R + v I)^-1 (y - m), with v the noise
/// variance per real element (half the complex noise power). The gain is
/// factored once and reused.
class LmmseFilter {
 public:
  LmmseFilter(const CovarianceModel& model, double noise_var) : mean_(model.mean), shape_(model.snapshot_shape) {
    detail::require(noise_var > 0.0, "lmmse: noise variance must be positive");
    Eigen::MatrixXd a = model.cov;
    a.diagonal().array() += noise_var;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericError("lmmse: R + vI is not positive definite");
    // R (R + vI)^-1 = ((R + vI)^-1 R)^T since both factors are symmetric.
    gain_ = llt.solve(model.cov).transpose();
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& y) const { return mean_ + gain_ * (y - mean_); }

  Snapshot apply(const Snapshot& y) const {
    detail::require(static_cast<Eigen::Index>(y.size()) == mean_.size(), "lmmse: observation size mismatch");
    return to_snapshot(apply(to_vector(y)), y.shape());
  }

  /// Columns are observations.
  Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& y) const {
    Eigen::MatrixXd c = y.colwise() - mean_;
    Eigen::MatrixXd out = gain_ * c;
    out.colwise() += mean_;
    return out;
  }

  const Eigen::MatrixXd& gain() const noexcept { return gain_; }

 private:
  Eigen::VectorXd mean_;
  std::vector<int> shape_;
  Eigen::MatrixXd gain_;
};

inline Snapshot lmmse_estimate(const Snapshot& y, double noise_var, const CovarianceModel& model) {
  return LmmseFilter(model, noise_var).apply(y);
}

/// True covariance of slot k under the simulator. Both generators keep the
/// marginal of every slot at the stationary spatial covariance (the mobility
/// profile changes only the temporal correlation), so k does not enter.
inline CovarianceModel genie_covariance(const chansim::ShapeConfig& shape, int k = 0) {
  detail::require(k >= 0, "genie_covariance: slot index must be non-negative");
  const chansim::SpatialCorrelation corr(shape);
  CovarianceModel m;
  m.cov = corr.stacked_covariance();
  m.mean = Eigen::VectorXd::Zero(m.cov.rows());
  m.source = "genie-instantaneous";
  m.snapshot_shape = shape.snapshot_shape();
  return m;
}

inline Snapshot oracle_estimate(const Snapshot& y, double noise_var, int k, const chansim::ShapeConfig& shape) {
  return LmmseFilter(genie_covariance(shape, k), noise_var).apply(y);
}

/// Analytic NMSE of a Wiener filter whose model matches the data exactly:
/// tr(R - R (R + vI)^-1 R) / tr(R).
inline double lmmse_analytic_nmse(const Eigen::MatrixXd& r, double noise_var) {
  Eigen::MatrixXd a = r;
  a.diagonal().array() += noise_var;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("lmmse_analytic_nmse: not positive definite");
  const Eigen::MatrixXd post = r - r * llt.solve(r);
  return post.trace() / r.trace();
}

}  // namespace chandiff::baselines
