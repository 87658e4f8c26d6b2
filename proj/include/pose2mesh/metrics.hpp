#pragma once

// Evaluation metrics on Eigen matrices (N x 3, millimetres).

#include "pose2mesh/error.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace p2m {

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::MatrixXd apply(const Eigen::MatrixXd& P) const {
    return ((scale * rotation * P.transpose()).colwise() + translation).transpose();
  }
};

namespace detail {

inline void require_n3(const char* op, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != 3 || b.cols() != 3 || a.rows() != b.rows() || a.rows() == 0)
    throw ShapeError(std::string(op) + ": expected two matching non-empty N x 3 arrays");
}

/// Mean row-wise Euclidean distance, optionally restricted to a row mask.
inline double mean_row_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                const std::vector<bool>& mask = {}) {
  double s = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    s += (a.row(i) - b.row(i)).norm();
    ++n;
  }
  if (n == 0) throw ValueError("metric: joint mask selects no rows");
  return s / static_cast<double>(n);
}

inline void check_mask(const std::vector<bool>& mask, Eigen::Index rows) {
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != rows)
    throw ShapeError("metric: joint mask has " + std::to_string(mask.size()) + " entries for " +
                     std::to_string(rows) + " joints");
}

} // namespace detail

/// Mean per-joint position error after subtracting each pose's root joint.
inline double mpjpe(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P_gt, std::size_t root_index,
                    const std::vector<bool>& joint_mask = {}) {
  detail::require_n3("mpjpe", P, P_gt);
  if (root_index >= static_cast<std::size_t>(P.rows())) throw ValueError("mpjpe: root index out of range");
  detail::check_mask(joint_mask, P.rows());
  const auto r = static_cast<Eigen::Index>(root_index);
  const Eigen::MatrixXd a = P.rowwise() - P.row(r);
  const Eigen::MatrixXd b = P_gt.rowwise() - P_gt.row(r);
  return detail::mean_row_distance(a, b, joint_mask);
}

/// Least-squares similarity transform taking P onto P_gt (no reflections).
inline SimilarityTransform procrustes_align(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P_gt) {
  detail::require_n3("procrustes_align", P, P_gt);
  if (P.rows() < 3) throw ValueError("procrustes_align: need at least 3 points");
  const Eigen::RowVector3d mu_p = P.colwise().mean(), mu_g = P_gt.colwise().mean();
  const Eigen::MatrixXd X = P.rowwise() - mu_p, Y = P_gt.rowwise() - mu_g;
  const double var_p = X.squaredNorm();
  if (!(var_p > 1e-20)) throw ValueError("procrustes_align: degenerate prediction (zero variance)");
  const Eigen::Matrix3d cov = Y.transpose() * X; // sum_i y_i x_i^T
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  t.scale = svd.singularValues().dot(d) / var_p;
  t.translation = mu_g.transpose() - t.scale * t.rotation * mu_p.transpose();
  return t;
}

/// MPJPE after Procrustes-aligning P to P_gt. The alignment uses every joint.
inline double pa_mpjpe(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P_gt, std::size_t root_index,
                       const std::vector<bool>& joint_mask = {}) {
  detail::require_n3("pa_mpjpe", P, P_gt);
  if (root_index >= static_cast<std::size_t>(P.rows())) throw ValueError("pa_mpjpe: root index out of range");
  detail::check_mask(joint_mask, P.rows());
  return detail::mean_row_distance(procrustes_align(P, P_gt).apply(P), P_gt, joint_mask);
}

/// Mean per-vertex error after subtracting each mesh's regressed root joint.
inline double mpvpe(const Eigen::MatrixXd& M, const Eigen::MatrixXd& M_gt, const Eigen::RowVectorXd& root_regressor_row) {
  detail::require_n3("mpvpe", M, M_gt);
  if (root_regressor_row.size() != M.rows()) throw ShapeError("mpvpe: regressor row length != vertex count");
  const Eigen::RowVector3d r = root_regressor_row * M, r_gt = root_regressor_row * M_gt;
  const Eigen::MatrixXd a = M.rowwise() - r;
  const Eigen::MatrixXd b = M_gt.rowwise() - r_gt;
  return detail::mean_row_distance(a, b);
}

namespace detail {

inline Eigen::VectorXd nearest_distances(const Eigen::MatrixXd& from, const Eigen::MatrixXd& to) {
  Eigen::VectorXd d(from.rows());
  for (Eigen::Index i = 0; i < from.rows(); ++i)
    d(i) = std::sqrt((to.rowwise() - from.row(i)).rowwise().squaredNorm().minCoeff());
  return d;
}

} // namespace detail

/// Harmonic mean of precision and recall of vertices within tau (mm).
inline double f_score(const Eigen::MatrixXd& M, const Eigen::MatrixXd& M_gt, double tau, bool align = true) {
  if (M.rows() == 0 || M_gt.rows() == 0) throw ValueError("f_score: empty mesh");
  if (M.cols() != 3 || M_gt.cols() != 3) throw ShapeError("f_score: expected N x 3 meshes");
  if (!(tau > 0.0)) throw ValueError("f_score: tau must be > 0");
  const Eigen::MatrixXd pred = align ? procrustes_align(M, M_gt).apply(M) : M;
  const double precision = (detail::nearest_distances(pred, M_gt).array() <= tau).cast<double>().mean();
  const double recall = (detail::nearest_distances(M_gt, pred).array() <= tau).cast<double>().mean();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct MetricsReport {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double mpvpe_mm = std::numeric_limits<double>::quiet_NaN(); ///< NaN when meshes are unavailable
  std::map<double, double> f_at;                              ///< tau -> F-score
  std::size_t num_samples = 0;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "num_samples: " << num_samples << '\n';
    os << "mpjpe_mm: " << mpjpe_mm << '\n';
    os << "pa_mpjpe_mm: " << pa_mpjpe_mm << '\n';
    if (!std::isnan(mpvpe_mm)) os << "mpvpe_mm: " << mpvpe_mm << '\n';
    for (const auto& [tau, f] : f_at) os << "f_at_" << tau << "mm: " << f << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_samples"] = num_samples;
    j["mpjpe_mm"] = mpjpe_mm;
    j["pa_mpjpe_mm"] = pa_mpjpe_mm;
    j["mpvpe_mm"] = std::isnan(mpvpe_mm) ? nlohmann::json(nullptr) : nlohmann::json(mpvpe_mm);
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [tau, v] : f_at) {
      std::ostringstream key;
      key << tau;
      f[key.str()] = v;
    }
    j["f_at"] = f;
    return j;
  }
};

/// Accumulates per-sample metrics in insertion order.
class MetricsAccumulator {
public:
  MetricsAccumulator(std::size_t root_index, std::vector<double> taus, std::vector<bool> joint_mask = {},
                     bool align_fscore = true)
      : root_(root_index), taus_(std::move(taus)), mask_(std::move(joint_mask)), align_(align_fscore) {
    for (double t : taus_)
      if (!(t > 0.0)) throw ValueError("f_score: tau must be > 0");
    f_sum_.assign(taus_.size(), 0.0);
  }

  void add_pose(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P_gt) {
    mpjpe_sum_ += mpjpe(P, P_gt, root_, mask_);
    pa_sum_ += pa_mpjpe(P, P_gt, root_, mask_);
    ++n_pose_;
  }

  void add_mesh(const Eigen::MatrixXd& M, const Eigen::MatrixXd& M_gt, const Eigen::RowVectorXd& root_row) {
    mpvpe_sum_ += mpvpe(M, M_gt, root_row);
    for (std::size_t i = 0; i < taus_.size(); ++i) f_sum_[i] += f_score(M, M_gt, taus_[i], align_);
    ++n_mesh_;
  }

  MetricsReport report() const {
    MetricsReport r;
    r.num_samples = n_pose_;
    if (n_pose_ > 0) {
      r.mpjpe_mm = mpjpe_sum_ / static_cast<double>(n_pose_);
      r.pa_mpjpe_mm = pa_sum_ / static_cast<double>(n_pose_);
    }
    if (n_mesh_ > 0) {
      r.mpvpe_mm = mpvpe_sum_ / static_cast<double>(n_mesh_);
      for (std::size_t i = 0; i < taus_.size(); ++i) r.f_at[taus_[i]] = f_sum_[i] / static_cast<double>(n_mesh_);
    }
    return r;
  }

private:
  std::size_t root_;
  std::vector<double> taus_;
  std::vector<bool> mask_;
  bool align_;
  double mpjpe_sum_ = 0, pa_sum_ = 0, mpvpe_sum_ = 0;
  std::vector<double> f_sum_;
  std::size_t n_pose_ = 0, n_mesh_ = 0;
};

} // namespace p2m
