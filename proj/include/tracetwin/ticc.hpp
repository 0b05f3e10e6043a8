#pragma once

// Toeplitz inverse covariance-based clustering of multivariate 1 s series.
//
// Observations are w consecutive samples stacked into one (n*w)-vector. Each
// cluster is a Gaussian whose precision matrix is block-Toeplitz (blocks depend
// only on the time lag) and L1-regularized. Fitting alternates
//   E: globally optimal labels under per-observation cost + beta per switch
//      (dynamic program over the label chain), and
//   M: per-cluster Toeplitz-constrained graphical lasso solved with ADMM.

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tracetwin/ingest.hpp"

namespace tracetwin::ticc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TiccConfig {
    int num_clusters = 3;
    int window = 5;
    double lambda = 0.11;
    double beta = 200.0;
    int max_iters = 50;
    /// Relative objective change that ends the outer loop.
    double tol = 1e-4;
    std::uint64_t seed = 0;
    int admm_max_iters = 1000;
    double admm_tol = 1e-5;
    double admm_rho = 1.0;

    /// Throws Error on out-of-range values.
    void validate() const;
};

struct ClusterModel {
    Matrix theta;  // (n*w) x (n*w) precision, block-Toeplitz, SPD
    Vector mu;     // (n*w) mean of stacked standardized observations
    double log_det = 0.0;
    double l1 = 0.0;  // sum of |theta_ij|
    std::size_t size = 0;  // observations assigned at the last M-step
};

struct TiccModel {
    std::size_t input_variates = 0;
    std::vector<std::size_t> variates;  // input columns kept after dropping constants
    int window = 1;
    double lambda = 0.0;
    Vector center;  // per kept variate
    Vector scale;
    std::vector<ClusterModel> clusters;

    int num_variates() const noexcept { return static_cast<int>(variates.size()); }
    int num_clusters() const noexcept { return static_cast<int>(clusters.size()); }
    int dimension() const noexcept { return num_variates() * window; }
};

struct SegmentLabels {
    /// One label per stacked observation (T - w + 1).
    std::vector<int> window_labels;
    /// One label per input sample; the first w-1 samples take the label of
    /// the first full window.
    std::vector<int> labels;
};

struct FitResult {
    TiccModel model;
    SegmentLabels labels;
    /// Objective after every outer iteration; non-increasing.
    std::vector<double> objective;
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

/// T x n samples -> (T-w+1) x (n*w) rows, row t = [x_t, x_{t+1}, ..., x_{t+w-1}].
Matrix stack_windows(const Matrix& samples, int w);

/// Columns of a cell series by variate name (load_mbps, prb_util, active_ues).
Matrix series_matrix(const ingest::CellSeries& series, std::span<const std::string> variates);
const std::vector<std::string>& default_variates();

FitResult fit(const Matrix& samples, const TiccConfig& cfg);
FitResult fit(const ingest::CellSeries& series, const TiccConfig& cfg,
              std::span<const std::string> variates = default_variates());

/// Per-observation, per-cluster negative log-likelihood (plus the cluster's
/// share of the sparsity penalty) for standardized stacked observations.
Matrix cluster_costs(const TiccModel& model, const Matrix& stacked);

/// Label sequence minimizing sum of costs + beta * (number of label changes).
std::vector<int> assign_costs(const Matrix& costs, double beta);
double labeling_cost(const Matrix& costs, std::span<const int> labels, double beta);

/// Labels new samples with a trained model. Throws Error on dimension mismatch.
SegmentLabels assign(const Matrix& samples, const TiccModel& model, double beta);
SegmentLabels assign(const ingest::CellSeries& series, const TiccModel& model, double beta,
                     std::span<const std::string> variates = default_variates());

/// Averages the entries that a block-Toeplitz symmetric matrix must share.
Matrix project_block_toeplitz(const Matrix& m, int n, int w);
/// Largest absolute deviation between entries that should be equal.
double block_toeplitz_deviation(const Matrix& m, int n, int w);

struct AdmmOptions {
    double rho = 1.0;
    int max_iters = 1000;
    double tol = 1e-5;
};

struct GlassoResult {
    Matrix theta;
    int iterations = 0;
    bool converged = false;
};

/// argmin over block-Toeplitz theta of  -logdet(theta) + tr(S theta) + lambda * sum|theta_ij|.
GlassoResult toeplitz_graphical_lasso(const Matrix& cov, int n, int w, double lambda, const AdmmOptions& opts,
                                      const Matrix* warm_start = nullptr);

void save_model(std::ostream& out, const TiccModel& model);
TiccModel load_model(std::string_view content);

void write_labels(std::ostream& out, std::int64_t t0, const SegmentLabels& labels);
/// Reads `t,label` text; returns per-sample labels and the first timestamp.
std::vector<int> read_labels(std::string_view content, std::int64_t* t0 = nullptr);

}  // namespace tracetwin::ticc
