#include "tracetwin/ticc.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "tracetwin/common.hpp"

namespace tracetwin::ticc {

void TiccConfig::validate() const {
    if (num_clusters < 1) throw Error("ticc: num_clusters must be >= 1");
    if (window < 1) throw Error("ticc: window must be >= 1");
    if (!(lambda >= 0)) throw Error("ticc: lambda must be >= 0");
    if (!(beta >= 0)) throw Error("ticc: beta must be >= 0");
    if (max_iters < 1) throw Error("ticc: max_iters must be >= 1");
    if (!(tol > 0)) throw Error("ticc: tol must be > 0");
    if (admm_max_iters < 1 || !(admm_tol > 0) || !(admm_rho > 0)) throw Error("ticc: invalid ADMM options");
}

Matrix stack_windows(const Matrix& samples, int w) {
    if (w < 1) throw Error("stack_windows: window must be >= 1");
    const auto T = samples.rows();
    const auto n = samples.cols();
    if (T < w) throw Error("stack_windows: series length " + std::to_string(T) + " is shorter than window " +
                           std::to_string(w));
    Matrix out(T - w + 1, n * w);
    for (Eigen::Index t = 0; t + w <= T; ++t) {
        for (int k = 0; k < w; ++k) out.block(t, k * n, 1, n) = samples.row(t + k);
    }
    return out;
}

const std::vector<std::string>& default_variates() {
    static const std::vector<std::string> v{"load_mbps", "prb_util", "active_ues"};
    return v;
}

Matrix series_matrix(const ingest::CellSeries& series, std::span<const std::string> variates) {
    Matrix m(static_cast<Eigen::Index>(series.size()), static_cast<Eigen::Index>(variates.size()));
    for (std::size_t j = 0; j < variates.size(); ++j) {
        const std::vector<double>* col = nullptr;
        if (variates[j] == "load_mbps") col = &series.load_mbps;
        else if (variates[j] == "prb_util") col = &series.prb_util;
        else if (variates[j] == "active_ues") col = &series.active_ues;
        else throw Error("unknown variate '" + variates[j] + "'");
        for (std::size_t i = 0; i < col->size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*col)[i];
    }
    return m;
}

namespace {

// Entries of a block-Toeplitz symmetric matrix that must be equal share a
// group keyed by (lag, p, q). Group members are listed as (row, col) pairs
// covering both triangles.
template <typename Fn>
void for_each_toeplitz_group(int n, int w, Fn&& fn) {
    std::vector<std::pair<int, int>> members;
    for (int k = 0; k < w; ++k) {
        for (int p = 0; p < n; ++p) {
            for (int q = 0; q < n; ++q) {
                if (k == 0 && q < p) continue;
                members.clear();
                for (int i = 0; i + k < w; ++i) {
                    const int r = i * n + p;
                    const int c = (i + k) * n + q;
                    members.emplace_back(r, c);
                    if (r != c) members.emplace_back(c, r);
                }
                fn(members, k == 0 && p == q);
            }
        }
    }
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

bool cholesky_log_det(const Matrix& m, double* log_det) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return false;
    const auto& l = llt.matrixL();
    double s = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double d = l(i, i);
        if (!(d > 0)) return false;
        s += std::log(d);
    }
    *log_det = 2.0 * s;
    return true;
}

void refresh_cluster_stats(ClusterModel& c) {
    double ld = 0;
    if (!cholesky_log_det(c.theta, &ld)) throw Error("ticc: precision matrix is not positive definite");
    c.log_det = ld;
    c.l1 = c.theta.cwiseAbs().sum();
}

struct Standardized {
    Matrix data;
    std::vector<std::size_t> kept;
    Vector center;
    Vector scale;
    std::vector<std::string> warnings;
};

Standardized standardize(const Matrix& samples) {
    Standardized out;
    const auto T = samples.rows();
    std::vector<double> centers, scales;
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
        const double mean = samples.col(j).mean();
        const double var = (samples.col(j).array() - mean).square().sum() / static_cast<double>(T);
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::fabs(mean)))) {
            out.warnings.push_back("variate " + std::to_string(j) + " has zero variance and was dropped");
            continue;
        }
        out.kept.push_back(static_cast<std::size_t>(j));
        centers.push_back(mean);
        scales.push_back(sd);
    }
    out.center = Eigen::Map<Vector>(centers.data(), static_cast<Eigen::Index>(centers.size()));
    out.scale = Eigen::Map<Vector>(scales.data(), static_cast<Eigen::Index>(scales.size()));
    out.data.resize(T, static_cast<Eigen::Index>(out.kept.size()));
    for (std::size_t k = 0; k < out.kept.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(out.kept[k]);
        out.data.col(static_cast<Eigen::Index>(k)) =
            (samples.col(j).array() - out.center(static_cast<Eigen::Index>(k))) / out.scale(static_cast<Eigen::Index>(k));
    }
    return out;
}

Matrix apply_standardization(const Matrix& samples, const TiccModel& model) {
    if (static_cast<std::size_t>(samples.cols()) != model.input_variates)
        throw Error("ticc: samples have " + std::to_string(samples.cols()) + " variates, model expects " +
                    std::to_string(model.input_variates));
    Matrix out(samples.rows(), model.num_variates());
    for (int k = 0; k < model.num_variates(); ++k) {
        const auto j = static_cast<Eigen::Index>(model.variates[static_cast<std::size_t>(k)]);
        out.col(k) = (samples.col(j).array() - model.center(k)) / model.scale(k);
    }
    return out;
}

std::size_t count_distinct_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto& r = rows[static_cast<std::size_t>(i)];
        r.resize(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    }
    std::sort(rows.begin(), rows.end());
    return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

std::vector<int> expand_labels(const std::vector<int>& window_labels, int w) {
    std::vector<int> labels;
    if (window_labels.empty()) return labels;
    labels.reserve(window_labels.size() + static_cast<std::size_t>(w - 1));
    for (int i = 0; i < w - 1; ++i) labels.push_back(window_labels.front());
    labels.insert(labels.end(), window_labels.begin(), window_labels.end());
    return labels;
}

// k-means++ seeding followed by Lloyd iterations.
std::vector<int> kmeans_init(const Matrix& x, int k, std::mt19937_64& rng) {
    const auto N = x.rows();
    std::vector<Eigen::Index> centers_idx;
    std::uniform_int_distribution<Eigen::Index> pick(0, N - 1);
    centers_idx.push_back(pick(rng));
    Vector d2 = (x.rowwise() - x.row(centers_idx[0])).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    while (static_cast<int>(centers_idx.size()) < k) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total <= 0) {
            chosen = pick(rng);
        } else {
            double u = unif(rng) * total;
            for (chosen = 0; chosen < N - 1; ++chosen) {
                u -= d2(chosen);
                if (u <= 0) break;
            }
        }
        centers_idx.push_back(chosen);
        d2 = d2.cwiseMin((x.rowwise() - x.row(chosen)).rowwise().squaredNorm());
    }
    Matrix centers(k, x.cols());
    for (int c = 0; c < k; ++c) centers.row(c) = x.row(centers_idx[static_cast<std::size_t>(c)]);

    std::vector<int> labels(static_cast<std::size_t>(N), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < N; ++i) {
            Eigen::Index best = 0;
            (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < N; ++i) {
            sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        if (!changed && iter > 0) break;
    }
    return labels;
}

double observation_cost(const ClusterModel& c, const Eigen::Ref<const Vector>& x, double lambda) {
    const Vector diff = x - c.mu;
    const double d = static_cast<double>(x.size());
    return 0.5 * (d * std::log(2.0 * std::numbers::pi) - c.log_det + diff.dot(c.theta * diff) + lambda * c.l1);
}

double cluster_objective(const ClusterModel& c, const Matrix& x, const std::vector<Eigen::Index>& members,
                         double lambda) {
    double s = 0;
    for (auto i : members) s += observation_cost(c, x.row(i).transpose(), lambda);
    return s;
}

}  // namespace

Matrix project_block_toeplitz(const Matrix& m, int n, int w) {
    if (m.rows() != n * w || m.cols() != n * w) throw Error("project_block_toeplitz: dimension mismatch");
    Matrix out = m;
    for_each_toeplitz_group(n, w, [&](const std::vector<std::pair<int, int>>& members, bool) {
        double s = 0;
        for (auto [r, c] : members) s += m(r, c);
        const double mean = s / static_cast<double>(members.size());
        for (auto [r, c] : members) out(r, c) = mean;
    });
    return out;
}

double block_toeplitz_deviation(const Matrix& m, int n, int w) {
    if (m.rows() != n * w || m.cols() != n * w) throw Error("block_toeplitz_deviation: dimension mismatch");
    double worst = 0;
    for_each_toeplitz_group(n, w, [&](const std::vector<std::pair<int, int>>& members, bool) {
        const double ref = m(members.front().first, members.front().second);
        for (auto [r, c] : members) worst = std::max(worst, std::fabs(m(r, c) - ref));
    });
    return worst;
}

GlassoResult toeplitz_graphical_lasso(const Matrix& cov, int n, int w, double lambda, const AdmmOptions& opts,
                                      const Matrix* warm_start) {
    const auto d = static_cast<Eigen::Index>(n) * w;
    if (cov.rows() != d || cov.cols() != d) throw Error("toeplitz_graphical_lasso: covariance dimension mismatch");
    const double rho = opts.rho;
    const double shrink = lambda / rho;

    Matrix z = warm_start ? *warm_start : Matrix(Matrix::Identity(d, d));
    Matrix u = Matrix::Zero(d, d);
    Matrix theta = z;
    Eigen::SelfAdjointEigenSolver<Matrix> eig;

    GlassoResult res;
    for (int it = 1; it <= opts.max_iters; ++it) {
        // theta-update: closed form through the eigendecomposition of rho(Z-U) - S.
        const Matrix a = rho * (z - u) - cov;
        eig.compute(0.5 * (a + a.transpose()));
        const Vector& l = eig.eigenvalues();
        Vector t(d);
        for (Eigen::Index i = 0; i < d; ++i) t(i) = (l(i) + std::sqrt(l(i) * l(i) + 4.0 * rho)) / (2.0 * rho);
        theta = eig.eigenvectors() * t.asDiagonal() * eig.eigenvectors().transpose();

        // Z-update: prox of the L1 penalty restricted to block-Toeplitz matrices.
        const Matrix z_old = z;
        const Matrix v = theta + u;
        for_each_toeplitz_group(n, w, [&](const std::vector<std::pair<int, int>>& members, bool) {
            double s = 0;
            for (auto [r, c] : members) s += v(r, c);
            const double zval = soft_threshold(s / static_cast<double>(members.size()), shrink);
            for (auto [r, c] : members) z(r, c) = zval;
        });

        u += theta - z;
        const double primal = (theta - z).norm();
        const double dual = rho * (z - z_old).norm();
        res.iterations = it;
        if (primal < opts.tol && dual < opts.tol) {
            res.converged = true;
            break;
        }
    }

    // Z is exactly block-Toeplitz; fall back to the projected theta iterate
    // when the sparse copy is not positive definite yet.
    double ld = 0;
    if (cholesky_log_det(z, &ld)) {
        res.theta = z;
    } else {
        Matrix p = project_block_toeplitz(0.5 * (theta + theta.transpose()), n, w);
        double ridge = 0;
        while (!cholesky_log_det(p, &ld)) {
            ridge = ridge == 0 ? 1e-8 : ridge * 10;
            p += ridge * Matrix::Identity(d, d);
        }
        res.theta = p;
    }
    return res;
}

Matrix cluster_costs(const TiccModel& model, const Matrix& stacked) {
    if (stacked.cols() != model.dimension()) throw Error("ticc: observation dimension mismatch");
    Matrix costs(stacked.rows(), model.num_clusters());
    for (int c = 0; c < model.num_clusters(); ++c) {
        const auto& cm = model.clusters[static_cast<std::size_t>(c)];
        const Matrix diff = stacked.rowwise() - cm.mu.transpose();
        const Vector quad = ((diff * cm.theta).array() * diff.array()).rowwise().sum();
        const double d = static_cast<double>(stacked.cols());
        const double constant = 0.5 * (d * std::log(2.0 * std::numbers::pi) - cm.log_det + model.lambda * cm.l1);
        costs.col(c) = (0.5 * quad.array() + constant).matrix();
    }
    return costs;
}

std::vector<int> assign_costs(const Matrix& costs, double beta) {
    const auto T = costs.rows();
    const auto C = costs.cols();
    std::vector<int> labels(static_cast<std::size_t>(T));
    if (T == 0) return labels;
    if (C < 1) throw Error("assign: cost matrix has no clusters");

    Matrix acc(T, C);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> back(T, C);
    acc.row(0) = costs.row(0);
    for (Eigen::Index t = 1; t < T; ++t) {
        Eigen::Index best_prev = 0;
        const double best_val = acc.row(t - 1).minCoeff(&best_prev);
        for (Eigen::Index c = 0; c < C; ++c) {
            const double stay = acc(t - 1, c);
            const double jump = best_val + beta;
            if (stay <= jump) {
                acc(t, c) = stay + costs(t, c);
                back(t, c) = static_cast<int>(c);
            } else {
                acc(t, c) = jump + costs(t, c);
                back(t, c) = static_cast<int>(best_prev);
            }
        }
    }
    Eigen::Index last = 0;
    acc.row(T - 1).minCoeff(&last);
    labels[static_cast<std::size_t>(T - 1)] = static_cast<int>(last);
    for (Eigen::Index t = T - 1; t > 0; --t)
        labels[static_cast<std::size_t>(t - 1)] = back(t, labels[static_cast<std::size_t>(t)]);
    return labels;
}

double labeling_cost(const Matrix& costs, std::span<const int> labels, double beta) {
    if (static_cast<Eigen::Index>(labels.size()) != costs.rows()) throw Error("labeling_cost: length mismatch");
    double s = 0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        s += costs(static_cast<Eigen::Index>(t), labels[t]);
        if (t > 0 && labels[t] != labels[t - 1]) s += beta;
    }
    return s;
}

FitResult fit(const Matrix& samples, const TiccConfig& cfg) {
    cfg.validate();
    const auto T = samples.rows();
    const int C = cfg.num_clusters;
    const int w = cfg.window;
    if (T < static_cast<Eigen::Index>(C) * w)
        throw Error("ticc: need at least C*w = " + std::to_string(C * w) + " samples, got " + std::to_string(T));

    FitResult result;
    const Matrix raw_stacked = stack_windows(samples, w);
    const std::size_t distinct = count_distinct_rows(raw_stacked);
    if (static_cast<std::size_t>(C) > distinct)
        throw Error("ticc: " + std::to_string(C) + " clusters requested but only " + std::to_string(distinct) +
                    " distinct stacked observations");

    Standardized st = standardize(samples);
    result.warnings = st.warnings;
    TiccModel& model = result.model;
    model.input_variates = static_cast<std::size_t>(samples.cols());
    model.variates = st.kept;
    model.window = w;
    model.lambda = cfg.lambda;
    model.center = st.center;
    model.scale = st.scale;

    const int n = model.num_variates();
    if (n == 0) {
        // Every variate is constant; only a single cluster is possible here.
        model.clusters.resize(1);
        model.clusters[0].size = static_cast<std::size_t>(raw_stacked.rows());
        result.labels.window_labels.assign(static_cast<std::size_t>(raw_stacked.rows()), 0);
        result.labels.labels = expand_labels(result.labels.window_labels, w);
        result.objective.push_back(0.0);
        result.converged = true;
        return result;
    }

    const Matrix x = stack_windows(st.data, w);
    const auto N = x.rows();
    const Eigen::Index d = x.cols();
    const AdmmOptions admm{cfg.admm_rho, cfg.admm_max_iters, cfg.admm_tol};

    auto empirical = [&](const std::vector<Eigen::Index>& members, Vector* mean) {
        Vector mu = Vector::Zero(d);
        for (auto i : members) mu += x.row(i).transpose();
        mu /= static_cast<double>(members.size());
        Matrix s = Matrix::Zero(d, d);
        for (auto i : members) {
            const Vector diff = x.row(i).transpose() - mu;
            s.noalias() += diff * diff.transpose();
        }
        s /= static_cast<double>(members.size());
        *mean = mu;
        return s;
    };

    std::vector<Eigen::Index> all(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) all[static_cast<std::size_t>(i)] = i;
    Vector global_mu;
    const Matrix global_cov = empirical(all, &global_mu);
    const Matrix global_theta = toeplitz_graphical_lasso(global_cov, n, w, cfg.lambda, admm).theta;

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> labels = kmeans_init(x, C, rng);
    model.clusters.assign(static_cast<std::size_t>(C), ClusterModel{});
    std::vector<bool> have_params(static_cast<std::size_t>(C), false);

    double prev_obj = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(C));
        for (Eigen::Index i = 0; i < N; ++i) members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

        // M-step. Clusters are independent; a new estimate is kept only when it
        // does not raise the cluster's share of the objective.
        std::vector<int> empty;
        for (int c = 0; c < C; ++c) {
            auto& cm = model.clusters[static_cast<std::size_t>(c)];
            const auto& mem = members[static_cast<std::size_t>(c)];
            if (mem.empty()) {
                empty.push_back(c);
                continue;
            }
            ClusterModel candidate;
            const Matrix cov = empirical(mem, &candidate.mu);
            const Matrix* warm = have_params[static_cast<std::size_t>(c)] ? &cm.theta : nullptr;
            candidate.theta = toeplitz_graphical_lasso(cov, n, w, cfg.lambda, admm, warm).theta;
            refresh_cluster_stats(candidate);
            candidate.size = mem.size();
            if (have_params[static_cast<std::size_t>(c)]) {
                const double old_obj = cluster_objective(cm, x, mem, cfg.lambda);
                const double new_obj = cluster_objective(candidate, x, mem, cfg.lambda);
                if (new_obj > old_obj) {
                    cm.size = mem.size();
                    continue;
                }
            }
            cm = std::move(candidate);
            have_params[static_cast<std::size_t>(c)] = true;
        }

        // Empty clusters are reseeded at the worst-fitting observation. They
        // hold no observations, so this cannot raise the objective.
        if (!empty.empty()) {
            Vector worst_fit = Vector::Constant(N, -std::numeric_limits<double>::infinity());
            bool any_params = std::any_of(have_params.begin(), have_params.end(), [](bool b) { return b; });
            if (any_params) {
                TiccModel fitted = model;
                fitted.clusters.clear();
                for (int c = 0; c < C; ++c)
                    if (have_params[static_cast<std::size_t>(c)]) fitted.clusters.push_back(model.clusters[static_cast<std::size_t>(c)]);
                worst_fit = cluster_costs(fitted, x).rowwise().minCoeff();
            } else {
                worst_fit = (x.rowwise() - global_mu.transpose()).rowwise().squaredNorm();
            }
            for (int c : empty) {
                Eigen::Index idx = 0;
                worst_fit.maxCoeff(&idx);
                worst_fit(idx) = -std::numeric_limits<double>::infinity();
                auto& cm = model.clusters[static_cast<std::size_t>(c)];
                cm.mu = x.row(idx).transpose();
                cm.theta = global_theta;
                refresh_cluster_stats(cm);
                cm.size = 0;
                have_params[static_cast<std::size_t>(c)] = true;
                result.warnings.push_back("iteration " + std::to_string(iter) + ": cluster " + std::to_string(c) +
                                          " was empty and has been reseeded");
            }
        }

        // E-step.
        const Matrix costs = cluster_costs(model, x);
        std::vector<int> next = assign_costs(costs, cfg.beta);
        const double obj = labeling_cost(costs, next, cfg.beta);
        result.objective.push_back(obj);
        result.iterations = iter;
        const bool same = next == labels;
        labels = std::move(next);
        if (same || std::fabs(prev_obj - obj) <= cfg.tol * std::max(1.0, std::fabs(obj))) {
            result.converged = true;
            break;
        }
        prev_obj = obj;
    }

    for (auto& cm : model.clusters) cm.size = 0;
    for (int l : labels) ++model.clusters[static_cast<std::size_t>(l)].size;
    result.labels.window_labels = labels;
    result.labels.labels = expand_labels(labels, w);
    return result;
}

FitResult fit(const ingest::CellSeries& series, const TiccConfig& cfg, std::span<const std::string> variates) {
    return fit(series_matrix(series, variates), cfg);
}

SegmentLabels assign(const Matrix& samples, const TiccModel& model, double beta) {
    SegmentLabels out;
    if (model.num_clusters() < 1) throw Error("assign: model has no clusters");
    const Matrix std_samples = apply_standardization(samples, model);
    if (samples.rows() < model.window)
        throw Error("assign: series shorter than the model window");
    if (model.num_variates() == 0) {
        out.window_labels.assign(static_cast<std::size_t>(samples.rows() - model.window + 1), 0);
    } else {
        const Matrix x = stack_windows(std_samples, model.window);
        out.window_labels = assign_costs(cluster_costs(model, x), beta);
    }
    out.labels = expand_labels(out.window_labels, model.window);
    return out;
}

SegmentLabels assign(const ingest::CellSeries& series, const TiccModel& model, double beta,
                     std::span<const std::string> variates) {
    return assign(series_matrix(series, variates), model, beta);
}

void save_model(std::ostream& out, const TiccModel& m) {
    out << "TRACETWIN-TICC 1\n";
    out << std::setprecision(17);
    out << "input_variates " << m.input_variates << "\n";
    out << "variates";
    for (auto v : m.variates) out << ' ' << v;
    out << "\nwindow " << m.window << "\nlambda " << m.lambda << "\nclusters " << m.num_clusters() << "\n";
    out << "center";
    for (Eigen::Index i = 0; i < m.center.size(); ++i) out << ' ' << m.center(i);
    out << "\nscale";
    for (Eigen::Index i = 0; i < m.scale.size(); ++i) out << ' ' << m.scale(i);
    out << "\n";
    const int d = m.dimension();
    for (int c = 0; c < m.num_clusters(); ++c) {
        const auto& cm = m.clusters[static_cast<std::size_t>(c)];
        out << "cluster " << c << " size " << cm.size << "\nmu";
        for (int i = 0; i < d; ++i) out << ' ' << cm.mu(i);
        out << "\ntheta\n";
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) out << (j ? " " : "") << cm.theta(i, j);
            out << "\n";
        }
    }
}

TiccModel load_model(std::string_view content) {
    // Leading comment lines (provenance headers) are skipped.
    while (!content.empty() && content.front() == '#') {
        const auto nl = content.find('\n');
        content = nl == std::string_view::npos ? std::string_view{} : content.substr(nl + 1);
    }
    std::istringstream in{std::string(content)};
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "TRACETWIN-TICC") throw Error("not a TICC model file");
    if (version != 1) throw Error("unsupported TICC model version " + std::to_string(version));
    auto expect = [&](const char* key) {
        std::string k;
        if (!(in >> k) || k != key) throw Error(std::string("TICC model: expected '") + key + "'");
    };
    TiccModel m;
    expect("input_variates");
    in >> m.input_variates;
    expect("variates");
    std::string line;
    std::getline(in, line);
    for (const auto& tok : text::split_ws(line)) {
        auto v = text::parse_int(tok);
        if (!v || *v < 0) throw Error("TICC model: bad variate index");
        m.variates.push_back(static_cast<std::size_t>(*v));
    }
    int clusters = 0;
    expect("window");
    in >> m.window;
    expect("lambda");
    in >> m.lambda;
    expect("clusters");
    in >> clusters;
    const int n = m.num_variates();
    const int d = n * m.window;
    m.center.resize(n);
    m.scale.resize(n);
    expect("center");
    for (int i = 0; i < n; ++i) in >> m.center(i);
    expect("scale");
    for (int i = 0; i < n; ++i) in >> m.scale(i);
    for (int c = 0; c < clusters; ++c) {
        ClusterModel cm;
        int idx = 0;
        expect("cluster");
        in >> idx;
        expect("size");
        in >> cm.size;
        cm.mu.resize(d);
        cm.theta.resize(d, d);
        expect("mu");
        for (int i = 0; i < d; ++i) in >> cm.mu(i);
        expect("theta");
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) in >> cm.theta(i, j);
        if (!in) throw Error("TICC model: truncated cluster block");
        if (d > 0) refresh_cluster_stats(cm);
        m.clusters.push_back(std::move(cm));
    }
    if (!in) throw Error("TICC model: truncated file");
    return m;
}

void write_labels(std::ostream& out, std::int64_t t0, const SegmentLabels& labels) {
    out << "t,label\n";
    for (std::size_t i = 0; i < labels.labels.size(); ++i) out << t0 + static_cast<std::int64_t>(i) << ',' << labels.labels[i] << '\n';
}

std::vector<int> read_labels(std::string_view content, std::int64_t* t0) {
    const Table t = read_table(content, ',', true);
    const auto ct = t.column("t");
    const auto cl = t.column("label");
    if (!ct || !cl) throw Error("labels file must have columns t,label");
    std::vector<int> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row.size() <= std::max(*ct, *cl)) throw ParseError(t.line_numbers[r], "missing field");
        auto tt = text::parse_int(row[*ct]);
        auto l = text::parse_int(row[*cl]);
        if (!tt || !l || *l < 0) throw ParseError(t.line_numbers[r], "bad label row");
        if (r == 0 && t0) *t0 = *tt;
        out.push_back(static_cast<int>(*l));
    }
    return out;
}

}  // namespace tracetwin::ticc
