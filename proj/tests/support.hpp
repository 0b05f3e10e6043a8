#pragma once

// Shared fixtures: synthetic Gaussian regimes and brute-force oracles.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "tracetwin/ticc.hpp"

namespace support {

using tracetwin::ticc::Matrix;
using tracetwin::ticc::Vector;

struct Regimes {
    Matrix samples;           // T x 3
    std::vector<int> truth;   // regime per sample
};

// Three regimes of `length` samples each. Every regime has its own mean and
// a sparse precision matrix with one off-diagonal coupling on a different
// pair of variates.
inline Regimes three_regimes(int length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Matrix P[3];
    for (auto& p : P) p = Matrix::Identity(3, 3);
    P[0](0, 1) = P[0](1, 0) = 0.45;
    P[1](1, 2) = P[1](2, 1) = -0.45;
    P[2](0, 2) = P[2](2, 0) = 0.45;
    Vector mu[3] = {Vector::Zero(3), Vector::Zero(3), Vector::Zero(3)};
    mu[1] << 1.0, 0.0, -1.0;
    mu[2] << 0.0, 1.0, 1.0;
    Regimes r;
    r.samples.resize(3 * length, 3);
    for (int k = 0; k < 3; ++k) {
        // x = mu + U^{-1} z with P = U^T U has covariance P^{-1}.
        const Matrix U = Eigen::LLT<Matrix>(P[k]).matrixU();
        for (int t = 0; t < length; ++t) {
            Vector z(3);
            for (int i = 0; i < 3; ++i) z(i) = n01(rng);
            const Vector x = mu[k] + U.triangularView<Eigen::Upper>().solve(z);
            r.samples.row(k * length + t) = x.transpose();
            r.truth.push_back(k);
        }
    }
    return r;
}

// Best accuracy over all relabelings of the predicted clusters.
inline double matched_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth, int clusters) {
    std::vector<int> perm(static_cast<std::size_t>(clusters));
    std::iota(perm.begin(), perm.end(), 0);
    std::size_t best = 0;
    do {
        std::size_t hit = 0;
        for (std::size_t t = 0; t < truth.size(); ++t)
            if (predicted[t] >= 0 && predicted[t] < clusters && perm[static_cast<std::size_t>(predicted[t])] == truth[t]) ++hit;
        best = std::max(best, hit);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(best) / static_cast<double>(truth.size());
}

// Minimum of labeling_cost over every label sequence (C^T of them).
inline double brute_force_min_cost(const Matrix& costs, double beta) {
    const auto T = static_cast<int>(costs.rows());
    const auto C = static_cast<int>(costs.cols());
    std::vector<int> labels(static_cast<std::size_t>(T), 0);
    double best = std::numeric_limits<double>::infinity();
    for (;;) {
        double c = 0;
        for (int t = 0; t < T; ++t) {
            c += costs(t, labels[static_cast<std::size_t>(t)]);
            if (t > 0 && labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(t - 1)]) c += beta;
        }
        best = std::min(best, c);
        int i = 0;
        while (i < T && ++labels[static_cast<std::size_t>(i)] == C) labels[static_cast<std::size_t>(i++)] = 0;
        if (i == T) break;
    }
    return best;
}

// sup |F_a - F_b| evaluated at every pooled sample point by direct counting.
inline double brute_force_ks(const std::vector<double>& a, const std::vector<double>& b) {
    double best = 0;
    auto cdf = [](const std::vector<double>& v, double x) {
        std::size_t n = 0;
        for (double y : v)
            if (y <= x) ++n;
        return static_cast<double>(n) / static_cast<double>(v.size());
    };
    for (const auto* s : {&a, &b})
        for (double x : *s) best = std::max(best, std::abs(cdf(a, x) - cdf(b, x)));
    return best;
}

}  // namespace support
