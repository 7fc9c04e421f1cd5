#pragma once

// Plain Newton-Raphson for the logistic likelihood: unscaled columns, Gauss-Jordan solve,
// no step control. Shares nothing with the library's solver.

#include <cmath>
#include <vector>

inline std::vector<double> mle_oracle(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
    const std::size_t p = x[0].size();
    std::vector<double> b(p, 0.0);
    for (int it = 0; it < 200; ++it) {
        std::vector<double> g(p, 0.0);
        std::vector<std::vector<double>> h(p, std::vector<double>(p, 0.0));
        for (std::size_t r = 0; r < x.size(); ++r) {
            double eta = 0;
            for (std::size_t c = 0; c < p; ++c) eta += x[r][c] * b[c];
            const double q = 1.0 / (1.0 + std::exp(-eta));
            for (std::size_t a = 0; a < p; ++a) {
                g[a] += x[r][a] * (y[r] - q);
                for (std::size_t c = 0; c < p; ++c) h[a][c] += x[r][a] * x[r][c] * q * (1 - q);
            }
        }
        for (std::size_t a = 0; a < p; ++a) h[a].push_back(g[a]);
        for (std::size_t col = 0; col < p; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < p; ++r)
                if (std::abs(h[r][col]) > std::abs(h[piv][col])) piv = r;
            std::swap(h[col], h[piv]);
            for (std::size_t r = 0; r < p; ++r) {
                if (r == col) continue;
                const double f = h[r][col] / h[col][col];
                for (std::size_t c = col; c <= p; ++c) h[r][c] -= f * h[col][c];
            }
        }
        double step = 0;
        for (std::size_t a = 0; a < p; ++a) {
            const double d = h[a][p] / h[a][a];
            b[a] += d;
            step += d * d;
        }
        if (std::sqrt(step) < 1e-15) break;
    }
    return b;
}
