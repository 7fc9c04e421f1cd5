#pragma once

// Direct evaluation of the influence-function displays with nested loops over regions and their
// risk-set rows, plain double arithmetic and a hand-written matrix inverse. Shares no code with
// the estimators it checks.

#include "rtcausal/design.hpp"

#include <cmath>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct Row {
    int event;
    double delta;
    double d;
    double q;
    Vec x;
};

inline Mat inverse(Mat a) {
    const std::size_t p = a.size();
    Mat inv(p, Vec(p, 0.0));
    for (std::size_t i = 0; i < p; ++i) inv[i][i] = 1.0;
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < p; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(inv[col], inv[piv]);
        const double d = a[col][col];
        for (std::size_t c = 0; c < p; ++c) a[col][c] /= d, inv[col][c] /= d;
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (std::size_t c = 0; c < p; ++c) a[r][c] -= f * a[col][c], inv[r][c] -= f * inv[col][c];
        }
    }
    return inv;
}

inline Vec times(const Mat& m, const Vec& v) {
    Vec out(m.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += m[i][j] * v[j];
    return out;
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// S(i): the rows of region i, one per event whose risk set contains i.
inline std::vector<std::vector<Row>> risk_sets(const rtcausal::EstimationSample& s, const Eigen::VectorXd& q) {
    std::vector<std::vector<Row>> S(static_cast<std::size_t>(s.n_regions()));
    for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
        Vec x(static_cast<std::size_t>(s.x.cols()));
        for (Eigen::Index c = 0; c < s.x.cols(); ++c) x[static_cast<std::size_t>(c)] = s.x(r, c);
        S[static_cast<std::size_t>(s.region[r])].push_back({s.event[r], s.treated[r], s.outcome[r], q[r], x});
    }
    return S;
}

struct AteTerms {
    Eigen::MatrixXd v;
    Eigen::VectorXd u;
    std::vector<double> self;
    double gamma = 0;
    double sigma2 = 0;
};

inline AteTerms evaluate(const rtcausal::EstimationSample& s, const Eigen::VectorXd& q) {
    const auto S = risk_sets(s, q);
    const std::size_t n = S.size();
    const std::size_t p = static_cast<std::size_t>(s.x.cols());
    const double nn = static_cast<double>(n);

    // V_i
    Mat info(p, Vec(p, 0.0));
    for (const auto& rows : S)
        for (const auto& r : rows)
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b) info[a][b] += r.x[a] * r.x[b] * r.q * (1 - r.q) / nn;
    const Mat info_inv = inverse(info);
    std::vector<Vec> V(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec score(p, 0.0);
        for (const auto& r : S[i])
            for (std::size_t a = 0; a < p; ++a) score[a] += r.x[a] * (r.delta - r.q);
        V[i] = times(info_inv, score);
    }

    Vec A(n, 0), B(n, 0), C(n, 0), D(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& r : S[i]) {
            A[i] += r.d * r.delta / r.q;
            B[i] += r.delta / r.q;
            C[i] += r.d * (1 - r.delta) / (1 - r.q);
            D[i] += (1 - r.delta) / (1 - r.q);
        }
    double sA = 0, sB = 0, sC = 0, sD = 0;
    for (std::size_t i = 0; i < n; ++i) sA += A[i], sB += B[i], sC += C[i], sD += D[i];

    Vec g1(p, 0), h1(p, 0), g2(p, 0), h2(p, 0);
    for (const auto& rows : S)
        for (const auto& r : rows)
            for (std::size_t a = 0; a < p; ++a) {
                g1[a] += r.d * r.delta * (1 - r.q) * r.x[a] / r.q;
                h1[a] += r.delta * (1 - r.q) * r.x[a] / r.q;
                g2[a] += r.d * (1 - r.delta) * r.q * r.x[a] / (1 - r.q);
                h2[a] += (1 - r.delta) * r.q * r.x[a] / (1 - r.q);
            }
    Vec br1(p), br2(p);
    for (std::size_t a = 0; a < p; ++a) {
        br1[a] = g1[a] / sB - sA / (sB * sB) * h1[a];
        br2[a] = g2[a] / sD - sC / (sD * sD) * h2[a];
    }

    AteTerms out;
    out.self.assign(n, 0.0);
    out.u.resize(static_cast<Eigen::Index>(n));
    out.v.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) {
        double self = 0;
        // region i's own event j(i), if any
        int own = -1;
        for (int e = 0; e < s.n_events(); ++e)
            if (s.event_case_region[static_cast<std::size_t>(e)] == static_cast<int>(i)) own = e;
        if (own >= 0) {
            for (const auto& r : S[i])
                if (r.event == own) self += r.d / r.q / sB - sA / (sB * sB) / r.q;
            double cy = 0, cw = 0;
            for (std::size_t k = 0; k < n; ++k)
                for (const auto& r : S[k])
                    if (r.event == own) {
                        cy += (1 - r.delta) / (1 - r.q) * r.d;
                        cw += (1 - r.delta) / (1 - r.q);
                    }
            self += -cy / sD + sC / (sD * sD) * cw;
        }
        out.self[i] = self;
        const double u = A[i] / (sB / nn) - C[i] / (sD / nn) - (sA / nn) / ((sB / nn) * (sB / nn)) * B[i] +
                         (sC / nn) / ((sD / nn) * (sD / nn)) * D[i] - dot(br1, V[i]) - dot(br2, V[i]) + self;
        out.u[static_cast<Eigen::Index>(i)] = u;
        for (std::size_t a = 0; a < p; ++a) out.v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = V[i][a];
    }
    double ubar = 0;
    for (std::size_t i = 0; i < n; ++i) ubar += out.u[static_cast<Eigen::Index>(i)] / nn;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = out.u[static_cast<Eigen::Index>(i)] - ubar;
        out.sigma2 += e * e / (nn * nn);
    }
    out.gamma = sA / sB - sC / sD;
    return out;
}

struct HteTerms {
    Eigen::MatrixXd sigma1, sigma2, w;
    Eigen::VectorXd theta;
};

inline HteTerms evaluate_hte(const rtcausal::EstimationSample& s, const Eigen::VectorXd& q, const Eigen::MatrixXd& v,
                             const Eigen::MatrixXd& z) {
    const auto S = risk_sets(s, q);
    const std::size_t n = S.size();
    const std::size_t p = static_cast<std::size_t>(s.x.cols());
    const std::size_t L = static_cast<std::size_t>(z.cols());
    auto Z = [&](std::size_t i, std::size_t l) { return z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)); };

    Mat s1(L, Vec(L, 0.0));
    Vec rhs(L, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& r : S[i])
            for (std::size_t a = 0; a < L; ++a) {
                rhs[a] += Z(i, a) * r.d * (r.delta / r.q - (1 - r.delta) / (1 - r.q));
                for (std::size_t b = 0; b < L; ++b) s1[a][b] += Z(i, a) * Z(i, b);
            }
    const Vec theta = times(inverse(s1), rhs);

    Mat M(L, Vec(p, 0.0));
    for (std::size_t k = 0; k < n; ++k)
        for (const auto& r : S[k])
            for (std::size_t a = 0; a < L; ++a)
                for (std::size_t b = 0; b < p; ++b)
                    M[a][b] += Z(k, a) * r.d * r.x[b] *
                               (r.delta * (1 - r.q) / r.q + (1 - r.delta) * r.q / (1 - r.q)) / static_cast<double>(n);

    HteTerms out;
    out.w.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(L));
    out.sigma2 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
    for (std::size_t i = 0; i < n; ++i) {
        double inner = 0;
        for (const auto& r : S[i]) {
            double tz = 0;
            for (std::size_t a = 0; a < L; ++a) tz += theta[a] * Z(i, a);
            inner += r.d * (r.delta / r.q - (1 - r.delta) / (1 - r.q)) - tz;
        }
        Vec vi(p);
        for (std::size_t b = 0; b < p; ++b) vi[b] = v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
        const Vec mv = times(M, vi);
        for (std::size_t a = 0; a < L; ++a)
            out.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = Z(i, a) * inner - mv[a];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < L; ++a)
            for (std::size_t b = 0; b < L; ++b)
                out.sigma2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                    out.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) *
                    out.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    out.sigma1.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
    out.theta.resize(static_cast<Eigen::Index>(L));
    for (std::size_t a = 0; a < L; ++a) {
        out.theta[static_cast<Eigen::Index>(a)] = theta[a];
        for (std::size_t b = 0; b < L; ++b) out.sigma1(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = s1[a][b];
    }
    return out;
}

}  // namespace oracle
