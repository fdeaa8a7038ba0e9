#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbfsos/cbf.hpp"
#include "cbfsos/numkernel.hpp"
#include "cbfsos/poly.hpp"
#include "cbfsos/sos.hpp"

namespace cbfsos {

struct DescentParams {
    int max_outer = 10;
    double epsilon = 1e-4;
    int lambda_degree = 0;       // total degree of the dominating SOS polynomial; 0 = auto
    int multiplier_degree = 2;
    Polynomial initial;          // starting candidate, required
    VerifyOptions verify{};      // solver settings and final re-verification
};

struct DescentTrace {
    std::vector<double> rho;     // objective after each half-step, in order
    Polynomial candidate;
    HocbfChain chain;            // populated by the chain variant only
    Verdict verdict;
};

struct FixedPoint {
    std::vector<double> x, u;
};

struct CompactOptions {
    double resolution = 1e-4;    // relative width at which the level search stops
    int multiplier_degree = 2;
    double sdp_tol = 1e-8;
    int sdp_max_iters = 200;
    double cert_tol = 1e-6;
    double shrink = 0.0;         // optional margin on the containment side
    std::vector<double> box_lo, box_hi;  // seed box for the level bracket, default [-2,2]^n
    int grid_points = 11;
};

struct CompactResult {
    std::vector<double> x_star, u_star;
    DenseMatrix gain;
    SymMatrix lyapunov;
    double delta = 0.0;
    double enlarge_gain = 0.0;
    Polynomial b0, b1;
};

struct EnlargeOptions {
    double k_max = 1.0;
    double resolution = 1e-2;    // relative width of the gain bisection
    VerifyOptions verify{};
};

struct CanonicalForm {
    DenseMatrix T, Fc, Gc;
};

namespace detail {

inline ControlSystem linear_control_system(const DenseMatrix& F, const DenseMatrix& G) {
    int n = static_cast<int>(F.rows);
    int m = static_cast<int>(G.cols);
    std::vector<Polynomial> f;
    for (int i = 0; i < n; ++i) {
        Polynomial p(n);
        for (int j = 0; j < n; ++j)
            p += Polynomial::variable(n, j + 1) * F(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        f.push_back(p);
    }
    std::vector<Polynomial> g;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            g.push_back(Polynomial::constant(n, G(static_cast<std::size_t>(i), static_cast<std::size_t>(j))));
    return ControlSystem(n, m, PolyVector(std::move(f)), PolyMatrix(static_cast<std::size_t>(n), static_cast<std::size_t>(m), std::move(g)));
}

// (1 + sum x_i^2)^(deg/2); dominates every polynomial of total degree <= deg
// on compact sets, which is what the descent relaxation needs from it
inline Polynomial dominating_sos(int n, int deg) {
    Polynomial base = Polynomial::constant(n, 1.0);
    for (int i = 1; i <= n; ++i) {
        Polynomial xi = Polynomial::variable(n, i);
        base += xi * xi;
    }
    return base.pow(round_even(deg) / 2);
}

inline std::optional<Certificate> solve_feasible(const SosProgram& prog, double tol, int iters,
                                                 double cert_tol) {
    SosSolveResult r = solve_sos(prog, tol, iters);
    if (r.status != SdpStatus::Optimal || !r.certificate) return std::nullopt;
    if (!check_certificate(*r.certificate, cert_tol)) return std::nullopt;
    return std::move(r.certificate);
}

}  // namespace detail

// Newton iteration on the n equations f(x) + g(x)u = 0 over the n+m unknowns
// (x, u); each step is the minimum-norm solution of the linearized system, so
// the iteration converges to the solution nearest the seed for linear systems.
inline FixedPoint find_fixed_point(const ControlSystem& sys, std::vector<double> x0,
                                   std::vector<double> u0) {
    if (static_cast<int>(x0.size()) != sys.n || static_cast<int>(u0.size()) != sys.m)
        throw DimensionError("find_fixed_point: seed dimension mismatch");
    const int n = sys.n, m = sys.m;
    std::vector<double> z(x0);
    z.insert(z.end(), u0.begin(), u0.end());

    auto residual = [&](const std::vector<double>& zz) {
        std::vector<double> x(zz.begin(), zz.begin() + n);
        std::vector<double> r(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            r[static_cast<std::size_t>(i)] = sys.f.entries[static_cast<std::size_t>(i)].evaluate(x);
            for (int l = 0; l < m; ++l)
                r[static_cast<std::size_t>(i)] +=
                    sys.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l)).evaluate(x) *
                    zz[static_cast<std::size_t>(n + l)];
        }
        return r;
    };

    for (int iter = 0; iter < 100; ++iter) {
        std::vector<double> res = residual(z);
        double nrm = 0.0;
        for (double v : res) nrm = std::max(nrm, std::abs(v));
        if (nrm <= 1e-10) {
            FixedPoint fp;
            fp.x.assign(z.begin(), z.begin() + n);
            fp.u.assign(z.begin() + n, z.end());
            return fp;
        }
        std::vector<double> x(z.begin(), z.begin() + n);
        DenseMatrix jac(static_cast<std::size_t>(n), static_cast<std::size_t>(n + m));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                Polynomial p = sys.f.entries[static_cast<std::size_t>(i)].differentiate(j + 1);
                double v = p.evaluate(x);
                for (int l = 0; l < m; ++l)
                    v += sys.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l))
                             .differentiate(j + 1)
                             .evaluate(x) *
                         z[static_cast<std::size_t>(n + l)];
                jac(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
            }
            for (int l = 0; l < m; ++l)
                jac(static_cast<std::size_t>(i), static_cast<std::size_t>(n + l)) =
                    sys.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l)).evaluate(x);
        }
        // minimum-norm step: delta = J' (J J')^{-1} (-res)
        DenseMatrix jjt = jac * jac.transpose();
        std::vector<double> neg(res);
        for (double& v : neg) v = -v;
        std::vector<double> lam;
        try {
            lam = solve_linear(jjt, neg);
        } catch (const SingularMatrixError&) {
            throw std::runtime_error("find_fixed_point: singular Jacobian");
        }
        std::vector<double> delta = jac.transpose().apply(lam);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += delta[i];
    }
    throw std::runtime_error("find_fixed_point: no convergence in 100 iterations");
}

// F = d(f + g u*)/dx at x*, G = g(x*); exact for linear systems
inline std::pair<DenseMatrix, DenseMatrix> linearize(const ControlSystem& sys,
                                                     const std::vector<double>& x_star,
                                                     const std::vector<double>& u_star) {
    if (static_cast<int>(x_star.size()) != sys.n || static_cast<int>(u_star.size()) != sys.m)
        throw DimensionError("linearize: dimension mismatch");
    const int n = sys.n, m = sys.m;
    DenseMatrix F(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    DenseMatrix G(static_cast<std::size_t>(n), static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double v = sys.f.entries[static_cast<std::size_t>(i)].differentiate(j + 1).evaluate(x_star);
            for (int l = 0; l < m; ++l)
                v += sys.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l))
                         .differentiate(j + 1)
                         .evaluate(x_star) *
                     u_star[static_cast<std::size_t>(l)];
            F(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
        }
        for (int l = 0; l < m; ++l)
            G(static_cast<std::size_t>(i), static_cast<std::size_t>(l)) =
                sys.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l)).evaluate(x_star);
    }
    return {F, G};
}

namespace detail {

// boundary condition in the relaxed form: L_f b (anchored at multiplier one)
// plus an SOS correction, the input-channel row with free multipliers and a
// free multiple of b, all required to sum to an SOS polynomial
inline bool quadratic_cbf_check(const ControlSystem& sys, const Polynomial& b,
                                const CompactOptions& opts) {
    const int n = sys.n;
    const int dm = round_even(opts.multiplier_degree);
    Polynomial lf = lie(b, sys.f);
    std::vector<Polynomial> lg;
    for (int j = 0; j < sys.m; ++j) lg.push_back(lie(b, sys.g.column(static_cast<std::size_t>(j))));

    int deg = std::max(lf.degree(), b.degree());
    for (const auto& p : lg) deg = std::max(deg, p.degree());
    int D = round_even(deg + dm);

    SosProgram prog(n);
    SosConstraint con;
    con.label = "cbf-shape";
    con.constant = lf;
    int alpha = prog.add_sos(monomial_basis(n, dm / 2));
    con.terms.push_back({lf, alpha, 0});
    for (const auto& p : lg) {
        int th = prog.add_free(monomial_basis(n, dm));
        con.terms.push_back({p, th, 0});
    }
    int eta = prog.add_free(monomial_basis(n, dm));
    con.terms.push_back({b, eta, 0});
    int slack = prog.add_sos(monomial_basis(n, D / 2));
    con.terms.push_back({Polynomial::constant(n, -1.0), slack, 0});
    prog.add_identity(std::move(con));

    return solve_feasible(prune_sos_bases(std::move(prog)), opts.sdp_tol, opts.sdp_max_iters,
                          opts.cert_tol)
        .has_value();
}

// containment in the subtraction form: h - beta * b must be SOS for each
// region constraint h
inline bool quadratic_containment_check(const Polynomial& b, const SafeRegion& region,
                                        const CompactOptions& opts) {
    const int n = b.vars();
    const int dm = round_even(opts.multiplier_degree);
    Polynomial beps = opts.shrink > 0.0 ? shrink_poly(b, opts.shrink) : b;
    for (const auto& h : region.constraints) {
        int D = round_even(std::max(h.degree(), beps.degree() + dm));
        SosProgram prog(n);
        SosConstraint con;
        con.label = "containment-shape";
        con.constant = h;
        int beta = prog.add_sos(monomial_basis(n, dm / 2));
        con.terms.push_back({-beps, beta, 0});
        int slack = prog.add_sos(monomial_basis(n, D / 2));
        con.terms.push_back({Polynomial::constant(n, -1.0), slack, 0});
        prog.add_identity(std::move(con));
        if (!solve_feasible(prune_sos_bases(std::move(prog)), opts.sdp_tol, opts.sdp_max_iters,
                            opts.cert_tol))
            return false;
    }
    return true;
}

inline Polynomial quadratic_level_set(int n, const std::vector<double>& x_star, const SymMatrix& P,
                                      double delta) {
    Polynomial q(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Polynomial di = Polynomial::variable(n, i + 1) - Polynomial::constant(n, x_star[static_cast<std::size_t>(i)]);
            Polynomial dj = Polynomial::variable(n, j + 1) - Polynomial::constant(n, x_star[static_cast<std::size_t>(j)]);
            q += di * dj * P.get(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    return Polynomial::constant(n, delta) - q;
}

// upper bracket for the level search: four times the largest value of the
// quadratic form over region-boundary crossings sampled from a coarse grid
inline double level_bracket(const SafeRegion& region, const std::vector<double>& x_star,
                            const SymMatrix& P, const CompactOptions& opts) {
    const int n = static_cast<int>(x_star.size());
    std::vector<double> lo = opts.box_lo, hi = opts.box_hi;
    if (static_cast<int>(lo.size()) != n) lo.assign(static_cast<std::size_t>(n), -2.0);
    if (static_cast<int>(hi.size()) != n) hi.assign(static_cast<std::size_t>(n), 2.0);
    const int g = std::max(2, opts.grid_points);

    auto quad = [&](const std::vector<double>& x) {
        double v = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                v += (x[static_cast<std::size_t>(i)] - x_star[static_cast<std::size_t>(i)]) *
                     (x[static_cast<std::size_t>(j)] - x_star[static_cast<std::size_t>(j)]) *
                     P.get(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        return v;
    };

    double best = 0.0, fallback = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    std::vector<double> x(static_cast<std::size_t>(n));
    bool done = false;
    while (!done) {
        for (int i = 0; i < n; ++i)
            x[static_cast<std::size_t>(i)] =
                lo[static_cast<std::size_t>(i)] +
                (hi[static_cast<std::size_t>(i)] - lo[static_cast<std::size_t>(i)]) *
                    idx[static_cast<std::size_t>(i)] / (g - 1);
        fallback = std::max(fallback, quad(x));
        for (const auto& h : region.constraints) {
            if (h.evaluate(x) >= 0.0) continue;
            // bisect the segment x* -> x for the boundary crossing
            double a = 0.0, b = 1.0;
            std::vector<double> p(static_cast<std::size_t>(n));
            for (int it = 0; it < 40; ++it) {
                double t = 0.5 * (a + b);
                for (int i = 0; i < n; ++i)
                    p[static_cast<std::size_t>(i)] =
                        x_star[static_cast<std::size_t>(i)] +
                        t * (x[static_cast<std::size_t>(i)] - x_star[static_cast<std::size_t>(i)]);
                (h.evaluate(p) >= 0.0 ? a : b) = t;
            }
            best = std::max(best, quad(p));
        }
        int pos = 0;
        while (pos < n) {
            if (++idx[static_cast<std::size_t>(pos)] < g) break;
            idx[static_cast<std::size_t>(pos)] = 0;
            ++pos;
        }
        done = pos == n;
    }
    double bracket = 4.0 * (best > 0.0 ? best : fallback);
    return bracket > 0.0 ? bracket : 1.0;
}

}  // namespace detail

// Quadratic barrier around a fixed point: P from the Lyapunov equation of the
// closed linearized loop, then the largest level delta whose sublevel set
// passes both the barrier-shape and containment checks, found by bisection.
inline CompactResult compact_cbf(const ControlSystem& sys, const SafeRegion& region,
                                 const std::vector<double>& x_star, const std::vector<double>& u_star,
                                 const DenseMatrix& K, const SymMatrix& N,
                                 const CompactOptions& opts = {}) {
    if (region.constraints.empty()) throw std::invalid_argument("compact_cbf: empty region");
    auto [F, G] = linearize(sys, x_star, u_star);
    DenseMatrix fbar = F - G * K;
    SymMatrix P(0);
    try {
        P = solve_lyapunov(fbar, N);
    } catch (const SingularMatrixError&) {
        throw std::invalid_argument("compact_cbf: gain is not stabilizing");
    }
    if (min_eigenvalue(P) <= 0.0)
        throw std::invalid_argument("compact_cbf: gain is not stabilizing");

    auto feasible = [&](double delta) {
        Polynomial b0 = detail::quadratic_level_set(sys.n, x_star, P, delta);
        return detail::quadratic_cbf_check(sys, b0, opts) &&
               detail::quadratic_containment_check(b0, region, opts);
    };

    double hi = detail::level_bracket(region, x_star, P, opts);
    double lo = 0.0;
    if (feasible(hi)) {
        lo = hi;
    } else {
        double top = hi;
        while (hi - lo > opts.resolution * top) {
            double mid = 0.5 * (lo + hi);
            (feasible(mid) ? lo : hi) = mid;
        }
    }
    if (lo <= 0.0) throw std::runtime_error("compact_cbf: no feasible level at resolution floor");

    CompactResult res;
    res.x_star = x_star;
    res.u_star = u_star;
    res.gain = K;
    res.lyapunov = P;
    res.delta = lo;
    res.b0 = detail::quadratic_level_set(sys.n, x_star, P, lo);
    res.b1 = res.b0;
    return res;
}

// Grow the certified set by mixing in the region constraint: b1 = b0 + k h,
// with the largest k (by bisection) that still verifies. k = 0 and b1 = b0
// when no positive gain verifies at the resolution.
inline std::pair<double, Polynomial> enlarge(const Polynomial& b0, const SafeRegion& region,
                                             const ControlSystem& sys,
                                             const EnlargeOptions& opts = {}) {
    if (region.constraints.empty()) throw std::invalid_argument("enlarge: empty region");
    Verdict base = verify_cbf(sys, b0, opts.verify);
    if (base.outcome != Outcome::Verified)
        throw std::invalid_argument("enlarge: base barrier does not verify");
    const Polynomial& h = region.constraints.front();

    auto verified = [&](double k) {
        return verify_cbf(sys, b0 + h * k, opts.verify).outcome == Outcome::Verified;
    };

    double lo = 0.0, hi = opts.k_max;
    if (verified(hi)) {
        lo = hi;
    } else {
        while (hi - lo > opts.resolution * opts.k_max) {
            double mid = 0.5 * (lo + hi);
            (verified(mid) ? lo : hi) = mid;
        }
    }
    if (lo <= 0.0) return {0.0, b0};
    return {lo, b0 + h * lo};
}

// Coordinate change for a controllable single-input pair: Fc = T F T^{-1},
// Gc = T G with the input entering the first state and an identity shift
// below the first row.
inline CanonicalForm canonical_form(const DenseMatrix& F, const DenseMatrix& G) {
    if (F.rows != F.cols || G.rows != F.rows) throw std::invalid_argument("canonical_form: shape mismatch");
    if (G.cols != 1) throw std::invalid_argument("canonical_form: single-input pairs only");
    const std::size_t n = F.rows;

    DenseMatrix ctrb(n, n);
    {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = G(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) ctrb(i, j) = col[i];
            col = F.apply(col);
        }
    }
    // rank check by elimination with partial pivoting
    {
        DenseMatrix a = ctrb;
        double scale = std::max(a.max_abs(), 1e-30);
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t piv = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
            if (std::abs(a(piv, k)) < 1e-10 * scale)
                throw std::invalid_argument("canonical_form: pair is not controllable");
            if (piv != k)
                for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            for (std::size_t i = k + 1; i < n; ++i) {
                double f = a(i, k) / a(k, k);
                for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
            }
        }
    }

    // q = last row of ctrb^{-1}; rows of the companion transform are
    // q, qF, ..., qF^{n-1}, then reversed so the input block lands on top
    std::vector<double> en(n, 0.0);
    en[n - 1] = 1.0;
    std::vector<double> q = solve_linear(ctrb.transpose(), en);
    DenseMatrix T(n, n);
    std::vector<double> row = q;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) T(n - 1 - i, j) = row[j];
        row = F.transpose().apply(row);
    }

    // T^{-1} column by column
    DenseMatrix Tinv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> e(n, 0.0);
        e[j] = 1.0;
        std::vector<double> c = solve_linear(T, e);
        for (std::size_t i = 0; i < n; ++i) Tinv(i, j) = c[i];
    }

    CanonicalForm out;
    out.T = T;
    out.Fc = T * F * Tinv;
    out.Gc = T * G;
    // snap entries the transform makes structurally exact
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(out.Fc(i, j)) < 1e-10) out.Fc(i, j) = 0.0;
            if (std::abs(out.Fc(i, j) - 1.0) < 1e-10) out.Fc(i, j) = 1.0;
        }
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(out.Gc(i, 0)) < 1e-10) out.Gc(i, 0) = 0.0;
    return out;
}

// Chain of nested half-planes for a linear pair and hyperplane a'x - c >= 0.
// With direct actuation the plain barrier suffices; otherwise the chain depth
// is the first power of F that routes the input onto a. Gains supply the
// nested coefficients k_0..k_{r-2}; an optional extra entry sets the top-level
// class-K gain, which defaults to one.
inline HocbfChain halfplane_hocbf(const DenseMatrix& F, const DenseMatrix& G,
                                  const std::vector<double>& a, double c,
                                  const std::vector<double>& gains = {}) {
    const std::size_t n = F.rows;
    if (a.size() != n) throw DimensionError("halfplane_hocbf: normal dimension mismatch");
    double amax = 0.0;
    for (double v : a) amax = std::max(amax, std::abs(v));
    if (amax == 0.0) throw std::invalid_argument("halfplane_hocbf: zero normal");
    for (double k : gains)
        if (!(k > 0.0)) throw std::invalid_argument("halfplane_hocbf: gains must be positive");

    const double tol = 1e-12 * std::max(1.0, F.max_abs()) * std::max(1.0, G.max_abs()) * amax;
    int r = 0;
    std::vector<double> row = a;  // a' F^{s-1}
    for (std::size_t s = 1; s <= n; ++s) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += row[i] * G(i, 0);
        if (std::abs(dot) > tol) {
            r = static_cast<int>(s);
            break;
        }
        row = F.transpose().apply(row);
    }
    if (r == 0)
        throw std::invalid_argument("halfplane_hocbf: input never reaches the normal direction");
    if (static_cast<int>(gains.size()) < r - 1)
        throw std::invalid_argument("halfplane_hocbf: need at least " + std::to_string(r - 1) +
                                    " gains");

    ControlSystem sys = detail::linear_control_system(F, G);
    Polynomial base(static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i)
        base += Polynomial::variable(static_cast<int>(n), static_cast<int>(i) + 1) * a[i];
    base -= Polynomial::constant(static_cast<int>(n), c);

    std::vector<double> chain_gains(gains.begin(), gains.begin() + (r - 1));
    chain_gains.push_back(static_cast<int>(gains.size()) >= r ? gains[static_cast<std::size_t>(r - 1)]
                                                              : 1.0);
    return hocbf_chain(base, sys, std::move(chain_gains));
}

namespace detail {

struct DescentMults {
    Polynomial alpha, eta;
    std::vector<Polynomial> theta;          // one per input channel
    std::vector<Polynomial> beta, w;        // one pair per region constraint
    std::vector<Polynomial> gamma;          // chain variant only
    double rho = 0.0;
};

// Once the relaxation level can go negative the descent objective is
// unbounded below (scaling every multiplier keeps the identity feasible),
// which degenerates the solve. Flooring rho at -1 keeps the program bounded
// without affecting the only question that matters, whether rho reaches zero.
inline void floor_relaxation(SosProgram& prog, int rho) {
    int tau = prog.add_sos(monomial_basis(prog.n, 0));
    SosConstraint c;
    c.label = "rho floor";
    c.terms.push_back({Polynomial::constant(prog.n, 1.0), rho, 0});
    c.terms.push_back({Polynomial::constant(prog.n, -1.0), tau, 0});
    c.constant = Polynomial::constant(prog.n, 1.0);
    prog.add_identity(std::move(c));
}

}  // namespace detail

// Alternating descent on the relaxed barrier condition: odd steps optimize
// the multipliers for the current candidate, even steps re-optimize the
// candidate under frozen multipliers. The relaxation level rho is the shared
// objective; the run stops when it reaches zero, stops improving, or the
// budget runs out. A non-positive level is only reported as Verified after
// independent re-verification.
inline DescentTrace descent_cbf(const ControlSystem& sys, const SafeRegion& region,
                                const DescentParams& params) {
    const int n = sys.n;
    if (params.initial.vars() != n) throw DimensionError("descent_cbf: candidate dimension mismatch");
    if (params.initial.is_zero()) throw std::invalid_argument("descent_cbf: initial candidate required");
    if (params.max_outer < 1 || !(params.epsilon > 0.0))
        throw std::invalid_argument("descent_cbf: bad iteration parameters");
    if (region.constraints.empty()) throw std::invalid_argument("descent_cbf: empty region");

    const VerifyOptions& vo = params.verify;
    const int dm = detail::round_even(params.multiplier_degree);
    const int bdeg = params.initial.degree();

    DescentTrace trace;
    Polynomial b = params.initial;

    // fixed for the whole run so the relaxation levels stay comparable
    const Polynomial lambda = [&] {
        int deg = std::max(lie(b, sys.f).degree(), bdeg);
        for (int j = 0; j < sys.m; ++j)
            deg = std::max(deg, lie(b, sys.g.column(static_cast<std::size_t>(j))).degree());
        return detail::dominating_sos(n, params.lambda_degree > 0 ? params.lambda_degree : deg + dm);
    }();

    auto multiplier_step = [&](const Polynomial& cand) -> std::optional<detail::DescentMults> {
        Polynomial lf = lie(cand, sys.f);
        std::vector<Polynomial> lg;
        for (int j = 0; j < sys.m; ++j)
            lg.push_back(lie(cand, sys.g.column(static_cast<std::size_t>(j))));
        double margin = 0.0;
        Polynomial ceps = shrink_poly(cand, vo.shrink, &margin);

        SosProgram prog(n);
        int rho = prog.add_free_scalar();
        int alpha = prog.add_sos(monomial_basis(n, dm / 2));
        std::vector<int> theta;
        for (int j = 0; j < sys.m; ++j) theta.push_back(prog.add_free(monomial_basis(n, dm)));
        int eta = prog.add_free(monomial_basis(n, dm));

        int d1 = lambda.degree();
        d1 = std::max(d1, dm + std::max({lf.degree(), cand.degree()}));
        for (const auto& p : lg) d1 = std::max(d1, dm + p.degree());
        SosConstraint c1;
        c1.label = "descent-boundary";
        c1.terms.push_back({lf, alpha, 0});
        for (int j = 0; j < sys.m; ++j) c1.terms.push_back({lg[static_cast<std::size_t>(j)], theta[static_cast<std::size_t>(j)], 0});
        c1.terms.push_back({cand, eta, 0});
        c1.terms.push_back({lambda, rho, 0});
        c1.terms.push_back({Polynomial::constant(n, -1.0), prog.add_sos(monomial_basis(n, detail::round_even(d1) / 2)), 0});
        c1.constant = Polynomial::constant(n, -1.0);
        prog.add_identity(std::move(c1));
        detail::floor_relaxation(prog, rho);
        prog.minimize_scalar(rho);

        // the boundary and containment rows share no variables, so solve them
        // separately; their multiplier scales differ by orders of magnitude
        // and a joint solve tends to stall
        auto cert = detail::solve_feasible(prune_sos_bases(std::move(prog)), vo.sdp_tol,
                                           vo.sdp_max_iters, vo.cert_tol);
        if (!cert) return std::nullopt;
        detail::DescentMults m;
        m.rho = cert->objective_value;
        m.alpha = cert->assignment[static_cast<std::size_t>(alpha)];
        for (int t : theta) m.theta.push_back(cert->assignment[static_cast<std::size_t>(t)]);
        m.eta = cert->assignment[static_cast<std::size_t>(eta)];

        SosProgram prog2(n);
        std::vector<int> beta, wv;
        for (const auto& h : region.constraints) {
            int d2 = detail::round_even(std::max(dm + ceps.degree(), dm + h.degree()));
            SosConstraint c2;
            c2.label = "descent-containment";
            int bj = prog2.add_sos(monomial_basis(n, dm / 2));
            int wj = prog2.add_free(monomial_basis(n, std::max(0, d2 - h.degree())));
            beta.push_back(bj);
            wv.push_back(wj);
            c2.terms.push_back({-ceps, bj, 0});
            c2.terms.push_back({h, wj, 0});
            c2.terms.push_back({Polynomial::constant(n, -1.0), prog2.add_sos(monomial_basis(n, d2 / 2)), 0});
            c2.constant = Polynomial::constant(n, -1.0);
            prog2.add_identity(std::move(c2));
        }
        auto cert2 = detail::solve_feasible(prune_sos_bases(std::move(prog2)), vo.sdp_tol,
                                            vo.sdp_max_iters, vo.cert_tol);
        if (!cert2) return std::nullopt;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            m.beta.push_back(cert2->assignment[static_cast<std::size_t>(beta[j])]);
            m.w.push_back(cert2->assignment[static_cast<std::size_t>(wv[j])]);
        }
        return m;
    };

    auto candidate_step =
        [&](const Polynomial& cand,
            const detail::DescentMults& m) -> std::optional<std::pair<double, Polynomial>> {
        Polynomial lf = lie(cand, sys.f);
        double margin = vo.shrink * cand.max_abs_coefficient();

        SosProgram prog(n);
        int rho = prog.add_free_scalar();
        int bvar = prog.add_free(monomial_basis(n, bdeg));

        // the candidate enters the boundary row through its gradient; fold
        // the drift and input-channel contributions into per-derivative terms
        SosConstraint c1;
        c1.label = "descent-boundary";
        for (int j = 1; j <= n; ++j) {
            Polynomial coeff = m.alpha * sys.f.entries[static_cast<std::size_t>(j - 1)];
            for (int l = 0; l < sys.m; ++l)
                coeff += m.theta[static_cast<std::size_t>(l)] *
                         sys.g.at(static_cast<std::size_t>(j - 1), static_cast<std::size_t>(l));
            if (!coeff.is_zero()) c1.terms.push_back({coeff, bvar, j});
        }
        c1.terms.push_back({m.eta, bvar, 0});
        c1.terms.push_back({lambda, rho, 0});
        int d1 = lambda.degree();
        d1 = std::max(d1, std::max({m.alpha.degree(), m.eta.degree()}) + std::max(lf.degree(), bdeg) + 2);
        c1.terms.push_back({Polynomial::constant(n, -1.0), prog.add_sos(monomial_basis(n, detail::round_even(d1) / 2)), 0});
        c1.constant = Polynomial::constant(n, -1.0);
        prog.add_identity(std::move(c1));

        for (std::size_t j = 0; j < region.constraints.size(); ++j) {
            const Polynomial& h = region.constraints[j];
            SosConstraint c2;
            c2.label = "descent-containment";
            c2.terms.push_back({-m.beta[j], bvar, 0});
            int d2 = detail::round_even(std::max(m.beta[j].degree() + bdeg, m.w[j].degree() + h.degree()));
            c2.terms.push_back({Polynomial::constant(n, -1.0), prog.add_sos(monomial_basis(n, d2 / 2)), 0});
            c2.constant = m.w[j] * h - Polynomial::constant(n, 1.0) + m.beta[j] * margin;
            prog.add_identity(std::move(c2));
        }
        detail::floor_relaxation(prog, rho);
        prog.minimize_scalar(rho);

        auto cert = detail::solve_feasible(prune_sos_bases(std::move(prog)), vo.sdp_tol,
                                           vo.sdp_max_iters, vo.cert_tol);
        if (!cert) return std::nullopt;
        return std::make_pair(cert->objective_value, cert->assignment[static_cast<std::size_t>(bvar)]);
    };

    double best = std::numeric_limits<double>::infinity();
    std::optional<detail::DescentMults> prev_mults;

    for (int k = 1; k <= params.max_outer; ++k) {
        auto m = multiplier_step(b);
        if (!m && prev_mults) {
            // previous multipliers are still feasible for the current candidate
            m = prev_mults;
            m->rho = best;
        }
        if (!m) {
            trace.candidate = b;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "multiplier step stalled";
            return trace;
        }
        double rho_k = std::min(m->rho, best);  // best feasible point seen so far
        trace.rho.push_back(rho_k);
        if (rho_k <= vo.cert_tol) {  // zero up to solver accuracy; re-verification decides
            trace.candidate = b;
            trace.verdict = verify_cbf(sys, b, vo);
            return trace;
        }
        if (k > 1 && std::abs(rho_k - best) < params.epsilon) {
            trace.candidate = b;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "descent stalled above zero";
            return trace;
        }

        auto cs = candidate_step(b, *m);
        double rho_p = cs ? cs->first : rho_k;
        Polynomial b_new = cs ? cs->second : b;
        if (rho_p >= rho_k) {  // ties keep the earlier candidate
            rho_p = rho_k;
            b_new = b;
        }
        trace.rho.push_back(rho_p);
        if (rho_p <= vo.cert_tol) {
            trace.candidate = b_new;
            trace.verdict = verify_cbf(sys, b_new, vo);
            return trace;
        }
        if (std::abs(rho_k - rho_p) < params.epsilon) {
            trace.candidate = b;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "descent stalled above zero";
            return trace;
        }
        b = b_new;
        best = rho_p;
        prev_mults = std::move(m);
    }
    trace.candidate = b;
    trace.verdict.outcome = Outcome::Unknown;
    trace.verdict.detail = "iteration budget exhausted";
    return trace;
}

// Chain variant of the alternating descent. Candidates stay in the
// fixed-gain recursion family: the even step optimizes the base function with
// the chain levels tied to it by exact identities and the input-channel rows
// of the lower levels pinned to zero, so every iterate is a structurally
// valid chain and the per-level invariance conditions hold by construction.
inline DescentTrace descent_hocbf(const ControlSystem& sys, const SafeRegion& region,
                                  const HocbfChain& chain0, const DescentParams& params) {
    const int n = sys.n;
    const int r = chain0.order();
    if (r < 1) throw std::invalid_argument("descent_hocbf: empty chain");
    if (chain0.base.vars() != n) throw DimensionError("descent_hocbf: chain dimension mismatch");
    if (params.max_outer < 1 || !(params.epsilon > 0.0))
        throw std::invalid_argument("descent_hocbf: bad iteration parameters");
    if (region.constraints.empty()) throw std::invalid_argument("descent_hocbf: empty region");
    auto rd = relative_degree(chain0.base, sys, r + 2);
    if (!rd || *rd != r)
        throw std::invalid_argument("descent_hocbf: chain order does not match the relative degree");

    const VerifyOptions& vo = params.verify;
    const int dm = detail::round_even(params.multiplier_degree);
    const int bdeg = chain0.base.degree();

    DescentTrace trace;
    HocbfChain chain = chain0;

    // fixed for the whole run so the relaxation levels stay comparable
    const Polynomial lambda = [&] {
        int deg = 0;
        for (const auto& p : chain0.psi) deg = std::max(deg, p.degree());
        for (int j = 0; j < sys.m; ++j)
            deg = std::max(deg, lie(chain0.psi[static_cast<std::size_t>(r - 1)],
                                    sys.g.column(static_cast<std::size_t>(j)))
                                    .degree());
        return detail::dominating_sos(n, params.lambda_degree > 0 ? params.lambda_degree : deg + dm);
    }();

    auto multiplier_step = [&](const HocbfChain& ch) -> std::optional<detail::DescentMults> {
        const Polynomial& top = ch.psi[static_cast<std::size_t>(r)];
        std::vector<Polynomial> input_row;
        for (int j = 0; j < sys.m; ++j)
            input_row.push_back(lie(ch.psi[static_cast<std::size_t>(r - 1)],
                                    sys.g.column(static_cast<std::size_t>(j))));
        int deg = top.degree();
        for (const auto& p : input_row) deg = std::max(deg, p.degree());
        for (const auto& p : ch.psi) deg = std::max(deg, p.degree());
        HocbfChain shr = hocbf_chain(shrink_poly(ch.base, vo.shrink), sys, ch.gains);

        SosProgram prog(n);
        int rho = prog.add_free_scalar();
        int alpha = prog.add_sos(monomial_basis(n, dm / 2));
        std::vector<int> theta, gamma;
        for (int j = 0; j < sys.m; ++j) theta.push_back(prog.add_free(monomial_basis(n, dm)));
        for (int i = 0; i < r; ++i) gamma.push_back(prog.add_sos(monomial_basis(n, dm / 2)));

        int d1 = lambda.degree();
        d1 = std::max(d1, dm + deg);
        SosConstraint c1;
        c1.label = "descent-chain-top";
        c1.terms.push_back({top, alpha, 0});
        for (int j = 0; j < sys.m; ++j)
            c1.terms.push_back({input_row[static_cast<std::size_t>(j)], theta[static_cast<std::size_t>(j)], 0});
        for (int i = 0; i < r; ++i)
            c1.terms.push_back({-ch.psi[static_cast<std::size_t>(i)], gamma[static_cast<std::size_t>(i)], 0});
        c1.terms.push_back({lambda, rho, 0});
        c1.terms.push_back({Polynomial::constant(n, -1.0), prog.add_sos(monomial_basis(n, detail::round_even(d1) / 2)), 0});
        c1.constant = Polynomial::constant(n, -1.0);
        prog.add_identity(std::move(c1));
        detail::floor_relaxation(prog, rho);
        prog.minimize_scalar(rho);

        // same split as the scalar variant: the chain and containment rows
        // are variable-disjoint and live at very different multiplier scales
        auto cert = detail::solve_feasible(prune_sos_bases(std::move(prog)), vo.sdp_tol,
                                           vo.sdp_max_iters, vo.cert_tol);
        if (!cert) return std::nullopt;
        detail::DescentMults m;
        m.rho = cert->objective_value;
        m.alpha = cert->assignment[static_cast<std::size_t>(alpha)];
        for (int t : theta) m.theta.push_back(cert->assignment[static_cast<std::size_t>(t)]);
        for (int g : gamma) m.gamma.push_back(cert->assignment[static_cast<std::size_t>(g)]);

        SosProgram prog2(n);
        std::vector<int> beta, wv;
        for (const auto& h : region.constraints) {
            int d2 = dm + h.degree();
            for (const auto& p : shr.psi) d2 = std::max(d2, dm + p.degree());
            d2 = detail::round_even(d2);
            SosConstraint c2;
            c2.label = "descent-chain-containment";
            for (std::size_t i = 0; i < shr.psi.size(); ++i) {
                int bi = prog2.add_sos(monomial_basis(n, dm / 2));
                beta.push_back(bi);
                c2.terms.push_back({-shr.psi[i], bi, 0});
            }
            int wj = prog2.add_free(monomial_basis(n, std::max(0, d2 - h.degree())));
            wv.push_back(wj);
            c2.terms.push_back({h, wj, 0});
            c2.terms.push_back({Polynomial::constant(n, -1.0), prog2.add_sos(monomial_basis(n, d2 / 2)), 0});
            c2.constant = Polynomial::constant(n, -1.0);
            prog2.add_identity(std::move(c2));
        }
        auto cert2 = detail::solve_feasible(prune_sos_bases(std::move(prog2)), vo.sdp_tol,
                                            vo.sdp_max_iters, vo.cert_tol);
        if (!cert2) return std::nullopt;
        for (int bi : beta) m.beta.push_back(cert2->assignment[static_cast<std::size_t>(bi)]);
        for (int wj : wv) m.w.push_back(cert2->assignment[static_cast<std::size_t>(wj)]);
        return m;
    };

    auto candidate_step =
        [&](const HocbfChain& ch,
            const detail::DescentMults& m) -> std::optional<std::pair<double, HocbfChain>> {
        int deg = 0;
        for (const auto& p : ch.psi) deg = std::max(deg, p.degree());
        std::vector<double> margins;
        for (const auto& p : ch.psi) margins.push_back(vo.shrink * p.max_abs_coefficient());

        SosProgram prog(n);
        int rho = prog.add_free_scalar();
        std::vector<int> psi;
        for (std::size_t i = 0; i < ch.psi.size(); ++i)
            psi.push_back(prog.add_free(monomial_basis(n, ch.psi[i].degree())));

        // recursion identities tie every level to the base
        for (int i = 1; i <= r; ++i) {
            SosConstraint rec;
            rec.label = "chain-recursion";
            rec.terms.push_back({Polynomial::constant(n, 1.0), psi[static_cast<std::size_t>(i)], 0});
            for (int j = 1; j <= n; ++j) {
                Polynomial fj = sys.f.entries[static_cast<std::size_t>(j - 1)];
                if (!fj.is_zero()) rec.terms.push_back({-fj, psi[static_cast<std::size_t>(i - 1)], j});
            }
            rec.terms.push_back({Polynomial::constant(n, -ch.gains[static_cast<std::size_t>(i - 1)]),
                                 psi[static_cast<std::size_t>(i - 1)], 0});
            rec.constant = Polynomial(n);
            prog.add_identity(std::move(rec));
        }
        // lower levels must stay unactuated
        for (int i = 0; i <= r - 2; ++i)
            for (int l = 0; l < sys.m; ++l) {
                SosConstraint row;
                row.label = "chain-unactuated";
                for (int j = 1; j <= n; ++j) {
                    Polynomial gj = sys.g.at(static_cast<std::size_t>(j - 1), static_cast<std::size_t>(l));
                    if (!gj.is_zero()) row.terms.push_back({gj, psi[static_cast<std::size_t>(i)], j});
                }
                row.constant = Polynomial(n);
                prog.add_identity(std::move(row));
            }

        SosConstraint c1;
        c1.label = "descent-chain-top";
        c1.terms.push_back({m.alpha, psi[static_cast<std::size_t>(r)], 0});
        for (int j = 1; j <= n; ++j) {
            Polynomial coeff(n);
            for (int l = 0; l < sys.m; ++l)
                coeff += m.theta[static_cast<std::size_t>(l)] *
                         sys.g.at(static_cast<std::size_t>(j - 1), static_cast<std::size_t>(l));
            if (!coeff.is_zero()) c1.terms.push_back({coeff, psi[static_cast<std::size_t>(r - 1)], j});
        }
        for (int i = 0; i < r; ++i)
            c1.terms.push_back({-m.gamma[static_cast<std::size_t>(i)], psi[static_cast<std::size_t>(i)], 0});
        c1.terms.push_back({lambda, rho, 0});
        int mdeg = m.alpha.degree();
        for (const auto& p : m.theta) mdeg = std::max(mdeg, p.degree());
        for (const auto& p : m.gamma) mdeg = std::max(mdeg, p.degree());
        int d1 = std::max(lambda.degree(), mdeg + deg + 2);
        c1.terms.push_back({Polynomial::constant(n, -1.0), prog.add_sos(monomial_basis(n, detail::round_even(d1) / 2)), 0});
        c1.constant = Polynomial::constant(n, -1.0);
        prog.add_identity(std::move(c1));

        std::size_t bidx = 0;
        for (std::size_t j = 0; j < region.constraints.size(); ++j) {
            const Polynomial& h = region.constraints[j];
            SosConstraint c2;
            c2.label = "descent-chain-containment";
            Polynomial cst = m.w[j] * h - Polynomial::constant(n, 1.0);
            int d2 = m.w[j].degree() + h.degree();
            for (std::size_t i = 0; i < ch.psi.size(); ++i, ++bidx) {
                c2.terms.push_back({-m.beta[bidx], psi[i], 0});
                cst += m.beta[bidx] * margins[i];
                d2 = std::max(d2, m.beta[bidx].degree() + ch.psi[i].degree());
            }
            c2.terms.push_back({Polynomial::constant(n, -1.0),
                                prog.add_sos(monomial_basis(n, detail::round_even(d2) / 2)), 0});
            c2.constant = cst;
            prog.add_identity(std::move(c2));
        }
        detail::floor_relaxation(prog, rho);
        prog.minimize_scalar(rho);

        auto cert = detail::solve_feasible(prune_sos_bases(std::move(prog)), vo.sdp_tol,
                                           vo.sdp_max_iters, vo.cert_tol);
        if (!cert) return std::nullopt;
        Polynomial base = cert->assignment[static_cast<std::size_t>(psi[0])];
        auto rdn = relative_degree(base, sys, r + 2);
        if (!rdn || *rdn != r) return std::nullopt;  // candidate left the family
        return std::make_pair(cert->objective_value, hocbf_chain(base, sys, ch.gains));
    };

    double best = std::numeric_limits<double>::infinity();
    std::optional<detail::DescentMults> prev_mults;

    for (int k = 1; k <= params.max_outer; ++k) {
        auto m = multiplier_step(chain);
        if (!m && prev_mults) {
            m = prev_mults;
            m->rho = best;
        }
        if (!m) {
            trace.chain = chain;
            trace.candidate = chain.base;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "multiplier step stalled";
            return trace;
        }
        double rho_k = std::min(m->rho, best);
        trace.rho.push_back(rho_k);
        if (rho_k <= vo.cert_tol) {  // zero up to solver accuracy; re-verification decides
            trace.chain = chain;
            trace.candidate = chain.base;
            trace.verdict = verify_hocbf(sys, chain, region, vo);
            return trace;
        }
        if (k > 1 && std::abs(rho_k - best) < params.epsilon) {
            trace.chain = chain;
            trace.candidate = chain.base;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "descent stalled above zero";
            return trace;
        }

        auto cs = candidate_step(chain, *m);
        double rho_p = cs ? cs->first : rho_k;
        HocbfChain cnew = cs ? cs->second : chain;
        if (rho_p >= rho_k) {
            rho_p = rho_k;
            cnew = chain;
        }
        trace.rho.push_back(rho_p);
        if (rho_p <= vo.cert_tol) {
            trace.chain = cnew;
            trace.candidate = cnew.base;
            trace.verdict = verify_hocbf(sys, cnew, region, vo);
            return trace;
        }
        if (std::abs(rho_k - rho_p) < params.epsilon) {
            trace.chain = chain;
            trace.candidate = chain.base;
            trace.verdict.outcome = Outcome::Unknown;
            trace.verdict.detail = "descent stalled above zero";
            return trace;
        }
        chain = std::move(cnew);
        best = rho_p;
        prev_mults = std::move(m);
    }
    trace.chain = chain;
    trace.candidate = chain.base;
    trace.verdict.outcome = Outcome::Unknown;
    trace.verdict.detail = "iteration budget exhausted";
    return trace;
}

}  // namespace cbfsos
