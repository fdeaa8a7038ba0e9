#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbfsos/poly.hpp"
#include "cbfsos/sos.hpp"

namespace cbfsos {

// conjunction of polynomial inequalities h_i(x) >= 0
struct SafeRegion {
    std::vector<Polynomial> constraints;
};

struct VerifyOptions {
    // (multiplier degree, power on the strict-inequality generator)
    std::vector<std::pair<int, int>> schedule{{2, 1}, {4, 1}, {2, 2}, {4, 2}};
    double shrink = 1e-3;
    double sdp_tol = 1e-8;
    int sdp_max_iters = 200;
    double cert_tol = 1e-6;
    std::vector<double> box_lo, box_hi;  // sampling box, default [-2,2]^n
    int grid_points = 41;
    int refine_candidates = 50;
    int refine_steps = 100;
    double falsify_tol = 1e-6;
    bool check_chain = false;
    unsigned seed = 0;
};

enum class Outcome { Verified, Falsified, Unknown };

struct Verdict {
    Outcome outcome = Outcome::Unknown;
    std::vector<Certificate> certificates;
    std::vector<double> witness;
    std::string detail;
    double shrink_applied = 0.0;
};

inline std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::Verified: return "Verified";
        case Outcome::Falsified: return "Falsified";
        default: return "Unknown";
    }
}

// base function with linear gains; psi[i] holds the drift-only recursion
// psi_i = lie(psi_{i-1}, f) + kappa_i psi_{i-1}, so psi[r] is the drift part
// of the top-level derivative
struct HocbfChain {
    Polynomial base;
    std::vector<double> gains;  // kappa_1 .. kappa_r, all positive
    std::vector<Polynomial> psi;

    int order() const { return static_cast<int>(gains.size()); }
};

inline HocbfChain hocbf_chain(const Polynomial& b, const ControlSystem& sys,
                              std::vector<double> gains) {
    if (b.vars() != sys.n) throw DimensionError("hocbf_chain: variable count mismatch");
    for (double k : gains)
        if (!(k > 0.0)) throw std::invalid_argument("hocbf_chain: gains must be positive");
    HocbfChain chain;
    chain.base = b;
    chain.gains = std::move(gains);
    chain.psi.push_back(b);
    for (double k : chain.gains) chain.psi.push_back(lie(chain.psi.back(), sys.f) + chain.psi.back() * k);
    return chain;
}

inline Polynomial shrink_poly(const Polynomial& b, double eps, double* applied = nullptr) {
    double s = eps * b.max_abs_coefficient();
    if (applied) *applied = s;
    return b - Polynomial::constant(b.vars(), s);
}

namespace detail {

inline int round_even(int d) { return d % 2 ? d + 1 : d; }

// Certifies emptiness of {x : p = 0 for p in ideal, c >= 0 for c in cone,
// strict < 0} via the identity
//   sum(free_p * p) + a0 + sum(sos_c * c) - a1 * strict
//     + [strict^(2*power)] + [1 if plus_one] == 0
// with a0, a1 and the cone multipliers SOS.
inline SosProgram emptiness_program(int n, const std::vector<Polynomial>& ideal,
                                    const std::vector<Polynomial>& cone,
                                    const Polynomial* strict, int power, bool plus_one, int d) {
    int D = d;
    for (const auto& p : ideal) D = std::max(D, p.degree() + d);
    for (const auto& c : cone) D = std::max(D, c.degree() + d);
    if (strict) D = std::max({D, strict->degree() + d, 2 * power * strict->degree()});
    D = round_even(D);

    SosProgram prog(n);
    SosConstraint con;
    con.label = "emptiness";
    int a0 = prog.add_sos(monomial_basis(n, D / 2));
    con.terms.push_back({Polynomial::constant(n, 1.0), a0, 0});
    for (const auto& p : ideal) {
        if (p.is_zero()) continue;
        int v = prog.add_free(monomial_basis(n, std::max(0, D - p.degree())));
        con.terms.push_back({p, v, 0});
    }
    for (const auto& c : cone) {
        if (c.is_zero()) continue;
        int v = prog.add_sos(monomial_basis(n, std::max(0, D - c.degree()) / 2));
        con.terms.push_back({c, v, 0});
    }
    if (strict && !strict->is_zero()) {
        int a1 = prog.add_sos(monomial_basis(n, std::max(0, D - strict->degree()) / 2));
        con.terms.push_back({-*strict, a1, 0});
    }
    Polynomial cst(n);
    if (plus_one) cst += Polynomial::constant(n, 1.0);
    if (strict && power > 0) cst += strict->pow(2 * power);
    con.constant = cst;
    prog.add_identity(std::move(con));
    // degree-escalated bases routinely carry forced-zero Gram diagonals that
    // empty the primal interior; prune them away before solving
    return prune_sos_bases(std::move(prog));
}

inline std::optional<Certificate> solve_emptiness(const SosProgram& prog,
                                                  const VerifyOptions& opts,
                                                  bool* stalled = nullptr) {
    SosSolveResult res = solve_sos(prog, opts.sdp_tol, opts.sdp_max_iters);
    if (res.certificate && check_certificate(*res.certificate, opts.cert_tol))
        return res.certificate;
    if (stalled && res.status == SdpStatus::Stalled) *stalled = true;
    return std::nullopt;
}

inline void sampling_box(const VerifyOptions& opts, int n, std::vector<double>& lo,
                         std::vector<double>& hi) {
    lo = opts.box_lo;
    hi = opts.box_hi;
    if (lo.empty() && hi.empty()) {
        lo.assign(n, -2.0);
        hi.assign(n, 2.0);
    }
    if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n)
        throw DimensionError("sampling box dimension mismatch");
}

// Grid-seeded Levenberg-Marquardt on a residual vector (equalities plus
// hinge terms), clamped to the box; deterministic.
inline std::optional<std::vector<double>> penalty_search(
    int n, const std::function<std::vector<double>(const std::vector<double>&)>& residuals,
    const std::function<bool(const std::vector<double>&)>& accept, const VerifyOptions& opts) {
    std::vector<double> lo, hi;
    sampling_box(opts, n, lo, hi);

    auto F = [&](const std::vector<double>& x) {
        double v = 0;
        for (double r : residuals(x)) v += r * r;
        return v;
    };

    int pts = opts.grid_points;
    double total = std::pow(static_cast<double>(pts), n);
    while (total > 2e5 && pts > 3) {
        pts -= 2;
        total = std::pow(static_cast<double>(pts), n);
    }

    std::vector<std::pair<double, std::vector<double>>> seeds;
    std::vector<int> idx(n, 0);
    std::vector<double> x(n);
    while (true) {
        for (int k = 0; k < n; ++k)
            x[k] = pts == 1 ? 0.5 * (lo[k] + hi[k]) : lo[k] + (hi[k] - lo[k]) * idx[k] / (pts - 1);
        if (accept(x)) return x;
        seeds.emplace_back(F(x), x);
        int k = 0;
        while (k < n && ++idx[k] == pts) idx[k++] = 0;
        if (k == n) break;
    }
    std::size_t keep = std::min<std::size_t>(seeds.size(), static_cast<std::size_t>(opts.refine_candidates));
    std::partial_sort(seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(keep), seeds.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

    auto clamp = [&](std::vector<double>& p) {
        for (int k = 0; k < n; ++k) p[k] = std::min(hi[k], std::max(lo[k], p[k]));
    };
    for (std::size_t s = 0; s < keep; ++s) {
        std::vector<double> p = seeds[s].second;
        double fp = seeds[s].first;
        double lambda = 1e-3;
        for (int it = 0; it < opts.refine_steps; ++it) {
            std::vector<double> r = residuals(p);
            const std::size_t mres = r.size();
            DenseMatrix jac(mres, static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k) {
                double h = 1e-7 * (1.0 + std::abs(p[k]));
                std::vector<double> a = p, c = p;
                a[k] += h;
                c[k] -= h;
                std::vector<double> ra = residuals(a), rc = residuals(c);
                for (std::size_t i = 0; i < mres; ++i)
                    jac(i, static_cast<std::size_t>(k)) = (ra[i] - rc[i]) / (2 * h);
            }
            DenseMatrix jtj(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
            std::vector<double> jtr(static_cast<std::size_t>(n), 0.0);
            for (int a_i = 0; a_i < n; ++a_i) {
                for (int b_i = 0; b_i < n; ++b_i) {
                    double v = 0;
                    for (std::size_t i = 0; i < mres; ++i)
                        v += jac(i, static_cast<std::size_t>(a_i)) * jac(i, static_cast<std::size_t>(b_i));
                    jtj(static_cast<std::size_t>(a_i), static_cast<std::size_t>(b_i)) = v;
                }
                for (std::size_t i = 0; i < mres; ++i)
                    jtr[static_cast<std::size_t>(a_i)] += jac(i, static_cast<std::size_t>(a_i)) * r[i];
            }
            bool moved = false;
            for (int attempt = 0; attempt < 8 && !moved; ++attempt) {
                DenseMatrix damped = jtj;
                for (int k = 0; k < n; ++k) {
                    std::size_t kk = static_cast<std::size_t>(k);
                    damped(kk, kk) += lambda * (1.0 + jtj(kk, kk));
                }
                std::vector<double> rhs(static_cast<std::size_t>(n));
                for (int k = 0; k < n; ++k) rhs[static_cast<std::size_t>(k)] = -jtr[static_cast<std::size_t>(k)];
                std::vector<double> d;
                try {
                    d = solve_linear(damped, rhs);
                } catch (const SingularMatrixError&) {
                    lambda *= 10;
                    continue;
                }
                std::vector<double> q = p;
                for (int k = 0; k < n; ++k) q[static_cast<std::size_t>(k)] += d[static_cast<std::size_t>(k)];
                clamp(q);
                double fq = F(q);
                if (fq < fp) {
                    p = std::move(q);
                    fp = fq;
                    lambda = std::max(lambda / 3, 1e-12);
                    moved = true;
                    if (accept(p)) return p;
                } else {
                    lambda *= 10;
                }
            }
            if (!moved) break;
        }
        if (accept(p)) return p;
    }
    return std::nullopt;
}


}  // namespace detail

// Numeric counterexample oracle for the boundary condition: looks for x with
// b(x) = 0, every input-channel derivative of b zero, drift derivative
// strictly negative, inside the region if one is given. A miss proves nothing.
inline std::optional<std::vector<double>> falsify(const ControlSystem& sys, const Polynomial& b,
                                                  const SafeRegion& region,
                                                  const VerifyOptions& opts = {}) {
    if (b.vars() != sys.n) throw DimensionError("falsify: variable count mismatch");
    const int n = sys.n;
    Polynomial q = lie(b, sys.f);
    std::vector<Polynomial> p;
    for (int j = 0; j < sys.m; ++j) p.push_back(lie(b, sys.g.column(static_cast<std::size_t>(j))));
    const double tol = opts.falsify_tol, slack = 2 * tol;

    auto residuals = [&](const std::vector<double>& x) {
        std::vector<double> r{b.evaluate(x)};
        for (const auto& pj : p) r.push_back(pj.evaluate(x));
        r.push_back(std::max(0.0, q.evaluate(x) + slack));
        for (const auto& h : region.constraints) r.push_back(std::max(0.0, -h.evaluate(x)));
        return r;
    };
    auto accept = [&](const std::vector<double>& x) {
        if (std::abs(b.evaluate(x)) > tol) return false;
        for (const auto& pj : p)
            if (std::abs(pj.evaluate(x)) > tol) return false;
        if (q.evaluate(x) > -tol) return false;
        for (const auto& h : region.constraints)
            if (h.evaluate(x) < -tol) return false;
        return true;
    };
    return detail::penalty_search(n, residuals, accept, opts);
}

// barrier condition for a single candidate b
inline Verdict verify_cbf(const ControlSystem& sys, const Polynomial& b,
                          const VerifyOptions& opts = {}) {
    if (b.vars() != sys.n) throw DimensionError("verify_cbf: variable count mismatch");
    Verdict v;
    Polynomial q = lie(b, sys.f);
    if (q.is_zero()) {
        v.outcome = Outcome::Verified;
        v.detail = "drift derivative identically zero; nothing to counteract";
        return v;
    }
    std::vector<Polynomial> ideal{b};
    for (int j = 0; j < sys.m; ++j) ideal.push_back(lie(b, sys.g.column(static_cast<std::size_t>(j))));
    bool stalled = false;
    for (auto [d, r] : opts.schedule) {
        SosProgram prog = detail::emptiness_program(sys.n, ideal, {}, &q, r, false, d);
        if (auto cert = detail::solve_emptiness(prog, opts, &stalled)) {
            v.outcome = Outcome::Verified;
            v.certificates.push_back(std::move(*cert));
            v.detail = "boundary condition certified";
            return v;
        }
    }
    if (auto w = falsify(sys, b, SafeRegion{}, opts)) {
        v.outcome = Outcome::Falsified;
        v.witness = std::move(*w);
        v.detail = "boundary point with uncontrollable decrease";
        return v;
    }
    v.detail = stalled ? "solver stalled" : "degree budget exhausted";
    return v;
}

// containment of the intersection {b_i >= 0} in the region: for each h_j a
// certificate that {all b_i >= 0, h_j = 0} is empty; b's are shrunk by a small
// margin (recorded) so tangent configurations remain certifiable
inline Verdict verify_containment(const std::vector<Polynomial>& b_set, const SafeRegion& region,
                                  const VerifyOptions& opts = {}) {
    if (b_set.empty()) throw std::invalid_argument("verify_containment: empty barrier list");
    if (region.constraints.empty())
        throw std::invalid_argument("verify_containment: empty region");
    const int n = b_set.front().vars();
    Verdict v;
    std::vector<Polynomial> shrunk;
    for (const auto& b : b_set) {
        double applied = 0.0;
        shrunk.push_back(shrink_poly(b, opts.shrink, &applied));
        v.shrink_applied = std::max(v.shrink_applied, applied);
    }
    std::vector<int> degrees;
    for (auto [d, r] : opts.schedule)
        if (std::find(degrees.begin(), degrees.end(), d) == degrees.end()) degrees.push_back(d);

    bool stalled = false;
    std::vector<Certificate> certs;
    bool all_ok = true;
    for (const auto& h : region.constraints) {
        std::optional<Certificate> got;
        for (int d : degrees) {
            SosProgram prog = detail::emptiness_program(n, {h}, shrunk, nullptr, 0, true, d);
            got = detail::solve_emptiness(prog, opts, &stalled);
            if (got) break;
        }
        if (!got) {
            all_ok = false;
            break;
        }
        certs.push_back(std::move(*got));
    }
    if (all_ok) {
        v.outcome = Outcome::Verified;
        v.certificates = std::move(certs);
        v.detail = "containment certified";
        return v;
    }
    // witness: all shrunk b_i nonnegative while some h_j vanishes
    const double tol = opts.falsify_tol;
    for (std::size_t j = 0; j < region.constraints.size(); ++j) {
        const Polynomial& h = region.constraints[j];
        auto residuals = [&](const std::vector<double>& x) {
            std::vector<double> r{h.evaluate(x)};
            for (const auto& b : shrunk) r.push_back(std::max(0.0, -b.evaluate(x)));
            return r;
        };
        auto accept = [&](const std::vector<double>& x) {
            if (std::abs(h.evaluate(x)) > tol) return false;
            for (const auto& b : shrunk)
                if (b.evaluate(x) < -tol) return false;
            return true;
        };
        if (auto w = detail::penalty_search(n, residuals, accept, opts)) {
            v.outcome = Outcome::Falsified;
            v.witness = std::move(*w);
            v.detail = "region boundary " + std::to_string(j + 1) + " reachable from the candidate set";
            return v;
        }
    }
    v.outcome = Outcome::Unknown;
    v.detail = stalled ? "solver stalled" : "degree budget exhausted";
    return v;
}

// higher-order chain: certify that on the intersection of the sublevel sets
// the top-level condition is controllable, and that the intersection stays
// inside the region
inline Verdict verify_hocbf(const ControlSystem& sys, const HocbfChain& chain,
                            const SafeRegion& region, const VerifyOptions& opts = {}) {
    const int r = chain.order();
    if (r < 1) throw std::invalid_argument("verify_hocbf: empty chain");
    auto rd = relative_degree(chain.base, sys, r + 2);
    if (!rd || *rd != r)
        throw std::invalid_argument("verify_hocbf: chain order does not match the relative degree");
    Verdict v;
    const int n = sys.n;
    const Polynomial& top = chain.psi[static_cast<std::size_t>(r)];  // drift part of the top derivative
    std::vector<Polynomial> input_row;
    for (int j = 0; j < sys.m; ++j)
        input_row.push_back(
            lie(chain.psi[static_cast<std::size_t>(r - 1)], sys.g.column(static_cast<std::size_t>(j))));
    std::vector<Polynomial> cone(chain.psi.begin(), chain.psi.end() - 1);

    bool stalled = false;
    std::optional<Certificate> cond_cert;
    for (auto [d, s] : opts.schedule) {
        SosProgram prog = detail::emptiness_program(n, input_row, cone, &top, s, false, d);
        cond_cert = detail::solve_emptiness(prog, opts, &stalled);
        if (cond_cert) break;
    }
    if (!cond_cert) {
        // look for a state where the whole chain is nonnegative, the input
        // row vanishes and the drift pushes the top level down
        const double tol = opts.falsify_tol, slack = 2 * tol;
        auto residuals = [&](const std::vector<double>& x) {
            std::vector<double> r;
            for (const auto& pj : input_row) r.push_back(pj.evaluate(x));
            r.push_back(std::max(0.0, top.evaluate(x) + slack));
            for (const auto& c : cone) r.push_back(std::max(0.0, -c.evaluate(x)));
            return r;
        };
        auto accept = [&](const std::vector<double>& x) {
            for (const auto& pj : input_row)
                if (std::abs(pj.evaluate(x)) > tol) return false;
            if (top.evaluate(x) > -tol) return false;
            for (const auto& c : cone)
                if (c.evaluate(x) < -tol) return false;
            return true;
        };
        if (auto w = detail::penalty_search(n, residuals, accept, opts)) {
            v.outcome = Outcome::Falsified;
            v.witness = std::move(*w);
            v.detail = "chain condition violated";
            return v;
        }
        v.outcome = Outcome::Unknown;
        v.detail = stalled ? "solver stalled" : "degree budget exhausted";
        return v;
    }

    HocbfChain shrunk = hocbf_chain(shrink_poly(chain.base, opts.shrink, &v.shrink_applied), sys,
                                    chain.gains);
    Verdict inner = verify_containment(shrunk.psi, region,
                                       [&] {
                                           VerifyOptions o = opts;
                                           o.shrink = 0.0;  // already applied to the chain base
                                           return o;
                                       }());
    if (inner.outcome != Outcome::Verified) {
        inner.shrink_applied = v.shrink_applied;
        return inner;
    }
    v.outcome = Outcome::Verified;
    v.certificates.push_back(std::move(*cond_cert));
    for (auto& c : inner.certificates) v.certificates.push_back(std::move(c));
    if (opts.check_chain) {
        for (int i = 1; i <= r; ++i) {
            const Polynomial& prev = chain.psi[static_cast<std::size_t>(i - 1)];
            Polynomial drift = lie(prev, sys.f);
            std::optional<Certificate> cc;
            for (auto [d, s] : opts.schedule) {
                SosProgram prog = detail::emptiness_program(
                    n, {prev}, {chain.psi[static_cast<std::size_t>(i)]}, &drift, s, false, d);
                cc = detail::solve_emptiness(prog, opts, &stalled);
                if (cc) break;
            }
            if (!cc) {
                v.outcome = Outcome::Unknown;
                v.detail = "chain level " + std::to_string(i) + " not certified";
                return v;
            }
            v.certificates.push_back(std::move(*cc));
        }
    }
    v.detail = "chain condition and containment certified";
    return v;
}

// joint invariance of an intersection of barriers: per-barrier boundary
// condition with the others as side constraints, plus a per-channel sign
// compatibility check on shared boundaries
inline Verdict verify_multi(const ControlSystem& sys, const std::vector<Polynomial>& b_set,
                            const VerifyOptions& opts = {}) {
    if (b_set.size() < 2)
        throw std::invalid_argument("verify_multi: need at least two barriers");
    const int n = sys.n;
    Verdict v;
    bool stalled = false;

    std::vector<std::vector<Polynomial>> rows;  // rows[i][j] = channel-j derivative of b_i
    std::vector<Polynomial> drifts;
    for (const auto& b : b_set) {
        if (b.vars() != n) throw DimensionError("verify_multi: variable count mismatch");
        std::vector<Polynomial> row;
        for (int j = 0; j < sys.m; ++j) row.push_back(lie(b, sys.g.column(static_cast<std::size_t>(j))));
        rows.push_back(std::move(row));
        drifts.push_back(lie(b, sys.f));
    }

    std::vector<Certificate> certs;
    for (std::size_t i = 0; i < b_set.size(); ++i) {
        std::vector<Polynomial> ideal{b_set[i]};
        for (const auto& pj : rows[i]) ideal.push_back(pj);
        std::vector<Polynomial> cone;
        for (std::size_t j = 0; j < b_set.size(); ++j)
            if (j != i) cone.push_back(b_set[j]);
        std::optional<Certificate> got;
        for (auto [d, r] : opts.schedule) {
            (void)r;
            SosProgram prog = detail::emptiness_program(n, ideal, cone, &drifts[i], 0, true, d);
            got = detail::solve_emptiness(prog, opts, &stalled);
            if (got) break;
        }
        if (!got) {
            SafeRegion others;
            for (std::size_t j = 0; j < b_set.size(); ++j)
                if (j != i) others.constraints.push_back(b_set[j]);
            if (auto w = falsify(sys, b_set[i], others, opts)) {
                v.outcome = Outcome::Falsified;
                v.witness = std::move(*w);
                v.detail = "boundary condition violated for barrier " + std::to_string(i + 1);
                return v;
            }
            v.outcome = Outcome::Unknown;
            v.detail = stalled ? "solver stalled" : "degree budget exhausted";
            return v;
        }
        certs.push_back(std::move(*got));
    }

    const double tol = opts.falsify_tol, slack = 2 * tol;
    for (std::size_t i = 0; i < b_set.size(); ++i)
        for (std::size_t j = i + 1; j < b_set.size(); ++j)
            for (int l = 0; l < sys.m; ++l) {
                Polynomial prod = rows[i][static_cast<std::size_t>(l)] *
                                  rows[j][static_cast<std::size_t>(l)];
                if (prod.is_zero()) continue;  // channel cannot pull the two apart
                std::optional<Certificate> got;
                for (auto [d, r] : opts.schedule) {
                    SosProgram prog = detail::emptiness_program(
                        n, {b_set[i], b_set[j]}, {}, &prod, r, false, d);
                    got = detail::solve_emptiness(prog, opts, &stalled);
                    if (got) break;
                }
                if (got) {
                    certs.push_back(std::move(*got));
                    continue;
                }
                auto residuals = [&](const std::vector<double>& x) {
                    return std::vector<double>{b_set[i].evaluate(x), b_set[j].evaluate(x),
                                               std::max(0.0, prod.evaluate(x) + slack)};
                };
                auto accept = [&](const std::vector<double>& x) {
                    return std::abs(b_set[i].evaluate(x)) <= tol &&
                           std::abs(b_set[j].evaluate(x)) <= tol && prod.evaluate(x) <= -tol;
                };
                if (auto w = detail::penalty_search(n, residuals, accept, opts)) {
                    v.outcome = Outcome::Falsified;
                    v.witness = std::move(*w);
                    v.detail = "opposite-sign input channel " + std::to_string(l + 1) +
                               " on the shared boundary of barriers " + std::to_string(i + 1) +
                               " and " + std::to_string(j + 1);
                    return v;
                }
                v.outcome = Outcome::Unknown;
                v.detail = stalled ? "solver stalled" : "degree budget exhausted";
                return v;
            }
    v.outcome = Outcome::Verified;
    v.certificates = std::move(certs);
    v.detail = "per-barrier and pairwise conditions certified";
    return v;
}

}  // namespace cbfsos
