#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbfsos/cbf.hpp"
#include "cbfsos/numkernel.hpp"
#include "cbfsos/poly.hpp"

namespace cbfsos {

// one linear input constraint a.u >= c
struct QpRow {
    std::vector<double> a;
    double c = 0.0;
};

struct Scenario {
    ControlSystem system;
    std::vector<Polynomial> barriers;   // first-order barriers, filtered with kappa
    std::vector<HocbfChain> chains;     // high-order barriers, filtered with their own gains
    SafeRegion region;
    DenseMatrix gain;                   // nominal u = -K (x - x_ref); empty matrix = zero input
    std::vector<double> x_ref;          // defaults to the origin
    std::vector<double> x0;
    double horizon = 10.0;
    double dt = 1e-3;
    double kappa = 1.0;

    Scenario()
        : system(0, 0, PolyVector(std::vector<Polynomial>{}), PolyMatrix(0, 0, {})) {}
    explicit Scenario(ControlSystem sys) : system(std::move(sys)) {}
};

struct Trajectory {
    std::vector<double> t;
    std::vector<std::vector<double>> x, u;
    std::vector<std::vector<double>> h;  // region constraint values per sample
    std::vector<std::vector<double>> b;  // barrier values per sample
    bool qp_infeasible = false;          // simulation halted early at the last sample
};

// minimum-deviation projection of u_nom onto {a_j . u >= c_j}; small active-set
// iteration, each pass solving the equality-constrained projection in closed
// form through the KKT system
inline std::vector<double> qp_filter(const std::vector<double>& u_nom, std::vector<QpRow> rows) {
    const std::size_t m = u_nom.size();
    for (auto it = rows.begin(); it != rows.end();) {
        if (it->a.size() != m) throw DimensionError("qp_filter: row dimension mismatch");
        double amax = 0.0;
        for (double v : it->a) {
            if (!std::isfinite(v)) throw std::invalid_argument("qp_filter: non-finite row");
            amax = std::max(amax, std::abs(v));
        }
        if (amax <= 1e-12) {
            if (it->c > 1e-12) throw std::runtime_error("qp_filter: infeasible zero row");
            it = rows.erase(it);  // vacuous
        } else {
            ++it;
        }
    }

    std::vector<double> u = u_nom;
    std::vector<std::size_t> active;
    auto solve_active = [&]() -> std::vector<double> {
        // u = u_nom + A_W' lam with A_W u = c_W  =>  (A_W A_W') lam = c_W - A_W u_nom
        const std::size_t k = active.size();
        DenseMatrix aat(k, k);
        std::vector<double> rhs(k);
        for (std::size_t i = 0; i < k; ++i) {
            const QpRow& ri = rows[active[i]];
            rhs[i] = ri.c;
            for (std::size_t l = 0; l < m; ++l) rhs[i] -= ri.a[l] * u_nom[l];
            for (std::size_t j = 0; j < k; ++j) {
                double dot = 0.0;
                for (std::size_t l = 0; l < m; ++l) dot += ri.a[l] * rows[active[j]].a[l];
                aat(i, j) = dot;
            }
        }
        std::vector<double> lam = solve_linear(aat, rhs);
        u = u_nom;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t l = 0; l < m; ++l) u[l] += lam[i] * rows[active[i]].a[l];
        return lam;
    };

    for (int pass = 0; pass < 64; ++pass) {
        std::vector<double> lam;
        if (!active.empty()) {
            try {
                lam = solve_active();
            } catch (const SingularMatrixError&) {
                active.pop_back();  // last added row was dependent
                continue;
            }
            // a negative multiplier means the row should not be active
            std::size_t drop = active.size();
            double worst = -1e-12;
            for (std::size_t i = 0; i < active.size(); ++i)
                if (lam[i] < worst) {
                    worst = lam[i];
                    drop = i;
                }
            if (drop < active.size()) {
                active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop));
                continue;
            }
        }
        std::size_t add = rows.size();
        double worst = -1e-12;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            bool is_active = false;
            for (std::size_t i : active) is_active = is_active || i == j;
            if (is_active) continue;
            double slack = -rows[j].c;
            for (std::size_t l = 0; l < m; ++l) slack += rows[j].a[l] * u[l];
            if (slack < worst) {
                worst = slack;
                add = j;
            }
        }
        if (add == rows.size()) return u;
        active.push_back(add);
    }
    throw std::runtime_error("qp_filter: active-set iteration did not settle");
}

namespace detail {

struct BarrierRows {
    // per barrier: value polynomial, drift derivative, input derivatives, gain
    struct Entry {
        Polynomial value, drift;
        std::vector<Polynomial> input;
        double gain;
    };
    std::vector<Entry> entries;
};

inline BarrierRows build_rows(const Scenario& sc) {
    BarrierRows br;
    for (const auto& b : sc.barriers) {
        BarrierRows::Entry e{b, lie(b, sc.system.f), {}, sc.kappa};
        for (int j = 0; j < sc.system.m; ++j)
            e.input.push_back(lie(b, sc.system.g.column(static_cast<std::size_t>(j))));
        br.entries.push_back(std::move(e));
    }
    for (const auto& ch : sc.chains) {
        // top-level condition: L_g psi_{r-1} u >= -psi_r, the drift part and
        // gain already folded into the chain recursion
        const Polynomial& prev = ch.psi[ch.psi.size() - 2];
        BarrierRows::Entry e{ch.base, ch.psi.back(), {}, 0.0};
        for (int j = 0; j < sc.system.m; ++j)
            e.input.push_back(lie(prev, sc.system.g.column(static_cast<std::size_t>(j))));
        br.entries.push_back(std::move(e));
    }
    return br;
}

}  // namespace detail

inline Trajectory simulate(const Scenario& sc) {
    const int n = sc.system.n, m = sc.system.m;
    if (!(sc.horizon > 0.0) || !(sc.dt > 0.0) || sc.dt > sc.horizon)
        throw std::invalid_argument("simulate: bad time grid");
    if (static_cast<int>(sc.x0.size()) != n) throw DimensionError("simulate: x0 dimension mismatch");
    if (sc.gain.rows != 0 &&
        (sc.gain.rows != static_cast<std::size_t>(m) || sc.gain.cols != static_cast<std::size_t>(n)))
        throw DimensionError("simulate: gain dimension mismatch");
    if (!sc.x_ref.empty() && static_cast<int>(sc.x_ref.size()) != n)
        throw DimensionError("simulate: x_ref dimension mismatch");
    for (const auto& b : sc.barriers)
        if (b.vars() != n) throw DimensionError("simulate: barrier dimension mismatch");
    for (const auto& ch : sc.chains)
        if (ch.base.vars() != n || ch.order() < 1)
            throw std::invalid_argument("simulate: malformed chain");

    detail::BarrierRows br = detail::build_rows(sc);

    auto nominal = [&](const std::vector<double>& x) {
        std::vector<double> u(static_cast<std::size_t>(m), 0.0);
        if (sc.gain.rows == 0) return u;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double xj = x[static_cast<std::size_t>(j)];
                if (!sc.x_ref.empty()) xj -= sc.x_ref[static_cast<std::size_t>(j)];
                u[static_cast<std::size_t>(i)] -=
                    sc.gain(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) * xj;
            }
        return u;
    };
    auto filtered = [&](const std::vector<double>& x) {
        std::vector<QpRow> rows;
        for (const auto& e : br.entries) {
            QpRow row;
            for (const auto& p : e.input) row.a.push_back(p.evaluate(x));
            row.c = -e.gain * e.value.evaluate(x) - e.drift.evaluate(x);
            rows.push_back(std::move(row));
        }
        return qp_filter(nominal(x), std::move(rows));
    };
    auto vector_field = [&](const std::vector<double>& x, const std::vector<double>& u) {
        std::vector<double> dx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double v = sc.system.f.entries[static_cast<std::size_t>(i)].evaluate(x);
            for (int l = 0; l < m; ++l)
                v += sc.system.g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(l))
                         .evaluate(x) *
                     u[static_cast<std::size_t>(l)];
            dx[static_cast<std::size_t>(i)] = v;
        }
        return dx;
    };

    Trajectory tr;
    const long steps = std::lround(sc.horizon / sc.dt);
    std::vector<double> x = sc.x0;
    for (long k = 0; k <= steps; ++k) {
        std::vector<double> u;
        try {
            u = filtered(x);
        } catch (const std::runtime_error&) {
            tr.qp_infeasible = true;
        }
        tr.t.push_back(static_cast<double>(k) * sc.dt);
        tr.x.push_back(x);
        std::vector<double> hv, bv;
        for (const auto& h : sc.region.constraints) hv.push_back(h.evaluate(x));
        for (const auto& e : br.entries) bv.push_back(e.value.evaluate(x));
        tr.h.push_back(std::move(hv));
        tr.b.push_back(std::move(bv));
        if (tr.qp_infeasible) {
            tr.u.push_back(std::vector<double>(static_cast<std::size_t>(m), 0.0));
            break;
        }
        tr.u.push_back(u);
        if (k == steps) break;

        // RK4 with the filtered input held over the step
        const double h2 = sc.dt / 2.0;
        std::vector<double> k1 = vector_field(x, u);
        std::vector<double> xt(x);
        for (int i = 0; i < n; ++i) xt[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + h2 * k1[static_cast<std::size_t>(i)];
        std::vector<double> k2 = vector_field(xt, u);
        for (int i = 0; i < n; ++i) xt[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + h2 * k2[static_cast<std::size_t>(i)];
        std::vector<double> k3 = vector_field(xt, u);
        for (int i = 0; i < n; ++i) xt[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + sc.dt * k3[static_cast<std::size_t>(i)];
        std::vector<double> k4 = vector_field(xt, u);
        for (int i = 0; i < n; ++i)
            x[static_cast<std::size_t>(i)] +=
                sc.dt / 6.0 *
                (k1[static_cast<std::size_t>(i)] + 2.0 * k2[static_cast<std::size_t>(i)] +
                 2.0 * k3[static_cast<std::size_t>(i)] + k4[static_cast<std::size_t>(i)]);
    }
    return tr;
}

inline void write_csv(const Trajectory& tr, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    const std::size_t n = tr.x.empty() ? 0 : tr.x.front().size();
    const std::size_t m = tr.u.empty() ? 0 : tr.u.front().size();
    const std::size_t p = tr.h.empty() ? 0 : tr.h.front().size();
    const std::size_t q = tr.b.empty() ? 0 : tr.b.front().size();
    out << "t";
    for (std::size_t i = 1; i <= n; ++i) out << ",x" << i;
    for (std::size_t i = 1; i <= m; ++i) out << ",u" << i;
    for (std::size_t i = 1; i <= p; ++i) out << ",h_" << i;
    for (std::size_t i = 1; i <= q; ++i) out << ",b_" << i;
    out << "\n";
    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        out << buf;
    };
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", tr.t[k]);
        out << buf;
        for (double v : tr.x[k]) put(v);
        for (double v : tr.u[k]) put(v);
        for (double v : tr.h[k]) put(v);
        for (double v : tr.b[k]) put(v);
        out << "\n";
    }
    if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

}  // namespace cbfsos
