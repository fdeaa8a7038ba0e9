#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbfsos/numkernel.hpp"

namespace cbfsos {

// Block-diagonal symmetric matrix matching an SdpProblem's block structure.
struct BlockMatrix {
    std::vector<SymMatrix> blocks;

    BlockMatrix() = default;
    explicit BlockMatrix(const std::vector<int>& dims) {
        for (int d : dims) blocks.emplace_back(static_cast<std::size_t>(d));
    }
    double inner(const BlockMatrix& o) const {
        double s = 0.0;
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            const SymMatrix& a = blocks[k];
            const SymMatrix& b = o.blocks[k];
            for (std::size_t i = 0; i < a.dim; ++i)
                for (std::size_t j = i; j < a.dim; ++j) {
                    double w = (i == j) ? 1.0 : 2.0;
                    s += w * a.get(i, j) * b.get(i, j);
                }
        }
        return s;
    }
    double max_abs() const {
        double v = 0.0;
        for (const auto& b : blocks) v = std::max(v, b.max_abs());
        return v;
    }
    void axpy(double c, const BlockMatrix& o) {
        for (std::size_t k = 0; k < blocks.size(); ++k)
            for (std::size_t t = 0; t < blocks[k].upper.size(); ++t)
                blocks[k].upper[t] += c * o.blocks[k].upper[t];
    }
    double min_eigenvalue() const {
        double v = std::numeric_limits<double>::infinity();
        for (const auto& b : blocks)
            if (b.dim > 0) v = std::min(v, cbfsos::min_eigenvalue(b));
        return blocks.empty() ? 0.0 : v;
    }
};

// Standard form: maximize <C,X> s.t. <A_i,X> = b_i, X >= 0.
struct SdpProblem {
    std::vector<int> block_dims;
    BlockMatrix objective;                 // C
    std::vector<BlockMatrix> constraints;  // A_1..A_m
    std::vector<double> rhs;               // b

    explicit SdpProblem(std::vector<int> dims = {}) : block_dims(std::move(dims)), objective(block_dims) {}

    std::size_t num_constraints() const { return constraints.size(); }
    std::size_t total_dim() const {
        std::size_t d = 0;
        for (int k : block_dims) d += static_cast<std::size_t>(k);
        return d;
    }
    void add_constraint(BlockMatrix a, double b) {
        constraints.push_back(std::move(a));
        rhs.push_back(b);
    }
    void validate() const {
        if (rhs.size() != constraints.size()) throw std::invalid_argument("SdpProblem: rhs/constraint count mismatch");
        auto check = [&](const BlockMatrix& m) {
            if (m.blocks.size() != block_dims.size()) throw std::invalid_argument("SdpProblem: block count mismatch");
            for (std::size_t k = 0; k < m.blocks.size(); ++k)
                if (m.blocks[k].dim != static_cast<std::size_t>(block_dims[k]))
                    throw std::invalid_argument("SdpProblem: block dimension mismatch");
        };
        check(objective);
        for (const auto& a : constraints) check(a);
    }
};

enum class SdpStatus { Optimal, PrimalInfeasible, DualInfeasible, Stalled };

inline const char* to_string(SdpStatus s) {
    switch (s) {
        case SdpStatus::Optimal: return "Optimal";
        case SdpStatus::PrimalInfeasible: return "PrimalInfeasible";
        case SdpStatus::DualInfeasible: return "DualInfeasible";
        default: return "Stalled";
    }
}

struct SdpSolution {
    SdpStatus status = SdpStatus::Stalled;
    BlockMatrix X, S;
    std::vector<double> y;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    int iterations = 0;
};

namespace detail {

// Block-wise dense helpers for the interior-point iteration.
struct BlockDense {
    std::vector<DenseMatrix> blocks;
    explicit BlockDense(const BlockMatrix& m) {
        for (const auto& b : m.blocks) blocks.push_back(b.dense());
    }
};

inline double trace_product(const DenseMatrix& a, const DenseMatrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) s += a(i, j) * b(j, i);
    return s;
}

// largest alpha in (0,1] with X + alpha dX psd (with safety factor gamma)
inline double max_step(const BlockMatrix& x, const BlockMatrix& dx, double gamma) {
    double alpha = 1.0;
    for (std::size_t k = 0; k < x.blocks.size(); ++k) {
        const std::size_t d = x.blocks[k].dim;
        if (d == 0) continue;
        auto l = cholesky(x.blocks[k], 0.0);
        if (!l) return 0.0;
        // W = L^-1 dX L^-T
        DenseMatrix dxd = dx.blocks[k].dense();
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (!std::isfinite(dxd(i, j))) return 0.0;
        DenseMatrix w(d, d);
        for (std::size_t j = 0; j < d; ++j) {
            std::vector<double> col(d);
            for (std::size_t i = 0; i < d; ++i) col[i] = dxd(i, j);
            auto v = forward_substitute(*l, col);
            for (std::size_t i = 0; i < d; ++i) w(i, j) = v[i];
        }
        DenseMatrix wt = w.transpose();
        DenseMatrix w2(d, d);
        for (std::size_t j = 0; j < d; ++j) {
            std::vector<double> col(d);
            for (std::size_t i = 0; i < d; ++i) col[i] = wt(i, j);
            auto v = forward_substitute(*l, col);
            for (std::size_t i = 0; i < d; ++i) w2(i, j) = v[i];
        }
        double lam = min_eigenvalue(SymMatrix::from_dense(w2.transpose()));
        if (lam < 0) alpha = std::min(alpha, -gamma / lam);
    }
    return alpha;
}

}  // namespace detail

// Primal-dual path-following with HKM scaling and a Mehrotra
// predictor-corrector step; dense block operations throughout.
inline SdpSolution solve_sdp(const SdpProblem& prob_in, double tol = 1e-8, int max_iters = 200) {
    if (tol <= 0) throw std::invalid_argument("solve_sdp: tol must be positive");
    prob_in.validate();

    // drop identically-zero rows up front
    SdpProblem prob(prob_in.block_dims);
    prob.objective = prob_in.objective;
    std::vector<std::size_t> kept;
    std::vector<double> row_scale;
    for (std::size_t i = 0; i < prob_in.num_constraints(); ++i) {
        double nrm = prob_in.constraints[i].max_abs();
        if (nrm == 0.0) {
            if (std::abs(prob_in.rhs[i]) > tol) {
                SdpSolution sol;
                sol.status = SdpStatus::PrimalInfeasible;
                return sol;
            }
            continue;
        }
        // equilibrate rows so widely-scaled certificates stay well-conditioned
        BlockMatrix a = prob_in.constraints[i];
        a.axpy(1.0 / nrm - 1.0, prob_in.constraints[i]);
        prob.add_constraint(a, prob_in.rhs[i] / nrm);
        kept.push_back(i);
        row_scale.push_back(nrm);
    }

    const std::size_t m = prob.num_constraints();
    const std::size_t total = prob.total_dim();

    double scale = 1.0 + prob.objective.max_abs();
    for (const auto& a : prob.constraints) scale = std::max(scale, 1.0 + a.max_abs());
    for (double b : prob.rhs) scale = std::max(scale, 1.0 + std::abs(b));

    SdpSolution sol;
    sol.X = BlockMatrix(prob.block_dims);
    sol.S = BlockMatrix(prob.block_dims);
    sol.y.assign(m, 0.0);
    for (std::size_t k = 0; k < sol.X.blocks.size(); ++k)
        for (std::size_t i = 0; i < sol.X.blocks[k].dim; ++i) {
            sol.X.blocks[k].set(i, i, scale);
            sol.S.blocks[k].set(i, i, scale);
        }

    auto restore_y = [&](SdpSolution& s) {
        std::vector<double> y(prob_in.num_constraints(), 0.0);
        for (std::size_t i = 0; i < kept.size(); ++i) y[kept[i]] = s.y[i] / row_scale[i];
        s.y = std::move(y);
    };

    if (total == 0 || m == 0) {
        // no PSD content or no constraints: the zero/initial point is optimal
        // for feasibility-style problems; report residual-consistent status
        sol.status = SdpStatus::Optimal;
        if (m == 0) {
            // unconstrained: X = 0 optimal iff C has no positive direction;
            // desk-scale usage never hits this, return trivial optimum
            sol.X = BlockMatrix(prob.block_dims);
            sol.S = prob.objective;
            sol.S.axpy(-2.0, prob.objective);  // S = -C
            if (sol.S.min_eigenvalue() < -tol) sol.status = SdpStatus::DualInfeasible;
        }
        sol.primal_objective = prob.objective.inner(sol.X);
        sol.dual_objective = 0.0;
        restore_y(sol);
        return sol;
    }

    const double gamma = 0.98;
    const std::size_t nblocks = prob.block_dims.size();

    for (int iter = 0; iter < max_iters; ++iter) {
        sol.iterations = iter;

        // residuals
        std::vector<double> rp(m);
        for (std::size_t i = 0; i < m; ++i) rp[i] = prob.rhs[i] - prob.constraints[i].inner(sol.X);
        BlockMatrix rd = prob.objective;  // Rd = C + S - sum y_i A_i
        rd.axpy(1.0, sol.S);
        for (std::size_t i = 0; i < m; ++i) rd.axpy(-sol.y[i], prob.constraints[i]);

        double mu = sol.X.inner(sol.S) / static_cast<double>(total);
        sol.primal_objective = prob.objective.inner(sol.X);
        sol.dual_objective = 0.0;
        for (std::size_t i = 0; i < m; ++i) sol.dual_objective += prob.rhs[i] * sol.y[i];

        double rp_inf = 0.0;
        for (double v : rp) rp_inf = std::max(rp_inf, std::abs(v));
        double rd_inf = rd.max_abs();
        double gap = std::abs(sol.primal_objective - sol.dual_objective) /
                     (1.0 + std::abs(sol.primal_objective) + std::abs(sol.dual_objective));

        if (rp_inf < tol * scale && rd_inf < tol * scale && (gap < tol || mu < tol)) {
            sol.status = SdpStatus::Optimal;
            restore_y(sol);
            return sol;
        }

        // divergence => infeasibility heuristics
        double ynorm = 0.0;
        for (double v : sol.y) ynorm = std::max(ynorm, std::abs(v));
        if (ynorm > 1e8 || sol.X.max_abs() > 1e8) {
            if (ynorm > 1e8) {
                // candidate dual improving ray v = y / |y|
                BlockMatrix z(prob.block_dims);
                double by = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    z.axpy(sol.y[i] / ynorm, prob.constraints[i]);
                    by += prob.rhs[i] * sol.y[i] / ynorm;
                }
                if (by < -1e-6 && z.min_eigenvalue() > -1e-6) {
                    sol.status = SdpStatus::PrimalInfeasible;
                    restore_y(sol);
                    return sol;
                }
            }
            if (sol.X.max_abs() > 1e8) {
                double xnorm = sol.X.max_abs();
                double cx = sol.primal_objective / xnorm;
                double feas = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    feas = std::max(feas, std::abs(prob.constraints[i].inner(sol.X)) / xnorm);
                if (cx > 1e-6 && feas < 1e-6) {
                    sol.status = SdpStatus::DualInfeasible;
                    restore_y(sol);
                    return sol;
                }
            }
            sol.status = SdpStatus::Stalled;
            restore_y(sol);
            return sol;
        }

        // factor S and form S^-1, and the products used by the Schur system
        std::vector<DenseMatrix> sinv(nblocks), xd(nblocks);
        bool broke = false;
        for (std::size_t k = 0; k < nblocks; ++k) {
            std::size_t d = sol.S.blocks[k].dim;
            if (d == 0) continue;
            auto l = cholesky(sol.S.blocks[k], 0.0);
            if (!l) { broke = true; break; }
            DenseMatrix inv(d, d);
            for (std::size_t j = 0; j < d; ++j) {
                std::vector<double> e(d, 0.0);
                e[j] = 1.0;
                auto v = back_substitute_lt(*l, forward_substitute(*l, e));
                for (std::size_t i = 0; i < d; ++i) inv(i, j) = v[i];
            }
            sinv[k] = std::move(inv);
            xd[k] = sol.X.blocks[k].dense();
        }
        if (broke) {
            sol.status = SdpStatus::Stalled;
            restore_y(sol);
            return sol;
        }

        // U_j = X A_j S^-1 per block; Schur M_ij = tr(A_i U_j)
        std::vector<std::vector<DenseMatrix>> u(m, std::vector<DenseMatrix>(nblocks));
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < nblocks; ++k) {
                if (prob.block_dims[k] == 0) continue;
                u[j][k] = xd[k] * prob.constraints[j].blocks[k].dense() * sinv[k];
            }
        DenseMatrix schur(m, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < nblocks; ++k) {
                    if (prob.block_dims[k] == 0) continue;
                    s += detail::trace_product(prob.constraints[i].blocks[k].dense(), u[j][k]);
                }
                schur(i, j) = s;
            }
        // symmetrize; HKM Schur complement is PD up to roundoff
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                double v = 0.5 * (schur(i, j) + schur(j, i));
                schur(i, j) = schur(j, i) = v;
            }
        // regularize; escalate when rows are linearly dependent
        double reg = 1e-13 * std::max(1.0, schur.max_abs());
        auto schur_solve = [&](const std::vector<double>& r) {
            double rr = reg;
            for (int attempt = 0; attempt < 6; ++attempt, rr *= 1e3) {
                DenseMatrix a = schur;
                for (std::size_t i = 0; i < m; ++i) a(i, i) += rr;
                try {
                    std::vector<double> dy = solve_linear(a, r);
                    bool finite = true;
                    for (double v : dy) finite = finite && std::isfinite(v);
                    if (!finite) continue;
                    // refine against the unregularized matrix; keep a
                    // correction only when it actually shrinks the residual
                    auto residual = [&](const std::vector<double>& z) {
                        std::vector<double> res(m);
                        for (std::size_t i = 0; i < m; ++i) {
                            double s = r[i];
                            for (std::size_t j = 0; j < m; ++j) s -= schur(i, j) * z[j];
                            res[i] = s;
                        }
                        return res;
                    };
                    auto inf_norm = [](const std::vector<double>& z) {
                        double v = 0.0;
                        for (double e : z) v = std::max(v, std::abs(e));
                        return v;
                    };
                    std::vector<double> res = residual(dy);
                    double best = inf_norm(res);
                    for (int round = 0; round < 2; ++round) {
                        std::vector<double> corr = solve_linear(a, res);
                        std::vector<double> cand = dy;
                        for (std::size_t i = 0; i < m; ++i) cand[i] += corr[i];
                        bool ok = true;
                        for (double v : cand) ok = ok && std::isfinite(v);
                        if (!ok) break;
                        std::vector<double> res2 = residual(cand);
                        double nrm = inf_norm(res2);
                        if (!(nrm < best)) break;
                        dy = std::move(cand);
                        res = std::move(res2);
                        best = nrm;
                    }
                    return dy;
                } catch (const SingularMatrixError&) {
                }
            }
            throw SingularMatrixError("schur system singular");
        };

        // X Rd S^-1 per block, reused by both rhs assemblies
        std::vector<DenseMatrix> xrs(nblocks);
        for (std::size_t k = 0; k < nblocks; ++k) {
            if (prob.block_dims[k] == 0) continue;
            xrs[k] = xd[k] * rd.blocks[k].dense() * sinv[k];
        }

        auto assemble_rhs = [&](double sigma_mu, const std::vector<DenseMatrix>* corr) {
            std::vector<double> r(m);
            for (std::size_t i = 0; i < m; ++i) {
                double v = -prob.rhs[i];
                for (std::size_t k = 0; k < nblocks; ++k) {
                    if (prob.block_dims[k] == 0) continue;
                    const DenseMatrix ai = prob.constraints[i].blocks[k].dense();
                    v += sigma_mu * detail::trace_product(ai, sinv[k]);
                    v += detail::trace_product(ai, xrs[k]);
                    if (corr) v -= detail::trace_product(ai, (*corr)[k]);
                }
                r[i] = v;
            }
            return r;
        };

        auto directions = [&](const std::vector<double>& dy, double sigma_mu,
                              const std::vector<DenseMatrix>* corr, BlockMatrix& dxo, BlockMatrix& dso) {
            dso = rd;
            dso.axpy(-2.0, rd);  // dS = -Rd ...
            for (std::size_t i = 0; i < m; ++i) dso.axpy(dy[i], prob.constraints[i]);
            dxo = BlockMatrix(prob.block_dims);
            for (std::size_t k = 0; k < nblocks; ++k) {
                std::size_t d = sol.X.blocks[k].dim;
                if (d == 0) continue;
                DenseMatrix t = xd[k] * dso.blocks[k].dense() * sinv[k];
                if (corr) t = t + (*corr)[k];
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = i; j < d; ++j) {
                        double v = sigma_mu * sinv[k](i, j) - xd[k](i, j) - 0.5 * (t(i, j) + t(j, i));
                        dxo.blocks[k].set(i, j, v);
                    }
            }
        };

        // A dX is affine in dy through the Schur matrix, so the measured
        // defect e = rp - A dX is removed by dy -= M^-1 e; this keeps the
        // steps primal-accurate when X grows far beyond the data scale
        auto refine_direction = [&](std::vector<double>& dyr, double sigma_mu,
                                    const std::vector<DenseMatrix>* corrp, BlockMatrix& dxo,
                                    BlockMatrix& dso) {
            directions(dyr, sigma_mu, corrp, dxo, dso);
            double best = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                best = std::max(best, std::abs(rp[i] - prob.constraints[i].inner(dxo)));
            for (int round = 0; round < 3 && best > 1e-11 * (1.0 + sol.X.max_abs()); ++round) {
                std::vector<double> e(m);
                for (std::size_t i = 0; i < m; ++i) e[i] = rp[i] - prob.constraints[i].inner(dxo);
                std::vector<double> delta;
                try {
                    delta = schur_solve(e);
                } catch (const SingularMatrixError&) {
                    break;
                }
                std::vector<double> cand = dyr;
                for (std::size_t i = 0; i < m; ++i) cand[i] -= delta[i];
                BlockMatrix dxc, dsc;
                directions(cand, sigma_mu, corrp, dxc, dsc);
                double err = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    err = std::max(err, std::abs(rp[i] - prob.constraints[i].inner(dxc)));
                if (!(err < best)) break;
                dyr = std::move(cand);
                dxo = std::move(dxc);
                dso = std::move(dsc);
                best = err;
            }
        };

        // predictor (affine scaling)
        BlockMatrix dxa, dsa;
        std::vector<double> dya;
        try {
            dya = schur_solve(assemble_rhs(0.0, nullptr));
        } catch (const SingularMatrixError&) {
            sol.status = SdpStatus::Stalled;
            restore_y(sol);
            return sol;
        }
        refine_direction(dya, 0.0, nullptr, dxa, dsa);
        double apa = detail::max_step(sol.X, dxa, gamma);
        double ada = detail::max_step(sol.S, dsa, gamma);

        BlockMatrix xa = sol.X, sa = sol.S;
        xa.axpy(apa, dxa);
        sa.axpy(ada, dsa);
        double mu_aff = xa.inner(sa) / static_cast<double>(total);
        double sigma = std::pow(std::max(0.0, mu_aff / mu), 3.0);
        sigma = std::min(1.0, std::max(sigma, 1e-10));

        // corrector term dXa dSa S^-1 per block
        std::vector<DenseMatrix> corr(nblocks);
        for (std::size_t k = 0; k < nblocks; ++k) {
            if (prob.block_dims[k] == 0) continue;
            corr[k] = dxa.blocks[k].dense() * dsa.blocks[k].dense() * sinv[k];
        }

        BlockMatrix dx, ds;
        std::vector<double> dy;
        try {
            dy = schur_solve(assemble_rhs(sigma * mu, &corr));
        } catch (const SingularMatrixError&) {
            sol.status = SdpStatus::Stalled;
            restore_y(sol);
            return sol;
        }
        refine_direction(dy, sigma * mu, &corr, dx, ds);
        double ap = detail::max_step(sol.X, dx, gamma);
        double ad = detail::max_step(sol.S, ds, gamma);
        if (ap < 1e-14 && ad < 1e-14) {
            sol.status = SdpStatus::Stalled;
            restore_y(sol);
            return sol;
        }

        sol.X.axpy(ap, dx);
        sol.S.axpy(ad, ds);
        for (std::size_t i = 0; i < m; ++i) sol.y[i] += ad * dy[i];
    }

    sol.iterations = max_iters;
    sol.status = SdpStatus::Stalled;
    restore_y(sol);
    return sol;
}

// ---------------------------------------------------------------------------
// SDPA sparse format (.dat-s)
// ---------------------------------------------------------------------------

inline std::string export_sdpa(const SdpProblem& prob) {
    std::ostringstream out;
    out << prob.num_constraints() << "\n";
    out << prob.block_dims.size() << "\n";
    for (std::size_t k = 0; k < prob.block_dims.size(); ++k)
        out << (k ? " " : "") << prob.block_dims[k];
    out << "\n";
    for (std::size_t i = 0; i < prob.rhs.size(); ++i) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", prob.rhs[i]);
        out << (i ? " " : "") << buf;
    }
    out << "\n";
    auto emit = [&](int matno, const BlockMatrix& m) {
        for (std::size_t k = 0; k < m.blocks.size(); ++k)
            for (std::size_t i = 0; i < m.blocks[k].dim; ++i)
                for (std::size_t j = i; j < m.blocks[k].dim; ++j) {
                    double v = m.blocks[k].get(i, j);
                    if (v == 0.0) continue;
                    char buf[40];
                    std::snprintf(buf, sizeof buf, "%.17g", v);
                    out << matno << " " << (k + 1) << " " << (i + 1) << " " << (j + 1) << " " << buf << "\n";
                }
    };
    emit(0, prob.objective);
    for (std::size_t i = 0; i < prob.num_constraints(); ++i) emit(static_cast<int>(i + 1), prob.constraints[i]);
    return out.str();
}

struct SdpaParseError : std::runtime_error {
    int line;
    SdpaParseError(const std::string& what, int ln)
        : std::runtime_error(what + " (line " + std::to_string(ln) + ")"), line(ln) {}
};

inline SdpProblem import_sdpa(const std::string& text) {
    std::istringstream in(text);
    std::string linebuf;
    int lineno = 0;
    auto next_line = [&]() -> std::string {
        while (std::getline(in, linebuf)) {
            ++lineno;
            // SDPA comment lines start with " or *
            if (!linebuf.empty() && (linebuf[0] == '"' || linebuf[0] == '*')) continue;
            return linebuf;
        }
        throw SdpaParseError("unexpected end of input", lineno);
    };

    int m = 0, nblocks = 0;
    {
        std::istringstream ls(next_line());
        if (!(ls >> m) || m < 0) throw SdpaParseError("expected constraint count", lineno);
    }
    {
        std::istringstream ls(next_line());
        if (!(ls >> nblocks) || nblocks < 1) throw SdpaParseError("expected block count", lineno);
    }
    std::vector<int> dims;
    {
        std::istringstream ls(next_line());
        int d;
        while (ls >> d) dims.push_back(d < 0 ? -d : d);  // negative = diagonal, stored dense
        if (static_cast<int>(dims.size()) != nblocks) throw SdpaParseError("block size list mismatch", lineno);
    }
    SdpProblem prob(dims);
    {
        std::istringstream ls(next_line());
        double v;
        std::vector<double> b;
        while (ls >> v) b.push_back(v);
        if (static_cast<int>(b.size()) != m) throw SdpaParseError("rhs entry count mismatch", lineno);
        for (double bv : b) prob.add_constraint(BlockMatrix(dims), bv);
    }
    std::string entry;
    while (std::getline(in, entry)) {
        ++lineno;
        if (entry.empty() || entry[0] == '"' || entry[0] == '*') continue;
        std::istringstream ls(entry);
        int matno, blk, i, j;
        double v;
        if (!(ls >> matno >> blk >> i >> j >> v)) {
            bool blank = true;
            for (char c : entry) blank = blank && std::isspace(static_cast<unsigned char>(c));
            if (blank) continue;
            throw SdpaParseError("malformed entry line", lineno);
        }
        if (matno < 0 || matno > m || blk < 1 || blk > nblocks) throw SdpaParseError("entry indices out of range", lineno);
        SymMatrix& target = (matno == 0) ? prob.objective.blocks[blk - 1] : prob.constraints[matno - 1].blocks[blk - 1];
        if (i < 1 || j < 1 || i > static_cast<int>(target.dim) || j > static_cast<int>(target.dim))
            throw SdpaParseError("matrix indices out of range", lineno);
        target.set(static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1), v);
    }
    return prob;
}

}  // namespace cbfsos
