#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbfsos/poly.hpp"
#include "cbfsos/sdp.hpp"

namespace cbfsos {

// All monomials in n variables of total degree <= max_deg, graded lex order.
inline std::vector<Monomial> monomial_basis(int n, int max_deg, bool even_only = false) {
    if (max_deg < 0) throw std::invalid_argument("monomial_basis: max_deg must be >= 0");
    std::vector<Monomial> out;
    std::vector<int> exps(n, 0);
    // enumerate by recursion on variable position
    auto rec = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == n) {
            Monomial m{exps};
            if (!even_only || m.degree() % 2 == 0) out.push_back(m);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            exps[pos] = e;
            self(self, pos + 1, remaining - e);
            exps[pos] = 0;
        }
    };
    rec(rec, 0, max_deg);
    std::sort(out.begin(), out.end());
    return out;
}

// Drop Gram basis monomials that provably carry a zero row in any PSD Gram
// matrix of the target: if z_m^2 equals no other basis product and its
// coefficient in the target is zero, Q_mm = 0 and positive semidefiniteness
// zeroes the whole row. Iterates to a fixed point.
inline std::vector<Monomial> newton_prune(std::vector<Monomial> basis, const Polynomial& target) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t k = 0; k < basis.size(); ++k) {
            Monomial sq = basis[k] * basis[k];
            if (std::abs(target.coefficient(sq)) > 0.0) continue;
            bool other_pair = false;
            for (std::size_t a = 0; a < basis.size() && !other_pair; ++a)
                for (std::size_t b = a; b < basis.size(); ++b) {
                    if (a == k && b == k) continue;
                    if (basis[a] * basis[b] == sq) { other_pair = true; break; }
                }
            if (!other_pair) {
                basis.erase(basis.begin() + static_cast<std::ptrdiff_t>(k));
                changed = true;
                --k;
            }
        }
    }
    return basis;
}

enum class VarKind { Free, Sos };

struct PolyVariable {
    VarKind kind;
    std::vector<Monomial> basis;  // Gram basis z(x) for Sos, coefficient basis for Free
    int id = -1;
};

// One product inside an identity constraint: coeff * D(var), where D is the
// identity or a first partial derivative. The variable enters linearly.
struct SosTerm {
    Polynomial coeff;
    int var = -1;
    int deriv = 0;  // 0 = none, i >= 1 = d/dx_i
};

// sum of terms + constant == 0 identically
struct SosConstraint {
    std::vector<SosTerm> terms;
    Polynomial constant;
    std::string label;
};

struct SosProgram {
    int n = 0;
    std::vector<PolyVariable> vars;
    std::vector<SosConstraint> constraints;
    // minimize sum over (var, basis index) -> weight; vars must be Free
    std::map<std::pair<int, std::size_t>, double> objective;

    explicit SosProgram(int nvars = 0) : n(nvars) {}

    int add_free(std::vector<Monomial> basis) {
        int id = static_cast<int>(vars.size());
        vars.push_back(PolyVariable{VarKind::Free, std::move(basis), id});
        return id;
    }
    int add_sos(std::vector<Monomial> basis) {
        int id = static_cast<int>(vars.size());
        vars.push_back(PolyVariable{VarKind::Sos, std::move(basis), id});
        return id;
    }
    int add_free_scalar() { return add_free({Monomial::one(n)}); }

    void add_identity(SosConstraint c) {
        for (const auto& t : c.terms)
            if (t.var < 0 || t.var >= static_cast<int>(vars.size()))
                throw std::invalid_argument("SosProgram: unregistered variable in constraint");
        constraints.push_back(std::move(c));
    }
    void minimize_scalar(int var, double weight = 1.0) {
        if (vars[var].kind != VarKind::Free || vars[var].basis.size() != 1)
            throw std::invalid_argument("SosProgram: objective variables must be free scalars");
        objective[{var, 0}] += weight;
    }
};

namespace detail {

// polynomial for D(monomial): the monomial itself or its partial derivative
inline Polynomial apply_deriv(int n, const Monomial& m, int deriv) {
    Polynomial p = Polynomial::monomial(n, m, 1.0);
    return deriv == 0 ? p : p.differentiate(deriv);
}

}  // namespace detail

// Remove Gram basis monomials that any feasible point must zero out: if some
// equality row has zero constant, no free-variable or off-diagonal entries,
// and only same-sign Gram diagonals, those diagonals vanish and PSD kills the
// rows. Iterates to a fixed point; the pruned program is feasible iff the
// original is, and it regains a strict interior the original may lack.
inline SosProgram prune_sos_bases(SosProgram prog) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::vector<bool>> drop(prog.vars.size());
        for (const auto& v : prog.vars) drop[v.id].assign(v.basis.size(), false);

        for (const auto& con : prog.constraints) {
            struct Row {
                bool blocked = false;  // free var, off-diagonal or constant present
                std::vector<std::pair<int, std::size_t>> diag;
                int sign = 0;  // +1 / -1 while consistent, 0 after a conflict
            };
            std::map<Monomial, Row> rows;
            for (const auto& [mu, c] : con.constant.terms()) {
                (void)c;
                rows[mu].blocked = true;
            }
            for (const auto& term : con.terms) {
                const PolyVariable& v = prog.vars[term.var];
                if (v.kind == VarKind::Free) {
                    for (const auto& m : v.basis) {
                        Polynomial p = term.coeff * detail::apply_deriv(prog.n, m, term.deriv);
                        for (const auto& [mu, c] : p.terms()) {
                            (void)c;
                            rows[mu].blocked = true;
                        }
                    }
                } else {
                    for (std::size_t a = 0; a < v.basis.size(); ++a)
                        for (std::size_t b = a; b < v.basis.size(); ++b) {
                            Polynomial p = term.coeff *
                                           detail::apply_deriv(prog.n, v.basis[a] * v.basis[b],
                                                                   term.deriv);
                            for (const auto& [mu, c] : p.terms()) {
                                Row& r = rows[mu];
                                if (a != b) {
                                    r.blocked = true;
                                    continue;
                                }
                                int s = c > 0 ? 1 : -1;
                                if (r.diag.empty()) r.sign = s;
                                else if (r.sign != s) r.sign = 0;
                                r.diag.emplace_back(v.id, a);
                            }
                        }
                }
            }
            for (const auto& [mu, r] : rows) {
                (void)mu;
                if (r.blocked || r.diag.empty() || r.sign == 0) continue;
                for (const auto& [vid, idx] : r.diag)
                    if (!drop[vid][idx]) {
                        drop[vid][idx] = true;
                        changed = true;
                    }
            }
        }
        if (!changed) break;
        for (auto& v : prog.vars) {
            std::vector<Monomial> kept;
            for (std::size_t i = 0; i < v.basis.size(); ++i)
                if (!drop[v.id][i]) kept.push_back(v.basis[i]);
            v.basis = std::move(kept);
        }
    }
    return prog;
}

struct SosIndexMap {
    // var id -> first block index; Sos vars use one block of dim |basis|,
    // Free vars use two 1x1 blocks (u, v) per basis monomial, c = u - v.
    std::vector<int> var_block;
    std::vector<int> block_dims;
    std::vector<Monomial> rows;  // monomial per SDP equality row, in order
};

struct CompiledSos {
    SdpProblem problem;
    SosIndexMap map;
};


// Lower an SosProgram to a standard-form SDP. One PSD block per Sos variable,
// split nonnegative pairs for each free coefficient, one equality row per
// monomial appearing in each identity constraint.
inline CompiledSos compile_sos(const SosProgram& prog) {
    CompiledSos out;
    SosIndexMap& map = out.map;
    map.var_block.resize(prog.vars.size());
    for (const auto& v : prog.vars) {
        map.var_block[v.id] = static_cast<int>(map.block_dims.size());
        if (v.kind == VarKind::Sos) {
            map.block_dims.push_back(static_cast<int>(v.basis.size()));
        } else {
            for (std::size_t t = 0; t < v.basis.size(); ++t) {
                map.block_dims.push_back(1);
                map.block_dims.push_back(1);
            }
        }
    }
    SdpProblem prob(map.block_dims);

    // objective: maximize <C,X> = -minimize; small negative weight on every
    // split diagonal bounds the otherwise-flat free directions
    const double split_reg = 1e-7;
    for (const auto& v : prog.vars) {
        if (v.kind != VarKind::Free) continue;
        int blk = map.var_block[v.id];
        for (std::size_t t = 0; t < v.basis.size(); ++t) {
            prob.objective.blocks[blk + 2 * t].set(0, 0, -split_reg);
            prob.objective.blocks[blk + 2 * t + 1].set(0, 0, -split_reg);
        }
    }
    for (const auto& [key, w] : prog.objective) {
        int blk = map.var_block[key.first] + 2 * static_cast<int>(key.second);
        prob.objective.blocks[blk].set(0, 0, prob.objective.blocks[blk].get(0, 0) - w);
        prob.objective.blocks[blk + 1].set(0, 0, prob.objective.blocks[blk + 1].get(0, 0) + w);
    }

    for (const auto& con : prog.constraints) {
        // per-monomial rows: monomial -> BlockMatrix under construction
        std::map<Monomial, BlockMatrix> rows;
        std::map<Monomial, double> rhs;
        auto row_of = [&](const Monomial& mu) -> BlockMatrix& {
            auto it = rows.find(mu);
            if (it == rows.end()) it = rows.emplace(mu, BlockMatrix(map.block_dims)).first;
            return it->second;
        };
        int achievable_deg = 0;
        for (const auto& term : con.terms) {
            const PolyVariable& v = prog.vars[term.var];
            int vdeg = 0;
            for (const auto& bm : v.basis) vdeg = std::max(vdeg, bm.degree());
            achievable_deg = std::max(achievable_deg, term.coeff.degree() +
                                                          (v.kind == VarKind::Sos ? 2 * vdeg : vdeg));
            if (v.kind == VarKind::Free) {
                int blk = map.var_block[v.id];
                for (std::size_t t = 0; t < v.basis.size(); ++t) {
                    Polynomial d = detail::apply_deriv(prog.n, v.basis[t], term.deriv);
                    Polynomial contrib = term.coeff * d;
                    for (const auto& [mu, c] : contrib.terms()) {
                        BlockMatrix& a = row_of(mu);
                        int bu = blk + 2 * static_cast<int>(t);
                        a.blocks[bu].set(0, 0, a.blocks[bu].get(0, 0) + c);
                        a.blocks[bu + 1].set(0, 0, a.blocks[bu + 1].get(0, 0) - c);
                    }
                }
            } else {
                int blk = map.var_block[v.id];
                std::size_t d = v.basis.size();
                for (std::size_t a_i = 0; a_i < d; ++a_i)
                    for (std::size_t b_i = 0; b_i < d; ++b_i) {
                        Polynomial zz = detail::apply_deriv(
                            prog.n, v.basis[a_i] * v.basis[b_i], term.deriv);
                        Polynomial contrib = term.coeff * zz;
                        // Q_{ab} appears once per ordered pair; <A,X> counts
                        // off-diagonal entries twice, so split evenly
                        for (const auto& [mu, c] : contrib.terms()) {
                            BlockMatrix& a = row_of(mu);
                            SymMatrix& blkm = a.blocks[blk];
                            double w = (a_i == b_i) ? c : 0.5 * c;
                            blkm.set(a_i, b_i, blkm.get(a_i, b_i) + w);
                        }
                    }
            }
        }
        if (con.constant.degree() > achievable_deg && !con.constant.is_zero())
            throw std::invalid_argument("compile_sos: constraint '" + con.label +
                                        "' target degree exceeds declared bases");
        for (const auto& [mu, c] : con.constant.terms()) {
            row_of(mu);
            rhs[mu] += c;
        }
        for (auto& [mu, a] : rows) {
            prob.add_constraint(std::move(a), -(rhs.count(mu) ? rhs[mu] : 0.0));
            map.rows.push_back(mu);
        }
    }
    out.problem = std::move(prob);
    return out;
}

struct Certificate {
    SosProgram program;                     // retained for independent rechecking
    std::vector<Polynomial> assignment;     // one polynomial per variable
    std::vector<SymMatrix> gram;            // Gram matrix per variable (empty for Free)
    std::vector<double> constraint_residuals;
    std::vector<double> gram_min_eigs;      // per Sos variable, program order
    double objective_value = 0.0;
};

inline Polynomial reconstruct_sos_polynomial(int n, const std::vector<Monomial>& basis,
                                             const SymMatrix& q) {
    Polynomial p(n);
    for (std::size_t i = 0; i < basis.size(); ++i)
        for (std::size_t j = 0; j < basis.size(); ++j)
            p += Polynomial::monomial(n, basis[i] * basis[j], q.get(i, j));
    return p;
}

namespace detail {

inline Polynomial constraint_residual_poly(const SosProgram& prog, const SosConstraint& con,
                                           const std::vector<Polynomial>& assignment) {
    Polynomial acc = con.constant;
    for (const auto& term : con.terms) {
        Polynomial v = assignment[term.var];
        if (term.deriv > 0) v = v.differentiate(term.deriv);
        acc += term.coeff * v;
    }
    return acc;
}

}  // namespace detail

// Assemble concrete polynomials from an SDP solution; residuals and Gram
// eigenvalues are recomputed from scratch, not taken from the solver.
namespace detail {

inline Certificate assemble_certificate(const SosProgram& prog, const CompiledSos& compiled,
                                        const BlockMatrix& X);

}  // namespace detail

inline Certificate extract_certificate(const SosProgram& prog, const CompiledSos& compiled,
                                       const SdpSolution& sol) {
    if (sol.status != SdpStatus::Optimal)
        throw std::runtime_error("extract_certificate: solution status is not Optimal");
    return detail::assemble_certificate(prog, compiled, sol.X);
}

inline Certificate detail::assemble_certificate(const SosProgram& prog, const CompiledSos& compiled,
                                                const BlockMatrix& X) {
    Certificate cert;
    cert.program = prog;
    cert.assignment.resize(prog.vars.size(), Polynomial(prog.n));
    cert.gram.resize(prog.vars.size());
    for (const auto& v : prog.vars) {
        int blk = compiled.map.var_block[v.id];
        if (v.kind == VarKind::Sos) {
            const SymMatrix& q = X.blocks[blk];
            cert.gram[v.id] = q;
            cert.assignment[v.id] = reconstruct_sos_polynomial(prog.n, v.basis, q);
        } else {
            Polynomial p(prog.n);
            for (std::size_t t = 0; t < v.basis.size(); ++t) {
                double c = X.blocks[blk + 2 * t].get(0, 0) - X.blocks[blk + 2 * t + 1].get(0, 0);
                p += Polynomial::monomial(prog.n, v.basis[t], c);
            }
            cert.assignment[v.id] = p;
        }
    }
    for (const auto& con : prog.constraints)
        cert.constraint_residuals.push_back(
            detail::constraint_residual_poly(prog, con, cert.assignment).max_abs_coefficient());
    for (const auto& v : prog.vars)
        if (v.kind == VarKind::Sos)
            cert.gram_min_eigs.push_back(v.basis.empty() ? 0.0 : min_eigenvalue(cert.gram[v.id]));
    for (const auto& [key, w] : prog.objective) {
        const auto& v = prog.vars[key.first];
        cert.objective_value += w * cert.assignment[key.first].coefficient(v.basis[key.second]);
    }
    return cert;
}

// true iff every identity residual <= tol and every Gram min eigenvalue >= -tol,
// recomputed from the certificate contents.
inline bool check_certificate(const Certificate& cert, double tol = 1e-6) {
    for (const auto& con : cert.program.constraints) {
        Polynomial r = detail::constraint_residual_poly(cert.program, con, cert.assignment);
        if (r.max_abs_coefficient() > tol) return false;
    }
    for (const auto& v : cert.program.vars) {
        if (v.kind != VarKind::Sos || v.basis.empty()) continue;
        if (min_eigenvalue(cert.gram[v.id]) < -tol) return false;
        // Gram must reproduce the recorded polynomial exactly
        Polynomial rec = reconstruct_sos_polynomial(cert.program.n, v.basis, cert.gram[v.id]);
        if ((rec - cert.assignment[v.id]).max_abs_coefficient() > tol) return false;
    }
    return true;
}

struct SosSolveResult {
    SdpStatus status = SdpStatus::Stalled;
    std::optional<Certificate> certificate;
    int iterations = 0;
};

inline SosSolveResult solve_sos(const SosProgram& prog, double tol = 1e-8, int max_iters = 200) {
    CompiledSos compiled = compile_sos(prog);
    SdpSolution sol = solve_sdp(compiled.problem, tol, max_iters);
    SosSolveResult r;
    r.status = sol.status;
    r.iterations = sol.iterations;
    const double salvage_tol = tol > 1e-6 ? tol : 1e-6;
    if (sol.status == SdpStatus::Optimal) {
        r.certificate = extract_certificate(prog, compiled, sol);
        return r;
    }
    if (sol.status != SdpStatus::Stalled || sol.X.blocks.empty()) return r;

    // a stalled iterate can still encode an exactly feasible point; the
    // independent recheck decides, not the solver status
    Certificate cert = detail::assemble_certificate(prog, compiled, sol.X);
    if (check_certificate(cert, salvage_tol)) {
        r.status = SdpStatus::Optimal;
        r.certificate = std::move(cert);
        return r;
    }

    // the solver is reliable when the solution fits inside the cold-start
    // level but loses accuracy when the iterate must grow well past it;
    // scaling every constraint constant by s > 0 scales the solution by s, so
    // steer the solution norm toward ~0.3, map the iterate back with 1/s and
    // judge the result against the original program at the original tolerance.
    // With an objective the scaled program minimizes s times the original
    // value, so the recovered point is still a descent point, though its
    // optimality is only as good as the scaled solve.
    double xmax = 0.0;
    for (const auto& blk : sol.X.blocks) xmax = std::max(xmax, blk.max_abs());
    const double xtarget = 0.3;
    double s = 1.0;
    for (int retry = 0; retry < 4 && xmax > 1.0; ++retry) {
        s *= xtarget / xmax;
        if (s < 1e-7) break;
        SosProgram scaled = prog;
        for (auto& c : scaled.constraints) c.constant = c.constant * s;
        CompiledSos cs = compile_sos(scaled);
        // the recheck needs residual <= salvage_tol * s in the scaled space;
        // asking for much more than that just stalls the solver again
        double tol2 = std::clamp(salvage_tol * s, 1e-10, tol);
        SdpSolution s2 = solve_sdp(cs.problem, tol2, max_iters);
        if (s2.X.blocks.empty()) break;
        BlockMatrix back = s2.X;
        back.axpy(1.0 / s - 1.0, s2.X);
        Certificate c2 = detail::assemble_certificate(prog, compiled, back);
        if (check_certificate(c2, salvage_tol)) {
            r.status = SdpStatus::Optimal;
            r.certificate = std::move(c2);
            return r;
        }
        if (s2.status != SdpStatus::Stalled && s2.status != SdpStatus::Optimal) break;
        xmax = 0.0;
        for (const auto& blk : s2.X.blocks) xmax = std::max(xmax, blk.max_abs());
    }
    return r;
}

}  // namespace cbfsos
