#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbfsos/cbf.hpp"
#include "cbfsos/sim.hpp"
#include "cbfsos/synth.hpp"

namespace cbfsos {

struct ProblemParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProblemFile {
    int n = 0, m = 0;
    std::vector<Polynomial> f, g;        // g row-major, n*m entries
    SafeRegion region;
    std::vector<Polynomial> candidates;
    std::vector<double> gains;           // nonempty: the candidate is a chain base
    std::vector<double> x0, x_ref, feedback;  // feedback row-major, m*n entries
    double horizon = 10.0, dt = 1e-3, kappa = 1.0;
    VerifyOptions verify;
    int max_outer = 10;
    double epsilon = 1e-4;
    int multiplier_degree = 2;
    double resolution = 1e-4;
    unsigned seed = 0;

    ControlSystem system() const { return ControlSystem(n, m, PolyVector(f), PolyMatrix(static_cast<std::size_t>(n), static_cast<std::size_t>(m), g)); }
};

struct CliFlags {
    std::string out = ".";
    int degree = 0;       // 0 = use the file / default schedule
    double tol = 0.0;     // 0 = keep default
    int max_iter = 0;
    unsigned seed = 0;
    bool seed_set = false;
    int jobs = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// '#' starts a comment unless inside a quoted string
inline std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        else if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

inline std::vector<std::string> split_list(const std::string& value, const std::string& where) {
    std::string v = trim(value);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
        throw ProblemParseError(where + ": expected a bracketed list");
    std::vector<std::string> out;
    std::string item;
    bool quoted = false;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        char c = v[i];
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            out.push_back(trim(item));
            item.clear();
        } else {
            item += c;
        }
    }
    if (!trim(item).empty()) out.push_back(trim(item));
    for (auto& s : out)
        if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return out;
}

inline double parse_number(const std::string& value, const std::string& where) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (trim(value.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ProblemParseError(where + ": expected a number, got '" + value + "'");
}

inline std::vector<double> parse_numbers(const std::string& value, const std::string& where) {
    std::vector<double> out;
    for (const auto& s : split_list(value, where)) out.push_back(parse_number(s, where));
    return out;
}

inline std::string unquote(const std::string& value) {
    std::string v = trim(value);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

}  // namespace detail

inline ProblemFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ProblemParseError("cannot open " + path);

    // first pass: collect raw entries with their location; polynomials are
    // parsed afterwards, once n is known
    struct Entry {
        std::string section, key, value;
        int line;
    };
    std::vector<Entry> entries;
    std::string section, line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(detail::strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ProblemParseError("line " + std::to_string(lineno) + ": unterminated section header");
            section = s.substr(1, s.size() - 2);
            static const std::vector<std::string> known{"system", "safety", "candidate", "scenario", "options"};
            if (std::find(known.begin(), known.end(), section) == known.end())
                throw ProblemParseError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos || section.empty())
            throw ProblemParseError("line " + std::to_string(lineno) + ": expected 'key = value' inside a section");
        entries.push_back({section, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), lineno});
    }

    ProblemFile pf;
    auto where = [](const Entry& e) {
        return "section [" + e.section + "], line " + std::to_string(e.line);
    };

    // numbers and lists first
    std::vector<std::pair<Entry, std::vector<std::string>>> poly_entries;
    for (const auto& e : entries) {
        const std::string w = where(e);
        if (e.section == "system") {
            if (e.key == "n") pf.n = static_cast<int>(detail::parse_number(e.value, w));
            else if (e.key == "m") pf.m = static_cast<int>(detail::parse_number(e.value, w));
            else if (e.key == "f" || e.key == "g") poly_entries.push_back({e, detail::split_list(e.value, w)});
            else throw ProblemParseError(w + ": unknown key '" + e.key + "'");
        } else if (e.section == "safety") {
            if (e.key == "h") poly_entries.push_back({e, detail::split_list(e.value, w)});
            else throw ProblemParseError(w + ": unknown key '" + e.key + "'");
        } else if (e.section == "candidate") {
            if (e.key == "b") {
                std::vector<std::string> items = e.value.find('[') != std::string::npos
                                                     ? detail::split_list(e.value, w)
                                                     : std::vector<std::string>{detail::unquote(e.value)};
                poly_entries.push_back({e, std::move(items)});
            } else if (e.key == "gains") {
                pf.gains = detail::parse_numbers(e.value, w);
            } else {
                throw ProblemParseError(w + ": unknown key '" + e.key + "'");
            }
        } else if (e.section == "scenario") {
            if (e.key == "x0") pf.x0 = detail::parse_numbers(e.value, w);
            else if (e.key == "x_ref") pf.x_ref = detail::parse_numbers(e.value, w);
            else if (e.key == "K") pf.feedback = detail::parse_numbers(e.value, w);
            else if (e.key == "T") pf.horizon = detail::parse_number(e.value, w);
            else if (e.key == "dt") pf.dt = detail::parse_number(e.value, w);
            else if (e.key == "kappa") pf.kappa = detail::parse_number(e.value, w);
            else throw ProblemParseError(w + ": unknown key '" + e.key + "'");
        } else if (e.section == "options") {
            if (e.key == "degree") {
                int d = static_cast<int>(detail::parse_number(e.value, w));
                if (d < 1) throw ProblemParseError(w + ": degree must be positive");
                pf.verify.schedule = {{d, 1}, {d, 2}};
            } else if (e.key == "shrink") pf.verify.shrink = detail::parse_number(e.value, w);
            else if (e.key == "tol") pf.verify.sdp_tol = detail::parse_number(e.value, w);
            else if (e.key == "max_iter") pf.verify.sdp_max_iters = static_cast<int>(detail::parse_number(e.value, w));
            else if (e.key == "cert_tol") pf.verify.cert_tol = detail::parse_number(e.value, w);
            else if (e.key == "seed") pf.seed = static_cast<unsigned>(detail::parse_number(e.value, w));
            else if (e.key == "max_outer") pf.max_outer = static_cast<int>(detail::parse_number(e.value, w));
            else if (e.key == "epsilon") pf.epsilon = detail::parse_number(e.value, w);
            else if (e.key == "multiplier_degree") pf.multiplier_degree = static_cast<int>(detail::parse_number(e.value, w));
            else if (e.key == "resolution") pf.resolution = detail::parse_number(e.value, w);
            else throw ProblemParseError(w + ": unknown key '" + e.key + "'");
        }
    }

    if (pf.n < 1) throw ProblemParseError("section [system]: n must be a positive integer");
    if (pf.m < 1) throw ProblemParseError("section [system]: m must be a positive integer");

    for (const auto& [e, items] : poly_entries) {
        const std::string w = where(e);
        std::vector<Polynomial> parsed;
        for (const auto& text : items) {
            try {
                parsed.push_back(parse_polynomial(text, pf.n));
            } catch (const ParseError& pe) {
                throw ProblemParseError(w + ": '" + text + "': " + pe.what());
            }
        }
        if (e.key == "f") pf.f = std::move(parsed);
        else if (e.key == "g") pf.g = std::move(parsed);
        else if (e.key == "h") pf.region.constraints = std::move(parsed);
        else pf.candidates = std::move(parsed);
    }

    if (static_cast<int>(pf.f.size()) != pf.n)
        throw ProblemParseError("section [system]: f must list exactly n = " + std::to_string(pf.n) + " entries");
    if (static_cast<int>(pf.g.size()) != pf.n * pf.m)
        throw ProblemParseError("section [system]: g must list n*m = " + std::to_string(pf.n * pf.m) + " entries, row-major");
    if (!pf.x0.empty() && static_cast<int>(pf.x0.size()) != pf.n)
        throw ProblemParseError("section [scenario]: x0 must have n entries");
    if (!pf.x_ref.empty() && static_cast<int>(pf.x_ref.size()) != pf.n)
        throw ProblemParseError("section [scenario]: x_ref must have n entries");
    if (!pf.feedback.empty() && static_cast<int>(pf.feedback.size()) != pf.m * pf.n)
        throw ProblemParseError("section [scenario]: K must have m*n entries, row-major");
    for (double k : pf.gains)
        if (!(k > 0.0)) throw ProblemParseError("section [candidate]: gains must be positive");
    return pf;
}

namespace detail {

inline int exit_code(Outcome o) {
    switch (o) {
        case Outcome::Verified: return 0;
        case Outcome::Falsified: return 2;
        default: return 3;
    }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

inline std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

inline std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline std::string certificate_dump(const std::vector<Certificate>& certs) {
    std::ostringstream out;
    for (std::size_t c = 0; c < certs.size(); ++c) {
        out << "# certificate " << c + 1 << "\n";
        const auto& cert = certs[c];
        for (const auto& v : cert.program.vars) {
            const char* kind = v.kind == VarKind::Sos ? "sos" : "free";
            out << kind << "_" << v.id << " = " << cert.assignment[v.id].to_string() << "\n";
        }
    }
    return out.str();
}

}  // namespace detail

inline std::string emit_report(const std::string& command, const Verdict& v) {
    std::ostringstream out;
    out << "command: " << command << "\n";
    out << "outcome: " << detail::upper(to_string(v.outcome)) << "\n";
    if (!v.detail.empty()) out << "detail: " << v.detail << "\n";
    int max_deg = 0;
    double max_resid = 0.0, min_eig = 0.0;
    for (const auto& c : v.certificates) {
        for (const auto& var : c.program.vars) {
            int scale = var.kind == VarKind::Sos ? 2 : 1;
            for (const auto& mono : var.basis) max_deg = std::max(max_deg, scale * mono.degree());
        }
        for (double r : c.constraint_residuals) max_resid = std::max(max_resid, r);
        for (double e : c.gram_min_eigs) min_eig = std::min(min_eig, e);
    }
    out << "certificates: " << v.certificates.size() << "\n";
    if (!v.certificates.empty()) {
        out << "max_degree: " << max_deg << "\n";
        out << "max_residual: " << detail::fmt(max_resid, "%.3e") << "\n";
        out << "min_gram_eigenvalue: " << detail::fmt(min_eig, "%.3e") << "\n";
    }
    if (v.shrink_applied != 0.0) out << "shrink_applied: " << detail::fmt(v.shrink_applied) << "\n";
    if (!v.witness.empty()) {
        out << "witness: (";
        for (std::size_t i = 0; i < v.witness.size(); ++i)
            out << (i ? ", " : "") << detail::fmt(v.witness[i]);
        out << ")\n";
    }
    return out.str();
}

// dispatch one command; returns the process exit code and writes artifacts
// under flags.out
inline int run(const std::string& command, const std::string& path, const CliFlags& flags) {
    ProblemFile pf;
    try {
        pf = load(path);
    } catch (const ProblemParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    if (flags.degree > 0) pf.verify.schedule = {{flags.degree, 1}, {flags.degree, 2}};
    if (flags.tol > 0.0) pf.verify.sdp_tol = flags.tol;
    if (flags.max_iter > 0) pf.verify.sdp_max_iters = flags.max_iter;
    if (flags.seed_set) pf.seed = flags.seed;
    pf.verify.seed = pf.seed;

    namespace fs = std::filesystem;
    const fs::path out_dir(flags.out);

    try {
        fs::create_directories(out_dir);
        ControlSystem sys = pf.system();

        auto finish = [&](const Verdict& v) {
            detail::write_text(out_dir / "report.txt", emit_report(command, v));
            if (!v.certificates.empty())
                detail::write_text(out_dir / "certificates.txt", detail::certificate_dump(v.certificates));
            std::cout << emit_report(command, v);
            return detail::exit_code(v.outcome);
        };
        auto need_candidate = [&]() -> const Polynomial& {
            if (pf.candidates.empty())
                throw ProblemParseError("command '" + command + "' needs a [candidate] section");
            return pf.candidates.front();
        };

        if (command == "verify") {
            Verdict v = verify_cbf(sys, need_candidate(), pf.verify);
            if (v.outcome == Outcome::Verified && !pf.region.constraints.empty()) {
                Verdict c = verify_containment({need_candidate()}, pf.region, pf.verify);
                if (c.outcome != Outcome::Verified) {
                    c.detail = "containment: " + c.detail;
                    return finish(c);
                }
                for (auto& cert : c.certificates) v.certificates.push_back(std::move(cert));
                v.shrink_applied = std::max(v.shrink_applied, c.shrink_applied);
            }
            return finish(v);
        }
        if (command == "verify-hocbf") {
            if (pf.gains.empty())
                throw ProblemParseError("verify-hocbf needs chain gains in [candidate]");
            HocbfChain chain = hocbf_chain(need_candidate(), sys, pf.gains);
            return finish(verify_hocbf(sys, chain, pf.region, pf.verify));
        }
        if (command == "verify-multi") {
            Verdict v = verify_multi(sys, pf.candidates, pf.verify);
            if (v.outcome == Outcome::Verified && !pf.region.constraints.empty()) {
                Verdict c = verify_containment(pf.candidates, pf.region, pf.verify);
                if (c.outcome != Outcome::Verified) {
                    c.detail = "containment: " + c.detail;
                    return finish(c);
                }
                for (auto& cert : c.certificates) v.certificates.push_back(std::move(cert));
            }
            return finish(v);
        }
        if (command == "synth-descent") {
            DescentParams dp;
            dp.initial = need_candidate();
            dp.max_outer = pf.max_outer;
            dp.epsilon = pf.epsilon;
            dp.multiplier_degree = pf.multiplier_degree;
            dp.verify = pf.verify;
            DescentTrace t = pf.gains.empty()
                                 ? descent_cbf(sys, pf.region, dp)
                                 : descent_hocbf(sys, pf.region, hocbf_chain(dp.initial, sys, pf.gains), dp);
            std::ostringstream trace;
            for (std::size_t k = 0; k < t.rho.size(); ++k)
                trace << k + 1 << " " << detail::fmt(t.rho[k], "%.9g") << "\n";
            trace << "candidate = " << t.candidate.to_string() << "\n";
            detail::write_text(out_dir / "trace.txt", trace.str());
            return finish(t.verdict);
        }
        if (command == "synth-compact") {
            if (pf.feedback.empty())
                throw ProblemParseError("synth-compact needs a feedback gain K in [scenario]");
            DenseMatrix k(static_cast<std::size_t>(pf.m), static_cast<std::size_t>(pf.n));
            for (int i = 0; i < pf.m; ++i)
                for (int j = 0; j < pf.n; ++j)
                    k(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                        pf.feedback[static_cast<std::size_t>(i * pf.n + j)];
            SymMatrix n_id(static_cast<std::size_t>(pf.n));
            for (int i = 0; i < pf.n; ++i) n_id.set(static_cast<std::size_t>(i), static_cast<std::size_t>(i), 1.0);
            std::vector<double> seed_x = pf.x_ref.empty() ? std::vector<double>(static_cast<std::size_t>(pf.n), 0.0) : pf.x_ref;
            FixedPoint fp = find_fixed_point(sys, seed_x, std::vector<double>(static_cast<std::size_t>(pf.m), 0.0));
            CompactOptions co;
            co.resolution = pf.resolution;
            co.multiplier_degree = pf.multiplier_degree;
            co.sdp_tol = pf.verify.sdp_tol;
            co.sdp_max_iters = pf.verify.sdp_max_iters;
            co.cert_tol = pf.verify.cert_tol;
            CompactResult cr = compact_cbf(sys, pf.region, fp.x, fp.u, k, n_id, co);
            std::ostringstream txt;
            txt << "delta = " << detail::fmt(cr.delta, "%.9g") << "\n";
            txt << "b0 = " << cr.b0.to_string() << "\n";
            detail::write_text(out_dir / "barrier.txt", txt.str());
            Verdict v = verify_cbf(sys, cr.b0, pf.verify);
            return finish(v);
        }
        if (command == "simulate") {
            if (pf.x0.empty()) throw ProblemParseError("simulate needs x0 in [scenario]");
            Scenario sc(sys);
            if (pf.gains.empty()) sc.barriers = pf.candidates;
            else sc.chains.push_back(hocbf_chain(need_candidate(), sys, pf.gains));
            sc.region = pf.region;
            sc.x0 = pf.x0;
            sc.x_ref = pf.x_ref;
            sc.horizon = pf.horizon;
            sc.dt = pf.dt;
            sc.kappa = pf.kappa;
            if (!pf.feedback.empty()) {
                sc.gain = DenseMatrix(static_cast<std::size_t>(pf.m), static_cast<std::size_t>(pf.n));
                for (int i = 0; i < pf.m; ++i)
                    for (int j = 0; j < pf.n; ++j)
                        sc.gain(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                            pf.feedback[static_cast<std::size_t>(i * pf.n + j)];
            }
            Trajectory tr = simulate(sc);
            write_csv(tr, (out_dir / "trajectory.csv").string());
            double min_h = 0.0, min_b = 0.0;
            bool first = true;
            for (const auto& hv : tr.h)
                for (double v : hv) min_h = first ? v : std::min(min_h, v), first = false;
            first = true;
            for (const auto& bv : tr.b)
                for (double v : bv) min_b = first ? v : std::min(min_b, v), first = false;
            std::ostringstream rep;
            rep << "command: simulate\n";
            rep << "samples: " << tr.t.size() << "\n";
            rep << "min_h: " << detail::fmt(min_h, "%.9g") << "\n";
            rep << "min_b: " << detail::fmt(min_b, "%.9g") << "\n";
            rep << "qp_infeasible: " << (tr.qp_infeasible ? "yes" : "no") << "\n";
            detail::write_text(out_dir / "report.txt", rep.str());
            std::cout << rep.str();
            return 0;
        }
        if (command == "export-sdpa") {
            const Polynomial& b = need_candidate();
            Polynomial q = lie(b, sys.f);
            std::vector<Polynomial> ideal{b};
            for (int j = 0; j < pf.m; ++j) ideal.push_back(lie(b, sys.g.column(static_cast<std::size_t>(j))));
            auto [d, r] = pf.verify.schedule.front();
            SosProgram prog = cbfsos::detail::emptiness_program(pf.n, ideal, {}, &q, r, false, d);
            CompiledSos compiled = compile_sos(prog);
            detail::write_text(out_dir / "problem.dat-s", export_sdpa(compiled.problem));
            return 0;
        }
        std::cerr << "error: unknown command '" << command << "'\n";
        return 1;
    } catch (const ProblemParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cbfsos
