#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbfsos {

// Coefficients below this magnitude are dropped on canonicalization.
inline constexpr double kZeroThreshold = 1e-12;

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct ParseError : std::runtime_error {
    std::size_t pos;
    ParseError(const std::string& what, std::size_t p)
        : std::runtime_error(what + " (at position " + std::to_string(p) + ")"), pos(p) {}
};

// Exponent vector of fixed length n, one entry per state variable x1..xn.
struct Monomial {
    std::vector<int> exps;

    Monomial() = default;
    explicit Monomial(std::vector<int> e) : exps(std::move(e)) {}
    static Monomial one(int n) { return Monomial(std::vector<int>(n, 0)); }
    static Monomial var(int n, int i) {  // i is 1-based
        std::vector<int> e(n, 0);
        e[i - 1] = 1;
        return Monomial(std::move(e));
    }

    int degree() const { return std::accumulate(exps.begin(), exps.end(), 0); }

    Monomial operator*(const Monomial& o) const {
        Monomial r = *this;
        for (std::size_t k = 0; k < exps.size(); ++k) r.exps[k] += o.exps[k];
        return r;
    }

    bool operator==(const Monomial& o) const { return exps == o.exps; }

    // Graded lexicographic: total degree first, then lex on exponents.
    bool operator<(const Monomial& o) const {
        int da = degree(), db = o.degree();
        if (da != db) return da < db;
        return std::lexicographical_compare(exps.begin(), exps.end(),
                                            o.exps.begin(), o.exps.end(),
                                            std::greater<int>());
    }
};

class Polynomial {
  public:
    Polynomial() : n_(0) {}
    explicit Polynomial(int n) : n_(n) {}
    static Polynomial zero(int n) { return Polynomial(n); }
    static Polynomial constant(int n, double c) {
        Polynomial p(n);
        p.add_term(Monomial::one(n), c);
        return p;
    }
    static Polynomial variable(int n, int i) {
        if (i < 1 || i > n) throw DimensionError("variable index out of range");
        Polynomial p(n);
        p.add_term(Monomial::var(n, i), 1.0);
        return p;
    }
    static Polynomial monomial(int n, Monomial m, double c) {
        Polynomial p(n);
        p.add_term(std::move(m), c);
        return p;
    }

    int vars() const { return n_; }
    bool is_zero() const { return terms_.empty(); }
    const std::map<Monomial, double>& terms() const { return terms_; }

    int degree() const {
        int d = 0;
        for (const auto& [m, c] : terms_) d = std::max(d, m.degree());
        return d;
    }

    double coefficient(const Monomial& m) const {
        auto it = terms_.find(m);
        return it == terms_.end() ? 0.0 : it->second;
    }

    double max_abs_coefficient() const {
        double v = 0.0;
        for (const auto& [m, c] : terms_) v = std::max(v, std::abs(c));
        return v;
    }

    void add_term(Monomial m, double c) {
        auto [it, inserted] = terms_.try_emplace(std::move(m), c);
        if (!inserted) it->second += c;
        if (std::abs(it->second) < kZeroThreshold) terms_.erase(it);
    }

    Polynomial operator+(const Polynomial& o) const {
        check_same(o);
        Polynomial r = *this;
        for (const auto& [m, c] : o.terms_) r.add_term(m, c);
        return r;
    }
    Polynomial operator-(const Polynomial& o) const {
        check_same(o);
        Polynomial r = *this;
        for (const auto& [m, c] : o.terms_) r.add_term(m, -c);
        return r;
    }
    Polynomial operator*(const Polynomial& o) const {
        check_same(o);
        Polynomial r(n_);
        for (const auto& [ma, ca] : terms_)
            for (const auto& [mb, cb] : o.terms_) r.add_term(ma * mb, ca * cb);
        return r;
    }
    Polynomial operator*(double c) const {
        Polynomial r(n_);
        for (const auto& [m, v] : terms_) r.add_term(m, v * c);
        return r;
    }
    Polynomial operator-() const { return *this * -1.0; }
    Polynomial& operator+=(const Polynomial& o) { return *this = *this + o; }
    Polynomial& operator-=(const Polynomial& o) { return *this = *this - o; }

    Polynomial pow(int k) const {
        Polynomial r = constant(n_, 1.0);
        for (int i = 0; i < k; ++i) r = r * *this;
        return r;
    }

    bool operator==(const Polynomial& o) const { return n_ == o.n_ && terms_ == o.terms_; }

    Polynomial differentiate(int i) const {  // i is 1-based
        if (i < 1 || i > n_) throw DimensionError("derivative index out of range");
        Polynomial r(n_);
        for (const auto& [m, c] : terms_) {
            int e = m.exps[i - 1];
            if (e == 0) continue;
            Monomial d = m;
            d.exps[i - 1] = e - 1;
            r.add_term(std::move(d), c * e);
        }
        return r;
    }

    double evaluate(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != n_) throw DimensionError("evaluate: point dimension mismatch");
        double s = 0.0;
        for (const auto& [m, c] : terms_) {
            double t = c;
            for (int k = 0; k < n_; ++k)
                for (int e = 0; e < m.exps[k]; ++e) t *= x[k];
            s += t;
        }
        return s;
    }

    // Graded-lex canonical printing; parse(print(p)) == p.
    std::string to_string() const {
        if (terms_.empty()) return "0";
        std::ostringstream out;
        bool first = true;
        // map iterates ascending grlex; print descending for readability
        for (auto it = terms_.rbegin(); it != terms_.rend(); ++it) {
            double c = it->second;
            if (first) {
                if (c < 0) out << "-";
            } else {
                out << (c < 0 ? " - " : " + ");
            }
            first = false;
            double a = std::abs(c);
            const Monomial& m = it->first;
            bool has_vars = m.degree() > 0;
            if (!has_vars || std::abs(a - 1.0) >= kZeroThreshold) {
                out.precision(17);
                out << a;
                if (has_vars) out << "*";
            }
            bool firstvar = true;
            for (int k = 0; k < n_; ++k) {
                if (m.exps[k] == 0) continue;
                if (!firstvar) out << "*";
                firstvar = false;
                out << "x" << (k + 1);
                if (m.exps[k] > 1) out << "^" << m.exps[k];
            }
        }
        return out.str();
    }

  private:
    void check_same(const Polynomial& o) const {
        if (n_ != o.n_) throw DimensionError("polynomial variable counts differ");
    }
    int n_;
    std::map<Monomial, double> terms_;
};

inline Polynomial operator*(double c, const Polynomial& p) { return p * c; }

struct PolyVector {
    std::vector<Polynomial> entries;

    PolyVector() = default;
    explicit PolyVector(std::vector<Polynomial> e) : entries(std::move(e)) {
        for (const auto& p : entries)
            if (p.vars() != entries.front().vars())
                throw DimensionError("PolyVector entries disagree on variable count");
    }
    std::size_t size() const { return entries.size(); }
    const Polynomial& operator[](std::size_t i) const { return entries[i]; }
};

struct PolyMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<Polynomial> data;  // row-major

    PolyMatrix() = default;
    PolyMatrix(std::size_t r, std::size_t c, std::vector<Polynomial> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) throw DimensionError("PolyMatrix shape mismatch");
        for (const auto& p : data)
            if (p.vars() != data.front().vars())
                throw DimensionError("PolyMatrix entries disagree on variable count");
    }
    const Polynomial& at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    PolyVector column(std::size_t j) const {
        std::vector<Polynomial> c;
        for (std::size_t i = 0; i < rows; ++i) c.push_back(at(i, j));
        return PolyVector(std::move(c));
    }
};

// ---------------------------------------------------------------------------
// Parser for the shared polynomial grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor ('*' factor)*
//   factor := base ('^' uint)?
//   base   := decimal-literal | 'x' uint | '(' expr ')'
// Implicit multiplication is forbidden.
// ---------------------------------------------------------------------------
namespace detail {

class PolyParser {
  public:
    PolyParser(const std::string& text, int n) : text_(text), n_(n) {}

    Polynomial parse() {
        Polynomial p = expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return p;
    }

  private:
    Polynomial expr() {
        skip_ws();
        int sign = 1;
        if (peek() == '+' || peek() == '-') {
            if (get() == '-') sign = -1;
        }
        Polynomial p = term() * static_cast<double>(sign);
        while (true) {
            skip_ws();
            char c = peek();
            if (c == '+' || c == '-') {
                get();
                Polynomial t = term();
                p = (c == '+') ? p + t : p - t;
            } else {
                return p;
            }
        }
    }

    Polynomial term() {
        Polynomial p = factor();
        while (true) {
            skip_ws();
            if (peek() == '*') {
                get();
                p = p * factor();
            } else {
                return p;
            }
        }
    }

    Polynomial factor() {
        Polynomial b = base();
        skip_ws();
        if (peek() == '^') {
            get();
            skip_ws();
            if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected exponent");
            return b.pow(static_cast<int>(uint_lit()));
        }
        return b;
    }

    Polynomial base() {
        skip_ws();
        char c = peek();
        if (c == '(') {
            get();
            Polynomial p = expr();
            skip_ws();
            if (peek() != ')') fail("expected ')'");
            get();
            return p;
        }
        if (c == 'x') {
            std::size_t at = pos_;
            get();
            if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected variable index after 'x'");
            unsigned long idx = uint_lit();
            if (idx < 1 || static_cast<int>(idx) > n_)
                throw ParseError("variable index " + std::to_string(idx) + " exceeds n=" + std::to_string(n_), at);
            return Polynomial::variable(n_, static_cast<int>(idx));
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t at = pos_;
            std::size_t consumed = 0;
            double v = 0.0;
            try {
                v = std::stod(text_.substr(pos_), &consumed);
            } catch (const std::exception&) {
                fail("malformed number");
            }
            // reject literals that begin a name, e.g. "2x1" (implicit multiplication)
            pos_ += consumed;
            if (std::isalpha(static_cast<unsigned char>(peek())))
                throw ParseError("implicit multiplication is not allowed", pos_);
            (void)at;
            return Polynomial::constant(n_, v);
        }
        fail("expected number, variable, or '('");
        return Polynomial(n_);  // unreachable
    }

    unsigned long uint_lit() {
        std::size_t start = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) get();
        return std::stoul(text_.substr(start, pos_ - start));
    }

    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
    char get() { return text_[pos_++]; }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

    const std::string& text_;
    int n_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline Polynomial parse_polynomial(const std::string& text, int n) {
    return detail::PolyParser(text, n).parse();
}

// ---------------------------------------------------------------------------
// Lie derivative machinery
// ---------------------------------------------------------------------------

// L_field p = sum_i dp/dx_i * field_i
inline Polynomial lie(const Polynomial& p, const PolyVector& field) {
    if (field.size() != static_cast<std::size_t>(p.vars()))
        throw DimensionError("lie: field length must equal variable count");
    Polynomial r(p.vars());
    for (int i = 1; i <= p.vars(); ++i) r += p.differentiate(i) * field[i - 1];
    return r;
}

struct ControlSystem {
    int n = 0, m = 0;
    PolyVector f;   // drift, length n
    PolyMatrix g;   // input map, n x m

    ControlSystem() = default;
    ControlSystem(int n_, int m_, PolyVector f_, PolyMatrix g_)
        : n(n_), m(m_), f(std::move(f_)), g(std::move(g_)) {
        if (f.size() != static_cast<std::size_t>(n) || g.rows != static_cast<std::size_t>(n) ||
            g.cols != static_cast<std::size_t>(m))
            throw DimensionError("ControlSystem dimensions inconsistent");
        for (const auto& p : f.entries)
            if (p.vars() != n) throw DimensionError("drift entries must be over n variables");
        for (const auto& p : g.data)
            if (p.vars() != n) throw DimensionError("input map entries must be over n variables");
    }
};

struct LieChain {
    Polynomial drift_part;   // L_f^r b
    PolyVector input_part;   // entry j = L_{g_j} L_f^{r-1} b
};

// drift_part = L_f^r b; input_part_j = lie of L_f^{r-1} b along column j of g.
inline LieChain lie_chain(const Polynomial& b, const ControlSystem& sys, int r) {
    if (r < 1) throw DimensionError("lie_chain: r must be >= 1");
    if (b.vars() != sys.n) throw DimensionError("lie_chain: dimension mismatch");
    Polynomial prev = b;  // L_f^{r-1} b
    for (int k = 0; k < r - 1; ++k) prev = lie(prev, sys.f);
    std::vector<Polynomial> input;
    for (std::size_t j = 0; j < static_cast<std::size_t>(sys.m); ++j)
        input.push_back(lie(prev, sys.g.column(j)));
    return LieChain{lie(prev, sys.f), PolyVector(std::move(input))};
}

// Smallest r <= max_r with L_g L_f^{r-1} b not identically zero.
inline std::optional<int> relative_degree(const Polynomial& b, const ControlSystem& sys, int max_r) {
    if (max_r < 1) throw DimensionError("relative_degree: max_r must be >= 1");
    Polynomial prev = b;
    for (int r = 1; r <= max_r; ++r) {
        bool nonzero = false;
        for (std::size_t j = 0; j < static_cast<std::size_t>(sys.m); ++j)
            if (!lie(prev, sys.g.column(j)).is_zero()) nonzero = true;
        if (nonzero) return r;
        prev = lie(prev, sys.f);
    }
    return std::nullopt;
}

}  // namespace cbfsos
