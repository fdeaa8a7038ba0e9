#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cbfsos/synth.hpp"
#include "test_helpers.hpp"

using namespace cbfsos;
using namespace cbfsos::testing;

namespace {

ControlSystem planar_unstable() { return linear_system({{1, 0}, {-1, 4}}, {{1}, {0}}); }

ControlSystem pendulum() { return linear_system({{0, 1}, {1, 0}}, {{0}, {1}}); }

SafeRegion unit_disc() { return SafeRegion{{parse_polynomial("1 - x1^2 - x2^2", 2)}}; }

SafeRegion pendulum_box() {
    SafeRegion box;
    box.constraints.push_back(parse_polynomial("x1 + 0.1", 2));
    box.constraints.push_back(parse_polynomial("0.15 - x1", 2));
    box.constraints.push_back(parse_polynomial("x2 + 0.3", 2));
    box.constraints.push_back(parse_polynomial("0.25 - x2", 2));
    return box;
}

// smallest value of x'Px on the line a'x = c; the level set delta - x'Px
// first touches the line at exactly this delta
double touch_level(const SymMatrix& p, const std::vector<double>& a, double c) {
    DenseMatrix pd(2, 2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) pd(i, j) = p.get(i, j);
    std::vector<double> pia = solve_linear(pd, a);
    return c * c / (a[0] * pia[0] + a[1] * pia[1]);
}

}  // namespace

TEST_CASE("fixed point at the origin of a linear system") {
    FixedPoint fp = find_fixed_point(planar_unstable(), {0, 0}, {0});
    CHECK(fp.x[0] == 0.0);
    CHECK(fp.x[1] == 0.0);
    CHECK(fp.u[0] == 0.0);
}

TEST_CASE("seeded fixed point is the minimum-norm solution") {
    ControlSystem sys = planar_unstable();
    FixedPoint fp = find_fixed_point(sys, {0.4, 0.1}, {0});

    // the solution set of {x1 + u = 0, -x1 + 4 x2 = 0} is the line
    // t (1, 1/4, -1); project the seed onto it by hand
    std::vector<double> dir{1.0, 0.25, -1.0};
    std::vector<double> seed{0.4, 0.1, 0.0};
    double t = (dir[0] * seed[0] + dir[1] * seed[1] + dir[2] * seed[2]) /
               (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    CHECK(fp.x[0] == Catch::Approx(t * dir[0]).margin(1e-9));
    CHECK(fp.x[1] == Catch::Approx(t * dir[1]).margin(1e-9));
    CHECK(fp.u[0] == Catch::Approx(t * dir[2]).margin(1e-9));
}

TEST_CASE("fixed point search handles nonlinear drift") {
    // f = (x2, x1 - x1^3), single input on the second state
    std::vector<Polynomial> f{parse_polynomial("x2", 2), parse_polynomial("x1 - x1^3", 2)};
    std::vector<Polynomial> g{Polynomial::constant(2, 0.0), Polynomial::constant(2, 1.0)};
    ControlSystem sys(2, 1, PolyVector(std::move(f)), PolyMatrix(2, 1, std::move(g)));

    FixedPoint fp = find_fixed_point(sys, {0.9, 0.2}, {0});
    CHECK(std::abs(fp.x[1]) < 1e-9);
    double r2 = fp.x[0] - std::pow(fp.x[0], 3) + fp.u[0];
    CHECK(std::abs(r2) < 1e-9);

    CHECK_THROWS_AS(find_fixed_point(sys, {0.0}, {0}), DimensionError);
}

TEST_CASE("linearization of a linear system returns its matrices") {
    auto [f, g] = linearize(planar_unstable(), {0, 0}, {0});
    CHECK(f(0, 0) == 1.0);
    CHECK(f(0, 1) == 0.0);
    CHECK(f(1, 0) == -1.0);
    CHECK(f(1, 1) == 4.0);
    CHECK(g(0, 0) == 1.0);
    CHECK(g(1, 0) == 0.0);
}

TEST_CASE("linearization evaluates the Jacobian at the given point") {
    std::vector<Polynomial> f{parse_polynomial("x2", 2), parse_polynomial("x1 - x1^3", 2)};
    std::vector<Polynomial> g{Polynomial::constant(2, 0.0), Polynomial::constant(2, 1.0)};
    ControlSystem sys(2, 1, PolyVector(std::move(f)), PolyMatrix(2, 1, std::move(g)));

    auto [fm, gm] = linearize(sys, {1.0, 0.0}, {0});
    CHECK(fm(0, 1) == Catch::Approx(1.0));
    CHECK(fm(1, 0) == Catch::Approx(-2.0));  // d/dx1 (x1 - x1^3) at x1 = 1
    CHECK(fm(1, 1) == Catch::Approx(0.0));
    CHECK(gm(1, 0) == Catch::Approx(1.0));
    CHECK_THROWS_AS(linearize(sys, {0.0}, {0}), DimensionError);
}

TEST_CASE("compact construction recovers the Lyapunov matrix and maximal level") {
    ControlSystem sys = pendulum();
    DenseMatrix k(1, 2);
    k(0, 0) = 3;
    k(0, 1) = 3;
    SymMatrix n(2);
    n.set(0, 0, 1);
    n.set(1, 1, 1);
    SafeRegion box = pendulum_box();

    CompactResult cr = compact_cbf(sys, box, {0, 0}, {0}, k, n);

    CHECK(cr.lyapunov.get(0, 0) == Catch::Approx(1.25).margin(1e-9));
    CHECK(cr.lyapunov.get(0, 1) == Catch::Approx(0.25).margin(1e-9));
    CHECK(cr.lyapunov.get(1, 1) == Catch::Approx(0.25).margin(1e-9));

    // the exact level where the ellipse first touches a box face
    double exact = touch_level(cr.lyapunov, {1, 0}, -0.1);
    exact = std::min(exact, touch_level(cr.lyapunov, {-1, 0}, -0.15));
    exact = std::min(exact, touch_level(cr.lyapunov, {0, 1}, -0.3));
    exact = std::min(exact, touch_level(cr.lyapunov, {0, -1}, -0.25));
    CHECK(exact == Catch::Approx(0.01).margin(1e-12));
    CHECK(cr.delta <= exact + 1e-9);
    CHECK(cr.delta >= 0.009);

    // the returned barrier is the quadratic level set of that matrix
    Polynomial expected = ellipse_barrier(cr.delta, {0.0, 0.0}, {{1.25, 0.25}, {0.25, 0.25}});
    CHECK((cr.b0 - expected).max_abs_coefficient() < 1e-9);
    CHECK(verify_cbf(sys, cr.b0).outcome == Outcome::Verified);
    CHECK(verify_containment({cr.b0}, box).outcome == Outcome::Verified);
}

TEST_CASE("compact construction accepts a hand-picked cost matrix") {
    ControlSystem sys = planar_unstable();
    DenseMatrix k(1, 2);
    k(0, 0) = 8;
    k(0, 1) = -30;
    // N chosen so that the closed-loop Lyapunov equation has this solution
    SymMatrix n(2);
    n.set(0, 0, 33.82);
    n.set(0, 1, -120.3);
    n.set(1, 1, 428.4);

    CompactResult cr = compact_cbf(sys, unit_disc(), {0, 0}, {0}, k, n);
    CHECK(cr.lyapunov.get(0, 0) == Catch::Approx(6.23).margin(1e-9));
    CHECK(cr.lyapunov.get(0, 1) == Catch::Approx(-26.7).margin(1e-9));
    CHECK(cr.lyapunov.get(1, 1) == Catch::Approx(146.7).margin(1e-9));
    CHECK(cr.delta > 1.0);
    CHECK(verify_cbf(sys, cr.b0).outcome == Outcome::Verified);
}

TEST_CASE("compact construction rejects a non-stabilizing gain") {
    ControlSystem sys = planar_unstable();
    DenseMatrix k0(1, 2);
    SymMatrix n(2);
    n.set(0, 0, 1);
    n.set(1, 1, 1);
    CHECK_THROWS_AS(compact_cbf(sys, unit_disc(), {0, 0}, {0}, k0, n), std::invalid_argument);
}

TEST_CASE("enlargement grows a verified barrier along the region constraint") {
    ControlSystem sys = planar_unstable();
    SafeRegion disc = unit_disc();
    DenseMatrix k(1, 2);
    k(0, 0) = 8;
    k(0, 1) = -30;
    SymMatrix n(2);
    n.set(0, 0, 33.82);
    n.set(0, 1, -120.3);
    n.set(1, 1, 428.4);
    CompactResult cr = compact_cbf(sys, disc, {0, 0}, {0}, k, n);

    EnlargeOptions eo;
    eo.k_max = 0.2;
    auto [gain, b1] = enlarge(cr.b0, disc, sys, eo);
    CHECK(gain > 0.0);
    CHECK((b1 - (cr.b0 + disc.constraints[0] * gain)).max_abs_coefficient() < 1e-12);
    CHECK(verify_cbf(sys, b1).outcome == Outcome::Verified);
}

TEST_CASE("enlargement saturates when every blend stays valid") {
    // fully actuated scalar system: any concave level set works, so the
    // bisection should run to the cap
    ControlSystem sys = linear_system({{0}}, {{1}});
    SafeRegion region{{parse_polynomial("1 - x1^2", 1)}};
    Polynomial b0 = parse_polynomial("0.5 - x1^2", 1);

    EnlargeOptions eo;
    eo.k_max = 0.5;
    auto [gain, b1] = enlarge(b0, region, sys, eo);
    CHECK(gain == Catch::Approx(eo.k_max).epsilon(0.05));
    CHECK(verify_cbf(sys, b1).outcome == Outcome::Verified);
}

TEST_CASE("enlargement requires a verified starting barrier") {
    ControlSystem sys = planar_unstable();
    Polynomial bad = ellipse_barrier(1.1575, {0.1378, 0.0}, {{6.23, -26.7}, {-26.7, 146.7}});
    CHECK_THROWS_AS(enlarge(bad, unit_disc(), sys, {}), std::invalid_argument);
}

TEST_CASE("canonical form of the pendulum pair is the state swap") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    f(1, 0) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;
    CanonicalForm cf = canonical_form(f, g);
    CHECK(cf.T(0, 0) == 0.0);
    CHECK(cf.T(0, 1) == 1.0);
    CHECK(cf.T(1, 0) == 1.0);
    CHECK(cf.T(1, 1) == 0.0);
    CHECK(cf.Gc(0, 0) == 1.0);
    CHECK(cf.Gc(1, 0) == 0.0);
}

TEST_CASE("canonical form satisfies the similarity identities") {
    DenseMatrix f(3, 3);
    f(0, 1) = 1;
    f(1, 2) = 1;
    f(2, 0) = 0.3;
    f(2, 1) = -1.2;
    f(2, 2) = 0.5;
    DenseMatrix g(3, 1);
    g(2, 0) = 2.0;
    CanonicalForm cf = canonical_form(f, g);

    DenseMatrix lhs = cf.T * f;
    DenseMatrix rhs = cf.Fc * cf.T;
    CHECK((lhs - rhs).max_abs() < 1e-9);
    DenseMatrix tg = cf.T * g;
    CHECK(tg(0, 0) == Catch::Approx(1.0).margin(1e-9));
    CHECK(std::abs(tg(1, 0)) < 1e-9);
    CHECK(std::abs(tg(2, 0)) < 1e-9);
}

TEST_CASE("canonical form rejects uncontrollable and multi-input pairs") {
    DenseMatrix f(2, 2);
    f(0, 0) = 1;
    f(1, 1) = 2;
    DenseMatrix g(2, 1);
    g(0, 0) = 1;  // second mode is unreachable
    CHECK_THROWS_AS(canonical_form(f, g), std::invalid_argument);

    DenseMatrix g2(2, 2);
    g2(0, 0) = 1;
    g2(1, 1) = 1;
    CHECK_THROWS_AS(canonical_form(f, g2), std::invalid_argument);
}

TEST_CASE("half-plane chain on the pendulum has the expected levels") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    f(1, 0) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;

    HocbfChain ch = halfplane_hocbf(f, g, {1, 0}, -0.1, {1.0});
    REQUIRE(ch.order() == 2);
    CHECK((ch.psi[0] - parse_polynomial("x1 + 0.1", 2)).max_abs_coefficient() < 1e-12);
    CHECK((ch.psi[1] - parse_polynomial("x2 + x1 + 0.1", 2)).max_abs_coefficient() < 1e-12);
    // below the top level the chain must be input independent
    ControlSystem sys = pendulum();
    CHECK(lie(ch.psi[0], sys.g.column(0)).is_zero());

    Verdict v = verify_hocbf(sys, ch, SafeRegion{{parse_polynomial("x1 + 0.1", 2)}});
    CHECK(v.outcome == Outcome::Verified);
}

TEST_CASE("half-plane chain collapses to first order under direct actuation") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    f(1, 0) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;

    HocbfChain ch = halfplane_hocbf(f, g, {0, 1}, -0.2, {});
    REQUIRE(ch.order() == 1);
    CHECK((ch.psi[0] - parse_polynomial("x2 + 0.2", 2)).max_abs_coefficient() < 1e-12);
    // psi1 = L_f psi0 + psi0 with the default unit gain
    CHECK((ch.psi[1] - parse_polynomial("x1 + x2 + 0.2", 2)).max_abs_coefficient() < 1e-12);
}

TEST_CASE("half-plane chain rejects malformed inputs") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;
    CHECK_THROWS_AS(halfplane_hocbf(f, g, {0, 0}, 0.0, {}), std::invalid_argument);
    CHECK_THROWS_AS(halfplane_hocbf(f, g, {1, 0}, 0.0, {-1.0}), std::invalid_argument);

    DenseMatrix g0(2, 1);  // input never reaches the half-plane normal
    CHECK_THROWS_AS(halfplane_hocbf(f, g0, {1, 0}, 0.0, {1.0}), std::invalid_argument);
}

TEST_CASE("descent accepts a valid starting candidate in one step") {
    ControlSystem sys = planar_unstable();
    SafeRegion disc = unit_disc();
    DenseMatrix k(1, 2);
    k(0, 0) = 8;
    k(0, 1) = -30;
    SymMatrix n(2);
    n.set(0, 0, 33.82);
    n.set(0, 1, -120.3);
    n.set(1, 1, 428.4);
    CompactResult cr = compact_cbf(sys, disc, {0, 0}, {0}, k, n);

    DescentParams dp;
    dp.initial = cr.b0;
    DescentTrace t = descent_cbf(sys, disc, dp);
    REQUIRE(t.rho.size() == 1);
    CHECK(t.rho[0] <= 1e-6);
    CHECK(t.verdict.outcome == Outcome::Verified);
    CHECK((t.candidate - cr.b0).max_abs_coefficient() < 1e-12);
}

TEST_CASE("descent trace is non-increasing") {
    ControlSystem sys = planar_unstable();
    DescentParams dp;
    dp.initial = parse_polynomial("0.3 - 1.2*x1^2 - 0.4*x1*x2 - 0.7*x2^2 + 0.1*x1", 2);
    dp.max_outer = 3;
    DescentTrace t = descent_cbf(sys, unit_disc(), dp);
    REQUIRE(t.rho.size() >= 2);
    for (std::size_t i = 1; i < t.rho.size(); ++i) CHECK(t.rho[i] <= t.rho[i - 1] + 1e-12);
    CHECK((t.verdict.outcome == Outcome::Verified || t.verdict.outcome == Outcome::Unknown));
}

TEST_CASE("descent validates its inputs") {
    ControlSystem sys = planar_unstable();
    SafeRegion disc = unit_disc();
    DescentParams dp;
    // a default-constructed candidate has no variables at all
    CHECK_THROWS_AS(descent_cbf(sys, disc, dp), DimensionError);

    dp.initial = parse_polynomial("1 - x1^2 - x2^2", 2);
    dp.epsilon = 0.0;
    CHECK_THROWS_AS(descent_cbf(sys, disc, dp), std::invalid_argument);
    dp.epsilon = 1e-4;
    CHECK_THROWS_AS(descent_cbf(sys, SafeRegion{}, dp), std::invalid_argument);
    dp.initial = parse_polynomial("1 - x1^2", 1);
    CHECK_THROWS_AS(descent_cbf(sys, disc, dp), DimensionError);
}

TEST_CASE("chain descent accepts a valid starting chain in one step") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    f(1, 0) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;
    ControlSystem sys = pendulum();
    HocbfChain ch = halfplane_hocbf(f, g, {1, 0}, -0.1, {1.0});
    SafeRegion region{{parse_polynomial("x1 + 0.1", 2)}};

    DescentParams dp;
    dp.max_outer = 5;
    DescentTrace t = descent_hocbf(sys, region, ch, dp);
    REQUIRE(t.rho.size() == 1);
    CHECK(t.rho[0] <= 1e-6);
    CHECK(t.verdict.outcome == Outcome::Verified);
    CHECK((t.chain.base - ch.base).max_abs_coefficient() < 1e-12);
}

TEST_CASE("chain descent rejects a chain of the wrong order") {
    DenseMatrix f(2, 2);
    f(0, 1) = 1;
    f(1, 0) = 1;
    DenseMatrix g(2, 1);
    g(1, 0) = 1;
    ControlSystem sys = pendulum();
    HocbfChain ch = halfplane_hocbf(f, g, {1, 0}, -0.1, {1.0});

    HocbfChain bad = ch;
    bad.gains.push_back(1.0);
    bad.psi.push_back(lie(bad.psi.back(), sys.f) + bad.psi.back());
    SafeRegion region{{parse_polynomial("x1 + 0.1", 2)}};
    CHECK_THROWS_AS(descent_hocbf(sys, region, bad, DescentParams{}), std::invalid_argument);
    CHECK_THROWS_AS(descent_hocbf(sys, SafeRegion{}, ch, DescentParams{}), std::invalid_argument);
}
