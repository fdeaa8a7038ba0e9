#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cbfsos/cbf.hpp"
#include "test_helpers.hpp"

using namespace cbfsos;
using namespace cbfsos::testing;

namespace {

ControlSystem double_integrator() { return linear_system({{0, 1}, {0, 0}}, {{0}, {1}}); }

// planar system with an unstable drift and a single input on the first state
ControlSystem planar_unstable() { return linear_system({{1, 0}, {-1, 4}}, {{1}, {0}}); }

Polynomial planar_ellipse() {
    return ellipse_barrier(1.1575, {0.1378, 0.0}, {{6.23, -26.7}, {-26.7, 146.7}});
}

// the witness must hit the boundary, kill every input channel and leave the
// drift pushing outward
void require_boundary_violation(const ControlSystem& sys, const Polynomial& b,
                                const std::vector<double>& w, double tol = 1e-6) {
    REQUIRE(std::abs(b.evaluate(w)) <= tol);
    for (int j = 0; j < sys.m; ++j)
        REQUIRE(std::abs(lie(b, sys.g.column(static_cast<std::size_t>(j))).evaluate(w)) <= tol);
    REQUIRE(lie(b, sys.f).evaluate(w) <= -tol);
}

void require_certificates_check(const Verdict& v) {
    REQUIRE(v.outcome == Outcome::Verified);
    for (const auto& c : v.certificates) CHECK(check_certificate(c, 1e-6));
}

}  // namespace

TEST_CASE("hocbf chain follows the drift-only recursion") {
    ControlSystem dbl = double_integrator();
    Polynomial b = parse_polynomial("1 - x1", 2);
    HocbfChain ch = hocbf_chain(b, dbl, {1.0, 1.0});
    REQUIRE(ch.order() == 2);
    REQUIRE(ch.psi.size() == 3);
    CHECK((ch.psi[0] - b).is_zero());
    CHECK((ch.psi[1] - parse_polynomial("1 - x1 - x2", 2)).is_zero());
    CHECK((ch.psi[2] - parse_polynomial("1 - x1 - 2*x2", 2)).is_zero());
    CHECK_THROWS_AS(hocbf_chain(b, dbl, {1.0, -1.0}), std::invalid_argument);
    CHECK_THROWS_AS(hocbf_chain(parse_polynomial("1 - x1", 1), dbl, {1.0}), DimensionError);
}

TEST_CASE("hocbf chain has no input part below the top level") {
    ControlSystem dbl = double_integrator();
    HocbfChain ch = hocbf_chain(parse_polynomial("1 - x1", 2), dbl, {1.0, 1.0});
    // levels 0..r-2 must be input-independent as polynomials
    for (int i = 0; i + 2 <= ch.order(); ++i)
        for (int j = 0; j < dbl.m; ++j)
            CHECK(lie(ch.psi[static_cast<std::size_t>(i)], dbl.g.column(static_cast<std::size_t>(j)))
                      .is_zero());
}

TEST_CASE("shrink_poly subtracts a coefficient-scaled margin") {
    Polynomial b = parse_polynomial("2 - x1^2", 1);
    double applied = 0.0;
    Polynomial s = shrink_poly(b, 1e-3, &applied);
    CHECK(applied == Catch::Approx(2e-3));
    CHECK((s - parse_polynomial("1.998 - x1^2", 1)).max_abs_coefficient() < 1e-15);
    CHECK((shrink_poly(b, 0.0) - b).is_zero());
}

TEST_CASE("fully actuated system with zero drift derivative verifies") {
    ControlSystem act = linear_system({{0}}, {{1}});
    Verdict v = verify_cbf(act, parse_polynomial("1 - x1^2", 1));
    require_certificates_check(v);
}

TEST_CASE("double integrator rejects the position-only candidate") {
    ControlSystem dbl = double_integrator();
    Verdict v = verify_cbf(dbl, parse_polynomial("1 - x1^2", 2));
    REQUIRE(v.outcome == Outcome::Falsified);
    require_boundary_violation(dbl, parse_polynomial("1 - x1^2", 2), v.witness);
    // the violation set is the boundary with x1*x2 > 0
    CHECK(v.witness[0] * v.witness[1] > 0.0);
}

TEST_CASE("planar ellipse candidate is falsified at an uncontrollable boundary point") {
    ControlSystem sys = planar_unstable();
    Polynomial b = planar_ellipse();
    Verdict v = verify_cbf(sys, b);
    REQUIRE(v.outcome == Outcome::Falsified);
    require_boundary_violation(sys, b, v.witness);

    // independent oracle: polish {b = 0, db/dx g = 0} with Newton from the
    // returned witness; it must converge in place, not drift elsewhere
    Polynomial gb = lie(b, sys.g.column(0));
    PolyVector e1(std::vector<Polynomial>{Polynomial::constant(2, 1.0), Polynomial::constant(2, 0.0)});
    PolyVector e2(std::vector<Polynomial>{Polynomial::constant(2, 0.0), Polynomial::constant(2, 1.0)});
    std::vector<double> x = v.witness;
    for (int it = 0; it < 50; ++it) {
        DenseMatrix jac(2, 2);
        jac(0, 0) = lie(b, e1).evaluate(x);
        jac(0, 1) = lie(b, e2).evaluate(x);
        jac(1, 0) = lie(gb, e1).evaluate(x);
        jac(1, 1) = lie(gb, e2).evaluate(x);
        std::vector<double> r{-b.evaluate(x), -gb.evaluate(x)};
        std::vector<double> d = solve_linear(jac, r);
        x[0] += d[0];
        x[1] += d[1];
    }
    REQUIRE(std::abs(b.evaluate(x)) < 1e-10);
    REQUIRE(std::abs(gb.evaluate(x)) < 1e-10);
    CHECK(std::abs(x[0] - v.witness[0]) < 1e-4);
    CHECK(std::abs(x[1] - v.witness[1]) < 1e-4);
    // the drift decrease at the polished point is large, not marginal
    CHECK(lie(b, sys.f).evaluate(x) == Catch::Approx(-1.0229853).margin(1e-4));
}

TEST_CASE("verify_cbf rejects dimension mismatches") {
    ControlSystem dbl = double_integrator();
    CHECK_THROWS_AS(verify_cbf(dbl, parse_polynomial("1 - x1^2", 3)), DimensionError);
}

TEST_CASE("containment of the half-radius disc") {
    Polynomial b = parse_polynomial("0.5 - x1^2 - x2^2", 2);
    Polynomial h = parse_polynomial("1 - x1^2 - x2^2", 2);
    // hand identity behind the check: 2b - 2h + 1 == 0
    CHECK((b * 2.0 - h * 2.0 + Polynomial::constant(2, 1.0)).is_zero());
    Verdict v = verify_containment({b}, SafeRegion{{h}});
    require_certificates_check(v);
}

TEST_CASE("containment fails when the candidate set sticks out") {
    Polynomial b = parse_polynomial("2 - x1^2 - x2^2", 2);
    Polynomial h = parse_polynomial("1 - x1^2 - x2^2", 2);
    Verdict v = verify_containment({b}, SafeRegion{{h}});
    REQUIRE(v.outcome == Outcome::Falsified);
    CHECK(std::abs(h.evaluate(v.witness)) <= 1e-6);
    CHECK(b.evaluate(v.witness) >= -1e-6);
    CHECK(v.witness[0] * v.witness[0] + v.witness[1] * v.witness[1] == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("tangent containment needs the shrink margin") {
    Polynomial h = parse_polynomial("1 - x1^2 - x2^2", 2);
    VerifyOptions no_shrink;
    no_shrink.shrink = 0.0;
    Verdict exact = verify_containment({h}, SafeRegion{{h}}, no_shrink);
    REQUIRE(exact.outcome == Outcome::Falsified);
    CHECK(std::abs(h.evaluate(exact.witness)) <= 1e-6);

    Verdict shrunk = verify_containment({h}, SafeRegion{{h}});
    require_certificates_check(shrunk);
    CHECK(shrunk.shrink_applied == Catch::Approx(1e-3));
}

TEST_CASE("containment rejects empty inputs") {
    Polynomial h = parse_polynomial("1 - x1^2", 1);
    CHECK_THROWS_AS(verify_containment({}, SafeRegion{{h}}), std::invalid_argument);
    CHECK_THROWS_AS(verify_containment({h}, SafeRegion{}), std::invalid_argument);
}

TEST_CASE("hocbf verification on the double integrator half-plane") {
    ControlSystem dbl = double_integrator();
    Polynomial b = parse_polynomial("1 - x1", 2);
    HocbfChain ch = hocbf_chain(b, dbl, {1.0, 1.0});
    // the top-level input coefficient is the constant -1
    CHECK((lie(ch.psi[1], dbl.g.column(0)) - Polynomial::constant(2, -1.0)).is_zero());
    Verdict v = verify_hocbf(dbl, ch, SafeRegion{{b}});
    require_certificates_check(v);
}

TEST_CASE("hocbf verification on the inverted pendulum half-plane") {
    ControlSystem pend = linear_system({{0, 1}, {1, 0}}, {{0}, {1}});
    Polynomial b = parse_polynomial("x1 + 0.1", 2);
    HocbfChain ch = hocbf_chain(b, pend, {1.0, 1.0});
    CHECK((lie(ch.psi[1], pend.g.column(0)) - Polynomial::constant(2, 1.0)).is_zero());
    Verdict v = verify_hocbf(pend, ch, SafeRegion{{b}});
    require_certificates_check(v);
}

TEST_CASE("hocbf rejects a chain shorter than the relative degree") {
    ControlSystem dbl = double_integrator();
    Polynomial b = parse_polynomial("1 - x1", 2);
    CHECK_THROWS_AS(verify_hocbf(dbl, hocbf_chain(b, dbl, {1.0}), SafeRegion{{b}}),
                    std::invalid_argument);
    // and a chain longer than it: the input shows up before the top level
    ControlSystem act = linear_system({{0}}, {{1}});
    Polynomial b1 = parse_polynomial("1 - x1", 1);
    CHECK_THROWS_AS(verify_hocbf(act, hocbf_chain(b1, act, {1.0, 1.0}), SafeRegion{{b1}}),
                    std::invalid_argument);
}

TEST_CASE("multi-barrier intersection with orthogonal channels") {
    ControlSystem act2 = linear_system({{0, 0}, {0, 0}}, {{1, 0}, {0, 1}});
    Verdict v = verify_multi(act2, {parse_polynomial("x1", 2), parse_polynomial("x2", 2)});
    require_certificates_check(v);
}

TEST_CASE("multi-barrier pair with an opposite-sign channel is falsified") {
    ControlSystem act = linear_system({{0}}, {{1}});
    Verdict v = verify_multi(act, {parse_polynomial("x1", 1), parse_polynomial("0 - x1", 1)});
    REQUIRE(v.outcome == Outcome::Falsified);
    // both boundaries meet at the witness and the channel products are negative
    CHECK(std::abs(v.witness[0]) <= 1e-6);
}

TEST_CASE("multi-barrier requires at least two barriers") {
    ControlSystem act = linear_system({{0}}, {{1}});
    CHECK_THROWS_AS(verify_multi(act, {parse_polynomial("x1", 1)}), std::invalid_argument);
}

TEST_CASE("falsify finds the analytic violation set of the double integrator") {
    ControlSystem dbl = double_integrator();
    Polynomial b = parse_polynomial("1 - x1^2", 2);
    auto w = falsify(dbl, b, SafeRegion{});
    REQUIRE(w.has_value());
    require_boundary_violation(dbl, b, *w);
    CHECK((*w)[0] * (*w)[1] > 0.0);
}

TEST_CASE("falsify returns none when the boundary gradient never degenerates") {
    ControlSystem act2 = linear_system({{0, 0}, {0, 0}}, {{1, 0}, {0, 1}});
    CHECK_FALSE(falsify(act2, parse_polynomial("1 - x1^2 - x2^2", 2), SafeRegion{}).has_value());
}

TEST_CASE("falsify agrees with the verifier on the planar ellipse candidate") {
    ControlSystem sys = planar_unstable();
    Polynomial b = planar_ellipse();
    auto w = falsify(sys, b, SafeRegion{});
    REQUIRE(w.has_value());
    require_boundary_violation(sys, b, *w);
}

TEST_CASE("verified candidates admit no counterexample and vice versa") {
    struct Case {
        ControlSystem sys;
        Polynomial b;
    };
    std::vector<Case> battery{
        {linear_system({{0}}, {{1}}), parse_polynomial("1 - x1^2", 1)},
        {linear_system({{0, 0}, {0, 0}}, {{1, 0}, {0, 1}}), parse_polynomial("1 - x1^2 - x2^2", 2)},
        {double_integrator(), parse_polynomial("1 - x1^2", 2)},
        {double_integrator(), parse_polynomial("1 - x2^2", 2)},
        {planar_unstable(), planar_ellipse()},
    };
    for (const auto& c : battery) {
        Verdict v = verify_cbf(c.sys, c.b);
        auto w = falsify(c.sys, c.b, SafeRegion{});
        if (v.outcome == Outcome::Verified) CHECK_FALSE(w.has_value());
        if (w.has_value()) CHECK(v.outcome != Outcome::Verified);
    }
}

TEST_CASE("verdicts are deterministic") {
    ControlSystem dbl = double_integrator();
    Polynomial b = parse_polynomial("1 - x1^2", 2);
    Verdict a = verify_cbf(dbl, b);
    Verdict c = verify_cbf(dbl, b);
    REQUIRE(a.outcome == c.outcome);
    REQUIRE(a.witness == c.witness);
    auto w1 = falsify(dbl, b, SafeRegion{});
    auto w2 = falsify(dbl, b, SafeRegion{});
    REQUIRE(w1 == w2);

    Polynomial h = parse_polynomial("1 - x1^2 - x2^2", 2);
    Verdict t1 = verify_containment({h}, SafeRegion{{h}});
    Verdict t2 = verify_containment({h}, SafeRegion{{h}});
    REQUIRE(t1.outcome == t2.outcome);
    REQUIRE(t1.certificates.size() == t2.certificates.size());
}
