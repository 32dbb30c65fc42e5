#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "expr_generator.hpp"
#include "orbitstab/expr.hpp"

#include <random>
#include <string>

using namespace orbitstab;
using namespace orbitstab::expr;

namespace {

const Vec3 kOnes(1, 1, 1);

double value(std::string_view text, const Vec3& u = kOnes, const ParamTable& p = {}) {
  return evaluate(parse(text), u, p);
}

}  // namespace

TEST_CASE("parse and evaluate the Rikitake integrals") {
  CHECK(value("0.25*(-x^2+y^2)-beta*z", kOnes, {{"beta", 1.0}}) == doctest::Approx(-1.0));
  CHECK(value("0.5*(x^2+y^2)+z^2") == doctest::Approx(2.0));
}

TEST_CASE("variables") {
  const Expr e = parse("x");
  CHECK(e->kind == Kind::Variable);
  CHECK(e->var == Var::X);
  CHECK(evaluate(e, {4.5, 1, 2}) == 4.5);
  CHECK(value("y", {0, 7, 0}) == 7.0);
  CHECK(value("z", {0, 0, -3}) == -3.0);
}

TEST_CASE("operator precedence and associativity") {
  CHECK(value("1+2*3") == 7.0);
  CHECK(value("(1+2)*3") == 9.0);
  CHECK(value("2-3-4") == -5.0);
  CHECK(value("8/4/2") == 1.0);
  CHECK(value("-x^2", {3, 0, 0}) == -9.0);
  CHECK(value("(-x)^2", {3, 0, 0}) == 9.0);
  CHECK(value("2*x^3", {2, 0, 0}) == 16.0);
  CHECK(value("--x", {2, 0, 0}) == 2.0);
  CHECK(value("x^-2", {2, 0, 0}) == 0.25);
  CHECK(value("x^(-1)", {4, 0, 0}) == 0.25);
  CHECK(value("1.5e2 + .5") == 150.5);
  CHECK(value("  x *\ty ", {2, 3, 0}) == 6.0);
}

TEST_CASE("functions") {
  const Vec3 u(0.3, 2.0, 0.0);
  CHECK(value("sin(x)", u) == doctest::Approx(std::sin(0.3)));
  CHECK(value("cos(x)", u) == doctest::Approx(std::cos(0.3)));
  CHECK(value("exp(x)", u) == doctest::Approx(std::exp(0.3)));
  CHECK(value("ln(y)", u) == doctest::Approx(std::log(2.0)));
  CHECK(value("sqrt(y)", u) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("syntax errors carry a position") {
  CHECK_THROWS_AS(parse("1+"), ParseError);
  CHECK_THROWS_AS(parse("(x"), ParseError);
  CHECK_THROWS_AS(parse("x)"), ParseError);
  CHECK_THROWS_AS(parse("x $ y"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  try {
    parse("x + * y");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 4);
  }
}

TEST_CASE("unknown functions and identifiers") {
  CHECK_THROWS_AS(parse("foo(x)"), ParseError);
  CHECK_THROWS_AS(parse("abs(x)"), ParseError);
  CHECK_THROWS_AS(parse("sin"), ParseError);
  CHECK_THROWS_AS(parse("q + x", ParamTable{{"k", 1.0}}), ParseError);
  CHECK_NOTHROW(parse("k + x", ParamTable{{"k", 1.0}}));
}

TEST_CASE("exponents must be integer literals") {
  CHECK_THROWS_AS(parse("x^y"), ParseError);
  CHECK_THROWS_AS(parse("x^1.5"), ParseError);
  CHECK_THROWS_AS(parse("x^2e1"), ParseError);
  CHECK_THROWS_AS(parse("x^10000"), ParseError);
}

TEST_CASE("unbound parameters") {
  const Expr e = parse("beta*z");
  CHECK(parameters(e) == std::set<std::string>{"beta"});
  CHECK_THROWS_AS(evaluate(e, kOnes), UnboundParameter);
  CHECK_THROWS_AS(compile(e), UnboundParameter);
  CHECK(evaluate(expr::bind(e, {{"beta", 2.0}}), kOnes) == 2.0);
}

TEST_CASE("symbolic derivatives of the Rikitake integrals") {
  const Expr h = parse("0.25*(-x^2+y^2)-beta*z");
  const Expr dhdz = differentiate(h, Var::Z);
  CHECK_FALSE(depends_on(dhdz, Var::X));
  CHECK_FALSE(depends_on(dhdz, Var::Y));
  CHECK_FALSE(depends_on(dhdz, Var::Z));
  CHECK(evaluate(dhdz, {0.3, -0.2, 5.0}, {{"beta", 1.0}}) == -1.0);

  const Expr dcdx = differentiate(parse("0.5*(x^2+y^2)+z^2"), Var::X);
  oracle::Sampler s(21);
  for (int i = 0; i < 20; ++i) {
    const Vec3 u = s();
    CHECK(evaluate(dcdx, u) == doctest::Approx(u.x()).epsilon(1e-15));
  }

  const Expr zero = differentiate(parse("x"), Var::Y);
  CHECK(zero->kind == Kind::Constant);
  CHECK(zero->value == 0.0);
}

TEST_CASE("simplification removes trivial factors") {
  CHECK(structurally_equal(differentiate(parse("3*x"), Var::X), parse("3")));
  CHECK(structurally_equal(differentiate(parse("x + y"), Var::X), parse("1")));
  CHECK(structurally_equal(differentiate(parse("sin(y)"), Var::X), parse("0")));
  CHECK(node_count(differentiate(parse("x*y*z"), Var::X)) <= 3);
}

TEST_CASE("compile builds gradient and hessian") {
  const ScalarField h = compile("0.25*(-x^2+y^2)-beta*z", {{"beta", 1.0}});
  CHECK(h(kOnes) == doctest::Approx(-1.0));
  CHECK((h.grad(kOnes) - Vec3(-0.5, 0.5, -1.0)).norm() <= 1e-15);
  Mat3 hess = Mat3::Zero();
  hess(0, 0) = -0.5;
  hess(1, 1) = 0.5;
  CHECK((h.hessian(kOnes) - hess).norm() <= 1e-15);

  CHECK(compile("0.5*(x^2+y^2)+z^2")(kOnes) == doctest::Approx(2.0));
  const ScalarField one = compile("1");
  CHECK(one.grad({0.4, -3.0, 8.0}).norm() == 0.0);
  CHECK(one.domain_hint() == "1");
  // The text overload resolves identifiers while parsing.
  CHECK_THROWS_AS(compile("beta*x"), ParseError);
}

TEST_CASE("compiled gradients pass the finite-difference check") {
  const ParamTable p{{"a", 0.7}, {"b", -1.3}};
  for (const char* text : {"a*x^2*y - b*sin(z)", "exp(x*y/4) + ln(z^2 + 1)", "sqrt(x^2 + y^2 + 1)/(z^2 + 2)",
                           "cos(a*x)*y^3 - z/(x^2 + 1)"}) {
    const ScalarField f = compile(text, p);
    oracle::Sampler s(22, -1.5, 1.5);
    for (int i = 0; i < 100; ++i) CHECK(grad_fd_check(f, s(), 1e-5) <= 1e-8);
  }
}

TEST_CASE("printing round-trips through the parser") {
  for (const char* text : {"0.25*(-x^2+y^2)-beta*z", "-3", "-(x)", "x^-2", "1/3 + 0.1", "-(-x)", "sin(-x)^2",
                           "2-(3-4)", "x/(y/z)", "1e-300*x", "-0.0", "exp(ln(x^2+1))"}) {
    const Expr e = parse(text);
    const Expr again = parse(to_string(e));
    INFO(text << " -> " << to_string(e));
    CHECK(structurally_equal(e, again));
    CHECK(to_string(again) == to_string(e));
  }
}

TEST_CASE("random expressions round-trip") {
  oracle::ExprGenerator gen(23);
  for (int i = 0; i < 200; ++i) {
    const std::string text = gen(4);
    const Expr e = parse(text);
    INFO(text);
    CHECK(structurally_equal(e, parse(to_string(e))));
  }
}

TEST_CASE("random expressions: symbolic derivatives match central differences") {
  oracle::ExprGenerator gen(24);
  const ParamTable params{{"k", 0.8}};
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  const double h = 1e-5;
  int checked = 0;
  for (int n = 0; n < 100; ++n) {
    const std::string text = gen(4);
    const Expr e = expr::bind(parse(text), params);
    const ScalarField f = compile(e);
    INFO(text);
    for (int k = 0; k < 10; ++k) {
      const Vec3 u(coord(rng), coord(rng), coord(rng));
      const Vec3 g = f.grad(u);
      for (int i = 0; i < 3; ++i) {
        Vec3 up = u, um = u;
        up[i] += h;
        um[i] -= h;
        const double fd = (evaluate(e, up) - evaluate(e, um)) / (2 * h);
        const double err = std::abs(g[i] - fd) / std::max(1.0, std::abs(g[i]));
        CHECK(err <= 1e-6);
        ++checked;
      }
    }
  }
  CHECK(checked == 3000);
}

TEST_CASE("evaluation is deterministic") {
  const ScalarField f = compile("sin(x*y) + exp(z/2)*x^3");
  const Vec3 u(0.123, -0.456, 0.789);
  const double first = f(u);
  for (int i = 0; i < 10; ++i) CHECK(f(u) == first);
}
