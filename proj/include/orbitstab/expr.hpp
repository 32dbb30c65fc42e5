#pragma once

#include "orbitstab/core_fields.hpp"

#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

/// Small arithmetic-expression language over the state variables x, y, z and
/// named parameters. Expressions are immutable trees; sub-trees are shared.
namespace orbitstab::expr {

enum class Kind { Constant, Variable, Parameter, Neg, Add, Sub, Mul, Div, Pow, Call };
enum class Func { Sin, Cos, Exp, Ln, Sqrt };
enum class Var { X = 0, Y = 1, Z = 2 };

using ParamTable = std::map<std::string, double, std::less<>>;

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
  Kind kind = Kind::Constant;
  double value = 0.0;  // Constant
  Var var = Var::X;    // Variable
  std::string name;    // Parameter
  int exponent = 0;    // Pow
  Func func = Func::Sin;
  Expr lhs;  // operand of unary nodes, calls and powers
  Expr rhs;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class UnboundParameter : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw constructors, no simplification.
Expr make_constant(double v);
Expr make_variable(Var v);
Expr make_parameter(std::string name);
Expr make_unary(Kind kind, Expr operand);
Expr make_binary(Kind kind, Expr lhs, Expr rhs);
Expr make_pow(Expr base, int exponent);
Expr make_call(Func f, Expr arg);

/// Parses `text`; identifiers other than x, y, z become parameters.
Expr parse(std::string_view text);
/// Parses `text` and rejects identifiers that are neither x, y, z nor bound in `params`.
Expr parse(std::string_view text, const ParamTable& params);

/// Symbolic partial derivative with identity/zero simplification.
Expr differentiate(const Expr& e, Var v);

/// Throws UnboundParameter for parameters missing from `params`.
double evaluate(const Expr& e, const Vec3& u, const ParamTable& params = {});

/// Fully parenthesised text that parses back to the same tree.
std::string to_string(const Expr& e);

bool structurally_equal(const Expr& a, const Expr& b);
std::set<std::string> parameters(const Expr& e);
bool depends_on(const Expr& e, Var v);
std::size_t node_count(const Expr& e);

/// Replaces every parameter by its bound value.
Expr bind(const Expr& e, const ParamTable& params);

/// ScalarField with symbolic gradient and Hessian.
ScalarField compile(const Expr& e, const ParamTable& params = {});
ScalarField compile(std::string_view text, const ParamTable& params = {});

}  // namespace orbitstab::expr
