#include "orbitstab/expr.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>

namespace orbitstab::expr {

ParseError::ParseError(const std::string& what, std::size_t position)
    : std::runtime_error(what + " at position " + std::to_string(position)),
      position_(position) {}

namespace {

bool is_binary(Kind k) {
  return k == Kind::Add || k == Kind::Sub || k == Kind::Mul || k == Kind::Div;
}

std::optional<Func> lookup_function(std::string_view name) {
  if (name == "sin") return Func::Sin;
  if (name == "cos") return Func::Cos;
  if (name == "exp") return Func::Exp;
  if (name == "ln") return Func::Ln;
  if (name == "sqrt") return Func::Sqrt;
  return std::nullopt;
}

const char* function_name(Func f) {
  switch (f) {
    case Func::Sin: return "sin";
    case Func::Cos: return "cos";
    case Func::Exp: return "exp";
    case Func::Ln: return "ln";
    case Func::Sqrt: return "sqrt";
  }
  return "?";
}

std::optional<Var> lookup_variable(std::string_view name) {
  if (name == "x") return Var::X;
  if (name == "y") return Var::Y;
  if (name == "z") return Var::Z;
  return std::nullopt;
}

// Recursive-descent parser.
//   expr     := term (('+'|'-') term)*
//   term     := unary (('*'|'/') unary)*
//   unary    := '-' unary | power
//   power    := primary ('^' exponent)?
//   exponent := ['-'] INT | '(' ['-'] INT ')'
//   primary  := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
class Parser {
 public:
  Parser(std::string_view text, const ParamTable* params) : text_(text), params_(params) {}

  Expr run() {
    Expr e = parse_expr();
    skip_space();
    if (pos_ != text_.size()) {
      throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
    }
    return e;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= text_.size()) throw ParseError(std::string("expected '") + c + "'", pos_);
      throw ParseError(std::string("expected '") + c + "' but found '" + text_[pos_] + "'", pos_);
    }
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = make_binary(Kind::Add, lhs, parse_term());
      } else if (accept('-')) {
        lhs = make_binary(Kind::Sub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = make_binary(Kind::Mul, lhs, parse_unary());
      } else if (accept('/')) {
        lhs = make_binary(Kind::Div, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_unary() {
    if (accept('-')) {
      Expr operand = parse_unary();
      // negative literals are stored as constants
      if (operand->kind == Kind::Constant) return make_constant(-operand->value);
      return make_unary(Kind::Neg, operand);
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (accept('^')) return make_pow(base, parse_exponent());
    return base;
  }

  int parse_exponent() {
    const bool parens = accept('(');
    const bool negative = accept('-');
    skip_space();
    const std::size_t start = pos_;
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      throw ParseError("exponent must be an integer literal", start);
    }
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == '.' || text_[pos_] == 'e' || text_[pos_] == 'E')) {
      throw ParseError("exponent must be an integer literal", start);
    }
    const std::string digits(text_.substr(start, pos_ - start));
    if (digits.size() > 3) throw ParseError("exponent too large", start);
    int n = std::stoi(digits);
    if (parens) expect(')');
    return negative ? -n : n;
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
      ++pos_;
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string lexeme(text_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(lexeme.c_str(), &end);
    if (end != lexeme.c_str() + lexeme.size() || !std::isfinite(v)) {
      throw ParseError("malformed number '" + lexeme + "'", start);
    }
    return make_constant(v);
  }

  Expr parse_primary() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        ++pos_;
      }
      const std::string_view ident = text_.substr(start, pos_ - start);
      skip_space();
      if (pos_ < text_.size() && text_[pos_] == '(') {
        auto f = lookup_function(ident);
        if (!f) throw ParseError("unknown function '" + std::string(ident) + "'", start);
        ++pos_;
        Expr arg = parse_expr();
        expect(')');
        return make_call(*f, arg);
      }
      if (auto v = lookup_variable(ident)) return make_variable(*v);
      if (lookup_function(ident)) {
        throw ParseError("function '" + std::string(ident) + "' needs an argument", start);
      }
      if (params_ && params_->find(ident) == params_->end()) {
        throw ParseError("unknown identifier '" + std::string(ident) + "'", start);
      }
      return make_parameter(std::string(ident));
    }
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      expect(')');
      return e;
    }
    throw ParseError(std::string("unexpected '") + c + "'", pos_);
  }

  std::string_view text_;
  const ParamTable* params_;
  std::size_t pos_ = 0;
};

// Simplifying constructors used by differentiate().
bool is_const(const Expr& e, double v) { return e->kind == Kind::Constant && e->value == v; }

Expr fold_or(Kind k, const Expr& a, const Expr& b, double v) {
  if (std::isfinite(v)) return make_constant(v);
  return make_binary(k, a, b);
}

Expr s_neg(const Expr& a) {
  if (a->kind == Kind::Constant) return make_constant(-a->value);
  if (a->kind == Kind::Neg) return a->lhs;
  return make_unary(Kind::Neg, a);
}

Expr s_add(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  if (a->kind == Kind::Constant && b->kind == Kind::Constant) {
    return fold_or(Kind::Add, a, b, a->value + b->value);
  }
  return make_binary(Kind::Add, a, b);
}

Expr s_sub(const Expr& a, const Expr& b) {
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return s_neg(b);
  if (a->kind == Kind::Constant && b->kind == Kind::Constant) {
    return fold_or(Kind::Sub, a, b, a->value - b->value);
  }
  return make_binary(Kind::Sub, a, b);
}

Expr s_mul(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0) || is_const(b, 0.0)) return make_constant(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (a->kind == Kind::Constant && b->kind == Kind::Constant) {
    return fold_or(Kind::Mul, a, b, a->value * b->value);
  }
  return make_binary(Kind::Mul, a, b);
}

Expr s_div(const Expr& a, const Expr& b) {
  if (is_const(a, 0.0)) return make_constant(0.0);
  if (is_const(b, 1.0)) return a;
  return make_binary(Kind::Div, a, b);
}

Expr s_pow(const Expr& a, int n) {
  if (n == 0) return make_constant(1.0);
  if (n == 1) return a;
  return make_pow(a, n);
}

double eval_node(const Node& n, const Vec3& u, const ParamTable& params) {
  switch (n.kind) {
    case Kind::Constant: return n.value;
    case Kind::Variable: return u[static_cast<int>(n.var)];
    case Kind::Parameter: {
      auto it = params.find(n.name);
      if (it == params.end()) throw UnboundParameter("unbound parameter '" + n.name + "'");
      return it->second;
    }
    case Kind::Neg: return -eval_node(*n.lhs, u, params);
    case Kind::Add: return eval_node(*n.lhs, u, params) + eval_node(*n.rhs, u, params);
    case Kind::Sub: return eval_node(*n.lhs, u, params) - eval_node(*n.rhs, u, params);
    case Kind::Mul: return eval_node(*n.lhs, u, params) * eval_node(*n.rhs, u, params);
    case Kind::Div: return eval_node(*n.lhs, u, params) / eval_node(*n.rhs, u, params);
    case Kind::Pow: {
      const double b = eval_node(*n.lhs, u, params);
      int k = n.exponent;
      if (k == 2) return b * b;
      double r = 1.0, p = b;
      for (int m = std::abs(k); m > 0; m >>= 1) {
        if (m & 1) r *= p;
        p *= p;
      }
      return k < 0 ? 1.0 / r : r;
    }
    case Kind::Call: {
      const double a = eval_node(*n.lhs, u, params);
      switch (n.func) {
        case Func::Sin: return std::sin(a);
        case Func::Cos: return std::cos(a);
        case Func::Exp: return std::exp(a);
        case Func::Ln: return std::log(a);
        case Func::Sqrt: return std::sqrt(a);
      }
    }
  }
  return 0.0;
}

void format_constant(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", std::abs(v));
  if (std::signbit(v)) {
    out += "(-";
    out += buf;
    out += ')';
  } else {
    out += buf;
  }
}

void print_node(std::string& out, const Node& n) {
  switch (n.kind) {
    case Kind::Constant: format_constant(out, n.value); return;
    case Kind::Variable: out += "xyz"[static_cast<int>(n.var)]; return;
    case Kind::Parameter: out += n.name; return;
    case Kind::Neg:
      out += "(-";
      print_node(out, *n.lhs);
      out += ')';
      return;
    case Kind::Add:
    case Kind::Sub:
    case Kind::Mul:
    case Kind::Div: {
      static constexpr std::array<char, 4> ops{'+', '-', '*', '/'};
      out += '(';
      print_node(out, *n.lhs);
      out += ' ';
      out += ops[static_cast<int>(n.kind) - static_cast<int>(Kind::Add)];
      out += ' ';
      print_node(out, *n.rhs);
      out += ')';
      return;
    }
    case Kind::Pow:
      out += '(';
      print_node(out, *n.lhs);
      out += '^';
      if (n.exponent < 0) {
        out += "(" + std::to_string(n.exponent) + ")";
      } else {
        out += std::to_string(n.exponent);
      }
      out += ')';
      return;
    case Kind::Call:
      out += function_name(n.func);
      out += '(';
      print_node(out, *n.lhs);
      out += ')';
      return;
  }
}

void collect_parameters(const Node& n, std::set<std::string>& out) {
  if (n.kind == Kind::Parameter) out.insert(n.name);
  if (n.lhs) collect_parameters(*n.lhs, out);
  if (n.rhs) collect_parameters(*n.rhs, out);
}

}  // namespace

Expr make_constant(double v) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Constant;
  n->value = v;
  return n;
}

Expr make_variable(Var v) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Variable;
  n->var = v;
  return n;
}

Expr make_parameter(std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Parameter;
  n->name = std::move(name);
  return n;
}

Expr make_unary(Kind kind, Expr operand) {
  if (kind != Kind::Neg) throw std::invalid_argument("make_unary: only negation is unary");
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->lhs = std::move(operand);
  return n;
}

Expr make_binary(Kind kind, Expr lhs, Expr rhs) {
  if (!is_binary(kind)) throw std::invalid_argument("make_binary: not a binary operator");
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

Expr make_pow(Expr base, int exponent) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Pow;
  n->lhs = std::move(base);
  n->exponent = exponent;
  return n;
}

Expr make_call(Func f, Expr arg) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Call;
  n->func = f;
  n->lhs = std::move(arg);
  return n;
}

Expr parse(std::string_view text) { return Parser(text, nullptr).run(); }

Expr parse(std::string_view text, const ParamTable& params) {
  return Parser(text, &params).run();
}

Expr differentiate(const Expr& e, Var v) {
  const Node& n = *e;
  switch (n.kind) {
    case Kind::Constant:
    case Kind::Parameter: return make_constant(0.0);
    case Kind::Variable: return make_constant(n.var == v ? 1.0 : 0.0);
    case Kind::Neg: return s_neg(differentiate(n.lhs, v));
    case Kind::Add: return s_add(differentiate(n.lhs, v), differentiate(n.rhs, v));
    case Kind::Sub: return s_sub(differentiate(n.lhs, v), differentiate(n.rhs, v));
    case Kind::Mul:
      return s_add(s_mul(differentiate(n.lhs, v), n.rhs), s_mul(n.lhs, differentiate(n.rhs, v)));
    case Kind::Div: {
      Expr num = s_sub(s_mul(differentiate(n.lhs, v), n.rhs), s_mul(n.lhs, differentiate(n.rhs, v)));
      return s_div(num, s_pow(n.rhs, 2));
    }
    case Kind::Pow:
      return s_mul(s_mul(make_constant(n.exponent), s_pow(n.lhs, n.exponent - 1)),
                   differentiate(n.lhs, v));
    case Kind::Call: {
      Expr inner = differentiate(n.lhs, v);
      if (is_const(inner, 0.0)) return inner;
      switch (n.func) {
        case Func::Sin: return s_mul(make_call(Func::Cos, n.lhs), inner);
        case Func::Cos: return s_mul(s_neg(make_call(Func::Sin, n.lhs)), inner);
        case Func::Exp: return s_mul(e, inner);
        case Func::Ln: return s_div(inner, n.lhs);
        case Func::Sqrt: return s_div(inner, s_mul(make_constant(2.0), e));
      }
    }
  }
  return make_constant(0.0);
}

double evaluate(const Expr& e, const Vec3& u, const ParamTable& params) {
  return eval_node(*e, u, params);
}

std::string to_string(const Expr& e) {
  std::string out;
  print_node(out, *e);
  return out;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a == b) return true;
  if (!a || !b || a->kind != b->kind) return false;
  switch (a->kind) {
    case Kind::Constant: return a->value == b->value && std::signbit(a->value) == std::signbit(b->value);
    case Kind::Variable: return a->var == b->var;
    case Kind::Parameter: return a->name == b->name;
    case Kind::Neg: return structurally_equal(a->lhs, b->lhs);
    case Kind::Pow: return a->exponent == b->exponent && structurally_equal(a->lhs, b->lhs);
    case Kind::Call: return a->func == b->func && structurally_equal(a->lhs, b->lhs);
    default: return structurally_equal(a->lhs, b->lhs) && structurally_equal(a->rhs, b->rhs);
  }
}

std::set<std::string> parameters(const Expr& e) {
  std::set<std::string> out;
  collect_parameters(*e, out);
  return out;
}

bool depends_on(const Expr& e, Var v) {
  if (e->kind == Kind::Variable) return e->var == v;
  return (e->lhs && depends_on(e->lhs, v)) || (e->rhs && depends_on(e->rhs, v));
}

std::size_t node_count(const Expr& e) {
  return 1 + (e->lhs ? node_count(e->lhs) : 0) + (e->rhs ? node_count(e->rhs) : 0);
}

Expr bind(const Expr& e, const ParamTable& params) {
  const Node& n = *e;
  switch (n.kind) {
    case Kind::Parameter: {
      auto it = params.find(n.name);
      if (it == params.end()) throw UnboundParameter("unbound parameter '" + n.name + "'");
      return make_constant(it->second);
    }
    case Kind::Constant:
    case Kind::Variable: return e;
    case Kind::Neg: return make_unary(Kind::Neg, bind(n.lhs, params));
    case Kind::Pow: return make_pow(bind(n.lhs, params), n.exponent);
    case Kind::Call: return make_call(n.func, bind(n.lhs, params));
    default: return make_binary(n.kind, bind(n.lhs, params), bind(n.rhs, params));
  }
}

ScalarField compile(const Expr& e, const ParamTable& params) {
  const Expr f = bind(e, params);
  std::array<Expr, 3> d;
  for (int i = 0; i < 3; ++i) d[i] = differentiate(f, static_cast<Var>(i));
  std::array<std::array<Expr, 3>, 3> dd;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      dd[i][j] = differentiate(d[i], static_cast<Var>(j));
      dd[j][i] = dd[i][j];
    }
  }
  static const ParamTable kNone;
  auto eval = [f](const Vec3& u) { return eval_node(*f, u, kNone); };
  auto grad = [d](const Vec3& u) -> Vec3 {
    return {eval_node(*d[0], u, kNone), eval_node(*d[1], u, kNone), eval_node(*d[2], u, kNone)};
  };
  auto hess = [dd](const Vec3& u) -> Mat3 {
    Mat3 h;
    for (int i = 0; i < 3; ++i) {
      for (int j = i; j < 3; ++j) {
        h(i, j) = eval_node(*dd[i][j], u, kNone);
        h(j, i) = h(i, j);
      }
    }
    return h;
  };
  return ScalarField(eval, grad, ScalarField::HessFn(hess), to_string(e));
}

ScalarField compile(std::string_view text, const ParamTable& params) {
  return compile(parse(text, params), params);
}

}  // namespace orbitstab::expr
