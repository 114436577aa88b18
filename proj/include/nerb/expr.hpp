#pragma once

// Expression grammar for payoffs, drivers and losses in run configurations.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | primary
//   primary := number | variable | func '(' expr [',' expr] ')' | '(' expr ')'
//   variable: t b y z x
//   func    : min max (two arguments), abs exp (one argument)

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nerb/errors.hpp"

namespace nerb {

struct ExprVars {
  double t = 0.0, b = 0.0, y = 0.0, z = 0.0, x = 0.0;
};

class Expression {
 public:
  enum class Var { t, b, y, z, x };

  static Expression parse(std::string_view text) {
    Expression e;
    e.text_ = std::string(text);
    Parser p{text, 0, e};
    e.root_ = p.expr();
    p.skip();
    if (p.pos != text.size()) p.fail("unexpected trailing input");
    return e;
  }

  double operator()(const ExprVars& v) const { return eval(root_, v); }

  bool uses(Var v) const { return used_[static_cast<std::size_t>(v)]; }
  const std::string& text() const { return text_; }

 private:
  enum class Op { num, var, add, sub, mul, div, neg, min, max, abs, exp };

  struct Node {
    Op op;
    double value = 0.0;
    Var var = Var::t;
    int lhs = -1;
    int rhs = -1;
  };

  struct Parser {
    std::string_view s;
    std::size_t pos;
    Expression& e;

    [[noreturn]] void fail(const std::string& what) const {
      throw InvalidInput("expression '" + std::string(s) + "': " + what + " at offset " +
                         std::to_string(pos));
    }

    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool accept(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    void expect_char(char c) {
      if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    int node(Op op, int lhs = -1, int rhs = -1) {
      e.nodes_.push_back({op, 0.0, Var::t, lhs, rhs});
      return static_cast<int>(e.nodes_.size()) - 1;
    }

    int expr() {
      int lhs = term();
      for (;;) {
        if (accept('+')) lhs = node(Op::add, lhs, term());
        else if (accept('-')) lhs = node(Op::sub, lhs, term());
        else return lhs;
      }
    }

    int term() {
      int lhs = unary();
      for (;;) {
        if (accept('*')) lhs = node(Op::mul, lhs, unary());
        else if (accept('/')) lhs = node(Op::div, lhs, unary());
        else return lhs;
      }
    }

    int unary() {
      if (accept('-')) return node(Op::neg, unary());
      if (accept('+')) return unary();
      return primary();
    }

    int primary() {
      skip();
      if (pos >= s.size()) fail("unexpected end of input");
      if (accept('(')) {
        int inner = expr();
        expect_char(')');
        return inner;
      }
      const char c = s[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const std::string rest(s.substr(pos));
        char* end = nullptr;
        const double v = std::strtod(rest.c_str(), &end);
        if (end == rest.c_str()) fail("bad number");
        pos += static_cast<std::size_t>(end - rest.c_str());
        int n = node(Op::num);
        e.nodes_[static_cast<std::size_t>(n)].value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t start = pos;
        while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos]))) ++pos;
        const std::string_view word = s.substr(start, pos - start);
        if (word.size() == 1) {
          static constexpr std::string_view names = "tbyzx";
          const auto idx = names.find(word[0]);
          if (idx != std::string_view::npos) {
            int n = node(Op::var);
            e.nodes_[static_cast<std::size_t>(n)].var = static_cast<Var>(idx);
            e.used_[idx] = true;
            return n;
          }
        }
        Op op;
        int arity;
        if (word == "min") op = Op::min, arity = 2;
        else if (word == "max") op = Op::max, arity = 2;
        else if (word == "abs") op = Op::abs, arity = 1;
        else if (word == "exp") op = Op::exp, arity = 1;
        else {
          pos = start;
          fail("unknown identifier '" + std::string(word) + "'");
        }
        expect_char('(');
        int a = expr();
        int b = -1;
        if (arity == 2) {
          expect_char(',');
          b = expr();
        }
        expect_char(')');
        return node(op, a, b);
      }
      fail(std::string("unexpected character '") + c + "'");
    }
  };

  double eval(int idx, const ExprVars& v) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    switch (n.op) {
      case Op::num: return n.value;
      case Op::var:
        switch (n.var) {
          case Var::t: return v.t;
          case Var::b: return v.b;
          case Var::y: return v.y;
          case Var::z: return v.z;
          case Var::x: return v.x;
        }
        return 0.0;
      case Op::add: return eval(n.lhs, v) + eval(n.rhs, v);
      case Op::sub: return eval(n.lhs, v) - eval(n.rhs, v);
      case Op::mul: return eval(n.lhs, v) * eval(n.rhs, v);
      case Op::div: return eval(n.lhs, v) / eval(n.rhs, v);
      case Op::neg: return -eval(n.lhs, v);
      case Op::min: return std::fmin(eval(n.lhs, v), eval(n.rhs, v));
      case Op::max: return std::fmax(eval(n.lhs, v), eval(n.rhs, v));
      case Op::abs: return std::fabs(eval(n.lhs, v));
      case Op::exp: return std::exp(eval(n.lhs, v));
    }
    return 0.0;
  }

  std::string text_;
  std::vector<Node> nodes_;
  int root_ = -1;
  std::array<bool, 5> used_{};
};

}  // namespace nerb
