#pragma once

#include "vemmhd/core.hpp"

#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vemmhd {

/// Arithmetic expression in x, y, z (and the constant pi) compiled to a
/// callable. Grammar: sums and products, unary minus, right-associative '^',
/// parentheses and the functions sin, cos, tan, exp, log, sqrt, abs.
class Expression {
public:
  explicit Expression(const std::string& text) : text_(text) {
    pos_ = 0;
    eval_ = parse_sum();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
  }

  double operator()(const Vec3& x) const { return eval_(x); }
  const std::string& text() const { return text_; }

private:
  using Fn = std::function<double(const Vec3&)>;

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError("expression '" + text_ + "': " + why + " at position " + std::to_string(pos_));
  }

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

  Fn parse_sum() {
    Fn lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        Fn rhs = parse_product();
        lhs = [lhs, rhs](const Vec3& x) { return lhs(x) + rhs(x); };
      } else if (accept('-')) {
        Fn rhs = parse_product();
        lhs = [lhs, rhs](const Vec3& x) { return lhs(x) - rhs(x); };
      } else {
        return lhs;
      }
    }
  }

  Fn parse_product() {
    Fn lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        Fn rhs = parse_unary();
        lhs = [lhs, rhs](const Vec3& x) { return lhs(x) * rhs(x); };
      } else if (accept('/')) {
        Fn rhs = parse_unary();
        lhs = [lhs, rhs](const Vec3& x) { return lhs(x) / rhs(x); };
      } else {
        return lhs;
      }
    }
  }

  Fn parse_unary() {
    if (accept('-')) {
      Fn arg = parse_unary();
      return [arg](const Vec3& x) { return -arg(x); };
    }
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  Fn parse_power() {
    Fn base = parse_primary();
    if (accept('^')) {
      Fn exponent = parse_unary();
      return [base, exponent](const Vec3& x) { return std::pow(base(x), exponent(x)); };
    }
    return base;
  }

  Fn parse_primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end");
    if (accept('(')) {
      Fn inner = parse_sum();
      if (!accept(')')) fail("missing ')'");
      return inner;
    }
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(text_.substr(pos_), &used);
      } catch (const std::exception&) {
        fail("bad number");
      }
      pos_ += used;
      return [value](const Vec3&) { return value; };
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
      const std::string name = text_.substr(start, pos_ - start);
      if (name == "x") return [](const Vec3& x) { return x[0]; };
      if (name == "y") return [](const Vec3& x) { return x[1]; };
      if (name == "z") return [](const Vec3& x) { return x[2]; };
      if (name == "pi") return [](const Vec3&) { return M_PI; };
      double (*f)(double) = nullptr;
      if (name == "sin") f = [](double v) { return std::sin(v); };
      else if (name == "cos") f = [](double v) { return std::cos(v); };
      else if (name == "tan") f = [](double v) { return std::tan(v); };
      else if (name == "exp") f = [](double v) { return std::exp(v); };
      else if (name == "log") f = [](double v) { return std::log(v); };
      else if (name == "sqrt") f = [](double v) { return std::sqrt(v); };
      else if (name == "abs") f = [](double v) { return std::abs(v); };
      else fail("unknown name '" + name + "'");
      if (!accept('(')) fail("expected '(' after " + name);
      Fn arg = parse_sum();
      if (!accept(')')) fail("missing ')'");
      return [f, arg](const Vec3& x) { return f(arg(x)); };
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string text_;
  std::size_t pos_ = 0;
  Fn eval_;
};

/// Splits on commas outside parentheses.
inline std::vector<std::string> split_top_level(const std::string& s) {
  std::vector<std::string> out(1);
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) out.emplace_back();
    else out.back() += c;
  }
  return out;
}

}  // namespace vemmhd
