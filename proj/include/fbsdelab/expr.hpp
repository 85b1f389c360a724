#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

// Arithmetic expression over named scalar variables, compiled once to a
// postfix program and evaluated with a fixed-size stack. Supported syntax:
// + - * / ^ (right-associative power), unary minus, parentheses, numeric
// literals, and the functions exp(a), min(a,b), max(a,b).
class Expression {
 public:
  Expression(std::string source, std::vector<std::string> variables)
      : source_(std::move(source)), variables_(std::move(variables)) {
    Parser parser(source_, variables_, program_, constants_);
    parser.run();
    max_depth_ = compute_depth();
    if (max_depth_ > kStackSize)
      throw ParseError("expression too deeply nested", 1, 1);
  }

  // values aligns with the variable list given at construction.
  double eval(std::span<const double> values) const {
    std::array<double, kStackSize> stack;
    std::size_t top = 0;
    for (const Op& op : program_) {
      switch (op.code) {
        case Code::kConst: stack[top++] = constants_[op.arg]; break;
        case Code::kVar: stack[top++] = values[op.arg]; break;
        case Code::kNeg: stack[top - 1] = -stack[top - 1]; break;
        case Code::kExp: stack[top - 1] = std::exp(stack[top - 1]); break;
        case Code::kAdd: --top; stack[top - 1] += stack[top]; break;
        case Code::kSub: --top; stack[top - 1] -= stack[top]; break;
        case Code::kMul: --top; stack[top - 1] *= stack[top]; break;
        case Code::kDiv: --top; stack[top - 1] /= stack[top]; break;
        case Code::kPow: --top; stack[top - 1] = std::pow(stack[top - 1], stack[top]); break;
        case Code::kMin: --top; stack[top - 1] = std::fmin(stack[top - 1], stack[top]); break;
        case Code::kMax: --top; stack[top - 1] = std::fmax(stack[top - 1], stack[top]); break;
      }
    }
    return stack[0];
  }

  const std::string& source() const noexcept { return source_; }
  const std::vector<std::string>& variables() const noexcept { return variables_; }

 private:
  static constexpr std::size_t kStackSize = 64;

  enum class Code : unsigned char {
    kConst, kVar, kNeg, kExp, kAdd, kSub, kMul, kDiv, kPow, kMin, kMax
  };
  struct Op {
    Code code;
    unsigned arg = 0;
  };

  class Parser {
   public:
    Parser(const std::string& src, const std::vector<std::string>& vars,
           std::vector<Op>& program, std::vector<double>& constants)
        : src_(src), vars_(vars), program_(program), constants_(constants) {}

    void run() {
      skip_ws();
      if (at_end()) fail("empty expression");
      expression();
      skip_ws();
      if (!at_end()) fail("unexpected trailing input");
    }

   private:
    void expression() {
      term();
      for (;;) {
        skip_ws();
        if (consume('+')) {
          term();
          emit(Code::kAdd);
        } else if (consume('-')) {
          term();
          emit(Code::kSub);
        } else {
          return;
        }
      }
    }

    void term() {
      factor();
      for (;;) {
        skip_ws();
        if (consume('*')) {
          factor();
          emit(Code::kMul);
        } else if (consume('/')) {
          factor();
          emit(Code::kDiv);
        } else {
          return;
        }
      }
    }

    void factor() {
      unary();
      skip_ws();
      if (consume('^')) {
        factor();  // right-associative
        emit(Code::kPow);
      }
    }

    void unary() {
      skip_ws();
      if (consume('-')) {
        unary();
        emit(Code::kNeg);
      } else {
        primary();
      }
    }

    void primary() {
      skip_ws();
      if (at_end()) fail("unexpected end of expression");
      const char c = src_[pos_];
      if (c == '(') {
        ++pos_;
        expression();
        expect(')');
        return;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        number();
        return;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        identifier();
        return;
      }
      fail(std::string("unexpected character '") + c + "'");
    }

    void number() {
      const char* begin = src_.c_str() + pos_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) fail("malformed number");
      pos_ += static_cast<std::size_t>(end - begin);
      constants_.push_back(v);
      emit(Code::kConst, static_cast<unsigned>(constants_.size() - 1));
    }

    void identifier() {
      const std::size_t start = pos_;
      while (!at_end() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                           src_[pos_] == '_'))
        ++pos_;
      const std::string name = src_.substr(start, pos_ - start);
      skip_ws();
      if (!at_end() && src_[pos_] == '(') {
        ++pos_;
        if (name == "exp") {
          expression();
          expect(')');
          emit(Code::kExp);
        } else if (name == "min" || name == "max") {
          expression();
          skip_ws();
          expect(',');
          expression();
          expect(')');
          emit(name == "min" ? Code::kMin : Code::kMax);
        } else {
          fail_at(start, "unknown function '" + name + "'");
        }
        return;
      }
      for (std::size_t i = 0; i < vars_.size(); ++i)
        if (vars_[i] == name) {
          emit(Code::kVar, static_cast<unsigned>(i));
          return;
        }
      fail_at(start, "unknown variable '" + name + "'");
    }

    void emit(Code code, unsigned arg = 0) { program_.push_back({code, arg}); }

    bool at_end() const noexcept { return pos_ >= src_.size(); }
    void skip_ws() {
      while (!at_end() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    bool consume(char c) {
      if (!at_end() && src_[pos_] == c) {
        ++pos_;
        return true;
      }
      return false;
    }
    void expect(char c) {
      skip_ws();
      if (!consume(c)) fail(std::string("expected '") + c + "'");
    }

    [[noreturn]] void fail(const std::string& what) const { fail_at(pos_, what); }
    [[noreturn]] void fail_at(std::size_t offset, const std::string& what) const {
      int line = 1, col = 1;
      for (std::size_t i = 0; i < offset && i < src_.size(); ++i) {
        if (src_[i] == '\n') {
          ++line;
          col = 1;
        } else {
          ++col;
        }
      }
      throw ParseError(what, line, col);
    }

    const std::string& src_;
    const std::vector<std::string>& vars_;
    std::vector<Op>& program_;
    std::vector<double>& constants_;
    std::size_t pos_ = 0;
  };

  std::size_t compute_depth() const {
    std::size_t depth = 0, peak = 0;
    for (const Op& op : program_) {
      switch (op.code) {
        case Code::kConst:
        case Code::kVar:
          peak = std::max(peak, ++depth);
          break;
        case Code::kNeg:
        case Code::kExp:
          break;
        default:
          --depth;  // binary ops
          break;
      }
    }
    return peak;
  }

  std::string source_;
  std::vector<std::string> variables_;
  std::vector<Op> program_;
  std::vector<double> constants_;
  std::size_t max_depth_ = 0;
};

}  // namespace fbsdelab
