#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmot/error.hpp"

namespace mmot {

/// Arithmetic expression over a fixed set of named variables, used for custom
/// payoffs and custom auxiliary recursions in problem-spec files.
///
/// Supports numbers, variables, + - * / ^, unary minus, comparisons
/// (< <= > >= == !=, evaluating to 1 or 0) and the functions abs, exp, log,
/// sqrt, max, min, pos (positive part) and ind (1 if argument >= 0).
class Expression {
public:
    Expression() = default;

    Expression(std::string source, std::vector<std::string> variables)
        : source_(std::move(source)), variables_(std::move(variables)) {
        pos_ = 0;
        root_ = parse_comparison();
        skip_space();
        if (pos_ != source_.size()) fail("unexpected trailing input");
    }

    double operator()(std::span<const double> values) const {
        if (!root_) throw SpecError("empty expression");
        if (values.size() != variables_.size()) throw SpecError("expression arity mismatch");
        return eval(*root_, values);
    }

    const std::string& source() const { return source_; }

private:
    enum class Op { Number, Var, Neg, Add, Sub, Mul, Div, Pow, Lt, Le, Gt, Ge, Eq, Ne, Call };

    struct Node {
        Op op = Op::Number;
        double value = 0.0;
        std::size_t slot = 0;
        std::string fn;
        std::vector<std::shared_ptr<const Node>> args;
    };
    using NodePtr = std::shared_ptr<const Node>;

    [[noreturn]] void fail(const std::string& what) const {
        throw SpecError("expression '" + source_ + "': " + what + " at offset " + std::to_string(pos_));
    }

    void skip_space() {
        while (pos_ < source_.size() && std::isspace(static_cast<unsigned char>(source_[pos_]))) ++pos_;
    }

    bool accept(const char* tok) {
        skip_space();
        const std::string t(tok);
        if (source_.compare(pos_, t.size(), t) == 0) {
            pos_ += t.size();
            return true;
        }
        return false;
    }

    static NodePtr binary(Op op, NodePtr a, NodePtr b) {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->args = {std::move(a), std::move(b)};
        return n;
    }

    NodePtr parse_comparison() {
        NodePtr lhs = parse_additive();
        struct Cmp { const char* tok; Op op; };
        static constexpr Cmp kOps[] = {{"<=", Op::Le}, {">=", Op::Ge}, {"==", Op::Eq},
                                       {"!=", Op::Ne}, {"<", Op::Lt},  {">", Op::Gt}};
        for (const auto& c : kOps) {
            if (accept(c.tok)) return binary(c.op, lhs, parse_additive());
        }
        return lhs;
    }

    NodePtr parse_additive() {
        NodePtr lhs = parse_multiplicative();
        for (;;) {
            if (accept("+")) lhs = binary(Op::Add, lhs, parse_multiplicative());
            else if (accept("-")) lhs = binary(Op::Sub, lhs, parse_multiplicative());
            else return lhs;
        }
    }

    NodePtr parse_multiplicative() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (accept("*")) lhs = binary(Op::Mul, lhs, parse_unary());
            else if (accept("/")) lhs = binary(Op::Div, lhs, parse_unary());
            else return lhs;
        }
    }

    NodePtr parse_unary() {
        if (accept("-")) {
            auto n = std::make_shared<Node>();
            n->op = Op::Neg;
            n->args = {parse_unary()};
            return n;
        }
        if (accept("+")) return parse_unary();
        NodePtr base = parse_primary();
        if (accept("^")) return binary(Op::Pow, base, parse_unary());
        return base;
    }

    NodePtr parse_primary() {
        skip_space();
        if (pos_ >= source_.size()) fail("unexpected end");
        const char c = source_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr inner = parse_comparison();
            if (!accept(")")) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(source_.substr(pos_), &used);
            } catch (const std::exception&) {
                fail("bad number");
            }
            pos_ += used;
            auto n = std::make_shared<Node>();
            n->value = v;
            return n;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            const std::size_t start = pos_;
            while (pos_ < source_.size() &&
                   (std::isalnum(static_cast<unsigned char>(source_[pos_])) || source_[pos_] == '_'))
                ++pos_;
            std::string name = source_.substr(start, pos_ - start);
            if (accept("(")) {
                auto n = std::make_shared<Node>();
                n->op = Op::Call;
                n->fn = name;
                if (!accept(")")) {
                    do {
                        n->args.push_back(parse_comparison());
                    } while (accept(","));
                    if (!accept(")")) fail("expected ')' after arguments");
                }
                check_call(*n);
                return n;
            }
            for (std::size_t i = 0; i < variables_.size(); ++i) {
                if (variables_[i] == name) {
                    auto n = std::make_shared<Node>();
                    n->op = Op::Var;
                    n->slot = i;
                    return n;
                }
            }
            fail("unknown variable '" + name + "'");
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    void check_call(const Node& n) const {
        const std::size_t k = n.args.size();
        if (n.fn == "max" || n.fn == "min") {
            if (k < 2) fail(n.fn + " needs at least two arguments");
        } else if (n.fn == "abs" || n.fn == "exp" || n.fn == "log" || n.fn == "sqrt" || n.fn == "pos" ||
                   n.fn == "ind") {
            if (k != 1) fail(n.fn + " takes one argument");
        } else {
            fail("unknown function '" + n.fn + "'");
        }
    }

    static double eval(const Node& n, std::span<const double> v) {
        switch (n.op) {
            case Op::Number: return n.value;
            case Op::Var: return v[n.slot];
            case Op::Neg: return -eval(*n.args[0], v);
            case Op::Add: return eval(*n.args[0], v) + eval(*n.args[1], v);
            case Op::Sub: return eval(*n.args[0], v) - eval(*n.args[1], v);
            case Op::Mul: return eval(*n.args[0], v) * eval(*n.args[1], v);
            case Op::Div: return eval(*n.args[0], v) / eval(*n.args[1], v);
            case Op::Pow: return std::pow(eval(*n.args[0], v), eval(*n.args[1], v));
            case Op::Lt: return eval(*n.args[0], v) < eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Le: return eval(*n.args[0], v) <= eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Gt: return eval(*n.args[0], v) > eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Ge: return eval(*n.args[0], v) >= eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Eq: return eval(*n.args[0], v) == eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Ne: return eval(*n.args[0], v) != eval(*n.args[1], v) ? 1.0 : 0.0;
            case Op::Call: break;
        }
        const double a = eval(*n.args[0], v);
        if (n.fn == "abs") return std::abs(a);
        if (n.fn == "exp") return std::exp(a);
        if (n.fn == "log") return std::log(a);
        if (n.fn == "sqrt") return std::sqrt(a);
        if (n.fn == "pos") return a > 0.0 ? a : 0.0;
        if (n.fn == "ind") return a >= 0.0 ? 1.0 : 0.0;
        double acc = a;
        for (std::size_t i = 1; i < n.args.size(); ++i) {
            const double b = eval(*n.args[i], v);
            acc = n.fn == "max" ? std::max(acc, b) : std::min(acc, b);
        }
        return acc;
    }

    std::string source_;
    std::vector<std::string> variables_;
    std::size_t pos_ = 0;
    NodePtr root_;
};

}  // namespace mmot
