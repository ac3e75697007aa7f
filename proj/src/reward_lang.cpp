#include "codesign/reward_lang.hpp"

#include "codesign/error.hpp"
#include "codesign/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

namespace codesign::reward {

namespace {

constexpr std::array<std::string_view, 7> function_names = {"abs", "min",  "max",  "exp",
                                                            "tanh", "sqrt", "clamp"};
constexpr std::array<std::size_t, 7> function_arity = {1, 2, 2, 1, 1, 1, 3};

double checked(double v, const char* what)
{
    if (!std::isfinite(v))
        throw Error(Errc::EvalError, std::string("non-finite value in ") + what);
    return v;
}

double apply_binary(BinaryOp op, double a, double b)
{
    switch (op) {
    case BinaryOp::add: return checked(a + b, "addition");
    case BinaryOp::sub: return checked(a - b, "subtraction");
    case BinaryOp::mul: return checked(a * b, "multiplication");
    case BinaryOp::div:
        if (b == 0.0)
            throw Error(Errc::EvalError, "division by zero");
        return checked(a / b, "division");
    }
    return 0.0;
}

double apply_call(Function fn, const double* args)
{
    switch (fn) {
    case Function::abs: return std::fabs(args[0]);
    case Function::min: return std::min(args[0], args[1]);
    case Function::max: return std::max(args[0], args[1]);
    case Function::exp: return checked(std::exp(args[0]), "exp");
    case Function::tanh: return std::tanh(args[0]);
    case Function::sqrt:
        if (args[0] < 0.0)
            throw Error(Errc::EvalError, "sqrt of a negative value");
        return std::sqrt(args[0]);
    case Function::clamp: return std::min(std::max(args[0], args[1]), args[2]);
    }
    return 0.0;
}

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    NodePtr parse_all()
    {
        auto node = parse_expr();
        skip_ws();
        if (pos_ != src_.size())
            throw SyntaxError(pos_, "unexpected '" + std::string(1, src_[pos_]) + "'");
        return node;
    }

private:
    void skip_ws()
    {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
            ++pos_;
    }

    bool accept(char c)
    {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c)
    {
        if (!accept(c)) {
            if (pos_ >= src_.size())
                throw SyntaxError(pos_, std::string("expected '") + c + "' before end of input");
            throw SyntaxError(pos_, std::string("expected '") + c + "'");
        }
    }

    NodePtr parse_expr()
    {
        auto lhs = parse_term();
        for (;;) {
            if (accept('+'))
                lhs = make_binary(BinaryOp::add, lhs, parse_term());
            else if (accept('-'))
                lhs = make_binary(BinaryOp::sub, lhs, parse_term());
            else
                return lhs;
        }
    }

    NodePtr parse_term()
    {
        auto lhs = parse_unary();
        for (;;) {
            if (accept('*'))
                lhs = make_binary(BinaryOp::mul, lhs, parse_unary());
            else if (accept('/'))
                lhs = make_binary(BinaryOp::div, lhs, parse_unary());
            else
                return lhs;
        }
    }

    NodePtr parse_unary()
    {
        if (accept('-'))
            return make_negate(parse_unary());
        return parse_primary();
    }

    NodePtr parse_primary()
    {
        skip_ws();
        if (pos_ >= src_.size())
            throw SyntaxError(pos_, "unexpected end of input");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            auto inner = parse_expr();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            return parse_identifier();
        throw SyntaxError(pos_, "unexpected '" + std::string(1, c) + "'");
    }

    NodePtr parse_number()
    {
        const std::size_t start = pos_;
        auto digits = [this] {
            std::size_t n = 0;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                ++pos_;
                ++n;
            }
            return n;
        };
        std::size_t mantissa = digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            mantissa += digits();
        }
        if (mantissa == 0)
            throw SyntaxError(start, "malformed number");
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-'))
                ++pos_;
            if (digits() == 0)
                pos_ = save;
        }
        double value = 0.0;
        if (!parse_real(src_.substr(start, pos_ - start), value) || !std::isfinite(value))
            throw SyntaxError(start, "malformed number");
        return make_literal(value);
    }

    NodePtr parse_identifier()
    {
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
            ++pos_;
        std::string name(src_.substr(start, pos_ - start));
        if (!accept('('))
            return make_variable(std::move(name));

        auto it = std::find(function_names.begin(), function_names.end(), name);
        if (it == function_names.end())
            throw Error(Errc::UnknownFunction, "'" + name + "' at position " + std::to_string(start));
        std::vector<NodePtr> args;
        if (!accept(')')) {
            do {
                args.push_back(parse_expr());
            } while (accept(','));
            expect(')');
        }
        return make_call(static_cast<Function>(it - function_names.begin()), std::move(args));
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

void print_node(const Node& node, std::string& out)
{
    std::visit(
        [&out](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                out += format_real(n.value);
            } else if constexpr (std::is_same_v<T, Variable>) {
                out += n.name;
            } else if constexpr (std::is_same_v<T, Negate>) {
                out += "(-";
                print_node(*n.operand, out);
                out += ')';
            } else if constexpr (std::is_same_v<T, Binary>) {
                static constexpr const char* ops[] = {" + ", " - ", " * ", " / "};
                out += '(';
                print_node(*n.lhs, out);
                out += ops[static_cast<int>(n.op)];
                print_node(*n.rhs, out);
                out += ')';
            } else {
                out += name_of(n.fn);
                out += '(';
                for (std::size_t i = 0; i < n.args.size(); ++i) {
                    if (i)
                        out += ", ";
                    print_node(*n.args[i], out);
                }
                out += ')';
            }
        },
        node.kind);
}

template <typename Fn>
void for_each_variable(const Node& node, Fn&& fn)
{
    std::visit(
        [&fn](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Variable>) {
                fn(n.name);
            } else if constexpr (std::is_same_v<T, Negate>) {
                for_each_variable(*n.operand, fn);
            } else if constexpr (std::is_same_v<T, Binary>) {
                for_each_variable(*n.lhs, fn);
                for_each_variable(*n.rhs, fn);
            } else if constexpr (std::is_same_v<T, Call>) {
                for (const auto& a : n.args)
                    for_each_variable(*a, fn);
            }
        },
        node.kind);
}

double eval_node(const Node& node, const StateEnv& env)
{
    return std::visit(
        [&env](const auto& n) -> double {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                return n.value;
            } else if constexpr (std::is_same_v<T, Variable>) {
                auto it = env.find(n.name);
                if (it == env.end())
                    throw Error(Errc::UnboundVariable, n.name);
                return checked(it->second, "variable");
            } else if constexpr (std::is_same_v<T, Negate>) {
                return -eval_node(*n.operand, env);
            } else if constexpr (std::is_same_v<T, Binary>) {
                const double a = eval_node(*n.lhs, env);
                const double b = eval_node(*n.rhs, env);
                return apply_binary(n.op, a, b);
            } else {
                std::array<double, 3> args{};
                for (std::size_t i = 0; i < n.args.size(); ++i)
                    args[i] = eval_node(*n.args[i], env);
                return apply_call(n.fn, args.data());
            }
        },
        node.kind);
}

} // namespace

std::string_view name_of(Function f) { return function_names[static_cast<std::size_t>(f)]; }
std::size_t arity_of(Function f) { return function_arity[static_cast<std::size_t>(f)]; }

bool operator==(const Node& a, const Node& b)
{
    if (a.kind.index() != b.kind.index())
        return false;
    return std::visit(
        [&b](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.kind);
            if constexpr (std::is_same_v<T, Literal>) {
                return x.value == y.value;
            } else if constexpr (std::is_same_v<T, Variable>) {
                return x.name == y.name;
            } else if constexpr (std::is_same_v<T, Negate>) {
                return *x.operand == *y.operand;
            } else if constexpr (std::is_same_v<T, Binary>) {
                return x.op == y.op && *x.lhs == *y.lhs && *x.rhs == *y.rhs;
            } else {
                if (x.fn != y.fn || x.args.size() != y.args.size())
                    return false;
                for (std::size_t i = 0; i < x.args.size(); ++i)
                    if (!(*x.args[i] == *y.args[i]))
                        return false;
                return true;
            }
        },
        a.kind);
}

NodePtr make_literal(double v) { return std::make_shared<const Node>(Node{Literal{v}}); }
NodePtr make_variable(std::string name)
{
    return std::make_shared<const Node>(Node{Variable{std::move(name)}});
}
NodePtr make_negate(NodePtr operand)
{
    return std::make_shared<const Node>(Node{Negate{std::move(operand)}});
}
NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs)
{
    return std::make_shared<const Node>(Node{Binary{op, std::move(lhs), std::move(rhs)}});
}
NodePtr make_call(Function fn, std::vector<NodePtr> args)
{
    if (args.size() != arity_of(fn))
        throw Error(Errc::ArityError, std::string(name_of(fn)) + " takes " +
                                          std::to_string(arity_of(fn)) + " argument(s), got " +
                                          std::to_string(args.size()));
    return std::make_shared<const Node>(Node{Call{fn, std::move(args)}});
}

Ast parse(std::string_view source) { return Ast(Parser(source).parse_all()); }

std::string print(const Ast& ast)
{
    std::string out;
    print_node(ast.root(), out);
    return out;
}

std::set<std::string> free_vars(const Ast& ast)
{
    std::set<std::string> vars;
    for_each_variable(ast.root(), [&vars](const std::string& v) { vars.insert(v); });
    return vars;
}

void check_variables(const Ast& ast, const std::set<std::string>& allowed)
{
    for (const auto& v : free_vars(ast))
        if (!allowed.contains(v))
            throw Error(Errc::UnboundVariable, v);
}

double eval(const Ast& ast, const StateEnv& env) { return eval_node(ast.root(), env); }

BoundExpression::BoundExpression(const Ast& ast, std::span<const std::string> slots)
{
    emit(ast.root(), slots);
    std::size_t depth = 0;
    for (const auto& ins : program_) {
        switch (ins.code) {
        case Code::push_const:
        case Code::push_var: ++depth; break;
        case Code::neg: break;
        case Code::call: depth -= arity_of(ins.fn) - 1; break;
        default: --depth; break;
        }
        max_depth_ = std::max(max_depth_, depth);
    }
}

void BoundExpression::emit(const Node& node, std::span<const std::string> slots)
{
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                program_.push_back({Code::push_const, Function::abs, 0, n.value});
            } else if constexpr (std::is_same_v<T, Variable>) {
                auto it = std::find(slots.begin(), slots.end(), n.name);
                if (it == slots.end())
                    throw Error(Errc::UnboundVariable, n.name);
                program_.push_back(
                    {Code::push_var, Function::abs, static_cast<std::uint32_t>(it - slots.begin())});
            } else if constexpr (std::is_same_v<T, Negate>) {
                emit(*n.operand, slots);
                program_.push_back({Code::neg});
            } else if constexpr (std::is_same_v<T, Binary>) {
                emit(*n.lhs, slots);
                emit(*n.rhs, slots);
                static constexpr Code codes[] = {Code::add, Code::sub, Code::mul, Code::div};
                program_.push_back({codes[static_cast<int>(n.op)]});
            } else {
                for (const auto& a : n.args)
                    emit(*a, slots);
                program_.push_back({Code::call, n.fn});
            }
        },
        node.kind);
}

double BoundExpression::operator()(std::span<const double> values) const
{
    std::array<double, 64> small{};
    std::vector<double> large;
    double* stack = small.data();
    if (max_depth_ > small.size()) {
        large.resize(max_depth_);
        stack = large.data();
    }
    std::size_t top = 0;
    for (const auto& ins : program_) {
        switch (ins.code) {
        case Code::push_const: stack[top++] = ins.value; break;
        case Code::push_var: stack[top++] = checked(values[ins.index], "variable"); break;
        case Code::neg: stack[top - 1] = -stack[top - 1]; break;
        case Code::add:
        case Code::sub:
        case Code::mul:
        case Code::div: {
            const double b = stack[--top];
            const double a = stack[top - 1];
            const auto op = static_cast<BinaryOp>(static_cast<int>(ins.code) -
                                                  static_cast<int>(Code::add));
            stack[top - 1] = apply_binary(op, a, b);
            break;
        }
        case Code::call: {
            const std::size_t n = arity_of(ins.fn);
            top -= n;
            stack[top] = apply_call(ins.fn, stack + top);
            ++top;
            break;
        }
        }
    }
    return stack[0];
}

} // namespace codesign::reward
