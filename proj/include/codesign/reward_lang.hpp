#pragma once

// Arithmetic reward expressions for the built-in evaluator.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | primary
//   primary := number | identifier | call | '(' expr ')'
//   call    := fn '(' expr (',' expr)* ')'
//
// Functions: abs/1, min/2, max/2, exp/1, tanh/1, sqrt/1, clamp/3.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace codesign::reward {

enum class BinaryOp : std::uint8_t { add, sub, mul, div };
enum class Function : std::uint8_t { abs, min, max, exp, tanh, sqrt, clamp };

std::string_view name_of(Function f);
std::size_t arity_of(Function f);

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Literal {
    double value;
};
struct Variable {
    std::string name;
};
struct Negate {
    NodePtr operand;
};
struct Binary {
    BinaryOp op;
    NodePtr lhs;
    NodePtr rhs;
};
struct Call {
    Function fn;
    std::vector<NodePtr> args;
};

struct Node {
    std::variant<Literal, Variable, Negate, Binary, Call> kind;
};

/// Structural equality (literal values compared exactly).
bool operator==(const Node& a, const Node& b);

/// Immutable parsed expression; cheap to copy and safe to share.
class Ast {
public:
    explicit Ast(NodePtr root) : root_(std::move(root)) {}

    const Node& root() const { return *root_; }

    friend bool operator==(const Ast& a, const Ast& b) { return *a.root_ == *b.root_; }

private:
    NodePtr root_;
};

NodePtr make_literal(double v);
NodePtr make_variable(std::string name);
NodePtr make_negate(NodePtr operand);
NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs);
NodePtr make_call(Function fn, std::vector<NodePtr> args); // throws ArityError

/// Throws SyntaxError (with byte position), UnknownFunction or ArityError.
Ast parse(std::string_view source);

/// Canonical text: binary and negation nodes fully parenthesized, literals
/// in shortest round-trip form. parse(print(a)) == a.
std::string print(const Ast& ast);

std::set<std::string> free_vars(const Ast& ast);

/// Throws UnboundVariable naming the first variable outside `allowed`.
void check_variables(const Ast& ast, const std::set<std::string>& allowed);

using StateEnv = std::map<std::string, double, std::less<>>;

/// Tree-walking evaluation. Throws UnboundVariable for a missing variable
/// and EvalError for division by zero, sqrt of a negative, or any
/// non-finite value (inputs included).
double eval(const Ast& ast, const StateEnv& env);

/// An expression compiled against a fixed variable layout; evaluating it
/// reads variables by slot instead of by name. Same error contract as eval.
class BoundExpression {
public:
    BoundExpression(const Ast& ast, std::span<const std::string> slots);

    double operator()(std::span<const double> values) const;

private:
    enum class Code : std::uint8_t { push_const, push_var, neg, add, sub, mul, div, call };
    struct Instr {
        Code code;
        Function fn = Function::abs;
        std::uint32_t index = 0;
        double value = 0.0;
    };

    void emit(const Node& node, std::span<const std::string> slots);

    std::vector<Instr> program_;
    std::size_t max_depth_ = 0;
};

} // namespace codesign::reward
