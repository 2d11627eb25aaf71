#include <functional>
#include <sstream>

#include "structkit/errors.hpp"
#include "structkit/minilang.hpp"

namespace structkit::minilang {

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::Program: return "program";
    case NodeType::AssignStmt: return "assign_stmt";
    case NodeType::IfStmt: return "if_stmt";
    case NodeType::WhileStmt: return "while_stmt";
    case NodeType::ReturnStmt: return "return_stmt";
    case NodeType::BinaryExpr: return "binary_expr";
    case NodeType::ParenExpr: return "paren_expr";
    case NodeType::Block: return "block";
    case NodeType::Identifier: return "identifier";
    case NodeType::Number: return "number";
    case NodeType::Keyword: return "keyword";
    case NodeType::Operator: return "operator";
    case NodeType::Punct: return "punct";
  }
  return "?";
}

Ast::Ast(std::vector<AstNode> nodes, std::vector<Lexeme> lexemes)
    : nodes_(std::move(nodes)), lexemes_(std::move(lexemes)) {
  leaves_.assign(lexemes_.size(), -1);
  for (const auto& n : nodes_) {
    if (n.lexeme) leaves_.at(static_cast<std::size_t>(*n.lexeme)) = n.id;
  }
}

std::vector<int> Ast::path_from_root(int id) const {
  std::vector<int> path;
  for (std::optional<int> cur = id; cur; cur = node(*cur).parent) path.push_back(*cur);
  return {path.rbegin(), path.rend()};
}

namespace {

// Builds nodes in an unordered scratch arena; finish() renumbers them in pre-order.
class Parser {
 public:
  explicit Parser(std::span<const Lexeme> lexemes) : lex_(lexemes) {}

  Ast run() {
    const int root = make(NodeType::Program);
    while (pos_ < lex_.size()) attach(root, statement());
    return finish(root);
  }

 private:
  std::span<const Lexeme> lex_;
  std::size_t pos_ = 0;
  std::vector<AstNode> scratch_;

  int make(NodeType type) {
    AstNode n;
    n.id = static_cast<int>(scratch_.size());
    n.type = type;
    scratch_.push_back(std::move(n));
    return scratch_.back().id;
  }

  void attach(int parent, int child) {
    scratch_[static_cast<std::size_t>(parent)].children.push_back(child);
    scratch_[static_cast<std::size_t>(child)].parent = parent;
  }

  std::size_t error_position() const {
    if (pos_ < lex_.size()) return lex_[pos_].begin;
    return lex_.empty() ? 0 : lex_.back().end;
  }

  [[noreturn]] void fail(std::vector<std::string> expected) const {
    throw ParseError(error_position(), std::move(expected));
  }

  bool peek(LexemeKind kind, std::string_view text = {}) const {
    if (pos_ >= lex_.size()) return false;
    const auto& l = lex_[pos_];
    return l.kind == kind && (text.empty() || l.text == text);
  }

  int leaf_for_current() {
    const auto& l = lex_[pos_];
    NodeType type = NodeType::Punct;
    switch (l.kind) {
      case LexemeKind::Ident: type = NodeType::Identifier; break;
      case LexemeKind::Number: type = NodeType::Number; break;
      case LexemeKind::Keyword: type = NodeType::Keyword; break;
      case LexemeKind::Operator: type = NodeType::Operator; break;
      case LexemeKind::Punct: type = NodeType::Punct; break;
    }
    const int id = make(type);
    scratch_[static_cast<std::size_t>(id)].lexeme = static_cast<int>(pos_);
    ++pos_;
    return id;
  }

  int expect(LexemeKind kind, std::string_view text) {
    if (!peek(kind, text)) {
      fail({text.empty() ? std::string(to_string(kind)) : "'" + std::string(text) + "'"});
    }
    return leaf_for_current();
  }

  int statement() {
    if (peek(LexemeKind::Ident)) return assign();
    if (peek(LexemeKind::Keyword, "if")) return if_stmt();
    if (peek(LexemeKind::Keyword, "while")) return while_stmt();
    if (peek(LexemeKind::Keyword, "return")) return return_stmt();
    fail({"IDENT", "'if'", "'while'", "'return'"});
  }

  int assign() {
    const int n = make(NodeType::AssignStmt);
    attach(n, expect(LexemeKind::Ident, {}));
    attach(n, expect(LexemeKind::Operator, "="));
    attach(n, expr());
    attach(n, expect(LexemeKind::Punct, ";"));
    return n;
  }

  int block() {
    const int n = make(NodeType::Block);
    attach(n, expect(LexemeKind::Punct, "{"));
    while (!peek(LexemeKind::Punct, "}")) {
      if (pos_ >= lex_.size()) fail({"'}'"});
      attach(n, statement());
    }
    attach(n, expect(LexemeKind::Punct, "}"));
    return n;
  }

  void condition(int n) {
    attach(n, expect(LexemeKind::Punct, "("));
    attach(n, expr());
    attach(n, expect(LexemeKind::Punct, ")"));
  }

  int if_stmt() {
    const int n = make(NodeType::IfStmt);
    attach(n, expect(LexemeKind::Keyword, "if"));
    condition(n);
    attach(n, block());
    if (peek(LexemeKind::Keyword, "else")) {
      attach(n, leaf_for_current());
      attach(n, block());
    }
    return n;
  }

  int while_stmt() {
    const int n = make(NodeType::WhileStmt);
    attach(n, expect(LexemeKind::Keyword, "while"));
    condition(n);
    attach(n, block());
    return n;
  }

  int return_stmt() {
    const int n = make(NodeType::ReturnStmt);
    attach(n, expect(LexemeKind::Keyword, "return"));
    attach(n, expr());
    attach(n, expect(LexemeKind::Punct, ";"));
    return n;
  }

  bool peek_any_operator(std::initializer_list<std::string_view> ops) const {
    for (auto op : ops) {
      if (peek(LexemeKind::Operator, op)) return true;
    }
    return false;
  }

  int binary_chain(int (Parser::*operand)(), std::initializer_list<std::string_view> ops) {
    int lhs = (this->*operand)();
    while (peek_any_operator(ops)) {
      const int n = make(NodeType::BinaryExpr);
      attach(n, lhs);
      attach(n, leaf_for_current());
      attach(n, (this->*operand)());
      lhs = n;
    }
    return lhs;
  }

  int expr() { return binary_chain(&Parser::term, {"+", "-", "<", "=="}); }
  int term() { return binary_chain(&Parser::factor, {"*", "/"}); }

  int factor() {
    if (peek(LexemeKind::Ident) || peek(LexemeKind::Number)) return leaf_for_current();
    if (peek(LexemeKind::Punct, "(")) {
      const int n = make(NodeType::ParenExpr);
      attach(n, leaf_for_current());
      attach(n, expr());
      attach(n, expect(LexemeKind::Punct, ")"));
      return n;
    }
    fail({"IDENT", "NUMBER", "'('"});
  }

  Ast finish(int root) {
    std::vector<int> order;
    order.reserve(scratch_.size());
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      order.push_back(id);
      const auto& kids = scratch_[static_cast<std::size_t>(id)].children;
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
    std::vector<int> remap(scratch_.size(), -1);
    for (std::size_t i = 0; i < order.size(); ++i) remap[static_cast<std::size_t>(order[i])] = static_cast<int>(i);

    std::vector<AstNode> nodes(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      AstNode n = scratch_[static_cast<std::size_t>(order[i])];
      n.id = static_cast<int>(i);
      if (n.parent) n.parent = remap[static_cast<std::size_t>(*n.parent)];
      for (auto& c : n.children) c = remap[static_cast<std::size_t>(c)];
      nodes[i] = std::move(n);
    }
    return Ast(std::move(nodes), std::vector<Lexeme>(lex_.begin(), lex_.end()));
  }
};

}  // namespace

Ast parse(std::span<const Lexeme> lexemes) { return Parser(lexemes).run(); }

Ast parse_source(std::string_view source) {
  const auto lexemes = lex(source);
  return parse(lexemes);
}

std::string dump_ast(const Ast& ast) {
  std::ostringstream out;
  std::function<void(int, int)> visit = [&](int id, int depth) {
    const auto& n = ast.node(id);
    out << std::string(static_cast<std::size_t>(depth) * 2, ' ') << n.id << ' ' << to_string(n.type)
        << " parent=" << (n.parent ? *n.parent : -1);
    if (n.lexeme) out << ' ' << ast.lexemes()[static_cast<std::size_t>(*n.lexeme)].text;
    out << '\n';
    for (int c : n.children) visit(c, depth + 1);
  };
  if (ast.size() > 0) visit(ast.root(), 0);
  return out.str();
}

}  // namespace structkit::minilang
