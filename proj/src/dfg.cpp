#include <map>
#include <set>

#include "structkit/structure.hpp"

namespace structkit::structure {

using minilang::Ast;
using minilang::AstNode;
using minilang::NodeType;

std::size_t BoolMatrix::count() const {
  std::size_t n = 0;
  for (auto v : data_) n += v;
  return n;
}

std::size_t BoolMatrix::row_sum(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols_; ++c) n += data_[r * cols_ + c];
  return n;
}

std::size_t BoolMatrix::col_sum(std::size_t c) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows_; ++r) n += data_[r * cols_ + c];
  return n;
}

std::vector<std::pair<int, int>> BoolMatrix::coordinates() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) {
      if (data_[r * cols_ + c]) out.emplace_back(static_cast<int>(r), static_cast<int>(c));
    }
  }
  return out;
}

namespace {

// name -> occurrence ids of definitions that may reach the current point
using Reaching = std::map<std::string, std::set<int>>;

Reaching merge(const Reaching& a, const Reaching& b) {
  Reaching out = a;
  for (const auto& [name, defs] : b) out[name].insert(defs.begin(), defs.end());
  return out;
}

class DataFlow {
 public:
  DataFlow(const Ast& ast, Dfg& dfg, std::vector<int> occurrence_of_leaf)
      : ast_(ast), dfg_(dfg), occurrence_of_leaf_(std::move(occurrence_of_leaf)) {}

  // Returns the state after the statement; an empty map means control cannot
  // fall through (after a return).
  Reaching statement(int id, const Reaching& in) {
    const AstNode& n = ast_.node(id);
    switch (n.type) {
      case NodeType::AssignStmt: {
        const int def = occurrence(n.children[0]);
        std::vector<int> rhs;
        collect(n.children[2], rhs);
        use_all(rhs, in);
        for (int r : rhs) set(dfg_.computed_from, def, r);
        Reaching out = in;
        out[dfg_.variables[static_cast<std::size_t>(def)].name] = {def};
        return out;
      }
      case NodeType::ReturnStmt: {
        std::vector<int> uses;
        collect(n.children[1], uses);
        use_all(uses, in);
        return {};
      }
      case NodeType::IfStmt: {
        std::vector<int> uses;
        collect(n.children[2], uses);
        use_all(uses, in);
        const Reaching then_out = block(n.children[4], in);
        const Reaching else_out = n.children.size() > 5 ? block(n.children[6], in) : in;
        return merge(then_out, else_out);
      }
      case NodeType::WhileStmt: {
        Reaching head = in;
        while (true) {
          std::vector<int> uses;
          collect(n.children[2], uses);
          use_all(uses, head);
          const Reaching next = merge(in, block(n.children[4], head));
          if (next == head) break;
          head = next;
        }
        return head;
      }
      default:
        return in;
    }
  }

  Reaching block(int id, Reaching state) {
    for (int c : ast_.node(id).children) {
      if (!ast_.node(c).is_leaf()) state = statement(c, state);
    }
    return state;
  }

 private:
  const Ast& ast_;
  Dfg& dfg_;
  std::vector<int> occurrence_of_leaf_;

  int occurrence(int node_id) const {
    return occurrence_of_leaf_[static_cast<std::size_t>(*ast_.node(node_id).lexeme)];
  }

  void collect(int id, std::vector<int>& out) const {
    const AstNode& n = ast_.node(id);
    if (n.type == NodeType::Identifier) {
      out.push_back(occurrence(id));
      return;
    }
    for (int c : n.children) collect(c, out);
  }

  void use_all(const std::vector<int>& uses, const Reaching& state) {
    for (int u : uses) {
      auto it = state.find(dfg_.variables[static_cast<std::size_t>(u)].name);
      if (it == state.end()) continue;
      for (int d : it->second) set(dfg_.comes_from, u, d);
    }
  }

  static void set(BoolMatrix& m, int i, int j) {
    if (i != j) m.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
};

}  // namespace

Dfg build_dfg(const Ast& ast, std::span<const minilang::Token> tokens) {
  Dfg dfg;
  const auto& lexemes = ast.lexemes();
  std::vector<int> occurrence_of_leaf(lexemes.size(), -1);
  std::size_t t = 0;
  for (std::size_t leaf = 0; leaf < lexemes.size(); ++leaf) {
    if (lexemes[leaf].kind != minilang::LexemeKind::Ident) continue;
    while (t < tokens.size() && tokens[t].leaf != static_cast<int>(leaf)) ++t;
    VariableOccurrence v;
    v.leaf = static_cast<int>(leaf);
    v.name = lexemes[leaf].text;
    v.token_begin = static_cast<int>(t);
    while (t < tokens.size() && tokens[t].leaf == static_cast<int>(leaf)) ++t;
    v.token_end = static_cast<int>(t);
    const auto& node = ast.node(ast.leaves()[leaf]);
    v.is_definition = node.parent && ast.node(*node.parent).type == NodeType::AssignStmt &&
                      ast.node(*node.parent).children.front() == node.id;
    occurrence_of_leaf[leaf] = static_cast<int>(dfg.variables.size());
    dfg.variables.push_back(std::move(v));
  }
  const std::size_t nv = dfg.variables.size();
  dfg.comes_from = BoolMatrix(nv, nv);
  dfg.computed_from = BoolMatrix(nv, nv);

  DataFlow flow(ast, dfg, std::move(occurrence_of_leaf));
  flow.block(ast.root(), {});

  dfg.adjacency = BoolMatrix(nv, nv);
  for (std::size_t i = 0; i < nv; ++i) {
    for (std::size_t j = 0; j < nv; ++j) dfg.adjacency.set(i, j, dfg.comes_from(i, j) || dfg.computed_from(i, j));
  }
  dfg.link = link_dfg(dfg, tokens.size());
  return dfg;
}

BoolMatrix link_dfg(const Dfg& dfg, std::size_t n_tokens) {
  BoolMatrix link(n_tokens, dfg.variables.size());
  for (std::size_t j = 0; j < dfg.variables.size(); ++j) {
    const auto& v = dfg.variables[j];
    for (int t = v.token_begin; t < v.token_end; ++t) link.set(static_cast<std::size_t>(t), j);
  }
  return link;
}

BoolMatrix link_ast(std::span<const minilang::Token> tokens, std::size_t n_leaves) {
  BoolMatrix link(tokens.size(), n_leaves);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].leaf >= 0) link.set(i, static_cast<std::size_t>(tokens[i].leaf));
  }
  return link;
}

BoolMatrix data_flow_targets(const BoolMatrix& link, const BoolMatrix& adjacency) {
  // y = L D L^T, thresholded
  const std::size_t n = link.rows();
  const std::size_t v = link.cols();
  BoolMatrix ld(n, v);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < v; ++a) {
      if (!link(i, a)) continue;
      for (std::size_t b = 0; b < v; ++b) {
        if (adjacency(a, b)) ld.set(i, b);
      }
    }
  }
  BoolMatrix y(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t b = 0; b < v; ++b) {
        if (ld(i, b) && link(j, b)) {
          y.set(i, j);
          break;
        }
      }
    }
  }
  return y;
}

}  // namespace structkit::structure
