#include "oracles.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace oracle {

using structkit::minilang::Ast;
using structkit::minilang::NodeType;

std::vector<std::string> programs(std::size_t n, std::uint64_t seed, structkit::pipeline::GeneratorConfig cfg) {
  structkit::pipeline::ProgramGenerator gen(seed, cfg);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen.next().code);
  return out;
}

namespace {

std::map<int, int> occurrence_index(const Ast& ast) {
  std::map<int, int> occ;  // leaf node id -> occurrence
  for (int leaf : ast.leaves()) {
    if (ast.node(leaf).type == NodeType::Identifier) occ.emplace(leaf, static_cast<int>(occ.size()));
  }
  return occ;
}

void identifiers_under(const Ast& ast, int id, std::vector<int>& out) {
  const auto& n = ast.node(id);
  if (n.is_leaf()) {
    if (n.type == NodeType::Identifier) out.push_back(id);
    return;
  }
  for (int c : n.children) identifiers_under(ast, c, out);
}

struct Event {
  int occurrence = -1;  // -1 for join points
  bool def = false;
  std::string name;
};

struct Cfg {
  std::vector<Event> events;
  std::vector<std::vector<int>> succ;

  std::vector<int> add(const std::vector<int>& preds, Event e) {
    events.push_back(std::move(e));
    succ.emplace_back();
    const int n = static_cast<int>(events.size()) - 1;
    for (int p : preds) succ[static_cast<std::size_t>(p)].push_back(n);
    return {n};
  }
};

}  // namespace

BoolMatrix reaching_definitions(const Ast& ast) {
  const auto occ = occurrence_index(ast);
  Cfg g;
  const auto text = [&](int leaf) { return ast.lexemes()[static_cast<std::size_t>(*ast.node(leaf).lexeme)].text; };
  const auto uses = [&](int expr, std::vector<int> frontier) {
    std::vector<int> ids;
    identifiers_under(ast, expr, ids);
    for (int leaf : ids) frontier = g.add(frontier, {occ.at(leaf), false, text(leaf)});
    return frontier;
  };
  std::function<std::vector<int>(int, std::vector<int>)> stmts = [&](int parent, std::vector<int> frontier) {
    for (int id : ast.node(parent).children) {
      const auto& n = ast.node(id);
      switch (n.type) {
        case NodeType::AssignStmt:
          frontier = uses(n.children[2], frontier);
          frontier = g.add(frontier, {occ.at(n.children[0]), true, text(n.children[0])});
          break;
        case NodeType::ReturnStmt:
          uses(n.children[1], frontier);
          frontier.clear();  // nothing falls through a return
          break;
        case NodeType::IfStmt: {
          const auto cond = uses(n.children[2], frontier);
          auto merged = stmts(n.children[4], cond);
          const auto other = n.children.size() > 5 ? stmts(n.children[6], cond) : cond;
          merged.insert(merged.end(), other.begin(), other.end());
          frontier = merged;
          break;
        }
        case NodeType::WhileStmt: {
          const auto head = g.add(frontier, {});
          const auto cond = uses(n.children[2], head);
          for (int b : stmts(n.children[4], cond)) g.succ[static_cast<std::size_t>(b)].push_back(head[0]);
          frontier = cond;
          break;
        }
        default:
          break;
      }
    }
    return frontier;
  };
  stmts(ast.root(), {});

  const std::size_t n = g.events.size();
  std::vector<std::set<int>> in(n), out(n);
  std::vector<std::vector<int>> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int s : g.succ[i]) preds[static_cast<std::size_t>(s)].push_back(static_cast<int>(i));
  }
  std::vector<int> work;
  for (std::size_t i = 0; i < n; ++i) work.push_back(static_cast<int>(i));
  while (!work.empty()) {
    const auto i = static_cast<std::size_t>(work.back());
    work.pop_back();
    std::set<int> new_in;
    for (int p : preds[i]) new_in.insert(out[static_cast<std::size_t>(p)].begin(), out[static_cast<std::size_t>(p)].end());
    std::set<int> new_out;
    if (g.events[i].def) {
      for (int d : new_in) {
        if (g.events[static_cast<std::size_t>(d)].name != g.events[i].name) new_out.insert(d);
      }
      new_out.insert(static_cast<int>(i));
    } else {
      new_out = new_in;
    }
    in[i] = std::move(new_in);
    if (new_out != out[i]) {
      out[i] = std::move(new_out);
      for (int s : g.succ[i]) work.push_back(s);
    }
  }

  BoolMatrix d(occ.size(), occ.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = g.events[i];
    if (e.occurrence < 0 || e.def) continue;
    for (int def : in[i]) {
      const auto& de = g.events[static_cast<std::size_t>(def)];
      if (de.name == e.name) d.set(static_cast<std::size_t>(e.occurrence), static_cast<std::size_t>(de.occurrence));
    }
  }
  return d;
}

BoolMatrix computed_from(const Ast& ast) {
  const auto occ = occurrence_index(ast);
  BoolMatrix d(occ.size(), occ.size());
  for (const auto& n : ast.nodes()) {
    if (n.type != NodeType::AssignStmt) continue;
    std::vector<int> rhs;
    identifiers_under(ast, n.children[2], rhs);
    for (int r : rhs) d.set(static_cast<std::size_t>(occ.at(n.children[0])), static_cast<std::size_t>(occ.at(r)));
  }
  return d;
}

BoolMatrix flow_targets(const BoolMatrix& link, const BoolMatrix& adjacency) {
  const std::size_t t = link.rows(), v = link.cols();
  BoolMatrix y(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t a = 0; a < v; ++a) {
        for (std::size_t b = 0; b < v; ++b) {
          if (adjacency(a, b) && link(i, a) && link(j, b)) y.set(i, j);
        }
      }
    }
  }
  return y;
}

double similarity(const std::vector<int>& a, const std::vector<int>& b) {
  double c = 0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) c += a[k] == b[k] ? 1 : 0;
  return std::log(1.0 + c * c / (static_cast<double>(a.size()) * static_cast<double>(b.size())));
}

bool attention_allowed(const structkit::model::EncoderInput& in, std::size_t x, std::size_t y) {
  enum Seg { Special, Code, Leaf, Var };
  const std::size_t s = in.code_len(), l = in.n_leaves();
  const auto seg = [&](std::size_t p, std::size_t& local) {
    if (p == 0 || p == 1 + s) return Special;
    if (p <= s) return local = p - 1, Code;
    if (p < 2 + s + l) return local = p - 2 - s, Leaf;
    return local = p - 2 - s - l, Var;
  };
  if (x == y) return true;
  std::size_t a = 0, b = 0;
  const Seg sx = seg(x, a), sy = seg(y, b);
  if (sx == Special || sy == Special) return true;
  if (sx == Code && sy == Code) return true;
  if (sx == Leaf && sy == Leaf) return true;
  if (sx == Var && sy == Var) return in.adjacency(a, b);
  if (sx == Code && sy == Leaf) return in.link_ast(a, b);
  if (sx == Leaf && sy == Code) return in.link_ast(b, a);
  if (sx == Code && sy == Var) return in.link_dfg(a, b);
  if (sx == Var && sy == Code) return in.link_dfg(b, a);
  return false;  // leaf <-> var
}

structkit::model::Example example(const std::string& program, const structkit::minilang::Vocabulary& vocab,
                                  const structkit::model::ModelConfig& cfg) {
  const auto code = structkit::structure::extract(program, vocab, cfg.h_max);
  return {structkit::model::make_encoder_input(code, cfg), structkit::model::make_target_labels(code, cfg)};
}

}  // namespace oracle
