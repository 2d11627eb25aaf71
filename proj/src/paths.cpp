#include <algorithm>
#include <cmath>

#include "structkit/structure.hpp"

namespace structkit::structure {

std::vector<RootLeafPath> root_leaf_paths(const minilang::Ast& ast, int h_max) {
  std::vector<RootLeafPath> paths;
  paths.reserve(ast.leaves().size());
  for (int leaf : ast.leaves()) {
    RootLeafPath p;
    p.leaf = leaf;
    p.node_ids = ast.path_from_root(leaf);
    if (h_max > 0 && p.node_ids.size() > static_cast<std::size_t>(h_max)) {
      p.node_ids.erase(p.node_ids.begin(), p.node_ids.end() - h_max);
    }
    for (int id : p.node_ids) p.node_types.push_back(ast.node(id).type);
    paths.push_back(std::move(p));
  }
  return paths;
}

int shared_nodes(const RootLeafPath& a, const RootLeafPath& b) {
  // Node ids are unique within a path, so a merge over sorted copies counts the
  // intersection.
  std::vector<int> x = a.node_ids;
  std::vector<int> y = b.node_ids;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  int c = 0;
  for (std::size_t i = 0, j = 0; i < x.size() && j < y.size();) {
    if (x[i] == y[j]) {
      ++c, ++i, ++j;
    } else if (x[i] < y[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return c;
}

double path_similarity(const RootLeafPath& a, const RootLeafPath& b) {
  const double c = shared_nodes(a, b);
  return std::log1p(c * c / (static_cast<double>(a.size()) * static_cast<double>(b.size())));
}

LeafSimilarity leaf_similarity(std::span<const RootLeafPath> paths) {
  LeafSimilarity sim;
  sim.n = paths.size();
  sim.values.assign(sim.n * sim.n, 0.0);
  for (std::size_t i = 0; i < sim.n; ++i) {
    sim.values[i * sim.n + i] = std::log(2.0);
    for (std::size_t j = i + 1; j < sim.n; ++j) {
      const double s = path_similarity(paths[i], paths[j]);
      sim.values[i * sim.n + j] = s;
      sim.values[j * sim.n + i] = s;
    }
  }
  return sim;
}

StructuredCode extract(std::string_view source, const minilang::Vocabulary& vocab, int h_max) {
  StructuredCode out;
  const auto lexemes = minilang::lex(source);
  out.ast = minilang::parse(lexemes);
  out.tokens = minilang::tokenize(lexemes, out.ast, vocab);
  out.dfg = build_dfg(out.ast, out.tokens);
  out.link_ast = link_ast(out.tokens, out.ast.leaves().size());
  out.paths = root_leaf_paths(out.ast, h_max);
  out.similarity = leaf_similarity(out.paths);
  return out;
}

}  // namespace structkit::structure
