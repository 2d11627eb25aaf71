#pragma once

// Structure extraction: data-flow graph, linking matrices, root-leaf paths and
// leaf-leaf path similarity.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "structkit/minilang.hpp"

namespace structkit::structure {

class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { data_[r * cols_ + c] = v ? 1 : 0; }
  std::size_t count() const;
  std::size_t row_sum(std::size_t r) const;
  std::size_t col_sum(std::size_t c) const;

  /// Coordinates of the set entries in row-major order.
  std::vector<std::pair<int, int>> coordinates() const;

  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

struct VariableOccurrence {
  int leaf = -1;         // leaf index
  int token_begin = 0;   // token range, half open
  int token_end = 0;
  std::string name;
  bool is_definition = false;
};

/// Variables are identifier occurrences in token order. adjacency(i, j) means the
/// value of occurrence i is obtained directly from occurrence j.
struct Dfg {
  std::vector<VariableOccurrence> variables;
  BoolMatrix adjacency;
  BoolMatrix comes_from;     // reaching-definition edges only (use <- def)
  BoolMatrix computed_from;  // assignment edges only (def <- rhs occurrence)
  BoolMatrix link;           // |S| x |V|

  std::size_t size() const { return variables.size(); }
};

/// Reaching definitions over the structured control flow, iterated to a fixed
/// point for while loops. Never sets a self edge.
Dfg build_dfg(const minilang::Ast& ast, std::span<const minilang::Token> tokens);

/// L^dfg: token i lies in the token range of occurrence j.
BoolMatrix link_dfg(const Dfg& dfg, std::size_t n_tokens);

/// L^ast: token i belongs to leaf j.
BoolMatrix link_ast(std::span<const minilang::Token> tokens, std::size_t n_leaves);

struct RootLeafPath {
  int leaf = -1;  // leaf node id
  std::vector<int> node_ids;
  std::vector<minilang::NodeType> node_types;

  std::size_t size() const { return node_ids.size(); }
};

/// One path per leaf in leaf order; paths longer than h_max keep the deepest h_max nodes.
std::vector<RootLeafPath> root_leaf_paths(const minilang::Ast& ast, int h_max);

/// Number of node ids the two paths have in common. For root-anchored paths this
/// is the length of their common prefix.
int shared_nodes(const RootLeafPath& a, const RootLeafPath& b);

/// ln(1 + c^2 / (|a| |b|)) with c = shared_nodes(a, b).
double path_similarity(const RootLeafPath& a, const RootLeafPath& b);

struct LeafSimilarity {
  std::size_t n = 0;
  std::vector<double> values;  // row-major n x n

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

LeafSimilarity leaf_similarity(std::span<const RootLeafPath> paths);

/// Data-flow targets over token positions: y(i, j) = 1 iff some occurrences
/// i', j' have D(i', j') = L(i, i') = L(j, j') = 1.
BoolMatrix data_flow_targets(const BoolMatrix& link, const BoolMatrix& adjacency);

/// Everything extracted from one program.
struct StructuredCode {
  minilang::Ast ast;
  std::vector<minilang::Token> tokens;
  Dfg dfg;
  BoolMatrix link_ast;
  std::vector<RootLeafPath> paths;
  LeafSimilarity similarity;
};

StructuredCode extract(std::string_view source, const minilang::Vocabulary& vocab, int h_max);

}  // namespace structkit::structure
