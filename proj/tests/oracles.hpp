#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// None of these call into the library code they are compared against.

#include <string>
#include <vector>

#include "structkit/corpus.hpp"
#include "structkit/model.hpp"
#include "structkit/structure.hpp"

namespace oracle {

using structkit::structure::BoolMatrix;

/// Random grammatical programs from the library generator.
std::vector<std::string> programs(std::size_t n, std::uint64_t seed, structkit::pipeline::GeneratorConfig cfg = {});

/// Comes-from edges by a worklist solver over an explicit per-occurrence CFG.
/// Occurrences are identifier leaves in lexeme order.
BoolMatrix reaching_definitions(const structkit::minilang::Ast& ast);

/// Definition occurrence <- every identifier occurrence on its right-hand side.
BoolMatrix computed_from(const structkit::minilang::Ast& ast);

/// y(i, j) = OR over (i', j') of D(i', j') L(i, i') L(j, j').
BoolMatrix flow_targets(const BoolMatrix& link, const BoolMatrix& adjacency);

/// ln(1 + c^2 / (|a||b|)), c counting equal node ids position by position from the root.
double similarity(const std::vector<int>& a, const std::vector<int>& b);

/// Allowed encoder attention pair, decided from the raw input fields.
bool attention_allowed(const structkit::model::EncoderInput& in, std::size_t x, std::size_t y);

/// Structured example built from a program with every cap left generous.
structkit::model::Example example(const std::string& program, const structkit::minilang::Vocabulary& vocab,
                                  const structkit::model::ModelConfig& cfg);

}  // namespace oracle
