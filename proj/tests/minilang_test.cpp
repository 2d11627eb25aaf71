#include <algorithm>
#include <random>

#include "doctest.h"
#include "structkit/corpus.hpp"
#include "structkit/errors.hpp"
#include "structkit/minilang.hpp"

using namespace structkit;
using namespace structkit::minilang;

namespace {

std::vector<NodeType> types_along(const Ast& ast, int node) {
  std::vector<NodeType> out;
  for (int id : ast.path_from_root(node)) out.push_back(ast.node(id).type);
  return out;
}

std::string strip_ws(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

}  // namespace

TEST_CASE("lexing") {
  SUBCASE("simple assignment") {
    const auto lx = lex("x = 1 ;");
    REQUIRE(lx.size() == 4);
    CHECK(lx[0].kind == LexemeKind::Ident);
    CHECK(lx[0].text == "x");
    CHECK(lx[1].kind == LexemeKind::Operator);
    CHECK(lx[2].kind == LexemeKind::Number);
    CHECK(lx[3].kind == LexemeKind::Punct);
  }
  SUBCASE("empty") { CHECK(lex("").empty()); }
  SUBCASE("counter") {
    const auto lx = lex("counter = counter + 1;");
    std::vector<std::string> texts;
    for (const auto& l : lx) texts.push_back(l.text);
    CHECK(texts == std::vector<std::string>{"counter", "=", "counter", "+", "1", ";"});
    CHECK(lx[3].kind == LexemeKind::Operator);
  }
  SUBCASE("maximal munch on == and keywords") {
    const auto lx = lex("if(a==b){x=1;}else{}");
    CHECK(lx[0].kind == LexemeKind::Keyword);
    CHECK(lx[3].text == "==");
    CHECK(lex("iffy")[0].kind == LexemeKind::Ident);
  }
  SUBCASE("unknown character reports its byte offset") {
    try {
      lex("x = 1 $ 2;");
      FAIL("expected UnknownCharacter");
    } catch (const UnknownCharacter& e) {
      CHECK(e.position() == 6);
    }
  }
  SUBCASE("spans increase and cover the non-whitespace text") {
    const std::string src = "while (i < 10) { total = total + i; i = i + 1; }";
    const auto lx = lex(src);
    std::string joined;
    for (std::size_t k = 0; k < lx.size(); ++k) {
      if (k > 0) CHECK(lx[k].begin >= lx[k - 1].end);
      CHECK(src.substr(lx[k].begin, lx[k].end - lx[k].begin) == lx[k].text);
      joined += lx[k].text;
    }
    CHECK(joined == strip_ws(src));
  }
}

TEST_CASE("parsing") {
  SUBCASE("x = 1;") {
    const auto ast = parse_source("x = 1;");
    // program, assign_stmt, identifier, operator, number, punct
    CHECK(ast.size() == 6);
    REQUIRE(ast.leaves().size() == 4);
    CHECK(types_along(ast, ast.leaves()[2]) ==
          std::vector<NodeType>{NodeType::Program, NodeType::AssignStmt, NodeType::Number});
  }
  SUBCASE("empty program") {
    const auto ast = parse_source("");
    CHECK(ast.size() == 1);
    CHECK(ast.leaves().empty());
    CHECK(ast.node(0).type == NodeType::Program);
  }
  SUBCASE("path to b inside if") {
    const auto ast = parse_source("if (a) { x = b; }");
    // lexemes: if ( a ) { x = b ; }
    CHECK(types_along(ast, ast.leaves()[7]) ==
          std::vector<NodeType>{NodeType::Program, NodeType::IfStmt, NodeType::Block, NodeType::AssignStmt,
                                NodeType::Identifier});
  }
  SUBCASE("left associativity and precedence") {
    const auto ast = parse_source("x = a - b - c * d;");
    const auto& assign = ast.node(ast.node(0).children[0]);
    const auto& top = ast.node(assign.children[2]);
    REQUIRE(top.type == NodeType::BinaryExpr);
    CHECK(ast.node(top.children[0]).type == NodeType::BinaryExpr);  // (a - b)
    CHECK(ast.node(top.children[2]).type == NodeType::BinaryExpr);  // c * d
    CHECK(ast.node(ast.node(top.children[1]).id).is_leaf());
  }
  SUBCASE("tree invariants") {
    const auto ast = parse_source("while (i < 3) { if (i == 1) { r = (i + 2) * 3; } else { r = 0; } i = i + 1; } return r;");
    int roots = 0;
    std::vector<int> owner(ast.lexemes().size(), 0);
    for (const auto& n : ast.nodes()) {
      if (!n.parent) ++roots;
      for (int c : n.children) CHECK(ast.node(c).parent == n.id);
      if (n.parent) {
        const auto& siblings = ast.node(*n.parent).children;
        CHECK(std::count(siblings.begin(), siblings.end(), n.id) == 1);
        CHECK(*n.parent < n.id);  // pre-order numbering
      }
      if (n.is_leaf()) {
        CHECK(n.children.empty());
        ++owner[static_cast<std::size_t>(*n.lexeme)];
      }
    }
    CHECK(roots == 1);
    CHECK(std::all_of(owner.begin(), owner.end(), [](int k) { return k == 1; }));
    for (std::size_t j = 0; j < ast.leaves().size(); ++j) CHECK(*ast.node(ast.leaves()[j]).lexeme == static_cast<int>(j));
  }
  SUBCASE("errors carry a position and an expected set") {
    try {
      parse_source("x = ;");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.position() == 4);
      CHECK(!e.expected().empty());
    }
    CHECK_THROWS_AS(parse_source("if (a) { x = 1;"), ParseError);
    CHECK_THROWS_AS(parse_source("x = (a + 1;"), ParseError);
    CHECK_THROWS_AS(parse_source("x = a + 1);"), ParseError);
    CHECK_THROWS_AS(parse_source("}"), ParseError);
    CHECK_THROWS_AS(parse_source("return;"), ParseError);
  }
  SUBCASE("dump format") {
    const auto dump = dump_ast(parse_source("x = 1;"));
    CHECK(dump.find("0 program parent=-1") == 0);
    CHECK(dump.find("\n  1 assign_stmt parent=0\n") != std::string::npos);
    CHECK(dump.find("    4 number parent=1 1\n") != std::string::npos);
  }
}

TEST_CASE("generated programs parse and corrupted streams are rejected") {
  pipeline::ProgramGenerator gen(42);
  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const auto program = gen.next().code;
    const auto lexemes = lex(program);
    CHECK_NOTHROW(parse(lexemes));

    // dropping any one operator or punctuation lexeme breaks the grammar
    std::vector<std::size_t> droppable;
    for (std::size_t i = 0; i < lexemes.size(); ++i) {
      if (lexemes[i].kind == LexemeKind::Operator || lexemes[i].kind == LexemeKind::Punct) droppable.push_back(i);
    }
    REQUIRE(!droppable.empty());
    std::uniform_int_distribution<std::size_t> pick(0, droppable.size() - 1);
    auto broken = lexemes;
    broken.erase(broken.begin() + static_cast<std::ptrdiff_t>(droppable[pick(rng)]));
    INFO(program);
    CHECK_THROWS_AS(parse(broken), ParseError);
  }
}

TEST_CASE("tokenization") {
  Vocabulary vocab;
  SUBCASE("identifiers split into 4-character chunks on one leaf") {
    const auto lx = lex("counter = 1;");
    const auto ast = parse(lx);
    const auto toks = tokenize(lx, ast, vocab);
    REQUIRE(toks.size() == 5);
    CHECK(toks[0].text == "coun");
    CHECK(toks[1].text == "ter");
    CHECK_FALSE(toks[0].continuation);
    CHECK(toks[1].continuation);
    CHECK(toks[1].key() == "##ter");
    CHECK(toks[0].leaf == toks[1].leaf);
    CHECK(toks[0].id == kUnk);  // not in the base vocabulary
  }
  SUBCASE("numbers are single tokens") {
    const auto lx = lex("x = 1;");
    const auto toks = tokenize(lx, parse(lx), vocab);
    CHECK(toks[2].text == "1");
    CHECK(toks[2].id == vocab.id("1"));
  }
  SUBCASE("one token per leaf for short identifiers") {
    const auto lx = lex("x = ab; ");
    const auto toks = tokenize(lx, parse(lx), vocab);
    REQUIRE(toks.size() == 4);
    for (std::size_t i = 0; i < toks.size(); ++i) CHECK(toks[i].leaf == static_cast<int>(i));
  }
  SUBCASE("round trip and detokenize over a generated corpus") {
    pipeline::ProgramGenerator gen(3);
    for (int k = 0; k < 100; ++k) {
      const auto program = gen.next().code;
      const auto lx = lex(program);
      const auto ast = parse(lx);
      const auto built = Vocabulary::build(std::vector<std::string>{program});
      const auto toks = tokenize(lx, ast, built);
      std::string joined;
      std::vector<std::string> keys;
      for (const auto& t : toks) {
        joined += t.text;
        keys.push_back(built.key(t.id));
        CHECK(t.id != kUnk);
        CHECK(ast.node(ast.leaves()[static_cast<std::size_t>(t.leaf)]).is_leaf());
      }
      CHECK(joined == strip_ws(program));
      const auto back = lex(detokenize(keys));
      REQUIRE(back.size() == lx.size());
      for (std::size_t i = 0; i < lx.size(); ++i) CHECK(back[i].text == lx[i].text);
    }
  }
  SUBCASE("text mode splits on whitespace") {
    const auto toks = tokenize_text("assign total add a 1 ;", vocab);
    REQUIRE(toks.size() == 8);
    CHECK(toks[0].text == "assi");
    CHECK(toks[2].text == "tota");
    CHECK(toks[3].key() == "##l");
    CHECK(toks[0].leaf == -1);
  }
}

TEST_CASE("vocabulary") {
  Vocabulary base;
  CHECK(base.key(kPad) == "<pad>");
  CHECK(base.key(kEos) == "<eos>");
  CHECK(base.id("while") >= kSpecialCount);
  CHECK(base.id("zzz") == kUnk);
  CHECK(Vocabulary::is_special(kMask));
  CHECK_FALSE(Vocabulary::is_special(base.id("=")));

  const std::vector<std::string> texts{"alpha = beta; alpha = 1;", "gamma = alpha;"};
  const auto v = Vocabulary::build(texts);
  CHECK(v.contains("alph"));
  CHECK(v.contains("##a"));
  CHECK(v.contains("gamm"));
  const auto capped = Vocabulary::build(texts, base.size() + 2);
  CHECK(capped.size() == base.size() + 2);
  CHECK(capped.contains("alph"));  // most frequent survive
  CHECK(capped.contains("##a"));
}
