#pragma once

// MiniLang front-end: lexer, recursive-descent parser and subword tokenizer.
//
//   program := stmt*
//   stmt    := assign | if | while | return
//   assign  := IDENT '=' expr ';'
//   if      := 'if' '(' expr ')' block ('else' block)?
//   while   := 'while' '(' expr ')' block
//   return  := 'return' expr ';'
//   block   := '{' stmt* '}'
//   expr    := term (('+' | '-' | '<' | '==') term)*      (left associative)
//   term    := factor (('*' | '/') factor)*               (left associative)
//   factor  := IDENT | NUMBER | '(' expr ')'
//
// Every lexeme (keywords, operators and punctuation included) becomes one AST
// leaf, and leaves appear in lexeme order, so leaf index j is lexeme index j.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace structkit::minilang {

enum class LexemeKind { Ident, Number, Keyword, Operator, Punct };

std::string_view to_string(LexemeKind kind);

struct Lexeme {
  LexemeKind kind;
  std::string text;
  std::size_t begin = 0;  // byte offsets, half open
  std::size_t end = 0;

  bool operator==(const Lexeme&) const = default;
};

/// Maximal-munch lexer. Throws UnknownCharacter on any byte outside the alphabet.
std::vector<Lexeme> lex(std::string_view source);

enum class NodeType : std::uint8_t {
  Program,
  AssignStmt,
  IfStmt,
  WhileStmt,
  ReturnStmt,
  BinaryExpr,
  ParenExpr,
  Block,
  Identifier,
  Number,
  Keyword,
  Operator,
  Punct,
};

inline constexpr int kNodeTypeCount = 13;

std::string_view to_string(NodeType type);

struct AstNode {
  int id = 0;
  NodeType type = NodeType::Program;
  std::optional<int> parent;
  std::vector<int> children;
  std::optional<int> lexeme;  // present iff the node is a leaf

  bool is_leaf() const { return lexeme.has_value(); }
};

/// Node arena in pre-order; node 0 is the root.
class Ast {
 public:
  Ast() = default;
  Ast(std::vector<AstNode> nodes, std::vector<Lexeme> lexemes);

  const AstNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<AstNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  int root() const { return 0; }

  /// Leaf node ids in lexeme order.
  const std::vector<int>& leaves() const { return leaves_; }
  const std::vector<Lexeme>& lexemes() const { return lexemes_; }

  /// Node ids from the root down to `id`, inclusive.
  std::vector<int> path_from_root(int id) const;

 private:
  std::vector<AstNode> nodes_;
  std::vector<Lexeme> lexemes_;
  std::vector<int> leaves_;
};

Ast parse(std::span<const Lexeme> lexemes);

/// Lex and parse in one go.
Ast parse_source(std::string_view source);

/// One node per line, "<id> <node_type> parent=<id> [text]", indented by depth.
std::string dump_ast(const Ast& ast);

// ---------------------------------------------------------------------------
// Vocabulary and tokens

inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kMask = 3;
inline constexpr int kUnk = 4;
inline constexpr int kEos = 5;
inline constexpr int kSpecialCount = 6;

inline constexpr std::size_t kChunkSize = 4;
inline constexpr std::string_view kContinuationPrefix = "##";

/// Closed token vocabulary. Keys for non-initial identifier chunks carry a
/// "##" prefix so that detokenize can glue them back together.
class Vocabulary {
 public:
  /// Specials plus the fixed MiniLang keywords, operators, punctuation and digits.
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> keys);

  /// Builds a vocabulary from token keys observed in `texts` (programs are lexed,
  /// anything that fails to lex is split on whitespace). Extra keys beyond
  /// `max_size` are dropped, least frequent first.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size = 512);

  int add(const std::string& key);
  int id(std::string_view key) const;  // kUnk when absent
  bool contains(std::string_view key) const;
  const std::string& key(int id) const { return keys_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }

  /// True for ids that never appear inside code (pad, cls, sep, mask, unk, eos).
  static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, int> index_;
};

struct Token {
  int id = kUnk;
  std::string text;           // raw chunk text, without any prefix
  bool continuation = false;  // non-initial chunk of a word
  int leaf = -1;              // leaf index (== lexeme index); -1 for text-mode tokens
  int lexeme = -1;

  std::string key() const;
};

/// Vocabulary key for a chunk.
std::string token_key(std::string_view text, bool continuation);

/// Splits `word` into consecutive chunks of at most kChunkSize characters.
std::vector<std::string> chunk_word(std::string_view word);

/// Code tokens: one per non-identifier lexeme, identifiers chunked by four.
std::vector<Token> tokenize(std::span<const Lexeme> lexemes, const Ast& ast, const Vocabulary& vocab);

/// Text-mode tokens: whitespace-separated words, chunked like identifiers, no leaves.
std::vector<Token> tokenize_text(std::string_view text, const Vocabulary& vocab);

/// Inverse of tokenize on vocabulary keys: continuation chunks are glued to
/// their predecessor, everything else is separated by one space.
std::string detokenize(std::span<const std::string> keys);

}  // namespace structkit::minilang
