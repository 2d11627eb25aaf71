#include <array>
#include <cctype>

#include "structkit/errors.hpp"
#include "structkit/minilang.hpp"

namespace structkit::minilang {

namespace {

constexpr std::array<std::string_view, 4> kKeywords{"if", "else", "while", "return"};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

std::string_view to_string(LexemeKind kind) {
  switch (kind) {
    case LexemeKind::Ident: return "IDENT";
    case LexemeKind::Number: return "NUMBER";
    case LexemeKind::Keyword: return "KEYWORD";
    case LexemeKind::Operator: return "OPERATOR";
    case LexemeKind::Punct: return "PUNCT";
  }
  return "?";
}

std::vector<Lexeme> lex(std::string_view source) {
  std::vector<Lexeme> out;
  std::size_t pos = 0;
  const std::size_t n = source.size();
  while (pos < n) {
    const char c = source[pos];
    if (is_space(c)) {
      ++pos;
      continue;
    }
    const std::size_t start = pos;
    if (is_ident_start(c)) {
      while (pos < n && is_ident_char(source[pos])) ++pos;
      std::string text(source.substr(start, pos - start));
      bool keyword = false;
      for (auto kw : kKeywords) keyword = keyword || text == kw;
      out.push_back({keyword ? LexemeKind::Keyword : LexemeKind::Ident, std::move(text), start, pos});
      continue;
    }
    if (is_digit(c)) {
      while (pos < n && is_digit(source[pos])) ++pos;
      out.push_back({LexemeKind::Number, std::string(source.substr(start, pos - start)), start, pos});
      continue;
    }
    switch (c) {
      case '=':
        pos += (pos + 1 < n && source[pos + 1] == '=') ? 2 : 1;
        out.push_back({LexemeKind::Operator, std::string(source.substr(start, pos - start)), start, pos});
        break;
      case '+':
      case '-':
      case '*':
      case '/':
      case '<':
        ++pos;
        out.push_back({LexemeKind::Operator, std::string(1, c), start, pos});
        break;
      case ';':
      case '(':
      case ')':
      case '{':
      case '}':
        ++pos;
        out.push_back({LexemeKind::Punct, std::string(1, c), start, pos});
        break;
      default:
        throw UnknownCharacter(pos);
    }
  }
  return out;
}

}  // namespace structkit::minilang
