#include <algorithm>
#include <map>
#include <sstream>

#include "structkit/errors.hpp"
#include "structkit/minilang.hpp"

namespace structkit::minilang {

namespace {

const std::vector<std::string>& base_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"<pad>", "<cls>", "<sep>", "<mask>", "<unk>", "<eos>"};
    for (const char* s : {"if", "else", "while", "return", "=", "==", "+", "-", "*", "/", "<", ";",
                          "(", ")", "{", "}"}) {
      k.emplace_back(s);
    }
    for (char d = '0'; d <= '9'; ++d) k.emplace_back(1, d);
    return k;
  }();
  return keys;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

std::string token_key(std::string_view text, bool continuation) {
  return continuation ? std::string(kContinuationPrefix) + std::string(text) : std::string(text);
}

std::string Token::key() const { return token_key(text, continuation); }

std::vector<std::string> chunk_word(std::string_view word) {
  std::vector<std::string> chunks;
  for (std::size_t i = 0; i < word.size(); i += kChunkSize) chunks.emplace_back(word.substr(i, kChunkSize));
  return chunks;
}

Vocabulary::Vocabulary() {
  for (const auto& k : base_keys()) add(k);
}

Vocabulary::Vocabulary(std::vector<std::string> keys) {
  for (auto& k : keys) add(k);
}

int Vocabulary::add(const std::string& key) {
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const int id = static_cast<int>(keys_.size());
  keys_.push_back(key);
  index_.emplace(key, id);
  return id;
}

int Vocabulary::id(std::string_view key) const {
  auto it = index_.find(std::string(key));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view key) const { return index_.count(std::string(key)) > 0; }

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size) {
  Vocabulary vocab;
  std::map<std::string, std::size_t> counts;
  auto count_word = [&](std::string_view word) {
    const auto chunks = chunk_word(word);
    for (std::size_t i = 0; i < chunks.size(); ++i) ++counts[token_key(chunks[i], i > 0)];
  };
  for (const auto& text : texts) {
    std::vector<Lexeme> lexemes;
    bool is_code = true;
    try {
      lexemes = lex(text);
    } catch (const UnknownCharacter&) {
      is_code = false;
    }
    if (is_code) {
      for (const auto& l : lexemes) {
        if (l.kind == LexemeKind::Ident) {
          count_word(l.text);
        } else {
          ++counts[l.text];
        }
      }
    } else {
      for (const auto& w : words_of(text)) count_word(w);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> extra;
  for (const auto& [key, n] : counts) {
    if (!vocab.contains(key)) extra.emplace_back(key, n);
  }
  // most frequent first, ties alphabetical; then re-sort the kept set alphabetically
  std::stable_sort(extra.begin(), extra.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = max_size > vocab.size() ? max_size - vocab.size() : 0;
  if (extra.size() > room) extra.resize(room);
  std::sort(extra.begin(), extra.end());
  for (const auto& [key, n] : extra) vocab.add(key);
  return vocab;
}

std::vector<Token> tokenize(std::span<const Lexeme> lexemes, const Ast& ast, const Vocabulary& vocab) {
  std::vector<Token> tokens;
  tokens.reserve(lexemes.size());
  for (std::size_t i = 0; i < lexemes.size(); ++i) {
    const auto& l = lexemes[i];
    const int leaf = i < ast.leaves().size() ? static_cast<int>(i) : -1;
    if (l.kind == LexemeKind::Ident) {
      const auto chunks = chunk_word(l.text);
      for (std::size_t c = 0; c < chunks.size(); ++c) {
        Token t;
        t.text = chunks[c];
        t.continuation = c > 0;
        t.id = vocab.id(t.key());
        t.leaf = leaf;
        t.lexeme = static_cast<int>(i);
        tokens.push_back(std::move(t));
      }
    } else {
      Token t;
      t.text = l.text;
      t.id = vocab.id(l.text);
      t.leaf = leaf;
      t.lexeme = static_cast<int>(i);
      tokens.push_back(std::move(t));
    }
  }
  return tokens;
}

std::vector<Token> tokenize_text(std::string_view text, const Vocabulary& vocab) {
  std::vector<Token> tokens;
  int word_index = 0;
  for (const auto& w : words_of(text)) {
    const auto chunks = chunk_word(w);
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      Token t;
      t.text = chunks[c];
      t.continuation = c > 0;
      t.id = vocab.id(t.key());
      t.lexeme = word_index;
      tokens.push_back(std::move(t));
    }
    ++word_index;
  }
  return tokens;
}

std::string detokenize(std::span<const std::string> keys) {
  std::string out;
  for (const auto& k : keys) {
    if (k.starts_with(kContinuationPrefix)) {
      out += k.substr(kContinuationPrefix.size());
      continue;
    }
    if (!out.empty()) out += ' ';
    out += k;
  }
  return out;
}

}  // namespace structkit::minilang
