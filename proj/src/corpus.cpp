#include "structkit/corpus.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "structkit/errors.hpp"
#include "structkit/minilang.hpp"

namespace structkit::pipeline {

std::string to_string(Task task) {
  switch (task) {
    case Task::Identity: return "identity";
    case Task::Rename: return "rename";
    case Task::Spec2Code: return "spec2code";
  }
  return "?";
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Translate: return "translate";
    case Mode::Text2Code: return "text2code";
    case Mode::Dae: return "dae";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "identity") return Task::Identity;
  if (name == "rename") return Task::Rename;
  if (name == "spec2code") return Task::Spec2Code;
  throw ConfigError("unknown task '" + name + "' (expected identity, rename or spec2code)");
}

Mode parse_mode(const std::string& name) {
  if (name == "translate") return Mode::Translate;
  if (name == "text2code") return Mode::Text2Code;
  if (name == "dae") return Mode::Dae;
  throw ConfigError("unknown mode '" + name + "' (expected translate, text2code or dae)");
}

// ---------------------------------------------------------------------------

struct ProgramGenerator::Node {
  enum Kind { Var, Num, Bin, Paren, Assign, If, While, Return } kind = Var;
  std::string text;         // name, digit or operator symbol
  std::vector<Node> kids;   // operands / condition / value
  std::vector<Node> body;   // then / loop body
  std::vector<Node> orelse;
  bool has_else = false;
};

namespace {

int precedence(const std::string& op) { return op == "*" || op == "/" ? 2 : 1; }

std::string op_word(const std::string& op) {
  if (op == "+") return "add";
  if (op == "-") return "sub";
  if (op == "*") return "mul";
  if (op == "/") return "div";
  if (op == "<") return "lt";
  return "eq";
}

}  // namespace

ProgramGenerator::ProgramGenerator(std::uint64_t seed, GeneratorConfig cfg) : rng_(seed), cfg_(cfg) {
  if (cfg_.min_statements < 1 || cfg_.max_statements < cfg_.min_statements) {
    throw ConfigError("generator needs 1 <= min_statements <= max_statements");
  }
  if (cfg_.max_depth < 0 || cfg_.max_expr_depth < 0 || cfg_.min_lexemes < 0) {
    throw ConfigError("generator depths and min_lexemes must be non-negative");
  }
}

std::string ProgramGenerator::pick_name() {
  const auto& pool = identifier_pool();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng_)];
}

ProgramGenerator::Node ProgramGenerator::expr(int depth) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (depth <= 0 || u(rng_) < 0.4) {
    Node leaf;
    if (u(rng_) < 0.65) {
      leaf.kind = Node::Var;
      leaf.text = pick_name();
    } else {
      leaf.kind = Node::Num;
      leaf.text = std::to_string(std::uniform_int_distribution<int>(0, 9)(rng_));
    }
    return leaf;
  }
  static const char* ops[] = {"+", "-", "*", "/", "<", "=="};
  Node bin;
  bin.kind = Node::Bin;
  bin.text = ops[std::uniform_int_distribution<int>(0, 5)(rng_)];
  const int p = precedence(bin.text);
  for (int side = 0; side < 2; ++side) {
    Node operand = expr(depth - 1);
    if (operand.kind == Node::Bin) {
      const int q = precedence(operand.text);
      const bool needed = side == 0 ? q < p : q <= p;
      if (needed || u(rng_) < 0.1) {
        Node paren;
        paren.kind = Node::Paren;
        paren.kids.push_back(std::move(operand));
        operand = std::move(paren);
      }
    }
    bin.kids.push_back(std::move(operand));
  }
  return bin;
}

ProgramGenerator::Node ProgramGenerator::statement(int depth) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng_);
  std::uniform_int_distribution<int> block_len(1, 2);
  Node s;
  if (depth > 0 && r < 0.15) {
    s.kind = Node::If;
    s.kids.push_back(expr(cfg_.max_expr_depth));
    s.body = statements(depth - 1, block_len(rng_));
    s.has_else = u(rng_) < 0.5;
    if (s.has_else) s.orelse = statements(depth - 1, block_len(rng_));
  } else if (depth > 0 && r < 0.3) {
    s.kind = Node::While;
    s.kids.push_back(expr(cfg_.max_expr_depth));
    s.body = statements(depth - 1, block_len(rng_));
  } else if (r < 0.38) {
    s.kind = Node::Return;
    s.kids.push_back(expr(cfg_.max_expr_depth));
  } else {
    s.kind = Node::Assign;
    s.text = pick_name();
    s.kids.push_back(expr(cfg_.max_expr_depth));
  }
  return s;
}

std::vector<ProgramGenerator::Node> ProgramGenerator::statements(int depth, int count) {
  std::vector<Node> out;
  for (int i = 0; i < count; ++i) out.push_back(statement(depth));
  return out;
}

GeneratedProgram ProgramGenerator::next() {
  const int n = std::uniform_int_distribution<int>(cfg_.min_statements, cfg_.max_statements)(rng_);
  std::vector<Node> prog = statements(cfg_.max_depth, n);

  std::string code, spec;
  auto sp = [](std::string& s, const std::string& w) {
    if (!s.empty()) s += ' ';
    s += w;
  };
  std::function<void(const Node&)> emit_expr = [&](const Node& e) {
    switch (e.kind) {
      case Node::Var:
      case Node::Num:
        sp(code, e.text);
        sp(spec, e.text);
        break;
      case Node::Paren:
        sp(code, "(");
        sp(spec, "par");
        emit_expr(e.kids[0]);
        sp(code, ")");
        break;
      case Node::Bin:
        sp(spec, op_word(e.text));
        emit_expr(e.kids[0]);
        sp(code, e.text);
        emit_expr(e.kids[1]);
        break;
      default: break;
    }
  };
  std::function<void(const std::vector<Node>&)> emit_block;
  std::function<void(const Node&)> emit_stmt = [&](const Node& s) {
    switch (s.kind) {
      case Node::Assign:
        sp(code, s.text);
        sp(code, "=");
        sp(spec, "assign");
        sp(spec, s.text);
        emit_expr(s.kids[0]);
        code += ";";
        sp(spec, ";");
        break;
      case Node::Return:
        sp(code, "return");
        sp(spec, "return");
        emit_expr(s.kids[0]);
        code += ";";
        sp(spec, ";");
        break;
      case Node::If:
        sp(code, "if (");
        sp(spec, "if");
        emit_expr(s.kids[0]);
        sp(code, ")");
        sp(spec, "then");
        emit_block(s.body);
        if (s.has_else) {
          sp(code, "else");
          sp(spec, "else");
          emit_block(s.orelse);
        }
        sp(spec, "end");
        break;
      case Node::While:
        sp(code, "while (");
        sp(spec, "while");
        emit_expr(s.kids[0]);
        sp(code, ")");
        sp(spec, "do");
        emit_block(s.body);
        sp(spec, "end");
        break;
      default: break;
    }
  };
  emit_block = [&](const std::vector<Node>& stmts) {
    sp(code, "{");
    for (const auto& s : stmts) emit_stmt(s);
    sp(code, "}");
  };

  for (const auto& s : prog) emit_stmt(s);
  while (cfg_.min_lexemes > 0 && minilang::lex(code).size() < static_cast<std::size_t>(cfg_.min_lexemes)) {
    emit_stmt(statement(cfg_.max_depth));
  }
  // "( x" and "x )" read better without the inner space
  std::string tidy;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == ' ' && i > 0 && code[i - 1] == '(') continue;
    if (code[i] == ' ' && i + 1 < code.size() && code[i + 1] == ')') continue;
    tidy += code[i];
  }
  return {tidy, spec};
}

const std::vector<std::string>& identifier_pool() {
  static const std::vector<std::string> pool{"a",     "b",     "c",     "n",     "x",     "y",     "acc",
                                             "sum",   "count", "total", "value", "limit", "index", "result"};
  return pool;
}

const std::map<std::string, std::string>& rename_map() {
  static const std::map<std::string, std::string> map{
      {"a", "p"},         {"b", "q"},          {"c", "r"},           {"n", "m"},          {"x", "u"},
      {"y", "v"},         {"acc", "buf"},      {"sum", "agg"},       {"count", "tally"},  {"total", "amount"},
      {"value", "item"},  {"limit", "bound"},  {"index", "cursor"},  {"result", "output"}};
  return map;
}

std::string rename_identifiers(const std::string& program, const std::map<std::string, std::string>& mapping) {
  const auto lexemes = minilang::lex(program);
  std::string out;
  std::size_t pos = 0;
  for (const auto& lx : lexemes) {
    out.append(program, pos, lx.begin - pos);
    auto it = lx.kind == minilang::LexemeKind::Ident ? mapping.find(lx.text) : mapping.end();
    out += it == mapping.end() ? lx.text : it->second;
    pos = lx.end;
  }
  out.append(program, pos, std::string::npos);
  return out;
}

std::vector<DatasetRecord> generate_corpus(std::size_t n, std::uint64_t seed, Task task, const GeneratorConfig& cfg) {
  ProgramGenerator gen(seed, cfg);
  std::vector<DatasetRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = gen.next();
    switch (task) {
      case Task::Identity: out.push_back({p.code, p.code, Mode::Translate}); break;
      case Task::Rename: out.push_back({p.code, rename_identifiers(p.code, rename_map()), Mode::Translate}); break;
      case Task::Spec2Code: out.push_back({p.spec, p.code, Mode::Text2Code}); break;
    }
  }
  return out;
}

void write_jsonl(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) {
    out << nlohmann::json{{"source", r.source}, {"target", r.target}, {"mode", to_string(r.mode)}}.dump() << '\n';
  }
}

std::vector<DatasetRecord> read_jsonl(std::istream& in) {
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("source").get<std::string>(), j.at("target").get<std::string>(),
                     parse_mode(j.value("mode", "translate"))});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<DatasetRecord> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path);
  return read_jsonl(in);
}

void write_jsonl_file(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  write_jsonl(out, records);
}

}  // namespace structkit::pipeline
