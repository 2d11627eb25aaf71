#pragma once

// Synthetic MiniLang corpora and the JSONL dataset format:
//   {"source": "...", "target": "...", "mode": "translate" | "text2code" | "dae"}

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace structkit::pipeline {

enum class Task { Identity, Rename, Spec2Code };
enum class Mode { Translate, Text2Code, Dae };

std::string to_string(Task task);
std::string to_string(Mode mode);
Task parse_task(const std::string& name);  // throws ConfigError
Mode parse_mode(const std::string& name);

struct DatasetRecord {
  std::string source;
  std::string target;
  Mode mode = Mode::Translate;

  bool operator==(const DatasetRecord&) const = default;
};

struct GeneratorConfig {
  int min_statements = 2;
  int max_statements = 4;
  int max_depth = 2;        // nesting of if/while blocks
  int max_expr_depth = 2;   // nesting of binary expressions
  int min_lexemes = 0;      // keep appending top-level statements until reached
};

struct GeneratedProgram {
  std::string code;
  std::string spec;  // prefix description, e.g. "assign x add a 1 ;"
};

/// Seeded random MiniLang programs. Every program parses, and printing its
/// parse reproduces the same lexemes.
class ProgramGenerator {
 public:
  ProgramGenerator(std::uint64_t seed, GeneratorConfig cfg = {});
  GeneratedProgram next();

 private:
  struct Node;
  std::string pick_name();
  Node expr(int depth);
  Node statement(int depth);
  std::vector<Node> statements(int depth, int count);

  std::mt19937_64 rng_;
  GeneratorConfig cfg_;
};

/// Identifier pool of the generator and the fixed bijection used by the rename task.
const std::vector<std::string>& identifier_pool();
const std::map<std::string, std::string>& rename_map();

/// Renames identifiers lexeme by lexeme; names absent from the map are kept.
std::string rename_identifiers(const std::string& program, const std::map<std::string, std::string>& mapping);

std::vector<DatasetRecord> generate_corpus(std::size_t n, std::uint64_t seed, Task task, const GeneratorConfig& cfg = {});

void write_jsonl(std::ostream& out, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_jsonl(std::istream& in);
std::vector<DatasetRecord> read_jsonl_file(const std::string& path);
void write_jsonl_file(const std::string& path, const std::vector<DatasetRecord>& records);

}  // namespace structkit::pipeline
