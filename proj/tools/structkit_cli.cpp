// structkit command-line front end.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "structkit/corruption.hpp"
#include "structkit/errors.hpp"
#include "structkit/training.hpp"

using namespace structkit;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value config file");
    cmd->add_option("--set", sets, "override one key, e.g. --set lr=1e-3")->take_all();
    cmd->add_option("--seed", seed, "random seed (overrides config and STRUCTKIT_SEED)");
  }

  pipeline::RunConfig build() const {
    pipeline::RunConfig cfg;
    if (!file.empty()) cfg.load_file(file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

struct SourceArgs {
  std::string source;
  std::string input;

  void attach(CLI::App* cmd) {
    auto* s = cmd->add_option("--source", source, "program text");
    auto* i = cmd->add_option("--input", input, "file holding the program");
    s->excludes(i);
  }

  std::string text() const {
    if (!input.empty()) return read_file(input);
    if (source.empty()) throw ConfigError("pass --source or --input");
    return source;
  }
};

json matrix_edges(const structure::BoolMatrix& m) {
  json out = json::array();
  for (auto [r, c] : m.coordinates()) out.push_back({r, c});
  return out;
}

json extraction_json(const structure::StructuredCode& code, const minilang::Vocabulary& vocab) {
  json j;
  json tokens = json::array();
  for (const auto& t : code.tokens) {
    tokens.push_back({{"key", t.key()}, {"id", t.id}, {"leaf", t.leaf}, {"known", t.id != minilang::kUnk}});
  }
  j["tokens"] = tokens;
  (void)vocab;
  json paths = json::array();
  for (const auto& p : code.paths) {
    json types = json::array();
    for (auto t : p.node_types) types.push_back(std::string(minilang::to_string(t)));
    paths.push_back({{"leaf_node", p.leaf}, {"node_ids", p.node_ids}, {"types", types}});
  }
  j["paths"] = paths;
  json vars = json::array();
  for (const auto& v : code.dfg.variables) {
    vars.push_back({{"name", v.name}, {"leaf", v.leaf}, {"tokens", {v.token_begin, v.token_end}},
                    {"definition", v.is_definition}});
  }
  j["variables"] = vars;
  j["adjacency"] = matrix_edges(code.dfg.adjacency);
  j["comes_from"] = matrix_edges(code.dfg.comes_from);
  j["computed_from"] = matrix_edges(code.dfg.computed_from);
  j["link_ast"] = matrix_edges(code.link_ast);
  j["link_dfg"] = matrix_edges(code.dfg.link);
  j["data_flow_targets"] = matrix_edges(structure::data_flow_targets(code.dfg.link, code.dfg.adjacency));
  json sim = json::array();
  for (std::size_t a = 0; a < code.similarity.n; ++a) {
    json row = json::array();
    for (std::size_t b = 0; b < code.similarity.n; ++b) row.push_back(code.similarity(a, b));
    sim.push_back(row);
  }
  j["similarity"] = sim;
  return j;
}

int cmd_parse(const SourceArgs& src, bool dump) {
  const auto ast = minilang::parse_source(src.text());
  if (dump) {
    std::cout << minilang::dump_ast(ast);
  } else {
    std::cout << "ok: " << ast.size() << " nodes, " << ast.leaves().size() << " leaves\n";
  }
  return 0;
}

int cmd_extract(const SourceArgs& src, int h_max) {
  const auto text = src.text();
  const std::vector<std::string> texts{text};
  const auto vocab = minilang::Vocabulary::build(texts);
  std::cout << extraction_json(structure::extract(text, vocab, h_max), vocab).dump(2) << '\n';
  return 0;
}

int cmd_gen_corpus(const std::string& task, std::size_t n, std::uint64_t seed, const std::string& out,
                   const pipeline::GeneratorConfig& gc, bool dae) {
  auto records = pipeline::generate_corpus(n, seed, pipeline::parse_task(task), gc);
  if (dae) {
    for (auto& r : records) r = {r.target, r.target, pipeline::Mode::Dae};
  }
  if (out.empty() || out == "-") {
    pipeline::write_jsonl(std::cout, records);
  } else {
    pipeline::write_jsonl_file(out, records);
  }
  return 0;
}

int cmd_corrupt(const ConfigArgs& ca, const std::string& data, const SourceArgs& src, bool stats) {
  const auto cfg = ca.build();
  std::vector<std::string> programs;
  if (!data.empty()) {
    for (const auto& r : pipeline::read_jsonl_file(data)) programs.push_back(r.target);
  } else {
    programs.push_back(src.text());
  }
  const auto vocab = minilang::Vocabulary::build(programs);
  auto mc = cfg.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  const std::uint64_t seed = cfg.resolved_seed();

  double fraction = 0.0, sampled = 0.0, applied = 0.0;
  std::size_t spans = 0, exact_leaf = 0, exact_var = 0;
  json examples = json::array();
  for (std::size_t i = 0; i < programs.size(); ++i) {
    const auto code = structure::extract(programs[i], vocab, mc.h_max);
    auto rng = corruption::example_rng(seed, i);
    const auto dae = corruption::make_dae_example(code, vocab, mc, cfg.corruption, rng);
    fraction += dae.tokens.affected_fraction();
    for (int s : dae.tokens.sampled_lengths) sampled += s;
    for (int s : dae.tokens.span_lengths) applied += s;
    spans += dae.tokens.sampled_lengths.size();
    const auto floor_of = [&](std::size_t n) {
      return static_cast<std::size_t>(std::floor(cfg.corruption.structure_drop_rate * static_cast<double>(n) + 1e-9));
    };
    exact_leaf += dae.structure.dropped_leaves == floor_of(code.paths.size());
    exact_var += dae.structure.dropped_variables == floor_of(code.dfg.size());
    if (!stats) {
      examples.push_back({{"corrupted", pipeline::tokens_to_text(vocab, dae.example.source.token_ids)},
                          {"affected", dae.tokens.affected},
                          {"kept_leaves", dae.structure.kept_leaves},
                          {"kept_variables", dae.structure.kept_variables},
                          {"encoder_variables", dae.example.source.n_vars}});
    }
  }
  if (!stats) {
    std::cout << examples.dump(2) << '\n';
    return 0;
  }
  const double n = static_cast<double>(programs.size());
  json j{{"programs", programs.size()},
         {"mean_affected_fraction", fraction / n},
         {"spans", spans},
         {"mean_sampled_span_length", spans ? sampled / static_cast<double>(spans) : 0.0},
         {"mean_applied_span_length", spans ? applied / static_cast<double>(spans) : 0.0},
         {"leaf_drop_exact_fraction", static_cast<double>(exact_leaf) / n},
         {"variable_drop_exact_fraction", static_cast<double>(exact_var) / n}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_train(const ConfigArgs& ca, const std::string& data, const std::string& holdout, const std::string& out,
              const std::string& metrics, std::optional<int> steps, bool quiet) {
  auto cfg = ca.build();
  if (steps) cfg.steps = *steps;
  const auto records = pipeline::read_jsonl_file(data);
  auto vocab = pipeline::build_vocabulary(records, cfg.vocab_max);
  cfg.model.vocab_size = static_cast<int>(vocab.size());
  cfg.validate();
  auto examples = pipeline::prepare_examples(records, vocab, cfg);
  pipeline::TrainOptions opts;
  opts.checkpoint_path = out;
  opts.metrics_path = metrics;
  if (!holdout.empty()) opts.holdout = pipeline::prepare_examples(pipeline::read_jsonl_file(holdout), vocab, cfg);
  if (!quiet) {
    opts.on_step = [&](const pipeline::StepLog& log) {
      if (log.step % 50 == 0 || log.step + 1 == cfg.steps) {
        std::cerr << "step " << log.step << " lm " << log.loss.lm << " app " << log.loss.app << " dfp "
                  << log.loss.dfp << " total " << log.loss.total << '\n';
      }
    };
  }
  pipeline::Trainer trainer(cfg, std::move(vocab), std::move(examples));
  const auto result = pipeline::train(trainer, opts);
  json summary{{"steps", trainer.steps_done()}, {"examples", records.size()}, {"vocab", trainer.vocab().size()}};
  if (!result.log.empty()) {
    const auto& last = result.log.back().loss;
    summary["final"] = {{"lm", last.lm}, {"app", last.app}, {"dfp", last.dfp}, {"total", last.total}};
  }
  if (result.best_step >= 0) summary["best"] = {{"step", result.best_step}, {"exact_match", result.best_exact_match}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval_gen(const std::string& checkpoint, const std::string& data, int beam, int max_len, bool show) {
  const auto loaded = pipeline::load_model(checkpoint);
  const auto examples = pipeline::prepare_examples(pipeline::read_jsonl_file(data), loaded.vocab, loaded.config);
  std::vector<pipeline::GenerationOutput> outputs;
  const auto m = pipeline::evaluate_generation(loaded.model, loaded.vocab, examples, {beam, max_len},
                                               show ? &outputs : nullptr);
  json j{{"examples", m.examples},
         {"token_accuracy", m.token_accuracy},
         {"sequence_accuracy", m.sequence_accuracy},
         {"exact_match", m.exact_match},
         {"parse_rate", m.parse_rate},
         {"beam", beam}};
  if (show) {
    json gens = json::array();
    for (const auto& o : outputs) gens.push_back({{"text", o.text}, {"parses", o.parses}});
    j["generations"] = gens;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_eval_aux(const std::string& checkpoint, const std::string& data) {
  const auto loaded = pipeline::load_model(checkpoint);
  const auto examples = pipeline::prepare_examples(pipeline::read_jsonl_file(data), loaded.vocab, loaded.config);
  const auto m = pipeline::evaluate_auxiliary(loaded.model, examples);
  json j{{"app_accuracy", m.app_accuracy},   {"dfp_average_precision", m.dfp_average_precision},
         {"positive_prevalence", m.prevalence}, {"app_terms", m.app_terms},
         {"pairs", m.pairs},                    {"positives", m.positives}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_decode(const std::string& checkpoint, const SourceArgs& src, bool text_mode, int beam, int max_len,
               bool emit_structure) {
  const auto loaded = pipeline::load_model(checkpoint);
  const auto& mc = loaded.model.config();
  const auto text = src.text();
  const auto input =
      text_mode ? model::make_text_input(minilang::tokenize_text(text, loaded.vocab), mc)
                : model::make_encoder_input(structure::extract(text, loaded.vocab, mc.h_max), mc,
                                            loaded.config.structure);
  const auto result = loaded.model.decode(input, {beam, max_len});
  json j{{"text", pipeline::tokens_to_text(loaded.vocab, result.tokens)},
         {"tokens", result.tokens},
         {"log_prob", result.log_prob},
         {"truncated", result.truncated}};
  if (emit_structure) {
    const auto hidden = loaded.model.decoder_hidden(input, result.tokens);
    const auto flow = loaded.model.dfp_probabilities(hidden, result.tokens.size());
    json steps = json::array();
    for (std::size_t i = 0; i < result.tokens.size(); ++i) {
      json types = json::array();
      for (int h = 0; h < mc.h_max; ++h) {
        const auto lg = loaded.model.app_logits(hidden.row(i), h);
        const auto best = static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
        types.push_back(std::string(minilang::to_string(static_cast<minilang::NodeType>(best))));
      }
      json sources = json::array();
      for (std::size_t k = 0; k < result.tokens.size(); ++k) {
        if (flow(i, k) > 0.5) sources.push_back(k);
      }
      steps.push_back({{"token", loaded.vocab.key(result.tokens[i])}, {"app_by_height", types}, {"flow_from", sources}});
    }
    j["structure"] = steps;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_gradcheck(const ConfigArgs& ca, double h, double tolerance, std::size_t coords) {
  auto cfg = ca.build();
  if (ca.file.empty()) {
    const auto seed = cfg.seed;
    cfg = pipeline::gradcheck_config();
    cfg.seed = seed;
    for (const auto& kv : ca.sets) cfg.set(kv.substr(0, kv.find('=')), kv.substr(kv.find('=') + 1));
  }
  numkit::GradCheckOptions opts;
  opts.h = h;
  opts.tolerance = tolerance;
  opts.max_coords_per_param = coords;
  opts.seed = cfg.resolved_seed();
  try {
    const auto report = pipeline::run_gradcheck(cfg, opts);
    for (const auto& g : report.groups) {
      std::cout << g.group << ": max_rel_error=" << g.max_rel_error << " (" << g.worst_param << ", " << g.checked
                << " coords)\n";
    }
    std::cout << "ok: max relative error " << report.max_rel_error << " < " << tolerance << '\n';
    return 0;
  } catch (const GradCheckFailure& e) {
    std::cout << "FAILED: " << pipeline::param_group(e.param()) << " (" << e.param()
              << ") relative error " << e.rel_error() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structkit: structure-aware seq2seq for MiniLang"};
  app.require_subcommand(1);

  auto* parse = app.add_subcommand("parse", "parse a MiniLang program");
  SourceArgs parse_src;
  bool dump_ast = false;
  parse_src.attach(parse);
  parse->add_flag("--dump-ast", dump_ast, "print the AST");

  auto* extract = app.add_subcommand("extract", "print tokens, paths, data flow and links as JSON");
  SourceArgs extract_src;
  int h_max = 12;
  extract_src.attach(extract);
  extract->add_option("--h-max", h_max, "maximum path length");

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic JSONL corpus");
  std::string task = "identity", gen_out;
  std::size_t gen_n = 100;
  std::uint64_t gen_seed = 0;
  bool gen_dae = false;
  pipeline::GeneratorConfig gc;
  gen->add_option("--task", task, "identity | rename | spec2code");
  gen->add_option("-n,--count", gen_n, "number of records");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output file (default stdout)");
  gen->add_option("--min-statements", gc.min_statements);
  gen->add_option("--max-statements", gc.max_statements);
  gen->add_option("--max-depth", gc.max_depth);
  gen->add_option("--min-lexemes", gc.min_lexemes, "grow programs to at least this many lexemes");
  gen->add_flag("--dae", gen_dae, "emit denoising records (mode dae) over the target programs");

  auto* corrupt = app.add_subcommand("corrupt", "corrupt programs for denoising pretraining");
  ConfigArgs corrupt_cfg;
  SourceArgs corrupt_src;
  std::string corrupt_data;
  bool corrupt_stats = false;
  corrupt_cfg.attach(corrupt);
  corrupt_src.attach(corrupt);
  corrupt->add_option("--data", corrupt_data, "JSONL corpus (targets are corrupted)");
  corrupt->add_flag("--stats", corrupt_stats, "print corruption statistics only");

  auto* train = app.add_subcommand("train", "train a model");
  ConfigArgs train_cfg;
  std::string train_data, train_holdout, train_out = "model.ckpt.json", train_metrics = "metrics.csv";
  std::optional<int> train_steps;
  bool quiet = false;
  train_cfg.attach(train);
  train->add_option("--data", train_data, "JSONL training corpus")->required();
  train->add_option("--holdout", train_holdout, "JSONL held-out corpus for checkpoint selection");
  train->add_option("--out", train_out, "checkpoint path");
  train->add_option("--metrics", train_metrics, "per-step CSV log");
  train->add_option("--steps", train_steps, "number of optimizer steps");
  train->add_flag("-q,--quiet", quiet, "no progress on stderr");

  auto* eval_gen = app.add_subcommand("eval-gen", "generation metrics on a corpus");
  std::string eg_ckpt, eg_data;
  int eg_beam = 1, eg_max_len = 256;
  bool eg_show = false;
  eval_gen->add_option("--checkpoint", eg_ckpt)->required();
  eval_gen->add_option("--data", eg_data)->required();
  eval_gen->add_option("--beam", eg_beam, "beam width (1 = greedy)");
  eval_gen->add_option("--max-len", eg_max_len, "maximum generated tokens");
  eval_gen->add_flag("--show", eg_show, "include generations in the output");

  auto* eval_aux = app.add_subcommand("eval-aux", "teacher-forced APP accuracy and DFP average precision");
  std::string ea_ckpt, ea_data;
  eval_aux->add_option("--checkpoint", ea_ckpt)->required();
  eval_aux->add_option("--data", ea_data)->required();

  auto* decode = app.add_subcommand("decode", "generate from one source");
  std::string dec_ckpt;
  SourceArgs dec_src;
  bool dec_text = false, dec_structure = false;
  int dec_beam = 1, dec_max_len = 256;
  decode->add_option("--checkpoint", dec_ckpt)->required();
  dec_src.attach(decode);
  decode->add_flag("--text", dec_text, "treat the source as text (no structure)");
  decode->add_option("--beam", dec_beam, "beam width (1 = greedy)");
  decode->add_option("--max-len", dec_max_len, "maximum generated tokens");
  decode->add_flag("--emit-structure", dec_structure, "also print per-step APP and DFP predictions");

  auto* gradcheck = app.add_subcommand("gradcheck", "compare backprop with finite differences");
  ConfigArgs gc_cfg;
  double gc_h = 1e-5, gc_tol = 1e-4;
  std::size_t gc_coords = 64;
  gc_cfg.attach(gradcheck);
  gradcheck->add_option("--step-size", gc_h, "finite-difference step h");
  gradcheck->add_option("--tolerance", gc_tol, "maximum relative error");
  gradcheck->add_option("--coords", gc_coords, "sampled coordinates per parameter (0 = all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*parse) return cmd_parse(parse_src, dump_ast);
    if (*extract) return cmd_extract(extract_src, h_max);
    if (*gen) return cmd_gen_corpus(task, gen_n, gen_seed, gen_out, gc, gen_dae);
    if (*corrupt) return cmd_corrupt(corrupt_cfg, corrupt_data, corrupt_src, corrupt_stats);
    if (*train) return cmd_train(train_cfg, train_data, train_holdout, train_out, train_metrics, train_steps, quiet);
    if (*eval_gen) return cmd_eval_gen(eg_ckpt, eg_data, eg_beam, eg_max_len, eg_show);
    if (*eval_aux) return cmd_eval_aux(ea_ckpt, ea_data);
    if (*decode) return cmd_decode(dec_ckpt, dec_src, dec_text, dec_beam, dec_max_len, dec_structure);
    if (*gradcheck) return cmd_gradcheck(gc_cfg, gc_h, gc_tol, gc_coords);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
