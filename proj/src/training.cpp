#include "structkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "structkit/corruption.hpp"
#include "structkit/errors.hpp"

namespace structkit::pipeline {

using model::Example;

namespace {

/// Runs fn(i) for i in [0, n) over the available cores; results land in index order.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, F fn) {
  std::vector<R> out(n);
  const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void strip_structure(model::EncoderInput& in, model::StructureFlags flags) {
  const std::size_t s = in.code_len();
  if (!flags.ast) {
    in.leaf_types.clear();
    in.similarity.clear();
    in.link_ast = structure::BoolMatrix(s, 0);
  }
  if (!flags.dfg) {
    in.n_vars = 0;
    in.link_dfg = structure::BoolMatrix(s, 0);
    in.adjacency = structure::BoolMatrix(0, 0);
  }
}

}  // namespace

minilang::Vocabulary build_vocabulary(const std::vector<DatasetRecord>& records, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.source);
    texts.push_back(r.target);
  }
  return minilang::Vocabulary::build(texts, max_size);
}

Example prepare_example(const DatasetRecord& record, const minilang::Vocabulary& vocab, const RunConfig& cfg,
                        std::size_t index) {
  const auto& mc = cfg.model;
  auto code_source = [&](const std::string& text) {
    return model::make_encoder_input(structure::extract(text, vocab, mc.h_max), mc, cfg.structure);
  };
  auto code_target = [&](const std::string& text) {
    return model::make_target_labels(structure::extract(text, vocab, mc.h_max), mc);
  };
  auto text_source = [&](const std::string& text) {
    return model::make_text_input(minilang::tokenize_text(text, vocab), mc);
  };
  auto text_target = [&](const std::string& text) {
    return model::make_text_target(minilang::tokenize_text(text, vocab), mc);
  };

  switch (record.mode) {
    case Mode::Translate:
      if (cfg.swap_direction) return {code_source(record.target), code_target(record.source)};
      return {code_source(record.source), code_target(record.target)};
    case Mode::Text2Code:
      if (cfg.swap_direction) return {code_source(record.target), text_target(record.source)};
      return {text_source(record.source), code_target(record.target)};
    case Mode::Dae: {
      const auto code = structure::extract(record.target, vocab, mc.h_max);
      auto rng = corruption::example_rng(cfg.resolved_seed(), index);
      auto dae = corruption::make_dae_example(code, vocab, mc, cfg.corruption, rng);
      strip_structure(dae.example.source, cfg.structure);
      return std::move(dae.example);
    }
  }
  throw ConfigError("unhandled record mode");
}

std::vector<Example> prepare_examples(const std::vector<DatasetRecord>& records, const minilang::Vocabulary& vocab,
                                      const RunConfig& cfg) {
  return parallel_map<Example>(records.size(), [&](std::size_t i) { return prepare_example(records[i], vocab, cfg, i); });
}

// ---------------------------------------------------------------------------

namespace {

model::ModelConfig sized(model::ModelConfig mc, const minilang::Vocabulary& vocab) {
  mc.vocab_size = static_cast<int>(vocab.size());
  return mc;
}

constexpr std::uint64_t kOrderSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

Trainer::Trainer(RunConfig cfg, minilang::Vocabulary vocab, std::vector<Example> examples)
    : cfg_(std::move(cfg)),
      vocab_(std::move(vocab)),
      examples_(std::move(examples)),
      model_(sized(cfg_.model, vocab_), cfg_.resolved_seed()),
      optim_(cfg_.optim),
      order_rng_(cfg_.resolved_seed() ^ kOrderSalt) {
  cfg_.model.vocab_size = static_cast<int>(vocab_.size());
  cfg_.validate();
  if (examples_.empty()) throw ConfigError("training corpus is empty");
  order_.resize(examples_.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();
}

std::size_t Trainer::next_index() {
  if (cursor_ >= order_.size()) {
    std::shuffle(order_.begin(), order_.end(), order_rng_);
    cursor_ = 0;
  }
  return order_[cursor_++];
}

StepLog Trainer::step() {
  StepLog log;
  log.step = steps_done_;
  model_.params().zero_grad();
  const double scale = 1.0 / cfg_.batch_size;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t idx = next_index();
    const auto loss = model_.accumulate_gradients(examples_[idx], cfg_.loss, scale);
    if (!std::isfinite(loss.total)) throw NonFiniteLoss(steps_done_, idx);
    log.loss.lm += loss.lm * scale;
    log.loss.app += loss.app * scale;
    log.loss.dfp += loss.dfp * scale;
    log.loss.total += loss.total * scale;
  }
  if (cfg_.lr_decay && cfg_.steps > 0) {
    optim_.set_lr(cfg_.optim.lr * std::max(0.0, 1.0 - static_cast<double>(steps_done_) / cfg_.steps));
  }
  optim_.step(model_.params());
  ++steps_done_;
  return log;
}

TrainResult train(Trainer& trainer, const TrainOptions& opts) {
  TrainResult result;
  std::ofstream csv;
  if (!opts.metrics_path.empty()) {
    csv.open(opts.metrics_path);
    if (!csv) throw ConfigError("cannot open " + opts.metrics_path + " for writing");
    csv << kMetricsHeader << '\n';
    csv.precision(17);
  }
  const auto& cfg = trainer.config();
  auto checkpoint = [&] {
    if (opts.checkpoint_path.empty()) return;
    save_model(opts.checkpoint_path, cfg, trainer.vocab(), trainer.model(), trainer.steps_done());
    if (opts.holdout.empty()) return;
    const auto m = evaluate_generation(trainer.model(), trainer.vocab(), opts.holdout, {});
    if (m.exact_match > result.best_exact_match) {
      result.best_exact_match = m.exact_match;
      result.best_step = trainer.steps_done();
      save_model(opts.checkpoint_path + ".best", cfg, trainer.vocab(), trainer.model(), trainer.steps_done());
    }
  };
  while (trainer.steps_done() < cfg.steps) {
    const auto log = trainer.step();
    result.log.push_back(log);
    if (csv.is_open()) {
      csv << log.step << ',' << log.loss.lm << ',' << log.loss.app << ',' << log.loss.dfp << ',' << log.loss.total
          << '\n';
    }
    if (opts.on_step) opts.on_step(log);
    if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 &&
        trainer.steps_done() < cfg.steps) {
      checkpoint();
    }
  }
  checkpoint();
  return result;
}

// ---------------------------------------------------------------------------

void save_model(const std::string& path, const RunConfig& cfg, const minilang::Vocabulary& vocab,
                const model::StructModel& model, int step) {
  nlohmann::json meta;
  meta["run"] = cfg.to_json();
  meta["model"] = model.config().to_json();
  meta["vocab"] = vocab.keys();
  meta["step"] = step;
  numkit::save_checkpoint(path, model.params(), meta);
}

LoadedModel load_model(const std::string& path) {
  const auto j = numkit::read_checkpoint(path);
  try {
    const auto& meta = j.at("meta");
    auto mc = model::ModelConfig::from_json(meta.at("model"));
    LoadedModel out{RunConfig::from_json(meta.at("run")),
                    minilang::Vocabulary(meta.at("vocab").get<std::vector<std::string>>()), model::StructModel(mc, 0),
                    meta.value("step", 0)};
    out.config.model = mc;
    numkit::restore_params(j, out.model.params());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.size();
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
  if (positives == 0) return 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t seen = 0, tp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, group_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) group_tp += labels[order[j++]] != 0;
    seen += j - i;
    tp += group_tp;
    ap += static_cast<double>(group_tp) / static_cast<double>(positives) *
          (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

AuxMetrics evaluate_auxiliary(const model::StructModel& model, std::span<const Example> examples) {
  struct Part {
    std::size_t correct = 0, terms = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
  };
  const auto parts = parallel_map<Part>(examples.size(), [&](std::size_t k) {
    Part p;
    const auto& ex = examples[k];
    if (!ex.target.has_structure) return p;
    const auto tf = model.teacher_forced(ex);
    for (std::size_t i = 0; i < tf.app_true.size(); ++i) {
      for (std::size_t a = 0; a < tf.app_true[i].size(); ++a) {
        p.correct += tf.app_pred[i][a] == tf.app_true[i][a];
        ++p.terms;
      }
    }
    const std::size_t n = ex.target.token_ids.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        p.scores.push_back(tf.dfp_prob(i, j));
        p.labels.push_back(ex.target.flow(i, j) ? 1 : 0);
      }
    }
    return p;
  });
  AuxMetrics m;
  std::size_t correct = 0;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& p : parts) {
    correct += p.correct;
    m.app_terms += p.terms;
    scores.insert(scores.end(), p.scores.begin(), p.scores.end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  m.pairs = labels.size();
  m.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  m.app_accuracy = m.app_terms ? static_cast<double>(correct) / static_cast<double>(m.app_terms) : 0.0;
  m.prevalence = m.pairs ? static_cast<double>(m.positives) / static_cast<double>(m.pairs) : 0.0;
  m.dfp_average_precision = average_precision(scores, labels);
  return m;
}

std::string tokens_to_text(const minilang::Vocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> keys;
  for (int id : ids) keys.push_back(vocab.key(id));
  return minilang::detokenize(keys);
}

GenerationMetrics evaluate_generation(const model::StructModel& model, const minilang::Vocabulary& vocab,
                                      std::span<const Example> examples, const model::DecodeOptions& opts,
                                      std::vector<GenerationOutput>* outputs) {
  struct Part {
    std::size_t correct = 0, positions = 0;
    bool all_correct = false, exact = false;
    GenerationOutput out;
  };
  const auto parts = parallel_map<Part>(examples.size(), [&](std::size_t k) {
    Part p;
    const auto& ex = examples[k];
    const auto tf = model.teacher_forced(ex);
    const auto& target = ex.target.token_ids;
    for (std::size_t i = 0; i <= target.size(); ++i) {
      const auto row = tf.logits.row(i);
      const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      p.correct += pred == (i < target.size() ? target[i] : minilang::kEos);
      ++p.positions;
    }
    p.all_correct = p.correct == p.positions;
    const auto decoded = model.decode(ex.source, opts);
    p.exact = !decoded.truncated && decoded.tokens == target;
    p.out.tokens = decoded.tokens;
    p.out.text = tokens_to_text(vocab, decoded.tokens);
    try {
      minilang::parse_source(p.out.text);
      p.out.parses = true;
    } catch (const Error&) {
      p.out.parses = false;
    }
    return p;
  });
  GenerationMetrics m;
  m.examples = examples.size();
  std::size_t correct = 0, positions = 0, all = 0, exact = 0, parses = 0;
  for (const auto& p : parts) {
    correct += p.correct;
    positions += p.positions;
    all += p.all_correct;
    exact += p.exact;
    parses += p.out.parses;
    if (outputs) outputs->push_back(p.out);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, m.examples));
  m.token_accuracy = positions ? static_cast<double>(correct) / static_cast<double>(positions) : 0.0;
  m.sequence_accuracy = static_cast<double>(all) / n;
  m.exact_match = static_cast<double>(exact) / n;
  m.parse_rate = static_cast<double>(parses) / n;
  return m;
}

// ---------------------------------------------------------------------------

std::string param_group(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (name == "tok_emb") return "E_token";
  if (name == "enc.type_emb") return "E_type";
  if (name == "enc.height_emb") return "E_height";
  if (name == "enc.var_emb") return "var_embedding";
  if (name == "lm_head") return "LM head";
  if (name.rfind("app.", 0) == 0) return "APP head";
  if (name.rfind("dfp.", 0) == 0) return "DFP head";
  if (ends_with(".phi")) return "phi";
  if (ends_with(".wa") || ends_with(".wb")) return "w_a/w_b";
  if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo")) return "attention";
  if (name.find(".ff.") != std::string::npos) return "feed_forward";
  if (name.find(".ln") != std::string::npos) return "layer_norm";
  return "other";
}

ModelGradCheck gradcheck_model(model::StructModel& model, const Example& example, const model::LossWeights& weights,
                               const numkit::GradCheckOptions& opts,
                               const std::function<void(numkit::ParamStore&)>& after_backward) {
  auto& store = model.params();
  store.zero_grad();
  model.accumulate_gradients(example, weights);
  if (after_backward) after_backward(store);
  std::vector<numkit::Param*> params;
  for (auto& p : store.all()) params.push_back(&p);
  const auto report = numkit::measure_gradients([&] { return model.loss(example, weights).total; }, params, opts);

  ModelGradCheck out;
  for (const auto& p : report.params) {
    const auto group = param_group(p.name);
    auto it = std::find_if(out.groups.begin(), out.groups.end(), [&](const GroupError& g) { return g.group == group; });
    if (it == out.groups.end()) {
      out.groups.push_back({group, 0.0, p.name, 0});
      it = std::prev(out.groups.end());
    }
    if (p.max_rel_error > it->max_rel_error) {
      it->max_rel_error = p.max_rel_error;
      it->worst_param = p.name;
    }
    it->checked += p.checked;
  }
  out.max_rel_error = report.max_rel_error();
  if (const auto* w = report.worst(); w && w->max_rel_error > opts.tolerance) {
    throw GradCheckFailure(w->name, w->max_rel_error);
  }
  return out;
}

RunConfig gradcheck_config() {
  RunConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.n_enc_layers = cfg.model.n_dec_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.d_dfp = 4;
  cfg.model.d_app = 8;
  return cfg;
}

ModelGradCheck run_gradcheck(const RunConfig& cfg, const numkit::GradCheckOptions& opts) {
  auto mc = cfg.model;
  if (mc.d_model > 16 || mc.n_enc_layers != 1 || mc.n_dec_layers != 1) {
    throw ConfigError("gradcheck expects a tiny model: d_model <= 16 and one layer on each side");
  }
  const std::vector<std::string> texts{kGradCheckProgram};
  const auto vocab = minilang::Vocabulary::build(texts);
  mc.vocab_size = static_cast<int>(vocab.size());
  model::StructModel model(mc, cfg.resolved_seed());
  const auto code = structure::extract(kGradCheckProgram, vocab, mc.h_max);
  const Example ex{model::make_encoder_input(code, mc), model::make_target_labels(code, mc)};
  return gradcheck_model(model, ex, cfg.loss, opts);
}

}  // namespace structkit::pipeline
