#include <cmath>

#include "doctest.h"
#include "structkit/errors.hpp"
#include "structkit/model.hpp"

using namespace structkit;
using namespace structkit::model;

namespace {

ModelConfig tiny_config(const minilang::Vocabulary& vocab) {
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.d_model = 16;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.h_max = 8;
  cfg.d_dfp = 4;
  cfg.d_app = 8;
  return cfg;
}

Example structured_example(const minilang::Vocabulary& vocab, const ModelConfig& cfg) {
  const auto code = structure::extract("a = 1; b = a + 2; while (b < a) { b = b + a; } return b;", vocab, cfg.h_max);
  return {make_encoder_input(code, cfg), make_target_labels(code, cfg)};
}

}  // namespace

TEST_CASE("gradients match central differences for every parameter group") {
  minilang::Vocabulary vocab;
  const auto cfg = tiny_config(vocab);
  StructModel model(cfg, 7);
  const auto ex = structured_example(vocab, cfg);
  REQUIRE(ex.target.flow.count() > 0);

  LossWeights w{0.5, 0.5, 1.0};
  model.params().zero_grad();
  model.accumulate_gradients(ex, w);
  std::vector<numkit::Param*> params;
  for (auto& p : model.params().all()) params.push_back(&p);
  numkit::GradCheckOptions opts;
  opts.h = 1e-5;
  opts.max_coords_per_param = 16;
  const auto report = numkit::measure_gradients([&] { return model.loss(ex, w).total; }, params, opts);
  for (const auto& p : report.params) {
    INFO(p.name << " analytic=" << p.analytic << " numeric=" << p.numeric);
    CHECK(p.max_rel_error < 1e-4);
  }
}
