#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "structkit/errors.hpp"
#include "structkit/model.hpp"

namespace structkit::model {

using numkit::LayerNormCache;
using numkit::Param;

namespace {

struct LnW {
  Param* g;
  Param* b;
};

struct AttnW {
  Param* wq;
  Param* wk;
  Param* wv;
  Param* wo;
  Param* phi = nullptr;  // heads x buckets
  Param* wa = nullptr;   // heads
  Param* wb = nullptr;   // heads
};

struct FfW {
  Param* w1;
  Param* b1;
  Param* w2;
  Param* b2;
};

struct EncLayerW {
  LnW ln1;
  AttnW attn;
  LnW ln2;
  FfW ff;
};

struct DecLayerW {
  LnW ln1;
  AttnW self;
  LnW ln2;
  AttnW cross;
  LnW ln3;
  FfW ff;
};

struct AttnCache {
  Tensor xq, xkv, q, k, v, ctx;
  std::vector<Tensor> probs;
};

struct FfCache {
  Tensor x, pre, act;
};

struct EncLayerCache {
  LayerNormCache ln1, ln2;
  AttnCache attn;
  FfCache ff;
};

struct DecLayerCache {
  LayerNormCache ln1, ln2, ln3;
  AttnCache self, cross;
  FfCache ff;
};

struct EncCache {
  std::vector<EncLayerCache> layers;
  LayerNormCache ln_f;
  BiasPlan plan;
};

struct DecCache {
  std::vector<DecLayerCache> layers;
  LayerNormCache ln_f;
  BiasPlan plan;
  std::vector<int> input_ids;
};

std::string layer_name(const char* stack, int l) { return std::string(stack) + ".l" + std::to_string(l) + "."; }

double bias_value(const BiasPlan& plan, std::size_t k, const AttnW& w, std::size_t head) {
  switch (plan.kind[k]) {
    case PairKind::Open: return 0.0;
    case PairKind::Masked: return numkit::kNegInf;
    case PairKind::Relative: return w.phi->value(head, static_cast<std::size_t>(plan.bucket[k]));
    case PairKind::LeafLeaf: return w.wa->value[head] * plan.sim[k] + w.wb->value[head];
  }
  return 0.0;
}

Tensor attention_forward(const AttnW& w, const Tensor& xq, const Tensor& xkv, const BiasPlan* plan, int heads,
                         AttnCache* cache) {
  Tensor q, k, v;
  numkit::matmul(xq, w.wq->value, q);
  numkit::matmul(xkv, w.wk->value, k);
  numkit::matmul(xkv, w.wv->value, v);
  const std::size_t nq = xq.rows(), nk = xkv.rows(), d = q.cols();
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  Tensor ctx = Tensor::matrix(nq, d);
  std::vector<Tensor> probs;
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const std::size_t off = h * dk;
    Tensor s = Tensor::matrix(nq, nk);
    for (std::size_t i = 0; i < nq; ++i) {
      const double* qi = q.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        double b = 0.0;
        if (plan) {
          b = bias_value(*plan, plan->index(i, j), w, h);
          if (b == numkit::kNegInf) {
            s(i, j) = b;
            continue;
          }
        }
        const double* kj = k.data() + j * d + off;
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += qi[c] * kj[c];
        s(i, j) = dot + b;
      }
    }
    numkit::masked_softmax_inplace(s);
    for (std::size_t i = 0; i < nq; ++i) {
      double* ci = ctx.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        const double p = s(i, j);
        if (p == 0.0) continue;
        const double* vj = v.data() + j * d + off;
        for (std::size_t c = 0; c < dk; ++c) ci[c] += p * vj[c];
      }
    }
    probs.push_back(std::move(s));
  }
  Tensor out;
  numkit::matmul(ctx, w.wo->value, out);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
  }
  return out;
}

void attention_backward(const AttnW& w, const BiasPlan* plan, int heads, const AttnCache& c, const Tensor& dout,
                        Tensor& dxq, Tensor& dxkv) {
  numkit::matmul_at(c.ctx, dout, w.wo->grad, true);
  Tensor dctx;
  numkit::matmul_bt(dout, w.wo->value, dctx);
  const std::size_t nq = c.q.rows(), nk = c.k.rows(), d = c.q.cols();
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  Tensor dq = Tensor::matrix(nq, d), dk_ = Tensor::matrix(nk, d), dv = Tensor::matrix(nk, d);
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const std::size_t off = h * dk;
    const Tensor& p = c.probs[h];
    Tensor dp = Tensor::matrix(nq, nk);
    for (std::size_t i = 0; i < nq; ++i) {
      const double* dci = dctx.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        const double pij = p(i, j);
        if (pij == 0.0) continue;
        const double* vj = c.v.data() + j * d + off;
        double* dvj = dv.data() + j * d + off;
        double dot = 0.0;
        for (std::size_t e = 0; e < dk; ++e) {
          dot += dci[e] * vj[e];
          dvj[e] += pij * dci[e];
        }
        dp(i, j) = dot;
      }
    }
    const Tensor ds = numkit::masked_softmax_backward(p, dp);
    for (std::size_t i = 0; i < nq; ++i) {
      const double* qi = c.q.data() + i * d + off;
      double* dqi = dq.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        const double g = ds(i, j);
        if (g == 0.0) continue;
        if (plan) {
          const std::size_t k = plan->index(i, j);
          if (plan->kind[k] == PairKind::Relative) {
            w.phi->grad(h, static_cast<std::size_t>(plan->bucket[k])) += g;
          } else if (plan->kind[k] == PairKind::LeafLeaf) {
            w.wa->grad[h] += g * plan->sim[k];
            w.wb->grad[h] += g;
          }
        }
        const double* kj = c.k.data() + j * d + off;
        double* dkj = dk_.data() + j * d + off;
        for (std::size_t e = 0; e < dk; ++e) {
          dqi[e] += g * kj[e];
          dkj[e] += g * qi[e];
        }
      }
    }
  }
  numkit::matmul_at(c.xq, dq, w.wq->grad, true);
  numkit::matmul_at(c.xkv, dk_, w.wk->grad, true);
  numkit::matmul_at(c.xkv, dv, w.wv->grad, true);
  numkit::matmul_bt(dq, w.wq->value, dxq);
  numkit::matmul_bt(dk_, w.wk->value, dxkv);
  numkit::matmul_bt(dv, w.wv->value, dxkv, true);
}

Tensor ff_forward(const FfW& w, const Tensor& x, FfCache* cache) {
  Tensor pre;
  numkit::matmul(x, w.w1->value, pre);
  const std::size_t rows = pre.rows(), hid = pre.cols();
  Tensor act = Tensor::matrix(rows, hid);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < hid; ++c) {
      pre(r, c) += w.b1->value[c];
      act(r, c) = numkit::gelu(pre(r, c));
    }
  }
  Tensor y;
  numkit::matmul(act, w.w2->value, y);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += w.b2->value[c];
  }
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Tensor ff_backward(const FfW& w, const FfCache& c, const Tensor& dy) {
  numkit::matmul_at(c.act, dy, w.w2->grad, true);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    for (std::size_t k = 0; k < dy.cols(); ++k) w.b2->grad[k] += dy(r, k);
  }
  Tensor dpre;
  numkit::matmul_bt(dy, w.w2->value, dpre);
  for (std::size_t r = 0; r < dpre.rows(); ++r) {
    for (std::size_t k = 0; k < dpre.cols(); ++k) {
      dpre(r, k) *= numkit::gelu_grad(c.pre(r, k));
      w.b1->grad[k] += dpre(r, k);
    }
  }
  numkit::matmul_at(c.x, dpre, w.w1->grad, true);
  Tensor dx;
  numkit::matmul_bt(dpre, w.w1->value, dx);
  return dx;
}

Tensor ln_forward(const LnW& w, const Tensor& x, LayerNormCache* cache) {
  return numkit::layer_norm(x, w.g->value, w.b->value, cache);
}

Tensor ln_backward(const LnW& w, const LayerNormCache& cache, const Tensor& dy) {
  return numkit::layer_norm_backward(dy, w.g->value, cache, w.g->grad, w.b->grad);
}

void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

struct StructModel::Impl {
  Param* tok;
  Param* type;
  Param* height;
  Param* var;
  std::vector<EncLayerW> enc;
  LnW enc_ln;
  std::vector<DecLayerW> dec;
  LnW dec_ln;
  Param* lm;
  Param* app;
  Param* dfp_u;
  Param* dfp_v;
  Param* dfp_uvec;
  Param* dfp_vvec;
  Param* dfp_w;
  const ModelConfig* cfg;

  static Impl bind(const StructModel& self) {
    auto& store = const_cast<numkit::ParamStore&>(self.store_);
    Impl w;
    w.cfg = &self.cfg_;
    w.tok = &store.at("tok_emb");
    w.type = &store.at("enc.type_emb");
    w.height = &store.at("enc.height_emb");
    w.var = &store.at("enc.var_emb");
    auto ln = [&](const std::string& p) { return LnW{&store.at(p + "g"), &store.at(p + "b")}; };
    auto attn = [&](const std::string& p, bool relative, bool leaf) {
      AttnW a{&store.at(p + "wq"), &store.at(p + "wk"), &store.at(p + "wv"), &store.at(p + "wo")};
      if (relative) a.phi = &store.at(p + "phi");
      if (leaf) {
        a.wa = &store.at(p + "wa");
        a.wb = &store.at(p + "wb");
      }
      return a;
    };
    auto ff = [&](const std::string& p) {
      return FfW{&store.at(p + "w1"), &store.at(p + "b1"), &store.at(p + "w2"), &store.at(p + "b2")};
    };
    for (int l = 0; l < self.cfg_.n_enc_layers; ++l) {
      const auto p = layer_name("enc", l);
      w.enc.push_back({ln(p + "ln1."), attn(p + "attn.", true, true), ln(p + "ln2."), ff(p + "ff.")});
    }
    w.enc_ln = ln("enc.ln_f.");
    for (int l = 0; l < self.cfg_.n_dec_layers; ++l) {
      const auto p = layer_name("dec", l);
      w.dec.push_back({ln(p + "ln1."), attn(p + "self.", true, false), ln(p + "ln2."), attn(p + "cross.", false, false),
                       ln(p + "ln3."), ff(p + "ff.")});
    }
    w.dec_ln = ln("dec.ln_f.");
    w.lm = &store.at("lm_head");
    w.app = &store.at("app.w");
    w.dfp_u = &store.at("dfp.U");
    w.dfp_v = &store.at("dfp.V");
    w.dfp_uvec = &store.at("dfp.u");
    w.dfp_vvec = &store.at("dfp.v");
    w.dfp_w = &store.at("dfp.w");
    return w;
  }

  // ---- encoder -------------------------------------------------------------

  Tensor embed_source(const EncoderInput& in) const {
    const std::size_t d = static_cast<std::size_t>(cfg->d_model);
    Tensor x = Tensor::matrix(in.length(), d);
    auto copy_token = [&](std::size_t row, int id) {
      const auto src = tok->value.row(static_cast<std::size_t>(id));
      std::copy(src.begin(), src.end(), x.row(row).begin());
    };
    copy_token(in.cls(), minilang::kCls);
    for (std::size_t i = 0; i < in.code_len(); ++i) copy_token(in.code_begin() + i, in.token_ids[i]);
    copy_token(in.sep(), minilang::kSep);
    for (std::size_t l = 0; l < in.n_leaves(); ++l) {
      const Tensor e = embed_leaf(in.leaf_types[l], type->value, height->value);
      std::copy(e.values().begin(), e.values().end(), x.row(in.leaf_begin() + l).begin());
    }
    for (std::size_t v = 0; v < in.n_vars; ++v) {
      const auto src = var->value.row(0);
      std::copy(src.begin(), src.end(), x.row(in.var_begin() + v).begin());
    }
    return x;
  }

  void embed_source_backward(const EncoderInput& in, const Tensor& dx) const {
    const std::size_t d = static_cast<std::size_t>(cfg->d_model);
    auto add_row = [&](Tensor& g, std::size_t grow, std::size_t xrow) {
      for (std::size_t c = 0; c < d; ++c) g(grow, c) += dx(xrow, c);
    };
    add_row(tok->grad, minilang::kCls, in.cls());
    for (std::size_t i = 0; i < in.code_len(); ++i) {
      add_row(tok->grad, static_cast<std::size_t>(in.token_ids[i]), in.code_begin() + i);
    }
    add_row(tok->grad, minilang::kSep, in.sep());
    for (std::size_t l = 0; l < in.n_leaves(); ++l) {
      const auto& path = in.leaf_types[l];
      const std::size_t row = in.leaf_begin() + l;
      for (std::size_t i = 0; i < path.size(); ++i) {
        const auto t = static_cast<std::size_t>(path[i]);
        const std::size_t hgt = path.size() - 1 - i;
        for (std::size_t c = 0; c < d; ++c) {
          type->grad(t, c) += dx(row, c) * height->value(hgt, c);
          height->grad(hgt, c) += dx(row, c) * type->value(t, c);
        }
      }
    }
    for (std::size_t v = 0; v < in.n_vars; ++v) add_row(var->grad, 0, in.var_begin() + v);
  }

  Tensor encode(const EncoderInput& in, EncCache* cache, std::vector<std::vector<Tensor>>* attention = nullptr) const {
    Tensor x = embed_source(in);
    BiasPlan plan = plan_encoder_bias(in, *cfg);
    if (cache) cache->layers.resize(enc.size());
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const auto& w = enc[l];
      EncLayerCache* lc = cache ? &cache->layers[l] : nullptr;
      AttnCache local;
      const Tensor xn = ln_forward(w.ln1, x, lc ? &lc->ln1 : nullptr);
      AttnCache* ac = lc ? &lc->attn : (attention ? &local : nullptr);
      add_inplace(x, attention_forward(w.attn, xn, xn, &plan, cfg->n_heads, ac));
      if (attention) attention->push_back(ac->probs);
      const Tensor xn2 = ln_forward(w.ln2, x, lc ? &lc->ln2 : nullptr);
      add_inplace(x, ff_forward(w.ff, xn2, lc ? &lc->ff : nullptr));
    }
    Tensor out = ln_forward(enc_ln, x, cache ? &cache->ln_f : nullptr);
    if (cache) cache->plan = std::move(plan);
    return out;
  }

  void encode_backward(const EncoderInput& in, const EncCache& cache, const Tensor& dout) const {
    Tensor dx = ln_backward(enc_ln, cache.ln_f, dout);
    for (std::size_t l = enc.size(); l-- > 0;) {
      const auto& w = enc[l];
      const auto& lc = cache.layers[l];
      add_inplace(dx, ln_backward(w.ln2, lc.ln2, ff_backward(w.ff, lc.ff, dx)));
      Tensor dxq, dxkv;
      attention_backward(w.attn, &cache.plan, cfg->n_heads, lc.attn, dx, dxq, dxkv);
      add_inplace(dxq, dxkv);
      add_inplace(dx, ln_backward(w.ln1, lc.ln1, dxq));
    }
    embed_source_backward(in, dx);
  }

  // ---- decoder -------------------------------------------------------------

  static std::vector<int> shifted(std::span<const int> target) {
    std::vector<int> ids{minilang::kPad};
    ids.insert(ids.end(), target.begin(), target.end());
    return ids;
  }

  Tensor decode_states(const Tensor& memory, std::span<const int> input_ids, DecCache* cache) const {
    const std::size_t n = input_ids.size(), d = static_cast<std::size_t>(cfg->d_model);
    Tensor y = Tensor::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = tok->value.row(static_cast<std::size_t>(input_ids[i]));
      std::copy(src.begin(), src.end(), y.row(i).begin());
    }
    BiasPlan plan = plan_causal_bias(n, *cfg);
    if (cache) cache->layers.resize(dec.size());
    for (std::size_t l = 0; l < dec.size(); ++l) {
      const auto& w = dec[l];
      DecLayerCache* lc = cache ? &cache->layers[l] : nullptr;
      const Tensor yn = ln_forward(w.ln1, y, lc ? &lc->ln1 : nullptr);
      add_inplace(y, attention_forward(w.self, yn, yn, &plan, cfg->n_heads, lc ? &lc->self : nullptr));
      const Tensor yn2 = ln_forward(w.ln2, y, lc ? &lc->ln2 : nullptr);
      add_inplace(y, attention_forward(w.cross, yn2, memory, nullptr, cfg->n_heads, lc ? &lc->cross : nullptr));
      const Tensor yn3 = ln_forward(w.ln3, y, lc ? &lc->ln3 : nullptr);
      add_inplace(y, ff_forward(w.ff, yn3, lc ? &lc->ff : nullptr));
    }
    Tensor h = ln_forward(dec_ln, y, cache ? &cache->ln_f : nullptr);
    if (cache) {
      cache->plan = std::move(plan);
      cache->input_ids.assign(input_ids.begin(), input_ids.end());
    }
    return h;
  }

  /// Returns d(memory).
  Tensor decode_backward(const DecCache& cache, const Tensor& dh, std::size_t memory_rows) const {
    const std::size_t d = static_cast<std::size_t>(cfg->d_model);
    Tensor dmem = Tensor::matrix(memory_rows, d);
    Tensor dy = ln_backward(dec_ln, cache.ln_f, dh);
    for (std::size_t l = dec.size(); l-- > 0;) {
      const auto& w = dec[l];
      const auto& lc = cache.layers[l];
      add_inplace(dy, ln_backward(w.ln3, lc.ln3, ff_backward(w.ff, lc.ff, dy)));
      Tensor dq, dkv;
      attention_backward(w.cross, nullptr, cfg->n_heads, lc.cross, dy, dq, dkv);
      add_inplace(dmem, dkv);
      add_inplace(dy, ln_backward(w.ln2, lc.ln2, dq));
      Tensor dsq, dskv;
      attention_backward(w.self, &cache.plan, cfg->n_heads, lc.self, dy, dsq, dskv);
      add_inplace(dsq, dskv);
      add_inplace(dy, ln_backward(w.ln1, lc.ln1, dsq));
    }
    for (std::size_t i = 0; i < cache.input_ids.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) tok->grad(static_cast<std::size_t>(cache.input_ids[i]), c) += dy(i, c);
    }
    return dmem;
  }

  // ---- heads ---------------------------------------------------------------

  double app_logit(std::span<const double> a, std::size_t height, std::size_t type) const {
    const std::size_t ny = minilang::kNodeTypeCount, da = static_cast<std::size_t>(cfg->d_app);
    const double* wrow = app->value.data() + (height * ny + type) * da;
    double s = 0.0;
    for (std::size_t c = 0; c < da; ++c) s += wrow[c] * a[c];
    return s;
  }

  std::vector<double> app_logits(std::span<const double> hidden, int height) const {
    if (height < 0 || height >= cfg->h_max) throw HeightOverflow(height, cfg->h_max);
    const auto a = hidden.subspan(static_cast<std::size_t>(cfg->d_dfp), static_cast<std::size_t>(cfg->d_app));
    std::vector<double> logits(minilang::kNodeTypeCount);
    for (std::size_t y = 0; y < logits.size(); ++y) logits[y] = app_logit(a, static_cast<std::size_t>(height), y);
    return logits;
  }

  /// Pre-sigmoid DFP scores over the first n rows of h.
  Tensor dfp_scores(const Tensor& h, std::size_t n, Tensor* a_out, Tensor* b_out, Tensor* c_out) const {
    const std::size_t dd = static_cast<std::size_t>(cfg->d_dfp);
    Tensor a = Tensor::matrix(n, dd);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dd; ++c) a(i, c) = h(i, c);
    }
    Tensor b, cm;
    numkit::matmul_bt(a, dfp_u->value, b);
    numkit::matmul_bt(a, dfp_v->value, cm);
    Tensor z;
    numkit::matmul_bt(b, cm, z);
    std::vector<double> au(n, 0.0), av(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dd; ++c) {
        au[i] += dfp_uvec->value[c] * a(i, c);
        av[i] += dfp_vvec->value[c] * a(i, c);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) z(i, j) += au[i] + av[j] + dfp_w->value[0];
    }
    if (a_out) *a_out = std::move(a);
    if (b_out) *b_out = std::move(b);
    if (c_out) *c_out = std::move(cm);
    return z;
  }

  /// Computes all three losses; when dh is non-null also accumulates parameter
  /// grads of the heads and dL/dh (times scale).
  LossBreakdown heads(const Tensor& h, const TargetLabels& t, const LossWeights& lw, double scale, Tensor* dh) const {
    LossBreakdown out;
    const std::size_t n_out = h.rows();  // |T| + 1
    const std::size_t n_tok = t.token_ids.size();
    const std::size_t vocab = static_cast<std::size_t>(cfg->vocab_size);

    // language modeling
    Tensor logits;
    numkit::matmul_bt(h, lm->value, logits);
    Tensor dlogits = dh ? Tensor::matrix(n_out, vocab) : Tensor();
    for (std::size_t i = 0; i < n_out; ++i) {
      const int target = i < n_tok ? t.token_ids[i] : minilang::kEos;
      out.lm += numkit::cross_entropy(logits.row(i), target, dh ? dlogits.row(i) : std::span<double>{});
    }
    out.lm /= static_cast<double>(n_out);
    if (dh) {
      const double g = scale / static_cast<double>(n_out);
      for (auto& v : dlogits.values()) v *= g;
      numkit::matmul_at(dlogits, h, lm->grad, true);
      numkit::matmul(dlogits, lm->value, *dh, true);
    }

    if (!t.has_structure || n_tok == 0) {
      out.total = combined_loss(out.lm, out.app, out.dfp, lw.app, lw.dfp);
      return out;
    }

    // AST paths prediction
    {
      std::size_t path_terms = 0;
      for (const auto& p : t.path_types) path_terms += p.size();
      const double norm = 1.0 / (static_cast<double>(n_tok) * static_cast<double>(path_terms));
      const bool backprop = dh && lw.app != 0.0;
      const std::size_t ny = minilang::kNodeTypeCount, da = static_cast<std::size_t>(cfg->d_app);
      const std::size_t off = static_cast<std::size_t>(cfg->d_dfp);
      std::vector<double> lg(ny), grad(ny);
      for (std::size_t i = 0; i < n_tok; ++i) {
        const auto& path = t.path_types[i];
        const auto a = h.row(i).subspan(off, da);
        for (std::size_t k = 0; k < path.size(); ++k) {
          const std::size_t height = path.size() - 1 - k;
          if (height >= static_cast<std::size_t>(cfg->h_max)) {
            throw HeightOverflow(static_cast<int>(height), cfg->h_max);
          }
          for (std::size_t y = 0; y < ny; ++y) lg[y] = app_logit(a, height, y);
          out.app += numkit::cross_entropy(lg, path[k], backprop ? std::span<double>(grad) : std::span<double>{});
          if (!backprop) continue;
          const double g = scale * lw.app * norm;
          for (std::size_t y = 0; y < ny; ++y) {
            const double gy = g * grad[y];
            double* wrow = app->value.data() + (height * ny + y) * da;
            double* grow = app->grad.data() + (height * ny + y) * da;
            for (std::size_t c = 0; c < da; ++c) {
              grow[c] += gy * a[c];
              (*dh)(i, off + c) += gy * wrow[c];
            }
          }
        }
      }
      out.app *= norm;
    }

    // data flow prediction
    {
      const bool backprop = dh && lw.dfp != 0.0;
      Tensor a, b, cm;
      const Tensor z = dfp_scores(h, n_tok, &a, &b, &cm);
      Tensor dz = backprop ? Tensor::matrix(n_tok, n_tok) : Tensor();
      const double norm = 1.0 / (static_cast<double>(n_tok) * static_cast<double>(n_tok));
      for (std::size_t i = 0; i < n_tok; ++i) {
        for (std::size_t j = 0; j < n_tok; ++j) {
          const double y = t.flow(i, j) ? 1.0 : 0.0;
          double g = 0.0;
          const double wpos = y > 0 ? lw.dfp_positive_weight : 1.0;
          out.dfp += wpos * numkit::binary_cross_entropy_logit(z(i, j), y, &g);
          if (backprop) dz(i, j) = scale * lw.dfp * norm * wpos * g;
        }
      }
      out.dfp *= norm;
      if (backprop) dfp_backward(a, b, cm, dz, *dh);
    }
    out.total = combined_loss(out.lm, out.app, out.dfp, lw.app, lw.dfp);
    return out;
  }

  void dfp_backward(const Tensor& a, const Tensor& b, const Tensor& cm, const Tensor& dz, Tensor& dh) const {
    const std::size_t n = a.rows(), dd = a.cols();
    Tensor db, dc;
    numkit::matmul(dz, cm, db);     // dB = dZ C
    numkit::matmul_at(dz, b, dc);   // dC = dZ^T B
    numkit::matmul_at(db, a, dfp_u->grad, true);
    numkit::matmul_at(dc, a, dfp_v->grad, true);
    Tensor da;
    numkit::matmul(db, dfp_u->value, da);
    numkit::matmul(dc, dfp_v->value, da, true);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0, col = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += dz(i, j);
        col += dz(j, i);
      }
      dfp_w->grad[0] += row;
      for (std::size_t c = 0; c < dd; ++c) {
        dfp_uvec->grad[c] += row * a(i, c);
        dfp_vvec->grad[c] += col * a(i, c);
        da(i, c) += row * dfp_uvec->value[c] + col * dfp_vvec->value[c];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dd; ++c) dh(i, c) += da(i, c);
    }
  }
};

// ---------------------------------------------------------------------------

StructModel::StructModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t heads = static_cast<std::size_t>(cfg_.n_heads);
  const std::size_t dk = static_cast<std::size_t>(cfg_.d_head());
  const std::size_t dff = static_cast<std::size_t>(cfg_.d_ff);
  const std::size_t buckets = static_cast<std::size_t>(cfg_.phi_buckets);

  auto normal = [&](const std::string& name, std::vector<std::size_t> shape, double std) {
    auto& p = store_.add(name, std::move(shape));
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : p.value.values()) v = dist(rng);
  };
  auto constant = [&](const std::string& name, std::vector<std::size_t> shape, double value) {
    store_.add(name, std::move(shape)).value.fill(value);
  };
  auto ln = [&](const std::string& p) {
    constant(p + "g", {d}, 1.0);
    constant(p + "b", {d}, 0.0);
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  auto attn = [&](const std::string& p) {
    normal(p + "wq", {d, d}, sd / std::sqrt(static_cast<double>(dk)));
    normal(p + "wk", {d, d}, sd);
    normal(p + "wv", {d, d}, sd);
    normal(p + "wo", {d, d}, sd);
  };
  auto ff = [&](const std::string& p) {
    normal(p + "w1", {d, dff}, sd);
    constant(p + "b1", {dff}, 0.0);
    normal(p + "w2", {dff, d}, 1.0 / std::sqrt(static_cast<double>(dff)));
    constant(p + "b2", {d}, 0.0);
  };

  normal("tok_emb", {static_cast<std::size_t>(cfg_.vocab_size), d}, 1.0);
  normal("enc.type_emb", {static_cast<std::size_t>(minilang::kNodeTypeCount), d}, 1.0);
  normal("enc.height_emb", {static_cast<std::size_t>(cfg_.h_max), d}, 0.5);
  normal("enc.var_emb", {1, d}, 1.0);
  for (int l = 0; l < cfg_.n_enc_layers; ++l) {
    const auto p = layer_name("enc", l);
    ln(p + "ln1.");
    attn(p + "attn.");
    constant(p + "attn.phi", {heads, buckets}, 0.0);
    constant(p + "attn.wa", {heads}, 1.0);
    constant(p + "attn.wb", {heads}, 0.0);
    ln(p + "ln2.");
    ff(p + "ff.");
  }
  ln("enc.ln_f.");
  for (int l = 0; l < cfg_.n_dec_layers; ++l) {
    const auto p = layer_name("dec", l);
    ln(p + "ln1.");
    attn(p + "self.");
    constant(p + "self.phi", {heads, buckets}, 0.0);
    ln(p + "ln2.");
    attn(p + "cross.");
    ln(p + "ln3.");
    ff(p + "ff.");
  }
  ln("dec.ln_f.");
  normal("lm_head", {static_cast<std::size_t>(cfg_.vocab_size), d}, 0.5 * sd);
  const std::size_t da = static_cast<std::size_t>(cfg_.d_app), dd = static_cast<std::size_t>(cfg_.d_dfp);
  normal("app.w", {static_cast<std::size_t>(cfg_.h_max), static_cast<std::size_t>(minilang::kNodeTypeCount), da},
         0.5 / std::sqrt(static_cast<double>(da)));
  normal("dfp.U", {dd, dd}, 0.3 / std::sqrt(static_cast<double>(dd)));
  normal("dfp.V", {dd, dd}, 0.3 / std::sqrt(static_cast<double>(dd)));
  normal("dfp.u", {dd}, 0.3 / std::sqrt(static_cast<double>(dd)));
  normal("dfp.v", {dd}, 0.3 / std::sqrt(static_cast<double>(dd)));
  constant("dfp.w", {1}, 0.0);
}

LossBreakdown StructModel::loss(const Example& ex, const LossWeights& w) const {
  const Impl m = Impl::bind(*this);
  const Tensor memory = m.encode(ex.source, nullptr);
  const auto ids = Impl::shifted(ex.target.token_ids);
  const Tensor h = m.decode_states(memory, ids, nullptr);
  return m.heads(h, ex.target, w, 1.0, nullptr);
}

LossBreakdown StructModel::accumulate_gradients(const Example& ex, const LossWeights& w, double scale) {
  const Impl m = Impl::bind(*this);
  EncCache ec;
  const Tensor memory = m.encode(ex.source, &ec);
  DecCache dc;
  const auto ids = Impl::shifted(ex.target.token_ids);
  const Tensor h = m.decode_states(memory, ids, &dc);
  Tensor dh = Tensor::matrix(h.rows(), h.cols());
  const LossBreakdown out = m.heads(h, ex.target, w, scale, &dh);
  const Tensor dmem = m.decode_backward(dc, dh, memory.rows());
  m.encode_backward(ex.source, ec, dmem);
  return out;
}

Tensor StructModel::encode(const EncoderInput& input) const { return Impl::bind(*this).encode(input, nullptr); }

std::vector<std::vector<Tensor>> StructModel::encoder_attention(const EncoderInput& input) const {
  std::vector<std::vector<Tensor>> out;
  Impl::bind(*this).encode(input, nullptr, &out);
  return out;
}

Tensor StructModel::decoder_hidden(const EncoderInput& input, std::span<const int> target_ids) const {
  const Impl m = Impl::bind(*this);
  const Tensor memory = m.encode(input, nullptr);
  return m.decode_states(memory, Impl::shifted(target_ids), nullptr);
}

std::vector<double> StructModel::app_logits(std::span<const double> hidden, int height) const {
  return Impl::bind(*this).app_logits(hidden, height);
}

Tensor StructModel::dfp_probabilities(const Tensor& hidden, std::size_t n_positions) const {
  Tensor z = Impl::bind(*this).dfp_scores(hidden, n_positions, nullptr, nullptr, nullptr);
  for (auto& v : z.values()) v = numkit::sigmoid(v);
  return z;
}

TeacherForced StructModel::teacher_forced(const Example& ex) const {
  const Impl m = Impl::bind(*this);
  TeacherForced out;
  out.hidden = decoder_hidden(ex.source, ex.target.token_ids);
  numkit::matmul_bt(out.hidden, m.lm->value, out.logits);
  const std::size_t n = ex.target.token_ids.size();
  if (ex.target.has_structure) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& path = ex.target.path_types[i];
      std::vector<int> pred;
      for (std::size_t k = 0; k < path.size(); ++k) {
        const auto lg = m.app_logits(out.hidden.row(i), static_cast<int>(path.size() - 1 - k));
        pred.push_back(static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin()));
      }
      out.app_pred.push_back(std::move(pred));
      out.app_true.push_back(path);
    }
  }
  out.dfp_prob = dfp_probabilities(out.hidden, n);
  return out;
}

DecodeResult StructModel::decode(const EncoderInput& input, const DecodeOptions& opts) const {
  const Impl m = Impl::bind(*this);
  const Tensor memory = m.encode(input, nullptr);
  const std::size_t vocab = static_cast<std::size_t>(cfg_.vocab_size);
  const std::size_t width = static_cast<std::size_t>(std::max(1, opts.beam));

  auto next_log_probs = [&](const std::vector<int>& prefix) {
    const Tensor h = m.decode_states(memory, Impl::shifted(prefix), nullptr);
    const auto last = h.row(h.rows() - 1);
    std::vector<double> lp(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
      double s = 0.0;
      const auto w = m.lm->value.row(v);
      for (std::size_t c = 0; c < last.size(); ++c) s += w[c] * last[c];
      lp[v] = s;
    }
    const double mx = *std::max_element(lp.begin(), lp.end());
    double sum = 0.0;
    for (double x : lp) sum += std::exp(x - mx);
    const double log_z = mx + std::log(sum);
    for (auto& x : lp) x -= log_z;
    return lp;
  };

  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
  };
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Hyp> finished;
  for (int step = 0; step < opts.max_len && !alive.empty(); ++step) {
    struct Cand {
      double score;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t hi = 0; hi < alive.size(); ++hi) {
      const auto lp = next_log_probs(alive[hi].tokens);
      for (std::size_t v = 0; v < vocab; ++v) cands.push_back({alive[hi].score + lp[v], hi, static_cast<int>(v)});
    }
    // best first; ties broken by hypothesis then token order
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    std::vector<Hyp> next;
    for (const auto& c : cands) {
      if (next.size() + finished.size() >= width && !next.empty()) break;
      if (next.size() >= width) break;
      Hyp h{alive[c.hyp].tokens, c.score};
      if (c.token == minilang::kEos) {
        finished.push_back(std::move(h));
        if (finished.size() >= width) break;
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (finished.size() >= width) break;
    if (!finished.empty()) {
      double best_finished = finished.front().score;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      bool can_improve = false;
      for (const auto& a : alive) can_improve = can_improve || a.score > best_finished;
      if (!can_improve) break;
    }
  }
  DecodeResult result;
  if (!finished.empty()) {
    const auto best = std::max_element(finished.begin(), finished.end(),
                                       [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
    result.tokens = best->tokens;
    result.log_prob = best->score;
  } else if (!alive.empty()) {
    result.tokens = alive.front().tokens;
    result.log_prob = alive.front().score;
    result.truncated = true;
  }
  return result;
}

}  // namespace structkit::model
