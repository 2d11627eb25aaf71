#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "structkit/errors.hpp"
#include "structkit/numkit.hpp"

namespace structkit::numkit {

void AdamW::step(ParamStore& params) {
  auto& all = params.all();
  if (m_.size() != all.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : all) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < all.size(); ++k) {
    auto& value = all[k].value.values();
    const auto& grad = all[k].grad.values();
    auto& m = m_[k].values();
    auto& v = v_[k].values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * value[i]);
    }
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

const ParamGradError* GradCheckReport::worst() const {
  const ParamGradError* w = nullptr;
  for (const auto& p : params) {
    if (!w || p.max_rel_error > w->max_rel_error) w = &p;
  }
  return w;
}

GradCheckReport measure_gradients(const std::function<double()>& loss, std::span<Param* const> params,
                                  const GradCheckOptions& opts) {
  GradCheckReport report;
  std::mt19937_64 rng(opts.seed);
  for (Param* p : params) {
    ParamGradError err;
    err.name = p->name;
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_param > 0 && n > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opts.h;
      const double up = loss();
      p->value[i] = saved - opts.h;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double analytic = p->grad[i];
      const double rel = relative_error(analytic, numeric);
      if (rel > err.max_rel_error || err.checked == 0) {
        err.max_rel_error = rel;
        err.worst_index = i;
        err.analytic = analytic;
        err.numeric = numeric;
      }
      ++err.checked;
    }
    report.params.push_back(err);
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<Param* const> params,
                                  const GradCheckOptions& opts) {
  auto report = measure_gradients(loss, params, opts);
  if (const auto* w = report.worst(); w && w->max_rel_error > opts.tolerance) {
    throw GradCheckFailure(w->name, w->max_rel_error);
  }
  return report;
}

nlohmann::json checkpoint_json(const ParamStore& params, const nlohmann::json& meta) {
  nlohmann::json out;
  out["format"] = "structkit-checkpoint";
  out["version"] = kCheckpointVersion;
  out["meta"] = meta;
  auto& list = out["params"] = nlohmann::json::array();
  for (const auto& p : params.all()) {
    list.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"values", p.value.values()}});
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamStore& params, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out << checkpoint_json(params, meta).dump() << '\n';
  if (!out) throw CheckpointError("failed writing " + path);
}

nlohmann::json read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  if (j.value("format", "") != "structkit-checkpoint") throw CheckpointError(path + ": not a structkit checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
  }
  return j;
}

void restore_params(const nlohmann::json& checkpoint, ParamStore& params) {
  std::unordered_map<std::string, const nlohmann::json*> by_name;
  for (const auto& entry : checkpoint.at("params")) by_name[entry.at("name").get<std::string>()] = &entry;
  for (auto& p : params.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing parameter " + p.name);
    const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
    if (shape != p.value.shape()) throw CheckpointError("shape mismatch for parameter " + p.name);
    auto values = it->second->at("values").get<std::vector<double>>();
    if (values.size() != p.value.size()) throw CheckpointError("value count mismatch for parameter " + p.name);
    p.value.values() = std::move(values);
  }
  if (by_name.size() != params.all().size()) throw CheckpointError("checkpoint has unexpected extra parameters");
}

}  // namespace structkit::numkit
