#pragma once

// Training loop: deterministic batch order, AdamW with warm-up and cosine
// decay, JSON-lines loss log, resumable checkpoints.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "edgespot/checkpoint.hpp"
#include "edgespot/loss.hpp"
#include "edgespot/optim.hpp"
#include "edgespot/synth.hpp"

namespace edgespot {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  AdamWConfig optim;
  std::size_t warmup = 50;
  double final_lr_fraction = 0.1;  // cosine decay floor as a fraction of lr
  LossWeights weights;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"lr", c.optim.lr},
          {"weight_decay", c.optim.weight_decay},
          {"clip_norm", c.optim.clip_norm},
          {"warmup", c.warmup},
          {"final_lr_fraction", c.final_lr_fraction},
          {"aux_weight", c.weights.aux}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.optim.lr = j.value("lr", c.optim.lr);
  c.optim.weight_decay = j.value("weight_decay", c.optim.weight_decay);
  c.optim.clip_norm = j.value("clip_norm", c.optim.clip_norm);
  c.warmup = j.value("warmup", c.warmup);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.weights.aux = j.value("aux_weight", c.weights.aux);
  return c;
}

/// Learning rate at 0-based step.
inline double scheduled_lr(const TrainConfig& c, std::size_t step) {
  const double base = c.optim.lr;
  if (c.warmup > 0 && step < c.warmup) return base * static_cast<double>(step + 1) / static_cast<double>(c.warmup);
  if (c.steps <= c.warmup) return base;
  const double p = static_cast<double>(step - c.warmup) / static_cast<double>(c.steps - c.warmup);
  const double floor = c.final_lr_fraction;
  return base * (floor + (1 - floor) * 0.5 * (1 + std::cos(std::numbers::pi * std::min(1.0, p))));
}

/// Scene indices for a 0-based step: consecutive slices of per-epoch
/// permutations, each permutation seeded by (seed, epoch).
inline std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                              std::size_t step) {
  if (dataset_size == 0) throw DataError("empty dataset");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t pos = step * batch + i;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, "epoch." + std::to_string(epoch)));
      for (std::size_t k = dataset_size; k > 1; --k)
        std::swap(perm[k - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(k) - 1))]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

template <class T>
void store_parameters(Checkpoint& ck, const ParamSet<T>& ps) {
  for (const auto& [name, t] : ps.items) ck.put(name, t);
}

/// Copies checkpoint values into the parameters; names and shapes must match.
template <class T>
void restore_parameters(const Checkpoint& ck, ParamSet<T>& ps) {
  for (auto& [name, t] : ps.items) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw DataError("checkpoint lacks parameter " + name);
    if (it->second.shape != t.shape())
      throw DataError("parameter " + name + ": checkpoint shape " + shape_str(it->second.shape) + " vs model " +
                      shape_str(t.shape()));
    auto dst = t.mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

struct StepReport {
  std::size_t step = 0;  // 1-based count of completed updates
  LossBreakdown loss;    // averaged over the batch
  double lr = 0;
  double grad_norm = 0;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"loss", loss.total},
            {"cls", loss.cls},
            {"chars", loss.chars},
            {"points", loss.points},
            {"box", loss.box},
            {"aux_cls", loss.aux_cls},
            {"aux_geometry", loss.aux_geometry},
            {"lr", lr},
            {"grad_norm", grad_norm}};
  }
};

/// One AdamW update on a batch; gradients are averaged over the images.
template <class T>
StepReport train_step(const Spotter<T>& model, AdamW<T>& opt, ParamSet<T>& params, const std::vector<const Scene*>& batch,
                      const LossWeights& weights, double lr) {
  if (batch.empty()) throw DataError("empty batch");
  params.zero_grad();
  StepReport r;
  const T inv = T(1) / static_cast<T>(batch.size());
  const double dinv = 1.0 / static_cast<double>(batch.size());
  for (const Scene* s : batch) {
    auto out = model.forward(s->image);
    auto loss = compute_loss(out, s->annotation, Alphabet::standard(), model.config, weights);
    mul_scalar(loss.total, inv).backward();
    auto& a = r.loss;
    const auto& b = loss.terms;
    a.total += b.total * dinv;
    a.cls += b.cls * dinv;
    a.chars += b.chars * dinv;
    a.points += b.points * dinv;
    a.box += b.box * dinv;
    a.aux_cls += b.aux_cls * dinv;
    a.aux_geometry += b.aux_geometry * dinv;
    a.matched += b.matched;
  }
  opt.set_lr(lr);
  r.lr = lr;
  r.grad_norm = opt.step();
  return r;
}

/// Owns the model and optimizer for a run over a fixed scene list.
class Trainer {
 public:
  Trainer(SpotterConfig model_cfg, TrainConfig cfg, const std::vector<Scene>& scenes)
      : cfg_(std::move(cfg)),
        scenes_(scenes),
        model_(model_cfg, cfg_.seed),
        params_(model_.parameters()),
        opt_(params_, cfg_.optim) {
    if (scenes_.empty()) throw DataError("training needs at least one scene");
    if (cfg_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    for (const auto& s : scenes_)
      if (s.image.width != model_cfg.image_size || s.image.height != model_cfg.image_size)
        throw DataError("scene " + s.annotation.image_id + " is " + std::to_string(s.image.width) + "px, model expects " +
                        std::to_string(model_cfg.image_size));
  }

  std::size_t step() const { return step_; }
  const Spotter<float>& model() const { return model_; }
  Spotter<float>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  StepReport run_step() {
    const auto idx = batch_indices(scenes_.size(), cfg_.batch_size, cfg_.seed, step_);
    std::vector<const Scene*> batch;
    for (auto i : idx) batch.push_back(&scenes_[i]);
    auto r = train_step(model_, opt_, params_, batch, cfg_.weights, scheduled_lr(cfg_, step_));
    r.step = ++step_;
    return r;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.meta["model"] = to_json(model_.config);
    ck.meta["train"] = to_json(cfg_);
    ck.meta["step"] = step_;
    store_parameters(ck, params_);
    opt_.save_state(ck);
    return ck;
  }

  void resume(const Checkpoint& ck) {
    restore_parameters(ck, params_);
    try {
      opt_.load_state(ck);
      step_ = ck.meta.at("step").get<std::size_t>();
    } catch (const std::out_of_range&) {
      throw DataError("checkpoint has no optimizer state to resume from");
    } catch (const nlohmann::json::exception&) {
      throw DataError("checkpoint has no optimizer state to resume from");
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Scene> scenes_;
  Spotter<float> model_;
  ParamSet<float> params_;
  AdamW<float> opt_;
  std::size_t step_ = 0;
};

/// Rebuilds a model from a checkpoint written by Trainer.
inline Spotter<float> load_model(const Checkpoint& ck) {
  if (!ck.meta.contains("model")) throw DataError("checkpoint has no model configuration");
  SpotterConfig cfg;
  try {
    cfg = spotter_config_from_json(ck.meta.at("model"));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint model configuration: ") + e.what());
  }
  Spotter<float> m(cfg, 0);
  auto ps = m.parameters();
  restore_parameters(ck, ps);
  return m;
}

}  // namespace edgespot
