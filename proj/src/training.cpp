// Copyright 2026 The Circuit Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "circuit_lab/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "circuit_lab/error.hpp"
#include "circuit_lab/parallel.hpp"
#include "circuit_lab/rng.hpp"

namespace circuit_lab {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs) {
    throw ConfigError("patience must be in [1, max_epochs]");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (min_delta < 0.0) throw ConfigError("min_delta must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"learning_rate", learning_rate}, {"weight_decay", weight_decay},
                      {"batch_size", batch_size},       {"max_epochs", max_epochs},
                      {"patience", patience},           {"beta1", beta1},
                      {"beta2", beta2},                 {"adam_eps", adam_eps},
                      {"seed", seed},                   {"grad_clip_norm", grad_clip_norm},
                      {"min_delta", min_delta}};
  if (trainable_layers) j["trainable_layers"] = *trainable_layers;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", std::min(c.patience, c.max_epochs));
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.min_delta = j.value("min_delta", c.min_delta);
    if (j.contains("trainable_layers")) {
      c.trainable_layers = j.at("trainable_layers").get<std::vector<int>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write history: " + path.string());
  out << "epoch,train_loss,val_loss\n" << std::setprecision(17);
  for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
    out << (e + 1) << ',' << history.train_loss[e] << ',' << history.val_loss[e] << '\n';
  }
}

bool EarlyStopping::update(double loss) {
  ++epochs_;
  if (best_epoch_ == 0 || loss <= best_ - min_delta_) {
    best_ = loss;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

template <typename Scalar>
double clip_grad_norm(std::span<Tensor<Scalar>> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (p.has_grad()) sq += p.grad().template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar factor = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (auto& p : params) {
      if (p.has_grad()) p.grad() *= factor;
    }
  }
  return norm;
}

template <typename Scalar>
AdamW<Scalar>::AdamW(const TrainConfig& config, std::span<const Tensor<Scalar>> params)
    : lr_(config.learning_rate),
      wd_(config.weight_decay),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps) {
  for (const auto& p : params) {
    m_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(std::span<Tensor<Scalar>> params) {
  if (params.size() != m_.size()) {
    throw ContractError("optimizer built for " + std::to_string(m_.size()) +
                        " tensors, stepped with " + std::to_string(params.size()));
  }
  ++step_;
  const Scalar b1 = static_cast<Scalar>(beta1_);
  const Scalar b2 = static_cast<Scalar>(beta2_);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, static_cast<double>(step_)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, static_cast<double>(step_)));
  const Scalar lr = static_cast<Scalar>(lr_);
  const Scalar decay = static_cast<Scalar>(1.0 - lr_ * wd_);
  const Scalar eps = static_cast<Scalar>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    if (p.has_grad()) {
      const auto& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    } else {
      m *= b1;
      v *= b2;
    }
    if (wd_ != 0.0) p.value() *= decay;
    p.value().array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template <typename Scalar>
Tensor<Scalar> example_nll(const GptModel<Scalar>& model, const EncodedExample& example,
                           const ProjectionHook<Scalar>* hook) {
  const auto& tokens = example.tokens;
  if (tokens.size() < 2 || example.loss_mask.size() != tokens.size()) {
    throw DegenerateInputError("example has no next-token targets");
  }
  std::vector<Index> rows;
  std::vector<TokenId> targets;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (example.loss_mask[i + 1]) {
      rows.push_back(static_cast<Index>(i));
      targets.push_back(tokens[i + 1]);
    }
  }
  if (rows.empty()) throw DegenerateInputError("example has an empty loss mask");
  ForwardOptions<Scalar> options;
  options.hook = hook;
  const Tensor<Scalar> hidden = forward_hidden(
      model, std::span<const TokenId>(tokens).first(tokens.size() - 1), options);
  const Tensor<Scalar> logits =
      output_logits(model, gather_rows(hidden, std::span<const Index>(rows)));
  return cross_entropy_masked(logits, std::span<const TokenId>(targets),
                              std::vector<bool>(targets.size(), true));
}

template <typename Scalar>
std::vector<Tensor<Scalar>> ModelObjective<Scalar>::trainable() const {
  std::vector<Tensor<Scalar>> out;
  for (auto& p : model_->parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

template <typename Scalar>
std::unique_ptr<Objective<Scalar>> ModelObjective<Scalar>::replicate() const {
  auto copy = std::make_shared<GptModel<Scalar>>(model_->clone());
  auto obj = std::make_unique<ModelObjective<Scalar>>(*copy);
  obj->owned_ = std::move(copy);
  return obj;
}

namespace {

double target_weight(const EncodedExample& ex) {
  // Targets are tokens[1..]; loss_mask[0] never counts.
  double n = 0;
  for (std::size_t i = 1; i < ex.loss_mask.size(); ++i) n += ex.loss_mask[i] ? 1 : 0;
  return n;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> compute_loss(const Objective<Scalar>& objective,
                            std::span<const EncodedExample> batch) {
  if (batch.empty()) throw DegenerateInputError("compute_loss: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) total += target_weight(ex);
  Tensor<Scalar> loss;
  for (const auto& ex : batch) {
    Tensor<Scalar> term = scale(objective.example_loss(ex),
                                static_cast<Scalar>(target_weight(ex) / total));
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

template <typename Scalar>
Tensor<Scalar> compute_loss(const GptModel<Scalar>& model,
                            std::span<const EncodedExample> batch) {
  ModelObjective<Scalar> objective(const_cast<GptModel<Scalar>&>(model));
  return compute_loss(static_cast<const Objective<Scalar>&>(objective), batch);
}

template <typename Scalar>
double evaluate_loss(const Objective<Scalar>& objective,
                     std::span<const EncodedExample> examples) {
  if (examples.empty()) throw DegenerateInputError("evaluate_loss: no examples");
  std::vector<double> losses(examples.size());
  parallel_for(examples.size(), [&](unsigned, std::size_t i) {
    losses[i] = static_cast<double>(objective.example_loss(examples[i]).item());
  });
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const double w = target_weight(examples[i]);
    sum += losses[i] * w;
    count += w;
  }
  return sum / count;
}

template <typename Scalar>
TrainHistory fit(Objective<Scalar>& objective, std::span<const EncodedExample> train,
                 std::span<const EncodedExample> val, const TrainConfig& config,
                 const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty() || val.empty()) {
    throw DegenerateInputError("training needs non-empty train and validation sets");
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<Tensor<Scalar>> params = objective.trainable();
  if (params.empty()) throw ConfigError("nothing to train: no trainable tensors");
  AdamW<Scalar> optimizer(config, params);

  const unsigned workers = std::min<unsigned>(
      worker_count(), static_cast<unsigned>(config.batch_size));
  std::vector<std::unique_ptr<Objective<Scalar>>> replicas;
  std::vector<std::vector<Tensor<Scalar>>> replica_params;
  for (unsigned w = 1; w < workers; ++w) {
    replicas.push_back(objective.replicate());
    replica_params.push_back(replicas.back()->trainable());
  }
  auto worker_objective = [&](unsigned w) -> const Objective<Scalar>& {
    return w == 0 ? objective : *replicas[w - 1];
  };
  auto worker_params = [&](unsigned w) -> std::vector<Tensor<Scalar>>& {
    return w == 0 ? params : replica_params[w - 1];
  };
  auto sync_replicas = [&] {
    for (auto& rp : replica_params) {
      for (std::size_t i = 0; i < rp.size(); ++i) rp[i].value() = params[i].value();
    }
  };

  std::vector<Matrix<Scalar>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.push_back(p.value());
  };

  Rng rng(config.seed);
  EarlyStopping stopper(config.patience, config.min_delta);
  TrainHistory history;
  std::vector<std::size_t> order(train.size());
  const std::size_t B = static_cast<std::size_t>(config.batch_size);
  // Per-slot gradients of the current batch: slot[i][tensor].
  std::vector<std::vector<Matrix<Scalar>>> slot_grads(std::min(B, train.size()));
  std::vector<double> slot_loss(slot_grads.size());
  std::vector<Matrix<Scalar>> sum_grads;
  for (const auto& p : params) sum_grads.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng = rng.fork(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    double epoch_targets = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += B) {
      const std::size_t n = std::min(B, order.size() - begin);
      double batch_targets = 0.0;
      for (std::size_t i = 0; i < n; ++i) batch_targets += target_weight(train[order[begin + i]]);

      parallel_for(n, [&](unsigned w, std::size_t i) {
        const EncodedExample& ex = train[order[begin + i]];
        auto& wp = worker_params(w);
        for (auto& p : wp) p.zero_grad();
        Tape<Scalar> tape;
        double value;
        {
          typename Tape<Scalar>::Scope scope(tape);
          Tensor<Scalar> loss = worker_objective(w).example_loss(ex);
          value = static_cast<double>(loss.item());
          tape.backward(scale(loss, static_cast<Scalar>(target_weight(ex) / batch_targets)));
        }
        slot_loss[i] = value;
        auto& g = slot_grads[i];
        g.resize(wp.size());
        for (std::size_t t = 0; t < wp.size(); ++t) {
          if (wp[t].has_grad()) {
            g[t] = wp[t].grad();
          } else {
            g[t] = Matrix<Scalar>::Zero(wp[t].rows(), wp[t].cols());
          }
        }
      }, workers);

      for (auto& s : sum_grads) s.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        const double w = target_weight(train[order[begin + i]]);
        if (!std::isfinite(slot_loss[i])) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(optimizer.steps() + 1));
        }
        epoch_loss += slot_loss[i] * w;
        epoch_targets += w;
        for (std::size_t t = 0; t < params.size(); ++t) sum_grads[t] += slot_grads[i][t];
      }
      for (std::size_t t = 0; t < params.size(); ++t) params[t].grad() = sum_grads[t];
      clip_grad_norm(std::span<Tensor<Scalar>>(params), config.grad_clip_norm);
      optimizer.step(params);
      sync_replicas();
    }

    const double val_loss = evaluate_loss<Scalar>(objective, val);
    if (!std::isfinite(val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    history.train_loss.push_back(epoch_loss / epoch_targets);
    history.val_loss.push_back(val_loss);
    history.stop_epoch = epoch;
    if (stopper.update(val_loss)) snapshot();
    if (on_epoch) on_epoch(epoch, history);
    if (stopper.should_stop()) break;
  }

  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t].value() = best[t];
    params[t].zero_grad();
  }
  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best_loss();
  history.steps = optimizer.steps();
  history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return history;
}

template <typename Scalar>
TrainHistory train(GptModel<Scalar>& model, std::span<const EncodedExample> train_set,
                   std::span<const EncodedExample> val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  if (config.trainable_layers) {
    const auto& layers = *config.trainable_layers;
    for (int l : layers) {
      if (l < 0 || l >= model.config.n_layers) {
        throw ConfigError("trainable layer " + std::to_string(l) + " out of range");
      }
    }
    model.set_trainable([&](const std::string&, int layer) {
      return std::find(layers.begin(), layers.end(), layer) != layers.end();
    });
  } else {
    model.set_trainable([](const std::string&, int) { return true; });
  }
  ModelObjective<Scalar> objective(model);
  return fit<Scalar>(objective, train_set, val_set, config, on_epoch);
}

#define CIRCUIT_LAB_INSTANTIATE(S)                                                     \
  template double clip_grad_norm(std::span<Tensor<S>>, double);                        \
  template class AdamW<S>;                                                             \
  template class ModelObjective<S>;                                                    \
  template Tensor<S> example_nll(const GptModel<S>&, const EncodedExample&,            \
                                 const ProjectionHook<S>*);                            \
  template Tensor<S> compute_loss(const Objective<S>&, std::span<const EncodedExample>); \
  template Tensor<S> compute_loss(const GptModel<S>&, std::span<const EncodedExample>); \
  template double evaluate_loss(const Objective<S>&, std::span<const EncodedExample>);   \
  template TrainHistory fit(Objective<S>&, std::span<const EncodedExample>,            \
                            std::span<const EncodedExample>, const TrainConfig&,       \
                            const EpochCallback&);                                     \
  template TrainHistory train(GptModel<S>&, std::span<const EncodedExample>,           \
                              std::span<const EncodedExample>, const TrainConfig&,     \
                              const EpochCallback&);

CIRCUIT_LAB_INSTANTIATE(float)
CIRCUIT_LAB_INSTANTIATE(double)

#undef CIRCUIT_LAB_INSTANTIATE

}  // namespace circuit_lab
