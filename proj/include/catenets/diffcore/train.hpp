#pragma once

// Minibatch Adam training with a seeded validation split and early stopping.

#include "catenets/core.hpp"
#include "catenets/diffcore/adam.hpp"
#include "catenets/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace catenets::diff {

/// Rows of training data. `w` is the treatment indicator; learners that do not
/// need it may leave it empty.
struct Batch {
  Matrix x;
  Vector y;
  Vector w;

  Index size() const noexcept { return x.rows(); }

  Batch rows(std::span<const Index> idx) const {
    Batch out;
    out.x.resize(static_cast<Index>(idx.size()), x.cols());
    out.y.resize(static_cast<Index>(idx.size()));
    if (w.size() > 0) out.w.resize(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Index r = idx[i];
      out.x.row(static_cast<Index>(i)) = x.row(r);
      out.y(static_cast<Index>(i)) = y(r);
      if (w.size() > 0) out.w(static_cast<Index>(i)) = w(r);
    }
    return out;
  }
};

struct TrainConfig {
  Index batch_size = 100;
  double val_fraction = 0.3;
  int patience = 10;     // validation checks (one per epoch) without improvement
  int max_epochs = 1000;
  long max_steps = 0;    // 0: max_epochs worth of minibatch steps
  double step_size = 1e-4;
  std::uint64_t seed = 0;
};

template <class Model>
struct TrainReport {
  Model best_params;
  std::vector<double> train_curve;  // mean minibatch loss per epoch
  std::vector<double> val_curve;    // validation loss at each check
  long stop_step = 0;
  long best_step = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// A model exposes its parameter matrices in a fixed order through visit(),
/// and can rebuild itself with every parameter mapped through a function.
template <class M>
concept ParameterModel = requires(M& m, const M& cm) {
  m.visit([](Matrix&) {});
  cm.rebind([](const Matrix&) { return Var{}; });
};

template <ParameterModel M>
auto bind(Tape& tape, const M& model, bool trainable = true) {
  return model.rebind([&](const Matrix& p) { return trainable ? tape.parameter(p) : tape.constant(p); });
}

template <ParameterModel M>
std::vector<Matrix*> parameter_list(M& model) {
  std::vector<Matrix*> out;
  model.visit([&](Matrix& p) { out.push_back(&p); });
  return out;
}

template <ParameterModel M>
std::vector<const Matrix*> parameter_list(const M& model) {
  std::vector<const Matrix*> out;
  model.visit([&](const Matrix& p) { out.push_back(&p); });
  return out;
}

template <ParameterModel M>
Index parameter_count(const M& model) {
  Index n = 0;
  model.visit([&](const Matrix& p) { n += p.size(); });
  return n;
}

template <class B>
std::vector<Var> var_list(const B& bound) {
  std::vector<Var> out;
  bound.visit([&](const Var& v) { out.push_back(v); });
  return out;
}

template <ParameterModel M, class L>
double evaluate_loss(const M& model, const Batch& batch, L&& loss) {
  Tape tape;
  const auto bound = bind(tape, model, false);
  return tape.scalar(loss(tape, bound, batch));
}

/// Loss value and exact gradients, one matrix per parameter in visit() order.
template <ParameterModel M, class L>
double loss_and_gradients(const M& model, const Batch& batch, L&& loss, std::vector<Matrix>& grads) {
  Tape tape;
  const auto bound = bind(tape, model, true);
  const Var root = loss(tape, bound, batch);
  tape.backward(root);
  grads.clear();
  bound.visit([&](const Var& v) { grads.push_back(tape.grad(v)); });
  return tape.scalar(root);
}

/// Seeded permutation of [0, n).
inline std::vector<Index> shuffled_indices(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Returns the parameters with the lowest validation loss seen. The last
/// val_fraction of a seeded shuffle is held out; minibatches are reshuffled
/// every epoch from the same seed stream.
template <ParameterModel M, class L>
TrainReport<M> train(M model, const Batch& data, L&& loss, const TrainConfig& cfg) {
  if (data.size() == 0) throw InputError("train: empty dataset");
  if (cfg.batch_size <= 0) throw InputError("train: batch_size must be positive");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw InputError("train: val_fraction must lie in (0, 1)");
  if (cfg.patience < 0) throw InputError("train: patience must be nonnegative");

  const Index n = data.size();
  const auto n_val = static_cast<Index>(std::floor(static_cast<double>(n) * cfg.val_fraction));
  const Index n_train = n - n_val;
  if (n_val < 1)
    throw InputError("train: validation split is empty (n=" + std::to_string(n) +
                     ", val_fraction=" + std::to_string(cfg.val_fraction) + ")");
  if (n_train < 1) throw InputError("train: training split is empty");

  Rng rng(derive_seed(cfg.seed, 0x7261696eULL));
  const auto order = shuffled_indices(n, rng);
  std::vector<Index> train_idx(order.begin(), order.begin() + n_train);
  const std::vector<Index> val_idx(order.begin() + n_train, order.end());
  const Batch val = data.rows(val_idx);

  const Index batch = std::min(cfg.batch_size, n_train);
  const long steps_per_epoch = static_cast<long>((n_train + batch - 1) / batch);
  const long max_steps = cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * cfg.max_epochs;

  TrainReport<M> report{model, {}, {}, 0, 0, std::numeric_limits<double>::infinity()};
  auto params = parameter_list(model);
  AdamState adam(params);
  std::vector<Matrix> grads;
  int since_best = 0;
  long step = 0;

  while (step < max_steps) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (Index start = 0; start < n_train && step < max_steps; start += batch) {
      const Index len = std::min(batch, n_train - start);
      const Batch mb = data.rows(std::span<const Index>(train_idx.data() + start, static_cast<std::size_t>(len)));
      const double value = loss_and_gradients(model, mb, loss, grads);
      if (!std::isfinite(value))
        throw TrainingError("train: non-finite training loss at step " + std::to_string(step));
      adam_step(params, grads, adam, cfg.step_size);
      epoch_loss += value;
      ++epoch_batches;
      ++step;
    }
    report.train_curve.push_back(epoch_loss / static_cast<double>(std::max<long>(epoch_batches, 1)));

    const double val_loss = evaluate_loss(model, val, loss);
    if (!std::isfinite(val_loss))
      throw TrainingError("train: non-finite validation loss at step " + std::to_string(step));
    report.val_curve.push_back(val_loss);
    if (val_loss < report.best_val_loss) {
      report.best_val_loss = val_loss;
      report.best_params = model;
      report.best_step = step;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  report.stop_step = step;
  return report;
}

}  // namespace catenets::diff
