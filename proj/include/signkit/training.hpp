#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "signkit/dataset.hpp"
#include "signkit/errors.hpp"
#include "signkit/losses.hpp"
#include "signkit/models.hpp"
#include "signkit/rng.hpp"
#include "signkit/tensor.hpp"
#include "signkit/threading.hpp"

namespace signkit::train {

enum class FlipMode { All, DetectedLeftHanded, Off };

inline const char* flip_mode_name(FlipMode m) {
  switch (m) {
    case FlipMode::All: return "all";
    case FlipMode::DetectedLeftHanded: return "left-handed";
    case FlipMode::Off: return "off";
  }
  return "?";
}

struct TrainConfig {
  int batch_size = 512;
  int epochs = 1;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  FlipMode flip_mode = FlipMode::All;

  void validate() const {
    if (batch_size < 2)
      throw Error("batch_size must be >= 2 (batch norm needs two rows)");
    if (epochs < 1) throw Error("epochs must be >= 1");
  }
};

// ------------------------------------------------------------------ Adam

struct AdamState {
  std::map<std::string, Tensor> m, v;
  long long step = 0;

  static AdamState like(const ParameterSet& ps) {
    AdamState s;
    for (const auto& [path, t] : ps.params) {
      if (ps.is_buffer(path)) continue;
      s.m.emplace(path, Tensor::zeros(t.shape));
      s.v.emplace(path, Tensor::zeros(t.shape));
    }
    return s;
  }
};

// One Adam update with bias correction, applied in sorted path order.
// Buffers are untouched; a zero gradient leaves its parameter unchanged
// while the moments decay.
inline void adam_step(ParameterSet& ps, AdamState& state,
                      const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [path, p] : ps.params) {
    if (ps.is_buffer(path)) continue;
    const Tensor& g = ps.grads.at(path);
    Tensor& m = state.m.at(path);
    Tensor& v = state.v.at(path);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.values[i];
      m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * gi;
      v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.values[i] / bc1;
      const double vhat = v.values[i] / bc2;
      p.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ------------------------------------------------------------- history

struct HistoryRecord {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<HistoryRecord> history;

  double final_accuracy(const std::string& split) const {
    for (auto it = history.rbegin(); it != history.rend(); ++it)
      if (it->split == split) return it->accuracy;
    return 0.0;
  }
};

// ------------------------------------------------------------- evaluate

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<PredictionOutcome> outcomes;  // sorted by sample_id
};

namespace detail {

struct TrainItem {
  std::size_t sample = 0;
  bool use_flipped = false;
};

// Expands the dataset according to the flip mode. All: every sample plus its
// mirrored copy. DetectedLeftHanded: left-dominant samples are replaced by
// their flips (canonicalizing handedness). Off: originals only.
inline std::vector<TrainItem> make_train_items(
    const std::vector<PreparedSample>& data, FlipMode mode) {
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (mode) {
      case FlipMode::All:
        items.push_back({i, false});
        items.push_back({i, true});
        break;
      case FlipMode::DetectedLeftHanded:
        items.push_back({i, data[i].dominant == Hand::Left});
        break;
      case FlipMode::Off:
        items.push_back({i, false});
        break;
    }
  }
  for (const auto& it : items)
    if (it.use_flipped && !data[it.sample].flipped)
      throw Error("flip mode needs flipped features; prepare_samples was "
                  "called without build_flipped");
  return items;
}

inline const Tensor& item_features(const std::vector<PreparedSample>& data,
                                   const TrainItem& it) {
  return it.use_flipped ? *data[it.sample].flipped : data[it.sample].features;
}

// Seeded in-place shuffle plus batch boundaries; a trailing batch of one is
// merged into the previous batch so batch norm always sees >= 2 rows.
inline std::vector<std::pair<std::size_t, std::size_t>> make_batches(
    std::vector<TrainItem>& items, std::size_t batch_size, Rng& rng) {
  for (std::size_t i = items.size() - 1; i > 0; --i)
    std::swap(items[i], items[rng.below(i + 1)]);
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  std::size_t start = 0;
  while (start < items.size()) {
    std::size_t end = std::min(items.size(), start + batch_size);
    if (items.size() - end == 1) end = items.size();
    batches.emplace_back(start, end);
    start = end;
  }
  return batches;
}

}  // namespace detail

// ------------------------------------------------------ BiLSTM training

// Seeded shuffling, per-batch forward/loss/backward/Adam. History carries
// one train record per epoch (loss and accuracy measured on the training
// forward passes) and one validation record when a validation set is given.
inline TrainResult fit(models::BiLstmModel& model,
                       const std::vector<PreparedSample>& data,
                       const std::vector<PreparedSample>* validation,
                       const TrainConfig& cfg);

inline TrainResult fit(models::TransformerCtcModel& model,
                       const std::vector<PreparedSample>& data,
                       const std::vector<PreparedSample>* validation,
                       const TrainConfig& cfg);

inline EvalResult evaluate(const models::BiLstmModel& model,
                           const std::vector<PreparedSample>& data);

inline EvalResult evaluate(const models::TransformerCtcModel& model,
                           const std::vector<PreparedSample>& data);

namespace detail {

template <class Model>
EvalResult evaluate_impl(const Model& model,
                         const std::vector<PreparedSample>& data,
                         double (*sample_loss)(const Model&,
                                               const PreparedSample&)) {
  EvalResult res;
  res.outcomes.resize(data.size());
  std::vector<double> losses(data.size(), 0.0);
  parallel_for(data.size(), [&](std::size_t i) {
    const auto& s = data[i];
    const models::PredictResult pred = model.predict(s.features);
    PredictionOutcome o;
    o.sample_id = s.sample_id;
    o.true_label = s.label;
    o.rejected = pred.rejected;
    o.predicted_label = pred.rejected ? -1 : pred.label;
    o.correct = !pred.rejected && pred.label == s.label;
    o.dominant_hand_presence = s.dominant_presence;
    o.multi_symbol = pred.multi_symbol;
    res.outcomes[i] = std::move(o);
    losses[i] = sample_loss(model, s);
  });
  std::sort(res.outcomes.begin(), res.outcomes.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  std::size_t correct = 0;
  for (const auto& o : res.outcomes) correct += o.correct ? 1 : 0;
  res.accuracy = data.empty() ? 0.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(data.size());
  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  res.mean_loss = data.empty() ? 0.0 : loss_sum / static_cast<double>(data.size());
  return res;
}

}  // namespace detail

inline EvalResult evaluate(const models::BiLstmModel& model,
                           const std::vector<PreparedSample>& data) {
  return detail::evaluate_impl<models::BiLstmModel>(
      model, data, [](const models::BiLstmModel& m, const PreparedSample& s) {
        const Tensor logits = m.forward_eval(s.features);
        const Tensor row = Tensor::from({std::size_t(1), logits.size()},
                                        std::vector<double>(logits.values));
        return ctc::cross_entropy(row, {s.label}).loss;
      });
}

inline EvalResult evaluate(const models::TransformerCtcModel& model,
                           const std::vector<PreparedSample>& data) {
  return detail::evaluate_impl<models::TransformerCtcModel>(
      model, data,
      [](const models::TransformerCtcModel& m, const PreparedSample& s) {
        const Tensor lattice = m.forward_eval(s.features);
        return ctc::ctc_loss(lattice, {s.label + 1}).loss;
      });
}

inline TrainResult fit(models::BiLstmModel& model,
                       const std::vector<PreparedSample>& data,
                       const std::vector<PreparedSample>* validation,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw EmptyDataset("training set is empty");
  for (const auto& s : data)
    if (s.label < 0 || s.label >= model.config().classes)
      throw LabelOutOfRange("sample " + s.sample_id + " label " +
                            std::to_string(s.label));

  auto items = detail::make_train_items(data, cfg.flip_mode);
  AdamState adam = AdamState::like(model.params());
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, epoch, 0x50f));
    const auto batches =
        detail::make_batches(items, cfg.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [lo, hi] = batches[b];
      std::vector<const Tensor*> batch;
      std::vector<int> labels;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(&detail::item_features(data, items[i]));
        labels.push_back(data[items[i].sample].label);
      }
      models::BiLstmModel::BatchCache cache;
      const std::uint64_t step_seed = derive_seed(cfg.seed, epoch, b, 0xd0);
      Tensor logits = model.forward_train(batch, step_seed, cache);
      const auto ce = ctc::cross_entropy(logits, labels);
      model.params().zero_grads();
      model.backward_train(ce.dlogits, cache);
      adam_step(model.params(), adam, cfg);

      loss_sum += ce.loss * static_cast<double>(batch.size());
      seen += batch.size();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double* row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.dim(1); ++c)
          if (row[c] > row[best]) best = c;
        if (static_cast<int>(best) == labels[i]) ++correct;
      }
    }

    result.history.push_back({epoch, "train",
                              loss_sum / static_cast<double>(seen),
                              static_cast<double>(correct) /
                                  static_cast<double>(seen)});
    if (validation) {
      const EvalResult ev = evaluate(model, *validation);
      result.history.push_back({epoch, "val", ev.mean_loss, ev.accuracy});
    }
  }
  return result;
}

inline TrainResult fit(models::TransformerCtcModel& model,
                       const std::vector<PreparedSample>& data,
                       const std::vector<PreparedSample>* validation,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw EmptyDataset("training set is empty");
  for (const auto& s : data)
    if (s.label < 0 || s.label >= model.config().classes)
      throw LabelOutOfRange("sample " + s.sample_id + " label " +
                            std::to_string(s.label));

  auto items = detail::make_train_items(data, cfg.flip_mode);
  AdamState adam = AdamState::like(model.params());
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, epoch, 0x50f));
    const auto batches =
        detail::make_batches(items, cfg.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [lo, hi] = batches[b];
      const std::size_t bsize = hi - lo;
      const std::uint64_t step_seed = derive_seed(cfg.seed, epoch, b, 0xd0);

      std::vector<models::TransformerCtcModel::SampleCache> caches(bsize);
      std::vector<Tensor> lattices(bsize);
      parallel_for(bsize, [&](std::size_t i) {
        lattices[i] = model.forward_sample(
            detail::item_features(data, items[lo + i]), nn::Mode::Train,
            derive_seed(step_seed, i), &caches[i]);
      });

      std::vector<Tensor> dlattices(bsize);
      const double inv_b = 1.0 / static_cast<double>(bsize);
      for (std::size_t i = 0; i < bsize; ++i) {
        const int label = data[items[lo + i].sample].label;
        auto res = ctc::ctc_loss(lattices[i], {label + 1});
        loss_sum += res.loss;
        for (auto& g : res.grad.values) g *= inv_b;
        dlattices[i] = std::move(res.grad);
        const auto decoded = ctc::ctc_greedy_decode(lattices[i]);
        const auto iso = ctc::isolated_prediction(decoded);
        if (!iso.rejected && iso.symbol - 1 == label) ++correct;
      }
      seen += bsize;

      model.params().zero_grads();
      models::accumulate_batch_gradients(
          model.params(), bsize, [&](std::size_t i, models::GradBuffer& gb) {
            model.backward_sample(dlattices[i], caches[i], gb);
          });
      adam_step(model.params(), adam, cfg);
    }

    result.history.push_back({epoch, "train",
                              loss_sum / static_cast<double>(seen),
                              static_cast<double>(correct) /
                                  static_cast<double>(seen)});
    if (validation) {
      const EvalResult ev = evaluate(model, *validation);
      result.history.push_back({epoch, "val", ev.mean_loss, ev.accuracy});
    }
  }
  return result;
}

}  // namespace signkit::train
