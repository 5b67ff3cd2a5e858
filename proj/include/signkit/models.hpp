#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "signkit/decoding.hpp"
#include "signkit/errors.hpp"
#include "signkit/losses.hpp"
#include "signkit/nn.hpp"
#include "signkit/rng.hpp"
#include "signkit/tensor.hpp"
#include "signkit/threading.hpp"

namespace signkit::models {

using nn::Mode;

// Gradient contributions are accumulated per fixed-size chunk of samples and
// the chunk subtotals merged in index order, so batch gradients are
// bit-identical for any worker count.
inline constexpr std::size_t kGradChunkSamples = 8;

struct GradBuffer {
  std::map<std::string, Tensor> grads;

  static GradBuffer like(const ParameterSet& ps) {
    GradBuffer b;
    for (const auto& [path, g] : ps.grads)
      b.grads.emplace(path, Tensor::zeros(g.shape));
    return b;
  }
  void zero() {
    for (auto& [path, g] : grads) g.fill(0.0);
  }
  Tensor& grad(const std::string& path) { return grads.at(path); }
  void merge_into(ParameterSet& ps) const {
    for (const auto& [path, g] : grads) {
      Tensor& dst = ps.grads.at(path);
      for (std::size_t i = 0; i < g.size(); ++i)
        dst.values[i] += g.values[i];
    }
  }
};

// Runs fn(sample_index, sink) for every sample, parallel across chunks,
// merging chunk gradients into ps in chunk order.
template <class Fn>
void accumulate_batch_gradients(ParameterSet& ps, std::size_t batch, Fn&& fn) {
  const std::size_t nchunks =
      (batch + kGradChunkSamples - 1) / kGradChunkSamples;
  const int workers =
      std::min<std::size_t>(worker_count(), nchunks ? nchunks : 1);
  std::vector<GradBuffer> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.push_back(GradBuffer::like(ps));

  for (std::size_t wave = 0; wave < nchunks;
       wave += static_cast<std::size_t>(workers)) {
    const std::size_t wave_n =
        std::min<std::size_t>(workers, nchunks - wave);
    parallel_for(
        wave_n,
        [&](std::size_t w) {
          pool[w].zero();
          const std::size_t chunk = wave + w;
          const std::size_t lo = chunk * kGradChunkSamples;
          const std::size_t hi = std::min(batch, lo + kGradChunkSamples);
          for (std::size_t i = lo; i < hi; ++i) fn(i, pool[w]);
        },
        workers);
    for (std::size_t w = 0; w < wave_n; ++w) pool[w].merge_into(ps);
  }
}

// ------------------------------------------------------------- BiLSTM

// Team-2 style classifier: dropout -> batch norm -> projection -> stacked
// BiLSTM -> max pool over time -> class logits.
struct BiLstmConfig {
  int input_dim = 0;
  int projection_dim = 512;
  int lstm_hidden = 256;
  int lstm_layers = 2;
  double dropout = 0.2;
  int classes = 0;

  void validate() const {
    if (input_dim <= 0 || projection_dim <= 0 || lstm_hidden <= 0 ||
        lstm_layers <= 0 || classes <= 0)
      throw Error("BiLstmConfig: all dimensions must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw Error("BiLstmConfig: dropout must be in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const BiLstmConfig& c) {
  j = {{"input_dim", c.input_dim},   {"projection_dim", c.projection_dim},
       {"lstm_hidden", c.lstm_hidden}, {"lstm_layers", c.lstm_layers},
       {"dropout", c.dropout},       {"classes", c.classes}};
}

inline void from_json(const nlohmann::json& j, BiLstmConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("projection_dim").get_to(c.projection_dim);
  j.at("lstm_hidden").get_to(c.lstm_hidden);
  j.at("lstm_layers").get_to(c.lstm_layers);
  j.at("dropout").get_to(c.dropout);
  j.at("classes").get_to(c.classes);
}

struct PredictResult {
  bool rejected = false;
  int label = -1;  // class index in [0, classes)
  bool multi_symbol = false;
};

class BiLstmModel {
 public:
  BiLstmModel(const BiLstmConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t f = cfg.input_dim;
    const std::size_t p = cfg.projection_dim;
    const std::size_t h = cfg.lstm_hidden;

    params_.add("input_norm.gamma",
                Tensor::from({f}, std::vector<double>(f, 1.0)));
    params_.add("input_norm.beta", Tensor::zeros({f}));
    params_.add("input_norm.running_mean", Tensor::zeros({f}), true);
    params_.add("input_norm.running_var",
                Tensor::from({f}, std::vector<double>(f, 1.0)), true);
    params_.add("proj.w", nn::init_weight({p, f}, f, rng));
    params_.add("proj.b", Tensor::zeros({p}));
    for (int l = 0; l < cfg.lstm_layers; ++l) {
      const std::size_t in = (l == 0) ? p : 2 * h;
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base =
            "bilstm." + std::to_string(l) + "." + dir + ".";
        params_.add(base + "w_ih", nn::init_weight({4 * h, in}, in, rng));
        params_.add(base + "w_hh", nn::init_weight({4 * h, h}, h, rng));
        Tensor b_ih = Tensor::zeros({4 * h});
        for (std::size_t u = h; u < 2 * h; ++u) b_ih.values[u] = 1.0;
        params_.add(base + "b_ih", std::move(b_ih));
        params_.add(base + "b_hh", Tensor::zeros({4 * h}));
      }
    }
    params_.add("head.w",
                nn::init_weight({static_cast<std::size_t>(cfg.classes), 2 * h},
                                2 * h, rng));
    params_.add("head.b", Tensor::zeros({static_cast<std::size_t>(cfg.classes)}));
  }

  const BiLstmConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  struct SampleCache {
    nn::DropoutCache drop;
    nn::LinearCache proj;
    std::vector<nn::LstmSeqCache> lstm;  // layers * 2 (fwd, bwd)
    std::vector<std::size_t> pool_argmax;
    nn::LinearCache head;
    std::size_t frames = 0;
  };

  struct BatchCache {
    std::vector<SampleCache> samples;
    nn::BatchNormCache bn;
    std::vector<std::size_t> row_offset;
    std::size_t total_rows = 0;
  };

  // Batched training forward. Dropout masks derive from (dropout_seed,
  // sample index); batch normalization uses the statistics of all frames in
  // the batch. Returns logits [B, classes].
  Tensor forward_train(const std::vector<const Tensor*>& batch,
                       std::uint64_t dropout_seed, BatchCache& cache,
                       bool update_running_stats = true) {
    const std::size_t b = batch.size();
    const std::size_t f = cfg_.input_dim;
    cache.samples.assign(b, {});
    cache.row_offset.assign(b + 1, 0);
    for (std::size_t i = 0; i < b; ++i) {
      if (batch[i]->rank() != 2 || batch[i]->dim(1) != f)
        throw ShapeMismatch("bilstm forward: sample " + std::to_string(i) +
                            " has shape " + batch[i]->shape_str() +
                            ", expected [T," + std::to_string(f) + "]");
      cache.samples[i].frames = batch[i]->dim(0);
      cache.row_offset[i + 1] = cache.row_offset[i] + batch[i]->dim(0);
    }
    cache.total_rows = cache.row_offset[b];

    // Per-sample dropout, stacked into one [N,F] matrix.
    Tensor stacked = Tensor::zeros({cache.total_rows, f});
    parallel_for(b, [&](std::size_t i) {
      Rng rng(derive_seed(dropout_seed, i));
      Tensor dropped = nn::dropout_forward(*batch[i], cfg_.dropout, rng,
                                           Mode::Train, &cache.samples[i].drop);
      std::copy(dropped.values.begin(), dropped.values.end(),
                stacked.values.begin() + cache.row_offset[i] * f);
    });

    Tensor normed = nn::batchnorm1d_forward(
        stacked, params_.param("input_norm.gamma"),
        params_.param("input_norm.beta"),
        params_.param("input_norm.running_mean"),
        params_.param("input_norm.running_var"), Mode::Train, &cache.bn, 1e-5,
        0.1, update_running_stats);

    Tensor logits = Tensor::zeros({b, static_cast<std::size_t>(cfg_.classes)});
    parallel_for(b, [&](std::size_t i) {
      Tensor rows = Tensor::zeros({cache.samples[i].frames, f});
      std::copy(normed.values.begin() + cache.row_offset[i] * f,
                normed.values.begin() + cache.row_offset[i + 1] * f,
                rows.values.begin());
      Tensor out = forward_from_norm(rows, &cache.samples[i]);
      std::copy(out.values.begin(), out.values.end(), logits.row(i));
    });
    return logits;
  }

  // Accumulates parameter gradients for the batch; dlogits is [B, classes].
  void backward_train(const Tensor& dlogits, const BatchCache& cache) {
    const std::size_t b = cache.samples.size();
    const std::size_t f = cfg_.input_dim;
    Tensor d_norm = Tensor::zeros({cache.total_rows, f});

    accumulate_batch_gradients(params_, b, [&](std::size_t i, GradBuffer& gb) {
      Tensor drow = Tensor::zeros({std::size_t(1), dlogits.dim(1)});
      std::copy(dlogits.row(i), dlogits.row(i) + dlogits.dim(1),
                drow.values.begin());
      Tensor d_sample = backward_from_norm(drow, cache.samples[i], gb);
      std::copy(d_sample.values.begin(), d_sample.values.end(),
                d_norm.values.begin() + cache.row_offset[i] * f);
    });

    // Batch-norm affine gradients. Nothing below the normalization carries
    // parameters, so dx is not propagated further.
    const Tensor& xhat = cache.bn.xhat;
    Tensor& dgamma = params_.grad("input_norm.gamma");
    Tensor& dbeta = params_.grad("input_norm.beta");
    for (std::size_t r = 0; r < cache.total_rows; ++r) {
      const double* dyr = d_norm.row(r);
      const double* xr = xhat.row(r);
      for (std::size_t j = 0; j < f; ++j) {
        dgamma.values[j] += dyr[j] * xr[j];
        dbeta.values[j] += dyr[j];
      }
    }
  }

  // Eval-mode forward for one sample; running stats are read, not written.
  Tensor forward_eval(const Tensor& features) const {
    if (features.rank() != 2 ||
        features.dim(1) != static_cast<std::size_t>(cfg_.input_dim))
      throw ShapeMismatch("bilstm eval: features " + features.shape_str());
    Tensor normed = nn::batchnorm1d_forward(
        features, params_.param("input_norm.gamma"),
        params_.param("input_norm.beta"),
        const_cast<Tensor&>(params_.param("input_norm.running_mean")),
        const_cast<Tensor&>(params_.param("input_norm.running_var")),
        Mode::Eval, nullptr);
    return forward_from_norm(normed, nullptr);
  }

  PredictResult predict(const Tensor& features) const {
    const Tensor logits = forward_eval(features);
    PredictResult r;
    r.label = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits.values[c] > logits.values[r.label]) r.label = static_cast<int>(c);
    return r;
  }

 private:
  // Projection -> BiLSTM stack -> max pool -> head, from normalized rows.
  Tensor forward_from_norm(const Tensor& rows, SampleCache* cache) const {
    const std::size_t h = cfg_.lstm_hidden;
    Tensor x = nn::linear_forward(rows, params_.param("proj.w"),
                                  params_.param("proj.b"),
                                  cache ? &cache->proj : nullptr);
    if (cache) cache->lstm.assign(cfg_.lstm_layers * 2, {});
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      const std::string base = "bilstm." + std::to_string(l) + ".";
      Tensor merged = Tensor::zeros({x.dim(0), 2 * h});
      for (int dir = 0; dir < 2; ++dir) {
        const std::string prefix = base + (dir == 0 ? "fwd." : "bwd.");
        nn::LstmWeightRefs w{&params_.param(prefix + "w_ih"),
                             &params_.param(prefix + "w_hh"),
                             &params_.param(prefix + "b_ih"),
                             &params_.param(prefix + "b_hh")};
        Tensor out = nn::lstm_forward(
            x, w, h, dir == 1, cache ? &cache->lstm[l * 2 + dir] : nullptr);
        for (std::size_t t = 0; t < out.dim(0); ++t)
          std::copy(out.row(t), out.row(t) + h, merged.row(t) + dir * h);
      }
      x = std::move(merged);
    }
    std::vector<std::size_t> argmax;
    Tensor pooled = nn::max_pool_time(x, &argmax);
    if (cache) cache->pool_argmax = std::move(argmax);
    const std::size_t pooled_n = pooled.size();
    Tensor pooled_row =
        Tensor::from({std::size_t(1), pooled_n}, std::move(pooled.values));
    Tensor logits = nn::linear_forward(pooled_row, params_.param("head.w"),
                                       params_.param("head.b"),
                                       cache ? &cache->head : nullptr);
    const std::size_t out_n = logits.size();
    return Tensor::from({out_n}, std::move(logits.values));
  }

  Tensor backward_from_norm(const Tensor& dlogits_row,
                            const SampleCache& cache, GradBuffer& gb) const {
    const std::size_t h = cfg_.lstm_hidden;
    Tensor dpooled_row =
        nn::linear_backward(dlogits_row, cache.head, params_.param("head.w"),
                            gb.grad("head.w"), gb.grad("head.b"));
    const std::size_t dpooled_n = dpooled_row.size();
    Tensor dpooled =
        Tensor::from({dpooled_n}, std::move(dpooled_row.values));
    Tensor dx =
        nn::max_pool_time_backward(dpooled, cache.pool_argmax, cache.frames);

    for (int l = cfg_.lstm_layers - 1; l >= 0; --l) {
      const std::string base = "bilstm." + std::to_string(l) + ".";
      Tensor dinput;
      for (int dir = 0; dir < 2; ++dir) {
        const std::string prefix = base + (dir == 0 ? "fwd." : "bwd.");
        nn::LstmWeightRefs w{&params_.param(prefix + "w_ih"),
                             &params_.param(prefix + "w_hh"),
                             &params_.param(prefix + "b_ih"),
                             &params_.param(prefix + "b_hh")};
        nn::LstmGradRefs g{&gb.grad(prefix + "w_ih"), &gb.grad(prefix + "w_hh"),
                           &gb.grad(prefix + "b_ih"),
                           &gb.grad(prefix + "b_hh")};
        Tensor dh = Tensor::zeros({cache.frames, h});
        for (std::size_t t = 0; t < cache.frames; ++t)
          std::copy(dx.row(t) + dir * h, dx.row(t) + (dir + 1) * h, dh.row(t));
        Tensor dpart = nn::lstm_backward(dh, cache.lstm[l * 2 + dir], w, g);
        if (dir == 0)
          dinput = std::move(dpart);
        else
          dinput.add_scaled(dpart, 1.0);
      }
      dx = std::move(dinput);
    }

    // Dropout sits below the batch norm and has no parameters, so the
    // gradient chain stops at the normalization input.
    return nn::linear_backward(dx, cache.proj, params_.param("proj.w"),
                               gb.grad("proj.w"), gb.grad("proj.b"));
  }

  BiLstmConfig cfg_;
  ParameterSet params_;
};

// -------------------------------------------------- transformer + CTC

// Team-1 style model: projection -> sinusoidal positional encoding ->
// N post-norm transformer blocks -> per-frame class+blank log-probabilities,
// trained with CTC and decoded with prefix beam search.
struct TransformerCtcConfig {
  int input_dim = 0;
  int d_model = 128;
  int heads = 8;
  int blocks = 2;
  int ff_dim = 256;
  double dropout = 0.1;
  int classes = 0;
  int beam_width = 5;

  void validate() const {
    if (input_dim <= 0 || d_model <= 0 || heads <= 0 || blocks < 0 ||
        ff_dim <= 0 || classes <= 0 || beam_width <= 0)
      throw Error("TransformerCtcConfig: bad dimensions");
    if (d_model % heads != 0)
      throw IndivisibleHeads("d_model must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw Error("TransformerCtcConfig: dropout must be in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const TransformerCtcConfig& c) {
  j = {{"input_dim", c.input_dim}, {"d_model", c.d_model},
       {"heads", c.heads},         {"blocks", c.blocks},
       {"ff_dim", c.ff_dim},       {"dropout", c.dropout},
       {"classes", c.classes},     {"beam_width", c.beam_width}};
}

inline void from_json(const nlohmann::json& j, TransformerCtcConfig& c) {
  j.at("input_dim").get_to(c.input_dim);
  j.at("d_model").get_to(c.d_model);
  j.at("heads").get_to(c.heads);
  j.at("blocks").get_to(c.blocks);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("dropout").get_to(c.dropout);
  j.at("classes").get_to(c.classes);
  j.at("beam_width").get_to(c.beam_width);
}

class TransformerCtcModel {
 public:
  TransformerCtcModel(const TransformerCtcConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t f = cfg.input_dim;
    const std::size_t d = cfg.d_model;
    const std::size_t ff = cfg.ff_dim;
    params_.add("embed.w", nn::init_weight({d, f}, f, rng));
    params_.add("embed.b", Tensor::zeros({d}));
    for (int blk = 0; blk < cfg.blocks; ++blk) {
      const std::string base = "block." + std::to_string(blk) + ".";
      for (const char* nm : {"wq", "wk", "wv", "wo"})
        params_.add(base + "attn." + nm, nn::init_weight({d, d}, d, rng));
      for (const char* nm : {"bq", "bk", "bv", "bo"})
        params_.add(base + "attn." + nm, Tensor::zeros({d}));
      params_.add(base + "ln1.gamma",
                  Tensor::from({d}, std::vector<double>(d, 1.0)));
      params_.add(base + "ln1.beta", Tensor::zeros({d}));
      params_.add(base + "ff.w1", nn::init_weight({ff, d}, d, rng));
      params_.add(base + "ff.b1", Tensor::zeros({ff}));
      params_.add(base + "ff.w2", nn::init_weight({d, ff}, ff, rng));
      params_.add(base + "ff.b2", Tensor::zeros({d}));
      params_.add(base + "ln2.gamma",
                  Tensor::from({d}, std::vector<double>(d, 1.0)));
      params_.add(base + "ln2.beta", Tensor::zeros({d}));
    }
    params_.add("head.w",
                nn::init_weight({static_cast<std::size_t>(cfg.classes) + 1, d},
                                d, rng));
    params_.add("head.b",
                Tensor::zeros({static_cast<std::size_t>(cfg.classes) + 1}));
  }

  const TransformerCtcConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  struct SampleCache {
    nn::LinearCache embed;
    nn::DropoutCache embed_drop;
    std::vector<nn::TransformerBlockCache> blocks;
    nn::LinearCache head;
    Tensor lattice;  // [T, C+1], log-probabilities
  };

  Tensor forward_sample(const Tensor& features, Mode mode,
                        std::uint64_t dropout_seed, SampleCache* cache) const {
    if (features.rank() != 2 ||
        features.dim(1) != static_cast<std::size_t>(cfg_.input_dim))
      throw ShapeMismatch("transformer forward: features " +
                          features.shape_str());
    Rng rng(dropout_seed);
    Tensor x = nn::linear_forward(features, params_.param("embed.w"),
                                  params_.param("embed.b"),
                                  cache ? &cache->embed : nullptr);
    x.add_scaled(nn::positional_encoding(x.dim(0), cfg_.d_model), 1.0);
    x = nn::dropout_forward(x, cfg_.dropout, rng, mode,
                            cache ? &cache->embed_drop : nullptr);
    if (cache) cache->blocks.assign(cfg_.blocks, {});
    for (int blk = 0; blk < cfg_.blocks; ++blk) {
      const auto refs = block_refs(blk, nullptr);
      x = nn::transformer_block_forward(x, refs.first, cfg_.heads,
                                        cfg_.dropout, rng, mode,
                                        cache ? &cache->blocks[blk] : nullptr);
    }
    Tensor logits = nn::linear_forward(x, params_.param("head.w"),
                                       params_.param("head.b"),
                                       cache ? &cache->head : nullptr);
    Tensor lattice = nn::log_softmax_rows(logits);
    if (cache) cache->lattice = lattice;
    return lattice;
  }

  // Backward from d(loss)/d(lattice log-probs) for one sample.
  void backward_sample(const Tensor& dlattice, const SampleCache& cache,
                       GradBuffer& gb) const {
    Tensor dlogits = nn::log_softmax_backward_rows(dlattice, cache.lattice);
    Tensor dx = nn::linear_backward(dlogits, cache.head,
                                    params_.param("head.w"),
                                    gb.grad("head.w"), gb.grad("head.b"));
    for (int blk = cfg_.blocks - 1; blk >= 0; --blk) {
      auto [w, g] = block_refs(blk, &gb);
      dx = nn::transformer_block_backward(dx, cache.blocks[blk], w, g);
    }
    dx = nn::dropout_backward(dx, cache.embed_drop);
    nn::linear_backward(dx, cache.embed, params_.param("embed.w"),
                        gb.grad("embed.w"), gb.grad("embed.b"));
  }

  Tensor forward_eval(const Tensor& features) const {
    return forward_sample(features, Mode::Eval, 0, nullptr);
  }

  PredictResult predict(const Tensor& features) const {
    const Tensor lattice = forward_eval(features);
    const auto decoded = ctc::ctc_beam_search(lattice, cfg_.beam_width);
    const auto iso = ctc::isolated_prediction(decoded);
    PredictResult r;
    r.rejected = iso.rejected;
    r.multi_symbol = iso.multi_symbol;
    r.label = iso.rejected ? -1 : iso.symbol - 1;
    return r;
  }

 private:
  std::pair<nn::TransformerBlockWeightRefs, nn::TransformerBlockGradRefs>
  block_refs(int blk, GradBuffer* gb) const {
    const std::string base = "block." + std::to_string(blk) + ".";
    auto& p = const_cast<ParameterSet&>(params_);
    nn::TransformerBlockWeightRefs w{
        {&p.param(base + "attn.wq"), &p.param(base + "attn.wk"),
         &p.param(base + "attn.wv"), &p.param(base + "attn.wo"),
         &p.param(base + "attn.bq"), &p.param(base + "attn.bk"),
         &p.param(base + "attn.bv"), &p.param(base + "attn.bo")},
        &p.param(base + "ln1.gamma"),
        &p.param(base + "ln1.beta"),
        &p.param(base + "ln2.gamma"),
        &p.param(base + "ln2.beta"),
        &p.param(base + "ff.w1"),
        &p.param(base + "ff.b1"),
        &p.param(base + "ff.w2"),
        &p.param(base + "ff.b2")};
    nn::TransformerBlockGradRefs g{};
    if (gb) {
      g = nn::TransformerBlockGradRefs{
          {&gb->grad(base + "attn.wq"), &gb->grad(base + "attn.wk"),
           &gb->grad(base + "attn.wv"), &gb->grad(base + "attn.wo"),
           &gb->grad(base + "attn.bq"), &gb->grad(base + "attn.bk"),
           &gb->grad(base + "attn.bv"), &gb->grad(base + "attn.bo")},
          &gb->grad(base + "ln1.gamma"),
          &gb->grad(base + "ln1.beta"),
          &gb->grad(base + "ln2.gamma"),
          &gb->grad(base + "ln2.beta"),
          &gb->grad(base + "ff.w1"),
          &gb->grad(base + "ff.b1"),
          &gb->grad(base + "ff.w2"),
          &gb->grad(base + "ff.b2")};
    }
    return {w, g};
  }

  TransformerCtcConfig cfg_;
  ParameterSet params_;
};

// ---------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[4] = {'S', 'K', 'C', '1'};

// Binary checkpoint: magic, u16 version, u32-length-prefixed JSON metadata
// (model kind + config), then the parameters sorted by path, each as
// u16 path length + path, u8 rank, u32 dims, raw little-endian f64 values.
inline void save_checkpoint(const std::string& path, const ParameterSet& ps,
                            const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  out.write(kCheckpointMagic, 4);
  u16(1);
  const std::string meta_str = meta.dump();
  u32(static_cast<std::uint32_t>(meta_str.size()));
  out.write(meta_str.data(), meta_str.size());
  u32(static_cast<std::uint32_t>(ps.params.size()));
  for (const auto& [p, t] : ps.params) {
    u16(static_cast<std::uint16_t>(p.size()));
    out.write(p.data(), p.size());
    out.put(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape) u32(static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.values.data()),
              t.values.size() * sizeof(double));
  }
  if (!out) throw IoError("write failed: " + path);
}

struct CheckpointData {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  auto fail = [&](const std::string& why) -> void {
    throw IoError("bad checkpoint " + path + ": " + why);
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw BadMagic("not a checkpoint file: " + path);
  auto u16 = [&] {
    std::uint16_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  auto u32 = [&] {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  if (u16() != 1) fail("unsupported version");
  const std::uint32_t meta_len = u32();
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  CheckpointData data;
  data.meta = nlohmann::json::parse(meta_str);
  const std::uint32_t count = u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t path_len = u16();
    std::string name(path_len, '\0');
    in.read(name.data(), path_len);
    const int rank = in.get();
    std::vector<std::size_t> shape;
    for (int d = 0; d < rank; ++d) shape.push_back(u32());
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.values.data()),
            t.values.size() * sizeof(double));
    if (!in) fail("truncated tensor " + name);
    data.tensors.emplace(std::move(name), std::move(t));
  }
  return data;
}

// Fills an existing parameter set from checkpoint tensors; any missing path
// or shape disagreement is an error.
inline void load_parameters(ParameterSet& ps, const CheckpointData& data) {
  for (auto& [path, t] : ps.params) {
    auto it = data.tensors.find(path);
    if (it == data.tensors.end())
      throw ShapeMismatch("checkpoint is missing parameter " + path);
    if (it->second.shape != t.shape)
      throw ShapeMismatch("checkpoint shape for " + path + " is " +
                          it->second.shape_str() + ", model expects " +
                          t.shape_str());
    t = it->second;
  }
}

}  // namespace signkit::models
