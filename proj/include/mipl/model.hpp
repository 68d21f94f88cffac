#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mipl/corpus.hpp"
#include "mipl/errors.hpp"
#include "mipl/rng.hpp"
#include "mipl/sequence.hpp"

namespace mipl {

struct ModelConfig {
  std::int32_t vocab = kVocabSize;
  std::int32_t context = 4;     // previous-token window m
  std::int32_t embed_dim = 32;  // d
  double learning_rate = 0.1;
  std::int32_t epochs = 1;
  std::int32_t batch_size = 16;  // prediction positions per SGD step
  std::uint64_t seed = 0;

  bool same_architecture(const ModelConfig& o) const {
    return vocab == o.vocab && context == o.context && embed_dim == o.embed_dim;
  }
};

/// Weights are stored as f32 (matching the container format) while all forward
/// and gradient arithmetic runs in f64.
struct ModelParams {
  ModelConfig config;
  std::vector<float> emb;   // vocab x embed_dim, row-major
  std::vector<float> out;   // vocab x embed_dim, row-major
  std::vector<float> bias;  // vocab
  std::uint64_t train_steps = 0;
};

inline ModelParams init_model(const ModelConfig& config) {
  if (config.vocab < 1 || config.context < 1 || config.embed_dim < 1 || config.epochs < 0 ||
      config.batch_size < 1 || config.learning_rate <= 0.0) {
    throw Error(Errc::bad_param, "init_model: non-positive config field");
  }
  ModelParams p;
  p.config = config;
  const std::size_t wn = static_cast<std::size_t>(config.vocab) * config.embed_dim;
  p.emb.resize(wn);
  p.out.resize(wn);
  p.bias.assign(static_cast<std::size_t>(config.vocab), 0.0f);
  Rng rng(stream_seed(config.seed, "init"));
  for (float& w : p.emb) w = static_cast<float>(0.02 * rng.gaussian());
  for (float& w : p.out) w = static_cast<float>(0.02 * rng.gaussian());
  return p;
}

namespace detail {

/// Hidden state for predicting position t: mean of the previous m token
/// embeddings, left-padded with the reserved (all-zero) pad embedding.
inline void hidden_at(const ModelParams& p, const Sequence& x, int t, double* h) {
  const int m = p.config.context;
  const int d = p.config.embed_dim;
  std::fill(h, h + d, 0.0);
  for (int j = 1; j <= m; ++j) {
    const int src = t - j;
    if (src < 0) continue;  // pad contributes zeros
    const float* row = p.emb.data() + static_cast<std::size_t>(x[src]) * d;
    for (int e = 0; e < d; ++e) h[e] += row[e];
  }
  const double inv_m = 1.0 / m;
  for (int e = 0; e < d; ++e) h[e] *= inv_m;
}

/// Fills `probs` with softmax(out*h + bias) and returns log(p[target]).
inline double forward_probs(const ModelParams& p, const double* h, Token target, double* probs) {
  const int v_count = p.config.vocab;
  const int d = p.config.embed_dim;
  double max_z = -1e300;
  for (int v = 0; v < v_count; ++v) {
    const float* row = p.out.data() + static_cast<std::size_t>(v) * d;
    double z = p.bias[v];
    for (int e = 0; e < d; ++e) z += row[e] * h[e];
    probs[v] = z;
    if (z > max_z) max_z = z;
  }
  double sum = 0.0;
  for (int v = 0; v < v_count; ++v) {
    probs[v] = std::exp(probs[v] - max_z);
    sum += probs[v];
  }
  const double inv = 1.0 / sum;
  for (int v = 0; v < v_count; ++v) probs[v] *= inv;
  return std::log(probs[target] * sum) - std::log(sum);  // == log(probs[target])
}

/// Adds the gradient of the position-t cross-entropy loss of x to the three
/// accumulators and returns that loss. `h` and `probs` are scratch buffers.
inline double accumulate_example_gradient(const ModelParams& params, const Sequence& x, int t,
                                          double* grad_out, double* grad_bias, double* grad_emb,
                                          double* h, double* probs, double* dh) {
  const int m = params.config.context;
  const int d = params.config.embed_dim;
  const int v_count = params.config.vocab;
  const Token target = x[t];
  hidden_at(params, x, t, h);
  const double loss = -forward_probs(params, h, target, probs);

  probs[target] -= 1.0;  // dz = p - onehot(target)
  std::fill(dh, dh + d, 0.0);
  for (int v = 0; v < v_count; ++v) {
    const double dz = probs[v];
    grad_bias[v] += dz;
    const float* out_row = params.out.data() + static_cast<std::size_t>(v) * d;
    double* gout_row = grad_out + static_cast<std::size_t>(v) * d;
    for (int e = 0; e < d; ++e) {
      gout_row[e] += dz * h[e];
      dh[e] += dz * out_row[e];
    }
  }
  const double inv_m = 1.0 / m;
  for (int j = 1; j <= m; ++j) {
    const int src = t - j;
    if (src < 0) continue;
    double* gemb_row = grad_emb + static_cast<std::size_t>(x[src]) * d;
    for (int e = 0; e < d; ++e) gemb_row[e] += dh[e] * inv_m;
  }
  return loss;
}

}  // namespace detail

/// One epoch pass = every (context, target) position of every sequence, in a
/// seeded global shuffle, consumed in minibatches of `batch_size` positions.
/// The SGD step applies the sum of per-position gradients scaled by the
/// learning rate. Positions 0..m-1 are predicted through the pad embedding,
/// so every token of every sequence is a training example.
inline ModelParams train(ModelParams params, const Dataset& data) {
  if (data.empty()) return params;
  const ModelConfig& cfg = params.config;
  const int m = cfg.context;
  const int d = cfg.embed_dim;
  const int v_count = cfg.vocab;

  std::size_t n_examples = 0;
  for (const Sequence& s : data.points) {
    if (static_cast<int>(s.size()) <= m) {
      throw Error(Errc::sequence_too_short, "train: sequence length must exceed context");
    }
    for (Token t : s) {
      if (t < 0 || t >= v_count) throw Error(Errc::bad_param, "train: token id out of range");
    }
    n_examples += s.size();
  }

  // (sequence, position) example table
  std::vector<std::uint32_t> ex_seq(n_examples), ex_pos(n_examples);
  {
    std::size_t idx = 0;
    for (std::size_t si = 0; si < data.points.size(); ++si) {
      for (std::size_t t = 0; t < data.points[si].size(); ++t, ++idx) {
        ex_seq[idx] = static_cast<std::uint32_t>(si);
        ex_pos[idx] = static_cast<std::uint32_t>(t);
      }
    }
  }

  std::vector<std::uint32_t> order(n_examples);
  std::vector<double> h(d), probs(v_count);
  std::vector<double> grad_out(static_cast<std::size_t>(v_count) * d);
  std::vector<double> grad_bias(v_count);
  std::vector<double> grad_emb(static_cast<std::size_t>(v_count) * d);
  std::vector<double> dh(d);

  Rng shuffle_rng(stream_seed(cfg.seed, "shuffle"));
  const double lr = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_examples; ++i) order[i] = static_cast<std::uint32_t>(i);
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < n_examples; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n_examples);
      std::fill(grad_out.begin(), grad_out.end(), 0.0);
      std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
      std::fill(grad_emb.begin(), grad_emb.end(), 0.0);
      double batch_loss = 0.0;

      for (std::size_t i = start; i < stop; ++i) {
        const Sequence& x = data.points[ex_seq[order[i]]];
        const int t = static_cast<int>(ex_pos[order[i]]);
        batch_loss += detail::accumulate_example_gradient(params, x, t, grad_out.data(),
                                                          grad_bias.data(), grad_emb.data(),
                                                          h.data(), probs.data(), dh.data());
      }

      if (!std::isfinite(batch_loss)) {
        throw Error(Errc::training_diverged,
                    "train: non-finite loss at step " + std::to_string(params.train_steps));
      }
      for (std::size_t w = 0; w < grad_out.size(); ++w) {
        params.out[w] = static_cast<float>(params.out[w] - lr * grad_out[w]);
        params.emb[w] = static_cast<float>(params.emb[w] - lr * grad_emb[w]);
      }
      for (int v = 0; v < v_count; ++v) {
        params.bias[v] = static_cast<float>(params.bias[v] - lr * grad_bias[v]);
      }
      params.train_steps += 1;
    }
  }
  return params;
}

/// Per-position negative log-likelihoods; length equals |x| (pad-extended
/// contexts cover the first m positions).
inline std::vector<double> token_losses(const ModelParams& params, const Sequence& x) {
  const int m = params.config.context;
  if (static_cast<int>(x.size()) <= m) {
    throw Error(Errc::sequence_too_short, "token_losses: sequence length must exceed context");
  }
  std::vector<double> h(params.config.embed_dim), probs(params.config.vocab);
  std::vector<double> losses;
  losses.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    detail::hidden_at(params, x, static_cast<int>(t), h.data());
    losses.push_back(-detail::forward_probs(params, h.data(), x[t], probs.data()));
  }
  return losses;
}

inline double seq_loss(const ModelParams& params, const Sequence& x) {
  const std::vector<double> losses = token_losses(params, x);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

/// f_theta(x): mean over positions of the hidden vectors h_t.
inline std::vector<double> activation(const ModelParams& params, const Sequence& x) {
  if (x.empty()) throw Error(Errc::empty_input, "activation: empty sequence");
  const int d = params.config.embed_dim;
  std::vector<double> h(d), acc(d, 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    detail::hidden_at(params, x, static_cast<int>(t), h.data());
    for (int e = 0; e < d; ++e) acc[e] += h[e];
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  for (int e = 0; e < d; ++e) acc[e] *= inv;
  return acc;
}

// ---- model container: magic "MIPL", version u16, config block, f32 weights ----

inline constexpr std::uint16_t kModelFormatVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(Errc::corrupt_file, "load_model: truncated file " + path);
}

}  // namespace detail

inline void save_model(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "save_model: cannot open " + path);
  out.write("MIPL", 4);
  detail::write_pod(out, kModelFormatVersion);
  detail::write_pod(out, params.config.vocab);
  detail::write_pod(out, params.config.context);
  detail::write_pod(out, params.config.embed_dim);
  detail::write_pod(out, params.config.learning_rate);
  detail::write_pod(out, params.config.epochs);
  detail::write_pod(out, params.config.batch_size);
  detail::write_pod(out, params.config.seed);
  detail::write_pod(out, params.train_steps);
  out.write(reinterpret_cast<const char*>(params.emb.data()),
            static_cast<std::streamsize>(params.emb.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(params.out.data()),
            static_cast<std::streamsize>(params.out.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(params.bias.data()),
            static_cast<std::streamsize>(params.bias.size() * sizeof(float)));
  if (!out) throw Error(Errc::io_error, "save_model: write failed for " + path);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "load_model: cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MIPL", 4) != 0) {
    throw Error(Errc::corrupt_file, "load_model: bad magic in " + path);
  }
  std::uint16_t version = 0;
  detail::read_pod(in, version, path);
  if (version != kModelFormatVersion) {
    throw Error(Errc::version_mismatch,
                "load_model: unsupported container version " + std::to_string(version));
  }
  ModelParams p;
  detail::read_pod(in, p.config.vocab, path);
  detail::read_pod(in, p.config.context, path);
  detail::read_pod(in, p.config.embed_dim, path);
  detail::read_pod(in, p.config.learning_rate, path);
  detail::read_pod(in, p.config.epochs, path);
  detail::read_pod(in, p.config.batch_size, path);
  detail::read_pod(in, p.config.seed, path);
  detail::read_pod(in, p.train_steps, path);
  if (p.config.vocab < 1 || p.config.context < 1 || p.config.embed_dim < 1) {
    throw Error(Errc::corrupt_file, "load_model: invalid config block in " + path);
  }
  const std::size_t wn = static_cast<std::size_t>(p.config.vocab) * p.config.embed_dim;
  p.emb.resize(wn);
  p.out.resize(wn);
  p.bias.resize(static_cast<std::size_t>(p.config.vocab));
  in.read(reinterpret_cast<char*>(p.emb.data()), static_cast<std::streamsize>(wn * sizeof(float)));
  in.read(reinterpret_cast<char*>(p.out.data()), static_cast<std::streamsize>(wn * sizeof(float)));
  in.read(reinterpret_cast<char*>(p.bias.data()),
          static_cast<std::streamsize>(p.bias.size() * sizeof(float)));
  if (!in) throw Error(Errc::corrupt_file, "load_model: truncated weights in " + path);
  return p;
}

/// Load with an architecture expectation; vocab/context/embed_dim must match.
inline ModelParams load_model(const std::string& path, const ModelConfig& expected) {
  ModelParams p = load_model(path);
  if (!p.config.same_architecture(expected)) {
    throw Error(Errc::config_mismatch, "load_model: architecture differs from expected config");
  }
  return p;
}

}  // namespace mipl
