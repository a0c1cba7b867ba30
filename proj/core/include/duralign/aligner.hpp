#pragma once

// Differentiable duration modeling and learned upsampling: token boundaries
// from durations, boundary distance grids, the attention matrix W
// (Softmax(MLP(S, E, Conv1D(V)))), the auxiliary context C, and the upsampled
// representation O = W V + einsum('tk,tkp->tp', W, C) A.

#include <cstdio>
#include <fstream>
#include <string>

#include "duralign/errors.hpp"
#include "duralign/gradcheck.hpp"
#include "duralign/ops.hpp"

namespace duralign {

// fixed by the architecture: both MLP trunks see [S_tk, E_tk, Conv1D(V)_k]
inline constexpr int kUpsamplerConvDim = 8;
inline constexpr int kUpsamplerCellDim = 2 + kUpsamplerConvDim;
inline constexpr int kAttentionHiddenDim = 16;
inline constexpr int kAuxContextDim = 2;  // P

/// Registers the upsampler parameters (prefix "upsampler.") and asserts the
/// layer shapes: conv width 3 -> 8 dims with batch norm, W-branch MLP
/// 10 -> 16 -> 16 -> 1, C-branch MLP 10 -> 2 -> 2, projection A [2 x M].
template <class T>
void register_upsampler(ParameterStore<T>& store, int token_dim, Rng& rng) {
  auto& ck = store.create("upsampler.conv.kernel", Shape{3, token_dim, kUpsamplerConvDim});
  init_glorot_uniform(ck, 3 * token_dim, 3 * kUpsamplerConvDim, rng);
  store.create("upsampler.conv.bias", Shape{kUpsamplerConvDim});
  register_batch_norm(store, "upsampler.conv.bn", kUpsamplerConvDim);

  auto& w1 = store.create("upsampler.w_mlp.w1", Shape{kUpsamplerCellDim, kAttentionHiddenDim});
  init_glorot_uniform(w1, kUpsamplerCellDim, kAttentionHiddenDim, rng);
  store.create("upsampler.w_mlp.b1", Shape{kAttentionHiddenDim});
  auto& w2 = store.create("upsampler.w_mlp.w2", Shape{kAttentionHiddenDim, kAttentionHiddenDim});
  init_glorot_uniform(w2, kAttentionHiddenDim, kAttentionHiddenDim, rng);
  store.create("upsampler.w_mlp.b2", Shape{kAttentionHiddenDim});
  auto& w3 = store.create("upsampler.w_mlp.w3", Shape{kAttentionHiddenDim, 1});
  init_glorot_uniform(w3, kAttentionHiddenDim, 1, rng);
  store.create("upsampler.w_mlp.b3", Shape{1});

  auto& c1 = store.create("upsampler.c_mlp.w1", Shape{kUpsamplerCellDim, kAuxContextDim});
  init_glorot_uniform(c1, kUpsamplerCellDim, kAuxContextDim, rng);
  store.create("upsampler.c_mlp.b1", Shape{kAuxContextDim});
  auto& c2 = store.create("upsampler.c_mlp.w2", Shape{kAuxContextDim, kAuxContextDim});
  init_glorot_uniform(c2, kAuxContextDim, kAuxContextDim, rng);
  store.create("upsampler.c_mlp.b2", Shape{kAuxContextDim});

  auto& pa = store.create("upsampler.proj_a", Shape{kAuxContextDim, token_dim});
  init_glorot_uniform(pa, kAuxContextDim, token_dim, rng);
}

/// Registers the duration predictor (prefix "duration."): two convolutions
/// over concat(H, z) producing the token representation V, then a scalar head
/// whose softplus keeps durations nonnegative.
template <class T>
void register_duration_predictor(ParameterStore<T>& store, int token_dim, int latent_dim,
                                 int conv_width, Rng& rng) {
  if (conv_width % 2 == 0) throw std::invalid_argument("duration predictor: conv width must be odd");
  int in = token_dim + latent_dim;
  auto& k1 = store.create("duration.conv1.kernel", Shape{conv_width, in, token_dim});
  init_glorot_uniform(k1, conv_width * in, conv_width * token_dim, rng);
  store.create("duration.conv1.bias", Shape{token_dim});
  auto& k2 = store.create("duration.conv2.kernel", Shape{conv_width, token_dim, token_dim});
  init_glorot_uniform(k2, conv_width * token_dim, conv_width * token_dim, rng);
  store.create("duration.conv2.bias", Shape{token_dim});
  auto& hw = store.create("duration.head.w", Shape{token_dim, 1});
  init_glorot_uniform(hw, token_dim, 1, rng);
  store.create("duration.head.b", Shape{1});
}

/// Duration predictor: encoder outputs H [K x M] and latent z [K x Z] ->
/// (V [K x M], d [K]) with d_k >= 0 via softplus.
template <class T>
std::pair<int, int> predict_durations(Graph<T>& g, ParameterStore<T>& store, int h, int z) {
  if (g.value(h).rank() != 2 || g.value(h).dim(0) < 1)
    throw std::invalid_argument("predict_durations: empty token sequence");
  const int k = g.value(h).dim(0);
  int x = concat_cols(g, h, z);
  int c1 = swish(g, conv1d(g, x, g.param(store, "duration.conv1.kernel"),
                           g.param(store, "duration.conv1.bias")));
  int v = swish(g, conv1d(g, c1, g.param(store, "duration.conv2.kernel"),
                          g.param(store, "duration.conv2.bias")));
  int head = linear(g, v, g.param(store, "duration.head.w"), g.param(store, "duration.head.b"));
  int d = softplus(g, reshape(g, head, Shape{k}));
  return {v, d};
}

/// s_k = sum_{i<k} d_i, e_k = s_k + d_k.
template <class T>
std::pair<int, int> token_boundaries(Graph<T>& g, int d) {
  int s = cumsum_exclusive(g, d);
  int e = add(g, s, d);
  return {s, e};
}

/// S_tk = t - s_k, E_tk = e_k - t with frame index t in {0, ..., T-1}.
template <class T>
std::pair<int, int> boundary_grids(Graph<T>& g, int s, int e, int frames) {
  if (frames < 1) throw std::invalid_argument("boundary_grids: frame count must be positive");
  int k = g.value(s).dim(0);
  Tensor<T> tgrid(Shape{frames, k});
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < k; ++j) tgrid.v[static_cast<size_t>(t) * k + j] = static_cast<T>(t);
  int tg = g.leaf(std::move(tgrid), "time_grid");
  int s_grid = sub(g, tg, broadcast_rows(g, s, frames));
  int e_grid = sub(g, broadcast_rows(g, e, frames), tg);
  return {s_grid, e_grid};
}

/// Shared Conv1D(V) trunk: width 3, 8 output dims, batch norm, Swish.
template <class T>
int upsampler_conv(Graph<T>& g, ParameterStore<T>& store, int v, NormMode mode,
                   bool use_layer_norm = false) {
  int c = conv1d(g, v, g.param(store, "upsampler.conv.kernel"),
                 g.param(store, "upsampler.conv.bias"));
  int n = use_layer_norm ? layer_norm(g, c, store, "upsampler.conv.bn")
                         : batch_norm(g, c, store, "upsampler.conv.bn", mode);
  return swish(g, n);
}

/// Per-cell MLP input for both branches: [(T*K) x 10].
template <class T>
int upsampler_cells(Graph<T>& g, ParameterStore<T>& store, int s_grid, int e_grid, int v,
                    NormMode mode, bool use_layer_norm = false) {
  int conv = upsampler_conv(g, store, v, mode, use_layer_norm);
  return grid_concat(g, s_grid, e_grid, conv);
}

/// Attention matrix W [T x K]: two 16-dim Swish layers, scalar projection,
/// Softmax over the token axis.
template <class T>
int attention_weights_from_cells(Graph<T>& g, ParameterStore<T>& store, int cells, int frames,
                                 int k) {
  int h1 = swish(g, linear(g, cells, g.param(store, "upsampler.w_mlp.w1"),
                           g.param(store, "upsampler.w_mlp.b1")));
  int h2 = swish(g, linear(g, h1, g.param(store, "upsampler.w_mlp.w2"),
                           g.param(store, "upsampler.w_mlp.b2")));
  int logits = linear(g, h2, g.param(store, "upsampler.w_mlp.w3"),
                      g.param(store, "upsampler.w_mlp.b3"));
  return softmax(g, reshape(g, logits, Shape{frames, k}), 1);
}

/// Auxiliary attention context C, stored as [(T*K) x P]: two Swish layers of
/// output dimension P = 2, no softmax.
template <class T>
int aux_context_from_cells(Graph<T>& g, ParameterStore<T>& store, int cells) {
  int h1 = swish(g, linear(g, cells, g.param(store, "upsampler.c_mlp.w1"),
                           g.param(store, "upsampler.c_mlp.b1")));
  return swish(g, linear(g, h1, g.param(store, "upsampler.c_mlp.w2"),
                         g.param(store, "upsampler.c_mlp.b2")));
}

template <class T>
int attention_weights(Graph<T>& g, ParameterStore<T>& store, int s_grid, int e_grid, int v,
                      NormMode mode, bool use_layer_norm = false) {
  int cells = upsampler_cells(g, store, s_grid, e_grid, v, mode, use_layer_norm);
  return attention_weights_from_cells(g, store, cells, g.value(s_grid).dim(0),
                                      g.value(s_grid).dim(1));
}

template <class T>
int aux_context(Graph<T>& g, ParameterStore<T>& store, int s_grid, int e_grid, int v,
                NormMode mode, bool use_layer_norm = false) {
  int cells = upsampler_cells(g, store, s_grid, e_grid, v, mode, use_layer_norm);
  return aux_context_from_cells(g, store, cells);
}

/// O = W V + [(W o C_1) 1_K ... (W o C_P) 1_K] A  ->  [T x M].
template <class T>
int upsample(Graph<T>& g, int w, int v, int c, int a) {
  const auto& vw = g.value(w);
  const auto& vv = g.value(v);
  const auto& vc = g.value(c);
  const auto& va = g.value(a);
  if (vw.rank() != 2 || vv.rank() != 2 || vc.rank() != 2 || va.rank() != 2)
    throw std::invalid_argument("upsample: rank-2 operands required");
  if (vw.dim(1) != vv.dim(0)) throw std::invalid_argument("upsample: W/V token count mismatch");
  if (vc.dim(0) != vw.dim(0) * vw.dim(1))
    throw std::invalid_argument("upsample: W/C cell count mismatch");
  if (va.dim(0) != vc.dim(1) || va.dim(1) != vv.dim(1))
    throw std::invalid_argument("upsample: projection shape mismatch");
  int direct = matmul(g, w, v);
  int context = matmul(g, context_reduce(g, w, c), a);
  return add(g, direct, context);
}

/// (1/K) * |T - sum d_k|.
template <class T>
int duration_loss(Graph<T>& g, int d, int target_frames) {
  if (g.value(d).rank() != 1 || g.value(d).dim(0) < 1)
    throw std::invalid_argument("duration_loss: empty durations");
  if (target_frames < 1) throw std::invalid_argument("duration_loss: target frames must be positive");
  const int k = g.value(d).dim(0);
  int resid = affine(g, sum(g, d), -1.0, static_cast<double>(target_frames));
  return scale(g, abs_op(g, resid), 1.0 / k);
}

/// max(1, round(sum d)) with round-half-up.
template <class T>
int inferred_frame_count(const std::vector<T>& d) {
  double total = 0;
  for (T x : d) {
    if (x < T(0)) throw std::invalid_argument("inferred_frame_count: negative duration");
    total += static_cast<double>(x);
  }
  return std::max(1, static_cast<int>(std::floor(total + 0.5)));
}

// ---------------------------------------------------------------------------
// alignment export (the `--dump-align` format)

/// One row per frame, space-separated 6-decimal reals.
template <class T>
void write_attention_text(const Tensor<T>& w, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  int tn = w.dim(0), k = w.dim(1);
  char buf[32];
  for (int t = 0; t < tn; ++t) {
    for (int j = 0; j < k; ++j) {
      std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(w.v[static_cast<size_t>(t) * k + j]));
      if (j) os << ' ';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

/// Binary PGM (P5, maxval 255), value = round(255 * W_tk); rows are frames.
template <class T>
void write_attention_pgm(const Tensor<T>& w, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  int tn = w.dim(0), k = w.dim(1);
  os << "P5\n" << k << " " << tn << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(k));
  for (int t = 0; t < tn; ++t) {
    for (int j = 0; j < k; ++j) {
      double x = 255.0 * static_cast<double>(w.v[static_cast<size_t>(t) * k + j]);
      x = std::min(255.0, std::max(0.0, std::floor(x + 0.5)));
      row[static_cast<size_t>(j)] = static_cast<unsigned char>(x);
    }
    os.write(reinterpret_cast<const char*>(row.data()), k);
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace duralign
