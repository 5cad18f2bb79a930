/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evlink/batching.hpp"
#include "evlink/features.hpp"
#include "evlink/nn.hpp"

// Residual conv front end -> 2-layer LSTM encoder -> state bridge ->
// BiLSTM decoder -> time-distributed dense head, emitting one Wh value per
// link. The head output is linear: regen makes link labels negative, so a
// clamped activation could not fit the data.

namespace evlink {

inline constexpr std::array<int, 3> kConvChannels{32, 64, 128};
inline constexpr int kEncoderUnits = 512;
inline constexpr int kEncoderLayers = 2;
inline constexpr int kDecoderUnits = 256;
inline constexpr std::array<int, 4> kHeadWidths{128, 64, 32, 1};
inline constexpr double kHeadDropoutRate = 0.2;

template <typename S>
struct ConvBlockParams {
  nn::Conv1d<S> conv;
  nn::BatchNorm<S> bn;
  nn::Mat<S> proj;  // 1x1 residual projection, C_in x C_out
};

template <typename S>
struct ModelParamsT {
  std::array<ConvBlockParams<S>, 3> conv;
  std::array<nn::Lstm<S>, kEncoderLayers> encoder;
  nn::Dense<S> bridge_h;  // encoder units -> decoder units, shared by both directions
  nn::Dense<S> bridge_c;
  nn::BiLstm<S> decoder;
  std::array<nn::Dense<S>, 4> head;
  std::uint64_t schema_hash = 0;

  int input_dim() const { return static_cast<int>(conv[0].conv.w_self.rows()); }

  /// Visits every learnable array in a fixed, serialization-stable order.
  template <typename F>
  void visit_learnable(F&& f) {
    const_cast<const ModelParamsT*>(this)->visit_learnable(
        [&](const std::string& name, const auto& m) {
          f(name, const_cast<std::remove_cvref_t<decltype(m)>&>(m));
        });
  }

  template <typename F>
  void visit_learnable(F&& f) const {
    for (int k = 0; k < 3; ++k) {
      const std::string p = "conv" + std::to_string(k + 1);
      f(p + ".w_prev", conv[static_cast<std::size_t>(k)].conv.w_prev);
      f(p + ".w_self", conv[static_cast<std::size_t>(k)].conv.w_self);
      f(p + ".w_next", conv[static_cast<std::size_t>(k)].conv.w_next);
      f(p + ".bn.gamma", conv[static_cast<std::size_t>(k)].bn.gamma);
      f(p + ".bn.beta", conv[static_cast<std::size_t>(k)].bn.beta);
      f(p + ".proj", conv[static_cast<std::size_t>(k)].proj);
    }
    for (int k = 0; k < kEncoderLayers; ++k) {
      const std::string p = "encoder" + std::to_string(k + 1);
      f(p + ".w", encoder[static_cast<std::size_t>(k)].w);
      f(p + ".r", encoder[static_cast<std::size_t>(k)].r);
      f(p + ".b", encoder[static_cast<std::size_t>(k)].b);
    }
    f("bridge_h.w", bridge_h.w);
    f("bridge_h.b", bridge_h.b);
    f("bridge_c.w", bridge_c.w);
    f("bridge_c.b", bridge_c.b);
    f("decoder_fwd.w", decoder.fwd.w);
    f("decoder_fwd.r", decoder.fwd.r);
    f("decoder_fwd.b", decoder.fwd.b);
    f("decoder_bwd.w", decoder.bwd.w);
    f("decoder_bwd.r", decoder.bwd.r);
    f("decoder_bwd.b", decoder.bwd.b);
    for (int k = 0; k < 4; ++k) {
      const std::string p = "head" + std::to_string(k + 1);
      f(p + ".w", head[static_cast<std::size_t>(k)].w);
      f(p + ".b", head[static_cast<std::size_t>(k)].b);
    }
  }

  /// Non-learnable state (batch-norm running moments), same ordering rules.
  template <typename F>
  void visit_state(F&& f) {
    for (int k = 0; k < 3; ++k) {
      const std::string p = "conv" + std::to_string(k + 1);
      f(p + ".bn.running_mean", conv[static_cast<std::size_t>(k)].bn.running_mean);
      f(p + ".bn.running_var", conv[static_cast<std::size_t>(k)].bn.running_var);
    }
  }

  template <typename F>
  void visit_state(F&& f) const {
    const_cast<ModelParamsT*>(this)->visit_state(
        [&](const std::string& name, auto& m) { f(name, std::as_const(m)); });
  }

  /// Allocates every array at the architecture's shapes, zero-filled.
  void allocate(int input_dim) {
    int in = input_dim;
    for (int k = 0; k < 3; ++k) {
      auto& blk = conv[static_cast<std::size_t>(k)];
      const int out = kConvChannels[static_cast<std::size_t>(k)];
      blk.conv.setZero(in, out);
      blk.bn.setZero(out);
      blk.proj = nn::Mat<S>::Zero(in, out);
      in = out;
    }
    encoder[0].setZero(kEncoderUnits, in);
    for (int k = 1; k < kEncoderLayers; ++k) {
      encoder[static_cast<std::size_t>(k)].setZero(kEncoderUnits, kEncoderUnits);
    }
    bridge_h.setZero(kDecoderUnits, kEncoderUnits);
    bridge_c.setZero(kDecoderUnits, kEncoderUnits);
    decoder.fwd.setZero(kDecoderUnits, in);
    decoder.bwd.setZero(kDecoderUnits, in);
    int head_in = 2 * kDecoderUnits;
    for (int k = 0; k < 4; ++k) {
      head[static_cast<std::size_t>(k)].setZero(kHeadWidths[static_cast<std::size_t>(k)], head_in);
      head_in = kHeadWidths[static_cast<std::size_t>(k)];
    }
  }

  void set_zero() {
    visit_learnable([](const std::string&, auto& m) { m.setZero(); });
  }
};

using ModelParams = ModelParamsT<float>;

/// Recurrent weights ~ U(-0.08, 0.08); everything non-recurrent ~
/// N(0, 0.01^2); biases 0 except the LSTM forget gate at 1. Batch-norm
/// gamma 1, running variance 1.
template <typename S>
ModelParamsT<S> init_params(std::uint64_t rng_seed, std::uint64_t schema_hash,
                            int input_dim = kFeatureDim) {
  ModelParamsT<S> p;
  p.allocate(input_dim);
  p.schema_hash = schema_hash;
  Rng rng(rng_seed, "model.init");

  auto fill_uniform = [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, j) = static_cast<S>(rng.uniform(-0.08, 0.08));
      }
    }
  };
  auto fill_gaussian = [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, j) = static_cast<S>(rng.normal(0.0, 0.01));
      }
    }
  };
  auto init_lstm = [&](nn::Lstm<S>& l) {
    fill_uniform(l.w);
    fill_uniform(l.r);
    l.b.setZero();
    const Eigen::Index h = l.hidden();
    l.b.segment(h, h).setOnes();  // forget-gate bias
  };

  for (auto& blk : p.conv) {
    fill_gaussian(blk.conv.w_prev);
    fill_gaussian(blk.conv.w_self);
    fill_gaussian(blk.conv.w_next);
    fill_gaussian(blk.proj);
    blk.bn.gamma.setOnes();
    blk.bn.beta.setZero();
    blk.bn.running_mean.setZero();
    blk.bn.running_var.setOnes();
  }
  for (auto& enc : p.encoder) init_lstm(enc);
  init_lstm(p.decoder.fwd);
  init_lstm(p.decoder.bwd);
  fill_gaussian(p.bridge_h.w);
  p.bridge_h.b.setZero();
  fill_gaussian(p.bridge_c.w);
  p.bridge_c.b.setZero();
  for (auto& d : p.head) {
    fill_gaussian(d.w);
    d.b.setZero();
  }
  return p;
}

struct ParamCountItem {
  std::string name;
  std::size_t count;
};

struct ParamCount {
  std::size_t total = 0;
  std::vector<ParamCountItem> items;
};

template <typename S>
ParamCount count_parameters(const ModelParamsT<S>& params) {
  ParamCount out;
  params.visit_learnable([&](const std::string& name, const auto& m) {
    const auto n = static_cast<std::size_t>(m.size());
    out.items.push_back({name, n});
    out.total += n;
  });
  return out;
}

/// Forward cache; owns every intermediate needed by backward. Grow-only,
/// so a warmed instance never allocates for smaller batches.
template <typename S>
struct ModelCacheT {
  struct ConvStage {
    nn::GrowMat<S> conv_out;
    nn::BatchNormCache<S> bn_cache;
    nn::GrowMat<S> bn_out;
    nn::GrowMat<S> relu_out;
    nn::GrowMat<std::int32_t> pool_argmax;
    nn::GrowMat<S> block_out;  // pooled main path + residual projection
  };
  std::array<ConvStage, 3> conv;
  std::array<nn::LstmCache<S>, kEncoderLayers> encoder;
  nn::Mat<S> enc_h_top, enc_c_top;  // B x encoder units, final states of top layer
  nn::Mat<S> dec_h0, dec_c0;        // B x decoder units, bridge outputs
  nn::BiLstmCache<S> decoder;
  struct HeadStage {
    nn::GrowMat<S> drop_mask;
    nn::GrowMat<S> drop_out;  // dense input after dropout
    nn::GrowMat<S> dense_out;
    nn::GrowMat<S> relu_out;  // absent for the final stage
  };
  std::array<HeadStage, 4> head;
  bool bn_used_running = false;  // single-row fallback: BN ran on stored moments

  Eigen::Map<const nn::Mat<S>> predictions() const { return head[3].dense_out.view(); }
};

using ModelCache = ModelCacheT<float>;

/// Runs the full forward pass; predictions land in cache.predictions()
/// as a (T*B) x 1 column, t-major like the batch features. In train mode
/// batch-norm running moments are folded into *moment_update when given.
/// dropout_rate applies to the head sublayer inputs in train mode only.
template <typename S>
void model_forward(const ModelParamsT<S>& params, const nn::CRef<S>& features, nn::Index B,
                   nn::Index T, nn::Mode mode, Rng& rng, ModelCacheT<S>& cache,
                   ModelParamsT<S>* moment_update = nullptr,
                   double dropout_rate = kHeadDropoutRate) {
  using nn::Index;
  const Index n = B * T;
  if (features.rows() != n) throw std::invalid_argument("model_forward: row count mismatch");
  if (features.cols() != params.input_dim()) {
    throw SchemaMismatchError("model_forward: feature width " + std::to_string(features.cols()) +
                              " != model input " + std::to_string(params.input_dim()));
  }

  // Conv front end with residual projections. A single-row batch cannot
  // carry batch statistics; it falls back to the stored running moments.
  const nn::Mode bn_mode = (mode == nn::Mode::train && n < 2) ? nn::Mode::infer : mode;
  cache.bn_used_running = bn_mode != mode;
  for (int k = 0; k < 3; ++k) {
    const auto& blk = params.conv[static_cast<std::size_t>(k)];
    auto& stage = cache.conv[static_cast<std::size_t>(k)];
    const nn::CRef<S> x = k == 0 ? nn::CRef<S>(features)
                                 : nn::CRef<S>(cache.conv[static_cast<std::size_t>(k - 1)]
                                                   .block_out.view());
    const Index c_out = blk.conv.w_self.cols();
    stage.conv_out.ensure(n, c_out);
    stage.bn_out.ensure(n, c_out);
    stage.relu_out.ensure(n, c_out);
    stage.block_out.ensure(n, c_out);
    nn::conv1d_forward<S>(x, B, T, blk.conv, stage.conv_out.view());
    nn::batch_norm_forward<S>(
        stage.conv_out.view(), blk.bn, bn_mode, stage.bn_out.view(), stage.bn_cache,
        bn_mode == nn::Mode::train && moment_update
            ? &moment_update->conv[static_cast<std::size_t>(k)].bn
            : nullptr);
    nn::relu_forward<S>(stage.bn_out.view(), stage.relu_out.view());
    nn::maxpool3_forward<S>(stage.relu_out.view(), B, T, stage.block_out.view(),
                            stage.pool_argmax);
    stage.block_out.view().noalias() += x * blk.proj;
    if (!stage.block_out.view().allFinite()) {
      throw DivergenceError("model: non-finite activation in conv block " + std::to_string(k + 1));
    }
  }
  const auto xt = cache.conv[2].block_out.view();

  // Encoder: 2-layer LSTM from zero initial states.
  const Index eu = kEncoderUnits;
  nn::Mat<S> zeros = nn::Mat<S>::Zero(B, eu);
  nn::lstm_forward<S>(xt, B, T, params.encoder[0], zeros, zeros, cache.encoder[0]);
  nn::lstm_forward<S>(cache.encoder[0].h.view(), B, T, params.encoder[1], zeros, zeros,
                      cache.encoder[1]);
  cache.enc_h_top = cache.encoder[1].h.view().middleRows((T - 1) * B, B);
  cache.enc_c_top = cache.encoder[1].c.view().middleCols((T - 1) * B, B).transpose();

  // Bridge: affine 512 -> 256, shared by both decoder directions.
  cache.dec_h0.resize(B, kDecoderUnits);
  cache.dec_c0.resize(B, kDecoderUnits);
  nn::dense_forward<S>(cache.enc_h_top, params.bridge_h, cache.dec_h0);
  nn::dense_forward<S>(cache.enc_c_top, params.bridge_c, cache.dec_c0);

  // Decoder over the conv features, conditioned on the bridge states.
  nn::bilstm_forward<S>(xt, B, T, params.decoder, cache.dec_h0, cache.dec_c0, cache.dec_h0,
                        cache.dec_c0, cache.decoder);

  // Time-distributed dense head; dropout on each sublayer input.
  for (int k = 0; k < 4; ++k) {
    auto& stage = cache.head[static_cast<std::size_t>(k)];
    const auto x = k == 0 ? cache.decoder.out.view()
                          : cache.head[static_cast<std::size_t>(k - 1)].relu_out.view();
    const auto& dense = params.head[static_cast<std::size_t>(k)];
    stage.drop_out.ensure(n, x.cols());
    nn::dropout_forward<S>(x, dropout_rate, mode, rng, stage.drop_out.view(), stage.drop_mask);
    stage.dense_out.ensure(n, dense.w.rows());
    nn::dense_forward<S>(stage.drop_out.view(), dense, stage.dense_out.view());
    if (k < 3) {
      stage.relu_out.ensure(n, dense.w.rows());
      nn::relu_forward<S>(stage.dense_out.view(), stage.relu_out.view());
    }
  }
  if (!cache.head[3].dense_out.view().allFinite()) {
    throw DivergenceError("model: non-finite activation in dense head");
  }
}

/// Reverse-mode pass. dpreds is (T*B) x 1; gradients accumulate into
/// `grads`, which must be allocated at the same shapes as `params`.
template <typename S>
void model_backward(const ModelParamsT<S>& params, const nn::CRef<S>& features, nn::Index B,
                    nn::Index T, const ModelCacheT<S>& cache, const nn::Mat<S>& dpreds,
                    ModelParamsT<S>& grads) {
  using nn::Index;
  const Index n = B * T;

  // Head, in reverse.
  nn::Mat<S> d_after = dpreds;  // gradient w.r.t. head stage k's dense output
  for (int k = 3; k >= 0; --k) {
    const auto& stage = cache.head[static_cast<std::size_t>(k)];
    const auto& dense = params.head[static_cast<std::size_t>(k)];
    nn::Mat<S> d_drop(n, dense.w.cols());
    nn::dense_backward<S>(stage.drop_out.view(), d_after, dense,
                          grads.head[static_cast<std::size_t>(k)], d_drop);
    nn::Mat<S> d_x(n, dense.w.cols());
    nn::dropout_backward<S>(d_drop, stage.drop_mask, d_x);
    if (k > 0) {
      const auto& prev = cache.head[static_cast<std::size_t>(k - 1)];
      d_after.resize(n, dense.w.cols());
      nn::relu_backward<S>(prev.dense_out.view(), d_x, d_after);
    } else {
      d_after = std::move(d_x);  // gradient w.r.t. decoder output
    }
  }

  // Decoder.
  const auto xt = cache.conv[2].block_out.view();
  nn::Mat<S> dxt(n, xt.cols());
  nn::Mat<S> dh0_fwd, dc0_fwd, dh0_bwd, dc0_bwd;
  nn::bilstm_backward<S>(xt, B, T, params.decoder, cache.decoder, d_after, grads.decoder, dxt,
                         dh0_fwd, dc0_fwd, dh0_bwd, dc0_bwd);

  // Bridge: both directions share the projected states.
  nn::Mat<S> d_dec_h0 = dh0_fwd + dh0_bwd;
  nn::Mat<S> d_dec_c0 = dc0_fwd + dc0_bwd;
  nn::Mat<S> dh_top(B, kEncoderUnits), dc_top(B, kEncoderUnits);
  nn::dense_backward<S>(cache.enc_h_top, d_dec_h0, params.bridge_h, grads.bridge_h, dh_top);
  nn::dense_backward<S>(cache.enc_c_top, d_dec_c0, params.bridge_c, grads.bridge_c, dc_top);

  // Encoder: top layer feels only the final-state gradient; layer 1 feels
  // the top layer's input gradient across the whole sequence.
  nn::Mat<S> d_h1_seq = nn::Mat<S>::Zero(n, kEncoderUnits);
  nn::Mat<S> dh0_enc, dc0_enc;  // initial states are constants; discarded
  nn::lstm_backward<S>(cache.encoder[0].h.view(), B, T, params.encoder[1], cache.encoder[1],
                       nullptr, &dh_top, &dc_top, grads.encoder[1], d_h1_seq, dh0_enc, dc0_enc);
  nn::Mat<S> dxt_enc(n, xt.cols());
  nn::lstm_backward<S>(xt, B, T, params.encoder[0], cache.encoder[0], &d_h1_seq, nullptr, nullptr,
                       grads.encoder[0], dxt_enc, dh0_enc, dc0_enc);
  dxt += dxt_enc;

  // Conv blocks, in reverse.
  nn::Mat<S> d_block = std::move(dxt);
  for (int k = 2; k >= 0; --k) {
    const auto& blk = params.conv[static_cast<std::size_t>(k)];
    const auto& stage = cache.conv[static_cast<std::size_t>(k)];
    auto& gblk = grads.conv[static_cast<std::size_t>(k)];
    const nn::CRef<S> x =
        k == 0 ? nn::CRef<S>(features)
               : nn::CRef<S>(cache.conv[static_cast<std::size_t>(k - 1)].block_out.view());
    gblk.proj.noalias() += x.transpose() * d_block;

    nn::Mat<S> d_relu(n, stage.relu_out.cols());
    nn::maxpool3_backward<S>(d_block, stage.pool_argmax, d_relu);
    nn::Mat<S> d_bn(n, stage.bn_out.cols());
    nn::relu_backward<S>(stage.bn_out.view(), d_relu, d_bn);
    nn::Mat<S> d_conv(n, stage.conv_out.cols());
    if (cache.bn_used_running) {
      nn::batch_norm_infer_backward<S>(stage.conv_out.view(), d_bn, blk.bn, gblk.bn, d_conv);
    } else {
      nn::batch_norm_backward<S>(d_bn, blk.bn, stage.bn_cache, gblk.bn, d_conv);
    }

    nn::Mat<S> d_x(n, x.cols());
    nn::conv1d_backward<S>(x, d_conv, B, T, blk.conv, gblk.conv, d_x);
    d_x.noalias() += d_block * blk.proj.transpose();
    d_block = std::move(d_x);
  }
}

}  // namespace evlink
