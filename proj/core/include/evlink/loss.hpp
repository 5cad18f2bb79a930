/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evlink/batching.hpp"
#include "evlink/nn.hpp"

namespace evlink {

/// Per-trip components averaged over the batch, Wh^2 scale.
/// With residuals r_t = y_t - yhat_t and partial sums S_l = sum_{t<=l} r_t:
///   cumulative = (1/T) * sum_l S_l^2
///   trip       = S_T^2
///   link       = (1/T) * sum_t r_t^2
struct LossBreakdown {
  double cumulative = 0.0;
  double trip = 0.0;
  double link = 0.0;
  double total = 0.0;
};

/// preds/labels are (T*B) x 1 in the batch's t-major layout. Accumulation
/// is in double regardless of S. Requires an exact-length batch; padded
/// batches have no overload on purpose.
template <typename S>
LossBreakdown composite_loss(const nn::CRef<S>& preds, const nn::CRef<S>& labels, nn::Index B,
                             nn::Index T) {
  if (preds.rows() != B * T || labels.rows() != B * T) {
    throw std::invalid_argument("composite_loss: shape mismatch");
  }
  LossBreakdown out;
  const double invT = 1.0 / static_cast<double>(T);
  for (nn::Index b = 0; b < B; ++b) {
    double s = 0.0;        // running partial sum S_l
    double cum = 0.0;      // sum of S_l^2
    double link = 0.0;     // sum of r_t^2
    for (nn::Index t = 0; t < T; ++t) {
      const double r = static_cast<double>(labels(t * B + b, 0)) -
                       static_cast<double>(preds(t * B + b, 0));
      s += r;
      cum += s * s;
      link += r * r;
    }
    out.cumulative += invT * cum;
    out.trip += s * s;
    out.link += invT * link;
  }
  const double invB = 1.0 / static_cast<double>(B);
  out.cumulative *= invB;
  out.trip *= invB;
  out.link *= invB;
  out.total = out.cumulative + out.trip + out.link;
  return out;
}

template <typename S>
LossBreakdown composite_loss(const PaddedBatchT<S>&, nn::Index, nn::Index) = delete;

/// Gradient of the batch-mean total loss with respect to predictions.
template <typename S>
LossBreakdown composite_loss_backward(const nn::CRef<S>& preds, const nn::CRef<S>& labels,
                                      nn::Index B, nn::Index T, nn::Mat<S>& dpreds) {
  const LossBreakdown out = composite_loss<S>(preds, labels, B, T);
  dpreds.resize(B * T, 1);
  const double invT = 1.0 / static_cast<double>(T);
  const double invB = 1.0 / static_cast<double>(B);
  std::vector<double> partial(static_cast<std::size_t>(T));
  for (nn::Index b = 0; b < B; ++b) {
    double s = 0.0;
    for (nn::Index t = 0; t < T; ++t) {
      s += static_cast<double>(labels(t * B + b, 0)) - static_cast<double>(preds(t * B + b, 0));
      partial[static_cast<std::size_t>(t)] = s;
    }
    const double s_total = s;
    // suffix sums of S_l over l >= t
    double suffix = 0.0;
    for (nn::Index t = T - 1; t >= 0; --t) {
      suffix += partial[static_cast<std::size_t>(t)];
      const double r = static_cast<double>(labels(t * B + b, 0)) -
                       static_cast<double>(preds(t * B + b, 0));
      const double dL_dr = 2.0 * invT * suffix + 2.0 * s_total + 2.0 * invT * r;
      dpreds(t * B + b, 0) = static_cast<S>(-invB * dL_dr);
    }
  }
  return out;
}

/// SGD schedule: 0.001 * epoch^(-1/2), epoch 1-based.
inline double lr_schedule(int epoch, double base_lr = 1e-3) {
  if (epoch < 1) throw std::invalid_argument("lr_schedule: epoch is 1-based");
  return base_lr / std::sqrt(static_cast<double>(epoch));
}

}  // namespace evlink
