/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "evlink/features.hpp"
#include "evlink/trip.hpp"

namespace evlink {

inline constexpr std::size_t kBatchCap = 128;

/// Trips sharing an exact link count. Values are indices into the dataset.
struct Bucket {
  std::size_t trip_length = 0;
  std::vector<std::size_t> members;
};

std::vector<Bucket> bucket_by_length(const std::vector<MacroTrip>& trips);

/// One batch-worth of trip indices; all members share `trip_length`.
struct BatchPlan {
  std::size_t trip_length = 0;
  std::vector<std::size_t> members;
};

/// Shuffles within-bucket membership and bucket visit order, then splits
/// each bucket into ceil(n/cap) batches. Every trip appears exactly once.
std::vector<BatchPlan> epoch_batches(const std::vector<Bucket>& buckets, std::uint64_t rng_seed,
                                     std::size_t cap = kBatchCap);

/// Materialized batch. Sequence tensors are stored t-major: row t*B + b is
/// link t of trip b, so the rows of one time step are contiguous.
template <typename Scalar>
struct BatchT {
  Eigen::Index batch_size = 0;   // B
  Eigen::Index trip_length = 0;  // T
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> features;  // (T*B) x 46
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> labels;                 // (T*B), empty if unlabeled
  std::vector<std::size_t> trip_indices;

  bool has_labels() const { return labels.size() > 0; }
};

using Batch = BatchT<float>;

template <typename Scalar>
BatchT<Scalar> build_batch(const BatchPlan& plan, const std::vector<MacroTrip>& trips,
                           const Normalizer& normalizer) {
  BatchT<Scalar> batch;
  const auto B = static_cast<Eigen::Index>(plan.members.size());
  const auto T = static_cast<Eigen::Index>(plan.trip_length);
  batch.batch_size = B;
  batch.trip_length = T;
  batch.trip_indices = plan.members;
  batch.features.resize(T * B, kFeatureDim);
  bool labeled = true;
  for (std::size_t idx : plan.members) labeled = labeled && trips[idx].labels_wh.has_value();
  if (labeled) batch.labels.resize(T * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const MacroTrip& trip = trips[plan.members[static_cast<std::size_t>(b)]];
    Eigen::MatrixXd x = assemble(trip, trip.vehicle, normalizer);
    for (Eigen::Index t = 0; t < T; ++t) {
      batch.features.row(t * B + b) = x.row(t).cast<Scalar>();
      if (labeled) {
        batch.labels(t * B + b) =
            static_cast<Scalar>((*trip.labels_wh)[static_cast<std::size_t>(t)]);
      }
    }
  }
  return batch;
}

/// Quantile-bucketed padded batches; ablation baseline only, never the
/// production training path.
template <typename Scalar>
struct PaddedBatchT {
  Eigen::Index batch_size = 0;
  Eigen::Index padded_length = 0;  // the bucket's upper length edge
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> features;  // (L*B) x 46, zero padded
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> labels;                 // (L*B), zero padded
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mask;                   // 1 = real link, 0 = padding
  std::vector<std::size_t> trip_indices;
};

using PaddedBatch = PaddedBatchT<float>;

std::vector<PaddedBatch> quantile_bucket_with_padding(const std::vector<MacroTrip>& trips,
                                                      std::size_t level_count,
                                                      const Normalizer& normalizer,
                                                      std::uint64_t rng_seed,
                                                      std::size_t cap = kBatchCap);

}  // namespace evlink
