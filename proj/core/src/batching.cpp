/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/batching.hpp"

#include <algorithm>
#include <map>

#include "evlink/common.hpp"
#include "evlink/rng.hpp"

namespace evlink {

std::vector<Bucket> bucket_by_length(const std::vector<MacroTrip>& trips) {
  std::map<std::size_t, Bucket> by_len;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    auto& b = by_len[trips[i].num_links()];
    b.trip_length = trips[i].num_links();
    b.members.push_back(i);
  }
  std::vector<Bucket> out;
  out.reserve(by_len.size());
  for (auto& [len, bucket] : by_len) out.push_back(std::move(bucket));
  return out;
}

std::vector<BatchPlan> epoch_batches(const std::vector<Bucket>& buckets, std::uint64_t rng_seed,
                                     std::size_t cap) {
  if (cap == 0) throw ConfigError("epoch_batches: cap must be > 0");
  Rng rng(rng_seed, "batching.epoch");

  std::vector<BatchPlan> plans;
  std::vector<std::size_t> bucket_order(buckets.size());
  for (std::size_t i = 0; i < buckets.size(); ++i) bucket_order[i] = i;
  rng.shuffle(bucket_order.begin(), bucket_order.end());

  for (std::size_t bi : bucket_order) {
    const Bucket& bucket = buckets[bi];
    std::vector<std::size_t> members = bucket.members;
    rng.shuffle(members.begin(), members.end());
    for (std::size_t start = 0; start < members.size(); start += cap) {
      BatchPlan plan;
      plan.trip_length = bucket.trip_length;
      const std::size_t end = std::min(members.size(), start + cap);
      plan.members.assign(members.begin() + static_cast<std::ptrdiff_t>(start),
                          members.begin() + static_cast<std::ptrdiff_t>(end));
      plans.push_back(std::move(plan));
    }
  }
  // Batch visit order is shuffled across buckets as well, so long and short
  // trips interleave within an epoch.
  rng.shuffle(plans.begin(), plans.end());
  return plans;
}

std::vector<PaddedBatch> quantile_bucket_with_padding(const std::vector<MacroTrip>& trips,
                                                      std::size_t level_count,
                                                      const Normalizer& normalizer,
                                                      std::uint64_t rng_seed, std::size_t cap) {
  if (level_count < 1) throw ConfigError("quantile_bucket_with_padding: need m >= 1");
  if (trips.empty()) return {};

  std::vector<std::size_t> lengths;
  lengths.reserve(trips.size());
  for (const auto& t : trips) lengths.push_back(t.num_links());
  std::vector<std::size_t> sorted = lengths;
  std::sort(sorted.begin(), sorted.end());

  // Quantile edges L_0 = 0 < L_1 < ... < L_m = max length; trip i joins
  // group k when T_i in (L_{k-1}, L_k].
  std::vector<std::size_t> edges;
  edges.push_back(0);
  for (std::size_t k = 1; k <= level_count; ++k) {
    const double q = static_cast<double>(k) / static_cast<double>(level_count);
    const auto pos = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(sorted.size() - 1),
                         q * static_cast<double>(sorted.size() - 1)));
    std::size_t edge = sorted[pos];
    if (k == level_count) edge = sorted.back();
    if (edge > edges.back()) edges.push_back(edge);
  }
  if (edges.size() < 2) edges.push_back(sorted.back());

  std::vector<std::vector<std::size_t>> groups(edges.size() - 1);
  for (std::size_t i = 0; i < trips.size(); ++i) {
    for (std::size_t k = 1; k < edges.size(); ++k) {
      if (lengths[i] > edges[k - 1] && lengths[i] <= edges[k]) {
        groups[k - 1].push_back(i);
        break;
      }
    }
  }

  Rng rng(rng_seed, "batching.quantile");
  std::vector<PaddedBatch> out;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& members = groups[k];
    if (members.empty()) continue;
    rng.shuffle(members.begin(), members.end());
    const auto L = static_cast<Eigen::Index>(edges[k + 1]);
    for (std::size_t start = 0; start < members.size(); start += cap) {
      const std::size_t end = std::min(members.size(), start + cap);
      const auto B = static_cast<Eigen::Index>(end - start);
      PaddedBatch batch;
      batch.batch_size = B;
      batch.padded_length = L;
      batch.features = Eigen::MatrixXf::Zero(L * B, kFeatureDim);
      batch.labels = Eigen::VectorXf::Zero(L * B);
      batch.mask = Eigen::VectorXf::Zero(L * B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const MacroTrip& trip = trips[members[start + static_cast<std::size_t>(b)]];
        batch.trip_indices.push_back(members[start + static_cast<std::size_t>(b)]);
        const Eigen::MatrixXd x = assemble(trip, trip.vehicle, normalizer);
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(trip.num_links()); ++t) {
          batch.features.row(t * B + b) = x.row(t).cast<float>();
          batch.mask(t * B + b) = 1.0f;
          if (trip.labels_wh) {
            batch.labels(t * B + b) =
                static_cast<float>((*trip.labels_wh)[static_cast<std::size_t>(t)]);
          }
        }
      }
      out.push_back(std::move(batch));
    }
  }
  return out;
}

}  // namespace evlink
