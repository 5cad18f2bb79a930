/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "evlink/batching.hpp"
#include "evlink/oracle.hpp"

using namespace evlink;

namespace {

std::vector<MacroTrip> trips_with_lengths(const std::vector<std::size_t>& lengths) {
  GeneratorConfig cfg;
  cfg.trip_count = 1;
  std::vector<MacroTrip> out;
  std::uint64_t seed = 0;
  for (std::size_t len : lengths) {
    cfg.route.min_links = len;
    cfg.route.max_links = len;
    GeneratedDataset ds = generate_dataset(cfg, seed++);
    ds.trips[0].trip_id = "trip-" + std::to_string(out.size());
    out.push_back(std::move(ds.trips[0]));
  }
  return out;
}

}  // namespace

TEST_CASE("bucket_by_length: partition by exact length") {
  const auto trips = trips_with_lengths({3, 5, 3, 7});
  const std::vector<Bucket> buckets = bucket_by_length(trips);
  REQUIRE(buckets.size() == 3);
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& b : buckets) sizes[b.trip_length] = b.members.size();
  CHECK(sizes[3] == 2);
  CHECK(sizes[5] == 1);
  CHECK(sizes[7] == 1);

  // union equals the dataset, pairwise disjoint
  std::set<std::size_t> seen;
  for (const auto& b : buckets) {
    for (std::size_t idx : b.members) {
      CHECK(trips[idx].num_links() == b.trip_length);
      CHECK(seen.insert(idx).second);
    }
  }
  CHECK(seen.size() == trips.size());
}

TEST_CASE("bucket_by_length: empty dataset gives empty partition") {
  CHECK(bucket_by_length({}).empty());
}

TEST_CASE("epoch_batches: ceiling split with cap 128") {
  std::vector<Bucket> buckets(1);
  buckets[0].trip_length = 4;
  for (std::size_t i = 0; i < 300; ++i) buckets[0].members.push_back(i);
  const auto plans = epoch_batches(buckets, 1);
  REQUIRE(plans.size() == 3);
  std::multiset<std::size_t> sizes;
  for (const auto& p : plans) sizes.insert(p.members.size());
  CHECK(sizes == std::multiset<std::size_t>{44, 128, 128});
}

TEST_CASE("epoch_batches: every trip exactly once; different seeds reorder") {
  const auto trips = trips_with_lengths({3, 3, 3, 5, 5, 7, 7, 7, 7, 2});
  const auto buckets = bucket_by_length(trips);
  const auto e1 = epoch_batches(buckets, 11);
  const auto e2 = epoch_batches(buckets, 12);

  auto flatten = [](const std::vector<BatchPlan>& plans) {
    std::vector<std::size_t> ids;
    for (const auto& p : plans) ids.insert(ids.end(), p.members.begin(), p.members.end());
    return ids;
  };
  std::vector<std::size_t> f1 = flatten(e1), f2 = flatten(e2);
  CHECK(f1 != f2);  // order differs
  std::sort(f1.begin(), f1.end());
  std::sort(f2.begin(), f2.end());
  CHECK(f1 == f2);  // same multiset
  CHECK(f1.size() == trips.size());
  CHECK(std::adjacent_find(f1.begin(), f1.end()) == f1.end());  // exactly once
}

TEST_CASE("epoch_batches: singleton bucket gives one batch of one") {
  std::vector<Bucket> buckets(1);
  buckets[0].trip_length = 9;
  buckets[0].members = {42};
  const auto plans = epoch_batches(buckets, 5);
  REQUIRE(plans.size() == 1);
  CHECK(plans[0].members == std::vector<std::size_t>{42});
}

TEST_CASE("epoch_batches: fixed seed reproduces the exact batch sequence") {
  const auto trips = trips_with_lengths({3, 3, 5, 5, 5, 2, 2, 2, 2});
  const auto buckets = bucket_by_length(trips);
  const auto a = epoch_batches(buckets, 99);
  const auto b = epoch_batches(buckets, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].trip_length == b[i].trip_length);
    CHECK(a[i].members == b[i].members);
  }
}

TEST_CASE("no-padding guarantee: an epoch streams exactly sum(T_i) rows") {
  GeneratorConfig cfg;
  cfg.trip_count = 120;
  cfg.route.max_links = 15;
  const auto ds = generate_dataset(cfg, 21);
  const Normalizer norm = Normalizer::fit(ds.trips);
  const auto buckets = bucket_by_length(ds.trips);
  const auto plans = epoch_batches(buckets, 3);

  std::size_t expected = 0;
  for (const auto& t : ds.trips) expected += t.num_links();
  std::size_t streamed = 0;
  for (const auto& plan : plans) {
    const Batch batch = build_batch<float>(plan, ds.trips, norm);
    CHECK(batch.batch_size <= static_cast<Eigen::Index>(kBatchCap));
    streamed += static_cast<std::size_t>(batch.features.rows());
    CHECK(batch.features.rows() == batch.batch_size * batch.trip_length);
  }
  CHECK(streamed == expected);
}

TEST_CASE("quantile padding: m=1 pads everything to the max length") {
  const auto trips = trips_with_lengths({2, 4, 7});
  const Normalizer norm = Normalizer::fit(trips);
  const auto batches = quantile_bucket_with_padding(trips, 1, norm, 1);
  std::size_t members = 0;
  for (const auto& b : batches) {
    CHECK(b.padded_length == 7);
    members += b.trip_indices.size();
  }
  CHECK(members == trips.size());
}

TEST_CASE("quantile padding: mask marks real links 1 and padding 0") {
  const auto trips = trips_with_lengths({2, 4});
  const Normalizer norm = Normalizer::fit(trips);
  const auto batches = quantile_bucket_with_padding(trips, 1, norm, 1);
  for (const auto& b : batches) {
    const auto B = b.batch_size;
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto& trip = trips[b.trip_indices[static_cast<std::size_t>(i)]];
      for (Eigen::Index t = 0; t < b.padded_length; ++t) {
        const float expected = t < static_cast<Eigen::Index>(trip.num_links()) ? 1.0f : 0.0f;
        CHECK(b.mask(t * B + i) == expected);
        if (expected == 0.0f) {
          CHECK(b.features.row(t * B + i).cwiseAbs().maxCoeff() == 0.0f);
          CHECK(b.labels(t * B + i) == 0.0f);
        }
      }
    }
  }
}

TEST_CASE("quantile padding: m = #distinct lengths reduces to exact bucketing") {
  std::vector<std::size_t> lengths;
  for (int i = 0; i < 50; ++i) lengths.push_back(2 + static_cast<std::size_t>(i % 5));  // 2..6
  const auto trips = trips_with_lengths(lengths);
  const Normalizer norm = Normalizer::fit(trips);
  const auto batches = quantile_bucket_with_padding(trips, 5, norm, 1);
  // every batch holds trips of exactly its padded length: zero padding
  for (const auto& b : batches) {
    for (std::size_t idx : b.trip_indices) {
      CHECK(trips[idx].num_links() == static_cast<std::size_t>(b.padded_length));
    }
    CHECK(b.mask.minCoeff() == 1.0f);
  }
  // and the partition is exhaustive
  std::size_t members = 0;
  for (const auto& b : batches) members += b.trip_indices.size();
  CHECK(members == trips.size());
}
