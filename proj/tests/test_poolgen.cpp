#include <gtest/gtest.h>

#include <map>

#include "p2e/poolgen.hpp"
#include "support.hpp"

namespace p2e {
namespace {

TEST(Sampling, SameSeedSameHyperParams) {
  Rng a(42), b(42);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_hyperparams(a), sample_hyperparams(b));
}

TEST(Sampling, EveryDrawIsInsideTheTable) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto h = sample_hyperparams(rng);
    EXPECT_NE(std::find(std::begin(kEpochChoices), std::end(kEpochChoices), h.epochs), std::end(kEpochChoices));
    EXPECT_NE(std::find(std::begin(kBatchChoices), std::end(kBatchChoices), h.batch_size), std::end(kBatchChoices));
    EXPECT_NE(std::find(std::begin(kFrequencyChoices), std::end(kFrequencyChoices), h.frequency),
              std::end(kFrequencyChoices));
    EXPECT_GE(h.initial_sparsity, 0.1);
    EXPECT_LE(h.initial_sparsity, 0.6);
    EXPECT_GE(h.final_sparsity, 0.7);
    EXPECT_LE(h.final_sparsity, 0.9);
    EXPECT_LT(h.initial_sparsity, h.final_sparsity);
  }
}

// Pearson statistic against a uniform distribution over `k` categories.
template <typename Key>
double chi_square(const std::map<Key, int>& counts, std::size_t k, int n) {
  const double expected = static_cast<double>(n) / static_cast<double>(k);
  double stat = 0.0;
  for (const auto& [key, c] : counts) stat += (c - expected) * (c - expected) / expected;
  // Unseen categories contribute expected each.
  stat += static_cast<double>(k - counts.size()) * expected;
  return stat;
}

TEST(Sampling, DiscreteFieldsAreUniform) {
  Rng rng(2024);
  const int n = 1000;
  std::map<std::size_t, int> epochs, batch;
  std::map<int, int> loss, optimizer;
  std::map<std::uint64_t, int> frequency;
  double init_sum = 0.0, final_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto h = sample_hyperparams(rng);
    ++epochs[h.epochs];
    ++batch[h.batch_size];
    ++loss[static_cast<int>(h.loss)];
    ++optimizer[static_cast<int>(h.optimizer)];
    ++frequency[h.frequency];
    init_sum += h.initial_sparsity;
    final_sum += h.final_sparsity;
  }
  EXPECT_EQ(epochs.size(), 5u);
  // Critical values at p = 0.001 for 4, 2, 2, 1 and 3 degrees of freedom.
  EXPECT_LT(chi_square(epochs, 5, n), 18.467);
  EXPECT_LT(chi_square(batch, 3, n), 13.816);
  EXPECT_LT(chi_square(loss, 3, n), 13.816);
  EXPECT_LT(chi_square(optimizer, 2, n), 10.828);
  EXPECT_LT(chi_square(frequency, 4, n), 16.266);
  // Continuous ranges: the mean of 1000 uniforms is within ~4 standard errors of the midpoint.
  EXPECT_NEAR(init_sum / n, 0.35, 4 * 0.5 / std::sqrt(12.0 * n));
  EXPECT_NEAR(final_sum / n, 0.80, 4 * 0.2 / std::sqrt(12.0 * n));
}

TEST(Schedule, LargestEventCountThatFits) {
  HyperParams h;
  h.frequency = 300;
  h.initial_sparsity = 0.2;
  h.final_sparsity = 0.8;
  const auto s = schedule_for(h, 1000);
  EXPECT_EQ(s.begin_step, 0u);
  EXPECT_EQ(s.steps, 3u);
  EXPECT_LE(s.end_step(), 1000u);
  EXPECT_GT(s.end_step() + s.frequency, 1000u);
  EXPECT_THROW(schedule_for(h, 299), Error);
}

const Dataset& pool_data() {
  // Large enough for the slowest combination (3 epochs, batch 128,
  // frequency 400) to fit one pruning interval.
  static const Dataset d = gen_dataset({DatasetKind::blobs, 30000, 4, 8, 4.0, 77});
  return d;
}

PoolConfig small_config(std::uint64_t seed, std::size_t size) {
  PoolConfig c;
  c.pool_size = size;
  c.base_seed = seed;
  c.hidden = {16, 16};
  return c;
}

TEST(Pool, SingleMemberManifest) {
  const Pool p = generate_pool(pool_data(), small_config(1, 1), "abc");
  ASSERT_EQ(p.manifest.entries.size(), 1u);
  EXPECT_EQ(p.manifest.entries[0].model_id, "m000");
  EXPECT_TRUE(p.models[0].has_value());
}

TEST(Pool, MembersSatisfyPrunerAndQuantizerInvariants) {
  const Pool p = generate_pool(pool_data(), small_config(3, 4), "abc");
  for (std::size_t i = 0; i < p.models.size(); ++i) {
    ASSERT_TRUE(p.models[i].has_value());
    const Model& m = *p.models[i];
    const auto& e = p.manifest.entries[i];
    EXPECT_TRUE(m.is_quantized());
    EXPECT_EQ(*m.metadata.hyperparams, e.hyperparams);
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
      const auto& layer = m.layers[k];
      ASSERT_TRUE(layer.mask.has_value());
      EXPECT_TRUE(layer.qweights->in_range());
      EXPECT_EQ(layer.qweights->params.zero_point, 0);
      for (std::size_t j = 0; j < layer.weights.size(); ++j) {
        if (layer.mask->data[j] == 0.0f) EXPECT_EQ(layer.qweights->data[j], 0);
      }
      // At least the scheduled final sparsity is reached; quantization can only add zeros.
      EXPECT_GE(zero_fraction(layer.weights) + 1e-12,
                static_cast<double>(pruned_count(e.hyperparams.final_sparsity, layer.weights.size())) /
                    static_cast<double>(layer.weights.size()));
    }
    EXPECT_EQ(e.file_size_bytes, serialize_model(m).size());
  }
}

TEST(Pool, SameSeedSameManifestAnyWorkerCount) {
  testing::TempDir dir;
  auto one = small_config(5, 3);
  one.workers = 1;
  auto three = one;
  three.workers = 3;
  const Pool a = generate_pool(pool_data(), one, "abc", "d.p2ed");
  const Pool b = generate_pool(pool_data(), three, "abc", "d.p2ed");
  EXPECT_EQ(json(a.manifest).dump(), json(b.manifest).dump());
  for (std::size_t i = 0; i < a.models.size(); ++i) EXPECT_TRUE(testing::bit_equal(*a.models[i], *b.models[i]));
}

TEST(Pool, WriteLoadRoundTrip) {
  testing::TempDir dir;
  const Pool p = generate_pool(pool_data(), small_config(6, 2), "abc", "d.p2ed");
  const auto manifest = write_pool(p, dir.path());
  const Pool back = load_pool(manifest);
  EXPECT_EQ(json(back.manifest).dump(), json(p.manifest).dump());
  for (std::size_t i = 0; i < p.models.size(); ++i) EXPECT_TRUE(testing::bit_equal(*back.models[i], *p.models[i]));
}

TEST(Pool, DuplicateModelIdIsCorrupt) {
  testing::TempDir dir;
  PoolManifest m;
  m.entries.resize(2);
  m.entries[0].model_id = m.entries[1].model_id = "m000";
  write_json(dir / "manifest.json", json(m));
  EXPECT_THROW(read_manifest(dir / "manifest.json"), Error);
}

TEST(Pool, FailedJobsAreRecordedAndAllFailedIsAPoolError) {
  // Too few samples for any pruning interval: every job fails.
  const Dataset tiny = gen_dataset({DatasetKind::blobs, 200, 4, 8, 1.0, 1});
  try {
    generate_pool(tiny, small_config(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::pool);
  }
  auto no_prune = small_config(1, 2);
  no_prune.prune = false;
  const Pool p = generate_pool(tiny, no_prune);
  EXPECT_EQ(p.manifest.usable().size(), 2u);
  EXPECT_FALSE(p.models[0]->has_masks());
}

TEST(Pool, QuantizePoolIsIdempotentAndMatchesInlineQuantization) {
  auto c = small_config(8, 2);
  c.quantize = false;
  const Pool raw = generate_pool(pool_data(), c);
  EXPECT_FALSE(raw.models[0]->is_quantized());
  const Pool q = quantize_pool(raw, pool_data());
  const Pool qq = quantize_pool(q, pool_data());
  c.quantize = true;
  const Pool inline_q = generate_pool(pool_data(), c);
  for (std::size_t i = 0; i < q.models.size(); ++i) {
    EXPECT_TRUE(q.models[i]->is_quantized());
    EXPECT_TRUE(testing::bit_equal(*q.models[i], *qq.models[i]));
    EXPECT_TRUE(testing::bit_equal(*q.models[i], *inline_q.models[i]));
    EXPECT_EQ(q.manifest.entries[i].pruning_accuracy, inline_q.manifest.entries[i].pruning_accuracy);
  }
}

TEST(Pool, QuantizedMembersAgreeWithFloatArgmax) {
  // Same members with and without quantization; argmax agreement >= 90% on
  // every member for at least 4 of 5 seeds.
  const auto eval = pool_data().subset(Split::test);
  std::vector<std::size_t> rows(1000);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const Tensor x = gather_rows(eval.features, rows);
  int passing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = small_config(100 + seed, 3);
    c.quantize = false;
    const Pool raw = generate_pool(pool_data(), c);
    const Pool q = quantize_pool(raw, pool_data());
    bool all = true;
    for (std::size_t i = 0; i < raw.models.size(); ++i) {
      const auto a = predict_classes(*raw.models[i], x);
      const auto b = predict_classes(*q.models[i], x);
      std::size_t agree = 0;
      for (std::size_t j = 0; j < a.size(); ++j) agree += a[j] == b[j];
      all = all && agree >= 900;
    }
    passing += all;
  }
  EXPECT_GE(passing, 4);
}

TEST(Pool, AccuracySpreadAcrossSeeds) {
  int passing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Pool p = generate_pool(pool_data(), small_config(seed, 20));
    double lo = 1.0, hi = 0.0;
    for (const auto* e : p.manifest.usable()) {
      lo = std::min(lo, e->pruning_accuracy);
      hi = std::max(hi, e->pruning_accuracy);
    }
    EXPECT_GT(hi - lo, 0.0);
    passing += hi - lo >= 0.05;
  }
  EXPECT_GE(passing, 4);
}

}  // namespace
}  // namespace p2e
