#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "mnp/context_memory.hpp"
#include "mnp/rng.hpp"
#include "test_util.hpp"

using namespace mnp;
using testutil::random_tensor;

namespace {

Tensor onehot(const std::vector<std::size_t>& cls, std::size_t k) {
  Tensor y({cls.size(), k});
  for (std::size_t i = 0; i < cls.size(); ++i) y.at(i, cls[i]) = 1.0;
  return y;
}

// independent error formulas for the enumeration oracle
double mse_ref(const Tensor& probs, const Tensor& labels, std::size_t i) {
  double e = 0.0;
  for (std::size_t c = 0; c < probs.cols(); ++c)
    e += std::pow(labels.at(i, c) - probs.at(i, c), 2.0);
  return e / static_cast<double>(probs.cols());
}

double ce_ref(const Tensor& probs, const Tensor& labels, std::size_t i) {
  double e = 0.0;
  for (std::size_t c = 0; c < probs.cols(); ++c)
    e -= labels.at(i, c) * std::log(std::max(probs.at(i, c), 1e-12));
  return e / static_cast<double>(probs.cols());
}

// a tiny two-class multimodal training set with recognisable feature values:
// sample i of class c has features (100*c + i, ...)
struct Fixture {
  std::vector<Tensor> features;
  Tensor labels;
  Fixture(std::size_t n_per_class, std::size_t d, std::size_t modalities) {
    std::vector<std::size_t> cls;
    Tensor f({2 * n_per_class, d});
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
      const std::size_t c = i < n_per_class ? 0 : 1;
      cls.push_back(c);
      for (std::size_t j = 0; j < d; ++j)
        f.at(i, j) = 100.0 * static_cast<double>(c) + static_cast<double>(i) +
                     0.01 * static_cast<double>(j);
    }
    for (std::size_t m = 0; m < modalities; ++m) {
      Tensor fm = f;
      for (double& x : fm.data()) x += 1000.0 * static_cast<double>(m);
      features.push_back(fm);
    }
    labels = onehot(cls, 2);
  }
};

bool row_in_training_set(const Tensor& row, const Tensor& train) {
  for (std::size_t i = 0; i < train.rows(); ++i) {
    bool same = true;
    for (std::size_t j = 0; j < train.cols(); ++j)
      if (train.at(i, j) != row.at(0, j)) {
        same = false;
        break;
      }
    if (same) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("memory init: balanced class blocks drawn from the training set") {
  Fixture fx(20, 3, 2);
  Rng rng(5);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 8, rng);
  REQUIRE(mem.slots() == 16);
  REQUIRE(mem.modalities() == 2);
  REQUIRE(mem.features(0).rows() == 16);
  REQUIRE(mem.features(0).cols() == 3);

  Tensor y = mem.labels_onehot();
  std::size_t count0 = 0;
  for (std::size_t i = 0; i < 16; ++i) count0 += y.at(i, 0) == 1.0 ? 1 : 0;
  REQUIRE(count0 == 8);

  // every stored row is a real training sample of the right class
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < 16; ++i) {
      Tensor row = mem.features(m).row_copy(i);
      REQUIRE(row_in_training_set(row, fx.features[m]));
      const double base = row.at(0, 0) - 1000.0 * static_cast<double>(m);
      const std::size_t cls = base >= 100.0 ? 1 : 0;
      REQUIRE(cls == mem.class_of_slot(i));
    }
}

TEST_CASE("memory init: seed determinism") {
  Fixture fx(30, 2, 1);
  Rng a(9), b(9), c(10);
  ContextMemory m1 = ContextMemory::init_random(fx.features, fx.labels, 10, a);
  ContextMemory m2 = ContextMemory::init_random(fx.features, fx.labels, 10, b);
  ContextMemory m3 = ContextMemory::init_random(fx.features, fx.labels, 10, c);
  REQUIRE(bitwise_equal(m1.features(0), m2.features(0)));
  REQUIRE_FALSE(bitwise_equal(m1.features(0), m3.features(0)));
}

TEST_CASE("memory init: refuses to oversample a class") {
  Fixture fx(5, 2, 1);
  Rng rng(1);
  REQUIRE_THROWS_AS(ContextMemory::init_random(fx.features, fx.labels, 6, rng),
                    contract_error);
}

TEST_CASE("replacement slot: least attended column, ties to lowest index") {
  // column means: 0.30, 0.20, 0.50 -> slot 1
  Tensor att = Tensor::matrix(2, 3, {0.3, 0.2, 0.5, 0.3, 0.2, 0.5});
  REQUIRE(ContextMemory::least_attended_slot(att, 0, 3) == 1);

  Tensor tie = Tensor::matrix(1, 4, {0.25, 0.25, 0.25, 0.25});
  REQUIRE(ContextMemory::least_attended_slot(tie, 0, 4) == 0);
  REQUIRE(ContextMemory::least_attended_slot(tie, 2, 4) == 2);
}

TEST_CASE("replacement target: mse picks the worst prediction") {
  Tensor probs = Tensor::matrix(3, 2, {0.9, 0.1, 0.4, 0.6, 0.7, 0.3});
  Tensor labels = onehot({0, 0, 0}, 2);
  std::vector<std::size_t> all = {0, 1, 2};
  REQUIRE(ContextMemory::highest_error_target(probs, labels, all,
                                              MemoryStrategy::Mse) == 1);
}

TEST_CASE("replacement target: mse and cross-entropy can disagree") {
  // needs >= 3 classes; with two classes both errors are monotone in p_true
  Tensor probs =
      Tensor::matrix(2, 3, {0.4, 0.6, 0.0, 0.35, 0.325, 0.325});
  Tensor labels = onehot({0, 0}, 3);
  std::vector<std::size_t> both = {0, 1};
  REQUIRE(ContextMemory::highest_error_target(probs, labels, both,
                                              MemoryStrategy::Mse) == 0);
  REQUIRE(ContextMemory::highest_error_target(probs, labels, both,
                                              MemoryStrategy::Ce) == 1);
}

TEST_CASE("replacement selection matches brute-force enumeration") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.integer(8);
    const std::size_t k = 2 + rng.integer(2);
    Tensor probs({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        probs.at(i, c) = rng.uniform(0.01, 1.0);
        sum += probs.at(i, c);
      }
      for (std::size_t c = 0; c < k; ++c) probs.at(i, c) /= sum;
    }
    std::vector<std::size_t> cls(n);
    for (auto& c : cls) c = rng.integer(k);
    Tensor labels = onehot(cls, k);
    std::vector<std::size_t> cands(n);
    for (std::size_t i = 0; i < n; ++i) cands[i] = i;

    for (MemoryStrategy st : {MemoryStrategy::Mse, MemoryStrategy::Ce}) {
      std::size_t best = 0;
      double best_err = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = st == MemoryStrategy::Mse ? mse_ref(probs, labels, i)
                                                   : ce_ref(probs, labels, i);
        if (e > best_err) {
          best_err = e;
          best = i;
        }
      }
      REQUIRE(ContextMemory::highest_error_target(probs, labels, cands, st) ==
              best);
    }

    // slot selection against a column-mean loop oracle
    const std::size_t cols = 3 + rng.integer(6);
    Tensor att = random_tensor(n, cols, rng, 0.0, 1.0);
    std::size_t best_col = 0;
    double best_mean = 1e300;
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += att.at(i, j);
      s /= static_cast<double>(n);
      if (s < best_mean) {
        best_mean = s;
        best_col = j;
      }
    }
    REQUIRE(ContextMemory::least_attended_slot(att, 0, cols) == best_col);
  }
}

TEST_CASE("memory update: worked example replaces exactly one slot per class") {
  Fixture fx(10, 2, 1);
  Rng rng(3);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 4, rng);
  Tensor before = mem.features(0);

  // batch: two targets, one per class
  Tensor tf = Tensor::matrix(2, 2, {-1.0, -2.0, -3.0, -4.0});
  Tensor tl = onehot({0, 1}, 2);
  // class-0 block columns 0..3: slot 2 least attended; class-1: slot 5 (global)
  Tensor att = Tensor::matrix(
      2, 8, {0.3, 0.2, 0.1, 0.4, 0.0, 0.0, 0.0, 0.0,
             0.0, 0.0, 0.0, 0.0, 0.3, 0.1, 0.3, 0.3});
  Tensor probs = Tensor::matrix(2, 2, {0.6, 0.4, 0.2, 0.8});
  mem.update({tf}, tl, {att}, {probs}, MemoryStrategy::Mse,
             MemoryScope::ClassConsistent);

  Tensor after = mem.features(0);
  for (std::size_t i = 0; i < 8; ++i) {
    if (i == 2) {
      REQUIRE(after.at(i, 0) == -1.0);
      REQUIRE(after.at(i, 1) == -2.0);
    } else if (i == 5) {
      REQUIRE(after.at(i, 0) == -3.0);
      REQUIRE(after.at(i, 1) == -4.0);
    } else {
      REQUIRE(after.at(i, 0) == before.at(i, 0));
      REQUIRE(after.at(i, 1) == before.at(i, 1));
    }
  }
}

TEST_CASE("memory update: class-consistent inserts only matching labels") {
  Fixture fx(20, 2, 2);
  Rng rng(17);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 5, rng);
  for (int step = 0; step < 50; ++step) {
    const std::size_t n = 1 + rng.integer(8);
    std::vector<std::size_t> cls(n);
    for (auto& c : cls) c = rng.integer(2);
    // targets tagged by class in their first coordinate: class c -> -(c+1)
    std::vector<Tensor> tf;
    for (std::size_t m = 0; m < 2; ++m) {
      Tensor f({n, 2});
      for (std::size_t i = 0; i < n; ++i) {
        f.at(i, 0) = -static_cast<double>(cls[i] + 1);
        f.at(i, 1) = rng.uniform();
      }
      tf.push_back(f);
    }
    Tensor tl = onehot(cls, 2);
    std::vector<Tensor> att = {random_tensor(n, 10, rng, 0.0, 1.0),
                               random_tensor(n, 10, rng, 0.0, 1.0)};
    std::vector<Tensor> probs;
    for (std::size_t m = 0; m < 2; ++m) {
      Tensor p({n, 2});
      for (std::size_t i = 0; i < n; ++i) {
        p.at(i, 0) = rng.uniform(0.01, 0.99);
        p.at(i, 1) = 1.0 - p.at(i, 0);
      }
      probs.push_back(p);
    }
    mem.update(tf, tl, att, probs, MemoryStrategy::Mse,
               MemoryScope::ClassConsistent);

    // every inserted row (negative tag) must sit in the matching class block
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t i = 0; i < mem.slots(); ++i) {
        const double tag = mem.features(m).at(i, 0);
        if (tag < 0.0)
          REQUIRE(static_cast<std::size_t>(-tag) - 1 == mem.class_of_slot(i));
      }
  }
}

TEST_CASE("memory update: literal scope copies one global target everywhere") {
  Fixture fx(10, 2, 1);
  Rng rng(23);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 3, rng);
  Tensor tf = Tensor::matrix(3, 2, {-1, -1, -2, -2, -3, -3});
  Tensor tl = onehot({0, 1, 1}, 2);
  // target 0 has the worst prediction overall
  Tensor probs = Tensor::matrix(3, 2, {0.1, 0.9, 0.8, 0.2, 0.9, 0.1});
  Tensor att = random_tensor(3, 6, rng, 0.0, 1.0);
  mem.update({tf}, tl, {att}, {probs}, MemoryStrategy::Mse,
             MemoryScope::Literal);
  // both class blocks received the same row (-1, -1), label ignored
  std::size_t inserted = 0;
  for (std::size_t i = 0; i < 6; ++i)
    if (mem.features(0).at(i, 0) == -1.0) ++inserted;
  REQUIRE(inserted == 2);
}

TEST_CASE("memory update: fifo honours queue order") {
  Fixture fx(10, 1, 1);
  Rng rng(29);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 3, rng);
  // six single-target batches of class 0 tagged -1..-6
  for (int t = 1; t <= 6; ++t) {
    Tensor tf = Tensor::matrix(1, 1, {-static_cast<double>(t)});
    Tensor tl = onehot({0}, 2);
    Tensor att = Tensor::matrix(1, 6, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1});
    Tensor probs = Tensor::matrix(1, 2, {0.5, 0.5});
    mem.update({tf}, tl, {att}, {probs}, MemoryStrategy::Fifo,
               MemoryScope::ClassConsistent);
    // slots cycle 0,1,2,0,1,2 within the class-0 block
    const std::size_t expect_slot = static_cast<std::size_t>((t - 1) % 3);
    REQUIRE(mem.features(0).at(expect_slot, 0) == -static_cast<double>(t));
  }
  // after six inserts the class-0 block holds the last three, in queue order
  REQUIRE(mem.features(0).at(0, 0) == -4.0);
  REQUIRE(mem.features(0).at(1, 0) == -5.0);
  REQUIRE(mem.features(0).at(2, 0) == -6.0);
}

TEST_CASE("memory update: frozen and random leave training contents alone") {
  Fixture fx(10, 2, 1);
  Rng rng(41);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 4, rng);
  Tensor before = mem.features(0);
  Tensor tf = Tensor::matrix(1, 2, {-9, -9});
  Tensor tl = onehot({0}, 2);
  Tensor att = random_tensor(1, 8, rng, 0.0, 1.0);
  Tensor probs = Tensor::matrix(1, 2, {0.5, 0.5});
  for (MemoryStrategy st : {MemoryStrategy::Frozen, MemoryStrategy::Random}) {
    mem.update({tf}, tl, {att}, {probs}, st, MemoryScope::ClassConsistent);
    REQUIRE(bitwise_equal(mem.features(0), before));
  }

  // the random strategy refreshes via resample: still balanced, still from
  // the training set, and seed-deterministic
  Rng r1(7), r2(7);
  ContextMemory a = mem, b = mem;
  a.resample(fx.features, fx.labels, r1);
  b.resample(fx.features, fx.labels, r2);
  REQUIRE(bitwise_equal(a.features(0), b.features(0)));
  REQUIRE_FALSE(bitwise_equal(a.features(0), before));
  for (std::size_t i = 0; i < a.slots(); ++i)
    REQUIRE(row_in_training_set(a.features(0).row_copy(i), fx.features[0]));
}

TEST_CASE("memory update: class balance survives randomized updates") {
  Fixture fx(30, 2, 2);
  Rng rng(53);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 6, rng);
  for (int step = 0; step < 300; ++step) {
    const std::size_t n = 1 + rng.integer(6);
    std::vector<std::size_t> cls(n);
    for (auto& c : cls) c = rng.integer(2);
    std::vector<Tensor> tf = {random_tensor(n, 2, rng),
                              random_tensor(n, 2, rng)};
    Tensor tl = onehot(cls, 2);
    std::vector<Tensor> att = {random_tensor(n, 12, rng, 0.0, 1.0),
                               random_tensor(n, 12, rng, 0.0, 1.0)};
    std::vector<Tensor> probs;
    for (int m = 0; m < 2; ++m) {
      Tensor p({n, 2});
      for (std::size_t i = 0; i < n; ++i) {
        p.at(i, 0) = rng.uniform(0.01, 0.99);
        p.at(i, 1) = 1.0 - p.at(i, 0);
      }
      probs.push_back(p);
    }
    const MemoryStrategy st =
        step % 2 == 0 ? MemoryStrategy::Mse : MemoryStrategy::Ce;
    mem.update(tf, tl, att, probs, st, MemoryScope::ClassConsistent);
  }
  // partition structure is intact by construction; shape unchanged
  REQUIRE(mem.slots() == 12);
  REQUIRE(mem.features(0).rows() == 12);
  Tensor y = mem.labels_onehot();
  std::size_t c0 = 0;
  for (std::size_t i = 0; i < 12; ++i) c0 += y.at(i, 0) == 1.0 ? 1 : 0;
  REQUIRE(c0 == 6);
}

TEST_CASE("memory update: shape mismatches are rejected") {
  Fixture fx(10, 2, 1);
  Rng rng(61);
  ContextMemory mem = ContextMemory::init_random(fx.features, fx.labels, 4, rng);
  Tensor tf = Tensor::matrix(1, 2, {0, 0});
  Tensor tl = onehot({0}, 2);
  Tensor bad_att = Tensor::matrix(1, 5, {0.2, 0.2, 0.2, 0.2, 0.2});
  Tensor probs = Tensor::matrix(1, 2, {0.5, 0.5});
  REQUIRE_THROWS_AS(mem.update({tf}, tl, {bad_att}, {probs},
                               MemoryStrategy::Mse,
                               MemoryScope::ClassConsistent),
                    shape_error);
}
