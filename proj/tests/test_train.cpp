#include <cmath>
#include <numbers>

#include "birdast/error.hpp"
#include "birdast/model.hpp"
#include "birdast/train.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace birdast;
using namespace birdast::train;
using birdast::testing::CaptureLog;
using birdast::testing::TempDir;

namespace {

// Logistic regression on the flattened image: the smallest Classifier that
// still goes through the full training loop.
class LinearProbe final : public model::Classifier {
 public:
  LinearProbe(std::size_t size, std::size_t classes)
      : size_(size),
        w_(Tensor::zeros({size * size, classes}, true)),
        b_(Tensor::zeros({classes}, true)) {}

  std::string kind() const override { return "probe"; }
  std::size_t num_classes() const override { return b_.numel(); }
  std::size_t image_size() const override { return size_; }
  Tensor forward(GradTape& tape, const Tensor& image) const override {
    const Tensor x = tensor::reshape(tape, image, {1, size_ * size_});
    const Tensor z = tensor::add_bias(tape, tensor::matmul(tape, x, w_), b_);
    return tensor::reshape(tape, tensor::sigmoid(tape, z), {num_classes()});
  }
  std::vector<tensor::NamedTensor> parameters() const override { return {{"w", w_}, {"b", b_}}; }

 private:
  std::size_t size_;
  Tensor w_;
  Tensor b_;
};

// Class c lights up horizontal band c of the image; values stay in [0, 1].
std::vector<Example> banded(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    std::vector<double> px(size * size);
    for (std::size_t r = 0; r < size; ++r) {
      const bool lit = r * classes / size == label;
      for (std::size_t c = 0; c < size; ++c) px[r * size + c] = (lit ? 0.7 : 0.2) + rng.uniform(0.0, 0.2);
    }
    out.push_back({Tensor::from_values({size, size}, std::move(px)), label});
  }
  return out;
}

TrainConfig quick(std::size_t epochs, double lr) {
  TrainConfig c;
  c.total_epochs = epochs;
  c.patience = epochs;
  c.learning_rate = lr;
  c.train_batch = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("cosine schedule endpoints and midpoint") {
    TrainConfig c;
    c.learning_rate = 1e-4;
    c.total_epochs = 40;
    CHECK(cosine_lr(0, c) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(cosine_lr(20, c) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(cosine_lr(40, c) <= 1e-18);
    CHECK(cosine_lr(39, c) == doctest::Approx(0.5e-4 * (1.0 + std::cos(std::numbers::pi * 39.0 / 40.0))));
    c.eta_min = 1e-6;
    CHECK(cosine_lr(40, c) == doctest::Approx(1e-6));
    for (std::size_t e = 1; e < 40; ++e) CHECK(cosine_lr(e, c) < cosine_lr(e - 1, c));
  }

  TEST_CASE("early stopping counts epochs past the best") {
    std::vector<double> h(32, 1.0);
    for (std::size_t i = 0; i <= 20; ++i) h[i] = 2.0 - 0.05 * static_cast<double>(i);
    // Best at 0-based epoch 20 (epoch 21), flat afterwards.
    std::span<const double> all(h);
    CHECK_FALSE(early_stop(all.first(30), 10).stop);
    const StopDecision d = early_stop(all.first(31), 10);
    CHECK(d.stop);
    CHECK(d.best_epoch == 20);
    // An improvement at best + patience - 1 resets the count.
    std::vector<double> g(h.begin(), h.begin() + 31);
    g[29] = 0.5;
    const StopDecision e = early_stop(g, 10);
    CHECK_FALSE(e.stop);
    CHECK(e.best_epoch == 29);
    // Ties keep the earliest best.
    CHECK(early_stop(std::vector<double>{1.0, 1.0, 1.0}, 5).best_epoch == 0);
    CHECK(early_stop(std::vector<double>{1.0}, 0).stop);
    CHECK_THROWS_AS(early_stop(std::vector<double>{}, 3), Error);
  }

  TEST_CASE("Adam examples") {
    SUBCASE("first step moves by lr against the gradient sign") {
      std::vector<Tensor> p = {Tensor::zeros({1}, true)};
      p[0].mutable_grad()[0] = 1.0;
      AdamState s;
      adam_step(p, s, 0.1);
      CHECK(p[0].at(0) == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("quadratic converges") {
      std::vector<Tensor> p = {Tensor::zeros({1}, true)};
      AdamState s;
      for (int i = 0; i < 200; ++i) {
        p[0].zero_grad();
        p[0].mutable_grad()[0] = 2.0 * (p[0].at(0) - 3.0);
        adam_step(p, s, 0.1);
      }
      CHECK(std::abs(p[0].at(0) - 3.0) < 0.05);
    }
    SUBCASE("zero gradient leaves a fresh parameter unchanged") {
      std::vector<Tensor> p = {Tensor::full({3}, 0.7, true)};
      AdamState s;
      adam_step(p, s, 0.1);
      for (double v : p[0].values()) CHECK(v == 0.7);
      CHECK(s.step == 1);
    }
    SUBCASE("a small step does not increase a smooth loss") {
      Rng rng(4);
      Tensor w = testing::random_tensor(rng, {5});
      std::vector<Tensor> p = {w};
      auto loss = [&] {
        double l = 0.0;
        for (double v : w.values()) l += (v - 0.3) * (v - 0.3);
        return l;
      };
      const double before = loss();
      auto g = p[0].mutable_grad();
      for (std::size_t i = 0; i < 5; ++i) g[i] = 2.0 * (w.at(i) - 0.3);
      AdamState s;
      adam_step(p, s, 1e-3);
      CHECK(loss() <= before);
    }
  }

  TEST_CASE("BCE values") {
    GradTape tape(false);
    const Tensor half = Tensor::full({2, 3}, 0.5);
    const Tensor t = Tensor::from_values({2, 3}, {1, 0, 0, 0, 1, 0});
    CHECK(bce_loss(tape, half, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(tape, t, t).item() <= 1e-6);
  }

  TEST_CASE("training is deterministic under a seed") {
    const auto train_set = banded(12, 3, 6, 1), val_set = banded(6, 3, 6, 2);
    CaptureLog log;
    LinearProbe a(6, 3), b(6, 3);
    const TrainingLog la = train::train(a, train_set, val_set, quick(4, 0.05));
    const TrainingLog lb = train::train(b, train_set, val_set, quick(4, 0.05));
    REQUIRE(la.epochs.size() == lb.epochs.size());
    for (std::size_t i = 0; i < la.epochs.size(); ++i) {
      CHECK(la.epochs[i].train_loss == lb.epochs[i].train_loss);
      CHECK(la.epochs[i].val_loss == lb.epochs[i].val_loss);
    }
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
    }
  }

  TEST_CASE("logged learning rate follows the cosine schedule") {
    const auto train_set = banded(8, 2, 4, 1), val_set = banded(4, 2, 4, 2);
    CaptureLog log;
    LinearProbe m(4, 2);
    const TrainConfig c = quick(5, 0.02);
    std::vector<double> seen;
    const TrainingLog l = train::train(m, train_set, val_set, c, [&](const EpochRecord& r) { seen.push_back(r.lr); });
    REQUIRE(l.epochs.size() == 5);
    for (std::size_t e = 0; e < 5; ++e) {
      CHECK(l.epochs[e].lr == cosine_lr(e, c));
      CHECK(seen[e] == l.epochs[e].lr);
      CHECK(l.epochs[e].epoch == e);
    }
    CHECK(log.infos.size() == 5);
  }

  TEST_CASE("patience zero stops after the first epoch") {
    const auto train_set = banded(8, 2, 4, 1), val_set = banded(4, 2, 4, 2);
    CaptureLog log;
    LinearProbe m(4, 2);
    TrainConfig c = quick(6, 0.02);
    c.patience = 0;
    const TrainingLog l = train::train(m, train_set, val_set, c);
    CHECK(l.epochs.size() == 1);
    CHECK(l.stopped_early);
  }

  TEST_CASE("the best epoch's weights are restored") {
    const auto train_set = banded(12, 3, 6, 1), val_set = banded(6, 3, 6, 2);
    CaptureLog log;
    LinearProbe m(6, 3);
    // A large rate makes later epochs overshoot so the best is rarely the last.
    TrainConfig c = quick(8, 0.5);
    const TrainingLog l = train::train(m, train_set, val_set, c);
    const EvalResult r = evaluate(m, val_set, c.val_batch);
    CHECK(r.loss == doctest::Approx(l.epochs[l.best_epoch].val_loss).epsilon(1e-12));
    for (const auto& e : l.epochs) CHECK(l.epochs[l.best_epoch].val_loss <= e.val_loss);
  }

  TEST_CASE("loss falls on a separable task") {
    const auto train_set = banded(24, 4, 8, 1), val_set = banded(8, 4, 8, 2);
    CaptureLog log;
    LinearProbe m(8, 4);
    const TrainingLog l = train::train(m, train_set, val_set, quick(10, 0.02));
    CHECK(l.epochs.back().train_loss < 0.5 * l.epochs.front().train_loss);
    CHECK(l.epochs[l.best_epoch].val_macro_f1 == 1.0);
  }

  TEST_CASE("a micro transformer separates two classes") {
    model::AstConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.patch_stride = 4;
    cfg.embed_dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 2;
    cfg.init_std = 0.2;
    model::AstModel net(cfg, 5);
    const auto train_set = banded(32, 2, 8, 1), val_set = banded(16, 2, 8, 2);
    CaptureLog log;
    TrainConfig c = quick(15, 1e-2);
    const TrainingLog l = train::train(net, train_set, val_set, c);
    CHECK(l.epochs.size() <= 15);
    CHECK(evaluate(net, val_set, 2).macro_f1 >= 0.95);
  }

  TEST_CASE("log CSV round trip") {
    TempDir dir("train");
    TrainingLog l;
    for (std::size_t e = 0; e < 3; ++e) {
      EpochRecord r;
      r.epoch = e;
      r.lr = 1e-4 / static_cast<double>(e + 1);
      r.train_loss = 0.5 - 0.1 * static_cast<double>(e);
      r.val_loss = e == 1 ? 0.2 : 0.3;
      r.train_macro_f1 = 0.25;
      r.val_macro_f1 = 0.5;
      r.train_samples_f1 = 0.125;
      r.val_samples_f1 = 0.75;
      r.seconds = 1.5;
      l.epochs.push_back(r);
    }
    write_log_csv(dir / "log.csv", l);
    const TrainingLog back = read_log_csv(dir / "log.csv");
    REQUIRE(back.epochs.size() == 3);
    CHECK(back.best_epoch == 1);
    CHECK(back.total_seconds() == doctest::Approx(4.5));
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(back.epochs[e].lr == doctest::Approx(l.epochs[e].lr).epsilon(1e-9));
      CHECK(back.epochs[e].train_loss == doctest::Approx(l.epochs[e].train_loss).epsilon(1e-9));
      CHECK(back.epochs[e].val_samples_f1 == 0.75);
    }
  }

  TEST_CASE("empty data and divergence are reported") {
    const auto some = banded(4, 2, 4, 1);
    CaptureLog log;
    LinearProbe m(4, 2);
    try {
      train::train(m, {}, some, quick(2, 0.01));
      FAIL("expected DataEmpty");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DataEmpty);
    }
    try {
      train::train(m, some, {}, quick(2, 0.01));
      FAIL("expected DataEmpty");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DataEmpty);
    }
    auto poisoned = some;
    std::vector<double> px(16, 0.5);
    px[3] = std::numeric_limits<double>::infinity();
    poisoned[0].image = Tensor::from_values({4, 4}, px);
    try {
      train::train(m, poisoned, some, quick(2, 0.01));
      FAIL("expected DivergedLoss");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DivergedLoss);
    }
    CHECK_THROWS_AS(train::train(m, some, some, quick(0, 0.01)), Error);
  }
}
