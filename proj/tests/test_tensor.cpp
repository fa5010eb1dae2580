#include "doctest.h"

#include <cmath>
#include <cstdint>

#include "oracles.hpp"
#include "spikewright/autodiff.hpp"
#include "spikewright/error.hpp"
#include "spikewright/layers.hpp"
#include "spikewright/tensor.hpp"

using namespace spikewright;

TEST_CASE("tensor length always equals the product of its shape") {
  Tensor t({2, 3, 4}, 1.5f);
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.at({1, 2, 3}) == 1.5f);
  Tensor r = t.reshaped({6, 4});
  CHECK(r.numel() == 24);
  CHECK(r.shape() == Shape{6, 4});
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS(t.at({2, 0, 0}));
}

TEST_CASE("storage is 64-byte aligned whatever the size") {
  for (std::size_t n : {1, 3, 17, 1000}) {
    Tensor t({n});
    CHECK(reinterpret_cast<std::uintptr_t>(t.raw()) % 64 == 0);
  }
}

TEST_CASE("row-major layout") {
  Tensor t({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
  CHECK(t.at({1, 0}) == 3.0f);
  CHECK(t.at({0, 2}) == 2.0f);
  CHECK(sum(t) == 15.0f);
}

TEST_CASE("tape records in forward order and zeroes gradients before each backward") {
  ad::Tape tape;
  ad::Variable x(Tensor({1, 3}, std::vector<float>{-1, 0, 2}), true);
  ad::Variable w(Tensor({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}), true);
  ad::Variable b(Tensor({2}, 0.0f), true);
  ad::Variable y = nn::linear(tape, x, w, b);
  ad::Variable z = nn::relu(tape, y);
  ad::Variable loss = nn::mse_loss(tape, z, Tensor({1, 2}, 0.0f));
  REQUIRE(tape.nodes().size() == 3);
  CHECK(tape.nodes()[0].op == "linear");
  CHECK(tape.nodes()[1].op == "relu");
  CHECK(tape.nodes()[2].op == "mse_loss");

  tape.backward(loss);
  const Tensor first = w.grad();
  tape.backward(loss);  // a second pass must not double the gradients
  CHECK(w.grad() == first);
}

TEST_CASE("non-recording tape keeps no nodes") {
  ad::Tape tape(false);
  ad::Variable x(Tensor({2, 2}, 1.0f), true);
  ad::Variable y = nn::relu(tape, x);
  CHECK(tape.nodes().empty());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("backward needs a scalar loss") {
  ad::Tape tape;
  ad::Variable x(Tensor({2}, 1.0f), true);
  CHECK_THROWS_AS(tape.backward(nn::relu(tape, x)), ShapeError);
}

TEST_CASE("gradient descent lowers the loss of a fixed regression problem") {
  Rng rng(5);
  const Tensor x = oracle::random_tensor({16, 4}, rng);
  const Tensor w_true = oracle::random_tensor({1, 4}, rng);
  const Tensor target = nn::linear(x, w_true, Tensor({1}, 0.3f));
  ad::Variable w(Tensor({1, 4}, 0.0f), true), b(Tensor({1}, 0.0f), true);
  float previous = 1e30f;
  for (int step = 0; step < 50; ++step) {
    ad::Tape tape;
    ad::Variable loss = nn::mse_loss(tape, nn::linear(tape, ad::Variable(x), w, b), target);
    CHECK(loss.value()[0] <= previous);
    previous = loss.value()[0];
    tape.backward(loss);
    for (auto* v : {&w, &b}) {
      Tensor& p = v->mutable_value();
      for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= 0.1f * v->grad()[i];
    }
  }
  CHECK(previous < 1e-2f);
}

TEST_CASE("operations keep finite inputs finite") {
  Rng rng(9);
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng, -50, 50);
  nn::BatchNormStats stats(3);
  CHECK(all_finite(nn::batchnorm2d(x, Tensor({3}, 1.0f), Tensor({3}, 0.0f), nn::Mode::kTrain, stats)));
  CHECK(all_finite(nn::softmax(oracle::random_tensor({3, 2}, rng, -500, 500))));
  CHECK(std::isfinite(nn::bce_loss(Tensor({1, 2}, std::vector<float>{0.0f, 1.0f}),
                                   Tensor({1, 2}, std::vector<float>{1.0f, 0.0f}))));
}
