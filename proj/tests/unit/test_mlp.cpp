#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bmax/mlp.hpp"
#include "support/oracles.hpp"

using namespace bmax;

namespace {

MlpParams random_net(const std::vector<int>& widths, const std::vector<Act>& acts,
                     std::uint64_t seed) {
  RngStream rng(seed);
  return MlpParams::random_init(widths, acts, rng);
}

}  // namespace

TEST_CASE("flat index space is layer by layer, weights row-major then bias") {
  MlpParams p = MlpParams::zeros({2, 3, 1}, {Act::Tanh, Act::Identity});
  CHECK(p.param_count() == 2 * 3 + 3 + 3 + 1);
  // weight (layer 0, out 1, in 0) sits at flat index 1*2 + 0 = 2
  p.add_flat(2, 5.0);
  CHECK(p.weights[0](1, 0) == 5.0);
  // layer-0 bias block starts at 6
  p.add_flat(6, 3.0);
  CHECK(p.biases[0][0] == 3.0);
  // layer-1 weights start at 9
  p.add_flat(9, 2.0);
  CHECK(p.weights[1](0, 0) == 2.0);
  const FlatIndex f = decompose_flat_index(p, 11);
  CHECK(f.layer == 1);
  CHECK(f.bias == false);
  CHECK(f.in == 2);

  Vector flat = p.flatten();
  MlpParams q = MlpParams::zeros(p.widths, p.acts);
  q.set_flat(flat);
  CHECK(q.flatten() == flat);
}

TEST_CASE("zero parameters map any input to zero") {
  MlpParams p = MlpParams::zeros({3, 4, 2}, {Act::Tanh, Act::Identity});
  Matrix x(5, 3);
  for (int i = 0; i < 15; ++i) x.data()[i] = i * 0.37 - 1.0;
  const Matrix y = mlp_apply(p, x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("single linear layer computes x W^T + b") {
  MlpParams p = MlpParams::zeros({2, 2}, {Act::Identity});
  p.weights[0] = Matrix::from_rows({{1.0, 2.0}, {-3.0, 0.5}});
  p.biases[0] = {0.25, -1.0};
  const Matrix y = mlp_apply(p, Matrix::from_rows({{1.0, 1.0}}));
  CHECK(y(0, 0) == doctest::Approx(3.25));
  CHECK(y(0, 1) == doctest::Approx(-3.5));
}

TEST_CASE("batch rows are processed independently") {
  const MlpParams p = random_net({3, 8, 8, 2}, {Act::Tanh, Act::Relu, Act::Identity}, 3);
  RngStream rng(4);
  Matrix x(6, 3);
  for (double& v : x.data()) v = rng.normal();
  const Matrix batch = mlp_apply(p, x);
  for (int r = 0; r < 6; ++r) {
    const Matrix single = mlp_apply(p, Matrix::row_vector(x.row_copy(r)));
    for (int c = 0; c < 2; ++c) CHECK(batch(r, c) == single(0, c));
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradient") {
  const MlpParams p = random_net({2, 4, 2}, {Act::Tanh, Act::Identity}, 5);
  const Matrix x = Matrix::from_rows({{0.3, -0.7}});
  const Vector g = mlp_grads(p, x, Matrix(1, 2));
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("single linear layer weight gradient is upstream^T x") {
  MlpParams p = MlpParams::zeros({3, 2}, {Act::Identity});
  const Matrix x = Matrix::from_rows({{1.0, 2.0, 3.0}, {-1.0, 0.0, 1.0}});
  const Matrix up = Matrix::from_rows({{1.0, 0.5}, {2.0, -1.0}});
  const Vector g = mlp_grads(p, x, up);
  const Matrix expected = matmul_tn(up, x);  // (out x in)
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i) CHECK(g[o * 3 + i] == doctest::Approx(expected(o, i)));
  // bias gradient = column sums of upstream
  CHECK(g[6] == doctest::Approx(3.0));
  CHECK(g[7] == doctest::Approx(-0.5));
}

TEST_CASE("relu gradient is exact on an analytic case") {
  MlpParams p = MlpParams::zeros({1, 1}, {Act::Relu});
  p.weights[0](0, 0) = 2.0;
  const Matrix x_pos = Matrix::from_rows({{1.5}});
  const Matrix up = Matrix::from_rows({{1.0}});
  CHECK(mlp_grads(p, x_pos, up)[0] == doctest::Approx(1.5));  // active unit
  const Matrix x_neg = Matrix::from_rows({{-1.5}});
  CHECK(mlp_grads(p, x_neg, up)[0] == 0.0);  // inactive unit
}

TEST_CASE("reverse-mode gradients match central finite differences") {
  RngStream rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    RngStream t = rng.child(trial);
    const int in = 1 + t.uniform_int(4);
    const int h1 = 2 + t.uniform_int(6);
    const int h2 = 2 + t.uniform_int(6);
    const int out = 1 + t.uniform_int(3);
    MlpParams p = random_net({in, h1, h2, out}, {Act::Tanh, Act::Tanh, Act::Identity},
                             t.next_u64());
    Matrix x(2, in), up(2, out);
    for (double& v : x.data()) v = t.normal();
    for (double& v : up.data()) v = t.normal();

    const Vector g = mlp_grads(p, x, up);
    const Vector theta = p.flatten();
    auto objective = [&](const Vector& flat) {
      MlpParams q = p;
      q.set_flat(flat);
      const Matrix y = mlp_apply(q, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += y.data()[i] * up.data()[i];
      return acc;
    };
    const Vector fd = oracle::fd_gradient(objective, theta);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      max_rel = std::max(max_rel, std::abs(g[i] - fd[i]) / std::max(1e-6, std::abs(fd[i])));
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("dropout masks scale the designated layer and join the backward pass") {
  MlpParams p = MlpParams::zeros({1, 2, 1}, {Act::Identity, Act::Identity});
  p.weights[0](0, 0) = 1.0;
  p.weights[0](1, 0) = 1.0;
  p.weights[1](0, 0) = 1.0;
  p.weights[1](0, 1) = 1.0;
  DropoutMask mask{0, {2.0, 0.0}};
  const Matrix y = mlp_apply(p, Matrix::from_rows({{1.0}}), &mask);
  CHECK(y(0, 0) == doctest::Approx(2.0));  // unit 0 doubled, unit 1 dropped

  const Vector g = mlp_grads(p, Matrix::from_rows({{1.0}}), Matrix::from_rows({{1.0}}), &mask);
  CHECK(g[0] == doctest::Approx(2.0));  // through the kept, rescaled unit
  CHECK(g[1] == 0.0);                   // through the dropped unit

  DropoutMask bad{0, {1.0, 1.0, 1.0}};
  CHECK_THROWS_AS(mlp_apply(p, Matrix::from_rows({{1.0}}), &bad), ShapeError);
}

TEST_CASE("checkpoint round-trips parameters exactly") {
  const MlpParams p = random_net({3, 6, 4}, {Act::Relu, Act::Identity}, 99);
  const std::string path = std::filesystem::temp_directory_path() / "bmax_mlp_ck.bin";
  save_checkpoint(path, p, R"({"note": 1.5})");
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params.widths == p.widths);
  CHECK(ck.params.flatten() == p.flatten());  // byte-exact
  CHECK(ck.extra_json.find("note") != std::string::npos);
  std::filesystem::remove(path);
}
