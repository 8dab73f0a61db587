#include <functional>
#include <random>

#include "doctest.h"
#include "mapf/ad/params.hpp"
#include "mapf/ad/tensor.hpp"

using namespace mapf::ad;
using D = double;

namespace {

ArrayX<D> random_array(int64_t n, std::mt19937_64& rng, double lo = -1.0,
                       double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ArrayX<D> a(n);
  for (int64_t i = 0; i < n; ++i) a[i] = dist(rng);
  return a;
}

/// Central-difference check of d(loss)/d(inputs). `build` constructs the
/// forward pass from leaf Vars and must return a scalar loss.
void check_grad(
    const std::vector<std::pair<Shape, ArrayX<D>>>& inputs,
    const std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>& build,
    double h = 1e-5, double tol = 1e-4) {
  // analytic
  Tape<D> tape;
  std::vector<Var<D>> leaves;
  for (const auto& [shape, value] : inputs)
    leaves.push_back(constant(tape, shape, value));
  Var<D> loss = build(tape, leaves);
  REQUIRE(loss.size() == 1);
  tape.backward(loss.node);

  auto eval = [&](const std::vector<ArrayX<D>>& vals) {
    Tape<D> t;
    std::vector<Var<D>> ls;
    for (size_t k = 0; k < inputs.size(); ++k)
      ls.push_back(constant(t, inputs[k].first, vals[k]));
    return build(t, ls).value()[0];
  };

  std::vector<ArrayX<D>> vals;
  for (const auto& [shape, value] : inputs) vals.push_back(value);
  for (size_t k = 0; k < inputs.size(); ++k) {
    const ArrayX<D>& analytic = leaves[k].node->has_grad()
                                    ? leaves[k].node->grad
                                    : ArrayX<D>::Zero(vals[k].size());
    for (int64_t i = 0; i < vals[k].size(); ++i) {
      const double keep = vals[k][i];
      vals[k][i] = keep + h;
      const double up = eval(vals);
      vals[k][i] = keep - h;
      const double dn = eval(vals);
      vals[k][i] = keep;
      const double numeric = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(numeric),
                                     std::abs(double(analytic[i])), 1e-8});
      CHECK(std::abs(numeric - analytic[i]) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("gradients: elementwise ops") {
  std::mt19937_64 rng(1);
  auto a = random_array(6, rng), b = random_array(6, rng);
  // keep leaky_relu inputs away from the kink
  for (int i = 0; i < 6; ++i)
    if (std::abs(a[i]) < 0.05) a[i] = 0.3;

  check_grad({{{6}, a}, {{6}, b}}, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return sum_all(mul(add(v[0], v[1]), sub(v[0], v[1])));
  });
  check_grad({{{6}, a}}, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return sum_all(scale(leaky_relu(v[0], 0.2), 1.7));
  });
  check_grad({{{6}, a}}, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return sum_all(mul(sigmoid(v[0]), tanh(v[0])));
  });
  check_grad({{{6}, a}}, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return mean_all(mul(v[0], v[0]));
  });
}

TEST_CASE("gradients: scalar broadcast") {
  std::mt19937_64 rng(2);
  auto x = random_array(5, rng);
  auto s = random_array(1, rng);
  check_grad({{{5}, x}, {{1}, s}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               return sum_all(mul(add_scalar_tensor(v[0], v[1], -2.0), v[0]));
             });
}

TEST_CASE("gradients: linear and matmul") {
  std::mt19937_64 rng(3);
  auto x1 = random_array(4, rng);
  auto xb = random_array(3 * 4, rng);
  auto w = random_array(4 * 3, rng);
  auto b = random_array(3, rng);
  check_grad({{{4}, x1}, {{4, 3}, w}, {{3}, b}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               return sum_all(mul(linear_b(v[0], v[1], v[2]),
                                  linear_b(v[0], v[1], v[2])));
             });
  check_grad({{{3, 4}, xb}, {{4, 3}, w}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               return sum_all(mul(matmul(v[0], v[1]), matmul(v[0], v[1])));
             });
}

TEST_CASE("gradients: shape ops and softmax") {
  std::mt19937_64 rng(4);
  auto x = random_array(2 * 6, rng);
  check_grad({{{2, 6}, x}}, [](Tape<D>&, const std::vector<Var<D>>& v) {
    Var<D> r0 = row(v[0], 0), r1 = row(v[0], 1);
    Var<D> cat = concat<D>({softmax(r0), r1, reshape(v[0], {12})});
    return sum_all(mul(cat, cat));
  });
  check_grad({{{5}, random_array(5, rng)}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               return select(softmax(v[0]), 2);
             });
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  std::mt19937_64 rng(5);
  Tape<D> tape;
  auto x = random_array(12, rng, -5.0, 5.0);
  Var<D> sm = softmax(constant(tape, {3, 4}, x));
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += sm.value()[r * 4 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gradients: conv2d against finite differences") {
  std::mt19937_64 rng(6);
  auto x = random_array(2 * 3 * 5 * 4, rng);
  auto w = random_array(2 * 3 * 3 * 3, rng);
  auto b = random_array(2, rng);
  check_grad({{{2, 3, 5, 4}, x}, {{2, 3, 3, 3}, w}, {{2}, b}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               Var<D> y = conv2d(v[0], v[1], v[2], 1);
               return sum_all(mul(y, y));
             });
}

TEST_CASE("conv2d values match a naive direct convolution") {
  std::mt19937_64 rng(7);
  const int B = 2, C = 3, H = 5, W = 4, O = 2, K = 3, pad = 1;
  auto x = random_array(B * C * H * W, rng);
  auto w = random_array(O * C * K * K, rng);
  auto b = random_array(O, rng);
  Tape<D> tape;
  Var<D> y = conv2d(constant(tape, {B, C, H, W}, x),
                    constant(tape, {O, C, K, K}, w), constant(tape, {O}, b),
                    pad);
  for (int s = 0; s < B; ++s)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double acc = b[o];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < K; ++ki)
              for (int kj = 0; kj < K; ++kj) {
                const int si = i + ki - pad, sj = j + kj - pad;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                acc += x[((s * C + c) * H + si) * W + sj] *
                       w[((o * C + c) * K + ki) * K + kj];
              }
          CHECK(y.value()[((s * O + o) * H + i) * W + j] ==
                doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gradients: losses") {
  std::mt19937_64 rng(8);
  auto p = random_array(7, rng);
  auto t = random_array(7, rng);
  ArrayX<D> weights = random_array(7, rng, 0.1, 2.0);
  ArrayX<D> target = t;
  check_grad({{{7}, p}},
             [&](Tape<D>&, const std::vector<Var<D>>& v) {
               return weighted_mse(v[0], target, weights);
             });
  // mse backprops into both sides
  check_grad({{{7}, p}, {{7}, t}},
             [](Tape<D>&, const std::vector<Var<D>>& v) {
               return mse(v[0], v[1]);
             });
}

TEST_CASE("gradients: GRU cell") {
  std::mt19937_64 rng(9);
  const int in = 4, d = 3;
  std::vector<std::pair<Shape, ArrayX<D>>> inputs;
  inputs.push_back({{in}, random_array(in, rng)});
  inputs.push_back({{d}, random_array(d, rng)});
  for (int g = 0; g < 3; ++g) {
    inputs.push_back({{in, d}, random_array(in * d, rng)});
    inputs.push_back({{d, d}, random_array(d * d, rng)});
    inputs.push_back({{d}, random_array(d, rng)});
  }
  check_grad(inputs, [](Tape<D>&, const std::vector<Var<D>>& v) {
    GruParams<D> p{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
    Var<D> h = gru_cell(v[0], v[1], p);
    return sum_all(mul(h, h));
  });
}

TEST_CASE("GRU cell matches a hand-rolled forward computation") {
  std::mt19937_64 rng(10);
  const int d = 3;
  auto x = random_array(d, rng), h0 = random_array(d, rng);
  std::vector<ArrayX<D>> ws;
  for (int k = 0; k < 9; ++k)
    ws.push_back(random_array(k % 3 == 2 ? d : d * d, rng));
  Tape<D> tape;
  GruParams<D> p{constant(tape, {d, d}, ws[0]), constant(tape, {d, d}, ws[1]),
                 constant(tape, {d}, ws[2]),    constant(tape, {d, d}, ws[3]),
                 constant(tape, {d, d}, ws[4]), constant(tape, {d}, ws[5]),
                 constant(tape, {d, d}, ws[6]), constant(tape, {d, d}, ws[7]),
                 constant(tape, {d}, ws[8])};
  Var<D> h1 = gru_cell(constant(tape, {d}, x), constant(tape, {d}, h0), p);

  auto mv = [&](const ArrayX<D>& w, const ArrayX<D>& v) {
    ArrayX<D> out = ArrayX<D>::Zero(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out[j] += v[i] * w[i * d + j];
    return out;
  };
  ArrayX<D> z = 1.0 / (1.0 + (-(mv(ws[0], x) + ws[2] + mv(ws[1], h0))).exp());
  ArrayX<D> r = 1.0 / (1.0 + (-(mv(ws[3], x) + ws[5] + mv(ws[4], h0))).exp());
  ArrayX<D> cand = (mv(ws[6], x) + ws[8] + mv(ws[7], ArrayX<D>(r * h0))).tanh();
  ArrayX<D> expect = (1.0 - z) * h0 + z * cand;
  for (int i = 0; i < d; ++i)
    CHECK(h1.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("shape mismatches are rejected with both shapes in the message") {
  Tape<D> tape;
  Var<D> a = constant(tape, {2, 3}, ArrayX<D>(ArrayX<D>::Zero(6)));
  Var<D> b = constant(tape, {3, 3}, ArrayX<D>(ArrayX<D>::Zero(9)));
  CHECK_THROWS_AS(add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeMismatch);
  try {
    matmul(b, a);  // inner dims 3 vs requires b.cols == a.rows: 3 vs 2
    CHECK(false);
  } catch (const ShapeMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3,3]") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("fan-out accumulates gradients additively") {
  Tape<D> tape;
  ArrayX<D> x(1);
  x[0] = 3.0;
  Var<D> v = constant(tape, {1}, x);
  Var<D> loss = sum_all(mul(v, v));  // d/dx x^2 = 2x
  tape.backward(loss.node);
  CHECK(v.node->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("Adam first step matches the closed form") {
  ParameterStore<D> store;
  auto& e = store.add("w", {2});
  e.value[0] = 1.0;
  e.value[1] = -2.0;
  std::map<std::string, ArrayX<D>> grads;
  ArrayX<D> g(2);
  g[0] = 0.5;
  g[1] = -0.25;
  grads["w"] = g;
  AdamConfig cfg;  // lr 1e-3, b1 0.9, b2 0.999, eps 1e-8
  store.apply_gradients(grads, cfg);
  // t=1: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
  for (int i = 0; i < 2; ++i) {
    const double expect =
        (i == 0 ? 1.0 : -2.0) -
        cfg.lr * g[i] / (std::sqrt(g[i] * g[i]) + cfg.eps);
    CHECK(e.value[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(store.step_count() == 1);
}

TEST_CASE("checkpoint round-trip preserves everything, dtype is checked") {
  std::mt19937_64 rng(11);
  ParameterStore<D> store;
  store.add("a.w", {3, 4}).value = random_array(12, rng);
  store.add("a.b", {4}).value = random_array(4, rng);
  const std::string path = "test_ckpt.bin";
  store.save(path);

  ParameterStore<D> loaded;
  loaded.load(path);
  CHECK(loaded.at("a.w").shape == Shape{3, 4});
  CHECK((loaded.at("a.w").value == store.at("a.w").value).all());
  CHECK((loaded.at("a.b").value == store.at("a.b").value).all());

  ParameterStore<float> wrong;
  CHECK_THROWS(wrong.load(path));
  std::remove(path.c_str());
}

TEST_CASE("orthogonal init produces an orthogonal matrix") {
  std::mt19937_64 rng(12);
  const int d = 8;
  ArrayX<D> w(d * d);
  init_orthogonal(w, d, rng);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += w[i * d + k] * w[j * d + k];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
    }
}

TEST_CASE("graph reports disconnected parameters with zero gradients") {
  ParameterStore<D> store;
  store.add("used", {2}).value = ArrayX<D>::Constant(2, 1.5);
  store.add("unused", {3}).value = ArrayX<D>::Constant(3, 0.5);
  Graph<D> g(store);
  Var<D> loss = sum_all(mul(g.param("used"), g.param("used")));
  g.param("unused");  // bound but never reaches the loss
  g.backward(loss);
  std::vector<std::string> disconnected;
  auto grads = g.gradients(&disconnected);
  CHECK(disconnected == std::vector<std::string>{"unused"});
  CHECK((grads.at("unused") == 0.0).all());
  CHECK(grads.at("used")[0] == doctest::Approx(3.0));
}
