// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diffsynth/nn/blocks.hpp"
#include "diffsynth/nn/film.hpp"
#include "diffsynth/nn/lstm.hpp"
#include "diffsynth/nn/ops.hpp"
#include "diffsynth/nn/param_store.hpp"
#include "diffsynth/rng.hpp"
#include "gradcheck.hpp"

using namespace diffsynth;
using diffsynth::testing::gradcheck;

namespace {

Matrix<double> store_matrix(const ParamStore<double>& store, std::size_t h, std::size_t rows,
                            std::size_t cols) {
  Matrix<double> m(rows, cols);
  const auto v = store.value(h);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

double dot(const Matrix<double>& a, const Matrix<double>& b) {
  double l = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) l += a.data[i] * b.data[i];
  return l;
}

}  // namespace

TEST_CASE("conv1d: width-1 identity kernel") {
  ParamStore<double> store;
  Rng init(21);
  Conv1d<double> conv(store, "conv", 1, 1, 1, init);
  store.value(store.find("conv.weight"))[0] = 1.0;
  store.value(store.find("conv.bias"))[0] = 0.0;
  Matrix<double> x(7, 1);
  Rng rng(22);
  rng.fill_uniform<double>(x.data, -1.0, 1.0);
  const auto y = conv.forward(store, x);
  REQUIRE(y.data == x.data);
}

TEST_CASE("conv1d: zero input yields broadcast bias") {
  ParamStore<double> store;
  Rng init(23);
  Conv1d<double> conv(store, "conv", 2, 3, 3, init);
  Matrix<double> x(5, 2);
  const auto y = conv.forward(store, x);
  const auto bias = store.value(store.find("conv.bias"));
  for (std::size_t t = 0; t < y.rows; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(y.at(t, c) == Catch::Approx(bias[c]).margin(1e-15));
}

TEST_CASE("conv1d: shape mismatch rejected") {
  ParamStore<double> store;
  Rng init(24);
  Conv1d<double> conv(store, "conv", 2, 3, 3, init);
  Matrix<double> x(5, 4);
  REQUIRE_THROWS_AS(conv.forward(store, x), std::invalid_argument);
}

TEST_CASE("conv1d: gradients match finite differences") {
  for (const auto& [stride, dilation] :
       std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {2, 1}, {1, 2}}) {
    ParamStore<double> store;
    Rng init(25);
    Conv1d<double> conv(store, "conv", 2, 3, 3, init, stride, dilation);
    const auto h_in = store.add_uniform("test.input", {9, 2}, init, 1.0);
    const std::size_t out_rows = conv.out_len(9);
    Matrix<double> proj(out_rows, 3);
    init.fill_uniform<double>(proj.data, -1.0, 1.0);
    const auto loss = [&] {
      return dot(conv.forward(store, store_matrix(store, h_in, 9, 2)), proj);
    };
    const auto fwd_bwd = [&] {
      conv.forward(store, store_matrix(store, h_in, 9, 2));
      const auto gin = conv.backward(store, proj);
      std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
    };
    const auto res = gradcheck(store, loss, fwd_bwd);
    INFO("stride " << stride << " dilation " << dilation << " worst " << res.worst_entry);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("linear: gradients match finite differences") {
  ParamStore<double> store;
  Rng init(26);
  Linear<double> lin(store, "lin", 3, 2, init);
  const auto h_in = store.add_uniform("test.input", {4, 3}, init, 1.0);
  Matrix<double> proj(4, 2);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto loss = [&] { return dot(lin.forward(store, store_matrix(store, h_in, 4, 3)), proj); };
  const auto fwd_bwd = [&] {
    lin.forward(store, store_matrix(store, h_in, 4, 3));
    const auto gin = lin.backward(store, proj);
    std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
  };
  REQUIRE(gradcheck(store, loss, fwd_bwd).max_rel_err < 1e-4);
}

TEST_CASE("batchnorm: train-mode gradients match finite differences") {
  ParamStore<double> store;
  Rng init(27);
  BatchNorm1d<double> bn(store, "bn", 3);
  // Non-trivial gain/shift so the gradient paths are exercised.
  auto gamma = store.value(store.find("bn.gamma"));
  gamma[0] = 1.3;
  gamma[1] = 0.7;
  gamma[2] = -0.4;
  const auto h_in = store.add_uniform("test.input", {6, 3}, init, 1.0);
  Matrix<double> proj(6, 3);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto loss = [&] {
    return dot(bn.forward(store, store_matrix(store, h_in, 6, 3), Mode::Train), proj);
  };
  const auto fwd_bwd = [&] {
    bn.forward(store, store_matrix(store, h_in, 6, 3), Mode::Train);
    const auto gin = bn.backward(store, proj);
    std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
  };
  REQUIRE(gradcheck(store, loss, fwd_bwd).max_rel_err < 1e-4);
}

TEST_CASE("batchnorm: eval mode uses frozen running statistics") {
  ParamStore<double> store;
  Rng init(28);
  BatchNorm1d<double> bn(store, "bn", 2);
  Matrix<double> x(8, 2);
  init.fill_uniform<double>(x.data, -2.0, 2.0);
  bn.forward(store, x, Mode::Train);
  const auto rm_after = std::vector<double>(store.value(store.find("bn.running_mean")).begin(),
                                            store.value(store.find("bn.running_mean")).end());
  const auto y1 = bn.forward(store, x, Mode::Eval);
  const auto y2 = bn.forward(store, x, Mode::Eval);
  REQUIRE(y1.data == y2.data);  // eval is deterministic and does not update stats
  const auto rm_now = store.value(store.find("bn.running_mean"));
  for (std::size_t c = 0; c < 2; ++c) REQUIRE(rm_now[c] == rm_after[c]);
}

TEST_CASE("dropout: eval identity, train deterministic given seed") {
  Dropout<double> drop;
  drop.rate = 0.4;
  Matrix<double> x(5, 3);
  Rng fill(29);
  fill.fill_uniform<double>(x.data, -1.0, 1.0);
  Rng r_eval(1);
  REQUIRE(drop.forward(x, Mode::Eval, r_eval).data == x.data);
  Rng r1(77), r2(77);
  const auto a = drop.forward(x, Mode::Train, r1);
  const auto b = drop.forward(x, Mode::Train, r2);
  REQUIRE(a.data == b.data);
}

TEST_CASE("lstm: zero parameters give constant zero outputs") {
  ParamStore<double> store;
  Rng init(30);
  BiLstm<double> rnn(store, "rnn", 2, 3, init);
  for (auto& e : store)
    std::fill(e.value.begin(), e.value.end(), 0.0);
  Matrix<double> x(5, 2);
  init.fill_uniform<double>(x.data, -1.0, 1.0);
  Rng rng(31);
  const auto y = rnn.forward(store, x, 0.0, Mode::Eval, rng);
  REQUIRE(y.rows == 5);
  REQUIRE(y.cols == 6);
  for (const double v : y.data) REQUIRE(v == 0.0);
}

TEST_CASE("lstm: zoneout near one freezes the hidden state") {
  ParamStore<double> store;
  Rng init(32);
  BiLstm<double> rnn(store, "rnn", 2, 4, init);
  Matrix<double> x(3, 2);
  init.fill_uniform<double>(x.data, -1.0, 1.0);
  Rng rng(33);
  const auto y = rnn.forward(store, x, 0.999999, Mode::Train, rng);
  // Keep masks hold the initial (zero) state for the whole sequence.
  for (const double v : y.data) REQUIRE(v == 0.0);
}

TEST_CASE("lstm: empty sequence rejected") {
  ParamStore<double> store;
  Rng init(34);
  BiLstm<double> rnn(store, "rnn", 2, 2, init);
  Matrix<double> x(0, 2);
  Rng rng(35);
  REQUIRE_THROWS_AS(rnn.forward(store, x, 0.0, Mode::Train, rng), std::invalid_argument);
}

TEST_CASE("bilstm: gradients match finite differences with fixed zoneout masks") {
  ParamStore<double> store;
  Rng init(36);
  BiLstm<double> rnn(store, "rnn", 3, 2, init);
  const auto h_in = store.add_uniform("test.input", {4, 3}, init, 1.0);
  Matrix<double> proj(4, 4);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto loss = [&] {
    Rng rng(404);  // fixed masks per evaluation
    return dot(rnn.forward(store, store_matrix(store, h_in, 4, 3), 0.3, Mode::Train, rng), proj);
  };
  const auto fwd_bwd = [&] {
    Rng rng(404);
    rnn.forward(store, store_matrix(store, h_in, 4, 3), 0.3, Mode::Train, rng);
    const auto gin = rnn.backward(store, proj);
    std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
  };
  const auto res = gradcheck(store, loss, fwd_bwd);
  INFO(res.worst_entry);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("noise embedding: zero level gives the alternating 0/1 pattern") {
  const auto e = noise_embedding<double>(0.0, 8);
  for (std::size_t k = 0; k < 4; ++k) {
    REQUIRE(e[2 * k] == 0.0);
    REQUIRE(e[2 * k + 1] == 1.0);
  }
  REQUIRE(noise_embedding<double>(0.37, 16) == noise_embedding<double>(0.37, 16));
  REQUIRE_THROWS_AS(noise_embedding<double>(0.5, 7), std::invalid_argument);
}

TEST_CASE("noise embedding: 1000 distinct inputs stay pairwise distinct at dim 64") {
  const std::size_t n = 1000;
  std::vector<std::vector<double>> embs(n);
  for (std::size_t i = 0; i < n; ++i)
    embs[i] = noise_embedding<double>(static_cast<double>(i) / (n - 1), 64);
  double min_gap = 1e300;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double gap = 0.0;
      for (std::size_t k = 0; k < 64; ++k)
        gap = std::max(gap, std::abs(embs[i][k] - embs[j][k]));
      min_gap = std::min(min_gap, gap);
    }
  REQUIRE(min_gap > 0.0);
}

TEST_CASE("film modulate: identity and pure-shift cases") {
  Matrix<double> act(4, 2);
  Rng rng(37);
  rng.fill_uniform<double>(act.data, -1.0, 1.0);
  FilmSignal<double> s;
  s.scale = Matrix<double>(4, 2);
  s.shift = Matrix<double>(4, 2);
  s.scale.fill(1.0);
  REQUIRE(film_modulate(act, s).data == act.data);
  s.scale.fill(0.0);
  rng.fill_uniform<double>(s.shift.data, -1.0, 1.0);
  REQUIRE(film_modulate(act, s).data == s.shift.data);
  FilmSignal<double> bad;
  bad.scale = Matrix<double>(3, 2);
  bad.shift = Matrix<double>(3, 2);
  REQUIRE_THROWS_AS(film_modulate(act, bad), std::invalid_argument);
}

TEST_CASE("film generator + modulation: gradients match finite differences") {
  ParamStore<double> store;
  Rng init(38);
  FilmGenerator<double> gen(store, "film", 3, 2, 4, init);
  const auto h_feat = store.add_uniform("test.features", {5, 3}, init, 1.0);
  const auto h_act = store.add_uniform("test.activation", {5, 2}, init, 1.0);
  Matrix<double> proj(5, 2);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto emb = noise_embedding<double>(0.42, 4);
  const auto loss = [&] {
    const auto sig = gen.forward(store, store_matrix(store, h_feat, 5, 3), emb);
    return dot(film_modulate(store_matrix(store, h_act, 5, 2), sig), proj);
  };
  const auto fwd_bwd = [&] {
    const auto sig = gen.forward(store, store_matrix(store, h_feat, 5, 3), emb);
    const Matrix<double> act = store_matrix(store, h_act, 5, 2);
    film_modulate(act, sig);
    Matrix<double> gact(5, 2);
    FilmSignal<double> gsig;
    gsig.scale = Matrix<double>(5, 2);
    gsig.shift = Matrix<double>(5, 2);
    film_modulate_backward(act, sig, proj, gact, gsig);
    const auto gfeat = gen.backward(store, gsig);
    std::copy(gact.data.begin(), gact.data.end(), store.grad(h_act).begin());
    std::copy(gfeat.data.begin(), gfeat.data.end(), store.grad(h_feat).begin());
  };
  const auto res = gradcheck(store, loss, fwd_bwd);
  INFO(res.worst_entry);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("upblock: length contract at factor 5") {
  ParamStore<double> store;
  Rng init(39);
  UpBlock<double> ub(store, "ub", 3, 2, 5, init);
  FilmGenerator<double> gen(store, "film", 2, 2, 4, init);
  Matrix<double> x(16, 3);
  init.fill_uniform<double>(x.data, -1.0, 1.0);
  Matrix<double> feat(80, 2);
  init.fill_uniform<double>(feat.data, -1.0, 1.0);
  const auto sig = gen.forward(store, feat, noise_embedding<double>(0.5, 4));
  const auto y = ub.forward(store, x, &sig);
  REQUIRE(y.rows == 80);
  REQUIRE(y.cols == 2);
}

TEST_CASE("dblock: length contract at factor 5 and odd-length ceil") {
  ParamStore<double> store;
  Rng init(40);
  DownBlock<double> db(store, "db", 2, 3, 5, init);
  Matrix<double> x(80, 2);
  init.fill_uniform<double>(x.data, -1.0, 1.0);
  REQUIRE(db.forward(store, x).rows == 16);
  DownBlock<double> db2(store, "db2", 2, 3, 2, init);
  Matrix<double> odd(7, 2);
  init.fill_uniform<double>(odd.data, -1.0, 1.0);
  REQUIRE(db2.forward(store, odd).rows == 4);  // ceil(7 / 2)
}

TEST_CASE("upblock: full gradient check on a tiny instance") {
  ParamStore<double> store;
  Rng init(41);
  UpBlock<double> ub(store, "ub", 4, 4, 2, init);
  FilmGenerator<double> gen(store, "film", 3, 4, 4, init);
  const auto h_in = store.add_uniform("test.input", {3, 4}, init, 1.0);
  const auto h_feat = store.add_uniform("test.feat", {6, 3}, init, 1.0);
  Matrix<double> proj(6, 4);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto emb = noise_embedding<double>(0.73, 4);
  const auto loss = [&] {
    const auto sig = gen.forward(store, store_matrix(store, h_feat, 6, 3), emb);
    return dot(ub.forward(store, store_matrix(store, h_in, 3, 4), &sig), proj);
  };
  const auto fwd_bwd = [&] {
    const auto sig = gen.forward(store, store_matrix(store, h_feat, 6, 3), emb);
    ub.forward(store, store_matrix(store, h_in, 3, 4), &sig);
    FilmSignal<double> gsig;
    const auto gin = ub.backward(store, proj, &gsig);
    const auto gfeat = gen.backward(store, gsig);
    std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
    std::copy(gfeat.data.begin(), gfeat.data.end(), store.grad(h_feat).begin());
  };
  const auto res = gradcheck(store, loss, fwd_bwd);
  INFO(res.worst_entry);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("dblock: full gradient check on a tiny instance") {
  ParamStore<double> store;
  Rng init(42);
  DownBlock<double> db(store, "db", 3, 4, 2, init);
  const auto h_in = store.add_uniform("test.input", {8, 3}, init, 1.0);
  Matrix<double> proj(4, 4);
  init.fill_uniform<double>(proj.data, -1.0, 1.0);
  const auto loss = [&] { return dot(db.forward(store, store_matrix(store, h_in, 8, 3)), proj); };
  const auto fwd_bwd = [&] {
    db.forward(store, store_matrix(store, h_in, 8, 3));
    const auto gin = db.backward(store, proj);
    std::copy(gin.data.begin(), gin.data.end(), store.grad(h_in).begin());
  };
  const auto res = gradcheck(store, loss, fwd_bwd);
  INFO(res.worst_entry);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("embedding: lookup, unknown id, gradient scatter") {
  ParamStore<double> store;
  Rng init(43);
  Embedding<double> emb(store, "emb", 5, 3, init);
  const std::vector<int> ids{1, 4, 1};
  const auto out = emb.forward(store, ids);
  REQUIRE(out.rows == 3);
  const auto table = store.value(store.find("emb.table"));
  for (std::size_t c = 0; c < 3; ++c) {
    REQUIRE(out.at(0, c) == table[1 * 3 + c]);
    REQUIRE(out.at(1, c) == table[4 * 3 + c]);
  }
  REQUIRE_THROWS_AS(emb.forward(store, std::vector<int>{5}), std::invalid_argument);
  Matrix<double> g(3, 3);
  g.fill(1.0);
  emb.backward(store, g);
  const auto grad = store.grad(store.find("emb.table"));
  REQUIRE(grad[1 * 3 + 0] == 2.0);  // token 1 appears twice
  REQUIRE(grad[4 * 3 + 0] == 1.0);
  REQUIRE(grad[0] == 0.0);
}

TEST_CASE("upsample nearest: forward/backward adjoint pair") {
  Matrix<double> x(3, 2);
  Rng rng(44);
  rng.fill_uniform<double>(x.data, -1.0, 1.0);
  const auto y = upsample_nearest(x, 4);
  REQUIRE(y.rows == 12);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t c = 0; c < 2; ++c) REQUIRE(y.at(t, c) == x.at(t / 4, c));
  Matrix<double> g(12, 2);
  rng.fill_uniform<double>(g.data, -1.0, 1.0);
  const auto gx = upsample_nearest_backward(g, 4);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 4; ++j) acc += g.at(t * 4 + j, c);
      REQUIRE(gx.at(t, c) == Catch::Approx(acc).margin(1e-15));
    }
}
