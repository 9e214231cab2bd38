#include <doctest.h>

#include <cmath>
#include <vector>

#include "latgeo/attention.hpp"
#include "latgeo/error.hpp"
#include "latgeo/rng.hpp"
#include "testutil.hpp"

using namespace latgeo;
using namespace latgeo::testutil;

namespace {

// Scalar reference: per head and query, weight(b) proportional to
// g(b) * exp(score(b)) with g = 1 on memory rows, then the weighted value
// sum, heads concatenated and projected. Written as plain loops so it shares
// nothing with the graph implementation.
Matrix oracle_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                        const Matrix& wq, const Matrix& wk, const Matrix& wv,
                        const Matrix& wo, int heads,
                        const std::vector<Matrix>* bias, const Matrix* mem_k,
                        const Matrix* mem_v) {
  Matrix qp = q * wq;
  Matrix kp = k * wk;
  Matrix vp = v * wv;
  const Eigen::Index n_real = kp.rows();
  if (mem_k != nullptr) {
    Matrix kk(kp.rows() + mem_k->rows(), kp.cols());
    kk << kp, *mem_k;
    kp = kk;
    Matrix vv(vp.rows() + mem_v->rows(), vp.cols());
    vv << vp, *mem_v;
    vp = vv;
  }
  const Eigen::Index d_model = wq.cols();
  const Eigen::Index d_k = d_model / heads;
  Matrix concat(qp.rows(), d_model);
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index a = 0; a < qp.rows(); ++a) {
      std::vector<double> numer(kp.rows());
      double denom = 0.0;
      for (Eigen::Index b = 0; b < kp.rows(); ++b) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < d_k; ++c) {
          s += qp(a, h * d_k + c) * kp(b, h * d_k + c);
        }
        s /= std::sqrt(static_cast<double>(d_k));
        double g = 1.0;
        if (bias != nullptr && b < n_real) {
          g = std::max((*bias)[h](a, b), kKeyBiasFloor);
        }
        numer[b] = g * std::exp(s);
        denom += numer[b];
      }
      for (Eigen::Index c = 0; c < d_k; ++c) {
        double acc = 0.0;
        for (Eigen::Index b = 0; b < kp.rows(); ++b) {
          acc += numer[b] / denom * vp(b, h * d_k + c);
        }
        concat(a, h * d_k + c) = acc;
      }
    }
  }
  return concat * wo;
}

AttnParams params_from(ParamStore& store, std::mt19937_64& rng, int d) {
  AttnParams p;
  p.wq = store.create_glorot("wq", d, d, rng);
  p.wk = store.create_glorot("wk", d, d, rng);
  p.wv = store.create_glorot("wv", d, d, rng);
  p.wo = store.create_glorot("wo", d, d, rng);
  return p;
}

}  // namespace

TEST_CASE("attention: matches the per-pair oracle with bias and memory") {
  const int n = 5, m = 3, heads = 2, d = 8;
  auto rng = make_stream(99, "attn-oracle");
  ParamStore store;
  AttnParams p = params_from(store, rng, d);
  Tensor q = constant(rmat(rng, n, d));
  Tensor k = constant(rmat(rng, n, d));
  Tensor v = constant(rmat(rng, n, d));
  Tensor mk = store.create_glorot("mk", m, d, rng);
  Tensor mv = store.create_glorot("mv", m, d, rng);
  std::vector<Tensor> bias;
  std::vector<Matrix> bias_vals;
  for (int h = 0; h < heads; ++h) {
    Matrix b = (rmat(rng, n, n).array().abs() + 0.05).matrix();
    bias_vals.push_back(b);
    bias.push_back(constant(b));
  }
  AttnOptions opt;
  opt.key_bias = &bias;
  opt.mem_k = &mk;
  opt.mem_v = &mv;
  AttnTrace trace;
  opt.trace = &trace;
  opt.trace_name = "t";
  Tensor out = multi_head_attention(q, k, v, p, heads, opt);

  Matrix want = oracle_attention(q.value(), k.value(), v.value(), p.wq.value(),
                                 p.wk.value(), p.wv.value(), p.wo.value(),
                                 heads, &bias_vals, &mk.value(), &mv.value());
  REQUIRE(out.rows() == n);
  REQUIRE(out.cols() == d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      CHECK(rel_err(out.value()(i, j), want(i, j)) < 1e-6);
    }
  }

  // Each traced distribution covers n + m keys and sums to 1 per query.
  REQUIRE(trace.entries.size() == 2);
  for (const auto& e : trace.entries) {
    REQUIRE(e.values.rows() == n);
    REQUIRE(e.values.cols() == n + m);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(std::abs(e.values.row(i).sum() - 1.0) < 1e-10);
      for (Eigen::Index j = 0; j < n + m; ++j) CHECK(e.values(i, j) >= 0.0);
    }
  }
}

TEST_CASE("attention: all-ones bias and empty memory reproduce the plain path bit for bit") {
  const int n = 4, heads = 2, d = 8;
  auto rng = make_stream(7, "attn-reduce");
  ParamStore store;
  AttnParams p = params_from(store, rng, d);
  Tensor q = constant(rmat(rng, n, d));
  Tensor k = constant(rmat(rng, n, d));
  Tensor v = constant(rmat(rng, n, d));

  Tensor plain = multi_head_attention(q, k, v, p, heads);

  std::vector<Tensor> ones_bias;
  for (int h = 0; h < heads; ++h) ones_bias.push_back(constant(Matrix::Ones(n, n)));
  AttnOptions with_bias;
  with_bias.key_bias = &ones_bias;
  Tensor biased = multi_head_attention(q, k, v, p, heads, with_bias);
  CHECK(biased.value() == plain.value());

  Tensor empty_k = constant(Matrix(0, d));
  Tensor empty_v = constant(Matrix(0, d));
  AttnOptions with_empty;
  with_empty.mem_k = &empty_k;
  with_empty.mem_v = &empty_v;
  Tensor no_mem = multi_head_attention(q, k, v, p, heads, with_empty);
  CHECK(no_mem.value() == plain.value());
}

TEST_CASE("attention: a causal mask zeroes future keys exactly") {
  const int n = 5, heads = 2, d = 8;
  auto rng = make_stream(13, "attn-mask");
  ParamStore store;
  AttnParams p = params_from(store, rng, d);
  Tensor x = constant(rmat(rng, n, d));
  BoolArray causal(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) causal(i, j) = j <= i;
  }
  AttnOptions opt;
  opt.mask = &causal;
  AttnTrace trace;
  opt.trace = &trace;
  opt.trace_name = "m";
  multi_head_attention(x, x, x, p, heads, opt);
  for (const auto& e : trace.entries) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) CHECK(e.values(i, j) == 0.0);
      CHECK(std::abs(e.values.row(i).sum() - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("attention: gradients flow through bias, memory, and projections") {
  const int n = 3, m = 2, heads = 2, d = 8;
  auto rng = make_stream(21, "attn-fd");
  ParamStore store;
  AttnParams p = params_from(store, rng, d);
  Tensor q = store.create("q", rmat_away(rng, n, d));
  Tensor mk = store.create("mk", rmat_away(rng, m, d));
  Tensor mv = store.create("mv", rmat_away(rng, m, d));
  std::vector<Tensor> bias_params;
  for (int h = 0; h < heads; ++h) {
    bias_params.push_back(store.create("bias" + std::to_string(h),
                                       (rmat(rng, n, n).array().abs() + 0.4).matrix()));
  }
  Matrix probe = rmat(rng, n, d);
  auto build = [&]() {
    AttnOptions opt;
    opt.key_bias = &bias_params;
    opt.mem_k = &mk;
    opt.mem_v = &mv;
    Tensor out = multi_head_attention(q, q, q, p, heads, opt);
    return sum_all(mul(out, constant(probe)));
  };
  std::vector<Tensor> leaves = {q,    mk,   mv,   p.wq, p.wk,
                                p.wv, p.wo, bias_params[0], bias_params[1]};
  CHECK(fd_check(build, leaves) < 1e-4);
}

TEST_CASE("attention: shape and pairing contracts") {
  const int d = 8;
  auto rng = make_stream(31, "attn-err");
  ParamStore store;
  AttnParams p = params_from(store, rng, d);
  Tensor x = constant(rmat(rng, 3, d));
  CHECK_THROWS_AS(multi_head_attention(x, x, x, p, 3), ConfigError);

  Tensor mk = constant(rmat(rng, 2, d));
  AttnOptions half;
  half.mem_k = &mk;
  CHECK_THROWS_AS(multi_head_attention(x, x, x, p, 2, half), ContractError);

  std::vector<Tensor> bad_bias = {constant(Matrix::Ones(2, 2))};
  AttnOptions opt;
  opt.key_bias = &bad_bias;
  CHECK_THROWS_AS(multi_head_attention(x, x, x, p, 2, opt), DimensionError);
}
