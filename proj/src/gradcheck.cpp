#include "latgeo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>

#include "latgeo/model.hpp"
#include "latgeo/rng.hpp"
#include "latgeo/synth.hpp"
#include "latgeo/tensor.hpp"
#include "latgeo/training.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

namespace {

Matrix draw(std::mt19937_64& g, Eigen::Index r, Eigen::Index c, double lo,
            double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform(g, lo, hi);
  }
  return m;
}

// Like draw, but keeps every entry at least `margin` away from `edge` so a
// finite-difference probe cannot cross a kink (relu, clamp).
Matrix draw_away(std::mt19937_64& g, Eigen::Index r, Eigen::Index c,
                 double edge, double margin) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const double mag = uniform(g, margin, 1.0);
      m(i, j) = edge + (uniform01(g) < 0.5 ? -mag : mag);
    }
  }
  return m;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences over every entry of every leaf; `build` must
// reconstruct the whole graph from the leaves' current values.
double probe(const std::function<Tensor()>& build,
             const std::vector<Tensor>& leaves, double h = 1e-5) {
  for (const Tensor& leaf : leaves) leaf.zero_grad();
  Tensor loss = build();
  backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Matrix& v = leaves[li].mutable_value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const double keep = v(r, c);
        v(r, c) = keep + h;
        const double up = build().scalar();
        v(r, c) = keep - h;
        const double dn = build().scalar();
        v(r, c) = keep;
        const double fd = (up - dn) / (2.0 * h);
        worst = std::max(worst, relative_error(analytic[li](r, c), fd));
      }
    }
    leaves[li].zero_grad();
  }
  return worst;
}

// One seeded case of a single-op check; returns the worst relative error.
using OpCase = std::function<double(std::mt19937_64&)>;

std::vector<std::pair<std::string, OpCase>> op_cases() {
  std::vector<std::pair<std::string, OpCase>> ops;
  auto push = [&](std::string name, OpCase f) {
    ops.emplace_back(std::move(name), std::move(f));
  };

  push("matmul", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 4, -1, 1));
    Tensor b = parameter(draw(g, 4, 2, -1, 1));
    return probe([&] { return sum_all(matmul(a, b)); }, {a, b});
  });
  push("transpose", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 4, -1, 1));
    Tensor b = parameter(draw(g, 3, 2, -1, 1));
    return probe([&] { return sum_all(matmul(transpose(a), b)); }, {a, b});
  });
  push("add", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 3, -1, 1));
    Tensor b = parameter(draw(g, 3, 3, -1, 1));
    return probe([&] { return sum_all(sigmoid(add(a, b))); }, {a, b});
  });
  push("sub", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 3, -1, 1));
    Tensor b = parameter(draw(g, 3, 3, -1, 1));
    return probe([&] { return sum_all(sigmoid(sub(a, b))); }, {a, b});
  });
  push("mul", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 4, -1, 1));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    return probe([&] { return sum_all(mul(a, b)); }, {a, b});
  });
  push("scale", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 2, 5, -1, 1));
    return probe([&] { return sum_all(sigmoid(scale(a, 1.7))); }, {a});
  });
  push("relu", [](std::mt19937_64& g) {
    Tensor a = parameter(draw_away(g, 3, 4, 0.0, 0.2));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    return probe([&] { return sum_all(mul(relu(a), b)); }, {a, b});
  });
  push("sigmoid", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 4, 3, -2, 2));
    return probe([&] { return sum_all(sigmoid(a)); }, {a});
  });
  push("ln", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 3, 0.3, 2.5));
    return probe([&] { return sum_all(ln(a)); }, {a});
  });
  push("clamp_min", [](std::mt19937_64& g) {
    Tensor a = parameter(draw_away(g, 3, 4, 0.5, 0.2));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    return probe([&] { return sum_all(mul(clamp_min(a, 0.5), b)); }, {a, b});
  });
  push("softmax_rows", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 5, -2, 2));
    Tensor b = parameter(draw(g, 3, 5, -1, 1));
    return probe([&] { return sum_all(mul(softmax_rows(a), b)); }, {a, b});
  });
  push("softmax_rows_masked", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 5, -2, 2));
    Tensor b = parameter(draw(g, 3, 5, -1, 1));
    BoolArray mask(3, 5);
    mask.setConstant(true);
    mask(0, 1) = false;
    mask(1, 4) = false;
    mask(2, 0) = false;
    mask(2, 3) = false;
    return probe([&] { return sum_all(mul(softmax_rows(a, &mask), b)); },
                 {a, b});
  });
  push("log_softmax_rows_masked", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 4, 5, -2, 2));
    BoolArray mask(4, 5);
    mask.setConstant(true);
    mask.col(0).setConstant(false);
    const std::vector<int> ids{2, 1, 4, 3};  // only unmasked columns
    return probe(
        [&] { return sum_all(take_per_row(log_softmax_rows(a, &mask), ids)); },
        {a});
  });
  push("layer_norm", [](std::mt19937_64& g) {
    Tensor x = parameter(draw(g, 3, 5, -1, 1));
    Tensor gain = parameter(draw(g, 1, 5, 0.5, 1.5));
    Tensor bias = parameter(draw(g, 1, 5, -0.5, 0.5));
    Tensor c = parameter(draw(g, 3, 5, -1, 1));
    return probe([&] { return sum_all(mul(layer_norm(x, gain, bias), c)); },
                 {x, gain, bias, c});
  });
  push("embed_lookup", [](std::mt19937_64& g) {
    Tensor table = parameter(draw(g, 6, 4, -1, 1));
    const std::vector<int> ids{2, 0, 5, 2};  // repeat: gradients accumulate
    return probe([&] { return sum_all(sigmoid(embed_lookup(table, ids))); },
                 {table});
  });
  push("broadcast_rows", [](std::mt19937_64& g) {
    Tensor row = parameter(draw(g, 1, 4, -1, 1));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    return probe([&] { return sum_all(mul(broadcast_rows(row, 3), b)); },
                 {row, b});
  });
  push("concat_rows", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 2, 3, -1, 1));
    Tensor b = parameter(draw(g, 1, 3, -1, 1));
    return probe([&] { return sum_all(sigmoid(concat_rows({a, b}))); },
                 {a, b});
  });
  push("concat_cols", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 2, 2, -1, 1));
    Tensor b = parameter(draw(g, 2, 3, -1, 1));
    return probe([&] { return sum_all(sigmoid(concat_cols({a, b}))); },
                 {a, b});
  });
  push("slice_rows", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 4, 3, -1, 1));
    Tensor b = parameter(draw(g, 2, 3, -1, 1));
    return probe([&] { return sum_all(mul(slice_rows(a, 1, 2), b)); }, {a, b});
  });
  push("slice_cols", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 5, -1, 1));
    Tensor b = parameter(draw(g, 3, 2, -1, 1));
    return probe([&] { return sum_all(mul(slice_cols(a, 2, 2), b)); }, {a, b});
  });
  push("reshape", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 2, 6, -1, 1));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    return probe([&] { return sum_all(mul(reshape(a, 3, 4), b)); }, {a, b});
  });
  push("take_per_row", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 4, 5, -1, 1));
    Tensor b = parameter(draw(g, 4, 1, -1, 1));
    const std::vector<int> ids{3, 0, 4, 2};
    return probe([&] { return sum_all(mul(take_per_row(a, ids), b)); },
                 {a, b});
  });
  push("dropout", [](std::mt19937_64& g) {
    Tensor a = parameter(draw(g, 3, 4, -1, 1));
    Tensor b = parameter(draw(g, 3, 4, -1, 1));
    const std::uint64_t mask_seed = g();
    return probe(
        [&] {
          std::mt19937_64 eng(mask_seed);  // same mask on every rebuild
          return sum_all(mul(dropout(a, 0.35, eng, true), b));
        },
        {a, b});
  });
  return ops;
}

// End-to-end: a micro model (3 inputs with background, d_model 16, 2 layers,
// 2 heads, 2 memory slots, vocabulary 12) through the smoothed loss. Each
// seeded case sweeps a rotating pair of named parameters.
double model_case(int index, std::uint64_t seed) {
  std::vector<std::string> caps;
  for (int i = 0; i < 7; ++i) {
    caps.push_back("cat dog bird boat big small left right");
  }
  Vocabulary vocab = Vocabulary::build(caps, 5);

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.memory_slots = 2;
  cfg.d_feat = 8;
  cfg.max_len = 8;
  cfg.dropout = 0.0;
  Model model(cfg, vocab, seed);

  SynthConfig sc;
  sc.d_feat = 8;
  sc.objects_min = 2;
  sc.objects_max = 2;  // two proposals + background = three inputs
  const Scene scene = generate_scene(seed + 17, sc);

  std::mt19937_64 g(seed * 1315423911ull + 7);
  std::vector<int> prefix{Vocabulary::kStart};
  std::vector<int> targets;
  for (int t = 0; t < 3; ++t) {
    const int w = uniform_int(g, 4, vocab.size() - 1);
    prefix.push_back(w);
    targets.push_back(w);
  }
  targets.push_back(Vocabulary::kEnd);

  static const char* kLeafCycle[] = {"embed.word",      "embed.visual",
                                     "enc.l0.att.wq",   "enc.l0.wg",
                                     "lam.wv",          "dec.l0.cross.wv",
                                     "dec.l1.alpha0.w", "out.w"};
  std::vector<Tensor> leaves{
      model.params().get(kLeafCycle[(2 * index) % 8]),
      model.params().get(kLeafCycle[(2 * index + 1) % 8])};
  auto build = [&] {
    return xe_loss(model.forward(scene, prefix), targets, 0.1);
  };
  return probe(build, leaves);
}

}  // namespace

GradCheckReport run_gradient_suite(std::uint64_t seed) {
  GradCheckReport report;
  constexpr int kCasesPerOp = 4;
  constexpr int kModelCases = 8;

  int op_index = 0;
  for (const auto& [name, run] : op_cases()) {
    GradCheckEntry entry{name, 0, 0.0};
    for (int c = 0; c < kCasesPerOp; ++c) {
      std::mt19937_64 g = make_stream(seed + 1000 * op_index + c, name);
      entry.worst = std::max(entry.worst, run(g));
      ++entry.cases;
    }
    report.checks.push_back(entry);
    ++op_index;
  }

  GradCheckEntry model_entry{"model_end_to_end", 0, 0.0};
  for (int c = 0; c < kModelCases; ++c) {
    model_entry.worst =
        std::max(model_entry.worst, model_case(c, seed + 31 * c + 5));
    ++model_entry.cases;
  }
  report.checks.push_back(model_entry);

  for (const GradCheckEntry& e : report.checks) {
    report.total_cases += e.cases;
    report.max_err = std::max(report.max_err, e.worst);
  }
  return report;
}

}  // namespace latgeo
