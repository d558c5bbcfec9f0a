#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <vector>

#include "doctest.h"
#include "hpt/analysis.hpp"
#include "hpt/train.hpp"
#include "test_util.hpp"

using namespace hpt;
using hpt_test::bit_equal;
using hpt_test::random_tensor;

namespace {

// Plain-loop [M x K]·[K x N] for oracle arithmetic, independent of ops.
std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                            std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  }
  return out;
}

// Linear CKA via Gram matrices: HSIC(K,L) = tr(K H L H) with the centering
// matrix H = I − 11ᵀ/m. A deliberately different formulation from the
// feature-space implementation under test.
double cka_gram_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0);
  const std::vector<double> av(a.values().begin(), a.values().end());
  const std::vector<double> bv(b.values().begin(), b.values().end());

  const auto gram = [m](const std::vector<double>& x, std::size_t d) {
    std::vector<double> g(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += x[i * d + c] * x[j * d + c];
        g[i * m + j] = dot;
      }
    }
    return g;
  };
  std::vector<double> h(m * m, -1.0 / static_cast<double>(m));
  for (std::size_t i = 0; i < m; ++i) h[i * m + i] += 1.0;

  const auto hsic = [&](const std::vector<double>& k, const std::vector<double>& l) {
    const auto kh = mat_mul(k, h, m, m, m);
    const auto lh = mat_mul(l, h, m, m, m);
    const auto prod = mat_mul(kh, lh, m, m, m);
    double tr = 0;
    for (std::size_t i = 0; i < m; ++i) tr += prod[i * m + i];
    return tr;
  };

  const auto k = gram(av, a.extent(1));
  const auto l = gram(bv, b.extent(1));
  const double denom = std::sqrt(hsic(k, k)) * std::sqrt(hsic(l, l));
  if (denom == 0.0) return 0.0;
  return hsic(k, l) / denom;
}

// Random orthogonal [d x d] by Gram-Schmidt on a random matrix.
std::vector<double> random_orthogonal(Rng& rng, std::size_t d) {
  std::vector<double> q(d * d);
  for (double& v : q) v = rng.normal();
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t p = 0; p < r; ++p) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[r * d + c] * q[p * d + c];
      for (std::size_t c = 0; c < d; ++c) q[r * d + c] -= dot * q[p * d + c];
    }
    double norm = 0;
    for (std::size_t c = 0; c < d; ++c) norm += q[r * d + c] * q[r * d + c];
    norm = std::sqrt(norm);
    REQUIRE(norm > 1e-8);
    for (std::size_t c = 0; c < d; ++c) q[r * d + c] /= norm;
  }
  // sanity: QQᵀ = I
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * q[j * d + c];
      REQUIRE(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
    }
  }
  return q;
}

Tensor apply_matrix(const Tensor& x, const std::vector<double>& q, std::size_t d) {
  const std::size_t m = x.extent(0);
  const std::vector<double> xv(x.values().begin(), x.values().end());
  return Tensor(Shape{m, d}, mat_mul(xv, q, m, d, d));
}

}  // namespace

TEST_CASE("cka of a matrix with itself is 1") {
  Rng rng(50);
  const Tensor x = random_tensor(rng, {32, 6});
  CHECK(std::abs(cka_linear(x, x) - 1.0) < 1e-12);
}

TEST_CASE("cka is invariant to orthogonal transforms and nonzero scaling") {
  Rng rng(51);
  const std::size_t d = 6;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, {24, d});
    const auto q = random_orthogonal(rng, d);
    CHECK(std::abs(cka_linear(x, apply_matrix(x, q, d)) - 1.0) < 1e-9);

    const double c = trial % 2 == 0 ? 2.5 : -3.0;
    Tensor scaled = x.clone();
    for (double& v : scaled.values()) v *= c;
    CHECK(std::abs(cka_linear(x, scaled) - 1.0) < 1e-9);

    // invariance applies to either argument against an unrelated matrix
    const Tensor y = random_tensor(rng, {24, d});
    CHECK(std::abs(cka_linear(apply_matrix(x, q, d), y) - cka_linear(x, y)) < 1e-9);
  }
}

TEST_CASE("cka is symmetric and bounded") {
  Rng rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, {16, 5});
    const Tensor y = random_tensor(rng, {16, 7});
    const double ab = cka_linear(x, y);
    const double ba = cka_linear(y, x);
    CHECK(std::abs(ab - ba) < 1e-12);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("cka matches the gram-matrix oracle on 64x8 inputs") {
  Rng rng(53);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(rng, {64, 8});
    const Tensor y = random_tensor(rng, {64, 8});
    const double got = cka_linear(x, y);
    const double want = cka_gram_oracle(x, y);
    CHECK(std::abs(got - want) < 1e-9);
    CHECK(got < 0.5);  // independent random features should not look similar
  }
}

TEST_CASE("cka degenerate and error cases") {
  const Tensor z(Shape{8, 3}, 0.0);
  Rng rng(54);
  const Tensor x = random_tensor(rng, {8, 3});
  CHECK(cka_linear(z, x) == 0.0);
  CHECK(cka_linear(x, z) == 0.0);
  CHECK(cka_linear(z, z) == 0.0);

  // constant columns center to zero, which is equally degenerate
  Tensor c(Shape{8, 3}, 4.2);
  CHECK(cka_linear(c, x) == 0.0);

  CHECK_THROWS_AS(cka_linear(random_tensor(rng, {8, 3}), random_tensor(rng, {9, 3})), ShapeError);
  CHECK_THROWS_AS(cka_linear(random_tensor(rng, {1, 3}), random_tensor(rng, {1, 3})), ValueError);
  CHECK_THROWS_AS(cka_linear(Tensor(Shape{4}, 0.0), x), ShapeError);
}

namespace {

struct StudyRow {
  PetlConfig pc;
  double budget4 = 0;  // 4-class reference budget (0 = not published)
  double budget5 = 0;  // 5-class reference budget
};

std::vector<StudyRow> study_rows() {
  const std::set<std::string> ssf_ln{"ln1"};
  const std::set<std::string> ssf_mhsa{"ln1", "qkv", "proj"};
  const std::set<std::string> ssf_all{"ln1", "qkv", "proj", "ln2", "fc1", "fc2"};
  std::vector<StudyRow> rows;
  rows.push_back({{.method = Method::full_finetune}, 86.9e6, 86.9e6});
  rows.push_back({{.method = Method::linear_probe}, 4.9e3, 5.6e3});
  rows.push_back({{.method = Method::adapter, .rate = 256}, 10.2e3, 11.0e3});
  rows.push_back({{.method = Method::adapter, .rate = 128}, 14.9e3, 15.6e3});
  rows.push_back({{.method = Method::adapter, .rate = 64}, 24.1e3, 24.8e3});
  rows.push_back({{.method = Method::hpt, .bins = 4}, 7.9e3, 8.7e3});
  rows.push_back({{.method = Method::hpt, .bins = 8}, 11.0e3, 11.8e3});
  rows.push_back({{.method = Method::hpt, .bins = 16}, 17.2e3, 18.0e3});
  rows.push_back({{.method = Method::lora, .rank = 6}, 14.1e3, 14.9e3});
  rows.push_back({{.method = Method::lora, .rank = 12}, 23.3e3, 24.1e3});
  rows.push_back({{.method = Method::ssf, .insertions = ssf_ln}, 6.4e3, 7.2e3});
  rows.push_back({{.method = Method::ssf, .insertions = ssf_mhsa}, 12.5e3, 13.3e3});
  rows.push_back({{.method = Method::ssf, .insertions = ssf_all}, 21.8e3, 22.5e3});
  // non-shared rows are published for the 5-class column only
  rows.push_back({{.method = Method::adapter, .shared = false, .rate = 256}, 0, 70.2e3});
  rows.push_back({{.method = Method::adapter, .shared = false, .rate = 128}, 0, 125.0e3});
  rows.push_back({{.method = Method::adapter, .shared = false, .rate = 64}, 0, 236.0e3});
  rows.push_back({{.method = Method::hpt, .shared = false, .bins = 4}, 0, 42.6e3});
  rows.push_back({{.method = Method::hpt, .shared = false, .bins = 8}, 0, 79.6e3});
  rows.push_back({{.method = Method::hpt, .shared = false, .bins = 16}, 0, 153.0e3});
  return rows;
}

ModelConfig full_scale(std::size_t classes) {
  ModelConfig mc;
  mc.dim = 768;
  mc.heads = 12;
  mc.blocks = 12;
  mc.feat = 16;
  mc.max_seq = 32;
  mc.classes = classes;
  return mc;
}

}  // namespace

TEST_CASE("closed-form counts land within 10% of every published budget") {
  for (const StudyRow& row : study_rows()) {
    for (const std::size_t classes : {std::size_t{4}, std::size_t{5}}) {
      const double budget = classes == 4 ? row.budget4 : row.budget5;
      const ModelConfig mc = full_scale(classes);
      const auto ref = reference_budget(mc, row.pc);
      if (budget == 0) {
        CHECK(!ref.has_value());
        continue;
      }
      REQUIRE(ref.has_value());
      CHECK(ref->value == budget);
      const double count = static_cast<double>(closed_form_trainable(mc, row.pc));
      CHECK(std::abs(count - budget) / budget < 0.10);
    }
  }
}

TEST_CASE("specific full-scale counts match hand-derived values") {
  const ModelConfig mc4 = full_scale(4);
  const ModelConfig mc5 = full_scale(5);
  // head: layer norm (2·768) + classifier (C·768 + C)
  CHECK(closed_form_trainable(mc4, {.method = Method::linear_probe}) == 4612);
  CHECK(closed_form_trainable(mc5, {.method = Method::linear_probe}) == 5381);
  // shared hpt(16): 16·768 + 32 = 12,320 on top of the head
  CHECK(closed_form_trainable(mc4, {.method = Method::hpt, .bins = 16}) == 12320 + 4612);
  // non-shared hpt(8): 12·(8·768 + 16) = 73,920 on top of the head
  CHECK(closed_form_trainable(mc5, {.method = Method::hpt, .shared = false, .bins = 8}) ==
        73920 + 5381);
  // shared adapter(256): bottleneck h=3 → 2·768·3 + 3 + 768 = 5,379
  CHECK(closed_form_trainable(mc4, {.method = Method::adapter, .rate = 256}) == 5379 + 4612);
  // shared lora(6): 2·768·6 = 9,216
  CHECK(closed_form_trainable(mc4, {.method = Method::lora, .rank = 6}) == 9216 + 4612);
}

TEST_CASE("no reference budget exists off the study grid") {
  CHECK(!reference_budget(ModelConfig{}, {.method = Method::hpt}).has_value());
  CHECK(!reference_budget(full_scale(7), {.method = Method::hpt}).has_value());
  CHECK(!reference_budget(full_scale(4), {.method = Method::hpt, .bins = 5}).has_value());
  CHECK(!reference_budget(full_scale(4), {.method = Method::lora, .shared = false, .rank = 6})
             .has_value());
  CHECK(!reference_budget(full_scale(4), {.method = Method::hpt,
                                          .bins = 4,
                                          .placement = HistPlacement::both})
             .has_value());
}

TEST_CASE("walking a full-scale model agrees with the closed form for every study row") {
  const ModelConfig mc = full_scale(5);
  const std::size_t backbone = closed_form_trainable(mc, {.method = Method::full_finetune}) -
                               closed_form_trainable(mc, {.method = Method::linear_probe});
  for (const StudyRow& row : study_rows()) {
    Rng rng(7);
    EncoderModel model(mc, row.pc, rng);
    ParamAudit audit = count_params(model);
    CHECK(audit.trainable == closed_form_trainable(mc, row.pc));
    CHECK(audit.closed_form == audit.trainable);
    if (row.pc.method == Method::full_finetune) {
      CHECK(audit.frozen == 0);
    } else {
      CHECK(audit.frozen == backbone);
    }
    REQUIRE(audit.reference.has_value());
    CHECK(std::abs(audit.rel_delta) < 0.10);
  }
}

TEST_CASE("toy-scale walks agree with the closed form for every method and sharing") {
  ModelConfig mc;  // defaults: D=64, 4 blocks
  const std::vector<Method> methods{Method::full_finetune, Method::linear_probe, Method::adapter,
                                    Method::hpt,           Method::lora,         Method::ssf};
  for (const Method method : methods) {
    for (const bool shared : {true, false}) {
      PetlConfig pc;
      pc.method = method;
      pc.shared = shared;
      pc.rate = 16;
      pc.bins = 8;
      pc.rank = 3;
      pc.insertions = {"ln1", "qkv", "proj", "ln2", "fc1", "fc2"};
      Rng rng(8);
      EncoderModel model(mc, pc, rng);
      ParamAudit audit = count_params(model);
      CHECK(audit.trainable == closed_form_trainable(mc, pc));
      CHECK(audit.total() == total_count(model.all_params()));
    }
  }
}

TEST_CASE("audit rows group modules and the csv carries totals") {
  ModelConfig mc;
  mc.blocks = 2;
  Rng rng(9);
  EncoderModel model(mc, {.method = Method::linear_probe}, rng);

  ParamAudit all = count_params(model);
  ParamAudit tuned = count_params(model, true);
  CHECK(all.modules.size() > tuned.modules.size());
  CHECK(tuned.modules.size() == 2);  // head_norm + head
  CHECK(tuned.modules[0].module == "head_norm");
  CHECK(tuned.modules[1].module == "head");
  CHECK(all.trainable == tuned.trainable);
  CHECK(all.frozen == tuned.frozen);

  const std::string csv = audit_csv_string(tuned);
  CHECK(csv.rfind("module,count\n", 0) == 0);
  CHECK(csv.find("head," + std::to_string(model.head.weight.count() + model.head.bias.count())) !=
        std::string::npos);
  CHECK(csv.find("total_trainable," + std::to_string(all.trainable)) != std::string::npos);
  CHECK(csv.find("total_frozen," + std::to_string(all.frozen)) != std::string::npos);

  const std::string table = audit_table_string(all);
  CHECK(table.find("(match)") != std::string::npos);
  CHECK(table.find("blocks.0.qkv") != std::string::npos);
}

namespace {

SyntheticSpec probe_spec() {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.train_per_class = 6;
  spec.val_per_class = 3;
  spec.test_per_class = 3;
  spec.seq = 4;
  spec.feat = 4;
  spec.seed = 5;
  return spec;
}

ModelConfig probe_model() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.feat = 4;
  cfg.max_seq = 4;
  cfg.classes = 2;
  return cfg;
}

}  // namespace

TEST_CASE("block features stack token means deterministically") {
  Rng rng(60);
  EncoderModel m(probe_model(), {.method = Method::linear_probe}, rng);
  DatasetBundle data = gen_synthetic(probe_spec());

  const auto feats = block_features(m, data.val);
  REQUIRE(feats.size() == 2);
  CHECK(feats[0].extent(0) == data.val.size());
  CHECK(feats[0].extent(1) == 8);

  // row i is the token mean of block features for sample i
  const auto per_block = capture_features(m, data.val.sample(1));
  const Tensor mean = reduce_mean(per_block[1], 0);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(feats[1](1, j) == mean(j));
  }

  const auto again = block_features(m, data.val);
  for (std::size_t b = 0; b < feats.size(); ++b) {
    CHECK(bit_equal(feats[b].values(), again[b].values()));
  }

  Split empty;
  empty.frames = Tensor(Shape{1, 4, 4}, 0.0);
  empty.labels = {};
  CHECK_THROWS_AS(block_features(m, empty), ValueError);
}

TEST_CASE("a model compared with itself scores 1 on every block") {
  Rng rng(61);
  EncoderModel m(probe_model(), {.method = Method::hpt, .bins = 4}, rng);
  DatasetBundle data = gen_synthetic(probe_spec());

  const SimilarityReport report = similarity_report(m, m, data.val);
  REQUIRE(report.scores.size() == 2);
  for (const double s : report.scores) CHECK(std::abs(s - 1.0) < 1e-12);

  const std::string csv = similarity_csv_string(report);
  CHECK(csv.rfind("block,score\n", 0) == 0);
  CHECK(csv.find("1,") != std::string::npos);
  CHECK(similarity_table_string(report).find("block") == 0);
}

TEST_CASE("orthogonally rotated features still score 1 per block") {
  Rng rng(62);
  EncoderModel m(probe_model(), {.method = Method::linear_probe}, rng);
  DatasetBundle data = gen_synthetic(probe_spec());
  const auto feats = block_features(m, data.val);
  const auto q = random_orthogonal(rng, 8);
  for (const Tensor& f : feats) {
    CHECK(std::abs(cka_linear(f, apply_matrix(f, q, 8)) - 1.0) < 1e-9);
  }
}

TEST_CASE("similarity_report rejects mismatched architectures") {
  Rng r1(63), r2(64);
  EncoderModel a(probe_model(), {.method = Method::linear_probe}, r1);
  ModelConfig other = probe_model();
  other.blocks = 3;
  EncoderModel b(other, {.method = Method::linear_probe}, r2);
  DatasetBundle data = gen_synthetic(probe_spec());
  CHECK_THROWS_AS(similarity_report(a, b, data.val), CompatError);
}

TEST_CASE("training moves features away from the initialization") {
  DatasetBundle data = gen_synthetic(probe_spec());
  Rng r1(65);
  EncoderModel reference(probe_model(), {.method = Method::hpt, .bins = 4}, r1);
  Rng r2(65);
  EncoderModel candidate(probe_model(), {.method = Method::hpt, .bins = 4}, r2);

  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.seed = 11;
  train(candidate, data, tc);

  const SimilarityReport report = similarity_report(candidate, reference, data.val);
  REQUIRE(report.scores.size() == 2);
  for (const double s : report.scores) {
    CHECK(s < 1.0);  // strictly below: tuning altered every block's features
    CHECK(s > 0.0);
  }
  const SimilarityReport again = similarity_report(candidate, reference, data.val);
  CHECK(bit_equal(std::span<const double>(report.scores), std::span<const double>(again.scores)));
}
