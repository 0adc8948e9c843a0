#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "nearl/adapters.hpp"
#include "nearl/analysis.hpp"
#include "nearl/error.hpp"
#include "oracles.hpp"

using namespace nearl;

namespace {

std::size_t registry_total(const ModelConfig& c) {
    return element_count(trainable_registry(AdapterBank::init(c), c.mode));
}

}  // namespace

TEST_CASE("tiny audit matches an independent hand tally") {
    ModelConfig c = ModelConfig::tiny();
    c.useformer_depth = 1;
    c.d_ffn_useformer = 8;
    REQUIRE(c.d_image == 8);
    REQUIRE(c.d_text == 6);
    REQUIRE(c.d_query == 4);
    REQUIRE(c.n_query == 2);
    REQUIRE(c.rank == 2);
    REQUIRE(c.n_layers == 2);
    REQUIRE(c.d_joint == 4);
    // Query module: 8*4 + 6*4 + 3*16 + (2*4*8 + 8 + 4) + 2*2*4 = 196
    // Image adapters: 2 * (8*2 + 4*2 + 2*8) = 80; text: 2 * (6*2 + 4*2 + 2*6) = 64
    // Projectors: (8 + 6) * 4 = 56
    const ParamAudit a = count_trainable(c);
    CHECK(a.total == 396);
    CHECK(registry_total(c) == 396);
    std::size_t sum = 0;
    for (const auto& comp : a.components) sum += comp.count;
    CHECK(sum == a.total);
    CHECK(a.alternate_total == 396 + 48);
}

TEST_CASE("formula total equals registry total across a config grid") {
    for (ModelConfig base : {ModelConfig::tiny(), ModelConfig::toy()}) {
        for (AblationMode mode : {AblationMode::full, AblationMode::no_or, AblationMode::no_useformer,
                                  AblationMode::lora, AblationMode::frozen}) {
            for (std::size_t rank : {1, 2, 5}) {
                for (std::size_t depth : {1, 3}) {
                    for (bool masked : {false, true}) {
                        ModelConfig c = base;
                        c.mode = mode;
                        c.rank = rank;
                        c.useformer_depth = depth;
                        if (masked) c.layer_mask = std::vector<std::size_t>{c.n_layers};
                        CAPTURE(to_string(mode));
                        CAPTURE(rank);
                        CHECK(count_trainable(c).total == registry_total(c));
                    }
                }
            }
        }
    }
    ModelConfig frozen = ModelConfig::tiny();
    frozen.mode = AblationMode::frozen;
    CHECK(count_trainable(frozen).total == 0);
}

TEST_CASE("audit grows strictly with r and rejects r = 0") {
    ModelConfig c = ModelConfig::toy();
    std::size_t prev = 0;
    for (std::size_t r = 1; r <= 16; ++r) {
        c.rank = r;
        const std::size_t t = count_trainable(c).total;
        CHECK(t > prev);
        prev = t;
    }
    c.rank = 0;
    CHECK_THROWS_AS(count_trainable(c), Error);
}

TEST_CASE("clip-b16 audit lands in the acceptance band") {
    const ModelConfig c = ModelConfig::clip_b16_audit();
    const ParamAudit a = count_trainable(c);
    CHECK(a.total == 1542400);
    CHECK(a.alternate_total == 2083072);
    CHECK(static_cast<double>(a.total) >= kAuditBandLow);
    CHECK(static_cast<double>(a.total) <= kAuditBandHigh);
    CHECK(registry_total(c) == a.total);
    const std::string report = audit_report(c, a);
    CHECK(report.find("1.46M") != std::string::npos);
    CHECK(report.find("1542400") != std::string::npos);
}

TEST_CASE("cosine_stats: constructed cases") {
    const Tensor x = Tensor::matrix({{1, 0}, {2, 0}, {0, 3}, {0, 1}});
    const std::vector<std::size_t> y = {0, 0, 1, 1};
    const CosineReport r = cosine_stats(x, y);
    CHECK(r.intra_mean == doctest::Approx(1.0));
    CHECK(r.inter_mean == doctest::Approx(0.0));
    CHECK(r.gap == doctest::Approx(1.0));
    CHECK(r.intra_pairs == 2);
    CHECK(r.inter_pairs == 4);
    CHECK(r.intra_hist[kHistogramBins - 1] == 2);
    CHECK(r.inter_hist[kHistogramBins / 2] == 4);

    const Tensor h = Tensor::matrix({{1, 1}, {1, -1}, {-2, 0.5}, {0.3, 2}});
    const std::vector<std::size_t> hy = {0, 1, 0, 1};
    const auto want = oracle::cosine_moments(oracle::to_mat(h), hy);
    const CosineReport got = cosine_stats(h, hy);
    CHECK(got.intra_mean == doctest::Approx(want.intra_mean).epsilon(1e-12));
    CHECK(got.inter_std == doctest::Approx(want.inter_std).epsilon(1e-12));

    CHECK_THROWS_AS(cosine_stats(Tensor::matrix({{1, 0}}), std::vector<std::size_t>{0}), Error);
    CHECK_THROWS_AS(cosine_stats(x, std::vector<std::size_t>{0, 0, 0, 0}), Error);
    CHECK_THROWS_AS(cosine_stats(Tensor::matrix({{1, 0}, {0, 0}}), std::vector<std::size_t>{0, 1}), Error);
}

TEST_CASE("cosine_stats matches the pairwise oracle and its invariances") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 4 + rng.below(10), d = 2 + rng.below(5);
        const Tensor x = randn({n, d}, rng, 1.0);
        std::vector<std::size_t> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = i < 4 ? i % 2 : rng.below(3);
        const auto want = oracle::cosine_moments(oracle::to_mat(x), y);
        const CosineReport got = cosine_stats(x, y);
        CHECK(std::abs(got.intra_mean - want.intra_mean) < 1e-9);
        CHECK(std::abs(got.inter_mean - want.inter_mean) < 1e-9);
        CHECK(std::abs(got.intra_std - want.intra_std) < 1e-9);
        CHECK(std::abs(got.inter_std - want.inter_std) < 1e-9);
        const std::size_t hist_total = std::accumulate(got.intra_hist.begin(), got.intra_hist.end(), std::size_t{0}) +
                                       std::accumulate(got.inter_hist.begin(), got.inter_hist.end(), std::size_t{0});
        CHECK(hist_total == n * (n - 1) / 2);

        const CosineReport scaled = cosine_stats(scale(x, 3.7), y);
        CHECK(std::abs(scaled.gap - got.gap) < 1e-12);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        const Tensor shuffled = gather_rows(x, order);
        std::vector<std::size_t> ys;
        for (std::size_t i : order) ys.push_back(y[i]);
        CHECK(std::abs(cosine_stats(shuffled, ys).gap - got.gap) < 1e-12);
    }
}

TEST_CASE("random labels give intra and inter means that agree") {
    Rng rng(5);
    const Tensor x = randn({300, 6}, rng, 1.0);
    std::vector<std::size_t> y(300);
    for (auto& l : y) l = rng.below(2);
    const CosineReport r = cosine_stats(x, y);
    CHECK(std::abs(r.gap) < 0.03);
}

TEST_CASE("pca2 matches a dense eigensolver up to sign convention") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const Tensor x = randn({5, 4}, rng, 1.0);
        const Pca2 p = pca2(x);
        const auto want = oracle::pca2(oracle::to_mat(x));
        CHECK(oracle::max_abs_diff(want.coords, p.coords) < 1e-6);
        CHECK(std::abs(p.explained[0] - want.explained[0]) < 1e-6);
        CHECK(std::abs(p.explained[1] - want.explained[1]) < 1e-6);
    }
}

TEST_CASE("pca2 special inputs") {
    // Collinear points: all variance on the first axis.
    const Tensor line = Tensor::matrix({{0, 0, 0}, {1, 2, 3}, {2, 4, 6}, {-1, -2, -3}});
    const Pca2 l = pca2(line);
    CHECK(l.explained[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(l.explained[1] < 1e-9);
    // Symmetric points project symmetrically about the origin.
    const Tensor sym = Tensor::matrix({{1, 0}, {-1, 0}, {0, 2}, {0, -2}});
    const Pca2 s = pca2(sym);
    CHECK(s.coords.at({0, 1}) == doctest::Approx(-s.coords.at({1, 1})));
    CHECK(s.coords.at({2, 0}) == doctest::Approx(-s.coords.at({3, 0})));
    // Translation leaves the projection unchanged.
    Rng rng(3);
    const Tensor x = randn({8, 5}, rng, 1.0);
    const Pca2 a = pca2(x);
    const Pca2 b = pca2(add(x, Tensor::vector({10, -3, 2, 7, 100})));
    CHECK(testing::max_abs_diff(a.coords.values(), b.coords.values()) < 1e-6);
    CHECK_THROWS_AS(pca2(Tensor::matrix({{1, 2}, {3, 4}})), Error);
    CHECK_THROWS_AS(pca2(Tensor::matrix({{1, 2}, {1, 2}, {1, 2}})), Error);
}

TEST_CASE("chance band agrees with reference binomial quantiles") {
    // Reference values: scipy.stats.binom.ppf(0.005, n, 0.5) / n and isf(0.005, n, 0.5) / n.
    const auto [lo, hi] = chance_band(128, 2);
    CHECK(lo == 49.0 / 128.0);
    CHECK(hi == 79.0 / 128.0);
    const auto [lo2, hi2] = chance_band(1000, 2);
    CHECK(lo2 == doctest::Approx(0.459));
    CHECK(hi2 == doctest::Approx(0.541));
    const auto [lo3, hi3] = chance_band(24, 2);
    CHECK(lo3 == 0.25);
    CHECK(hi3 == 0.75);
}

TEST_CASE("ablation grids enumerate the expected variants") {
    const ModelConfig base = ModelConfig::toy();
    const auto modules = ablation_grid(base, AblationSuite::modules);
    REQUIRE(modules.size() == 4);
    CHECK(modules[0].name == "lora");
    CHECK(modules[1].name == "no_useformer");
    CHECK(modules[2].name == "no_or");
    CHECK(modules[3].name == "full");
    const auto depth = ablation_grid(base, AblationSuite::depth);
    std::vector<std::size_t> ms;
    for (const auto& v : depth) ms.push_back(v.config.useformer_depth);
    CHECK(ms == std::vector<std::size_t>{1, 2, 4, 6});
    const auto rank = ablation_grid(base, AblationSuite::rank);
    std::vector<std::size_t> rs;
    std::size_t prev = 0;
    for (const auto& v : rank) {
        rs.push_back(v.config.rank);
        const std::size_t t = count_trainable(v.config).total;
        CHECK(t > prev);
        prev = t;
    }
    CHECK(rs == std::vector<std::size_t>{2, 4, 8, 16});
    ModelConfig deep = ModelConfig::tiny();
    deep.n_layers = 12;
    const auto groups = ablation_grid(deep, AblationSuite::layer_groups);
    REQUIRE(groups.size() == 4);
    CHECK(*groups[0].config.layer_mask == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(*groups[1].config.layer_mask == std::vector<std::size_t>{5, 6, 7, 8});
    CHECK(*groups[2].config.layer_mask == std::vector<std::size_t>{9, 10, 11, 12});
    CHECK(groups[3].config.layer_mask->size() == 12);
    CHECK(groups[1].name == "mid:5-8");
    CHECK(parse_ablation_suite("rank_r") == AblationSuite::rank);
    CHECK_THROWS_AS(parse_ablation_suite("width"), Error);
}

TEST_CASE("run_ablations trains every variant and writes the CSV layout") {
    const ModelConfig c = ModelConfig::tiny();
    DatasetSpec s;
    s.n_patches = c.n_patches;
    s.patch_dim = c.patch_dim;
    s.n_train = 16;
    s.n_val = 8;
    s.n_test = 8;
    const Dataset d = gen_dataset(s);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 8;
    const auto rows = run_ablations(c, tc, d, AblationSuite::modules);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        ModelConfig vc = c;
        vc.mode = parse_ablation_mode(r.variant);
        CHECK(r.trainable_params == count_trainable(vc).total);
        CHECK_UNARY(r.acc >= 0.0 && r.acc <= 1.0);
    }
    const std::string csv = ablation_csv(rows);
    CHECK(csv.rfind("variant,acc,f1,trainable_params,seconds\nlora,", 0) == 0);
}
