#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "framescope/metrics.hpp"
#include "framescope/rng.hpp"
#include "framescope/steering.hpp"
#include "framescope/toy.hpp"
#include "oracles.hpp"

using namespace framescope;

namespace {

TokenLayout row_layout(int p, int n) {
    TokenLayout layout;
    layout.image_span = {0, p};
    layout.question_span = {p, n};
    layout.grid = {1, p};
    layout.image_width = 8 * p;
    layout.image_height = 8;
    return layout;
}

Eigen::RowVectorXd random_row(Rng& rng, int p, int n, double image_mass) {
    Eigen::RowVectorXd row(n);
    double sum = 0.0;
    for (int j = 0; j < p; ++j) {
        row(j) = rng.uniform() + 0.01;
        sum += row(j);
    }
    for (int j = 0; j < p; ++j) row(j) *= image_mass / sum;
    sum = 0.0;
    for (int j = p; j < n; ++j) {
        row(j) = rng.uniform() + 0.01;
        sum += row(j);
    }
    for (int j = p; j < n; ++j) row(j) *= (1.0 - image_mass) / sum;
    return row;
}

}  // namespace

TEST_CASE("compute_multiplier") {
    VisualStats open_stats, cons_stats;
    open_stats.visual_energy = 0.30;
    cons_stats.visual_energy = 0.15;
    open_stats.box_attention = 0.19;
    cons_stats.box_attention = 0.12;

    CHECK(compute_multiplier(open_stats, open_stats, SteerKind::ve) == doctest::Approx(1.0));
    CHECK(compute_multiplier(open_stats, cons_stats, SteerKind::ve) == doctest::Approx(2.0));
    CHECK(compute_multiplier(open_stats, cons_stats, SteerKind::box) ==
          doctest::Approx(0.19 / 0.12).epsilon(1e-10));

    cons_stats.visual_energy = 0.0;
    CHECK_THROWS_AS(compute_multiplier(open_stats, cons_stats, SteerKind::ve),
                    ZeroVisualMassError);
}

TEST_CASE("apply_ve_row") {
    const TokenLayout layout = row_layout(4, 8);

    SUBCASE("m = 1 is a bit-identical no-op") {
        Rng rng(4);
        Eigen::RowVectorXd row = random_row(rng, 4, 8, 0.3);
        const Eigen::RowVectorXd before = row;
        const RowEditFlags flags = apply_ve_row(row, layout, 1.0, 1e-4);
        CHECK(!flags.changed);
        for (int j = 0; j < 8; ++j) CHECK(row(j) == before(j));
    }

    SUBCASE("doubling image mass 0.2 rescales non-image by 0.75") {
        Eigen::RowVectorXd row(8);
        row << 0.05, 0.05, 0.05, 0.05, 0.2, 0.2, 0.2, 0.2;
        apply_ve_row(row, layout, 2.0, 1e-4);
        for (int j = 0; j < 4; ++j) CHECK(row(j) == doctest::Approx(0.1).epsilon(1e-12));
        for (int j = 4; j < 8; ++j) CHECK(row(j) == doctest::Approx(0.15).epsilon(1e-12));
        CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("huge multiplier clamps image mass at 1 - eps") {
        Rng rng(8);
        Eigen::RowVectorXd row = random_row(rng, 4, 8, 0.5);
        apply_ve_row(row, layout, 1e9, 1e-4);
        CHECK(row.segment(0, 4).sum() == doctest::Approx(1.0 - 1e-4).epsilon(1e-10));
        CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-10));
    }

    SUBCASE("all-image row is returned unchanged with a warning") {
        Eigen::RowVectorXd row(8);
        row << 0.25, 0.25, 0.25, 0.25, 0, 0, 0, 0;
        const RowEditFlags flags = apply_ve_row(row, layout, 2.0, 1e-4);
        CHECK(flags.warned);
        CHECK(row(0) == doctest::Approx(0.25));
    }

    SUBCASE("fuzz: row sums, nonnegativity, within-image ratios") {
        Rng rng(12);
        for (int trial = 0; trial < 1000; ++trial) {
            const int p = 2 + rng.uniform_int(6);
            const int n = p + 1 + rng.uniform_int(6);
            const TokenLayout lay = row_layout(p, n);
            Eigen::RowVectorXd row = random_row(rng, p, n, rng.uniform(0.05, 0.9));
            const Eigen::RowVectorXd before = row;
            apply_ve_row(row, lay, rng.uniform(0.1, 5.0), 1e-4);
            CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-8));
            CHECK(row.minCoeff() >= 0.0);
            for (int a = 0; a < p; ++a) {
                for (int b = a + 1; b < p; ++b) {
                    if (before(a) > 0 && before(b) > 0) {
                        CHECK(row(a) / row(b) ==
                              doctest::Approx(before(a) / before(b)).epsilon(1e-10));
                    }
                }
            }
        }
    }
}

TEST_CASE("apply_box_row") {
    const TokenLayout layout = row_layout(4, 8);
    BoxRegion box;
    box.patch_indices = {0};

    SUBCASE("m = 1 is a no-op") {
        Eigen::RowVectorXd row(8);
        row << 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.2, 0.1;
        const Eigen::RowVectorXd before = row;
        const RowEditFlags flags = apply_box_row(row, layout, box, 1.0, 1e-4);
        CHECK(!flags.changed);
        for (int j = 0; j < 8; ++j) CHECK(row(j) == before(j));
    }

    SUBCASE("b=0.1, o=0.4, m=3 -> b'=0.3, o'=0.2") {
        Eigen::RowVectorXd row(8);
        row << 0.1, 0.2, 0.1, 0.1, 0.125, 0.125, 0.125, 0.125;
        apply_box_row(row, layout, box, 3.0, 1e-4);
        CHECK(row(0) == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(row.segment(1, 3).sum() == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(row.segment(0, 4).sum() == doctest::Approx(0.5).epsilon(1e-12));
        // non-image untouched
        for (int j = 4; j < 8; ++j) CHECK(row(j) == 0.125);
    }

    SUBCASE("box holding all visual mass warns and stays put") {
        Eigen::RowVectorXd row(8);
        row << 0.5, 0, 0, 0, 0.125, 0.125, 0.125, 0.125;
        const RowEditFlags flags = apply_box_row(row, layout, box, 2.0, 1e-4);
        CHECK(flags.warned);
        CHECK(row(0) == doctest::Approx(0.5));
    }

    SUBCASE("fuzz: image total preserved, non-image bit-identical") {
        Rng rng(33);
        for (int trial = 0; trial < 1000; ++trial) {
            const int p = 3 + rng.uniform_int(6);
            const int n = p + 2 + rng.uniform_int(5);
            const TokenLayout lay = row_layout(p, n);
            BoxRegion region;
            const int box_size = 1 + rng.uniform_int(p - 1);
            for (int i = 0; i < box_size; ++i) region.patch_indices.push_back(i);
            Eigen::RowVectorXd row = random_row(rng, p, n, rng.uniform(0.1, 0.8));
            const Eigen::RowVectorXd before = row;
            apply_box_row(row, lay, region, rng.uniform(0.2, 4.0), 1e-4);
            CHECK(row.segment(0, p).sum() ==
                  doctest::Approx(before.segment(0, p).sum()).epsilon(1e-10));
            CHECK(row.minCoeff() >= 0.0);
            for (int j = p; j < n; ++j) CHECK(row(j) == before(j));
        }
    }
}

TEST_CASE("spearman_rho") {
    SUBCASE("strictly increasing -> 1") {
        CHECK(spearman_rho({1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4}) == doctest::Approx(1.0));
    }

    SUBCASE("constant series -> 0 with tie flag") {
        bool tie = false;
        CHECK(spearman_rho({1, 2, 3, 4}, {0.5, 0.5, 0.5, 0.5}, &tie) == doctest::Approx(0.0));
        CHECK(tie);
    }

    SUBCASE("hand series -> 0.8, matches textbook formula") {
        const std::vector<double> xs = {1, 2, 3, 4};
        const std::vector<double> ys = {0.5, 0.7, 0.6, 0.8};
        CHECK(spearman_rho(xs, ys) == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(spearman_rho(xs, ys) ==
              doctest::Approx(oracle::spearman_no_ties(xs, ys)).epsilon(1e-12));
    }

    SUBCASE("fewer than 3 points raises") {
        CHECK_THROWS_AS(spearman_rho({1, 2}, {3, 4}), InsufficientSampleError);
    }
}

TEST_CASE("steered generation on the planted fixture") {
    PlantedAdapter adapter;
    const auto triplets = PlantedAdapter::make_triplets(1);
    const QAItem& open_item = triplets[0].open;
    const QAItem& cons_item = triplets[0].yesno;

    auto measure = [&](const QAItem& item) {
        const GenerateResult gen = adapter.generate(adapter.tokenize_with_layout(item), 8, true);
        return compute_stats(rollout(reduce_heads(*gen.attention)).final, gen.layout);
    };

    const VisualStats open_stats = measure(open_item);
    const VisualStats cons_stats = measure(cons_item);
    CHECK(cons_stats.visual_energy < open_stats.visual_energy);

    SUBCASE("m = 1 reproduces the unsteered pass bitwise") {
        SteeringSpec spec;
        spec.kind = SteerKind::ve;
        spec.multiplier = 1.0;
        spec.layout = adapter.tokenize_with_layout(cons_item).layout;
        const SteeredResult steered = steered_generate(adapter, cons_item, spec);
        const GenerateResult plain =
            adapter.generate(adapter.tokenize_with_layout(cons_item), 8, true);
        const RolloutResult roll = rollout(reduce_heads(*plain.attention));
        CHECK(steered.stats.visual_energy == visual_energy(roll.final, plain.layout));
        CHECK(steered.prediction == plain.text);
    }

    SUBCASE("VE steering raises measured VE monotonically") {
        double last = 0.0;
        bool first = true;
        for (double m : {1.0, 1.25, 1.5, 2.0}) {
            SteeringSpec spec;
            spec.kind = SteerKind::ve;
            spec.multiplier = m;
            spec.layout = adapter.tokenize_with_layout(cons_item).layout;
            const SteeredResult steered = steered_generate(adapter, cons_item, spec);
            if (!first) CHECK(steered.stats.visual_energy > last);
            last = steered.stats.visual_energy;
            first = false;
        }
    }

    SUBCASE("per-sample ratio multiplier restores VE near the open level") {
        SteeringSpec spec;
        spec.kind = SteerKind::ve;
        spec.multiplier = compute_multiplier(open_stats, cons_stats, SteerKind::ve);
        spec.layout = adapter.tokenize_with_layout(cons_item).layout;
        const SteeredResult steered = steered_generate(adapter, cons_item, spec);
        CHECK(std::abs(steered.stats.visual_energy - open_stats.visual_energy) /
                  open_stats.visual_energy <
              0.05);
    }

    SUBCASE("multiplier sweep improves planted accuracy with positive rho") {
        std::vector<QAItem> items;
        for (const auto& t : PlantedAdapter::make_triplets(4)) items.push_back(t.yesno);
        const SweepResult sweep =
            multiplier_sweep(adapter, items, SteerKind::ve, {1.0, 1.4, 1.8, 2.2});
        REQUIRE(sweep.points.size() == 4);
        CHECK(sweep.points.front().accuracy <= sweep.points.back().accuracy);
        // measured VE is monotone in the multiplier
        for (size_t i = 1; i < sweep.points.size(); ++i) {
            CHECK(sweep.points[i].mean_ve > sweep.points[i - 1].mean_ve);
        }
    }
}

TEST_CASE("capability negotiation fails fast") {
    PlantedAdapter adapter;
    const QAItem item = PlantedAdapter::make_triplets(1)[0].mcq;
    CHECK_THROWS_AS(adapter.score_option(adapter.tokenize_with_layout(item), "object"),
                    CapabilityError);
}
