#include <catch2/catch_amalgamated.hpp>

#include "ecg2cxr/metrics.hpp"
#include "ecg2cxr/rng.hpp"

#include "oracles.hpp"

#include <algorithm>

using namespace ecg2cxr;

TEST_CASE("auroc: reference values") {
    REQUIRE(*auroc(std::vector<double>{0.9, 0.8, 0.3, 0.1},
                   std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
    REQUIRE(*auroc(std::vector<double>{0.42, 0.42, 0.42, 0.42},
                   std::vector<std::uint8_t>{1, 0, 1, 0}) == 0.5);
    // pos {0.8, 0.4}, neg {0.6, 0.2}: wins 3 of 4 pairs.
    REQUIRE(*auroc(std::vector<double>{0.8, 0.4, 0.6, 0.2},
                   std::vector<std::uint8_t>{1, 1, 0, 0}) == 0.75);
    REQUIRE(!auroc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}).has_value());
    REQUIRE(!auroc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 0}).has_value());
}

TEST_CASE("auroc equals the O(n^2) pairwise oracle exactly") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(49);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        const bool heavy_ties = rng.bernoulli(0.5);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = heavy_ties ? static_cast<double>(rng.uniform_index(5)) : rng.normal();
            labels[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        const auto fast = auroc(scores, labels);
        const auto brute = oracles::brute_auroc(scores, labels);
        REQUIRE(fast.has_value() == brute.has_value());
        if (fast) REQUIRE(*fast == *brute);
    }
}

TEST_CASE("auroc invariances") {
    Rng rng(32);
    std::vector<double> scores(300);
    std::vector<std::uint8_t> labels(300);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.bernoulli(0.3) ? static_cast<double>(rng.uniform_index(4)) : rng.normal();
        labels[i] = rng.bernoulli(0.35) ? 1 : 0;
    }
    const double base = *auroc(scores, labels);

    SECTION("strictly increasing transforms leave AUROC unchanged") {
        std::vector<double> exp_scores(scores.size()), affine(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            exp_scores[i] = std::exp(scores[i]);
            affine[i] = 3.5 * scores[i] - 11.0;
        }
        REQUIRE(*auroc(exp_scores, labels) == base);
        REQUIRE(*auroc(affine, labels) == base);
    }
    SECTION("complementing labels complements AUROC") {
        std::vector<std::uint8_t> flipped(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) flipped[i] = labels[i] ? 0 : 1;
        REQUIRE_THAT(*auroc(scores, flipped) + base, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("bootstrap_auroc: basics and determinism") {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    Rng rng(33);
    for (int i = 0; i < 200; ++i) {
        const bool pos = rng.bernoulli(0.5);
        scores.push_back(pos ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4));
        labels.push_back(pos ? 1 : 0);
    }
    const auto res = bootstrap_auroc(scores, labels, 500, 0.05, 42);
    REQUIRE(res.point == 1.0);
    REQUIRE(res.ci_high == 1.0);
    REQUIRE(res.ci_low <= res.ci_high);
    REQUIRE(res.n_boot == 500);

    const auto res2 = bootstrap_auroc(scores, labels, 500, 0.05, 42);
    REQUIRE(res2.ci_low == res.ci_low);
    REQUIRE(res2.ci_high == res.ci_high);

    // On overlapping scores, a different seed draws different resamples.
    std::vector<double> noisy(scores);
    for (auto& s : noisy) s += rng.normal(0.0, 0.5);
    const auto n1 = bootstrap_auroc(noisy, labels, 500, 0.05, 42);
    const auto n2 = bootstrap_auroc(noisy, labels, 500, 0.05, 43);
    REQUIRE((n1.ci_low != n2.ci_low || n1.ci_high != n2.ci_high));
}

TEST_CASE("bootstrap_auroc: null data CIs contain 0.5 in at least 18 of 20 seeds") {
    Rng rng(34);
    const std::size_t n = 2000;
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    int contain = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto res = bootstrap_auroc(scores, labels, 1000, 0.05, seed);
        if (res.ci_low <= 0.5 && 0.5 <= res.ci_high) ++contain;
    }
    REQUIRE(contain >= 18);
}

TEST_CASE("bootstrap_auroc: degenerate resamples are counted or fatal") {
    SECTION("rare class leads to counted degenerates") {
        const std::vector<double> scores = {0.9, 0.1, 0.2, 0.3};
        const std::vector<std::uint8_t> labels = {1, 0, 0, 0};
        const auto res = bootstrap_auroc(scores, labels, 200, 0.05, 7);
        REQUIRE(res.n_degenerate_resamples > 0);
        REQUIRE(res.n_degenerate_resamples * 2 <= 200);
    }
    SECTION("more than half degenerate is fatal for some seed") {
        const std::vector<double> scores = {0.9, 0.1};
        const std::vector<std::uint8_t> labels = {1, 0};
        bool threw = false;
        for (std::uint64_t seed = 0; seed < 50 && !threw; ++seed) {
            try {
                (void)bootstrap_auroc(scores, labels, 99, 0.05, seed);
            } catch (const DataError&) {
                threw = true;
            }
        }
        REQUIRE(threw);
    }
    SECTION("single-class input is fatal") {
        REQUIRE_THROWS_AS(bootstrap_auroc(std::vector<double>{0.1, 0.2},
                                          std::vector<std::uint8_t>{1, 1}, 10, 0.05, 1),
                          DataError);
    }
}

TEST_CASE("fit_isotonic: reference fits") {
    SECTION("single violation pools to the mean") {
        const auto m = fit_isotonic(std::vector<double>{1.0, 2.0}, std::vector<std::uint8_t>{1, 0});
        REQUIRE(m.values == std::vector<double>{0.5, 0.5});
    }
    SECTION("partial pooling") {
        const auto m = fit_isotonic(std::vector<double>{1.0, 2.0, 3.0},
                                    std::vector<std::uint8_t>{1, 0, 1});
        REQUIRE(m.values == std::vector<double>{0.5, 0.5, 1.0});
    }
    SECTION("already monotone stays put") {
        const auto m = fit_isotonic(std::vector<double>{1.0, 2.0}, std::vector<std::uint8_t>{0, 1});
        REQUIRE(m.values == std::vector<double>{0.0, 1.0});
    }
    SECTION("score ties are pre-pooled by averaging") {
        const auto m = fit_isotonic(std::vector<double>{1.0, 1.0, 2.0},
                                    std::vector<std::uint8_t>{1, 0, 1});
        REQUIRE(m.breakpoints == std::vector<double>{1.0, 2.0});
        REQUIRE(m.values == std::vector<double>{0.5, 1.0});
    }
}

TEST_CASE("fit_isotonic matches the constrained least-squares oracle for n <= 6") {
    Rng rng(35);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(5);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.uniform_index(4));  // frequent ties
            labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        const auto model = fit_isotonic(scores, labels);

        // Independent pooling of ties for the oracle input.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
        std::vector<double> ys, ws;
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            double sum = 0.0;
            while (j < n && scores[order[j]] == scores[order[i]]) sum += labels[order[j++]];
            ys.push_back(sum / static_cast<double>(j - i));
            ws.push_back(static_cast<double>(j - i));
            i = j;
        }
        const auto brute = oracles::brute_isotonic(ys, ws);
        REQUIRE(model.values.size() == brute.size());
        for (std::size_t k = 0; k < brute.size(); ++k)
            REQUIRE_THAT(model.values[k], Catch::Matchers::WithinAbs(brute[k], 1e-9));
        for (std::size_t k = 1; k < model.values.size(); ++k)
            REQUIRE(model.values[k] >= model.values[k - 1]);
    }
}

TEST_CASE("isotonic apply: step interpolation with clamping") {
    IsotonicModel m;
    m.breakpoints = {0.2, 0.5, 0.8};
    m.values = {0.1, 0.4, 0.9};
    REQUIRE(m.apply(0.0) == 0.1);   // clamp below
    REQUIRE(m.apply(0.2) == 0.1);
    REQUIRE(m.apply(0.35) == 0.1);  // step holds the left value
    REQUIRE(m.apply(0.5) == 0.4);
    REQUIRE(m.apply(0.79) == 0.4);
    REQUIRE(m.apply(0.8) == 0.9);
    REQUIRE(m.apply(1.0) == 0.9);   // clamp above
}

TEST_CASE("calibration does not reduce AUROC beyond tie effects") {
    Rng rng(36);
    const std::size_t n = 400;
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.normal();
        labels[i] = rng.bernoulli(sigmoid(2.0 * scores[i])) ? 1 : 0;
    }
    const auto cal = fit_isotonic(scores, labels);
    const auto calibrated = cal.apply(scores);
    const double before = *auroc(scores, labels);
    const double after = *auroc(calibrated, labels);

    double tied = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (labels[j]) continue;
            pairs += 1.0;
            if (calibrated[i] == calibrated[j]) tied += 1.0;
        }
    }
    REQUIRE(after >= before - tied / pairs - 1e-12);
}

TEST_CASE("calibration_curve") {
    SECTION("perfectly calibrated probabilities land on the diagonal") {
        Rng rng(37);
        const std::size_t n = 50000;
        std::vector<double> probs(n);
        std::vector<std::uint8_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            probs[i] = rng.uniform();
            labels[i] = rng.bernoulli(probs[i]) ? 1 : 0;
        }
        const auto curve = calibration_curve(probs, labels, 10);
        REQUIRE(curve.total_count() == n);
        for (const auto& bin : curve.bins)
            REQUIRE(std::fabs(bin.obs_freq - bin.mean_pred) < 0.02);
    }
    SECTION("all probabilities equal occupy a single bin") {
        const std::vector<double> probs(10, 0.5);
        const std::vector<std::uint8_t> labels = {1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
        const auto curve = calibration_curve(probs, labels, 10);
        REQUIRE(curve.bins.size() == 1);
        REQUIRE(curve.bins[0].obs_freq == 0.5);
        REQUIRE(curve.bins[0].count == 10);
    }
    SECTION("two extreme probabilities populate exactly two bins") {
        const std::vector<double> probs = {0.05, 0.95, 0.05, 0.95};
        const std::vector<std::uint8_t> labels = {0, 1, 0, 1};
        const auto curve = calibration_curve(probs, labels, 10);
        REQUIRE(curve.bins.size() == 2);
        REQUIRE(curve.bins[0].lo == 0.0);
        REQUIRE(curve.bins[1].hi == 1.0);
    }
    SECTION("probability 1.0 falls into the top bin") {
        const std::vector<double> probs = {1.0, 0.0};
        const std::vector<std::uint8_t> labels = {1, 0};
        const auto curve = calibration_curve(probs, labels, 10);
        REQUIRE(curve.bins.size() == 2);
        REQUIRE(curve.total_count() == 2);
    }
}

TEST_CASE("decision_curve identities") {
    Rng rng(38);
    const std::size_t n = 500;
    std::vector<double> probs(n);
    std::vector<std::uint8_t> labels(n);
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = rng.uniform();
        labels[i] = rng.bernoulli(0.2) ? 1 : 0;
        n_pos += labels[i];
    }
    const double prevalence = static_cast<double>(n_pos) / static_cast<double>(n);

    SECTION("treat-none is identically zero; treat-all crosses zero at prevalence") {
        const std::vector<double> grid = {0.05, prevalence, 0.3};
        const auto curve = decision_curve(probs, labels, grid);
        for (double nb : curve.nb_none) REQUIRE(nb == 0.0);
        REQUIRE(std::fabs(curve.nb_all[1]) < 1e-12);
        // Reference formula at t = 0.1 with prevalence pi:
        const auto at = decision_curve(probs, labels, std::vector<double>{0.1});
        REQUIRE_THAT(at.nb_all[0],
                     Catch::Matchers::WithinAbs(prevalence - (1.0 - prevalence) * (0.1 / 0.9),
                                                1e-15));
        // And treat-all approaches the prevalence as t -> 0.
        const auto low = decision_curve(probs, labels, std::vector<double>{1e-9});
        REQUIRE_THAT(low.nb_all[0], Catch::Matchers::WithinAbs(prevalence, 1e-8));
    }
    SECTION("a perfect classifier earns the prevalence at every threshold") {
        std::vector<double> perfect(n);
        for (std::size_t i = 0; i < n; ++i) perfect[i] = static_cast<double>(labels[i]);
        const auto grid = threshold_grid(0.01, 0.50, 0.01);
        const auto curve = decision_curve(perfect, labels, grid);
        for (double nb : curve.nb_model) REQUIRE_THAT(nb, Catch::Matchers::WithinAbs(prevalence, 1e-15));
    }
    SECTION("textbook treat-all value: pi = 0.2 at t = 0.2 and t = 0.1") {
        std::vector<std::uint8_t> y(10, 0);
        y[0] = y[1] = 1;  // prevalence exactly 0.2
        std::vector<double> p(10, 0.5);
        const auto curve = decision_curve(p, y, std::vector<double>{0.2, 0.1});
        REQUIRE(std::fabs(curve.nb_all[0]) < 1e-12);
        REQUIRE_THAT(curve.nb_all[1], Catch::Matchers::WithinAbs(0.2 - 0.8 * (1.0 / 9.0), 1e-12));
    }
}

TEST_CASE("threshold_grid validation") {
    REQUIRE(threshold_grid(0.01, 0.50, 0.01).size() == 50);
    REQUIRE_THROWS_AS(threshold_grid(0.0, 0.5, 0.01), ConfigError);
    REQUIRE_THROWS_AS(threshold_grid(0.1, 1.0, 0.01), ConfigError);
    REQUIRE_THROWS_AS(threshold_grid(0.1, 0.5, 0.0), ConfigError);
}

TEST_CASE("evaluate_label composes and round-trips through JSON") {
    Rng rng(39);
    const std::size_t n_valid = 500, n_test = 400;
    std::vector<double> valid_scores(n_valid), test_scores(n_test);
    std::vector<std::uint8_t> y_valid(n_valid), y_test(n_test);
    for (std::size_t i = 0; i < n_valid; ++i) {
        valid_scores[i] = rng.uniform();
        y_valid[i] = rng.bernoulli(valid_scores[i]) ? 1 : 0;
    }
    for (std::size_t i = 0; i < n_test; ++i) {
        test_scores[i] = rng.uniform();
        y_test[i] = rng.bernoulli(test_scores[i]) ? 1 : 0;
    }
    const auto cal = fit_isotonic(valid_scores, y_valid);
    EvalConfig cfg;
    cfg.n_boot = 200;
    const auto report = evaluate_label("demo", test_scores, cal, y_test, cfg);
    REQUIRE(report.n_pos + report.n_neg == n_test);
    REQUIRE(report.auroc.point > 0.5);
    REQUIRE(report.dca.thresholds.size() == 50);
    REQUIRE(report.calibration.total_count() == n_test);

    const auto back = report_from_json(report_to_json(report));
    REQUIRE(back.label == report.label);
    REQUIRE(back.auroc.point == report.auroc.point);
    REQUIRE(back.auroc.ci_low == report.auroc.ci_low);
    REQUIRE(back.auroc.ci_high == report.auroc.ci_high);
    REQUIRE(back.n_pos == report.n_pos);
    REQUIRE(back.calibration.bins.size() == report.calibration.bins.size());
    for (std::size_t b = 0; b < back.calibration.bins.size(); ++b) {
        REQUIRE(back.calibration.bins[b].mean_pred == report.calibration.bins[b].mean_pred);
        REQUIRE(back.calibration.bins[b].obs_freq == report.calibration.bins[b].obs_freq);
        REQUIRE(back.calibration.bins[b].count == report.calibration.bins[b].count);
    }
    REQUIRE(back.dca.nb_model == report.dca.nb_model);
    REQUIRE(back.dca.nb_all == report.dca.nb_all);

    // Calibrator artifact round trip.
    const auto cal_back = parse_isotonic(serialize_isotonic(cal));
    REQUIRE(cal_back.breakpoints == cal.breakpoints);
    REQUIRE(cal_back.values == cal.values);
}
