#include <catch2/catch_amalgamated.hpp>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/explain.hpp"
#include "ecg2cxr/rng.hpp"

#include "oracles.hpp"

using namespace ecg2cxr;

namespace {

FeatureMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows, std::size_t d) {
    FeatureMatrix m;
    for (std::size_t c = 0; c < d; ++c) m.feature_names.push_back("f" + std::to_string(c));
    m.n_rows = rows.size();
    for (const auto& r : rows) m.cells.insert(m.cells.end(), r.begin(), r.end());
    return m;
}

StumpEnsemble random_stump_model(Rng& rng, std::size_t d, std::size_t n_stumps) {
    StumpEnsemble model;
    model.base_score = rng.uniform(0.2, 0.8);
    for (std::size_t c = 0; c < d; ++c) model.feature_names.push_back("f" + std::to_string(c));
    for (std::size_t s = 0; s < n_stumps; ++s) {
        Stump st;
        st.feature = static_cast<int>(rng.uniform_index(d));
        st.threshold = rng.normal();
        st.left_value = rng.normal(0.0, 0.4);
        st.right_value = rng.normal(0.0, 0.4);
        st.default_left = rng.bernoulli(0.5);
        model.stumps.push_back(st);
    }
    return model;
}

}  // namespace

TEST_CASE("explain_row: one stump with a symmetric background") {
    StumpEnsemble model;
    model.base_score = 0.5;
    model.feature_names = {"f0", "f1"};
    Stump s;
    s.feature = 0;
    s.threshold = 0.0;
    s.left_value = -1.0;
    s.right_value = 1.0;
    model.stumps.push_back(s);

    const auto background = matrix_from_rows({{-1.0, 0.0}, {1.0, 0.0}}, 2);
    const auto ex = explain_row(model, std::vector<double>{2.0, 5.0}, background);
    REQUIRE(ex.base_value == 0.0);  // logit(0.5) + mean leaf (-1+1)/2
    REQUIRE(ex.contributions[0] == 1.0);
    REQUIRE(ex.contributions[1] == 0.0);
    REQUIRE(ex.margin == 1.0);
}

TEST_CASE("explain_row: empty ensemble") {
    StumpEnsemble model;
    model.base_score = 0.7;
    model.feature_names = {"f0"};
    const auto background = matrix_from_rows({{0.0}}, 1);
    const auto ex = explain_row(model, std::vector<double>{4.0}, background);
    REQUIRE(ex.contributions == std::vector<double>{0.0});
    REQUIRE(ex.base_value == logit(0.7));
    REQUIRE(ex.margin == logit(0.7));
}

TEST_CASE("explain_row: local accuracy on random models") {
    Rng rng(21);
    const std::size_t d = 7;
    const auto model = random_stump_model(rng, d, 500);
    std::vector<std::vector<double>> bg_rows(200, std::vector<double>(d));
    for (auto& r : bg_rows)
        for (auto& v : r) v = rng.bernoulli(0.15) ? kMissing : rng.normal();
    const auto background = matrix_from_rows(bg_rows, d);
    const ShapBackground shap_bg(model, background);

    std::vector<double> row(d);
    for (int i = 0; i < 50; ++i) {
        for (auto& v : row) v = rng.bernoulli(0.15) ? kMissing : rng.normal();
        const auto ex = explain_row(model, row, shap_bg);
        double total = ex.base_value;
        for (double c : ex.contributions) total += c;
        REQUIRE(std::fabs(total - ex.margin) < 1e-9);
        REQUIRE_THAT(ex.margin, Catch::Matchers::WithinAbs(model.margin(row), 1e-12));
    }
}

TEST_CASE("explain_row matches the brute-force coalition oracle for d <= 3") {
    Rng rng(22);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t d = 1 + rng.uniform_index(3);
        const auto model = random_stump_model(rng, d, 1 + rng.uniform_index(12));
        std::vector<std::vector<double>> bg_rows(1 + rng.uniform_index(8),
                                                 std::vector<double>(d));
        for (auto& r : bg_rows)
            for (auto& v : r) v = rng.bernoulli(0.2) ? kMissing : rng.normal();
        const auto background = matrix_from_rows(bg_rows, d);

        std::vector<double> row(d);
        for (auto& v : row) v = rng.bernoulli(0.2) ? kMissing : rng.normal();

        const auto ex = explain_row(model, row, background);
        const auto phi = oracles::brute_shapley(model, row, background);
        for (std::size_t f = 0; f < d; ++f)
            REQUIRE_THAT(ex.contributions[f], Catch::Matchers::WithinAbs(phi[f], 1e-9));
    }
}

TEST_CASE("dummy feature has exactly zero contribution") {
    Rng rng(23);
    StumpEnsemble model = random_stump_model(rng, 4, 60);
    for (auto& s : model.stumps)
        if (s.feature == 2) s.feature = 1;  // feature 2 appears in no stump
    std::vector<std::vector<double>> bg_rows(30, std::vector<double>(4));
    for (auto& r : bg_rows)
        for (auto& v : r) v = rng.normal();
    const auto background = matrix_from_rows(bg_rows, 4);
    const ShapBackground shap_bg(model, background);
    std::vector<double> row(4);
    for (int i = 0; i < 40; ++i) {
        for (auto& v : row) v = rng.normal();
        const auto ex = explain_row(model, row, shap_bg);
        REQUIRE(ex.contributions[2] == 0.0);
    }
}

TEST_CASE("additivity: concatenated ensembles explain as the sum of their parts") {
    // Dyadic leaf values, base score 1/2 (zero margin) and a power-of-two
    // background count make every intermediate quantity exactly representable,
    // so additivity holds bit-for-bit rather than merely to rounding error.
    Rng rng(24);
    const std::size_t d = 5;
    auto dyadic_model = [&](std::size_t n_stumps) {
        StumpEnsemble model;
        model.base_score = 0.5;
        for (std::size_t c = 0; c < d; ++c) model.feature_names.push_back("f" + std::to_string(c));
        for (std::size_t s = 0; s < n_stumps; ++s) {
            Stump st;
            st.feature = static_cast<int>(rng.uniform_index(d));
            st.threshold = rng.normal();
            st.left_value =
                static_cast<double>(static_cast<int>(rng.uniform_index(4096)) - 2048) / 1024.0;
            st.right_value =
                static_cast<double>(static_cast<int>(rng.uniform_index(4096)) - 2048) / 1024.0;
            st.default_left = rng.bernoulli(0.5);
            model.stumps.push_back(st);
        }
        return model;
    };
    const auto a = dyadic_model(40);
    const auto b = dyadic_model(30);

    StumpEnsemble both = a;
    both.stumps.insert(both.stumps.end(), b.stumps.begin(), b.stumps.end());

    std::vector<std::vector<double>> bg_rows(32, std::vector<double>(d));
    for (auto& r : bg_rows)
        for (auto& v : r) v = rng.bernoulli(0.1) ? kMissing : rng.normal();
    const auto background = matrix_from_rows(bg_rows, d);

    std::vector<double> row(d);
    for (int i = 0; i < 30; ++i) {
        for (auto& v : row) v = rng.bernoulli(0.1) ? kMissing : rng.normal();
        const auto ex_a = explain_row(a, row, background);
        const auto ex_b = explain_row(b, row, background);
        const auto ex_both = explain_row(both, row, background);
        for (std::size_t f = 0; f < d; ++f)
            REQUIRE(ex_both.contributions[f] == ex_a.contributions[f] + ex_b.contributions[f]);
        REQUIRE(ex_both.base_value == ex_a.base_value + ex_b.base_value);
        REQUIRE(ex_both.margin == ex_a.margin + ex_b.margin);
    }
}

TEST_CASE("summarize: planted signal ranks first and ranking is deterministic") {
    Rng rng(25);
    const std::size_t n = 3000, d = 6;
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : rows[i]) v = rng.normal();
        y[i] = rng.bernoulli(sigmoid(2.2 * rows[i][3])) ? 1 : 0;
    }
    const auto m = matrix_from_rows(rows, d);
    BoostConfig cfg;
    cfg.rounds = 150;
    const auto model = train(m, y, cfg);

    const auto sum = summarize(model, m, m);
    REQUIRE(sum.rank[3] == 0);
    REQUIRE(sum.records.size() == n * d);

    const auto sum2 = summarize(model, m, m);
    REQUIRE(sum2.rank == sum.rank);
    REQUIRE(sum2.mean_abs == sum.mean_abs);
}

TEST_CASE("summarize: empty ensemble yields all-zero importance with name-ordered ties") {
    StumpEnsemble model;
    model.base_score = 0.5;
    model.feature_names = {"zeta", "alpha", "mid"};
    const auto data = matrix_from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}}, 3);
    FeatureMatrix named = data;
    named.feature_names = model.feature_names;
    const auto sum = summarize(model, named, named);
    REQUIRE(sum.mean_abs == std::vector<double>{0.0, 0.0, 0.0});
    // Ties resolve by feature name: alpha, mid, zeta.
    REQUIRE(sum.rank[0] == 2);
    REQUIRE(sum.rank[1] == 0);
    REQUIRE(sum.rank[2] == 1);
}

TEST_CASE("explain error paths") {
    Rng rng(26);
    const auto model = random_stump_model(rng, 3, 5);
    const auto background = matrix_from_rows({{0.0, 0.0, 0.0}}, 3);
    REQUIRE_THROWS_AS(explain_row(model, std::vector<double>{1.0}, background), DataError);
    FeatureMatrix empty;
    empty.feature_names = model.feature_names;
    REQUIRE_THROWS_AS(ShapBackground(model, empty), DataError);
}
