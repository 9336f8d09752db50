#include "support.hpp"

#include "oracles.hpp"

#include "diffclass/error.hpp"
#include "diffclass/metrics.hpp"

#include <numeric>

using namespace diffclass;

namespace {

ConfusionMatrix from_counts(const oracle::Counts& counts)
{
    ConfusionMatrix cm(static_cast<int>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i) {
        for (std::size_t j = 0; j < counts.size(); ++j) {
            for (std::int64_t k = 0; k < counts[i][j]; ++k) {
                cm.add(static_cast<int>(i), static_cast<int>(j));
            }
        }
    }
    return cm;
}

// Random counts with every row nonzero.
oracle::Counts random_counts(Rng& rng, int classes)
{
    oracle::Counts m(static_cast<std::size_t>(classes), std::vector<std::int64_t>(static_cast<std::size_t>(classes)));
    for (int i = 0; i < classes; ++i) {
        const bool sparse = rng() % 4 == 0;
        for (int j = 0; j < classes; ++j) {
            m[i][j] = sparse && rng() % 2 ? 0 : static_cast<std::int64_t>(rng() % 30);
        }
        if (std::all_of(m[i].begin(), m[i].end(), [](auto v) { return v == 0; })) {
            m[i][rng() % classes] = 1 + static_cast<std::int64_t>(rng() % 5);
        }
    }
    return m;
}

struct Scored {
    std::vector<std::vector<double>> scores;
    std::vector<int> truths;
};

// Distribution rows; coarse values so ties happen often.
Scored random_scores(Rng& rng, int classes, int n)
{
    Scored s;
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(static_cast<std::size_t>(classes));
        double sum = 0.0;
        for (double& v : row) {
            sum += (v = 1.0 + static_cast<double>(rng() % 6));
        }
        for (double& v : row) {
            v /= sum;
        }
        s.scores.push_back(row);
        s.truths.push_back(static_cast<int>(rng() % classes));
    }
    return s;
}

}  // namespace

TEST_CASE("confusion counts")
{
    const auto cm = confusion({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    CHECK(cm.count(0, 0) == 1);
    CHECK(cm.count(0, 1) == 1);
    CHECK(cm.count(1, 0) == 0);
    CHECK(cm.count(1, 1) == 2);
    CHECK(cm.total() == 4);
    CHECK(cm.row_sum(1) == 2);
    CHECK(cm.col_sum(1) == 3);

    const auto perfect = confusion({0, 1, 2, 2, 1}, {0, 1, 2, 2, 1}, 3);
    const auto norm = perfect.row_normalized();
    for (int i = 0; i < 3; ++i) {
        CHECK(norm[i][i] == 1.0);
    }
    CHECK(balanced_accuracy(perfect) == 1.0);

    const auto empty = confusion({}, {}, 3);
    CHECK(empty.total() == 0);
    CHECK(empty.empty_rows() == std::vector<int>{0, 1, 2});
    for (const auto& row : empty.row_normalized()) {
        for (double v : row) {
            CHECK(v == 0.0);
        }
    }

    CHECK_THROWS_AS(confusion({0, 2}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion({0, 1}, {0, -1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion({0, 1}, {0}, 2), std::invalid_argument);
    ConfusionMatrix a(2);
    CHECK_THROWS_AS(a += ConfusionMatrix(3), std::invalid_argument);
    a += cm;
    a += cm;
    CHECK(a.count(1, 1) == 4);
}

TEST_CASE("binary worked examples")
{
    const auto cm = from_counts({{8, 2}, {4, 6}});
    CHECK(std::abs(balanced_accuracy(cm) - 0.7) < 1e-15);
    const auto macro = precision_recall_f1(cm, Averaging::Macro);
    CHECK(std::abs(macro.precision - (8.0 / 12.0 + 6.0 / 8.0) / 2.0) < 1e-15);
    CHECK(std::abs(macro.precision - 0.7083) < 5e-5);
    CHECK(macro.zero_division.empty());

    const auto degenerate = from_counts({{5, 0}, {7, 0}});
    CHECK(balanced_accuracy(degenerate) == 0.5);
    const auto prf = precision_recall_f1(degenerate, Averaging::Macro);
    CHECK(prf.zero_division == std::vector<int>{1});

    const auto perfect = from_counts({{3, 0, 0}, {0, 4, 0}, {0, 0, 1}});
    for (auto avg : {Averaging::Macro, Averaging::Weighted}) {
        const auto p = precision_recall_f1(perfect, avg);
        CHECK(p.precision == 1.0);
        CHECK(p.recall == 1.0);
        CHECK(p.f1 == 1.0);
    }
    CHECK_THROWS_AS(precision_recall_f1(ConfusionMatrix(2)), std::invalid_argument);
}

TEST_CASE("zero-row policies")
{
    const auto cm = from_counts({{4, 1, 0}, {0, 0, 0}, {1, 0, 3}});
    CHECK_THROWS_AS(balanced_accuracy(cm), std::invalid_argument);
    std::vector<std::string> warnings;
    const double b = balanced_accuracy(cm, ZeroRowPolicy::ExcludeWarn, &warnings);
    CHECK(std::abs(b - (0.8 + 0.75) / 2.0) < 1e-15);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("class 1") != std::string::npos);
    CHECK(cm.empty_rows() == std::vector<int>{1});
    CHECK_THROWS_AS(balanced_accuracy(ConfusionMatrix(2), ZeroRowPolicy::ExcludeWarn), std::invalid_argument);
}

TEST_CASE("metric oracles on random confusion matrices")
{
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + static_cast<int>(rng() % 7);
        const auto counts = random_counts(rng, classes);
        const auto cm = from_counts(counts);
        REQUIRE(std::abs(balanced_accuracy(cm) - oracle::recall_mean(counts)) < 1e-12);
        for (bool weighted : {false, true}) {
            const auto got = precision_recall_f1(cm, weighted ? Averaging::Weighted : Averaging::Macro);
            const auto want = oracle::prf(counts, weighted);
            REQUIRE(std::abs(got.precision - want.p) < 1e-12);
            REQUIRE(std::abs(got.recall - want.r) < 1e-12);
            REQUIRE(std::abs(got.f1 - want.f) < 1e-12);
        }
        // Weighted recall is plain accuracy.
        double diag = 0.0;
        for (int c = 0; c < classes; ++c) {
            diag += static_cast<double>(counts[c][c]);
        }
        REQUIRE(std::abs(precision_recall_f1(cm).recall - diag / cm.total()) < 1e-12);
        const auto norm = cm.row_normalized();
        for (const auto& row : norm) {
            double s = 0.0;
            for (double v : row) {
                s += v;
            }
            REQUIRE(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("AUC worked examples")
{
    CHECK(binary_auc({0.9, 0.4, 0.5, 0.1}, {true, true, false, false}) == 0.75);
    CHECK(binary_auc({0.9, 0.8, 0.2, 0.1}, {true, true, false, false}) == 1.0);
    CHECK(binary_auc({0.1, 0.2, 0.8, 0.9}, {true, true, false, false}) == 0.0);
    CHECK(binary_auc({0.5, 0.5}, {true, false}) == 0.5);
    CHECK_THROWS_AS(binary_auc({0.5, 0.6}, {true, true}), std::invalid_argument);
    CHECK_THROWS_AS(binary_auc({0.5}, {true, false}), std::invalid_argument);

    // Two-class macro AUC averages the two complementary columns.
    const auto r = auc_roc({{0.1, 0.9}, {0.6, 0.4}, {0.5, 0.5}, {0.9, 0.1}}, {1, 1, 0, 0});
    CHECK(r.value == 0.75);
    CHECK(r.excluded.empty());

    // A class with no positives is excluded.
    const auto ex = auc_roc({{0.7, 0.2, 0.1}, {0.3, 0.6, 0.1}, {0.6, 0.3, 0.1}}, {0, 1, 0});
    CHECK(ex.excluded == std::vector<int>{2});
    CHECK(std::isnan(ex.per_class[2]));
    CHECK(ex.value == 1.0);
    CHECK_THROWS_AS(auc_roc({{0.5, 0.5}, {0.4, 0.6}}, {0, 0}), InvalidState);
    CHECK_THROWS_AS(auc_roc({}, {}), InvalidState);
}

TEST_CASE("AUC matches exhaustive pair counting")
{
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int classes = 2 + static_cast<int>(rng() % 5);
        const int n = 2 + static_cast<int>(rng() % 199);
        const auto s = random_scores(rng, classes, n);
        std::vector<double> per;
        for (int c = 0; c < classes; ++c) {
            std::vector<double> pos, neg;
            for (int i = 0; i < n; ++i) {
                (s.truths[i] == c ? pos : neg).push_back(s.scores[i][c]);
            }
            if (!pos.empty() && !neg.empty()) {
                per.push_back(oracle::pair_auc(pos, neg));
            }
        }
        if (per.empty()) {
            CHECK_THROWS_AS(auc_roc(s.scores, s.truths), InvalidState);
            continue;
        }
        const auto got = auc_roc(s.scores, s.truths);
        REQUIRE(std::abs(got.value - oracle::mean(per)) < 1e-9);
        REQUIRE(got.excluded.size() == static_cast<std::size_t>(classes) - per.size());
    }
}

TEST_CASE("metrics ignore sample order")
{
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const int classes = 2 + static_cast<int>(rng() % 4);
        const int n = 12 + static_cast<int>(rng() % 40);
        auto s = random_scores(rng, classes, n);
        for (int c = 0; c < classes; ++c) {
            s.truths[c] = c;  // every class present
        }
        std::vector<int> preds;
        for (const auto& row : s.scores) {
            preds.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
        const auto base = compute_metrics(s.truths, preds, s.scores, classes);
        std::vector<std::size_t> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> t2, p2;
        std::vector<std::vector<double>> s2;
        for (std::size_t i : order) {
            t2.push_back(s.truths[i]);
            p2.push_back(preds[i]);
            s2.push_back(s.scores[i]);
        }
        const auto shuffled = compute_metrics(t2, p2, s2, classes);
        const auto a = base.values();
        const auto b = shuffled.values();
        for (std::size_t k = 0; k < a.size(); ++k) {
            REQUIRE(std::abs(a[k] - b[k]) < 1e-12);
        }
    }
}

TEST_CASE("compute_metrics fills every field")
{
    const std::vector<int> truths{0, 0, 1, 1, 2, 2};
    const std::vector<int> preds{0, 1, 1, 1, 2, 0};
    const std::vector<std::vector<double>> scores{{0.8, 0.1, 0.1}, {0.3, 0.6, 0.1}, {0.1, 0.8, 0.1},
                                                  {0.2, 0.7, 0.1}, {0.1, 0.1, 0.8}, {0.5, 0.1, 0.4}};
    const auto m = compute_metrics(truths, preds, scores, 3);
    const auto cm = confusion(truths, preds, 3);
    CHECK(m.bacc == balanced_accuracy(cm));
    CHECK(m.precision == precision_recall_f1(cm).precision);
    CHECK(m.f1_macro == precision_recall_f1(cm, Averaging::Macro).f1);
    CHECK(m.auc == auc_roc(scores, truths).value);
    CHECK(m.values().size() == MetricSet::names().size());
    CHECK(MetricSet::names().front() == "bacc");
}

TEST_CASE("fold aggregation")
{
    const auto two = mean_std({0.6, 0.7});
    CHECK(std::abs(two.mean - 0.65) < 1e-15);
    CHECK(std::abs(two.std - std::sqrt(0.005)) < 1e-15);
    CHECK(std::abs(two.std - 0.070711) < 5e-7);
    CHECK(mean_std({0.4, 0.4, 0.4}).std == 0.0);
    CHECK_THROWS_AS(mean_std({0.5}), std::invalid_argument);

    CHECK(format_mean_std({0.6457, 0.0430}) == "0.6457 ± 0.0430");
    CHECK(format_mean_std({0.7068, 0.0719}) == "0.7068 ± 0.0719");
    CHECK(format_mean_std({0.5, 0.25}, 2) == "0.50 ± 0.25");

    Rng rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 6);
        std::vector<MetricSet> sets(static_cast<std::size_t>(k));
        for (auto& s : sets) {
            s = MetricSet{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
        }
        const auto agg = aggregate_folds(sets);
        REQUIRE(agg.size() == MetricSet::names().size());
        for (std::size_t m = 0; m < MetricSet::names().size(); ++m) {
            std::vector<double> col;
            for (const auto& s : sets) {
                col.push_back(s.values()[m]);
            }
            const auto& got = agg.at(MetricSet::names()[m]);
            REQUIRE(std::abs(got.mean - oracle::mean(col)) < 1e-12);
            REQUIRE(std::abs(got.std - oracle::sample_std(col)) < 1e-12);
            REQUIRE(got.std >= 0.0);
        }
    }
    CHECK_THROWS_AS(aggregate_folds({MetricSet{}}), std::invalid_argument);
}

TEST_CASE("report files")
{
    EvalReport report;
    report.classes = {"a", "b"};
    report.run_names = {"fold0", "fold1"};
    report.run_confusions = {from_counts({{8, 2}, {4, 6}}), from_counts({{9, 1}, {0, 10}})};
    report.pooled = report.run_confusions[0];
    report.pooled += report.run_confusions[1];
    for (const auto& cm : report.run_confusions) {
        MetricSet m;
        m.bacc = balanced_accuracy(cm);
        report.runs.push_back(m);
    }
    report.aggregate = aggregate_folds(report.runs);
    report.warnings = {"something odd"};

    testing::TempDir dir("report");
    report.write(dir.path / "out");
    for (const char* f : {"report.json", "summary.txt", "confusion_fold0.csv", "confusion_fold1_normalized.csv",
                          "confusion_pooled.csv", "confusion_pooled_normalized.csv"}) {
        CHECK(std::filesystem::exists(dir.path / "out" / f));
    }
    CHECK(testing::read_text(dir.path / "out" / "confusion_pooled.csv") == "truth\\pred,a,b\n"
                                                                           "a,17,3\n"
                                                                           "b,4,16\n");
    CHECK(testing::read_text(dir.path / "out" / "confusion_fold0_normalized.csv") ==
          "truth\\pred,a,b\n"
          "a,0.800000,0.200000\n"
          "b,0.400000,0.600000\n");
    const auto j = nlohmann::ordered_json::parse(testing::read_text(dir.path / "out" / "report.json"));
    CHECK(j["runs"].size() == 2);
    CHECK(j["aggregate"]["bacc"]["text"] == format_mean_std(report.aggregate.at("bacc")));
    CHECK(j["pooled_confusion"][1][0] == 4);
    CHECK(j["warnings"][0] == "something odd");
    const auto summary = report.summary();
    CHECK(summary.find("fold1") != std::string::npos);
    CHECK(summary.find("±") != std::string::npos);

    // Writing twice gives identical bytes.
    report.write(dir.path / "again");
    CHECK(testing::read_text(dir.path / "out" / "report.json") == testing::read_text(dir.path / "again" / "report.json"));
    CHECK_THROWS_AS(write_confusion_csv(dir.path / "missing" / "x.csv", report.pooled, report.classes, false), IoError);
}
