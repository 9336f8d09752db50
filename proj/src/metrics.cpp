#include "diffclass/metrics.hpp"

#include "diffclass/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace diffclass {

using nlohmann::ordered_json;

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : c_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0)
{
    if (num_classes < 1) {
        throw std::invalid_argument("confusion matrix needs at least one class");
    }
}

std::size_t ConfusionMatrix::index(int i, int j) const
{
    if (i < 0 || i >= c_ || j < 0 || j >= c_) {
        throw std::invalid_argument(fmt::format("class index ({}, {}) out of range for {} classes", i, j, c_));
    }
    return static_cast<std::size_t>(i) * c_ + j;
}

void ConfusionMatrix::add(int truth, int predicted)
{
    ++counts_[index(truth, predicted)];
}

std::int64_t ConfusionMatrix::row_sum(int truth) const
{
    std::int64_t s = 0;
    for (int j = 0; j < c_; ++j) {
        s += count(truth, j);
    }
    return s;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const
{
    std::int64_t s = 0;
    for (int i = 0; i < c_; ++i) {
        s += count(i, predicted);
    }
    return s;
}

std::int64_t ConfusionMatrix::total() const
{
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const
{
    std::vector<std::vector<double>> out(static_cast<std::size_t>(c_), std::vector<double>(c_, 0.0));
    for (int i = 0; i < c_; ++i) {
        const auto rs = row_sum(i);
        if (rs == 0) {
            continue;
        }
        for (int j = 0; j < c_; ++j) {
            out[i][j] = static_cast<double>(count(i, j)) / static_cast<double>(rs);
        }
    }
    return out;
}

std::vector<int> ConfusionMatrix::empty_rows() const
{
    std::vector<int> out;
    for (int i = 0; i < c_; ++i) {
        if (row_sum(i) == 0) {
            out.push_back(i);
        }
    }
    return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other)
{
    if (other.c_ != c_) {
        throw std::invalid_argument("cannot add confusion matrices of different sizes");
    }
    for (std::size_t k = 0; k < counts_.size(); ++k) {
        counts_[k] += other.counts_[k];
    }
    return *this;
}

ConfusionMatrix confusion(const std::vector<int>& truths, const std::vector<int>& preds, int num_classes)
{
    if (truths.size() != preds.size()) {
        throw std::invalid_argument("truths and predictions differ in length");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        cm.add(truths[i], preds[i]);
    }
    return cm;
}

double balanced_accuracy(const ConfusionMatrix& cm, ZeroRowPolicy policy, std::vector<std::string>* warnings)
{
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        const auto rs = cm.row_sum(c);
        if (rs == 0) {
            if (policy == ZeroRowPolicy::Error) {
                throw std::invalid_argument(fmt::format("class {} has no ground-truth samples", c));
            }
            if (warnings) {
                warnings->push_back(fmt::format("balanced accuracy: class {} has no samples, excluded", c));
            }
            continue;
        }
        sum += static_cast<double>(cm.count(c, c)) / static_cast<double>(rs);
        ++used;
    }
    if (used == 0) {
        throw std::invalid_argument("balanced accuracy of an empty confusion matrix");
    }
    return sum / used;
}

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm, Averaging averaging)
{
    const auto total = cm.total();
    if (total == 0) {
        throw std::invalid_argument("precision/recall of an empty confusion matrix");
    }
    PrecisionRecallF1 out;
    for (int c = 0; c < cm.classes(); ++c) {
        const double tp = static_cast<double>(cm.count(c, c));
        const double pred = static_cast<double>(cm.col_sum(c));
        const double support = static_cast<double>(cm.row_sum(c));
        bool zero = false;
        const double p = pred > 0 ? tp / pred : (zero = true, 0.0);
        const double r = support > 0 ? tp / support : (zero = true, 0.0);
        const double f = p + r > 0 ? 2.0 * p * r / (p + r) : (zero = true, 0.0);
        if (zero) {
            out.zero_division.push_back(c);
        }
        const double w = averaging == Averaging::Macro ? 1.0 / cm.classes() : support / static_cast<double>(total);
        out.precision += w * p;
        out.recall += w * r;
        out.f1 += w * f;
    }
    return out;
}

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive)
{
    if (scores.size() != positive.size()) {
        throw std::invalid_argument("scores and labels differ in length");
    }
    // Midranks over ascending scores; Mann-Whitney U of the positives.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (positive[order[k]]) {
                rank_sum += midrank;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("AUC needs at least one positive and one negative");
    }
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

AucResult auc_roc(const std::vector<std::vector<double>>& scores, const std::vector<int>& truths)
{
    if (scores.size() != truths.size()) {
        throw std::invalid_argument("scores and truths differ in length");
    }
    if (scores.empty()) {
        throw InvalidState("AUC of an empty sample set");
    }
    const std::size_t c = scores.front().size();
    AucResult out;
    out.per_class.assign(c, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int used = 0;
    std::vector<double> column(scores.size());
    std::vector<bool> positive(scores.size());
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i].size() != c) {
                throw std::invalid_argument("score rows differ in length");
            }
            column[i] = scores[i][k];
            positive[i] = truths[i] == static_cast<int>(k);
            pos += positive[i];
        }
        if (pos == 0 || pos == scores.size()) {
            out.excluded.push_back(static_cast<int>(k));
            continue;
        }
        out.per_class[k] = binary_auc(column, positive);
        sum += out.per_class[k];
        ++used;
    }
    if (used == 0) {
        throw InvalidState("AUC undefined: no class has both positives and negatives");
    }
    out.value = sum / used;
    return out;
}

const std::vector<std::string>& MetricSet::names()
{
    static const std::vector<std::string> n{"bacc",           "precision",    "recall",   "f1",
                                            "precision_macro", "recall_macro", "f1_macro", "auc"};
    return n;
}

std::vector<double> MetricSet::values() const
{
    return {bacc, precision, recall, f1, precision_macro, recall_macro, f1_macro, auc};
}

MetricSet compute_metrics(const std::vector<int>& truths, const std::vector<int>& preds,
                          const std::vector<std::vector<double>>& scores, int num_classes,
                          std::vector<std::string>* warnings)
{
    const ConfusionMatrix cm = confusion(truths, preds, num_classes);
    MetricSet m;
    m.bacc = balanced_accuracy(cm, ZeroRowPolicy::ExcludeWarn, warnings);
    const auto w = precision_recall_f1(cm, Averaging::Weighted);
    const auto mac = precision_recall_f1(cm, Averaging::Macro);
    m.precision = w.precision;
    m.recall = w.recall;
    m.f1 = w.f1;
    m.precision_macro = mac.precision;
    m.recall_macro = mac.recall;
    m.f1_macro = mac.f1;
    if (warnings && !mac.zero_division.empty()) {
        std::string list;
        for (int c : mac.zero_division) {
            list += (list.empty() ? "" : ", ") + std::to_string(c);
        }
        warnings->push_back("precision/recall: zero denominator for class(es) " + list);
    }
    const auto auc = auc_roc(scores, truths);
    m.auc = auc.value;
    if (warnings) {
        for (int c : auc.excluded) {
            warnings->push_back(fmt::format("AUC: class {} excluded (no positives or no negatives)", c));
        }
    }
    return m;
}

MeanStd mean_std(const std::vector<double>& values)
{
    if (values.size() < 2) {
        throw std::invalid_argument("aggregation needs at least 2 values, got " + std::to_string(values.size()));
    }
    const double k = static_cast<double>(values.size());
    // Shifted by the first value so equal inputs give exactly zero spread.
    const double origin = values.front();
    double shift = 0.0;
    for (double v : values) {
        shift += v - origin;
    }
    shift /= k;
    double ss = 0.0;
    for (double v : values) {
        const double d = (v - origin) - shift;
        ss += d * d;
    }
    return {origin + shift, std::sqrt(ss / (k - 1.0))};
}

std::map<std::string, MeanStd> aggregate_folds(const std::vector<MetricSet>& sets)
{
    if (sets.size() < 2) {
        throw std::invalid_argument("fold aggregation needs at least 2 metric sets");
    }
    std::map<std::string, MeanStd> out;
    const auto& names = MetricSet::names();
    for (std::size_t m = 0; m < names.size(); ++m) {
        std::vector<double> column;
        for (const auto& s : sets) {
            column.push_back(s.values()[m]);
        }
        out[names[m]] = mean_std(column);
    }
    return out;
}

std::string format_mean_std(const MeanStd& v, int digits)
{
    return fmt::format("{:.{}f} ± {:.{}f}", v.mean, digits, v.std, digits);
}

namespace {

ordered_json matrix_json(const ConfusionMatrix& cm)
{
    ordered_json rows = ordered_json::array();
    for (int i = 0; i < cm.classes(); ++i) {
        ordered_json row = ordered_json::array();
        for (int j = 0; j < cm.classes(); ++j) {
            row.push_back(cm.count(i, j));
        }
        rows.push_back(row);
    }
    return rows;
}

ordered_json metrics_json(const MetricSet& m)
{
    ordered_json j;
    const auto v = m.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
        j[MetricSet::names()[k]] = v[k];
    }
    return j;
}

}  // namespace

ordered_json EvalReport::to_json() const
{
    ordered_json j;
    j["classes"] = classes;
    ordered_json runs_json = ordered_json::array();
    for (std::size_t r = 0; r < runs.size(); ++r) {
        runs_json.push_back({{"name", run_names[r]},
                             {"metrics", metrics_json(runs[r])},
                             {"confusion", matrix_json(run_confusions[r])}});
    }
    j["runs"] = runs_json;
    if (!aggregate.empty()) {
        ordered_json agg;
        for (const auto& name : MetricSet::names()) {
            const auto& a = aggregate.at(name);
            agg[name] = {{"mean", a.mean}, {"std", a.std}, {"text", format_mean_std(a)}};
        }
        j["aggregate"] = agg;
    }
    j["pooled_confusion"] = matrix_json(pooled);
    j["pooled_confusion_normalized"] = pooled.row_normalized();
    j["warnings"] = warnings;
    return j;
}

std::string EvalReport::summary() const
{
    std::string out = fmt::format("{:<10}", "run");
    for (const auto& n : MetricSet::names()) {
        out += fmt::format(" {:>16}", n);
    }
    out += '\n';
    for (std::size_t r = 0; r < runs.size(); ++r) {
        out += fmt::format("{:<10}", run_names[r]);
        for (double v : runs[r].values()) {
            out += fmt::format(" {:>16.4f}", v);
        }
        out += '\n';
    }
    if (!aggregate.empty()) {
        out += fmt::format("{:<10}", "mean±std");
        for (const auto& n : MetricSet::names()) {
            // "±" is two bytes in UTF-8; pad by hand.
            const std::string text = format_mean_std(aggregate.at(n));
            out += std::string(text.size() < 18 ? 18 - text.size() : 1, ' ') + text;
        }
        out += '\n';
    }
    return out;
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& classes, bool normalized)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "truth\\pred";
    for (const auto& c : classes) {
        out << ',' << c;
    }
    out << '\n';
    const auto norm = cm.row_normalized();
    for (int i = 0; i < cm.classes(); ++i) {
        out << classes[static_cast<std::size_t>(i)];
        for (int j = 0; j < cm.classes(); ++j) {
            if (normalized) {
                out << ',' << fmt::format("{:.6f}", norm[i][j]);
            } else {
                out << ',' << cm.count(i, j);
            }
        }
        out << '\n';
    }
}

void EvalReport::write(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + (dir / "report.json").string());
        }
        out << to_json().dump(2) << '\n';
    }
    for (std::size_t r = 0; r < runs.size(); ++r) {
        write_confusion_csv(dir / ("confusion_" + run_names[r] + ".csv"), run_confusions[r], classes, false);
        write_confusion_csv(dir / ("confusion_" + run_names[r] + "_normalized.csv"), run_confusions[r], classes,
                            true);
    }
    write_confusion_csv(dir / "confusion_pooled.csv", pooled, classes, false);
    write_confusion_csv(dir / "confusion_pooled_normalized.csv", pooled, classes, true);
    std::ofstream out(dir / "summary.txt", std::ios::trunc);
    out << summary();
}

}  // namespace diffclass
