#pragma once

// Classification metrics and fold aggregation.
//
// Balanced accuracy is the mean of per-class recall. A commonly reproduced
// two-class formula writes its second term as TN/(TN + TP); that is not a
// recall and is treated as a typo, not implemented.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace diffclass {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 2);

    int classes() const { return c_; }
    void add(int truth, int predicted);
    std::int64_t count(int truth, int predicted) const { return counts_[index(truth, predicted)]; }
    std::int64_t row_sum(int truth) const;
    std::int64_t col_sum(int predicted) const;
    std::int64_t total() const;

    // Each nonzero row divided by its sum; zero rows stay zero.
    std::vector<std::vector<double>> row_normalized() const;
    std::vector<int> empty_rows() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t index(int i, int j) const;
    int c_;
    std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(const std::vector<int>& truths, const std::vector<int>& preds, int num_classes);

enum class ZeroRowPolicy { Error, ExcludeWarn };

// Mean of per-class recall. Zero rows throw std::invalid_argument under
// ZeroRowPolicy::Error; otherwise they are skipped and reported in `warnings`.
double balanced_accuracy(const ConfusionMatrix& cm, ZeroRowPolicy policy = ZeroRowPolicy::Error,
                         std::vector<std::string>* warnings = nullptr);

enum class Averaging { Macro, Weighted };

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<int> zero_division;  // classes where some ratio had a zero denominator
};

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm, Averaging averaging = Averaging::Weighted);

struct AucResult {
    double value = 0.0;
    std::vector<int> excluded;  // classes without positives or without negatives
    std::vector<double> per_class;  // NaN for excluded classes
};

// AUC of one score column: (concordant + ties / 2) / (P * N).
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

// Macro one-vs-rest AUC. Throws InvalidState when every class is excluded.
AucResult auc_roc(const std::vector<std::vector<double>>& scores, const std::vector<int>& truths);

struct MetricSet {
    double bacc = 0.0;
    double precision = 0.0;  // weighted
    double recall = 0.0;
    double f1 = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
    double auc = 0.0;

    static const std::vector<std::string>& names();
    std::vector<double> values() const;
};

MetricSet compute_metrics(const std::vector<int>& truths, const std::vector<int>& preds,
                          const std::vector<std::vector<double>>& scores, int num_classes,
                          std::vector<std::string>* warnings = nullptr);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample (k - 1) standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

// Per metric name; needs at least two sets.
std::map<std::string, MeanStd> aggregate_folds(const std::vector<MetricSet>& sets);

// "0.8125 ± 0.0312"
std::string format_mean_std(const MeanStd& v, int digits = 4);

struct EvalReport {
    std::vector<std::string> classes;
    std::vector<std::string> run_names;  // one per model
    std::vector<MetricSet> runs;
    std::vector<ConfusionMatrix> run_confusions;
    ConfusionMatrix pooled{2};
    std::map<std::string, MeanStd> aggregate;  // empty with a single run
    std::vector<std::string> warnings;

    nlohmann::ordered_json to_json() const;
    // report.json, confusion_<run>.csv, confusion_<run>_normalized.csv,
    // confusion_pooled*.csv and summary.txt under `dir`.
    void write(const std::filesystem::path& dir) const;
    std::string summary() const;
};

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& classes, bool normalized);

}  // namespace diffclass
