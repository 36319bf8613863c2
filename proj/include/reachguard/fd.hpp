#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "reachguard/dataset.hpp"
#include "reachguard/mlp.hpp"
#include "reachguard/vbc.hpp"

namespace reachguard {

// Pixel classifier; sigma(logit) is the probability that the observation
// is unsafe.
struct FdParams {
    Mlp net;
};

FdParams make_fd(std::size_t pixel_count, std::vector<std::uint32_t> hidden);

struct FdTrainResult {
    FdParams params;
    std::vector<double> loss_curve;
};

// Binary cross-entropy. Throws for single-class data.
FdTrainResult train_fd(const Dataset& data, const TrainHyper& hyper, std::vector<std::uint32_t> hidden = {64, 64});

double fd_logit(const FdParams& p, const Observation& obs);
double fd_score(const FdParams& p, const Observation& obs);
std::vector<double> fd_scores(const FdParams& p, const std::vector<Observation>& obs);

double nonconformity(double y_hat, int y);

struct CalibrationResult {
    double q_hat = 1.0;
    double alpha = 0.05;
    std::size_t n = 0;
    // 1-based rank of q_hat among the sorted scores; k > n means degenerate.
    std::size_t k = 0;

    bool degenerate() const { return k > n; }
};

// k-th smallest score with k = ceil((n + 1)(1 - alpha)); q_hat = 1 if k > n.
CalibrationResult conformal_quantile(std::vector<double> scores, double alpha);

// Class-conditional calibration: scores of the positive records only.
CalibrationResult calibrate(const FdParams& p, const Dataset& calibration, double alpha);

// 1 iff score >= 1 - q_hat.
int fd_classify_score(double score, double q_hat);
int fd_classify(const FdParams& p, double q_hat, const Observation& obs);

struct GroupMetrics {
    std::string group;
    std::optional<double> recall;  // absent without positives
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> fpr;
    std::size_t n = 0;
    std::size_t positives = 0;
};

// Per (runway, d1, d2) group, followed by a pooled row named "all".
std::vector<GroupMetrics> evaluate_scores(const std::vector<double>& scores, const Dataset& test, double q_hat);
std::vector<GroupMetrics> evaluate(const FdParams& p, double q_hat, const Dataset& test);

struct RocPoint {
    double q_hat = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

std::vector<RocPoint> roc_sweep(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                                int steps = 100);

void write_metrics_csv(std::ostream& out, const std::vector<GroupMetrics>& rows);
void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points);

// Text record: q_hat, alpha, n, k, timestamp, dataset digest.
void write_calibration_record(std::ostream& out, const CalibrationResult& c, const std::string& timestamp,
                              const std::string& dataset_digest);
CalibrationResult read_calibration_record(std::istream& in);

}  // namespace reachguard
