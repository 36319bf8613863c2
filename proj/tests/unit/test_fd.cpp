#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/fd.hpp"

using namespace reachguard;

namespace {

Observation pixel_obs(std::vector<float> px, EnvParams d = {}) {
    Observation o;
    o.width = static_cast<int>(px.size());
    o.height = 1;
    o.pixels = std::move(px);
    o.env = d;
    return o;
}

// Positives are bright in the first pixel, negatives in the last.
Dataset separable(std::size_t n, std::uint64_t seed, bool flip = false) {
    Rng rng(seed);
    std::vector<LabeledObservation> r;
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = (i % 3) == 0;
        std::vector<float> px(6);
        for (auto& p : px) {
            p = static_cast<float>(uniform(rng, 0.0, 0.3));
        }
        px[pos ? 0 : 5] += 0.6f;
        r.push_back({pixel_obs(px), static_cast<std::uint8_t>(pos != flip ? 1 : 0)});
    }
    return make_dataset(std::move(r), true);
}

TrainHyper quick() {
    TrainHyper h;
    h.lr = 1e-2;
    h.epochs = 20;
    h.batch_size = 32;
    h.seed = 4;
    return h;
}

double accuracy(const FdParams& p, const Dataset& d) {
    std::size_t ok = 0;
    for (const auto& r : d.records) {
        ok += (fd_score(p, r.obs) >= 0.5) == (r.label == 1);
    }
    return static_cast<double>(ok) / static_cast<double>(d.records.size());
}

// k-th order statistic by full sort.
double brute_quantile(std::vector<double> s, double alpha) {
    const double n = static_cast<double>(s.size());
    const auto k = static_cast<std::size_t>(std::ceil((n + 1) * (1 - alpha) - 1e-9));
    if (k > s.size()) {
        return 1.0;
    }
    std::sort(s.begin(), s.end());
    return s[std::max<std::size_t>(k, 1) - 1];
}

}  // namespace

TEST_CASE("training on separable data") {
    const Dataset train = separable(600, 1);
    const FdTrainResult r = train_fd(train, quick(), {16});
    CHECK(r.loss_curve.back() < r.loss_curve.front());
    CHECK(accuracy(r.params, separable(300, 2)) > 0.99);
    const FdTrainResult flipped = train_fd(separable(600, 1, true), quick(), {16});
    CHECK(accuracy(flipped.params, separable(300, 2, true)) > 0.99);
    // Same seed, same weights.
    CHECK(train_fd(train, quick(), {16}).params.net.params() == r.params.net.params());

    Dataset one = train;
    for (auto& rec : one.records) {
        rec.label = 1;
    }
    CHECK_THROWS_AS(train_fd(one, quick(), {16}), std::invalid_argument);
}

TEST_CASE("scores") {
    FdParams p = make_fd(6, {4});
    std::fill(p.net.params().begin(), p.net.params().end(), 0.0);
    const Observation o = pixel_obs({0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f});
    CHECK(fd_score(p, o) == doctest::Approx(0.5));
    CHECK(fd_logit(p, o) == doctest::Approx(0.0));
    const FdParams q = make_fd(6, {4});
    CHECK(fd_score(q, o) == fd_score(q, o));
    CHECK_THROWS_AS(fd_score(q, pixel_obs({0.1f})), DimensionError);
}

TEST_CASE("nonconformity") {
    CHECK(nonconformity(0.8, 1) == doctest::Approx(0.2));
    CHECK(nonconformity(0.8, 0) == doctest::Approx(0.8));
    for (double y : {0.0, 0.3, 1.0}) {
        CHECK(nonconformity(y, 1) + nonconformity(y, 0) == doctest::Approx(1.0));
    }
}

TEST_CASE("conformal quantile") {
    const std::vector<double> nine{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    // k = ceil(10 * 0.9) = 9 and ceil(10 * 0.5) = 5.
    CalibrationResult c = conformal_quantile(nine, 0.1);
    CHECK(c.k == 9);
    CHECK(c.q_hat == doctest::Approx(0.9));
    CHECK(conformal_quantile(nine, 0.5).q_hat == doctest::Approx(0.5));
    CHECK(conformal_quantile(std::vector<double>(20, 0.0), 0.1).q_hat == 0.0);
    const CalibrationResult d = conformal_quantile({0.1, 0.2, 0.3, 0.4}, 0.1);
    CHECK(d.degenerate());
    CHECK(d.q_hat == 1.0);

    SUBCASE("property: matches the sorted order statistic") {
        Rng rng(21);
        for (int t = 0; t < 1000; ++t) {
            const auto n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
            std::vector<double> s(n);
            for (auto& v : s) {
                v = uniform(rng, 0, 1);
            }
            const double alpha = uniform(rng, 0.01, 0.5);
            CHECK(conformal_quantile(s, alpha).q_hat == brute_quantile(s, alpha));
        }
    }
}

TEST_CASE("classification threshold") {
    CHECK(fd_classify_score(0.5, 0.981) == 1);
    CHECK(fd_classify_score(0.01, 0.981) == 0);
    CHECK(fd_classify_score(0.6, 0.4) == 1);
    CHECK(fd_classify_score(0.0, 1.0) == 1);
    CHECK(fd_classify_score(0.59, 0.4) == 0);
    // Raising q_hat never unflags.
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        const double s = uniform(rng, 0, 1);
        const double q = uniform(rng, 0, 1);
        CHECK(fd_classify_score(s, q) <= fd_classify_score(s, std::min(1.0, q + 0.1)));
    }
}

TEST_CASE("evaluation") {
    const EnvParams night{TimeOfDay::night, Cloud::clear, 0};
    std::vector<LabeledObservation> r{{pixel_obs({0}), 1}, {pixel_obs({0}), 0}, {pixel_obs({0}, night), 0},
                                      {pixel_obs({0}, night), 0}};
    const Dataset test = make_dataset(r, true);
    const std::vector<double> perfect{0.9, 0.1, 0.2, 0.1};
    const auto m = evaluate_scores(perfect, test, 0.5);
    REQUIRE(m.size() == 3);
    CHECK(m.back().group == "all");
    CHECK(*m.back().recall == 1.0);
    CHECK(m.back().accuracy == 1.0);
    const auto night_row = std::find_if(m.begin(), m.end(), [&](const GroupMetrics& g) { return g.positives == 0; });
    REQUIRE(night_row != m.end());
    CHECK_FALSE(night_row->recall.has_value());

    // q_hat = 1 flags everything: accuracy equals the base rate.
    const auto all = evaluate_scores(perfect, test, 1.0).back();
    CHECK(all.accuracy == doctest::Approx(0.25));
    CHECK(*all.fpr == 1.0);
    CHECK_THROWS_AS(evaluate_scores({0.1}, test, 0.5), DimensionError);

    std::ostringstream csv;
    write_metrics_csv(csv, m);
    CHECK(csv.str().rfind("group,recall,accuracy,precision,fpr,n\n", 0) == 0);
    std::ostringstream roc;
    const auto pts = roc_sweep(perfect, {1, 0, 0, 0}, 10);
    write_roc_csv(roc, pts);
    CHECK(roc.str().rfind("q_hat,tpr,fpr\n", 0) == 0);
    CHECK(pts.size() == 11);
    CHECK(pts.back().tpr == 1.0);
    CHECK(pts.back().fpr == 1.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        CHECK(pts[i].tpr >= pts[i - 1].tpr);
        CHECK(pts[i].fpr >= pts[i - 1].fpr);
    }
}

TEST_CASE("calibration on positives and the record") {
    const FdTrainResult r = train_fd(separable(600, 1), quick(), {16});
    const CalibrationResult c = calibrate(r.params, separable(300, 3), 0.1);
    CHECK(c.n == 100);
    CHECK_FALSE(c.degenerate());
    // Coverage on fresh positives is at least 1 - alpha, up to sampling noise.
    const Dataset fresh = separable(3000, 4);
    std::size_t hit = 0;
    for (const auto& rec : fresh.records) {
        if (rec.label) {
            hit += fd_classify(r.params, c.q_hat, rec.obs);
        }
    }
    CHECK(static_cast<double>(hit) / 1000.0 >= 0.87);

    std::stringstream s;
    write_calibration_record(s, c, "1970-01-01T00:00:00Z", "abc");
    const CalibrationResult back = read_calibration_record(s);
    CHECK(back.q_hat == c.q_hat);
    CHECK(back.alpha == c.alpha);
    CHECK(back.n == c.n);
    CHECK(back.k == c.k);
    std::stringstream bad("alpha 0.1\n");
    CHECK_THROWS_AS(read_calibration_record(bad), FormatError);
}
