#include "reachguard/fd.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace reachguard {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix pixel_batch(const std::vector<const Observation*>& batch, std::size_t pixels) {
    Matrix x(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t j = 0; j < batch.size(); ++j) {
        if (batch[j]->pixels.size() != pixels) {
            throw DimensionError("failure detector: observation has " + std::to_string(batch[j]->pixels.size()) +
                                 " pixels, network expects " + std::to_string(pixels));
        }
        x.col(static_cast<Eigen::Index>(j)) = pixels_to_input(batch[j]->pixels);
    }
    return x;
}

std::string group_name(const Observation& o) {
    const EnvParams d = o.env.value_or(EnvParams{});
    return to_string(d);
}

}  // namespace

FdParams make_fd(std::size_t pixel_count, std::vector<std::uint32_t> hidden) {
    std::vector<LayerShape> layers;
    auto prev = static_cast<std::uint32_t>(pixel_count);
    for (auto h : hidden) {
        layers.push_back({prev, h});
        prev = h;
    }
    layers.push_back({prev, 1});
    return {Mlp(std::move(layers), Activation::tanh)};
}

FdTrainResult train_fd(const Dataset& data, const TrainHyper& hyper, std::vector<std::uint32_t> hidden) {
    hyper.validate();
    const std::size_t pos = data.positives();
    if (data.records.empty() || pos == 0 || pos == data.records.size()) {
        throw std::invalid_argument("train_fd: both classes must be present");
    }
    FdTrainResult result{make_fd(data.records.front().obs.pixels.size(), std::move(hidden)), {}};
    Mlp& net = result.params.net;
    Rng rng(derive_seed(hyper.seed, "fd-init"));
    net.init_glorot(rng);
    net.round_to_float();

    Adam adam(hyper.lr);
    std::vector<std::size_t> order(data.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(net.param_count());
    Mlp::Cache cache;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            std::vector<const Observation*> batch;
            Matrix y(1, static_cast<Eigen::Index>(end - start));
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(&data.records[order[k]].obs);
                y(0, static_cast<Eigen::Index>(k - start)) = data.records[order[k]].label;
            }
            const Matrix z = net.forward(pixel_batch(batch, net.input_size()), &cache);
            Matrix d_out(1, z.cols());
            for (Eigen::Index j = 0; j < z.cols(); ++j) {
                // Stable BCE with logits: max(z, 0) - z y + log(1 + exp(-|z|)).
                const double zj = z(0, j);
                epoch_loss += std::max(zj, 0.0) - zj * y(0, j) + std::log1p(std::exp(-std::abs(zj)));
                d_out(0, j) = (sigmoid(zj) - y(0, j)) / static_cast<double>(z.cols());
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            net.backward(cache, d_out, grad);
            adam.step(net.params(), grad);
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss)) {
            throw DivergenceError("train_fd: nonfinite loss at epoch " + std::to_string(epoch));
        }
        result.loss_curve.push_back(epoch_loss);
    }
    net.round_to_float();
    return result;
}

double fd_logit(const FdParams& p, const Observation& obs) {
    return p.net.forward(pixel_batch({&obs}, p.net.input_size()))(0, 0);
}

double fd_score(const FdParams& p, const Observation& obs) { return sigmoid(fd_logit(p, obs)); }

std::vector<double> fd_scores(const FdParams& p, const std::vector<Observation>& obs) {
    std::vector<double> out;
    out.reserve(obs.size());
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < obs.size(); start += kChunk) {
        std::vector<const Observation*> chunk;
        for (std::size_t i = start; i < std::min(obs.size(), start + kChunk); ++i) {
            chunk.push_back(&obs[i]);
        }
        const Matrix z = p.net.forward(pixel_batch(chunk, p.net.input_size()));
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            out.push_back(sigmoid(z(0, j)));
        }
    }
    return out;
}

double nonconformity(double y_hat, int y) { return y ? 1.0 - y_hat : y_hat; }

CalibrationResult conformal_quantile(std::vector<double> scores, double alpha) {
    if (scores.empty()) {
        throw std::invalid_argument("conformal_quantile: no calibration scores");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("conformal_quantile: alpha must lie in (0, 1)");
    }
    CalibrationResult c;
    c.alpha = alpha;
    c.n = scores.size();
    // Guard against (n + 1)(1 - alpha) landing a hair above an integer.
    const double rank = (static_cast<double>(c.n) + 1.0) * (1.0 - alpha);
    c.k = static_cast<std::size_t>(std::ceil(rank - 1e-9));
    if (c.k > c.n) {
        c.q_hat = 1.0;
        return c;
    }
    c.k = std::max<std::size_t>(c.k, 1);
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(c.k - 1), scores.end());
    c.q_hat = scores[c.k - 1];
    return c;
}

CalibrationResult calibrate(const FdParams& p, const Dataset& calibration, double alpha) {
    std::vector<Observation> positives;
    for (const auto& r : calibration.records) {
        if (r.label) {
            positives.push_back(r.obs);
        }
    }
    std::vector<double> scores = fd_scores(p, positives);
    for (double& s : scores) {
        s = nonconformity(s, 1);
    }
    return conformal_quantile(std::move(scores), alpha);
}

int fd_classify_score(double score, double q_hat) { return score >= 1.0 - q_hat ? 1 : 0; }

int fd_classify(const FdParams& p, double q_hat, const Observation& obs) {
    return fd_classify_score(fd_score(p, obs), q_hat);
}

std::vector<GroupMetrics> evaluate_scores(const std::vector<double>& scores, const Dataset& test, double q_hat) {
    if (scores.size() != test.records.size()) {
        throw DimensionError("evaluate: one score per record required");
    }
    struct Counts {
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    };
    std::map<std::string, Counts> groups;
    Counts pooled;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = fd_classify_score(scores[i], q_hat);
        const int y = test.records[i].label;
        Counts& g = groups[group_name(test.records[i].obs)];
        for (Counts* c : {&g, &pooled}) {
            if (pred && y) {
                ++c->tp;
            } else if (pred) {
                ++c->fp;
            } else if (y) {
                ++c->fn;
            } else {
                ++c->tn;
            }
        }
    }
    auto finish = [](const std::string& name, const Counts& c) {
        GroupMetrics m;
        m.group = name;
        m.n = c.tp + c.fp + c.tn + c.fn;
        m.positives = c.tp + c.fn;
        m.accuracy = m.n ? static_cast<double>(c.tp + c.tn) / static_cast<double>(m.n) : 0.0;
        if (m.positives) {
            m.recall = static_cast<double>(c.tp) / static_cast<double>(m.positives);
        }
        if (c.tp + c.fp) {
            m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        }
        if (c.fp + c.tn) {
            m.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
        }
        return m;
    };
    std::vector<GroupMetrics> out;
    for (const auto& [name, c] : groups) {
        out.push_back(finish(name, c));
    }
    out.push_back(finish("all", pooled));
    return out;
}

std::vector<GroupMetrics> evaluate(const FdParams& p, double q_hat, const Dataset& test) {
    if (test.records.empty()) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    return evaluate_scores(fd_scores(p, test.observations()), test, q_hat);
}

std::vector<RocPoint> roc_sweep(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels, int steps) {
    if (scores.size() != labels.size() || steps < 1) {
        throw std::invalid_argument("roc_sweep: mismatched inputs");
    }
    const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double neg = static_cast<double>(labels.size()) - pos;
    std::vector<RocPoint> out;
    for (int s = 0; s <= steps; ++s) {
        const double q = static_cast<double>(s) / steps;
        double tp = 0.0;
        double fp = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (fd_classify_score(scores[i], q)) {
                (labels[i] ? tp : fp) += 1.0;
            }
        }
        out.push_back({q, pos > 0 ? tp / pos : 0.0, neg > 0 ? fp / neg : 0.0});
    }
    return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<GroupMetrics>& rows) {
    auto opt = [](const std::optional<double>& v) {
        std::ostringstream s;
        if (v) {
            s << std::setprecision(6) << *v;
        }
        return s.str();
    };
    out << "group,recall,accuracy,precision,fpr,n\n";
    for (const auto& r : rows) {
        out << r.group << ',' << opt(r.recall) << ',' << std::setprecision(6) << r.accuracy << ',' << opt(r.precision)
            << ',' << opt(r.fpr) << ',' << r.n << '\n';
    }
}

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points) {
    out << "q_hat,tpr,fpr\n";
    for (const auto& p : points) {
        out << std::setprecision(6) << p.q_hat << ',' << p.tpr << ',' << p.fpr << '\n';
    }
}

void write_calibration_record(std::ostream& out, const CalibrationResult& c, const std::string& timestamp,
                              const std::string& dataset_digest) {
    out << std::setprecision(17);
    out << "q_hat " << c.q_hat << '\n'
        << "alpha " << c.alpha << '\n'
        << "n " << c.n << '\n'
        << "k " << c.k << '\n'
        << "timestamp " << timestamp << '\n'
        << "dataset_sha256 " << dataset_digest << '\n';
}

CalibrationResult read_calibration_record(std::istream& in) {
    CalibrationResult c;
    std::string key;
    bool have_q = false;
    while (in >> key) {
        if (key == "q_hat") {
            in >> c.q_hat;
            have_q = true;
        } else if (key == "alpha") {
            in >> c.alpha;
        } else if (key == "n") {
            in >> c.n;
        } else if (key == "k") {
            in >> c.k;
        } else {
            std::string rest;
            std::getline(in, rest);
        }
    }
    if (!have_q || !(c.q_hat >= 0.0 && c.q_hat <= 1.0)) {
        throw FormatError("calibration record: missing or invalid q_hat");
    }
    return c;
}

}  // namespace reachguard
