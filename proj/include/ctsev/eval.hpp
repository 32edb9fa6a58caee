#pragma once
// ROC/AUC, bootstrap confidence intervals, operating point selection,
// per-category confusion tables and ROC plot emission.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctsev {

struct RocPoint {
    double fpr = 0, tpr = 0, threshold = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // from (0,0) to (1,1), thresholds descending
    double auc = 0;
};

enum class Cohort { covid, pneumonia, ild, healthy };

inline Cohort cohort_from_string(const std::string& s) {
    if (s == "covid") return Cohort::covid;
    if (s == "pneumonia") return Cohort::pneumonia;
    if (s == "ild") return Cohort::ild;
    if (s == "healthy") return Cohort::healthy;
    throw std::invalid_argument("unknown cohort label: " + s);
}

inline std::string to_string(Cohort c) {
    switch (c) {
        case Cohort::covid: return "covid";
        case Cohort::pneumonia: return "pneumonia";
        case Cohort::ild: return "ild";
        default: return "healthy";
    }
}

// Predicted positive/negative counts per category; covid is the positive class.
struct ConfusionTable {
    std::array<int, 4> predicted_positive{};  // covid, ild, pneumonia, healthy
    std::array<int, 4> predicted_negative{};

    double sensitivity() const {
        const int tp = predicted_positive[0], fn = predicted_negative[0];
        return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    }
    double specificity() const {
        int tn = 0, fp = 0;
        for (int k = 1; k < 4; ++k) {
            tn += predicted_negative[k];
            fp += predicted_positive[k];
        }
        return tn + fp > 0 ? static_cast<double>(tn) / (tn + fp) : 0.0;
    }
};

struct EvalReport {
    RocCurve roc;
    double ci_lo = 0, ci_hi = 0;
    double threshold = 0;
    double sensitivity = 0, specificity = 0;
    ConfusionTable confusion;
};

// Thresholds at every distinct score, descending; trapezoidal AUC (equals the
// Mann-Whitney statistic with ties counted 1/2).
inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels size mismatch");
    const std::int64_t n_pos = std::count(labels.begin(), labels.end(), 1);
    const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("both classes must be present");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve c;
    c.points.push_back({0, 0, std::numeric_limits<double>::infinity()});
    std::int64_t tp = 0, fp = 0;
    std::int64_t auc2 = 0;  // trapezoid area in units of 1/(2*n_pos*n_neg), exact
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        std::int64_t dtp = 0, dfp = 0;
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] ? dtp : dfp)++;
            ++i;
        }
        // trapezoid over the tie block gives the half-credit for ties
        auc2 += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        c.points.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
    }
    c.auc = static_cast<double>(auc2) / (2.0 * n_pos * n_neg);
    return c;
}

// Percentile bootstrap over (score, label) pairs; single-class resamples are
// redrawn so exactly n_boot AUC samples enter the percentiles.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                              const std::vector<int>& labels, int n_boot,
                                              std::uint64_t seed) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels size mismatch");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
    std::vector<double> aucs;
    aucs.reserve(n_boot);
    std::vector<double> s(scores.size());
    std::vector<int> l(labels.size());
    while (static_cast<int>(aucs.size()) < n_boot) {
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const std::size_t j = pick(rng);
            s[i] = scores[j];
            l[i] = labels[j];
            (l[i] ? pos : neg) = true;
        }
        if (!pos || !neg) continue;  // redraw
        aucs.push_back(roc_curve(s, l).auc);
    }
    std::sort(aucs.begin(), aucs.end());
    auto percentile = [&](double p) {
        const double idx = p * (aucs.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(idx);
        const std::size_t hi = std::min(lo + 1, aucs.size() - 1);
        const double f = idx - lo;
        return aucs[lo] * (1 - f) + aucs[hi] * f;
    };
    return {percentile(0.025), percentile(0.975)};
}

// Point with the shortest distance to the top-left corner; ties resolve to
// higher tpr, then lower fpr.
inline RocPoint operating_point(const RocCurve& roc) {
    if (roc.points.empty()) throw std::invalid_argument("empty ROC curve");
    const RocPoint* best = &roc.points.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& p : roc.points) {
        const double d = std::sqrt(p.fpr * p.fpr + (1 - p.tpr) * (1 - p.tpr));
        const bool better = d < best_d || (d == best_d && (p.tpr > best->tpr ||
                                                           (p.tpr == best->tpr && p.fpr < best->fpr)));
        if (better) {
            best = &p;
            best_d = d;
        }
    }
    return *best;
}

inline ConfusionTable confusion_by_category(const std::vector<int>& predictions,
                                            const std::vector<Cohort>& categories) {
    if (predictions.size() != categories.size())
        throw std::invalid_argument("predictions/categories size mismatch");
    ConfusionTable t;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int col = categories[i] == Cohort::covid      ? 0
                        : categories[i] == Cohort::ild      ? 1
                        : categories[i] == Cohort::pneumonia ? 2
                                                             : 3;
        (predictions[i] ? t.predicted_positive : t.predicted_negative)[col]++;
    }
    return t;
}

inline EvalReport evaluate_scores(const std::vector<double>& scores,
                                  const std::vector<Cohort>& categories, int n_boot,
                                  std::uint64_t seed) {
    std::vector<int> labels(categories.size());
    for (std::size_t i = 0; i < categories.size(); ++i)
        labels[i] = categories[i] == Cohort::covid ? 1 : 0;
    EvalReport r;
    r.roc = roc_curve(scores, labels);
    std::tie(r.ci_lo, r.ci_hi) = bootstrap_ci(scores, labels, n_boot, seed);
    const RocPoint op = operating_point(r.roc);
    r.threshold = op.threshold;
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= op.threshold ? 1 : 0;
    r.confusion = confusion_by_category(pred, categories);
    r.sensitivity = r.confusion.sensitivity();
    r.specificity = r.confusion.specificity();
    return r;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["auc"] = r.roc.auc;
    j["ci95"] = {r.ci_lo, r.ci_hi};
    j["threshold"] = r.threshold;
    j["sensitivity"] = r.sensitivity;
    j["specificity"] = r.specificity;
    j["confusion"] = {
        {"categories", {"covid", "ild", "pneumonia", "healthy"}},
        {"predicted_positive", r.confusion.predicted_positive},
        {"predicted_negative", r.confusion.predicted_negative},
    };
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (const auto& p : r.roc.points)
        pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", p.threshold}});
    j["roc_points"] = pts;
    return j;
}

// 2x4 layout: prediction rows, category columns.
inline std::string render_confusion_table(const std::string& model_name,
                                          const ConfusionTable& t) {
    char buf[512];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-22s %8s %8s %10s %10s\n", model_name.c_str(), "COVID-19",
                  "ILD", "Pneumonia", "Healthy");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %8d %8d %10d %10d\n", "Predicted positive",
                  t.predicted_positive[0], t.predicted_positive[1], t.predicted_positive[2],
                  t.predicted_positive[3]);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %8d %8d %10d %10d\n", "Predicted negative",
                  t.predicted_negative[0], t.predicted_negative[1], t.predicted_negative[2],
                  t.predicted_negative[3]);
    out += buf;
    return out;
}

// ---------------------------------------------------------------------------
// SVG emission.
// ---------------------------------------------------------------------------

struct RocPlotEntry {
    std::string name;
    RocCurve curve;
    RocCurve band_lo;  // optional CI band; empty points disable the band
    RocCurve band_hi;
};

inline void roc_svg(const std::vector<RocPlotEntry>& curves, const std::string& out_path) {
    const int w = 560, h = 560, m = 60;
    auto px = [&](double fpr) { return m + fpr * (w - 2 * m); };
    auto py = [&](double tpr) { return h - m - tpr * (h - 2 * m); };
    static const char* palette[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#f39c12"};

    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write: " + out_path);
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    // CI bands first so curves draw on top
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& e = curves[ci];
        if (e.band_lo.points.empty() || e.band_hi.points.empty()) continue;
        f << "<polygon class=\"band\" fill=\"" << palette[ci % 5] << "\" fill-opacity=\"0.15\" points=\"";
        for (const auto& p : e.band_lo.points) f << px(p.fpr) << "," << py(p.tpr) << " ";
        for (auto it = e.band_hi.points.rbegin(); it != e.band_hi.points.rend(); ++it)
            f << px(it->fpr) << "," << py(it->tpr) << " ";
        f << "\"/>\n";
    }
    // diagonal reference
    f << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
      << py(1) << "\" stroke=\"#999\" stroke-dasharray=\"6,4\"/>\n";
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& e = curves[ci];
        f << "<polyline class=\"roc\" fill=\"none\" stroke=\"" << palette[ci % 5]
          << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : e.curve.points) f << px(p.fpr) << "," << py(p.tpr) << " ";
        f << "\"/>\n";
        f << "<text x=\"" << (w - m - 160) << "\" y=\"" << (h - m - 20 - 18 * ci) << "\" fill=\""
          << palette[ci % 5] << "\" font-size=\"13\">" << e.name << " (AUC "
          << static_cast<int>(e.curve.auc * 1000) / 1000.0 << ")</text>\n";
    }
    f << "<text x=\"" << (w / 2 - 60) << "\" y=\"" << (h - 16)
      << "\" font-size=\"14\">False positive rate</text>\n";
    f << "<text x=\"16\" y=\"" << (h / 2) << "\" font-size=\"14\" transform=\"rotate(-90 16 "
      << (h / 2) << ")\">True positive rate</text>\n";
    f << "</svg>\n";
}

}  // namespace ctsev
