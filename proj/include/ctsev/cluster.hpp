#pragma once
// Feature standardization, recursive feature elimination, Euclidean distance
// matrix, average-linkage agglomerative clustering and heatmap export.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctsev/eval.hpp"
#include "ctsev/forest.hpp"

namespace ctsev {

enum class Split { train, validation, test };

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split label: " + s);
}

inline std::string to_string(Split s) {
    return s == Split::train ? "train" : s == Split::validation ? "validation" : "test";
}

struct FeatureMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;  // n_cases x n_features
    std::vector<Cohort> cohorts;
    std::vector<Split> splits;
    std::vector<std::string> case_ids;

    std::size_t n_cases() const { return rows.size(); }
    std::size_t n_features() const { return names.size(); }
};

// z-score with fit-split statistics, then min-max rescale to [0,1] with
// fit-split extremes; missing values are imputed with the fit-split feature
// mean first, constant features are dropped.
inline FeatureMatrix standardize_rescale(const FeatureMatrix& m, Split fit_on,
                                         std::vector<std::string>* dropped = nullptr) {
    std::vector<std::size_t> fit;
    for (std::size_t i = 0; i < m.n_cases(); ++i)
        if (m.splits[i] == fit_on) fit.push_back(i);
    if (fit.empty()) throw std::invalid_argument("empty fit split");

    FeatureMatrix out;
    out.cohorts = m.cohorts;
    out.splits = m.splits;
    out.case_ids = m.case_ids;
    out.rows.assign(m.n_cases(), {});

    for (std::size_t f = 0; f < m.n_features(); ++f) {
        // fit statistics over non-missing fit values
        double sum = 0;
        std::size_t n = 0;
        for (auto i : fit)
            if (!std::isnan(m.rows[i][f])) {
                sum += m.rows[i][f];
                ++n;
            }
        const double mean = n ? sum / n : 0.0;
        double ss = 0;
        for (auto i : fit)
            if (!std::isnan(m.rows[i][f])) ss += (m.rows[i][f] - mean) * (m.rows[i][f] - mean);
        const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        if (sd == 0.0) {
            if (dropped) dropped->push_back(m.names[f]);
            std::cerr << "warning: dropping constant feature '" << m.names[f] << "'\n";
            continue;
        }
        double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
        for (auto i : fit) {
            const double v = std::isnan(m.rows[i][f]) ? mean : m.rows[i][f];
            const double z = (v - mean) / sd;
            zmin = std::min(zmin, z);
            zmax = std::max(zmax, z);
        }
        const double range = zmax - zmin;
        out.names.push_back(m.names[f]);
        for (std::size_t i = 0; i < m.n_cases(); ++i) {
            const double v = std::isnan(m.rows[i][f]) ? mean : m.rows[i][f];
            const double z = (v - mean) / sd;
            out.rows[i].push_back(std::clamp((z - zmin) / range, 0.0, 1.0));
        }
    }
    return out;
}

namespace detail {

// best single-split Gini gain of one feature over given rows
inline double stump_gain(const std::vector<double>& values, const std::vector<int>& labels) {
    std::vector<std::pair<double, int>> v(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) v[i] = {values[i], labels[i]};
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double tpos = 0;
    for (const auto& p : v) tpos += p.second;
    auto gini = [](double npos, double nn) { return 2.0 * (npos / nn) * (1.0 - npos / nn); };
    const double parent = gini(tpos, n);
    double best = 0, lpos = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        lpos += v[i].second;
        if (v[i].first == v[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        best = std::max(best, parent - (nl * gini(lpos, nl) + nr * gini(tpos - lpos, nr)) / n);
    }
    return best;
}

}  // namespace detail

// Recursive feature elimination against the covid-vs-rest target: a bagged
// stump-gain importance ranker fit on the training 80% of an internal seeded
// split, lowest-importance feature dropped each round until k remain.
// Each feature is scored independently over shared bootstrap draws, which
// makes the selection exactly equivariant to column permutations; greedy
// multi-feature trees lose that property on tied split gains.
inline std::vector<std::size_t> recursive_feature_elimination(const FeatureMatrix& m, int k,
                                                              std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (static_cast<std::size_t>(k) > m.n_features())
        throw std::invalid_argument("k exceeds feature count");

    std::vector<std::size_t> train_cases;
    for (std::size_t i = 0; i < m.n_cases(); ++i)
        if (m.splits[i] == Split::train) train_cases.push_back(i);
    if (train_cases.size() < 5) throw std::invalid_argument("too few training cases for RFE");

    // internal 80/20 split, deterministic in the seed
    std::vector<std::size_t> shuffled = train_cases;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t n_fit = std::max<std::size_t>(2, shuffled.size() * 8 / 10);
    std::vector<std::size_t> fit(shuffled.begin(), shuffled.begin() + n_fit);

    std::vector<std::size_t> active(m.n_features());
    for (std::size_t f = 0; f < active.size(); ++f) active[f] = f;

    const int n_bags = 50;
    std::vector<int> y;
    for (auto i : fit) y.push_back(m.cohorts[i] == Cohort::covid ? 1 : 0);

    int round = 0;
    while (active.size() > static_cast<std::size_t>(k)) {
        std::vector<double> imp(active.size(), 0.0);
        std::mt19937_64 bag_rng(seed ^ (0xb00b5ULL + round));
        std::uniform_int_distribution<std::size_t> pick(0, fit.size() - 1);
        std::vector<double> col(fit.size());
        std::vector<int> lab(fit.size());
        for (int b = 0; b < n_bags; ++b) {
            std::vector<std::size_t> boot(fit.size());
            for (auto& j : boot) j = pick(bag_rng);
            for (std::size_t fi = 0; fi < active.size(); ++fi) {
                for (std::size_t j = 0; j < boot.size(); ++j) {
                    const double v = m.rows[fit[boot[j]]][active[fi]];
                    col[j] = std::isnan(v) ? 0.0 : v;
                    lab[j] = y[boot[j]];
                }
                imp[fi] += detail::stump_gain(col, lab);
            }
        }
        // drop the lowest importance; ties resolve to the largest feature id
        std::size_t drop = 0;
        for (std::size_t f = 1; f < active.size(); ++f)
            if (imp[f] <= imp[drop]) drop = f;
        active.erase(active.begin() + drop);
        ++round;
    }
    return active;
}

inline std::vector<std::vector<double>> distance_matrix(const FeatureMatrix& m) {
    const std::size_t n = m.n_cases();
    std::vector<std::vector<double>> D(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t f = 0; f < m.n_features(); ++f) {
                const double d = m.rows[i][f] - m.rows[j][f];
                s += d * d;
            }
            D[i][j] = D[j][i] = std::sqrt(s);
        }
    return D;
}

struct DendrogramMerge {
    int left = 0, right = 0;  // node ids: leaves 0..n-1, internal n..2n-2
    double distance = 0;
    int size = 0;
};

struct Dendrogram {
    std::vector<DendrogramMerge> merges;
    std::vector<int> leaf_order;  // depth-first left-to-right
};

// Agglomerative clustering, inter-cluster distance = mean of all cross-pair
// distances; ties resolve to the smallest (i, j) cluster-id pair.
inline Dendrogram average_linkage(const std::vector<std::vector<double>>& D) {
    const int n = static_cast<int>(D.size());
    if (n < 2) throw std::invalid_argument("need at least two cases");

    struct Cluster {
        int node;  // dendrogram node id
        int size;
        bool alive = true;
    };
    std::vector<Cluster> cl(n);
    for (int i = 0; i < n; ++i) cl[i] = {i, 1, true};
    // avg[i][j] = mean cross distance between active clusters i, j (slot index)
    std::vector<std::vector<double>> avg = D;

    Dendrogram dendro;
    std::vector<std::vector<int>> children(2 * n - 1);  // node id -> child node ids
    int next_node = n;
    for (int step = 0; step < n - 1; ++step) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (!cl[i].alive) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!cl[j].alive) continue;
                if (avg[i][j] < best) {
                    best = avg[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }
        // Lance-Williams update for average linkage: merged cluster lives in
        // slot bi, slot bj dies
        const int si = cl[bi].size, sj = cl[bj].size;
        for (int t = 0; t < n; ++t) {
            if (!cl[t].alive || t == bi || t == bj) continue;
            const double d = (si * avg[bi][t] + sj * avg[bj][t]) / (si + sj);
            avg[bi][t] = avg[t][bi] = d;
        }
        dendro.merges.push_back({cl[bi].node, cl[bj].node, best, si + sj});
        children[next_node] = {cl[bi].node, cl[bj].node};
        cl[bi] = {next_node, si + sj, true};
        cl[bj].alive = false;
        ++next_node;
    }
    // depth-first leaf order from the root
    std::vector<int> stack = {next_node - 1};
    while (!stack.empty()) {
        const int node = stack.back();
        stack.pop_back();
        if (node < n) {
            dendro.leaf_order.push_back(node);
        } else {
            stack.push_back(children[node][1]);  // right pushed first, left visited first
            stack.push_back(children[node][0]);
        }
    }
    return dendro;
}

// Cuts at the largest merge-height gap; returns per-case cluster ids.
inline std::vector<int> cut_largest_gap(const Dendrogram& dendro, int n_cases) {
    double best_gap = -1;
    std::size_t cut = dendro.merges.size();  // default: one cluster
    for (std::size_t i = 1; i < dendro.merges.size(); ++i) {
        const double gap = dendro.merges[i].distance - dendro.merges[i - 1].distance;
        if (gap > best_gap) {
            best_gap = gap;
            cut = i;
        }
    }
    // apply merges before the cut with union-find over leaves
    std::vector<int> parent(2 * n_cases - 1, -1);
    for (std::size_t i = 0; i < cut; ++i) {
        const int node = n_cases + static_cast<int>(i);
        parent[dendro.merges[i].left] = node;
        parent[dendro.merges[i].right] = node;
    }
    std::vector<int> cluster(n_cases);
    std::vector<int> root_id(2 * n_cases - 1, -1);
    int next = 0;
    for (int i = 0; i < n_cases; ++i) {
        int r = i;
        while (parent[r] != -1) r = parent[r];
        if (root_id[r] == -1) root_id[r] = next++;
        cluster[i] = root_id[r];
    }
    return cluster;
}

inline nlohmann::ordered_json dendrogram_to_json(const Dendrogram& d) {
    nlohmann::ordered_json j;
    j["merges"] = nlohmann::ordered_json::array();
    for (const auto& m : d.merges)
        j["merges"].push_back(
            {{"left", m.left}, {"right", m.right}, {"distance", m.distance}, {"size", m.size}});
    j["leaf_order"] = d.leaf_order;
    return j;
}

// Heatmap: one grayscale cell per (case, feature) in dendrogram leaf order,
// a cohort color band on the left, feature names as column labels.
inline void heatmap_svg(const FeatureMatrix& m, const Dendrogram& dendro,
                        const std::string& out_path) {
    const int cell = 10, band = 14, label_h = 120, pad = 4;
    const int n = static_cast<int>(m.n_cases());
    const int nf = static_cast<int>(m.n_features());
    const int w = band + pad + nf * cell + 2 * pad;
    const int h = label_h + n * cell + 2 * pad;
    auto cohort_color = [](Cohort c) {
        switch (c) {
            case Cohort::covid: return "#c0392b";
            case Cohort::pneumonia: return "#f39c12";
            case Cohort::ild: return "#2980b9";
            default: return "#27ae60";
        }
    };
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write: " + out_path);
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    for (int c = 0; c < nf; ++c)
        f << "<text x=\"" << (band + pad + c * cell + cell / 2) << "\" y=\"" << (label_h - 6)
          << "\" font-size=\"9\" text-anchor=\"start\" transform=\"rotate(-60 "
          << (band + pad + c * cell + cell / 2) << " " << (label_h - 6) << ")\">" << m.names[c]
          << "</text>\n";
    for (int r = 0; r < n; ++r) {
        const int case_idx = dendro.leaf_order[r];
        const int y = label_h + r * cell;
        f << "<rect class=\"cohort-band\" x=\"" << pad << "\" y=\"" << y << "\" width=\"" << band
          << "\" height=\"" << cell << "\" fill=\"" << cohort_color(m.cohorts[case_idx])
          << "\"/>\n";
        for (int c = 0; c < nf; ++c) {
            // value 0 -> lightest, 1 -> darkest
            const int g = static_cast<int>(std::lround(255 * (1.0 - m.rows[case_idx][c])));
            f << "<rect class=\"cell\" x=\"" << (band + pad + c * cell) << "\" y=\"" << y
              << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << g << ","
              << g << "," << g << ")\"/>\n";
        }
    }
    f << "</svg>\n";
}

}  // namespace ctsev
