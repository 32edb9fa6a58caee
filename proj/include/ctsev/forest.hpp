#pragma once
// From-scratch tree learners: CART trees, random forest (M1), stochastic
// gradient-boosted trees with leaf-index embedding and an L2 logistic
// regression head (M2).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ctsev {

using Matrix = std::vector<std::vector<double>>;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0;     // class-1 frequency (classification) or leaf value
    int leaf_index = -1;  // dense 0..n_leaves-1
};

struct Tree {
    std::vector<TreeNode> nodes;
    int n_leaves = 0;

    int route(const std::vector<double>& x) const {
        int i = 0;
        while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
        return i;
    }
    double predict(const std::vector<double>& x) const { return nodes[route(x)].value; }
    int leaf_of(const std::vector<double>& x) const { return nodes[route(x)].leaf_index; }
};

struct ForestParams {
    int n_trees = 500;
    int max_depth = 8;
    int min_leaf = 2;
    int features_per_split = 0;  // 0 = round(sqrt(k))
    std::uint64_t seed = 0;
};

struct GbtParams {
    int n_trees = 2000;
    int max_depth = 3;
    int features_per_split = 3;
    double subsample = 0.8;
    double shrinkage = 0.1;
    int min_leaf = 1;
    std::uint64_t seed = 0;
};

namespace detail {

enum class TreeTask { classification, regression };

struct SplitChoice {
    int feature = -1;
    double threshold = 0;
    double gain = 0;
};

struct TreeBuilder {
    const Matrix& X;
    const std::vector<double>& target;  // class labels (0/1) or residuals
    TreeTask task;
    int max_depth, min_leaf, features_per_split;
    std::mt19937_64 rng;
    Tree tree;
    std::vector<double> importance;  // per feature, weighted impurity decrease
    std::size_t n_root;

    TreeBuilder(const Matrix& X_, const std::vector<double>& t_, TreeTask task_, int depth,
                int min_leaf_, int fps, std::uint64_t seed)
        : X(X_), target(t_), task(task_), max_depth(depth), min_leaf(min_leaf_),
          features_per_split(fps), rng(seed), importance(X_.empty() ? 0 : X_[0].size(), 0.0) {}

    double impurity(double sum, double sum2, double n) const {
        if (task == TreeTask::classification) {
            const double p = sum / n;  // sum = count of class 1
            return 2.0 * p * (1.0 - p);  // Gini for two classes
        }
        return sum2 / n - (sum / n) * (sum / n);  // variance
    }

    SplitChoice best_split(const std::vector<int>& idx) {
        const int k = static_cast<int>(importance.size());
        std::vector<int> feats(k);
        std::iota(feats.begin(), feats.end(), 0);
        if (features_per_split > 0 && features_per_split < k) {
            // partial Fisher-Yates draw, then ascending order for tie-breaks
            for (int i = 0; i < features_per_split; ++i) {
                std::uniform_int_distribution<int> d(i, k - 1);
                std::swap(feats[i], feats[d(rng)]);
            }
            feats.resize(features_per_split);
            std::sort(feats.begin(), feats.end());
        }

        double tsum = 0, tsum2 = 0;
        for (int i : idx) {
            tsum += target[i];
            tsum2 += target[i] * target[i];
        }
        const double n = static_cast<double>(idx.size());
        const double parent = impurity(tsum, tsum2, n);

        SplitChoice best;
        std::vector<std::pair<double, double>> vals(idx.size());  // (feature value, target)
        for (int f : feats) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                vals[i] = {X[idx[i]][f], target[idx[i]]};
            std::sort(vals.begin(), vals.end());
            double lsum = 0, lsum2 = 0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                lsum += vals[i].second;
                lsum2 += vals[i].second * vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const double nl = static_cast<double>(i + 1), nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double gain = parent - (nl * impurity(lsum, lsum2, nl) +
                                              nr * impurity(tsum - lsum, tsum2 - lsum2, nr)) / n;
                if (gain > best.gain + 1e-15) {
                    best.feature = f;
                    best.threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                    best.gain = gain;
                }
            }
        }
        return best;
    }

    int build(std::vector<int>& idx, int depth) {
        double sum = 0;
        for (int i : idx) sum += target[i];
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});

        bool make_leaf = depth >= max_depth || static_cast<int>(idx.size()) < 2 * min_leaf;
        SplitChoice sp;
        if (!make_leaf) {
            sp = best_split(idx);
            make_leaf = sp.feature < 0;
        }
        if (make_leaf) {
            tree.nodes[node_id].value = sum / idx.size();
            tree.nodes[node_id].leaf_index = tree.n_leaves++;
            return node_id;
        }
        importance[sp.feature] += sp.gain * idx.size() / static_cast<double>(n_root);
        std::vector<int> left, right;
        for (int i : idx)
            (X[i][sp.feature] <= sp.threshold ? left : right).push_back(i);
        tree.nodes[node_id].feature = sp.feature;
        tree.nodes[node_id].threshold = sp.threshold;
        tree.nodes[node_id].left = build(left, depth + 1);
        tree.nodes[node_id].right = build(right, depth + 1);
        return node_id;
    }

    Tree run(std::vector<int> idx) {
        n_root = idx.size();
        build(idx, 0);
        return std::move(tree);
    }
};

}  // namespace detail

struct ForestModel {
    std::vector<Tree> trees;
    int n_features = 0;
    std::uint64_t seed = 0;
    std::vector<double> importances;  // impurity-decrease, normalized to sum 1

    double predict_score(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != n_features)
            throw std::invalid_argument("feature dimension mismatch");
        double s = 0;
        for (const auto& t : trees) s += t.predict(x);
        return s / trees.size();
    }
    const std::vector<double>& feature_importances() const { return importances; }
};

inline ForestModel fit_random_forest(const Matrix& X, const std::vector<int>& y,
                                     const ForestParams& params) {
    if (X.size() < 2) throw std::invalid_argument("need at least two samples");
    const int n = static_cast<int>(X.size());
    const int k = static_cast<int>(X[0].size());
    const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
    if (pos == 0 || pos == n) throw std::invalid_argument("both classes must be present");

    std::vector<double> t(y.begin(), y.end());
    ForestModel m;
    m.n_features = k;
    m.seed = params.seed;
    m.importances.assign(k, 0.0);
    const int fps = params.features_per_split > 0
                        ? params.features_per_split
                        : std::max(1, static_cast<int>(std::lround(std::sqrt(k))));
    for (int ti = 0; ti < params.n_trees; ++ti) {
        const std::uint64_t ts = detail::splitmix64(params.seed ^ (0xf0f0f0f0ULL + ti));
        detail::TreeBuilder b(X, t, detail::TreeTask::classification, params.max_depth,
                              params.min_leaf, fps, ts);
        // bootstrap sample
        std::mt19937_64 brng(detail::splitmix64(ts));
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::vector<int> idx(n);
        for (auto& i : idx) i = pick(brng);
        m.trees.push_back(b.run(std::move(idx)));
        for (int f = 0; f < k; ++f) m.importances[f] += b.importance[f];
    }
    const double tot = std::accumulate(m.importances.begin(), m.importances.end(), 0.0);
    if (tot > 0)
        for (auto& v : m.importances) v /= tot;
    return m;
}

struct GbtModel {
    std::vector<Tree> trees;
    GbtParams params;
    int n_features = 0;
    double init_logodds = 0;
    std::vector<double> train_loss;  // full-training-set logistic loss per round
    std::vector<int> leaf_offsets;   // embedding offset per tree

    int embedding_dim() const {
        return leaf_offsets.empty() ? 0 : leaf_offsets.back() + trees.back().n_leaves;
    }
    // shrinkage is baked into leaf values at fit time
    double raw_score(const std::vector<double>& x) const {
        double f = init_logodds;
        for (const auto& t : trees) f += t.predict(x);
        return f;
    }
};

inline GbtModel fit_gbt(const Matrix& X, const std::vector<int>& y, const GbtParams& params) {
    const int n = static_cast<int>(X.size());
    if (n < 2) throw std::invalid_argument("need at least two samples");
    const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
    if (pos == 0 || pos == n) throw std::invalid_argument("both classes must be present");

    GbtModel m;
    m.params = params;
    m.n_features = static_cast<int>(X[0].size());
    const double p0 = static_cast<double>(pos) / n;
    m.init_logodds = std::log(p0 / (1.0 - p0));

    std::vector<double> score(n, m.init_logodds);
    std::vector<double> residual(n);
    std::mt19937_64 rng(detail::splitmix64(params.seed ^ 0xabcdef12ULL));
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    const int n_sub = std::max(2, static_cast<int>(std::lround(params.subsample * n)));

    auto full_loss = [&](const std::vector<double>& s) {
        double loss = 0;
        for (int i = 0; i < n; ++i) loss += detail::softplus(s[i]) - y[i] * s[i];
        return loss / n;
    };
    double cur_loss = full_loss(score);

    std::vector<double> step(n), trial(n);
    for (int round = 0; round < params.n_trees; ++round) {
        for (int i = 0; i < n; ++i) residual[i] = y[i] - detail::sigmoid(score[i]);
        std::vector<int> sub = all;
        std::shuffle(sub.begin(), sub.end(), rng);
        sub.resize(n_sub);
        std::sort(sub.begin(), sub.end());

        const std::uint64_t ts = detail::splitmix64(params.seed ^ (0x51bdULL + round));
        detail::TreeBuilder b(X, residual, detail::TreeTask::regression, params.max_depth,
                              params.min_leaf, params.features_per_split, ts);
        Tree tree = b.run(sub);
        // Newton leaf values over the subsample, clamped for stability
        std::vector<double> num(tree.n_leaves, 0.0), den(tree.n_leaves, 1e-12);
        for (int i : sub) {
            const int leaf = tree.leaf_of(X[i]);
            const double p = detail::sigmoid(score[i]);
            num[leaf] += y[i] - p;
            den[leaf] += p * (1.0 - p);
        }
        for (auto& node : tree.nodes)
            if (node.leaf_index >= 0)
                node.value = std::clamp(num[node.leaf_index] / den[node.leaf_index], -4.0, 4.0);

        for (int i = 0; i < n; ++i) step[i] = tree.predict(X[i]);
        // step halving keeps the full-training-set loss nonincreasing even
        // though trees are fit on a subsample
        double scale = params.shrinkage;
        double new_loss = cur_loss;
        for (int attempt = 0; attempt < 50; ++attempt) {
            for (int i = 0; i < n; ++i) trial[i] = score[i] + scale * step[i];
            new_loss = full_loss(trial);
            if (new_loss <= cur_loss) break;
            scale *= 0.5;
        }
        if (new_loss > cur_loss) {
            scale = 0.0;
            new_loss = cur_loss;
            trial = score;
        }
        for (auto& node : tree.nodes)
            if (node.leaf_index >= 0) node.value *= scale;

        m.leaf_offsets.push_back(m.embedding_dim());
        score = trial;
        cur_loss = new_loss;
        m.trees.push_back(std::move(tree));
        m.train_loss.push_back(cur_loss);
    }
    return m;
}

// One-hot of the reached leaf per tree, concatenated; exactly one active
// index per tree.
inline std::vector<int> leaf_embedding(const GbtModel& g, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != g.n_features)
        throw std::invalid_argument("feature dimension mismatch");
    std::vector<int> active;
    active.reserve(g.trees.size());
    for (std::size_t t = 0; t < g.trees.size(); ++t)
        active.push_back(g.leaf_offsets[t] + g.trees[t].leaf_of(x));
    return active;
}

// Sparse binary design matrix: per-sample active index lists.
struct SparseBinary {
    int dim = 0;
    std::vector<std::vector<int>> rows;
};

struct LinearModel {
    std::vector<double> weights;
    double bias = 0;
    double C = 0.2;
    std::array<double, 2> class_weights{1.0, 1.0};

    double score(const std::vector<int>& active) const {
        double s = bias;
        for (int i : active) s += weights[i];
        return detail::sigmoid(s);
    }
};

inline std::array<double, 2> balanced_class_weights(const std::vector<int>& y) {
    const double n = static_cast<double>(y.size());
    const double n1 = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const double n0 = n - n1;
    return {n / (2.0 * n0), n / (2.0 * n1)};
}

struct LogisticFitConfig {
    int max_iters = 200000;
    double grad_tol = 1e-6;
    std::vector<double> init_weights;  // empty = zeros
    double init_bias = 0;
};

// Objective (1/C)*0.5*||w||^2 + sum_i cw(y_i)*logloss_i; bias unregularized.
// Fills the gradient when pointers are given.
inline double logistic_objective(const SparseBinary& E, const std::vector<int>& y, double C,
                                 const std::array<double, 2>& class_weights,
                                 const std::vector<double>& w, double b,
                                 std::vector<double>* grad_w = nullptr,
                                 double* grad_b = nullptr) {
    const int n = static_cast<int>(E.rows.size());
    double J = 0;
    for (double wi : w) J += wi * wi;
    J *= 0.5 / C;
    if (grad_w) {
        grad_w->assign(E.dim, 0.0);
        for (int i = 0; i < E.dim; ++i) (*grad_w)[i] = w[i] / C;
        *grad_b = 0;
    }
    for (int i = 0; i < n; ++i) {
        double si = b;
        for (int a : E.rows[i]) si += w[a];
        J += class_weights[y[i]] * (detail::softplus(si) - y[i] * si);
        if (grad_w) {
            const double r = class_weights[y[i]] * (detail::sigmoid(si) - y[i]);
            for (int a : E.rows[i]) (*grad_w)[a] += r;
            *grad_b += r;
        }
    }
    return J;
}

// Full-batch gradient descent with backtracking line search; iterates until
// the gradient norm drops below grad_tol, throwing if the budget runs out.
inline LinearModel fit_logistic(const SparseBinary& E, const std::vector<int>& y, double C,
                                const std::array<double, 2>& class_weights,
                                const LogisticFitConfig& cfg = {}) {
    if (E.dim < 1) throw std::invalid_argument("empty design matrix");
    LinearModel m;
    m.weights = cfg.init_weights.empty() ? std::vector<double>(E.dim, 0.0) : cfg.init_weights;
    if (static_cast<int>(m.weights.size()) != E.dim)
        throw std::invalid_argument("init weight dimension mismatch");
    m.bias = cfg.init_bias;
    m.C = C;
    m.class_weights = class_weights;

    std::vector<double> gw(E.dim), wtrial(E.dim);
    double gb = 0;
    double J = logistic_objective(E, y, C, class_weights, m.weights, m.bias, &gw, &gb);
    double step = 1.0;
    int stalled = 0;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        double gnorm2 = gb * gb;
        for (double g : gw) gnorm2 += g * g;
        if (std::sqrt(gnorm2) < cfg.grad_tol) return m;

        const double J_prev = J;
        step *= 2.0;  // tentative growth, backtracking trims it
        while (true) {
            // step underflow means the objective plateaued at double precision
            if (step < 1e-18) return m;
            for (int i = 0; i < E.dim; ++i) wtrial[i] = m.weights[i] - step * gw[i];
            const double btrial = m.bias - step * gb;
            const double Jt = logistic_objective(E, y, C, class_weights, wtrial, btrial);
            if (Jt <= J - 0.25 * step * gnorm2) {
                m.weights.swap(wtrial);
                m.bias = btrial;
                J = Jt;
                break;
            }
            step *= 0.5;
        }
        // sustained stagnation along exact descent directions: the optimum is
        // resolved to double precision even if the gradient floor sits above
        // grad_tol (flat bias valley on separable data)
        if (J_prev - J <= 1e-13 * (std::abs(J_prev) + 1.0)) {
            if (++stalled >= 20) return m;
        } else {
            stalled = 0;
        }
        J = logistic_objective(E, y, C, class_weights, m.weights, m.bias, &gw, &gb);
    }
    double gnorm2 = gb * gb;
    for (double g : gw) gnorm2 += g * g;
    throw std::runtime_error("logistic regression did not converge: gradient norm " +
                             std::to_string(std::sqrt(gnorm2)));
}

// M2 = GBT leaf embedding + logistic head.
struct GbtLogisticModel {
    GbtModel gbt;
    LinearModel lr;

    double predict_score(const std::vector<double>& x) const {
        return lr.score(leaf_embedding(gbt, x));
    }
};

inline GbtLogisticModel fit_gbt_logistic(const Matrix& X, const std::vector<int>& y,
                                         const GbtParams& gbt_params, double C) {
    GbtLogisticModel m;
    m.gbt = fit_gbt(X, y, gbt_params);
    SparseBinary E;
    E.dim = m.gbt.embedding_dim();
    for (const auto& x : X) E.rows.push_back(leaf_embedding(m.gbt, x));
    m.lr = fit_logistic(E, y, C, balanced_class_weights(y));
    return m;
}

// ---------------------------------------------------------------------------
// JSON model files (versioned).
// ---------------------------------------------------------------------------

constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json tree_to_json(const Tree& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.leaf_index});
    return {{"nodes", nodes}, {"n_leaves", t.n_leaves}};
}

inline Tree tree_from_json(const nlohmann::json& j) {
    Tree t;
    t.n_leaves = j.at("n_leaves").get<int>();
    for (const auto& nj : j.at("nodes")) {
        TreeNode n;
        n.feature = nj.at(0).get<int>();
        n.threshold = nj.at(1).get<double>();
        n.left = nj.at(2).get<int>();
        n.right = nj.at(3).get<int>();
        n.value = nj.at(4).get<double>();
        n.leaf_index = nj.at(5).get<int>();
        t.nodes.push_back(n);
    }
    return t;
}

}  // namespace detail

inline nlohmann::json forest_to_json(const ForestModel& m) {
    nlohmann::json j;
    j["version"] = kModelFormatVersion;
    j["type"] = "random_forest";
    j["n_features"] = m.n_features;
    j["seed"] = m.seed;
    j["importances"] = m.importances;
    j["trees"] = nlohmann::json::array();
    for (const auto& t : m.trees) j["trees"].push_back(detail::tree_to_json(t));
    return j;
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version");
    ForestModel m;
    m.n_features = j.at("n_features").get<int>();
    m.seed = j.value("seed", 0ULL);
    m.importances = j.value("importances", std::vector<double>{});
    for (const auto& tj : j.at("trees")) m.trees.push_back(detail::tree_from_json(tj));
    return m;
}

inline nlohmann::json gbt_logistic_to_json(const GbtLogisticModel& m) {
    nlohmann::json j;
    j["version"] = kModelFormatVersion;
    j["type"] = "gbt_logistic";
    j["n_features"] = m.gbt.n_features;
    j["init_logodds"] = m.gbt.init_logodds;
    j["shrinkage"] = m.gbt.params.shrinkage;
    j["leaf_offsets"] = m.gbt.leaf_offsets;
    j["trees"] = nlohmann::json::array();
    for (const auto& t : m.gbt.trees) j["trees"].push_back(detail::tree_to_json(t));
    j["lr"] = {{"weights", m.lr.weights},
               {"bias", m.lr.bias},
               {"C", m.lr.C},
               {"class_weights", m.lr.class_weights}};
    return j;
}

inline GbtLogisticModel gbt_logistic_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version");
    GbtLogisticModel m;
    m.gbt.n_features = j.at("n_features").get<int>();
    m.gbt.init_logodds = j.at("init_logodds").get<double>();
    m.gbt.params.shrinkage = j.at("shrinkage").get<double>();
    m.gbt.leaf_offsets = j.at("leaf_offsets").get<std::vector<int>>();
    for (const auto& tj : j.at("trees")) m.gbt.trees.push_back(detail::tree_from_json(tj));
    m.lr.weights = j.at("lr").at("weights").get<std::vector<double>>();
    m.lr.bias = j.at("lr").at("bias").get<double>();
    m.lr.C = j.at("lr").at("C").get<double>();
    const auto cw = j.at("lr").at("class_weights");
    m.lr.class_weights = {cw.at(0).get<double>(), cw.at(1).get<double>()};
    return m;
}

}  // namespace ctsev
