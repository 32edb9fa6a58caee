// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each check is self-contained and uses independent oracles.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctsev/pipeline.hpp"

using namespace ctsev;

namespace {

int failures = 0;

void criterion(const std::string& name, const std::function<std::string()>& run) {
    std::string detail;
    try {
        detail = run();
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    if (detail.empty()) {
        std::printf("PASS  %s\n", name.c_str());
    } else {
        ++failures;
        std::printf("FAIL  %s: %s\n", name.c_str(), detail.c_str());
    }
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool rel_ok(double got, double want, double tol) {
    if (got == want) return true;
    return std::abs(got - want) <= tol * std::max(std::abs(got), std::abs(want));
}

std::vector<PhantomResult> shared_phantoms;

PhantomResult make_phantom(std::uint64_t seed, int lesions) {
    PhantomSpec spec = default_phantom_spec({64, 64, 64});
    if (lesions > 0) add_random_lesions(spec, lesions, seed * 31 + 7, 2.5, 6.0, 0.4);
    return generate_phantom(spec, seed);
}

MetricsParams phantom_params() {
    PhantomSpec spec = default_phantom_spec({64, 64, 64});
    MetricsParams p;
    p.min_lesion_voxels = 1;
    p.rind_depth_mm = spec.rind_depth_mm;
    p.apex_fraction = spec.apex_fraction;
    p.mediastinal_halfwidth_mm = spec.mediastinal_halfwidth_mm;
    return p;
}

double mann_whitney(const std::vector<double>& s, const std::vector<int>& y) {
    double u = 0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 1) continue;
        ++np;
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[j] == 1) continue;
            u += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    for (int v : y) nn += v == 0;
    return u / (static_cast<double>(np) * static_cast<double>(nn));
}

int brute_component_count(const RegionLabels& g, int connectivity) {
    const Dims d = g.dims;
    std::vector<char> seen(d.count(), 0);
    int count = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t s = d.index(z, y, x);
                if (g.labels[s] == 0 || seen[s]) continue;
                ++count;
                std::queue<std::array<int, 3>> q;
                q.push({z, y, x});
                seen[s] = 1;
                while (!q.empty()) {
                    auto [cz, cy, cx] = q.front();
                    q.pop();
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int m = std::abs(dz) + std::abs(dy) + std::abs(dx);
                                if (m == 0) continue;
                                if (connectivity == 6 && m > 1) continue;
                                if (connectivity == 18 && m > 2) continue;
                                const int nz = cz + dz, ny = cy + dy, nx = cx + dx;
                                if (!d.contains(nz, ny, nx)) continue;
                                const std::size_t ni = d.index(nz, ny, nx);
                                if (g.labels[ni] != 0 && !seen[ni]) {
                                    seen[ni] = 1;
                                    q.push({nz, ny, nx});
                                }
                            }
                }
            }
    return count;
}

double brute_surface_distance(const RegionLabels& lobes, const Spacing& sp, int z, int y, int x) {
    const Dims d = lobes.dims;
    double best = 1e30;
    for (int bz = 0; bz < d.nz; ++bz)
        for (int by = 0; by < d.ny; ++by)
            for (int bx = 0; bx < d.nx; ++bx) {
                const std::uint8_t l = lobes.at(bz, by, bx);
                if (l >= 1 && l <= 5) continue;
                const double dz = (bz - z) * sp.dz, dy = (by - y) * sp.dy, dx = (bx - x) * sp.dx;
                best = std::min(best, dz * dz + dy * dy + dx * dx);
            }
    return std::sqrt(best);
}

struct Synth {
    Matrix X;
    std::vector<int> y;
};

Synth xor_data(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    Synth s;
    for (int i = 0; i < n; ++i) {
        const double a = u(rng), b = u(rng);
        s.X.push_back({a, b, u(rng)});
        s.y.push_back((a > 0) != (b > 0) ? 1 : 0);
    }
    return s;
}

Synth linear_separable(int n, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    Synth s;
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(k);
        for (auto& v : row) v = g(rng);
        const int label = i % 2;
        row[0] = label ? 2.0 + 0.1 * g(rng) : -2.0 + 0.1 * g(rng);
        s.X.push_back(row);
        s.y.push_back(label);
    }
    return s;
}

FeatureMatrix planted_rfe_matrix(int n, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    FeatureMatrix m;
    for (int f = 0; f < k; ++f) m.names.push_back("f" + std::to_string(f));
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        std::vector<double> row(k);
        for (auto& v : row) v = g(rng);
        row[4] += label ? 2.2 : -2.2;
        row[11] += label ? -1.8 : 1.8;
        row[25] += label ? 1.5 : -1.5;
        m.rows.push_back(row);
        m.cohorts.push_back(label ? Cohort::covid : Cohort::healthy);
        m.splits.push_back(Split::train);
        m.case_ids.push_back("c" + std::to_string(i));
    }
    return m;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Criteria.
// ---------------------------------------------------------------------------

std::string metric_oracle_equivalence() {
    const MetricsParams p = phantom_params();
    shared_phantoms.clear();
    for (std::uint64_t seed = 1; seed <= 50; ++seed)
        shared_phantoms.push_back(make_phantom(seed, static_cast<int>(3 + seed % 5)));

    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& ph : shared_phantoms) {
        const SeverityVector got = compute_all(ph.ct, ph.lobes, ph.disease, p).severity;
        const SeverityVector want = truth_severity(ph.truth);
        if (got.n_lesions != want.n_lesions || got.n_peripheral != want.n_peripheral ||
            got.n_rind != want.n_rind || got.n_core != want.n_core ||
            got.bilaterality != want.bilaterality || got.affected_lobes != want.affected_lobes ||
            *got.lss != *want.lss || *got.lhos != *want.lhos ||
            *got.lhos_novessel != *want.lhos_novessel)
            return "count metric mismatch";
        const auto gr = got.as_row(), wr = want.as_row();
        for (std::size_t f = 0; f < gr.size(); ++f)
            if (!rel_ok(gr[f], wr[f], 1e-9))
                return "percentage mismatch at " + SeverityVector::names()[f];
    }
    const double dt = seconds_since(t0);
    if (dt >= 10.0) return "runtime " + std::to_string(dt) + "s >= 10s";
    return {};
}

std::string partition_identities() {
    const MetricsParams p = phantom_params();
    auto check = [&](const SeverityVector& v, const RegionLabels& lobes,
                     double rind_depth) -> std::string {
        if (v.pct_ggo + v.pho_lungs != v.po_lungs) return "pct_ggo + pho != po";
        if (v.n_rind + v.n_core != v.n_lesions) return "n_rind + n_core != n_lesions";
        std::int64_t lung = 0;
        for (auto l : lobes.labels) lung += (l >= 1 && l <= 5);
        if (lung == 0) return {};
        const RegionPartition part = partition_rind_core(lobes, lobes.spacing, rind_depth);
        std::int64_t rind = 0, core = 0;
        for (auto l : part.partition.labels) {
            rind += l == kRegionRind;
            core += l == kRegionCore;
        }
        if (rind + core != lung) return "|rind| + |core| != |lung|";
        return {};
    };

    for (const auto& ph : shared_phantoms) {
        const SeverityVector v = compute_all(ph.ct, ph.lobes, ph.disease, p).severity;
        const std::string err = check(v, ph.lobes, p.rind_depth_mm);
        if (!err.empty()) return err + " (phantom)";
    }

    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0, 1);
    MetricsParams rp;
    rp.min_lesion_voxels = 1;
    rp.rind_depth_mm = 2.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Dims d{12, 12, 12};
        VoxelVolume ct = make_volume(d, {1, 1, 1}, ValueKind::hounsfield, -1000.f);
        RegionLabels lobes = make_labels(d, {1, 1, 1});
        RegionLabels disease = make_labels(d, {1, 1, 1});
        for (std::size_t i = 0; i < d.count(); ++i) {
            lobes.labels[i] = static_cast<std::uint8_t>(rng() % 6);
            if (lobes.labels[i] >= 1 && u(rng) < 0.3) {
                disease.labels[i] = 1;
                ct.data[i] = static_cast<float>(-900.0 + 950.0 * u(rng));
            }
        }
        const SeverityVector v = compute_all(ct, lobes, disease, rp).severity;
        const std::string err = check(v, lobes, rp.rind_depth_mm);
        if (!err.empty()) return err + " (random mask " + std::to_string(trial) + ")";
    }
    return {};
}

std::string components_and_distances() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const Dims d{static_cast<int>(3 + rng() % 30), static_cast<int>(3 + rng() % 30),
                     static_cast<int>(3 + rng() % 30)};
        RegionLabels g = make_labels(d, {1, 1, 1});
        for (auto& l : g.labels) l = u(rng) < 0.13 ? 1 : 0;
        for (int conn : {6, 18, 26}) {
            const int got = static_cast<int>(connected_components(g, conn, 1).lesions.size());
            if (got != brute_component_count(g, conn))
                return "component count mismatch, trial " + std::to_string(trial);
        }
    }
    for (int trial = 0; trial < 100; ++trial) {
        const Dims d{static_cast<int>(3 + rng() % 14), static_cast<int>(3 + rng() % 14),
                     static_cast<int>(3 + rng() % 14)};
        const Spacing sp = trial % 2 ? Spacing{3, 1, 2} : Spacing{1, 1, 1};
        RegionLabels g = make_labels(d, sp);
        bool any = false, anybg = false;
        for (auto& l : g.labels) {
            l = u(rng) < 0.4 ? 1 : 0;
            (l ? any : anybg) = true;
        }
        if (!any || !anybg) continue;
        const VoxelVolume dist = surface_distance_field(g, sp);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    if (g.at(z, y, x) == 0) continue;
                    if (dist.at(z, y, x) !=
                        static_cast<float>(brute_surface_distance(g, sp, z, y, x)))
                        return "distance mismatch, trial " + std::to_string(trial);
                }
    }
    return {};
}

std::string auc_and_operating_point() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 10 + static_cast<int>(rng() % 191);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = std::round(u(rng) * 16) / 16.0;  // grid forces ties
            y[i] = i % 2;
        }
        const RocCurve c = roc_curve(s, y);
        if (std::abs(c.auc - mann_whitney(s, y)) > 1e-12)
            return "auc != mann-whitney, trial " + std::to_string(trial);

        const RocPoint got = operating_point(c);
        auto key = [](const RocPoint& p) {
            return std::array<double, 3>{std::hypot(p.fpr, 1 - p.tpr), -p.tpr, p.fpr};
        };
        std::size_t best = 0;
        for (std::size_t i = 1; i < c.points.size(); ++i)
            if (key(c.points[i]) < key(c.points[best])) best = i;
        if (got.fpr != c.points[best].fpr || got.tpr != c.points[best].tpr ||
            got.threshold != c.points[best].threshold)
            return "operating point mismatch, trial " + std::to_string(trial);
    }
    return {};
}

std::string bootstrap_protocol() {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        s.push_back(i < 15 ? 0.9 + 0.001 * i : 0.1 + 0.001 * i);
        y.push_back(i < 15 ? 1 : 0);
    }
    const auto sep = bootstrap_ci(s, y, 1000, 5);
    if (sep.first != 1.0 || sep.second != 1.0) return "separated CI is not (1.0, 1.0)";

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : s) v = u(rng);
    const auto a = bootstrap_ci(s, y, 1000, 17);
    const auto b = bootstrap_ci(s, y, 1000, 17);
    if (a != b) return "same seed gave different intervals";
    if (a == bootstrap_ci(s, y, 1000, 18)) return "different seeds agree suspiciously";
    if (a.first > a.second) return "inverted interval";
    return {};
}

std::string analytic_gradients() {
    // logistic head
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> pick(0, 5);
    SparseBinary E;
    E.dim = 6;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        std::vector<int> row = {pick(rng), pick(rng)};
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
        E.rows.push_back(row);
        y.push_back(i % 2);
    }
    const auto cw = balanced_class_weights(y);
    std::normal_distribution<double> g;
    std::vector<double> w(E.dim);
    for (auto& v : w) v = 0.5 * g(rng);
    const double b = 0.3;
    std::vector<double> gw;
    double gb = 0;
    logistic_objective(E, y, 0.2, cw, w, b, &gw, &gb);
    const double h = 1e-6;
    auto fd_ok = [&](double analytic, double fd) {
        return std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd));
    };
    for (int d = 0; d < E.dim; ++d) {
        std::vector<double> wp = w, wm = w;
        wp[d] += h;
        wm[d] -= h;
        const double fd = (logistic_objective(E, y, 0.2, cw, wp, b) -
                           logistic_objective(E, y, 0.2, cw, wm, b)) /
                          (2 * h);
        if (!fd_ok(gw[d], fd)) return "LR weight gradient off at " + std::to_string(d);
    }
    const double fdb =
        (logistic_objective(E, y, 0.2, cw, w, b + h) - logistic_objective(E, y, 0.2, cw, w, b - h)) /
        (2 * h);
    if (!fd_ok(gb, fdb)) return "LR bias gradient off";

    // network, tiny spec
    NetworkSpec spec;
    spec.input = {2, 4, 8, 8};
    spec.channels = {2, 2, 2, 2, 2, 2, 2};
    Network net(spec, 3);
    {
        std::mt19937_64 prng(17);
        std::normal_distribution<double> pg(0.0, 0.3);
        for (auto& p : net.parameters())
            for (auto& v : *p.value) v += pg(prng);
    }
    std::vector<Tensor4> batch;
    {
        std::mt19937_64 brng(5);
        std::normal_distribution<double> bg;
        for (int i = 0; i < 2; ++i) {
            Tensor4 t(spec.input);
            for (auto& v : t.v) v = bg(brng);
            batch.push_back(std::move(t));
        }
    }
    const std::vector<int> by = {1, 0};
    auto batch_loss = [&]() {
        const std::vector<double> logits = net.forward_train(batch);
        double loss = 0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double z = logits[i];
            loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - by[i] * z;
        }
        return loss / logits.size();
    };
    const std::vector<double> logits = net.forward_train(batch);
    net.zero_grad();
    std::vector<double> dlogits(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        dlogits[i] = (1.0 / (1.0 + std::exp(-logits[i])) - by[i]) / logits.size();
    net.backward(dlogits);
    std::vector<std::vector<double>> analytic;
    for (auto& p : net.parameters()) analytic.push_back(*p.grad);
    const double hn = 1e-4;
    auto params = net.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = *params[pi].value;
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double orig = vals[j];
            vals[j] = orig + hn;
            const double lp = batch_loss();
            vals[j] = orig - hn;
            const double lm = batch_loss();
            vals[j] = orig;
            const double fd = (lp - lm) / (2 * hn);
            const double a = analytic[pi][j];
            const double rel = std::abs(a - fd) / std::max(1e-6, std::abs(a) + std::abs(fd));
            if (rel >= 1e-4) return "CNN gradient off in " + params[pi].name;
        }
    }
    return {};
}

std::string architecture_fidelity() {
    NetworkSpec s;
    if (s.linear_input() != 144) return "default linear input is not 144";
    // full-scale shape ladder, computed arithmetically only
    const auto shapes = s.block_shapes();
    const int depths[] = {128, 128, 64, 32, 16, 8, 4};
    const int hw[] = {192, 96, 48, 24, 12, 6, 3};
    const int ch[] = {8, 16, 32, 32, 16, 8, 4};
    for (int b = 0; b < 7; ++b)
        if (shapes[b].c != ch[b] || shapes[b].d != depths[b] || shapes[b].h != hw[b] ||
            shapes[b].w != hw[b])
            return "full-scale shape ladder mismatch at block " + std::to_string(b);

    NetworkSpec bad = s;
    bad.channels.back() = 8;  // 8*4*3*3 = 288
    try {
        bad.validate();
        return "accepted a 288-dimensional full-scale plan";
    } catch (const std::invalid_argument&) {
    }
    try {
        Network net(bad, 0);
        return "constructed a network from an invalid plan";
    } catch (const std::invalid_argument&) {
    }
    NetworkSpec short_plan = s;
    short_plan.channels = {8, 16};
    try {
        short_plan.validate();
        return "accepted a truncated plan";
    } catch (const std::invalid_argument&) {
    }
    return {};
}

std::string sampler_balance() {
    std::vector<int> labels(200, 0);
    for (int i = 0; i < 20; ++i) labels[i] = 1;  // 90/10
    BalancedSampler sampler(labels, 99);
    int pos = 0;
    for (int i = 0; i < 10000; ++i) pos += labels[sampler.next()];
    const double frac = pos / 10000.0;
    if (std::abs(frac - 0.5) > 0.02)
        return "positive fraction " + std::to_string(frac) + " outside 0.50 +/- 0.02";
    return {};
}

std::string learning_sanity() {
    int rfe_hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const FeatureMatrix m = planted_rfe_matrix(160, 32, 100 + seed);
        std::vector<std::size_t> sel = recursive_feature_elimination(m, 3, seed);
        std::sort(sel.begin(), sel.end());
        if (sel == std::vector<std::size_t>{4, 11, 25}) ++rfe_hits;
    }
    if (rfe_hits < 9) return "RFE recovered planted features in only " +
                             std::to_string(rfe_hits) + "/10 seeds";

    int m2_wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Synth tr = xor_data(200, 1000 + seed);
        const Synth te = xor_data(200, 2000 + seed);
        ForestParams fp;
        fp.n_trees = 100;
        fp.seed = seed;
        const ForestModel m1 = fit_random_forest(tr.X, tr.y, fp);
        GbtParams gp;
        gp.n_trees = 200;
        gp.seed = seed;
        const GbtLogisticModel m2 = fit_gbt_logistic(tr.X, tr.y, gp, 0.2);
        std::vector<double> s1, s2;
        for (const auto& x : te.X) {
            s1.push_back(m1.predict_score(x));
            s2.push_back(m2.predict_score(x));
        }
        if (mann_whitney(s2, te.y) > mann_whitney(s1, te.y)) ++m2_wins;
    }
    if (m2_wins < 8) return "M2 beat M1 in only " + std::to_string(m2_wins) + "/10 seeds";

    // desk-scale M3 on separable phantom cohorts
    const auto t0 = std::chrono::steady_clock::now();
    const NetworkSpec spec = desk_scale_spec();
    std::vector<Tensor4> Xtr, Xval, Xte;
    std::vector<int> ytr, yval, yte;
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        PhantomSpec ps = default_phantom_spec({64, 64, 64});
        if (label) add_random_lesions(ps, 9, 555 + i, 3.0, 6.0, 0.5);
        const PhantomResult ph = generate_phantom(ps, 900 + i);
        Tensor4 t = preprocess_case(ph.ct, ph.lobes, ph.prob, spec.input);
        if (i < 24) {
            Xtr.push_back(std::move(t));
            ytr.push_back(label);
        } else if (i < 32) {
            Xval.push_back(std::move(t));
            yval.push_back(label);
        } else {
            Xte.push_back(std::move(t));
            yte.push_back(label);
        }
    }
    Network net(spec, 7);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 4;
    cfg.seed = 7;
    cfg.early_stop_val_auc = 0.999;
    train(net, Xtr, ytr, Xval, yval, cfg);
    std::vector<double> scores;
    for (const auto& x : Xte) scores.push_back(net.predict_score(x));
    const double auc = roc_curve(scores, yte).auc;
    const double dt = seconds_since(t0);
    if (auc < 0.95) return "M3 held-out AUC " + std::to_string(auc) + " < 0.95";
    if (dt >= 600.0) return "M3 runtime " + std::to_string(dt) + "s >= 10 min";
    return {};
}

std::string gbt_monotone_loss() {
    const Synth s = linear_separable(200, 6, 55);
    GbtParams p;  // defaults: 2000 trees, depth 3, 3 features/split, subsample 0.8
    p.seed = 17;
    const GbtModel m = fit_gbt(s.X, s.y, p);
    if (m.train_loss.size() != 2000) return "expected 2000 recorded rounds";
    for (std::size_t i = 1; i < m.train_loss.size(); ++i)
        if (m.train_loss[i] > m.train_loss[i - 1])
            return "loss increased at round " + std::to_string(i);
    return {};
}

std::string demo_determinism() {
    namespace fs = std::filesystem;
    PipelineConfig cfg;
    cfg.seed = 9;
    cfg.demo_per_cohort = 8;
    cfg.forest.n_trees = 60;
    cfg.gbt.n_trees = 200;
    cfg.n_boot = 1000;
    cfg.train_m3 = true;
    cfg.m3.epochs = 2;

    const fs::path base = fs::temp_directory_path() / "ctsev_acceptance_demo";
    fs::remove_all(base);
    cfg.out_dir = (base / "a").string();
    const PipelineResult ra = run_pipeline(cfg);
    cfg.out_dir = (base / "b").string();
    run_pipeline(cfg);
    for (const char* name : {"metrics.csv", "report.json"})
        if (slurp((base / "a" / name).string()) != slurp((base / "b" / name).string()))
            return std::string(name) + " differs between reruns";

    const std::string table = render_confusion_table("M1", ra.m1.confusion);
    if (table.find("COVID-19") == std::string::npos || table.find("ILD") == std::string::npos ||
        table.find("Pneumonia") == std::string::npos ||
        table.find("Healthy") == std::string::npos)
        return "confusion header lacks the four categories";
    int pred_rows = 0;
    std::stringstream ss(table);
    std::string line;
    while (std::getline(ss, line)) pred_rows += line.rfind("Predicted", 0) == 0;
    if (pred_rows != 2) return "confusion table is not 2 prediction rows x 4 categories";
    return {};
}

std::string clustering_checks() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g(0, 0.5);
    FeatureMatrix m;
    m.names = {"a", "b"};
    for (int i = 0; i < 24; ++i) {
        const double cx = i < 10 ? 0.0 : 10.0;  // separation 10x spread
        m.rows.push_back({cx + g(rng), g(rng)});
        m.cohorts.push_back(Cohort::healthy);
        m.splits.push_back(Split::train);
        m.case_ids.push_back("c" + std::to_string(i));
    }
    const Dendrogram d = average_linkage(distance_matrix(m));
    const std::vector<int> cl = cut_largest_gap(d, 24);
    for (int i = 1; i < 10; ++i)
        if (cl[i] != cl[0]) return "first blob split apart";
    for (int i = 11; i < 24; ++i)
        if (cl[i] != cl[10]) return "second blob split apart";
    if (cl[0] == cl[10]) return "blobs merged into one cluster";

    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 12);
        std::vector<std::vector<double>> D(n, std::vector<double>(n, 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) D[i][j] = D[j][i] = u(rng);
        const Dendrogram dd = average_linkage(D);
        for (std::size_t k = 1; k < dd.merges.size(); ++k)
            if (dd.merges[k].distance < dd.merges[k - 1].distance - 1e-12)
                return "merge heights decreased, trial " + std::to_string(trial);
    }
    return {};
}

}  // namespace

int main() {
    criterion("metric-oracle equivalence on 50 phantoms under 10s", metric_oracle_equivalence);
    criterion("partition identities on phantoms and random masks", partition_identities);
    criterion("components and distances match brute force", components_and_distances);
    criterion("auc equals mann-whitney, operating point matches scan", auc_and_operating_point);
    criterion("bootstrap deterministic, separated CI is (1.0, 1.0)", bootstrap_protocol);
    criterion("LR and CNN gradients match finite differences", analytic_gradients);
    criterion("architecture: 144-dim linear input enforced", architecture_fidelity);
    criterion("balanced sampler draws 0.50 +/- 0.02 positives", sampler_balance);
    criterion("learning sanity: RFE, M2 > M1, desk-scale M3", learning_sanity);
    criterion("gbt loss nonincreasing over 2000 rounds", gbt_monotone_loss);
    criterion("demo reruns byte-identical, 2x4 confusion layout", demo_determinism);
    criterion("clustering: two blobs exact, heights monotone", clustering_checks);
    if (failures) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
