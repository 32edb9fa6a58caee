#pragma once
// Case manifests, cohort filtering, stratified splitting, the metrics table
// and the end-to-end pipeline with its artifact directory.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctsev/cluster.hpp"
#include "ctsev/convnet.hpp"
#include "ctsev/eval.hpp"
#include "ctsev/forest.hpp"
#include "ctsev/metrics.hpp"
#include "ctsev/phantom.hpp"
#include "ctsev/volume.hpp"

namespace ctsev {

constexpr int kManifestVersion = 1;

struct CaseRecord {
    std::string id;
    std::string ct, lobes, disease, prob;  // grid base paths (or .json paths)
    Cohort cohort = Cohort::healthy;
    Split split = Split::train;
};

inline void save_manifest(const std::vector<CaseRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f << nlohmann::ordered_json{{"manifest_version", kManifestVersion}}.dump() << "\n";
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["ct"] = r.ct;
        j["lobes"] = r.lobes;
        j["disease"] = r.disease;
        j["prob"] = r.prob;
        j["cohort"] = to_string(r.cohort);
        j["split"] = to_string(r.split);
        f << j.dump() << "\n";
    }
}

inline std::vector<CaseRecord> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty manifest: " + path);
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("manifest_version", -1) != kManifestVersion)
        throw std::runtime_error("unsupported manifest version in " + path);

    std::vector<CaseRecord> records;
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        CaseRecord r;
        r.id = j.at("id").get<std::string>();
        r.ct = j.at("ct").get<std::string>();
        r.lobes = j.at("lobes").get<std::string>();
        r.disease = j.at("disease").get<std::string>();
        r.prob = j.at("prob").get<std::string>();
        r.cohort = cohort_from_string(j.at("cohort").get<std::string>());
        r.split = split_from_string(j.value("split", "train"));
        if (!seen.insert(r.id).second)
            throw std::runtime_error("duplicate case id in manifest: " + r.id);
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Metrics table.
// ---------------------------------------------------------------------------

inline SeverityVector compute_case_metrics(const CaseRecord& r, const MetricsParams& params) {
    const VoxelVolume ct = load_volume(r.ct);
    const RegionLabels lobes = load_labels(r.lobes);
    const RegionLabels disease = load_labels(r.disease);
    return compute_all(ct, lobes, disease, params).severity;
}

// One row per case, sorted by case id so worker scheduling never changes the
// table.
inline FeatureMatrix compute_metrics_for_manifest(std::vector<CaseRecord> records,
                                                  const MetricsParams& params,
                                                  int n_threads = 0) {
    std::sort(records.begin(), records.end(),
              [](const CaseRecord& a, const CaseRecord& b) { return a.id < b.id; });
    FeatureMatrix m;
    m.names = SeverityVector::names();
    m.rows.assign(records.size(), {});
    m.cohorts.resize(records.size());
    m.splits.resize(records.size());
    m.case_ids.resize(records.size());

    std::vector<std::string> errors(records.size());
    if (n_threads < 1) n_threads = std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next.fetch_add(1); i < records.size(); i = next.fetch_add(1)) {
            try {
                m.rows[i] = compute_case_metrics(records[i], params).as_row();
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
            m.cohorts[i] = records[i].cohort;
            m.splits[i] = records[i].split;
            m.case_ids[i] = records[i].id;
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < records.size(); ++i)
        if (!errors[i].empty())
            throw std::runtime_error("stage compute-metrics, case " + records[i].id + ": " +
                                     errors[i]);
    return m;
}

namespace detail {

inline std::string format_value(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_metrics_csv(const FeatureMatrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write: " + path);
    f << "case_id,cohort,split";
    for (const auto& n : m.names) f << "," << n;
    f << "\n";
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        f << m.case_ids[i] << "," << to_string(m.cohorts[i]) << "," << to_string(m.splits[i]);
        for (double v : m.rows[i]) f << "," << detail::format_value(v);
        f << "\n";
    }
}

inline FeatureMatrix read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty metrics file: " + path);
    FeatureMatrix m;
    std::stringstream hs(line);
    std::string tok;
    std::getline(hs, tok, ',');  // case_id
    std::getline(hs, tok, ',');  // cohort
    std::getline(hs, tok, ',');  // split
    while (std::getline(hs, tok, ',')) m.names.push_back(tok);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::getline(ls, tok, ',');
        m.case_ids.push_back(tok);
        std::getline(ls, tok, ',');
        m.cohorts.push_back(cohort_from_string(tok));
        std::getline(ls, tok, ',');
        m.splits.push_back(split_from_string(tok));
        std::vector<double> row;
        while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
        if (row.size() != m.names.size())
            throw std::runtime_error("malformed metrics row for case " + m.case_ids.back());
        m.rows.push_back(std::move(row));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Cohort filter and split.
// ---------------------------------------------------------------------------

struct Exclusion {
    std::string id;
    double po = 0;
    std::string reason;
};

// The PO < threshold rule applies to the covid cohort only; controls with no
// opacities stay in.
inline FeatureMatrix filter_cohort(const FeatureMatrix& m, double min_po_percent,
                                   std::vector<Exclusion>* exclusions = nullptr) {
    const auto po_col = std::find(m.names.begin(), m.names.end(), "po_lungs");
    if (po_col == m.names.end()) throw std::invalid_argument("metrics lack po_lungs");
    const std::size_t col = po_col - m.names.begin();

    FeatureMatrix out;
    out.names = m.names;
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        const double po = m.rows[i][col];
        if (m.cohorts[i] == Cohort::covid && po < min_po_percent) {
            if (exclusions)
                exclusions->push_back(
                    {m.case_ids[i], po, po == 0.0 ? "no opacities" : "minimal opacities"});
            continue;
        }
        out.rows.push_back(m.rows[i]);
        out.cohorts.push_back(m.cohorts[i]);
        out.splits.push_back(m.splits[i]);
        out.case_ids.push_back(m.case_ids[i]);
    }
    return out;
}

struct SplitFractions {
    double train = 0.6, validation = 0.2, test = 0.2;
};

// Stratified by cohort with largest-remainder rounding; deterministic in the
// seed.
inline void split_dataset(FeatureMatrix& m, const SplitFractions& fr, std::uint64_t seed) {
    const double sum = fr.train + fr.validation + fr.test;
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
    if (fr.train < 0 || fr.validation < 0 || fr.test < 0)
        throw std::invalid_argument("split fractions must be nonnegative");

    for (int c = 0; c < 4; ++c) {
        const Cohort cohort = static_cast<Cohort>(c);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < m.n_cases(); ++i)
            if (m.cohorts[i] == cohort) idx.push_back(i);
        if (idx.empty()) continue;
        const int needed = (fr.train > 0) + (fr.validation > 0) + (fr.test > 0);
        if (static_cast<int>(idx.size()) < needed)
            throw std::invalid_argument("cohort " + to_string(cohort) +
                                        " too small to stratify");
        std::mt19937_64 rng(seed ^ (0xc0405ULL + c));
        std::shuffle(idx.begin(), idx.end(), rng);

        const double f[3] = {fr.train, fr.validation, fr.test};
        const int n = static_cast<int>(idx.size());
        int counts[3];
        double frac[3];
        int assigned = 0;
        for (int s = 0; s < 3; ++s) {
            counts[s] = static_cast<int>(f[s] * n);
            frac[s] = f[s] * n - counts[s];
            assigned += counts[s];
        }
        while (assigned < n) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[s] > frac[best]) best = s;
            ++counts[best];
            frac[best] = -1;
            ++assigned;
        }
        // every requested split gets at least one case
        for (int s = 0; s < 3; ++s)
            if (f[s] > 0 && counts[s] == 0) {
                int donor = 0;
                for (int t = 1; t < 3; ++t)
                    if (counts[t] > counts[donor]) donor = t;
                --counts[donor];
                ++counts[s];
            }
        std::size_t k = 0;
        for (int s = 0; s < 3; ++s)
            for (int j = 0; j < counts[s]; ++j) m.splits[idx[k++]] = static_cast<Split>(s);
    }
}

inline std::string render_split_table(const FeatureMatrix& m) {
    int counts[4][3] = {};
    for (std::size_t i = 0; i < m.n_cases(); ++i)
        counts[static_cast<int>(m.cohorts[i])][static_cast<int>(m.splits[i])]++;
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-12s %8s %12s %8s\n", "", "Train", "Validation", "Test");
    out += buf;
    int tot[3] = {};
    for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), "%-12s %8d %12d %8d\n",
                      to_string(static_cast<Cohort>(c)).c_str(), counts[c][0], counts[c][1],
                      counts[c][2]);
        out += buf;
        for (int s = 0; s < 3; ++s) tot[s] += counts[c][s];
    }
    std::snprintf(buf, sizeof(buf), "%-12s %8d %12d %8d\n", "total", tot[0], tot[1], tot[2]);
    out += buf;
    return out;
}

// ---------------------------------------------------------------------------
// Demo cohort generation.
// ---------------------------------------------------------------------------

struct DemoParams {
    int per_cohort = 15;
    Dims dims{64, 64, 64};
    std::uint64_t seed = 0;
};

// Four phantom classes: lesion-rich covid-like, diffuse ild-like, sparse
// pneumonia-like consolidation, clean healthy.
inline std::vector<CaseRecord> generate_demo_cases(const std::string& out_dir,
                                                   const DemoParams& dp) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "cases");
    std::vector<CaseRecord> records;
    for (int c = 0; c < 4; ++c) {
        const Cohort cohort = static_cast<Cohort>(c);
        for (int i = 0; i < dp.per_cohort; ++i) {
            const std::uint64_t case_seed = dp.seed ^ (0xdecadeULL + 977 * c + i);
            std::mt19937_64 rng(case_seed);
            PhantomSpec spec = default_phantom_spec(dp.dims);
            switch (cohort) {
                case Cohort::covid:
                    add_random_lesions(spec, 8 + static_cast<int>(rng() % 4), case_seed, 2.5,
                                       6.5, 0.45);
                    break;
                case Cohort::ild:
                    add_random_lesions(spec, 4 + static_cast<int>(rng() % 3), case_seed, 2.0,
                                       4.0, 0.0);
                    break;
                case Cohort::pneumonia:
                    add_random_lesions(spec, 1 + static_cast<int>(rng() % 2), case_seed, 3.0,
                                       6.0, 1.0);
                    break;
                case Cohort::healthy:
                    break;
            }
            const PhantomResult ph = generate_phantom(spec, case_seed);
            CaseRecord r;
            r.id = to_string(cohort) + "_" + std::to_string(i);
            const std::string base = (fs::path(out_dir) / "cases" / r.id).string();
            r.ct = base + "_ct";
            r.lobes = base + "_lobes";
            r.disease = base + "_disease";
            r.prob = base + "_prob";
            save_volume(ph.ct, r.ct);
            save_labels(ph.lobes, r.lobes);
            save_labels(ph.disease, r.disease);
            save_volume(ph.prob, r.prob);
            r.cohort = cohort;
            records.push_back(std::move(r));
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Pipeline configuration (flat key = value file).
// ---------------------------------------------------------------------------

constexpr int kConfigVersion = 1;

struct PipelineConfig {
    std::string out_dir = "run";
    std::string manifest;  // empty means demo generation
    std::uint64_t seed = 0;
    int demo_per_cohort = 15;
    int threads = 0;  // 0 = hardware
    MetricsParams metrics;
    double min_po_percent = 1.0;
    SplitFractions fractions;
    int rfe_k = 6;
    // M1
    ForestParams forest{.n_trees = 200, .max_depth = 8, .min_leaf = 2, .features_per_split = 0};
    // M2
    GbtParams gbt{.n_trees = 2000, .max_depth = 3, .features_per_split = 3, .subsample = 0.8};
    double lr_C = 0.2;
    // M3
    bool train_m3 = true;
    std::string m3_scale = "desk";  // desk | full
    TrainConfig m3;
    int n_boot = 1000;

    void validate() const {
        if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");
        if (rfe_k < 1) throw std::invalid_argument("rfe_k must be >= 1");
        if (n_boot < 1) throw std::invalid_argument("n_boot must be >= 1");
        if (m3_scale != "desk" && m3_scale != "full")
            throw std::invalid_argument("m3_scale must be desk or full");
        if (min_po_percent < 0) throw std::invalid_argument("min_po_percent must be >= 0");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["config_version"] = kConfigVersion;
        j["out_dir"] = out_dir;
        j["manifest"] = manifest;
        j["seed"] = seed;
        j["demo_per_cohort"] = demo_per_cohort;
        j["threads"] = threads;
        j["rind_depth_mm"] = metrics.rind_depth_mm;
        j["connectivity"] = metrics.connectivity;
        j["min_lesion_voxels"] = metrics.min_lesion_voxels;
        j["apex_fraction"] = metrics.apex_fraction;
        j["mediastinal_halfwidth_mm"] = metrics.mediastinal_halfwidth_mm;
        j["min_po_percent"] = min_po_percent;
        j["split_train"] = fractions.train;
        j["split_validation"] = fractions.validation;
        j["split_test"] = fractions.test;
        j["rfe_k"] = rfe_k;
        j["m1_trees"] = forest.n_trees;
        j["m1_depth"] = forest.max_depth;
        j["m2_trees"] = gbt.n_trees;
        j["m2_depth"] = gbt.max_depth;
        j["m2_features_per_split"] = gbt.features_per_split;
        j["m2_subsample"] = gbt.subsample;
        j["lr_C"] = lr_C;
        j["train_m3"] = train_m3;
        j["m3_scale"] = m3_scale;
        j["m3_epochs"] = m3.epochs;
        j["m3_batch_size"] = m3.batch_size;
        j["m3_lr"] = m3.lr;
        j["n_boot"] = n_boot;
        return j;
    }
};

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    PipelineConfig c;
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(f, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (kv.count("config_version") && std::stoi(kv["config_version"]) != kConfigVersion)
        throw std::runtime_error("unsupported config version");
    auto s = [&](const char* k, std::string& dst) { if (kv.count(k)) dst = kv[k]; };
    auto d = [&](const char* k, double& dst) { if (kv.count(k)) dst = std::stod(kv[k]); };
    auto i = [&](const char* k, int& dst) { if (kv.count(k)) dst = std::stoi(kv[k]); };
    s("out_dir", c.out_dir);
    s("manifest", c.manifest);
    if (kv.count("seed")) c.seed = std::stoull(kv["seed"]);
    i("demo_per_cohort", c.demo_per_cohort);
    i("threads", c.threads);
    d("rind_depth_mm", c.metrics.rind_depth_mm);
    i("connectivity", c.metrics.connectivity);
    if (kv.count("min_lesion_voxels")) c.metrics.min_lesion_voxels = std::stoll(kv["min_lesion_voxels"]);
    d("apex_fraction", c.metrics.apex_fraction);
    d("mediastinal_halfwidth_mm", c.metrics.mediastinal_halfwidth_mm);
    d("min_po_percent", c.min_po_percent);
    d("split_train", c.fractions.train);
    d("split_validation", c.fractions.validation);
    d("split_test", c.fractions.test);
    i("rfe_k", c.rfe_k);
    i("m1_trees", c.forest.n_trees);
    i("m1_depth", c.forest.max_depth);
    i("m2_trees", c.gbt.n_trees);
    i("m2_depth", c.gbt.max_depth);
    i("m2_features_per_split", c.gbt.features_per_split);
    d("m2_subsample", c.gbt.subsample);
    d("lr_C", c.lr_C);
    if (kv.count("train_m3")) c.train_m3 = kv["train_m3"] == "true" || kv["train_m3"] == "1";
    s("m3_scale", c.m3_scale);
    i("m3_epochs", c.m3.epochs);
    i("m3_batch_size", c.m3.batch_size);
    d("m3_lr", c.m3.lr);
    i("n_boot", c.n_boot);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<double>> rows_for(const FeatureMatrix& m, Split split,
                                                 const std::vector<std::size_t>& features) {
    std::vector<std::vector<double>> X;
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        if (m.splits[i] != split) continue;
        std::vector<double> row;
        for (auto f : features) row.push_back(m.rows[i][f]);
        X.push_back(std::move(row));
    }
    return X;
}

inline std::vector<int> labels_for(const FeatureMatrix& m, Split split) {
    std::vector<int> y;
    for (std::size_t i = 0; i < m.n_cases(); ++i)
        if (m.splits[i] == split) y.push_back(m.cohorts[i] == Cohort::covid ? 1 : 0);
    return y;
}

inline std::vector<Cohort> cohorts_for(const FeatureMatrix& m, Split split) {
    std::vector<Cohort> c;
    for (std::size_t i = 0; i < m.n_cases(); ++i)
        if (m.splits[i] == split) c.push_back(m.cohorts[i]);
    return c;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write: " + path);
    f << text;
}

}  // namespace detail

struct PipelineResult {
    std::string out_dir;
    EvalReport m1, m2, m3;
    bool has_m3 = false;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    auto artifact = [&](const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); };

    std::vector<CaseRecord> records;
    if (cfg.manifest.empty()) {
        DemoParams dp;
        dp.per_cohort = cfg.demo_per_cohort;
        dp.seed = cfg.seed;
        records = generate_demo_cases(cfg.out_dir, dp);
        save_manifest(records, artifact("manifest.jsonl"));
    } else {
        records = load_manifest(cfg.manifest);
    }
    for (const auto& r : records)
        if (!fs::exists(r.ct + ".json"))
            throw std::runtime_error("stage ingest, case " + r.id + ": missing file " + r.ct +
                                     ".json");

    FeatureMatrix metrics = compute_metrics_for_manifest(records, cfg.metrics, cfg.threads);

    std::vector<Exclusion> excluded;
    metrics = filter_cohort(metrics, cfg.min_po_percent, &excluded);
    {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& e : excluded)
            j.push_back({{"id", e.id}, {"po_lungs", e.po}, {"reason", e.reason}});
        detail::write_text(artifact("exclusions.json"), j.dump(2) + "\n");
    }

    split_dataset(metrics, cfg.fractions, cfg.seed);
    detail::write_text(artifact("split_table.txt"), render_split_table(metrics));
    write_metrics_csv(metrics, artifact("metrics.csv"));

    // keep record splits in sync for M3 preprocessing
    std::map<std::string, Split> split_of;
    std::set<std::string> kept;
    for (std::size_t i = 0; i < metrics.n_cases(); ++i) {
        split_of[metrics.case_ids[i]] = metrics.splits[i];
        kept.insert(metrics.case_ids[i]);
    }

    std::vector<std::string> dropped;
    const FeatureMatrix scaled = standardize_rescale(metrics, Split::train, &dropped);

    std::vector<std::size_t> selected;
    try {
        selected = recursive_feature_elimination(scaled, cfg.rfe_k, cfg.seed);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage feature-selection: ") + e.what());
    }
    {
        nlohmann::ordered_json j;
        j["k"] = cfg.rfe_k;
        j["features"] = nlohmann::ordered_json::array();
        for (auto f : selected) j["features"].push_back(scaled.names[f]);
        if (!dropped.empty()) j["dropped_constant"] = dropped;
        detail::write_text(artifact("selected_features.json"), j.dump(2) + "\n");
    }

    {
        FeatureMatrix sub = scaled;
        sub.names.clear();
        for (auto f : selected) sub.names.push_back(scaled.names[f]);
        for (std::size_t i = 0; i < scaled.n_cases(); ++i) {
            std::vector<double> row;
            for (auto f : selected) row.push_back(scaled.rows[i][f]);
            sub.rows[i] = std::move(row);
        }
        const Dendrogram dendro = average_linkage(distance_matrix(sub));
        detail::write_text(artifact("dendrogram.json"), dendrogram_to_json(dendro).dump(2) + "\n");
        heatmap_svg(sub, dendro, artifact("heatmap.svg"));
    }

    PipelineResult result;
    result.out_dir = cfg.out_dir;
    const std::vector<int> y_train = detail::labels_for(scaled, Split::train);
    const std::vector<Cohort> cat_test = detail::cohorts_for(scaled, Split::test);
    nlohmann::ordered_json report;
    std::vector<RocPlotEntry> roc_entries;

    {
        ForestParams fp = cfg.forest;
        fp.seed = cfg.seed;
        const auto X_train = detail::rows_for(scaled, Split::train, selected);
        const auto X_test = detail::rows_for(scaled, Split::test, selected);
        const ForestModel m1 = fit_random_forest(X_train, y_train, fp);
        detail::write_text(artifact("model_m1.json"), forest_to_json(m1).dump() + "\n");
        std::vector<double> scores;
        for (const auto& x : X_test) scores.push_back(m1.predict_score(x));
        result.m1 = evaluate_scores(scores, cat_test, cfg.n_boot, cfg.seed);
        report["m1"] = report_to_json(result.m1);
        roc_entries.push_back({"M1", result.m1.roc, {}, {}});
    }

    {
        std::vector<std::size_t> all_features(scaled.n_features());
        for (std::size_t f = 0; f < all_features.size(); ++f) all_features[f] = f;
        GbtParams gp = cfg.gbt;
        gp.seed = cfg.seed;
        const auto X_train = detail::rows_for(scaled, Split::train, all_features);
        const auto X_test = detail::rows_for(scaled, Split::test, all_features);
        const GbtLogisticModel m2 = fit_gbt_logistic(X_train, y_train, gp, cfg.lr_C);
        detail::write_text(artifact("model_m2.json"), gbt_logistic_to_json(m2).dump() + "\n");
        std::vector<double> scores;
        for (const auto& x : X_test) scores.push_back(m2.predict_score(x));
        result.m2 = evaluate_scores(scores, cat_test, cfg.n_boot, cfg.seed);
        report["m2"] = report_to_json(result.m2);
        roc_entries.push_back({"M2", result.m2.roc, {}, {}});
    }

    if (cfg.train_m3) {
        const NetworkSpec spec = cfg.m3_scale == "desk" ? desk_scale_spec() : NetworkSpec{};
        std::vector<Tensor4> X_train, X_val, X_test;
        std::vector<int> m3_train_y, m3_val_y;
        std::vector<Cohort> m3_test_cat;
        for (const auto& r : records) {
            if (!kept.count(r.id)) continue;
            Tensor4 t;
            try {
                t = preprocess_case(load_volume(r.ct), load_labels(r.lobes), load_volume(r.prob),
                                    spec.input);
            } catch (const std::exception& e) {
                throw std::runtime_error("stage preprocess, case " + r.id + ": " + e.what());
            }
            const Split sp = split_of.at(r.id);
            const int label = r.cohort == Cohort::covid ? 1 : 0;
            if (sp == Split::train) {
                X_train.push_back(std::move(t));
                m3_train_y.push_back(label);
            } else if (sp == Split::validation) {
                X_val.push_back(std::move(t));
                m3_val_y.push_back(label);
            } else {
                X_test.push_back(std::move(t));
                m3_test_cat.push_back(r.cohort);
            }
        }
        Network net(spec, cfg.seed);
        TrainConfig tc = cfg.m3;
        tc.seed = cfg.seed;
        train(net, X_train, m3_train_y, X_val, m3_val_y, tc);
        save_weights(net, artifact("model_m3.bin"));
        std::vector<double> scores;
        for (const auto& x : X_test) scores.push_back(net.predict_score(x));
        result.m3 = evaluate_scores(scores, m3_test_cat, cfg.n_boot, cfg.seed);
        result.has_m3 = true;
        report["m3"] = report_to_json(result.m3);
        roc_entries.push_back({"M3", result.m3.roc, {}, {}});
    }

    detail::write_text(artifact("report.json"), report.dump(2) + "\n");
    roc_svg(roc_entries, artifact("roc.svg"));
    {
        std::string tables = render_confusion_table("M1", result.m1.confusion) + "\n" +
                             render_confusion_table("M2", result.m2.confusion);
        if (result.has_m3)
            tables += "\n" + render_confusion_table("M3", result.m3.confusion);
        detail::write_text(artifact("confusion_tables.txt"), tables);
    }
    detail::write_text(artifact("run_manifest.json"), cfg.to_json().dump(2) + "\n");
    return result;
}

}  // namespace ctsev
