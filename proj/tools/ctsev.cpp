// Command line front end. Exit codes: 0 success, 2 invalid input, 3 runtime
// failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ctsev/pipeline.hpp"

using namespace ctsev;

namespace {

FeatureMatrix standardized(const FeatureMatrix& metrics) {
    return standardize_rescale(metrics, Split::train);
}

std::vector<std::size_t> columns_for(const FeatureMatrix& m,
                                     const std::vector<std::string>& names) {
    std::vector<std::size_t> cols;
    for (const auto& name : names) {
        const auto it = std::find(m.names.begin(), m.names.end(), name);
        if (it == m.names.end())
            throw std::invalid_argument("metrics file lacks feature: " + name);
        cols.push_back(it - m.names.begin());
    }
    return cols;
}

int cmd_phantom_gen(const std::string& out_base, int n, int lesions, std::uint64_t seed,
                    int dim) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_base).parent_path().empty()
                               ? "."
                               : fs::path(out_base).parent_path().string());
    for (int i = 0; i < n; ++i) {
        const std::uint64_t s = seed + 7919ULL * i;
        PhantomSpec spec = default_phantom_spec({dim, dim, dim});
        // cap lesion size so small grids can still place the requested count
        const double max_r = std::min(6.0, 0.09 * dim);
        if (lesions > 0) add_random_lesions(spec, lesions, s, std::min(2.5, max_r), max_r);
        const PhantomResult ph = generate_phantom(spec, s);
        const std::string base = out_base + "_" + std::to_string(i);
        save_volume(ph.ct, base + "_ct");
        save_labels(ph.lobes, base + "_lobes");
        save_labels(ph.disease, base + "_disease");
        save_volume(ph.prob, base + "_prob");
        std::cout << base << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"airspace disease severity toolkit"};
    app.require_subcommand(1);

    // phantom-gen
    auto* pg = app.add_subcommand("phantom-gen", "generate procedural phantom cases");
    std::string pg_out = "phantom";
    int pg_n = 1, pg_lesions = 6, pg_dim = 64;
    std::uint64_t pg_seed = 0;
    pg->add_option("--out", pg_out, "output base path");
    pg->add_option("--count", pg_n, "number of phantoms");
    pg->add_option("--lesions", pg_lesions, "lesions per phantom");
    pg->add_option("--dim", pg_dim, "cube edge in voxels");
    pg->add_option("--seed", pg_seed, "rng seed");

    // compute-metrics
    auto* cm = app.add_subcommand("compute-metrics", "compute the severity table for a manifest");
    std::string cm_manifest, cm_out = "metrics.csv";
    int cm_threads = 0;
    MetricsParams cm_params;
    cm->add_option("--manifest", cm_manifest, "case manifest (jsonl)")->required();
    cm->add_option("--out", cm_out, "output csv");
    cm->add_option("--threads", cm_threads, "worker threads (0 = hardware)");
    cm->add_option("--rind-depth-mm", cm_params.rind_depth_mm, "rind depth in mm");
    cm->add_option("--connectivity", cm_params.connectivity, "lesion connectivity (6 or 26)");

    // filter
    auto* fl = app.add_subcommand("filter", "drop low-opacity covid cases");
    std::string fl_in, fl_out = "metrics_filtered.csv", fl_excl = "exclusions.json";
    double fl_min_po = 1.0;
    fl->add_option("--metrics", fl_in, "input metrics csv")->required();
    fl->add_option("--out", fl_out, "filtered csv");
    fl->add_option("--exclusions", fl_excl, "exclusion log json");
    fl->add_option("--min-po", fl_min_po, "minimum percent opacity");

    // split
    auto* sp = app.add_subcommand("split", "assign stratified train/validation/test splits");
    std::string sp_in, sp_out = "metrics_split.csv";
    SplitFractions sp_fr;
    std::uint64_t sp_seed = 0;
    sp->add_option("--metrics", sp_in, "input metrics csv")->required();
    sp->add_option("--out", sp_out, "output csv");
    sp->add_option("--train", sp_fr.train, "train fraction");
    sp->add_option("--validation", sp_fr.validation, "validation fraction");
    sp->add_option("--test", sp_fr.test, "test fraction");
    sp->add_option("--seed", sp_seed, "rng seed");

    // cluster
    auto* cl = app.add_subcommand("cluster", "feature selection, dendrogram and heatmap");
    std::string cl_in, cl_dir = ".";
    int cl_k = 6;
    std::uint64_t cl_seed = 0;
    cl->add_option("--metrics", cl_in, "input metrics csv")->required();
    cl->add_option("--out-dir", cl_dir, "artifact directory");
    cl->add_option("--k", cl_k, "features to keep");
    cl->add_option("--seed", cl_seed, "rng seed");

    // train
    auto* tr = app.add_subcommand("train", "fit a classifier on the train split");
    std::string tr_in, tr_model = "m1", tr_out = "model.json";
    int tr_k = 6;
    std::uint64_t tr_seed = 0;
    double tr_C = 0.2;
    tr->add_option("--metrics", tr_in, "input metrics csv")->required();
    tr->add_option("--model", tr_model, "m1 or m2")->check(CLI::IsMember({"m1", "m2"}));
    tr->add_option("--out", tr_out, "model file");
    tr->add_option("--k", tr_k, "selected features for m1");
    tr->add_option("--C", tr_C, "logistic regularization for m2");
    int tr_trees = 0;  // 0 keeps the model defaults
    tr->add_option("--trees", tr_trees, "tree count override");
    tr->add_option("--seed", tr_seed, "rng seed");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score the test split and report AUC");
    std::string ev_in, ev_model, ev_out = "report.json";
    int ev_boot = 1000;
    std::uint64_t ev_seed = 0;
    ev->add_option("--metrics", ev_in, "input metrics csv")->required();
    ev->add_option("--model", ev_model, "model file from train")->required();
    ev->add_option("--out", ev_out, "report json");
    ev->add_option("--n-boot", ev_boot, "bootstrap resamples");
    ev->add_option("--seed", ev_seed, "rng seed");

    // demo
    auto* dm = app.add_subcommand("demo", "run the full pipeline on generated phantoms");
    std::string dm_dir = "demo_run";
    int dm_per = 15;
    std::uint64_t dm_seed = 0;
    bool dm_no_m3 = false;
    dm->add_option("--out-dir", dm_dir, "artifact directory");
    dm->add_option("--per-cohort", dm_per, "cases per cohort");
    dm->add_option("--seed", dm_seed, "rng seed");
    dm->add_flag("--no-m3", dm_no_m3, "skip the network model");

    // run
    auto* rn = app.add_subcommand("run", "run the pipeline from a config file");
    std::string rn_config;
    rn->add_option("--config", rn_config, "key = value config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pg->parsed()) return cmd_phantom_gen(pg_out, pg_n, pg_lesions, pg_seed, pg_dim);

        if (cm->parsed()) {
            const auto records = load_manifest(cm_manifest);
            const FeatureMatrix m = compute_metrics_for_manifest(records, cm_params, cm_threads);
            write_metrics_csv(m, cm_out);
            std::cout << m.n_cases() << " cases -> " << cm_out << "\n";
            return 0;
        }

        if (fl->parsed()) {
            const FeatureMatrix in = read_metrics_csv(fl_in);
            std::vector<Exclusion> excl;
            const FeatureMatrix out = filter_cohort(in, fl_min_po, &excl);
            write_metrics_csv(out, fl_out);
            nlohmann::ordered_json j = nlohmann::ordered_json::array();
            for (const auto& e : excl)
                j.push_back({{"id", e.id}, {"po_lungs", e.po}, {"reason", e.reason}});
            std::ofstream(fl_excl) << j.dump(2) << "\n";
            std::cout << "kept " << out.n_cases() << ", excluded " << excl.size() << "\n";
            return 0;
        }

        if (sp->parsed()) {
            FeatureMatrix m = read_metrics_csv(sp_in);
            split_dataset(m, sp_fr, sp_seed);
            write_metrics_csv(m, sp_out);
            std::cout << render_split_table(m);
            return 0;
        }

        if (cl->parsed()) {
            namespace fs = std::filesystem;
            fs::create_directories(cl_dir);
            const FeatureMatrix scaled = standardized(read_metrics_csv(cl_in));
            const auto selected = recursive_feature_elimination(scaled, cl_k, cl_seed);
            FeatureMatrix sub;
            sub.cohorts = scaled.cohorts;
            sub.splits = scaled.splits;
            sub.case_ids = scaled.case_ids;
            for (auto f : selected) sub.names.push_back(scaled.names[f]);
            for (const auto& row : scaled.rows) {
                std::vector<double> r;
                for (auto f : selected) r.push_back(row[f]);
                sub.rows.push_back(std::move(r));
            }
            nlohmann::ordered_json sj;
            sj["k"] = cl_k;
            sj["features"] = sub.names;
            std::ofstream((fs::path(cl_dir) / "selected_features.json").string())
                << sj.dump(2) << "\n";
            const Dendrogram d = average_linkage(distance_matrix(sub));
            std::ofstream((fs::path(cl_dir) / "dendrogram.json").string())
                << dendrogram_to_json(d).dump(2) << "\n";
            heatmap_svg(sub, d, (fs::path(cl_dir) / "heatmap.svg").string());
            std::cout << "artifacts in " << cl_dir << "\n";
            return 0;
        }

        if (tr->parsed()) {
            const FeatureMatrix scaled = standardized(read_metrics_csv(tr_in));
            const std::vector<int> y = detail::labels_for(scaled, Split::train);
            nlohmann::ordered_json out;
            out["model"] = tr_model;
            if (tr_model == "m1") {
                const auto selected = recursive_feature_elimination(scaled, tr_k, tr_seed);
                std::vector<std::string> names;
                for (auto f : selected) names.push_back(scaled.names[f]);
                ForestParams fp;
                fp.n_trees = tr_trees > 0 ? tr_trees : 200;
                fp.seed = tr_seed;
                const ForestModel m =
                    fit_random_forest(detail::rows_for(scaled, Split::train, selected), y, fp);
                out["features"] = names;
                out["forest"] = forest_to_json(m);
            } else {
                std::vector<std::size_t> all(scaled.n_features());
                for (std::size_t f = 0; f < all.size(); ++f) all[f] = f;
                GbtParams gp;
                if (tr_trees > 0) gp.n_trees = tr_trees;
                gp.seed = tr_seed;
                const GbtLogisticModel m =
                    fit_gbt_logistic(detail::rows_for(scaled, Split::train, all), y, gp, tr_C);
                out["features"] = scaled.names;
                out["gbt_logistic"] = gbt_logistic_to_json(m);
            }
            std::ofstream f(tr_out);
            if (!f) throw std::runtime_error("cannot write: " + tr_out);
            f << out.dump() << "\n";
            std::cout << tr_model << " -> " << tr_out << "\n";
            return 0;
        }

        if (ev->parsed()) {
            const FeatureMatrix scaled = standardized(read_metrics_csv(ev_in));
            std::ifstream mf(ev_model);
            if (!mf) throw std::runtime_error("cannot open model: " + ev_model);
            nlohmann::json mj;
            mf >> mj;
            const auto cols =
                columns_for(scaled, mj.at("features").get<std::vector<std::string>>());
            const auto X = detail::rows_for(scaled, Split::test, cols);
            std::vector<double> scores;
            if (mj.at("model") == "m1") {
                const ForestModel m = forest_from_json(mj.at("forest"));
                for (const auto& x : X) scores.push_back(m.predict_score(x));
            } else {
                const GbtLogisticModel m = gbt_logistic_from_json(mj.at("gbt_logistic"));
                for (const auto& x : X) scores.push_back(m.predict_score(x));
            }
            const EvalReport r = evaluate_scores(scores, detail::cohorts_for(scaled, Split::test),
                                                 ev_boot, ev_seed);
            std::ofstream(ev_out) << report_to_json(r).dump(2) << "\n";
            std::cout << render_confusion_table(mj.at("model").get<std::string>(), r.confusion);
            std::printf("auc %.4f  ci95 [%.4f, %.4f]\n", r.roc.auc, r.ci_lo, r.ci_hi);
            return 0;
        }

        if (dm->parsed()) {
            PipelineConfig cfg;
            cfg.out_dir = dm_dir;
            cfg.seed = dm_seed;
            cfg.demo_per_cohort = dm_per;
            cfg.train_m3 = !dm_no_m3;
            cfg.m3.epochs = 6;
            cfg.gbt.n_trees = 300;  // demo cohorts are small, full depth stalls the LR head
            const PipelineResult r = run_pipeline(cfg);
            std::printf("m1 auc %.4f  m2 auc %.4f", r.m1.roc.auc, r.m2.roc.auc);
            if (r.has_m3) std::printf("  m3 auc %.4f", r.m3.roc.auc);
            std::printf("\nartifacts in %s\n", r.out_dir.c_str());
            return 0;
        }

        if (rn->parsed()) {
            const PipelineConfig cfg = load_config(rn_config);
            const PipelineResult r = run_pipeline(cfg);
            std::printf("m1 auc %.4f  m2 auc %.4f", r.m1.roc.auc, r.m2.roc.auc);
            if (r.has_m3) std::printf("  m3 auc %.4f", r.m3.roc.auc);
            std::printf("\nartifacts in %s\n", r.out_dir.c_str());
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
