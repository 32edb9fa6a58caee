#pragma once
// The 32 airspace-disease severity metrics computed from CT, lobe labels and
// a binary disease mask.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctsev/lesions.hpp"
#include "ctsev/volume.hpp"

namespace ctsev {

// Mean-HU class boundaries. A lesion with mean HU <= -200 is GGO, > -200 is
// high opacity (variant A); variant B additionally caps at 50 HU to exclude
// vasculature. The boundary value -200 is assigned to GGO so that GGO and
// high-opacity volumes partition the disease volume exactly.
constexpr double kGgoHuBoundary = -200.0;
constexpr double kVesselHuBoundary = 50.0;

struct MetricsParams {
    int connectivity = 26;
    std::int64_t min_lesion_voxels = 5;
    double rind_depth_mm = 10.0;
    double apex_fraction = 0.05;
    double mediastinal_halfwidth_mm = 20.0;
};

struct SeverityVector {
    double po_lungs = 0.0;
    std::array<std::optional<double>, 5> po_lobe{};  // [0] = right upper ... [4] = left lower
    double pho_lungs = 0.0;
    std::array<std::optional<double>, 5> pho_lobe{};
    double phob_lungs = 0.0;
    std::array<std::optional<double>, 5> phob_lobe{};
    std::optional<int> lss;
    std::optional<int> lhos;
    std::optional<int> lhos_novessel;
    bool bilaterality = false;
    int affected_lobes = 0;
    int n_lesions = 0;
    int n_peripheral = 0;
    int n_rind = 0;
    int n_core = 0;
    double pct_peripheral_distribution = 0.0;
    double pct_vol_peripheral = 0.0;
    double pct_vol_rind = 0.0;
    double pct_vol_core = 0.0;
    double pct_ggo = 0.0;

    static const std::vector<std::string>& names() {
        static const std::vector<std::string> n = {
            "po_lungs",        "po_lobe1",       "po_lobe2",   "po_lobe3",
            "po_lobe4",        "po_lobe5",       "pho_lungs",  "pho_lobe1",
            "pho_lobe2",       "pho_lobe3",      "pho_lobe4",  "pho_lobe5",
            "phob_lungs",      "phob_lobe1",     "phob_lobe2", "phob_lobe3",
            "phob_lobe4",      "phob_lobe5",     "lss",        "lhos",
            "lhos_novessel",   "bilaterality",   "affected_lobes",
            "n_lesions",       "n_peripheral",   "n_rind",     "n_core",
            "pct_peripheral_distribution",       "pct_vol_peripheral",
            "pct_vol_rind",    "pct_vol_core",   "pct_ggo"};
        return n;
    }

    // Row in the stable column order; absent values become NaN, booleans 0/1.
    std::vector<double> as_row() const {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        auto opt = [&](const std::optional<double>& v) { return v ? *v : nan; };
        auto opti = [&](const std::optional<int>& v) { return v ? double(*v) : nan; };
        std::vector<double> r;
        r.reserve(32);
        r.push_back(po_lungs);
        for (const auto& v : po_lobe) r.push_back(opt(v));
        r.push_back(pho_lungs);
        for (const auto& v : pho_lobe) r.push_back(opt(v));
        r.push_back(phob_lungs);
        for (const auto& v : phob_lobe) r.push_back(opt(v));
        r.push_back(opti(lss));
        r.push_back(opti(lhos));
        r.push_back(opti(lhos_novessel));
        r.push_back(bilaterality ? 1.0 : 0.0);
        r.push_back(affected_lobes);
        r.push_back(n_lesions);
        r.push_back(n_peripheral);
        r.push_back(n_rind);
        r.push_back(n_core);
        r.push_back(pct_peripheral_distribution);
        r.push_back(pct_vol_peripheral);
        r.push_back(pct_vol_rind);
        r.push_back(pct_vol_core);
        r.push_back(pct_ggo);
        return r;
    }
};

inline bool is_ggo_mean(double mean_hu) { return mean_hu <= kGgoHuBoundary; }
inline bool is_high_opacity_mean(double mean_hu) { return mean_hu > kGgoHuBoundary; }
inline bool is_high_opacity_novessel_mean(double mean_hu) {
    return mean_hu > kGgoHuBoundary && mean_hu <= kVesselHuBoundary;
}

inline double percent_opacity(std::int64_t affected, std::int64_t total) {
    return 100.0 * static_cast<double>(affected) / static_cast<double>(total);
}

// Lobar severity score buckets: 0 iff unaffected, then (0,25], (25,50],
// (50,75], (75,100].
inline int lobe_score(double po) {
    if (po <= 0.0) return 0;
    if (po <= 25.0) return 1;
    if (po <= 50.0) return 2;
    if (po <= 75.0) return 3;
    return 4;
}

namespace detail {

// Per-scope counts that every metric reduces to. One instance is filled by
// grid traversal (compute_all) and one by the phantom generator's exact
// bookkeeping (truth_severity); the metric formulas below are shared.
struct SeverityCounts {
    std::int64_t lung_voxels = 0;
    std::array<std::int64_t, 5> lobe_voxels{};  // denominators per lobe
    std::int64_t disease_voxels = 0;
    std::array<std::int64_t, 5> disease_lobe{};
    std::int64_t high_a_voxels = 0;  // lesions with mean HU > -200
    std::array<std::int64_t, 5> high_a_lobe{};
    std::int64_t high_b_voxels = 0;  // mean HU in (-200, 50]
    std::array<std::int64_t, 5> high_b_lobe{};
    std::int64_t ggo_voxels = 0;  // mean HU <= -200
    bool right_involved = false, left_involved = false;
    int n_lesions = 0, n_peripheral = 0, n_rind = 0, n_core = 0;
    std::int64_t peripheral_voxels = 0, rind_lesion_voxels = 0, core_lesion_voxels = 0;
};

inline SeverityVector severity_from_counts(const SeverityCounts& c) {
    SeverityVector v;
    v.pho_lungs = percent_opacity(c.high_a_voxels, c.lung_voxels);
    v.phob_lungs = percent_opacity(c.high_b_voxels, c.lung_voxels);
    v.pct_ggo = percent_opacity(c.ggo_voxels, c.lung_voxels);
    // summed so the partition identity pct_ggo + pho = po holds bitwise
    v.po_lungs = v.pct_ggo + v.pho_lungs;
    bool all_lobes = true;
    for (int k = 0; k < 5; ++k) {
        if (c.lobe_voxels[k] == 0) {
            all_lobes = false;
            continue;  // absent lobe: metric stays unset
        }
        v.po_lobe[k] = percent_opacity(c.disease_lobe[k], c.lobe_voxels[k]);
        v.pho_lobe[k] = percent_opacity(c.high_a_lobe[k], c.lobe_voxels[k]);
        v.phob_lobe[k] = percent_opacity(c.high_b_lobe[k], c.lobe_voxels[k]);
    }
    if (all_lobes) {
        int lss = 0, lhos = 0, lhosb = 0;
        for (int k = 0; k < 5; ++k) {
            lss += lobe_score(*v.po_lobe[k]);
            lhos += lobe_score(*v.pho_lobe[k]);
            lhosb += lobe_score(*v.phob_lobe[k]);
        }
        v.lss = lss;
        v.lhos = lhos;
        v.lhos_novessel = lhosb;
    }
    v.bilaterality = c.right_involved && c.left_involved;
    int affected = 0;
    for (int k = 0; k < 5; ++k)
        if (c.disease_lobe[k] > 0) ++affected;
    v.affected_lobes = affected;
    v.n_lesions = c.n_lesions;
    v.n_peripheral = c.n_peripheral;
    v.n_rind = c.n_rind;
    v.n_core = c.n_core;
    v.pct_peripheral_distribution =
        c.n_lesions > 0 ? 100.0 * c.n_peripheral / static_cast<double>(c.n_lesions) : 0.0;
    v.pct_vol_peripheral = percent_opacity(c.peripheral_voxels, c.lung_voxels);
    v.pct_vol_rind = percent_opacity(c.rind_lesion_voxels, c.lung_voxels);
    v.pct_vol_core = percent_opacity(c.core_lesion_voxels, c.lung_voxels);
    return v;
}

inline void accumulate_lesion(SeverityCounts& c, const Lesion& l) {
    ++c.n_lesions;
    c.disease_voxels += l.voxel_count;
    for (int k = 0; k < 5; ++k) c.disease_lobe[k] += l.lobe_voxels[k + 1];
    if (is_high_opacity_mean(l.mean_hu)) {
        c.high_a_voxels += l.voxel_count;
        for (int k = 0; k < 5; ++k) c.high_a_lobe[k] += l.lobe_voxels[k + 1];
    } else {
        c.ggo_voxels += l.voxel_count;
    }
    if (is_high_opacity_novessel_mean(l.mean_hu)) {
        c.high_b_voxels += l.voxel_count;
        for (int k = 0; k < 5; ++k) c.high_b_lobe[k] += l.lobe_voxels[k + 1];
    }
    c.right_involved |= l.in_right_lung;
    c.left_involved |= l.in_left_lung;
    if (l.intersects_periphery) {
        ++c.n_peripheral;
        c.peripheral_voxels += l.voxel_count;
    }
    if (l.intersects_rind) {
        ++c.n_rind;
        c.rind_lesion_voxels += l.voxel_count;
    } else {
        ++c.n_core;
        c.core_lesion_voxels += l.voxel_count;
    }
}

}  // namespace detail

struct SeverityResult {
    SeverityVector severity;
    LesionSet lesions;
};

inline SeverityResult compute_all(const VoxelVolume& ct, const RegionLabels& lobes,
                                  const RegionLabels& disease,
                                  const MetricsParams& params = {}) {
    if (!(ct.dims == lobes.dims) || !(ct.dims == disease.dims))
        throw std::invalid_argument("grid dims mismatch");

    detail::SeverityCounts c;
    for (std::size_t i = 0; i < lobes.dims.count(); ++i) {
        const std::uint8_t l = lobes.labels[i];
        if (l >= 1 && l <= 5) {
            ++c.lung_voxels;
            ++c.lobe_voxels[l - 1];
        }
    }
    if (c.lung_voxels == 0) throw std::runtime_error("empty lung segmentation");

    LesionSet lesions =
        connected_components(disease, params.connectivity, params.min_lesion_voxels);
    const RegionPartition part =
        partition_rind_core(lobes, lobes.spacing, params.rind_depth_mm);
    const RegionLabels periph =
        periphery_mask(lobes, part, params.apex_fraction, params.mediastinal_halfwidth_mm);
    lesions = annotate_lesions(std::move(lesions), ct, lobes, part, periph);

    for (const auto& l : lesions.lesions) detail::accumulate_lesion(c, l);
    return SeverityResult{detail::severity_from_counts(c), std::move(lesions)};
}

}  // namespace ctsev
