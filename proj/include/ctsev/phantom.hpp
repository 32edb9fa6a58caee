#pragma once
// Procedural synthetic lungs with analytically known ground truth: ellipsoid
// lungs, z-stacked lobe slabs, ellipsoid lesions, and exact per-region voxel
// bookkeeping used as the oracle for the severity metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctsev/metrics.hpp"
#include "ctsev/volume.hpp"

namespace ctsev {

enum class LesionTexture { ggo, consolidation };

struct LesionSpec {
    std::array<double, 3> center_mm{};  // z, y, x
    double radius_mm = 0.0;
    LesionTexture texture = LesionTexture::ggo;
    double mean_hu = -500.0;  // ggo default -500, consolidation default -50
    double hu_jitter = 30.0;
};

struct LungSpec {
    std::array<double, 3> center_mm{};
    std::array<double, 3> radii_mm{};  // z, y, x
};

struct PhantomSpec {
    Dims dims{64, 64, 64};
    Spacing spacing{1.0, 1.0, 1.0};
    LungSpec right_lung;  // lobes 1..3
    LungSpec left_lung;   // lobes 4..5
    std::array<double, 3> right_lobe_fractions{0.35, 0.25, 0.40};  // upper/middle/lower, apex at high z
    std::array<double, 2> left_lobe_fractions{0.45, 0.55};
    std::vector<LesionSpec> lesions;
    double prob_blur_sigma_mm = 0.0;
    // partition parameters baked into the truth
    double rind_depth_mm = 3.0;
    double apex_fraction = 0.05;
    double mediastinal_halfwidth_mm = 8.0;
};

struct LesionTruth {
    std::int64_t voxel_count = 0;
    double mean_hu = 0.0;
    std::array<std::int64_t, 6> lobe_voxels{};
    bool intersects_rind = false;
    bool intersects_periphery = false;
    bool in_right_lung = false;
    bool in_left_lung = false;
    LesionTexture texture = LesionTexture::ggo;
};

struct PhantomTruth {
    std::int64_t lung_voxels = 0;
    std::array<std::int64_t, 5> lobe_voxels{};
    std::int64_t right_lung_voxels = 0, left_lung_voxels = 0;
    std::int64_t rind_voxels = 0, core_voxels = 0, periphery_voxels = 0;
    std::vector<LesionTruth> lesions;
    BoundingBox lung_bbox;
    double rind_depth_mm = 0.0, apex_fraction = 0.0, mediastinal_halfwidth_mm = 0.0;
};

struct PhantomResult {
    VoxelVolume ct;
    RegionLabels lobes;
    RegionLabels disease;
    VoxelVolume prob;
    PhantomTruth truth;
};

constexpr double kPhantomAirHu = -1000.0;
constexpr double kPhantomParenchymaHu = -850.0;
constexpr double kParenchymaJitterHu = 25.0;

namespace detail {

inline bool inside_ellipsoid(const std::array<double, 3>& p, const std::array<double, 3>& c,
                             const std::array<double, 3>& r) {
    const double az = (p[0] - c[0]) / r[0];
    const double ay = (p[1] - c[1]) / r[1];
    const double ax = (p[2] - c[2]) / r[2];
    return az * az + ay * ay + ax * ax <= 1.0;
}

inline void validate_phantom_spec(const PhantomSpec& s) {
    if (!s.spacing.valid()) throw std::invalid_argument("non-positive spacing");
    auto frac_sum = [](auto& f) {
        double t = 0;
        for (double v : f) {
            if (v <= 0) throw std::invalid_argument("lobe fractions must be positive");
            t += v;
        }
        return t;
    };
    if (std::abs(frac_sum(s.right_lobe_fractions) - 1.0) > 1e-9 ||
        std::abs(frac_sum(s.left_lobe_fractions) - 1.0) > 1e-9)
        throw std::invalid_argument("lobe fractions per lung must sum to 1");
    for (const auto& l : s.lesions) {
        if (l.radius_mm <= 0) throw std::invalid_argument("lesion radius must be positive");
        if (l.hu_jitter < 0) throw std::invalid_argument("lesion HU jitter must be >= 0");
        if (l.texture == LesionTexture::ggo) {
            if (l.mean_hu + l.hu_jitter > kGgoHuBoundary - 1.0)
                throw std::invalid_argument(
                    "ggo lesion HU range must stay below -200 (mean + jitter too high)");
        } else {
            if (l.mean_hu - l.hu_jitter <= kGgoHuBoundary || l.mean_hu + l.hu_jitter > 50.0)
                throw std::invalid_argument(
                    "consolidation lesion HU range must stay within (-200, 50]");
        }
    }
    if (s.rind_depth_mm <= 0) throw std::invalid_argument("rind_depth_mm must be positive");
    if (s.apex_fraction < 0 || s.apex_fraction >= 0.5)
        throw std::invalid_argument("apex_fraction must be in [0, 0.5)");
}

// Offsets with center-to-center distance <= radius_mm, sorted ascending, so a
// scan can early-exit on the first background hit.
inline std::vector<std::array<int, 3>> ball_stencil(const Spacing& sp, double radius_mm) {
    const int mz = static_cast<int>(radius_mm / sp.dz) + 1;
    const int my = static_cast<int>(radius_mm / sp.dy) + 1;
    const int mx = static_cast<int>(radius_mm / sp.dx) + 1;
    std::vector<std::array<int, 3>> off;
    for (int dz = -mz; dz <= mz; ++dz)
        for (int dy = -my; dy <= my; ++dy)
            for (int dx = -mx; dx <= mx; ++dx) {
                if (dz == 0 && dy == 0 && dx == 0) continue;
                const double d2 = dz * sp.dz * dz * sp.dz + dy * sp.dy * dy * sp.dy +
                                  dx * sp.dx * dx * sp.dx;
                if (d2 <= radius_mm * radius_mm) off.push_back({dz, dy, dx});
            }
    std::sort(off.begin(), off.end(), [&](const auto& a, const auto& b) {
        auto d2 = [&](const auto& o) {
            return o[0] * sp.dz * o[0] * sp.dz + o[1] * sp.dy * o[1] * sp.dy +
                   o[2] * sp.dx * o[2] * sp.dx;
        };
        return d2(a) < d2(b);
    });
    return off;
}

}  // namespace detail

inline PhantomResult generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    detail::validate_phantom_spec(spec);
    const Dims d = spec.dims;
    const Spacing sp = spec.spacing;

    PhantomResult r;
    r.ct = make_volume(d, sp, ValueKind::hounsfield, static_cast<float>(kPhantomAirHu));
    r.lobes = make_labels(d, sp);
    r.disease = make_labels(d, sp);
    r.prob = make_volume(d, sp, ValueKind::probability, 0.f);
    PhantomTruth& t = r.truth;
    t.rind_depth_mm = spec.rind_depth_mm;
    t.apex_fraction = spec.apex_fraction;
    t.mediastinal_halfwidth_mm = spec.mediastinal_halfwidth_mm;
    t.lesions.resize(spec.lesions.size());
    for (std::size_t i = 0; i < spec.lesions.size(); ++i)
        t.lesions[i].texture = spec.lesions[i].texture;

    // pass 1: lung membership and per-lung z extents
    std::vector<std::uint8_t> lung(d.count(), 0);  // 0 none, 1 right, 2 left
    int rz_lo = d.nz, rz_hi = -1, lz_lo = d.nz, lz_hi = -1;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::array<double, 3> p = {(z + 0.5) * sp.dz, (y + 0.5) * sp.dy,
                                                 (x + 0.5) * sp.dx};
                if (detail::inside_ellipsoid(p, spec.right_lung.center_mm,
                                             spec.right_lung.radii_mm)) {
                    lung[d.index(z, y, x)] = 1;
                    rz_lo = std::min(rz_lo, z);
                    rz_hi = std::max(rz_hi, z);
                } else if (detail::inside_ellipsoid(p, spec.left_lung.center_mm,
                                                    spec.left_lung.radii_mm)) {
                    lung[d.index(z, y, x)] = 2;
                    lz_lo = std::min(lz_lo, z);
                    lz_hi = std::max(lz_hi, z);
                }
            }
    if (rz_hi < 0 || lz_hi < 0) throw std::runtime_error("phantom lungs produced no voxels");

    // pass 2: lobe assignment (z slabs per lung; apex/upper lobes at high z)
    auto lobe_of = [&](int z, std::uint8_t which) -> std::uint8_t {
        if (which == 1) {
            const double ttop = (rz_hi - z) / static_cast<double>(rz_hi - rz_lo + 1);
            if (ttop < spec.right_lobe_fractions[0]) return 1;
            if (ttop < spec.right_lobe_fractions[0] + spec.right_lobe_fractions[1]) return 2;
            return 3;
        }
        const double ttop = (lz_hi - z) / static_cast<double>(lz_hi - lz_lo + 1);
        return ttop < spec.left_lobe_fractions[0] ? 4 : 5;
    };

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> paren_jit(-static_cast<int>(kParenchymaJitterHu),
                                                 static_cast<int>(kParenchymaJitterHu));

    // pass 3: lobes, lesions, HU draw, exact bookkeeping
    std::vector<std::int32_t> lesion_of(d.count(), -1);
    std::vector<double> lesion_hu_sum(spec.lesions.size(), 0.0);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(z, y, x);
                if (lung[i] == 0) continue;
                const std::uint8_t lobe = lobe_of(z, lung[i]);
                r.lobes.labels[i] = lobe;
                ++t.lung_voxels;
                ++t.lobe_voxels[lobe - 1];
                if (lung[i] == 1)
                    ++t.right_lung_voxels;
                else
                    ++t.left_lung_voxels;
                const std::array<double, 3> p = {(z + 0.5) * sp.dz, (y + 0.5) * sp.dy,
                                                 (x + 0.5) * sp.dx};
                int hit = -1;
                for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
                    const auto& ls = spec.lesions[li];
                    const std::array<double, 3> rad = {ls.radius_mm, ls.radius_mm, ls.radius_mm};
                    if (detail::inside_ellipsoid(p, ls.center_mm, rad)) {
                        if (hit >= 0 &&
                            spec.lesions[hit].texture != ls.texture)
                            throw std::runtime_error(
                                "overlapping lesions of different texture");
                        if (hit >= 0) throw std::runtime_error("lesions overlap");
                        hit = static_cast<int>(li);
                    }
                }
                double hu;
                if (hit >= 0) {
                    const auto& ls = spec.lesions[hit];
                    std::uniform_int_distribution<int> jit(-static_cast<int>(ls.hu_jitter),
                                                           static_cast<int>(ls.hu_jitter));
                    hu = std::round(ls.mean_hu) + jit(rng);
                    lesion_of[i] = hit;
                    r.disease.labels[i] = 1;
                    r.prob.data[i] = 1.f;
                    LesionTruth& lt = t.lesions[hit];
                    ++lt.voxel_count;
                    ++lt.lobe_voxels[lobe];
                    lesion_hu_sum[hit] += hu;
                    if (lobe <= 3)
                        lt.in_right_lung = true;
                    else
                        lt.in_left_lung = true;
                } else {
                    hu = kPhantomParenchymaHu + paren_jit(rng);
                }
                r.ct.data[i] = static_cast<float>(hu);
            }

    for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
        if (t.lesions[li].voxel_count == 0)
            throw std::runtime_error("lesion produced no voxels (outside lung or too small)");
        t.lesions[li].mean_hu = lesion_hu_sum[li] / t.lesions[li].voxel_count;
    }

    // lesions placed outside the lung have voxels only where lung exists;
    // verify the analytic lesion volume is fully inside lung
    for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
        const auto& ls = spec.lesions[li];
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const std::array<double, 3> p = {(z + 0.5) * sp.dz, (y + 0.5) * sp.dy,
                                                     (x + 0.5) * sp.dx};
                    const std::array<double, 3> rad = {ls.radius_mm, ls.radius_mm, ls.radius_mm};
                    if (detail::inside_ellipsoid(p, ls.center_mm, rad) &&
                        lung[d.index(z, y, x)] == 0)
                        throw std::runtime_error("lesion extends outside the lung");
                }
    }

    // lung bounding box (tight over lobe labels)
    t.lung_bbox = lung_bounding_box(r.lobes);

    // rind/core truth by direct ball-stencil enumeration (independent of the
    // separable distance transform)
    const auto stencil = detail::ball_stencil(sp, spec.rind_depth_mm);
    std::vector<std::uint8_t> is_rind(d.count(), 0);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(z, y, x);
                if (lung[i] == 0) continue;
                bool rind = false;
                for (const auto& o : stencil) {
                    const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
                    if (!d.contains(nz, ny, nx)) continue;
                    if (lung[d.index(nz, ny, nx)] == 0) {
                        rind = true;
                        break;
                    }
                }
                if (rind) {
                    is_rind[i] = 1;
                    ++t.rind_voxels;
                } else {
                    ++t.core_voxels;
                }
            }

    // periphery truth: same exclusion arithmetic as the lesions module
    int zmin = d.nz, zmax = -1;
    double right_cx = 0, left_cx = 0;
    std::int64_t n_right = 0, n_left = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::uint8_t l = r.lobes.at(z, y, x);
                if (l < 1 || l > 5) continue;
                zmin = std::min(zmin, z);
                zmax = std::max(zmax, z);
                if (l <= 3) {
                    right_cx += x;
                    ++n_right;
                } else {
                    left_cx += x;
                    ++n_left;
                }
            }
    const int extent = zmax - zmin + 1;
    const double apex_cut = zmin + (1.0 - spec.apex_fraction) * extent;
    const double plane_x_mm = (0.5 * (right_cx / n_right + left_cx / n_left) + 0.5) * sp.dx;

    auto is_periphery = [&](int z, int, int x, std::size_t i) {
        if (!is_rind[i]) return false;
        if (spec.apex_fraction > 0 && static_cast<double>(z) >= apex_cut) return false;
        if (spec.mediastinal_halfwidth_mm > 0) {
            const double cx = (x + 0.5) * sp.dx;
            if (std::abs(cx - plane_x_mm) <= spec.mediastinal_halfwidth_mm) return false;
        }
        return true;
    };
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(z, y, x);
                if (lung[i] == 0) continue;
                const bool peri = is_periphery(z, y, x, i);
                if (peri) ++t.periphery_voxels;
                const std::int32_t li = lesion_of[i];
                if (li >= 0) {
                    if (is_rind[i]) t.lesions[li].intersects_rind = true;
                    if (peri) t.lesions[li].intersects_periphery = true;
                }
            }

    // optional Gaussian blur of the probability channel (CNN input variety
    // only; the disease mask stays binary)
    if (spec.prob_blur_sigma_mm > 0) {
        auto blur_axis = [&](std::vector<float>& v, int axis) {
            const double sigma_vox =
                spec.prob_blur_sigma_mm / (axis == 0 ? sp.dz : axis == 1 ? sp.dy : sp.dx);
            const int rad = std::max(1, static_cast<int>(std::ceil(3 * sigma_vox)));
            std::vector<double> k(2 * rad + 1);
            double ks = 0;
            for (int i = -rad; i <= rad; ++i) {
                k[i + rad] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
                ks += k[i + rad];
            }
            for (auto& w : k) w /= ks;
            std::vector<float> out(v.size());
            for (int z = 0; z < d.nz; ++z)
                for (int y = 0; y < d.ny; ++y)
                    for (int x = 0; x < d.nx; ++x) {
                        double acc = 0;
                        for (int i = -rad; i <= rad; ++i) {
                            int zz = z, yy = y, xx = x;
                            if (axis == 0) zz = std::clamp(z + i, 0, d.nz - 1);
                            if (axis == 1) yy = std::clamp(y + i, 0, d.ny - 1);
                            if (axis == 2) xx = std::clamp(x + i, 0, d.nx - 1);
                            acc += k[i + rad] * v[d.index(zz, yy, xx)];
                        }
                        out[d.index(z, y, x)] = static_cast<float>(acc);
                    }
            v = std::move(out);
        };
        blur_axis(r.prob.data, 0);
        blur_axis(r.prob.data, 1);
        blur_axis(r.prob.data, 2);
    }
    return r;
}

// The 32 metrics computed from exact truth counts with the shared formulas;
// the oracle counterpart of compute_all.
inline SeverityVector truth_severity(const PhantomTruth& truth) {
    detail::SeverityCounts c;
    c.lung_voxels = truth.lung_voxels;
    c.lobe_voxels = truth.lobe_voxels;
    for (const auto& lt : truth.lesions) {
        Lesion l;
        l.voxel_count = lt.voxel_count;
        l.mean_hu = lt.mean_hu;
        l.lobe_voxels = lt.lobe_voxels;
        l.intersects_rind = lt.intersects_rind;
        l.intersects_periphery = lt.intersects_periphery;
        l.in_right_lung = lt.in_right_lung;
        l.in_left_lung = lt.in_left_lung;
        detail::accumulate_lesion(c, l);
    }
    return detail::severity_from_counts(c);
}

// ---------------------------------------------------------------------------
// JSON serialization of specs and truth (phantom-gen CLI).
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json truth_to_json(const PhantomTruth& t) {
    nlohmann::ordered_json j;
    j["lung_voxels"] = t.lung_voxels;
    j["lobe_voxels"] = t.lobe_voxels;
    j["right_lung_voxels"] = t.right_lung_voxels;
    j["left_lung_voxels"] = t.left_lung_voxels;
    j["rind_voxels"] = t.rind_voxels;
    j["core_voxels"] = t.core_voxels;
    j["periphery_voxels"] = t.periphery_voxels;
    j["rind_depth_mm"] = t.rind_depth_mm;
    j["apex_fraction"] = t.apex_fraction;
    j["mediastinal_halfwidth_mm"] = t.mediastinal_halfwidth_mm;
    j["lung_bbox"] = {t.lung_bbox.zlo, t.lung_bbox.zhi, t.lung_bbox.ylo,
                      t.lung_bbox.yhi, t.lung_bbox.xlo, t.lung_bbox.xhi};
    j["lesions"] = nlohmann::ordered_json::array();
    for (const auto& l : t.lesions) {
        nlohmann::ordered_json lj;
        lj["voxel_count"] = l.voxel_count;
        lj["mean_hu"] = l.mean_hu;
        lj["lobe_voxels"] = l.lobe_voxels;
        lj["intersects_rind"] = l.intersects_rind;
        lj["intersects_periphery"] = l.intersects_periphery;
        lj["in_right_lung"] = l.in_right_lung;
        lj["in_left_lung"] = l.in_left_lung;
        lj["texture"] = l.texture == LesionTexture::ggo ? "ggo" : "consolidation";
        j["lesions"].push_back(lj);
    }
    return j;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    PhantomSpec s;
    if (j.contains("dims")) {
        s.dims = Dims{j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
    }
    if (j.contains("spacing_mm"))
        s.spacing = Spacing{j["spacing_mm"][0].get<double>(), j["spacing_mm"][1].get<double>(),
                            j["spacing_mm"][2].get<double>()};
    auto read_lung = [](const nlohmann::json& lj) {
        LungSpec l;
        for (int i = 0; i < 3; ++i) {
            l.center_mm[i] = lj["center_mm"][i].get<double>();
            l.radii_mm[i] = lj["radii_mm"][i].get<double>();
        }
        return l;
    };
    s.right_lung = read_lung(j.at("right_lung"));
    s.left_lung = read_lung(j.at("left_lung"));
    if (j.contains("right_lobe_fractions"))
        for (int i = 0; i < 3; ++i) s.right_lobe_fractions[i] = j["right_lobe_fractions"][i];
    if (j.contains("left_lobe_fractions"))
        for (int i = 0; i < 2; ++i) s.left_lobe_fractions[i] = j["left_lobe_fractions"][i];
    if (j.contains("lesions"))
        for (const auto& lj : j["lesions"]) {
            LesionSpec l;
            for (int i = 0; i < 3; ++i) l.center_mm[i] = lj["center_mm"][i].get<double>();
            l.radius_mm = lj["radius_mm"].get<double>();
            const std::string tex = lj.value("texture", "ggo");
            l.texture = tex == "consolidation" ? LesionTexture::consolidation : LesionTexture::ggo;
            l.mean_hu = lj.value("mean_hu", l.texture == LesionTexture::ggo ? -500.0 : -50.0);
            l.hu_jitter = lj.value("hu_jitter", 30.0);
            s.lesions.push_back(l);
        }
    s.prob_blur_sigma_mm = j.value("prob_blur_sigma_mm", 0.0);
    s.rind_depth_mm = j.value("rind_depth_mm", 3.0);
    s.apex_fraction = j.value("apex_fraction", 0.05);
    s.mediastinal_halfwidth_mm = j.value("mediastinal_halfwidth_mm", 8.0);
    return s;
}

// Standard two-lung layout filling the given grid, no lesions.
inline PhantomSpec default_phantom_spec(Dims dims = {64, 64, 64}, Spacing sp = {1, 1, 1}) {
    PhantomSpec s;
    s.dims = dims;
    s.spacing = sp;
    const double ez = dims.nz * sp.dz, ey = dims.ny * sp.dy, ex = dims.nx * sp.dx;
    s.right_lung = LungSpec{{ez * 0.5, ey * 0.5, ex * 0.28}, {ez * 0.40, ey * 0.34, ex * 0.18}};
    s.left_lung = LungSpec{{ez * 0.5, ey * 0.5, ex * 0.72}, {ez * 0.40, ey * 0.34, ex * 0.18}};
    return s;
}

// Places n random non-touching lesions inside the lungs, rejection-sampled.
inline void add_random_lesions(PhantomSpec& s, int n, std::uint64_t seed,
                               double min_radius_mm = 2.5, double max_radius_mm = 6.0,
                               double consolidation_fraction = 0.4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double margin = 2.0 * std::max({s.spacing.dz, s.spacing.dy, s.spacing.dx});
    int placed = 0, attempts = 0;
    while (placed < n && attempts < 200000) {
        ++attempts;
        const bool right = uni(rng) < 0.5;
        const LungSpec& lung = right ? s.right_lung : s.left_lung;
        const double rmin = *std::min_element(lung.radii_mm.begin(), lung.radii_mm.end());
        const double feasible_max = std::min(max_radius_mm, 0.55 * rmin);
        if (feasible_max < min_radius_mm)
            throw std::runtime_error("lung too small for the requested lesion radius");
        const double radius = min_radius_mm + uni(rng) * (feasible_max - min_radius_mm);
        // sample a center where the shrunken ellipsoid still contains the lesion
        std::array<double, 3> c;
        const double shrink = 1.0 - (radius + margin) / rmin;
        if (shrink <= 0.0) continue;
        std::array<double, 3> u = {2 * uni(rng) - 1, 2 * uni(rng) - 1, 2 * uni(rng) - 1};
        if (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] > 1.0) continue;
        for (int i = 0; i < 3; ++i) c[i] = lung.center_mm[i] + u[i] * lung.radii_mm[i] * shrink;
        bool clash = false;
        for (const auto& other : s.lesions) {
            double d2 = 0;
            for (int i = 0; i < 3; ++i)
                d2 += (c[i] - other.center_mm[i]) * (c[i] - other.center_mm[i]);
            if (std::sqrt(d2) < radius + other.radius_mm + 2 * margin) clash = true;
        }
        if (clash) continue;
        LesionSpec l;
        l.center_mm = c;
        l.radius_mm = radius;
        if (uni(rng) < consolidation_fraction) {
            l.texture = LesionTexture::consolidation;
            l.mean_hu = -50.0;
            l.hu_jitter = 40.0;
        } else {
            l.texture = LesionTexture::ggo;
            l.mean_hu = -500.0;
            l.hu_jitter = 60.0;
        }
        s.lesions.push_back(l);
        ++placed;
    }
    if (placed < n) throw std::runtime_error("could not place requested lesion count");
}

}  // namespace ctsev
