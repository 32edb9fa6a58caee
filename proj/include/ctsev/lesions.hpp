#pragma once
// Lesion extraction (3D connected components), exact Euclidean distance to the
// lung surface, and the rind/core/periphery spatial partitions.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ctsev/volume.hpp"

namespace ctsev {

struct Lesion {
    int id = 0;
    std::int64_t voxel_count = 0;
    double volume_mm3 = 0.0;
    double mean_hu = 0.0;
    std::array<std::int64_t, 6> lobe_voxels{};  // index = lobe label, [0] = outside lung
    bool intersects_periphery = false;
    bool intersects_rind = false;
    bool in_right_lung = false;  // lobes 1..3
    bool in_left_lung = false;   // lobes 4..5

    bool touches_lobe(int lobe) const { return lobe_voxels[lobe] > 0; }
};

struct LesionSet {
    std::vector<Lesion> lesions;
    std::vector<std::int32_t> component;  // per voxel: 0 = none, else lesion id
    Dims dims;

    std::int64_t total_voxels() const {
        std::int64_t n = 0;
        for (const auto& l : lesions) n += l.voxel_count;
        return n;
    }
};

struct RegionPartition {
    RegionLabels partition;  // 0 outside lung, 1 core, 2 rind
    double rind_depth_mm = 0.0;
};

constexpr std::uint8_t kRegionOutside = 0;
constexpr std::uint8_t kRegionCore = 1;
constexpr std::uint8_t kRegionRind = 2;

namespace detail {

// Neighbor offsets for 6/18/26 connectivity.
inline std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw std::invalid_argument("connectivity must be 6, 18 or 26");
    std::vector<std::array<int, 3>> off;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int m = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (m == 0) continue;
                if (connectivity == 6 && m > 1) continue;
                if (connectivity == 18 && m > 2) continue;
                off.push_back({dz, dy, dx});
            }
    return off;
}

}  // namespace detail

// Maximal connected sets of nonzero voxels. Ids are assigned in ascending
// order of the component's first voxel (linear index); components smaller
// than min_lesion_voxels are discarded.
inline LesionSet connected_components(const RegionLabels& disease, int connectivity = 26,
                                      std::int64_t min_lesion_voxels = 1) {
    const auto off = detail::neighbor_offsets(connectivity);
    const Dims d = disease.dims;
    LesionSet out;
    out.dims = d;
    out.component.assign(d.count(), 0);

    std::vector<std::size_t> stack;
    int next_id = 0;
    for (std::size_t start = 0; start < d.count(); ++start) {
        if (disease.labels[start] == 0 || out.component[start] != 0) continue;
        // flood fill with a provisional id, collect voxels
        std::vector<std::size_t> voxels;
        stack.clear();
        stack.push_back(start);
        out.component[start] = -1;
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            voxels.push_back(cur);
            const int z = static_cast<int>(cur / (static_cast<std::size_t>(d.ny) * d.nx));
            const int y = static_cast<int>((cur / d.nx) % d.ny);
            const int x = static_cast<int>(cur % d.nx);
            for (const auto& o : off) {
                const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
                if (!d.contains(nz, ny, nx)) continue;
                const std::size_t ni = d.index(nz, ny, nx);
                if (disease.labels[ni] != 0 && out.component[ni] == 0) {
                    out.component[ni] = -1;
                    stack.push_back(ni);
                }
            }
        }
        if (static_cast<std::int64_t>(voxels.size()) < min_lesion_voxels) {
            for (auto v : voxels) out.component[v] = -2;  // filtered, never revisited
            continue;
        }
        ++next_id;
        for (auto v : voxels) out.component[v] = next_id;
        Lesion l;
        l.id = next_id;
        l.voxel_count = static_cast<std::int64_t>(voxels.size());
        l.volume_mm3 = l.voxel_count * disease.spacing.voxel_mm3();
        out.lesions.push_back(l);
    }
    for (auto& c : out.component)
        if (c == -2) c = 0;
    return out;
}

// Exact Euclidean distance (mm, voxel center to voxel center) from each lung
// voxel to the nearest non-lung voxel. Separable lower-envelope transform on
// squared distances, one pass per axis, handles anisotropic spacing.
namespace detail {

// 1D squared-distance transform over samples at coordinates i*step.
// f holds incoming squared values; result written back to f.
inline void edt_1d(std::vector<double>& f, std::vector<double>& scratch, std::vector<int>& v,
                   std::vector<double>& zbound, double step) {
    const int n = static_cast<int>(f.size());
    int k = 0;
    v[0] = 0;
    zbound[0] = -std::numeric_limits<double>::infinity();
    zbound[1] = std::numeric_limits<double>::infinity();
    const double s2 = step * step;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
            if (s > zbound[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        zbound[k] = s;
        zbound[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (zbound[k + 1] < q) ++k;
        const int p = v[k];
        scratch[q] = s2 * (q - p) * (q - p) + f[p];
    }
    std::copy(scratch.begin(), scratch.end(), f.begin());
}

}  // namespace detail

inline VoxelVolume surface_distance_field(const RegionLabels& lobes, const Spacing& spacing) {
    const Dims d = lobes.dims;
    const double inf = 1e30;  // finite cap keeps parabola intersections well defined
    std::vector<double> sq(d.count());
    bool any_lung = false;
    for (std::size_t i = 0; i < d.count(); ++i) {
        const bool lung = lobes.labels[i] >= 1 && lobes.labels[i] <= 5;
        any_lung |= lung;
        sq[i] = lung ? inf : 0.0;
    }
    if (!any_lung) throw std::runtime_error("empty lung segmentation");

    const int nmax = std::max({d.nz, d.ny, d.nx});
    std::vector<double> line(nmax), scratch(nmax), zb(nmax + 1);
    std::vector<int> v(nmax);

    // pass along x
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y) {
            line.resize(d.nx);
            for (int x = 0; x < d.nx; ++x) line[x] = sq[d.index(z, y, x)];
            detail::edt_1d(line, scratch, v, zb, spacing.dx);
            for (int x = 0; x < d.nx; ++x) sq[d.index(z, y, x)] = line[x];
        }
    // pass along y
    for (int z = 0; z < d.nz; ++z)
        for (int x = 0; x < d.nx; ++x) {
            line.resize(d.ny);
            for (int y = 0; y < d.ny; ++y) line[y] = sq[d.index(z, y, x)];
            detail::edt_1d(line, scratch, v, zb, spacing.dy);
            for (int y = 0; y < d.ny; ++y) sq[d.index(z, y, x)] = line[y];
        }
    // pass along z
    for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
            line.resize(d.nz);
            for (int z = 0; z < d.nz; ++z) line[z] = sq[d.index(z, y, x)];
            detail::edt_1d(line, scratch, v, zb, spacing.dz);
            for (int z = 0; z < d.nz; ++z) sq[d.index(z, y, x)] = line[z];
        }

    VoxelVolume out = make_volume(d, spacing, ValueKind::probability);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const bool lung = lobes.labels[i] >= 1 && lobes.labels[i] <= 5;
        out.data[i] = lung ? static_cast<float>(std::sqrt(sq[i])) : 0.f;
    }
    return out;
}

// rind = lung voxels within rind_depth_mm of the surface, core = the rest.
inline RegionPartition partition_rind_core(const RegionLabels& lobes, const Spacing& spacing,
                                           double rind_depth_mm) {
    if (rind_depth_mm <= 0) throw std::invalid_argument("rind_depth_mm must be positive");
    const VoxelVolume dist = surface_distance_field(lobes, spacing);
    RegionPartition part;
    part.rind_depth_mm = rind_depth_mm;
    part.partition = make_labels(lobes.dims, spacing);
    for (std::size_t i = 0; i < lobes.dims.count(); ++i) {
        const bool lung = lobes.labels[i] >= 1 && lobes.labels[i] <= 5;
        if (!lung) continue;
        part.partition.labels[i] = dist.data[i] <= rind_depth_mm ? kRegionRind : kRegionCore;
    }
    return part;
}

// Periphery = rind minus the apex band (top apex_fraction of the lung
// z-extent, apex at high z) minus rind voxels within mediastinal_halfwidth_mm
// of the midsagittal plane between the two lung centroids.
inline RegionLabels periphery_mask(const RegionLabels& lobes, const RegionPartition& part,
                                   double apex_fraction, double mediastinal_halfwidth_mm) {
    if (apex_fraction < 0 || apex_fraction >= 0.5)
        throw std::invalid_argument("apex_fraction must be in [0, 0.5)");
    const Dims d = lobes.dims;
    const Spacing sp = lobes.spacing;

    int zmin = d.nz, zmax = -1;
    double right_cx = 0, left_cx = 0;
    std::int64_t n_right = 0, n_left = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::uint8_t l = lobes.at(z, y, x);
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
    if (zmax < 0) throw std::runtime_error("empty lung segmentation");

    // apex cut in voxel index space: exclude (z - zmin) >= (1 - frac) * extent
    const int extent = zmax - zmin + 1;
    const double apex_cut = zmin + (1.0 - apex_fraction) * extent;

    double plane_x_mm = std::numeric_limits<double>::quiet_NaN();
    if (n_right > 0 && n_left > 0) {
        const double mid_idx = 0.5 * (right_cx / n_right + left_cx / n_left);
        plane_x_mm = (mid_idx + 0.5) * sp.dx;
    }

    RegionLabels mask = make_labels(d, sp);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (part.partition.at(z, y, x) != kRegionRind) continue;
                if (apex_fraction > 0 && static_cast<double>(z) >= apex_cut) continue;
                if (mediastinal_halfwidth_mm > 0 && !std::isnan(plane_x_mm)) {
                    const double cx = (x + 0.5) * sp.dx;
                    if (std::abs(cx - plane_x_mm) <= mediastinal_halfwidth_mm) continue;
                }
                mask.at(z, y, x) = 1;
            }
    return mask;
}

// Fills per-lesion mean HU, lobe overlap counts and region membership flags.
inline LesionSet annotate_lesions(LesionSet lesions, const VoxelVolume& ct,
                                  const RegionLabels& lobes, const RegionPartition& part,
                                  const RegionLabels& periphery) {
    const Dims d = lesions.dims;
    if (!(ct.dims == d) || !(lobes.dims == d) || !(part.partition.dims == d) ||
        !(periphery.dims == d))
        throw std::invalid_argument("grid dims mismatch");
    std::vector<double> hu_sum(lesions.lesions.size() + 1, 0.0);
    for (auto& l : lesions.lesions) {
        l.lobe_voxels = {};
        l.intersects_periphery = l.intersects_rind = false;
        l.in_right_lung = l.in_left_lung = false;
    }
    for (std::size_t i = 0; i < d.count(); ++i) {
        const std::int32_t id = lesions.component[i];
        if (id == 0) continue;
        Lesion& l = lesions.lesions[id - 1];
        hu_sum[id] += ct.data[i];
        const std::uint8_t lobe = lobes.labels[i];
        l.lobe_voxels[lobe <= 5 ? lobe : 0]++;
        if (lobe >= 1 && lobe <= 3) l.in_right_lung = true;
        if (lobe == 4 || lobe == 5) l.in_left_lung = true;
        if (part.partition.labels[i] == kRegionRind) l.intersects_rind = true;
        if (periphery.labels[i] != 0) l.intersects_periphery = true;
    }
    for (auto& l : lesions.lesions) l.mean_hu = hu_sum[l.id] / static_cast<double>(l.voxel_count);
    return lesions;
}

}  // namespace ctsev
