#pragma once
// Volumetric grid containers, file I/O, resampling and crop/pad.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctsev {

struct Spacing {
    double dz = 1.0, dy = 1.0, dx = 1.0;  // mm per voxel, slice/row/column

    bool valid() const {
        return dz > 0 && dy > 0 && dx > 0 && std::isfinite(dz) && std::isfinite(dy) &&
               std::isfinite(dx);
    }
    double voxel_mm3() const { return dz * dy * dx; }
    bool operator==(const Spacing&) const = default;
};

struct Dims {
    int nz = 0, ny = 0, nx = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nz) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nx);
    }
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    bool contains(int z, int y, int x) const {
        return z >= 0 && z < nz && y >= 0 && y < ny && x >= 0 && x < nx;
    }
    bool operator==(const Dims&) const = default;
};

enum class ValueKind { hounsfield, probability };

constexpr double kHuMin = -2048.0;
constexpr double kHuMax = 4096.0;
constexpr double kHuAir = -1024.0;

// Scalar grid, x-fastest storage.
struct VoxelVolume {
    Dims dims;
    Spacing spacing;
    ValueKind kind = ValueKind::hounsfield;
    std::vector<float> data;

    float& at(int z, int y, int x) { return data[dims.index(z, y, x)]; }
    float at(int z, int y, int x) const { return data[dims.index(z, y, x)]; }
};

// Small-integer label grid. Semantics depend on role:
// lobes 0..5, disease mask 0/1, rind-core partition 0/1/2.
struct RegionLabels {
    Dims dims;
    Spacing spacing;
    std::vector<std::uint8_t> labels;

    std::uint8_t& at(int z, int y, int x) { return labels[dims.index(z, y, x)]; }
    std::uint8_t at(int z, int y, int x) const { return labels[dims.index(z, y, x)]; }
};

struct BoundingBox {
    int zlo = 0, zhi = -1, ylo = 0, yhi = -1, xlo = 0, xhi = -1;  // inclusive

    int nz() const { return zhi - zlo + 1; }
    int ny() const { return yhi - ylo + 1; }
    int nx() const { return xhi - xlo + 1; }
    bool valid_within(const Dims& d) const {
        return zlo >= 0 && ylo >= 0 && xlo >= 0 && zlo <= zhi && ylo <= yhi && xlo <= xhi &&
               zhi < d.nz && yhi < d.ny && xhi < d.nx;
    }
    bool operator==(const BoundingBox&) const = default;
};

inline VoxelVolume make_volume(Dims dims, Spacing sp, ValueKind kind, float fill = 0.f) {
    if (!sp.valid()) throw std::invalid_argument("non-positive spacing");
    if (dims.nz < 1 || dims.ny < 1 || dims.nx < 1)
        throw std::invalid_argument("dims must be positive");
    return VoxelVolume{dims, sp, kind, std::vector<float>(dims.count(), fill)};
}

inline RegionLabels make_labels(Dims dims, Spacing sp, std::uint8_t fill = 0) {
    if (!sp.valid()) throw std::invalid_argument("non-positive spacing");
    if (dims.nz < 1 || dims.ny < 1 || dims.nx < 1)
        throw std::invalid_argument("dims must be positive");
    return RegionLabels{dims, sp, std::vector<std::uint8_t>(dims.count(), fill)};
}

// ---------------------------------------------------------------------------
// File format: <name>.json header + <name>.raw payload (little-endian,
// x-fastest). dtype int16 for HU, float32 for probabilities, uint8 for labels.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_json_ext(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
        return path.substr(0, path.size() - 5);
    return path;
}

struct GridHeader {
    Dims dims;
    Spacing spacing;
    std::string dtype;
    std::string kind;
};

inline GridHeader read_header(const std::string& base) {
    std::ifstream in(base + ".json");
    if (!in) throw std::runtime_error("cannot open header: " + base + ".json");
    nlohmann::json j;
    in >> j;
    GridHeader h;
    auto d = j.at("dims");
    h.dims = Dims{d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    auto s = j.at("spacing_mm");
    h.spacing = Spacing{s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    h.dtype = j.at("dtype").get<std::string>();
    h.kind = j.at("kind").get<std::string>();
    if (h.dims.nz < 1 || h.dims.ny < 1 || h.dims.nx < 1)
        throw std::runtime_error("invalid dims in header: " + base);
    if (!h.spacing.valid()) throw std::runtime_error("non-positive spacing in header: " + base);
    return h;
}

inline std::vector<char> read_payload(const std::string& base, std::size_t expected_bytes) {
    std::ifstream in(base + ".raw", std::ios::binary);
    if (!in) throw std::runtime_error("cannot open payload: " + base + ".raw");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() != expected_bytes)
        throw std::runtime_error("payload size mismatch for " + base + ": expected " +
                                 std::to_string(expected_bytes) + " bytes, got " +
                                 std::to_string(buf.size()));
    return buf;
}

inline void write_file(const std::string& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

inline void save_volume(const VoxelVolume& vol, const std::string& path) {
    const std::string base = detail::strip_json_ext(path);
    const bool hu = vol.kind == ValueKind::hounsfield;
    nlohmann::ordered_json j;
    j["dims"] = {vol.dims.nz, vol.dims.ny, vol.dims.nx};
    j["spacing_mm"] = {vol.spacing.dz, vol.spacing.dy, vol.spacing.dx};
    j["dtype"] = hu ? "int16" : "float32";
    j["kind"] = hu ? "hounsfield" : "probability";
    const std::string hdr = j.dump(2) + "\n";
    detail::write_file(base + ".json", hdr.data(), hdr.size());
    if (hu) {
        std::vector<std::int16_t> payload(vol.data.size());
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            payload[i] = static_cast<std::int16_t>(std::lrint(vol.data[i]));
        detail::write_file(base + ".raw", payload.data(), payload.size() * sizeof(std::int16_t));
    } else {
        detail::write_file(base + ".raw", vol.data.data(), vol.data.size() * sizeof(float));
    }
}

inline void save_labels(const RegionLabels& grid, const std::string& path) {
    const std::string base = detail::strip_json_ext(path);
    nlohmann::ordered_json j;
    j["dims"] = {grid.dims.nz, grid.dims.ny, grid.dims.nx};
    j["spacing_mm"] = {grid.spacing.dz, grid.spacing.dy, grid.spacing.dx};
    j["dtype"] = "uint8";
    j["kind"] = "labels";
    const std::string hdr = j.dump(2) + "\n";
    detail::write_file(base + ".json", hdr.data(), hdr.size());
    detail::write_file(base + ".raw", grid.labels.data(), grid.labels.size());
}

inline VoxelVolume load_volume(const std::string& path) {
    const std::string base = detail::strip_json_ext(path);
    const auto h = detail::read_header(base);
    if (h.kind == "labels")
        throw std::runtime_error("grid is a label grid, use load_labels: " + base);
    VoxelVolume vol;
    vol.dims = h.dims;
    vol.spacing = h.spacing;
    vol.data.resize(h.dims.count());
    if (h.dtype == "int16") {
        vol.kind = ValueKind::hounsfield;
        auto buf = detail::read_payload(base, h.dims.count() * sizeof(std::int16_t));
        const auto* p = reinterpret_cast<const std::int16_t*>(buf.data());
        for (std::size_t i = 0; i < vol.data.size(); ++i) vol.data[i] = static_cast<float>(p[i]);
    } else if (h.dtype == "float32") {
        vol.kind = ValueKind::probability;
        auto buf = detail::read_payload(base, h.dims.count() * sizeof(float));
        std::memcpy(vol.data.data(), buf.data(), buf.size());
    } else {
        throw std::runtime_error("unknown dtype '" + h.dtype + "' in " + base);
    }
    return vol;
}

inline RegionLabels load_labels(const std::string& path) {
    const std::string base = detail::strip_json_ext(path);
    const auto h = detail::read_header(base);
    if (h.dtype != "uint8")
        throw std::runtime_error("expected uint8 label grid, got dtype '" + h.dtype + "': " + base);
    RegionLabels grid;
    grid.dims = h.dims;
    grid.spacing = h.spacing;
    auto buf = detail::read_payload(base, h.dims.count());
    grid.labels.assign(buf.begin(), buf.end());
    return grid;
}

// ---------------------------------------------------------------------------
// Resampling. Output dims = round(dim_in * spacing_in / spacing_out), min 1.
// Samples are taken at target voxel centers; out-of-range clamps to the edge.
// ---------------------------------------------------------------------------

namespace detail {

inline Dims resampled_dims(const Dims& d, const Spacing& in, const Spacing& out) {
    auto rd = [](int n, double si, double so) {
        return std::max(1, static_cast<int>(std::lround(n * si / so)));
    };
    return Dims{rd(d.nz, in.dz, out.dz), rd(d.ny, in.dy, out.dy), rd(d.nx, in.dx, out.dx)};
}

// Source continuous index of the center of target voxel i.
inline double src_coord(int i, double sp_out, double sp_in) {
    return (i + 0.5) * sp_out / sp_in - 0.5;
}

}  // namespace detail

inline VoxelVolume resample_trilinear(const VoxelVolume& vol, const Spacing& target) {
    if (!target.valid()) throw std::invalid_argument("non-positive target spacing");
    const Dims od = detail::resampled_dims(vol.dims, vol.spacing, target);
    VoxelVolume out = make_volume(od, target, vol.kind);

    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
    std::vector<double> ux(od.nx), uy(od.ny), uz(od.nz);
    for (int x = 0; x < od.nx; ++x) ux[x] = detail::src_coord(x, target.dx, vol.spacing.dx);
    for (int y = 0; y < od.ny; ++y) uy[y] = detail::src_coord(y, target.dy, vol.spacing.dy);
    for (int z = 0; z < od.nz; ++z) uz[z] = detail::src_coord(z, target.dz, vol.spacing.dz);

    for (int z = 0; z < od.nz; ++z) {
        const int z0 = clampi(static_cast<int>(std::floor(uz[z])), vol.dims.nz - 1);
        const int z1 = clampi(z0 + 1, vol.dims.nz - 1);
        const double fz = std::clamp(uz[z] - std::floor(uz[z]), 0.0, 1.0);
        const double wz = (uz[z] < 0 || uz[z] > vol.dims.nz - 1) ? (uz[z] < 0 ? 0.0 : 1.0) : fz;
        for (int y = 0; y < od.ny; ++y) {
            const int y0 = clampi(static_cast<int>(std::floor(uy[y])), vol.dims.ny - 1);
            const int y1 = clampi(y0 + 1, vol.dims.ny - 1);
            const double fy = std::clamp(uy[y] - std::floor(uy[y]), 0.0, 1.0);
            const double wy = (uy[y] < 0 || uy[y] > vol.dims.ny - 1) ? (uy[y] < 0 ? 0.0 : 1.0) : fy;
            for (int x = 0; x < od.nx; ++x) {
                const int x0 = clampi(static_cast<int>(std::floor(ux[x])), vol.dims.nx - 1);
                const int x1 = clampi(x0 + 1, vol.dims.nx - 1);
                const double fx = std::clamp(ux[x] - std::floor(ux[x]), 0.0, 1.0);
                const double wx =
                    (ux[x] < 0 || ux[x] > vol.dims.nx - 1) ? (ux[x] < 0 ? 0.0 : 1.0) : fx;

                const double c000 = vol.at(z0, y0, x0), c001 = vol.at(z0, y0, x1);
                const double c010 = vol.at(z0, y1, x0), c011 = vol.at(z0, y1, x1);
                const double c100 = vol.at(z1, y0, x0), c101 = vol.at(z1, y0, x1);
                const double c110 = vol.at(z1, y1, x0), c111 = vol.at(z1, y1, x1);
                const double c00 = c000 * (1 - wx) + c001 * wx;
                const double c01 = c010 * (1 - wx) + c011 * wx;
                const double c10 = c100 * (1 - wx) + c101 * wx;
                const double c11 = c110 * (1 - wx) + c111 * wx;
                const double c0 = c00 * (1 - wy) + c01 * wy;
                const double c1 = c10 * (1 - wy) + c11 * wy;
                out.at(z, y, x) = static_cast<float>(c0 * (1 - wz) + c1 * wz);
            }
        }
    }
    return out;
}

inline RegionLabels resample_nearest(const RegionLabels& grid, const Spacing& target) {
    if (!target.valid()) throw std::invalid_argument("non-positive target spacing");
    const Dims od = detail::resampled_dims(grid.dims, grid.spacing, target);
    RegionLabels out = make_labels(od, target);
    // ties at the midpoint resolve to the lower index
    auto nearest = [](double u, int n) {
        return std::clamp(static_cast<int>(std::ceil(u - 0.5)), 0, n - 1);
    };
    for (int z = 0; z < od.nz; ++z) {
        const int sz = nearest(detail::src_coord(z, target.dz, grid.spacing.dz), grid.dims.nz);
        for (int y = 0; y < od.ny; ++y) {
            const int sy = nearest(detail::src_coord(y, target.dy, grid.spacing.dy), grid.dims.ny);
            for (int x = 0; x < od.nx; ++x) {
                const int sx =
                    nearest(detail::src_coord(x, target.dx, grid.spacing.dx), grid.dims.nx);
                out.at(z, y, x) = grid.at(sz, sy, sx);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Crop/pad: the bbox region is centered in an out_dims grid, the rest filled.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<float>& grid_data(VoxelVolume& v) { return v.data; }
inline const std::vector<float>& grid_data(const VoxelVolume& v) { return v.data; }
inline std::vector<std::uint8_t>& grid_data(RegionLabels& v) { return v.labels; }
inline const std::vector<std::uint8_t>& grid_data(const RegionLabels& v) { return v.labels; }

template <typename Grid, typename T>
Grid crop_pad_impl(const Grid& in, const BoundingBox& bbox, Dims out_dims, T fill) {
    if (!bbox.valid_within(in.dims)) throw std::invalid_argument("bbox outside input dims");
    if (out_dims.nz < 1 || out_dims.ny < 1 || out_dims.nx < 1)
        throw std::invalid_argument("out_dims must be >= 1 on every axis");
    Grid out = in;
    out.dims = out_dims;
    grid_data(out).assign(out_dims.count(), fill);
    // offset of bbox origin in the output grid (content centered)
    const int oz = (out_dims.nz - bbox.nz()) / 2;
    const int oy = (out_dims.ny - bbox.ny()) / 2;
    const int ox = (out_dims.nx - bbox.nx()) / 2;
    for (int z = 0; z < bbox.nz(); ++z) {
        const int tz = oz + z;
        if (tz < 0 || tz >= out_dims.nz) continue;
        for (int y = 0; y < bbox.ny(); ++y) {
            const int ty = oy + y;
            if (ty < 0 || ty >= out_dims.ny) continue;
            for (int x = 0; x < bbox.nx(); ++x) {
                const int tx = ox + x;
                if (tx < 0 || tx >= out_dims.nx) continue;
                grid_data(out)[out_dims.index(tz, ty, tx)] =
                    grid_data(in)[in.dims.index(bbox.zlo + z, bbox.ylo + y, bbox.xlo + x)];
            }
        }
    }
    return out;
}

}  // namespace detail

inline VoxelVolume crop_pad_to(const VoxelVolume& vol, const BoundingBox& bbox, Dims out_dims,
                               float fill) {
    return detail::crop_pad_impl(vol, bbox, out_dims, fill);
}

inline RegionLabels crop_pad_to(const RegionLabels& grid, const BoundingBox& bbox, Dims out_dims,
                                std::uint8_t fill = 0) {
    return detail::crop_pad_impl(grid, bbox, out_dims, fill);
}

// Tight box over lobe labels 1..5.
inline BoundingBox lung_bounding_box(const RegionLabels& lobes) {
    BoundingBox bb{lobes.dims.nz, -1, lobes.dims.ny, -1, lobes.dims.nx, -1};
    bool any = false;
    for (int z = 0; z < lobes.dims.nz; ++z)
        for (int y = 0; y < lobes.dims.ny; ++y)
            for (int x = 0; x < lobes.dims.nx; ++x) {
                const std::uint8_t l = lobes.at(z, y, x);
                if (l >= 1 && l <= 5) {
                    any = true;
                    bb.zlo = std::min(bb.zlo, z);
                    bb.zhi = std::max(bb.zhi, z);
                    bb.ylo = std::min(bb.ylo, y);
                    bb.yhi = std::max(bb.yhi, y);
                    bb.xlo = std::min(bb.xlo, x);
                    bb.xhi = std::max(bb.xhi, x);
                }
            }
    if (!any) throw std::runtime_error("empty lung segmentation");
    return bb;
}

}  // namespace ctsev
