#include <doctest.h>

#include <cmath>

#include "ctsev/phantom.hpp"

using namespace ctsev;

TEST_CASE("zero-lesion phantom: empty mask, zero truth, zero severity") {
    const PhantomSpec spec = default_phantom_spec({32, 32, 32});
    const PhantomResult ph = generate_phantom(spec, 1);
    for (auto l : ph.disease.labels) CHECK(l == 0);
    CHECK(ph.truth.lesions.empty());
    const SeverityVector v = truth_severity(ph.truth);
    CHECK(v.po_lungs == 0.0);
    CHECK(v.n_lesions == 0);
    CHECK_FALSE(v.bilaterality);
    CHECK(*v.lss == 0);
}

TEST_CASE("same spec and seed give bit-identical outputs") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    add_random_lesions(spec, 2, 5);
    const PhantomResult a = generate_phantom(spec, 9);
    const PhantomResult b = generate_phantom(spec, 9);
    CHECK(a.ct.data == b.ct.data);
    CHECK(a.lobes.labels == b.lobes.labels);
    CHECK(a.disease.labels == b.disease.labels);
    CHECK(a.prob.data == b.prob.data);
    CHECK(a.truth.lung_voxels == b.truth.lung_voxels);
    const PhantomResult c = generate_phantom(spec, 10);
    CHECK(a.ct.data != c.ct.data);
}

TEST_CASE("sphere lesion voxel count equals direct enumeration") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32}, {1, 1, 1});
    LesionSpec l;
    l.center_mm = spec.right_lung.center_mm;
    l.radius_mm = 3.0;
    l.texture = LesionTexture::ggo;
    l.mean_hu = -500;
    l.hu_jitter = 20;
    spec.lesions.push_back(l);
    const PhantomResult ph = generate_phantom(spec, 4);
    // enumerate the discretized sphere directly
    std::int64_t expect = 0;
    for (int z = 0; z < 32; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double dz = (z + 0.5) - l.center_mm[0];
                const double dy = (y + 0.5) - l.center_mm[1];
                const double dx = (x + 0.5) - l.center_mm[2];
                if (dz * dz + dy * dy + dx * dx <= 9.0) ++expect;
            }
    REQUIRE(ph.truth.lesions.size() == 1);
    CHECK(ph.truth.lesions[0].voxel_count == expect);
    std::int64_t mask = 0;
    for (auto v : ph.disease.labels) mask += v;
    CHECK(mask == expect);
}

TEST_CASE("probability channel is the binary mask by default") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    add_random_lesions(spec, 1, 3);
    const PhantomResult ph = generate_phantom(spec, 2);
    for (std::size_t i = 0; i < ph.prob.data.size(); ++i)
        CHECK(ph.prob.data[i] == (ph.disease.labels[i] ? 1.f : 0.f));
}

TEST_CASE("blurred probability stays in [0,1] and the mask stays binary") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    spec.prob_blur_sigma_mm = 1.0;
    add_random_lesions(spec, 1, 3);
    const PhantomResult ph = generate_phantom(spec, 2);
    for (auto p : ph.prob.data) {
        CHECK(p >= 0.f);
        CHECK(p <= 1.f + 1e-6f);
    }
    for (auto l : ph.disease.labels) CHECK((l == 0 || l == 1));
}

TEST_CASE("lesion HU jitter keeps the class analytic") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    LesionSpec l;
    l.center_mm = spec.left_lung.center_mm;
    l.radius_mm = 4.0;
    l.texture = LesionTexture::consolidation;
    l.mean_hu = -50;
    l.hu_jitter = 40;
    spec.lesions.push_back(l);
    const PhantomResult ph = generate_phantom(spec, 123);
    CHECK(ph.truth.lesions[0].mean_hu > -200.0);
    CHECK(ph.truth.lesions[0].mean_hu <= 50.0);
}

TEST_CASE("invalid lesion HU ranges are rejected at validation") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    LesionSpec l;
    l.center_mm = spec.left_lung.center_mm;
    l.radius_mm = 3.0;
    l.texture = LesionTexture::ggo;
    l.mean_hu = -210;  // jitter could cross -200
    l.hu_jitter = 50;
    spec.lesions.push_back(l);
    CHECK_THROWS(generate_phantom(spec, 1));
}

TEST_CASE("lesion outside the lung is rejected") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    LesionSpec l;
    l.center_mm = {16, 16, 16};  // between the two lungs
    l.radius_mm = 3.0;
    spec.lesions.push_back(l);
    CHECK_THROWS(generate_phantom(spec, 1));
}

TEST_CASE("overlapping lesions of different texture are rejected") {
    PhantomSpec spec = default_phantom_spec({32, 32, 32});
    LesionSpec a, b;
    a.center_mm = spec.right_lung.center_mm;
    a.radius_mm = 3.0;
    a.texture = LesionTexture::ggo;
    b.center_mm = a.center_mm;
    b.center_mm[2] += 2.0;
    b.radius_mm = 3.0;
    b.texture = LesionTexture::consolidation;
    b.mean_hu = -50;
    spec.lesions = {a, b};
    CHECK_THROWS_WITH_AS(generate_phantom(spec, 1), doctest::Contains("texture"),
                         std::runtime_error);
}

TEST_CASE("rind plus core equals lung in the truth") {
    PhantomSpec spec = default_phantom_spec({40, 40, 40});
    spec.rind_depth_mm = 3.0;
    const PhantomResult ph = generate_phantom(spec, 6);
    CHECK(ph.truth.rind_voxels + ph.truth.core_voxels == ph.truth.lung_voxels);
    CHECK(ph.truth.rind_voxels > 0);
    CHECK(ph.truth.core_voxels > 0);
    CHECK(ph.truth.periphery_voxels <= ph.truth.rind_voxels);
}

TEST_CASE("truth bbox equals lung_bounding_box of the generated lobes") {
    const PhantomSpec spec = default_phantom_spec({40, 48, 40});
    const PhantomResult ph = generate_phantom(spec, 8);
    CHECK(ph.truth.lung_bbox == lung_bounding_box(ph.lobes));
}

TEST_CASE("one lesion per lung flips bilaterality on") {
    PhantomSpec spec = default_phantom_spec({40, 40, 40});
    for (const LungSpec* lung : {&spec.right_lung, &spec.left_lung}) {
        LesionSpec l;
        l.center_mm = lung->center_mm;
        l.radius_mm = 3.0;
        spec.lesions.push_back(l);
    }
    const PhantomResult ph = generate_phantom(spec, 3);
    const SeverityVector v = truth_severity(ph.truth);
    CHECK(v.bilaterality);
    CHECK(v.n_lesions == 2);
}

TEST_CASE("phantom spec JSON round-trip drives the generator") {
    nlohmann::json j = {
        {"dims", {32, 32, 32}},
        {"spacing_mm", {1.0, 1.0, 1.0}},
        {"right_lung", {{"center_mm", {16, 16, 9}}, {"radii_mm", {12, 10, 5.5}}}},
        {"left_lung", {{"center_mm", {16, 16, 23}}, {"radii_mm", {12, 10, 5.5}}}},
        {"lesions",
         {{{"center_mm", {16, 16, 9}}, {"radius_mm", 2.5}, {"texture", "consolidation"},
           {"mean_hu", -50.0}, {"hu_jitter", 30.0}}}},
    };
    const PhantomSpec spec = phantom_spec_from_json(j);
    const PhantomResult ph = generate_phantom(spec, 1);
    CHECK(ph.ct.dims == Dims{32, 32, 32});
    CHECK(ph.truth.lesions.size() == 1);
    CHECK(ph.truth.lesions[0].texture == LesionTexture::consolidation);
}
