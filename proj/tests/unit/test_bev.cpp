#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ugp/bev.hpp"

using namespace ugp;
using namespace ugp::bev;

TEST(Bev, BoundsAndProjection) {
    const PointCloud c(Points{Vec3(0, 0, 1), Vec3(10, 5, 0), Vec3(10, 0, -2), Vec3(4.99, 2.49, 0)});
    const Bounds b = cloud_bounds(c);
    EXPECT_DOUBLE_EQ(b.x_min, 0.0);
    EXPECT_DOUBLE_EQ(b.x_max, 10.0);
    EXPECT_DOUBLE_EQ(b.y_max, 5.0);
    const BevImage img = project_bev(c, b, 10, 10);
    EXPECT_EQ(img.at(0, 0), 1);
    EXPECT_EQ(img.at(9, 9), 1);  // x = x_max clamps into the last row
    EXPECT_EQ(img.at(9, 0), 1);
    EXPECT_EQ(img.at(4, 4), 1);
    EXPECT_EQ(img.occupied(), 4u);
    EXPECT_FALSE(img.pixel_of(Vec3(11, 0, 0)).has_value());
}

TEST(Bev, PatchIndexHalvings) {
    EXPECT_EQ(patch_index({13, 7}, 3), (Pixel{1, 0}));
    EXPECT_EQ(patch_index({255, 255}, 3), (Pixel{31, 31}));
    EXPECT_EQ(patch_index({5, 6}, 0), (Pixel{5, 6}));
}

TEST(Bev, PatchFeatureDensity) {
    BevImage img({0, 16, 0, 16}, 16, 16);
    for (std::size_t v = 0; v < 8; ++v) img.set(0, v);
    const auto grid = patch_features(img, 3, 16);
    EXPECT_EQ(grid.rows, 2u);
    EXPECT_EQ(grid.cols, 2u);
    EXPECT_EQ(grid.dim(), 16u);
    EXPECT_DOUBLE_EQ(grid.features(0, 0), 8.0 / 64.0);
    EXPECT_DOUBLE_EQ(grid.features(3, 0), 0.0);
    EXPECT_TRUE((grid.features.rightCols(16 - 5).array() == 0).all());
}

TEST(Bev, SuperpointLookupSentinel) {
    const Bounds b{0, 16, 0, 16};
    const PointCloud sp(Points{Vec3(1, 1, 0), Vec3(15, 9, 0), Vec3(30, 0, 0)});
    const auto lookup = superpoint_patch_lookup(sp, b, 16, 16, 3);
    EXPECT_EQ(lookup.sentinel, 4u);
    EXPECT_EQ(lookup.index[0], 0u);
    EXPECT_EQ(lookup.index[1], 3u);
    EXPECT_EQ(lookup.index[2], lookup.sentinel);
}

TEST(Bev, WritePgmHeader) {
    BevImage img({0, 1, 0, 1}, 2, 3);
    img.set(1, 2);
    const auto path = std::filesystem::temp_directory_path() / "ugp_bev_test.pgm";
    write_pgm(path, img);
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), {});
    ASSERT_GE(data.size(), 6u);
    EXPECT_EQ(data.substr(0, 2), "P5");
    EXPECT_EQ(static_cast<unsigned char>(data.back()), 255);
    std::filesystem::remove(path);
}
