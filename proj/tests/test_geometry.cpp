#include <gtest/gtest.h>

#include "scrc/geometry.hpp"

namespace {

using namespace scrc;

void expect_spatial(const SpatialFeature& got, const SpatialFeature& want) {
  for (std::size_t i = 0; i < kSpatialDim; ++i) EXPECT_NEAR(got[i], want[i], 1e-9) << i;
}

TEST(EncodeSpatial, FullImage) {
  expect_spatial(encode_spatial({0, 0, 200, 100}, {200, 100}), {-1, -1, 1, 1, 0, 0, 2, 2});
}

TEST(EncodeSpatial, RightHalf) {
  expect_spatial(encode_spatial({100, 0, 200, 100}, {200, 100}), {0, -1, 1, 1, 0.5, 0, 1, 2});
}

TEST(EncodeSpatial, CenteredQuarter) {
  expect_spatial(encode_spatial({50, 25, 150, 75}, {200, 100}),
                 {-0.5, -0.5, 0.5, 0.5, 0, 0, 1, 1});
}

TEST(EncodeSpatial, RejectsInvalidBoxes) {
  EXPECT_THROW(encode_spatial({10, 0, 10, 5}, {20, 20}), InputError);  // zero width
  EXPECT_THROW(encode_spatial({0, 0, 30, 5}, {20, 20}), InputError);   // outside
  EXPECT_THROW(encode_spatial({0, 0, 5, 5}, {0, 20}), InputError);     // bad image
}

TEST(Iou, IdenticalAndDisjoint) {
  const BoundingBox a{0, 0, 4, 3};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, {4, 0, 8, 3}), 0.0);  // shared edge only
}

TEST(Iou, HandArithmetic) { EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12); }

TEST(Iou, Symmetric) {
  const BoundingBox a{1, 2, 7, 9}, b{3, 0, 10, 5};
  EXPECT_EQ(iou(a, b), iou(b, a));
}

TEST(IsHit, ThresholdIsInclusive) {
  EXPECT_EQ(iou({0, 0, 1, 2}, {0, 0, 2, 2}), 0.5);
  EXPECT_TRUE(is_hit({0, 0, 1, 2}, {0, 0, 2, 2}));
  EXPECT_TRUE(is_hit({0, 0, 2, 2}, {0, 0, 2, 2}));
  EXPECT_FALSE(is_hit({0, 0, 1, 1}, {3, 3, 4, 4}));
  EXPECT_FALSE(is_hit({0, 0, 1, 2}, {0, 0, 2, 2.01}));
}

}  // namespace
