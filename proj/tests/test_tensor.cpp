#include <gtest/gtest.h>

#include "strata/tensor.hpp"

using strata::Shape;
using strata::Tensor;

TEST(Tensor, SizeMatchesShapeProduct) {
  for (const Shape& s : {Shape{}, Shape{4}, Shape{2, 3}, Shape{0, 5}, Shape{2, 3, 4}}) {
    Tensor t(s, 1.5);
    EXPECT_EQ(t.size(), strata::shape_size(s));
  }
}

TEST(Tensor, ScalarHasOneElement) {
  Tensor t = Tensor::scalar(2.5);
  EXPECT_EQ(t.rank(), 0u);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t.item(), 2.5);
}

TEST(Tensor, MismatchedDataThrows) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), strata::ShapeError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), strata::ShapeError);
}

TEST(Tensor, RowMajorAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(m[5], 6.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  m.reshape(Shape{3, 2});
  EXPECT_DOUBLE_EQ(m.at(2, 1), 6.0);
  EXPECT_THROW(m.reshape(Shape{4}), strata::ShapeError);
}

TEST(Tensor, ShapeString) { EXPECT_EQ(strata::shape_string(Shape{2, 3}), "[2x3]"); }
