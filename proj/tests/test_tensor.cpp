// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dcd/tensor.hpp"
#include "test_util.hpp"

namespace dcd {
namespace {

TEST(Tensor, DefaultIsScalarZero) {
  Tensor t;
  EXPECT_TRUE(t.is_scalar());
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.item(), 0.0);
}

TEST(Tensor, DataSizeMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, IndexingIsRowMajor) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.at(1, 0), 4.0);
  EXPECT_EQ(m[5], 6.0);
  Tensor img({2, 3, 4, 5});
  img.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(img[img.size() - 1], 7.0);
}

TEST(Tensor, ReshapeKeepsDataAndChecksSize) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(m.reshaped({4}), Tensor::vector({1, 2, 3, 4}));
  EXPECT_THROW(m.reshaped({3}), DimensionError);
}

TEST(Tensor, EqualityIsBitwise) {
  EXPECT_EQ(Tensor::vector({NAN}), Tensor::vector({NAN}));
  EXPECT_NE(Tensor::vector({0.0}), Tensor::vector({-0.0}));
  EXPECT_NE(Tensor::vector({1, 2}), Tensor::matrix({{1, 2}}));
}

TEST(Tensor, AllFinite) {
  EXPECT_TRUE(Tensor::vector({1, 2}).all_finite());
  EXPECT_FALSE(Tensor::vector({1, INFINITY}).all_finite());
  EXPECT_FALSE(Tensor::vector({NAN}).all_finite());
}

TEST(Tensor, TransposeTwiceIsIdentity) {
  Rng rng(1);
  const Tensor x = testing::random_tensor(rng, {3, 5});
  EXPECT_EQ(transposed(transposed(x)), x);
  EXPECT_EQ(transposed(x).shape(), (Shape{5, 3}));
}

TEST(Kernels, GemmVariantsAgreeWithNaiveProduct) {
  Rng rng(2);
  const Tensor a = testing::random_tensor(rng, {4, 6});
  const Tensor b = testing::random_tensor(rng, {6, 3});
  Tensor naive({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 6; ++p) naive.at(i, j) += a.at(i, p) * b.at(p, j);
  EXPECT_LT(max_abs_diff(matmul_values(a, b), naive), 1e-12);

  Tensor c_tn({4, 3});
  const Tensor at = transposed(a);
  kernels::gemm_tn(4, 6, 3, at.ptr(), b.ptr(), c_tn.ptr());
  EXPECT_LT(max_abs_diff(c_tn, naive), 1e-12);

  Tensor c_nt({4, 3});
  const Tensor bt = transposed(b);
  kernels::gemm_nt(4, 6, 3, a.ptr(), bt.ptr(), c_nt.ptr());
  EXPECT_LT(max_abs_diff(c_nt, naive), 1e-12);
}

TEST(Kernels, GemmAccumulatesIntoOutput) {
  const Tensor a = Tensor::eye(2);
  Tensor c({2, 2}, 1.0);
  kernels::gemm_nn(2, 2, 2, a.ptr(), a.ptr(), c.ptr());
  EXPECT_EQ(c, Tensor::matrix({{2, 1}, {1, 2}}));
}

TEST(Tensor, MaxAbsDiffRequiresSameShape) {
  EXPECT_THROW(max_abs_diff(Tensor({2}), Tensor({3})), DimensionError);
}

}  // namespace
}  // namespace dcd
