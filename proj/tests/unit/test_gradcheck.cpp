#include <gtest/gtest.h>

#include <set>

#include "mv3d/gradcheck.hpp"

using namespace mv3d;

TEST(GradCheck, SuiteMatchesFiniteDifferences) {
  const auto results = gradcheck_suite(2024, 2);
  std::set<std::string> names;
  for (const auto& r : results) {
    names.insert(r.name);
    EXPECT_LT(r.rel_error, 1e-5) << r.name;
    EXPECT_GT(r.coordinates, 0u) << r.name;
  }
  for (const char* required : {"matmul", "attention", "softmax", "layer_norm_affine", "global_loss", "local_loss",
                               "global_semantic_loss", "local_semantic_loss", "combined_loss", "encoders"})
    EXPECT_TRUE(names.count(required)) << required;
}

TEST(GradCheck, SuiteIsReproducible) {
  const auto a = gradcheck_suite(9, 1), b = gradcheck_suite(9, 1);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].rel_error, b[i].rel_error) << a[i].name;
}
