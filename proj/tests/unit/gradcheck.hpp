#pragma once

#include <gtest/gtest.h>

#include "../support/finite_diff.hpp"

namespace gma::testing {

/// finite_difference with one expectation per checked entry at relative 1e-4.
inline FdReport grad_check(ad::ParamStore& store, const LossFn& loss, int per_param = 12) {
  auto r = finite_difference(store, loss, per_param);
  for (const auto& e : r.entries)
    EXPECT_LT(e.rel, 1e-4) << e.param << "[" << e.index << "] analytic " << e.analytic << " numeric " << e.numeric;
  return r;
}

}  // namespace gma::testing
