#include <doctest.h>

#include "adwm/gradsuite.hpp"
#include "adwm/tensor.hpp"

using namespace adwm;

TEST_CASE("gradient suite passes on 10 seeds") {
  const auto results = run_gradient_suite(0, 10);
  CHECK(results.size() >= 30);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.seeds == 10);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("a corrupted backward is caught") {
  for (const char* op : {"conv2d", "covariance", "softmax"}) {
    set_backward_corruption(op);
    const auto results = run_gradient_suite(3, 1);
    set_backward_corruption("");
    double worst = 0.0;
    for (const auto& r : results) worst = std::max(worst, r.worst);
    CAPTURE(op);
    CHECK(worst > 1e-2);
  }
}
