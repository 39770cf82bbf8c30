#pragma once

#include <string>
#include <vector>

namespace evqa {

struct GradCheckRow {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  bool all_pass() const;
  std::string table() const;
};

// Central-difference verification of every differentiable operation plus one
// full model forward/backward at reduced width. Fixtures are built from the
// given seed; epsilon is 1e-5 throughout.
GradCheckReport run_gradcheck(uint64_t seed);

}  // namespace evqa
