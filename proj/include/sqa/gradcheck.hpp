#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace sqa {

struct GradCheckResult {
    std::string op;
    int trials = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Checks every differentiable operation's analytic gradients against central
// finite differences in double precision over randomized shapes and values.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7, int trials = 10,
                                                 double step = 1e-5, double tolerance = 1e-6);

// Prints one line per op; returns true when every op passed.
bool report_gradcheck(std::ostream& os, const std::vector<GradCheckResult>& results);

}  // namespace sqa
