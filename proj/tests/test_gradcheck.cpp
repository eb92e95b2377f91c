#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "sqa/gradcheck.hpp"

TEST_CASE("finite-difference suite passes for every differentiable op") {
    const auto results = sqa::run_gradcheck_suite(/*seed=*/7, /*trials=*/10);
    std::ostringstream report;
    const bool all = sqa::report_gradcheck(report, results);
    INFO(report.str());
    CHECK(all);
    CHECK(results.size() >= 30);  // every op family is represented
    for (const auto& r : results) {
        INFO(r.op << " max_rel_err=" << r.max_rel_err);
        CHECK(r.pass);
    }
}
