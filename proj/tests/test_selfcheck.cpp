#include <catch2/catch_amalgamated.hpp>

#include "protorel/selfcheck.hpp"

using namespace protorel;

TEST_CASE("selfcheck suite passes on a clean build", "[selfcheck][slow]") {
    SelfcheckOptions opt;
    opt.trials_per_op = 5;  // the acceptance suite runs the full 20
    auto report = run_selfcheck(opt);
    for (const auto& c : report.checks) {
        INFO(c.name << " err=" << c.max_err << " limit=" << c.limit);
        CHECK(c.pass);
    }
    CHECK(report.pass);
}

TEST_CASE("selfcheck catches an injected backward sign bug", "[selfcheck][slow]") {
    SelfcheckOptions opt;
    opt.trials_per_op = 2;
    opt.oracle_instances = 5;
    // flip the sign of the square op's backward; the pair-fusion term
    // (ReLU(s+o) - (s-o)^2) depends on it
    opt.fault = std::make_pair(Op::Square, -1.0);
    auto report = run_selfcheck(opt);
    CHECK_FALSE(report.pass);
    bool fuse_failed = false, full_failed = false;
    for (const auto& c : report.checks) {
        if (c.name == "grad fuse") fuse_failed = !c.pass;
        if (c.name.find("full training loss") != std::string::npos) full_failed = !c.pass;
    }
    CHECK(fuse_failed);
    CHECK(full_failed);
    // value oracles are forward-only and must stay green under a backward fault
    for (const auto& c : report.checks)
        if (c.name.rfind("oracle", 0) == 0) CHECK(c.pass);
}
