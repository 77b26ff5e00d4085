#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "voxbox/model.hpp"

namespace voxbox {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Small toy model used by the built-in property checks: S=16, p=4,
/// d_emb=8, four decoder channels.
ModelConfig selftest_model(DType dtype);

/// Gradient equivalence (f64 and f32), degenerate single-cube step,
/// tape-memory bound and forward-mode determinism on a 16^3 phantom.
std::vector<CheckResult> run_selftest();

} // namespace voxbox
