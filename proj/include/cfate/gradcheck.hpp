#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cfate {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double tolerance = 1e-4;
    bool all_pass() const {
        for (const auto& c : cases)
            if (!c.pass) return false;
        return !cases.empty();
    }
};

// Double-precision central-difference check of every layer kind, random
// 3-layer composites, and the object/background losses end-to-end through
// encoder, reparameterization and decoders. num_configs random
// configurations total.
GradCheckReport run_grad_checks(uint64_t seed, int num_configs = 50, double tolerance = 1e-4);

}  // namespace cfate
