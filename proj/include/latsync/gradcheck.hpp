#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace latsync {

struct ComponentCheck {
    std::string component;
    double max_rel_error = 0.0;
};

// Central-difference audit of every differentiable primitive's backward rule,
// plus the fully composed pipeline (encode -> channel -> compensate ->
// modulate -> fuse -> decode -> loss) probed through its inputs and a sample
// of parameters from every stage. Deterministic in `seed`; runs in seconds.
//
// `inject_conv2d_fault` deliberately corrupts the convolution input gradient
// for the duration of the audit, demonstrating that the audit catches a
// broken backward rule (the conv2d rows then report large errors).
std::vector<ComponentCheck> gradient_audit(std::uint64_t seed = 17,
                                           bool inject_conv2d_fault = false);

double worst_error(const std::vector<ComponentCheck>& checks);

}  // namespace latsync
