#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cloudfuse/tensor.hpp"

namespace cloudfuse {

struct NamedParam {
    std::string name;
    TensorPtr tensor;
};

struct OptimConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    bool rectify = false;   // RAdam variance rectification
    bool lookahead = false; // slow-weight interpolation every k steps
    int lookahead_k = 5;
    float lookahead_alpha = 0.5f;
};

// Adam over a fixed parameter list. Rejects non-finite gradients by
// parameter name before touching any state.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<NamedParam> params, OptimConfig config);

    void step();
    void zero_grad();
    long step_count() const { return t_; }

private:
    std::vector<NamedParam> params_;
    OptimConfig cfg_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::vector<std::vector<float>> slow_;
    long t_ = 0;
};

} // namespace cloudfuse
