#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rsic/model/caption_model.hpp"

namespace rsic::harness {

struct GradCheckOptions {
    std::string part = "encoder";  // "encoder", "decoder", or any parameter-name prefix
    double tolerance = 1e-4;
    double step = 1e-5;
    std::size_t max_entries = 5000;  // sampled per tensor
    std::uint64_t seed = 0;
    // Std-dev of seeded noise added to every parameter before checking. Fresh
    // init leaves some gradients near 1e-7, where h=1e-5 differences are roundoff.
    double jitter = 0.2;
    // Test fixture: runs after backward, before gradients are read.
    std::function<void(nn::ParameterStore&)> tamper;
};

struct TensorCheck {
    std::string name;
    std::size_t checked = 0;
    double relative_error = 0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;  // worst first
    double max_relative_error = 0;
    bool passed = true;
};

// Toy-sized captioning model used when no model is supplied.
model::ModelConfig gradcheck_model_config(std::uint64_t seed = 0);

// Central differences of the caption loss on a fixed random batch against the
// tape's gradients. Relative error per tensor: |a - n| / max(|a|, |n|, 1e-10)
// over the sampled entries.
GradCheckReport grad_check(model::CaptionModel& model, const GradCheckOptions& opts);
GradCheckReport grad_check(const GradCheckOptions& opts);

}  // namespace rsic::harness
