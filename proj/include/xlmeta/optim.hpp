// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "xlmeta/autodiff.hpp"

namespace xlmeta::optim {

// ---- inner-loop SGD --------------------------------------------------------

struct SgdConfig {
    double alpha;  // > 0
};

SgdConfig make_sgd(double alpha);  // validates alpha > 0

// Functional update theta' = theta - alpha * grad. Returns NEW nodes wired to
// the inputs, so a later loss on theta' differentiates back through this step
// (exactly what the meta gradient needs). Inputs are never mutated.
ad::ParamSet sgd_functional_step(const ad::ParamSet& params, const ad::GradientMap& grads,
                                 double alpha);

// ---- AdamW (meta step and finetuning) ---------------------------------------

// Decoupled weight decay:
//   theta <- theta - lr_t * mhat / (sqrt(vhat) + eps) - lr_t * lambda * theta
struct AdamWState {
    double lr = 1e-5;  // base rate; schedules pass an explicit lr_t
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::int64_t t = 0;
    ad::TensorMap m;  // first moments, keyed like the parameters
    ad::TensorMap v;  // second moments
};

AdamWState make_adamw(double lr, double weight_decay = 0.01);

// One in-place step (plain optimization only; never meta-differentiated).
// Moments are created as zeros the first time a parameter is seen.
void adamw_step(AdamWState& state, ad::TensorMap& params, const ad::TensorMap& grads,
                double lr_t);
void adamw_step(AdamWState& state, ad::TensorMap& params, const ad::TensorMap& grads);

// Checkpoint form: moments plus the step counter, in the same name->tensor
// shape the model checkpoints use.
ad::TensorMap adamw_state_tensors(const AdamWState& state);
void adamw_restore(AdamWState& state, const ad::TensorMap& saved);

// ---- schedule ----------------------------------------------------------------

// base * (1 - step/total_steps), clamped at 0 once step passes total_steps.
double linear_lr(std::int64_t step, std::int64_t total_steps, double base);

}  // namespace xlmeta::optim
