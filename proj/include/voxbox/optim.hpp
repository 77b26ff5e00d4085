#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "voxbox/decoder.hpp"

namespace voxbox {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// AdamW with decoupled weight decay and bias-corrected moments:
/// w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// One update of every parameter that holds a gradient, at learning rate
    /// `lr`. Throws NonFiniteError (leaving parameters untouched) when any
    /// gradient is not finite.
    void step(ParameterSet& params, double lr);
    void step(ParameterSet& params) { step(params, cfg_.lr); }

    std::int64_t steps() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

struct Schedule {
    double base_lr = 1e-4;
    int warmup_epochs = 5;
    int epochs = 100;
};

/// Linear warmup base*(e+1)/warmup, then cosine annealing to zero.
double lr_at(int epoch, const Schedule& s);

struct ClipResult {
    double norm = 0.0;
    double scale = 1.0;
};

/// Scales every gradient by min(1, max_norm / ||g||_2) over all parameters.
ClipResult clip_grad_norm(ParameterSet& params, double max_norm);

/// True once the best value in `history` (higher is better) is at least
/// `patience` epochs old.
bool early_stop(const std::vector<double>& history, int patience);

struct Split {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

/// Shuffles `ids` with `seed`; fold f validates on the f-th of k contiguous
/// blocks (earlier blocks absorb the remainder).
Split cv_split(std::vector<std::string> ids, int fold, int k, std::uint64_t seed);

} // namespace voxbox
