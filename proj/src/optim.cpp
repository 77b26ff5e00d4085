#include "voxbox/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace voxbox {

void AdamW::step(ParameterSet& params, double lr) {
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad().to_vector()) {
            if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in '" + name + "'");
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        const auto g = p.grad().to_vector();
        auto& st = state_[name];
        if (st.m.empty()) {
            st.m.assign(g.size(), 0.0);
            st.v.assign(g.size(), 0.0);
        }
        dispatch(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto w = p.mutable_data<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double m_hat = st.m[i] / bc1;
                const double v_hat = st.v[i] / bc2;
                const double wi = w[i];
                w[i] = static_cast<T>(wi - lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * wi));
            }
        });
    }
}

double lr_at(int epoch, const Schedule& s) {
    if (s.epochs < 1 || s.warmup_epochs < 0 || s.warmup_epochs >= s.epochs) {
        throw ConfigError("schedule needs 0 <= warmup_epochs < epochs");
    }
    if (epoch < s.warmup_epochs) return s.base_lr * (epoch + 1) / s.warmup_epochs;
    const double t = static_cast<double>(epoch - s.warmup_epochs) / (s.epochs - s.warmup_epochs);
    return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

ClipResult clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& e : params) {
        if (!e.second.has_grad()) continue;
        for (double g : e.second.grad().to_vector()) sq += g * g;
    }
    ClipResult r;
    r.norm = std::sqrt(sq);
    if (r.norm > max_norm) {
        r.scale = max_norm / r.norm;
        for (auto& e : params)
            if (e.second.has_grad()) e.second.scale_grad(r.scale);
    }
    return r;
}

bool early_stop(const std::vector<double>& history, int patience) {
    if (patience < 1) throw ConfigError("early stopping patience must be >= 1");
    if (history.empty()) return false;
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i] > history[best]) best = i;
    return history.size() - 1 - best >= static_cast<std::size_t>(patience);
}

Split cv_split(std::vector<std::string> ids, int fold, int k, std::uint64_t seed) {
    if (k < 2 || fold < 0 || fold >= k) throw ConfigError("fold must lie in [0, k) with k >= 2");
    if (ids.size() < static_cast<std::size_t>(k)) throw ConfigError("fewer subjects than folds");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size(), base = n / k, extra = n % k;
    std::size_t begin = 0;
    for (int f = 0; f < fold; ++f) begin += base + (static_cast<std::size_t>(f) < extra);
    const std::size_t len = base + (static_cast<std::size_t>(fold) < extra);
    Split s;
    for (std::size_t i = 0; i < n; ++i) (i >= begin && i < begin + len ? s.val : s.train).push_back(ids[i]);
    return s;
}

} // namespace voxbox
