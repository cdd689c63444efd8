#pragma once

#include <cmath>

#include "kanfuse/nn.hpp"

namespace kf {

// Linear warmup from warmup_ratio*base to base, then cosine decay to floor.
struct LrSchedule {
    double base_lr = 1e-4;
    double warmup_ratio = 0.3; // start factor at step 0
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;
    double floor_lr = 0.0;

    double lr_at(int64_t step) const {
        if (step < 0 || step > total_steps)
            throw ValueError(cat("lr_at: step ", step, " outside [0,", total_steps, "]"));
        if (warmup_steps > 0 && step < warmup_steps) {
            double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
            return base_lr * (warmup_ratio + (1.0 - warmup_ratio) * t);
        }
        int64_t span = total_steps - warmup_steps;
        if (span <= 0) return base_lr;
        double t = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
        return floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
    }
};

// Decoupled weight decay Adam. Parameters without a gradient buffer (frozen
// or untouched this step) are skipped entirely: no moment update, no decay.
template <class T>
struct AdamW {
    struct Slot {
        std::vector<T> m, v;
        int64_t step = 0;
    };

    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;

    std::vector<Tensor<T>> params;
    std::vector<Slot> slots;

    explicit AdamW(std::vector<Tensor<T>> ps, double lr_ = 1e-4, double wd = 0.01)
        : lr(lr_), weight_decay(wd), params(std::move(ps)) {
        slots.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            size_t n = static_cast<size_t>(params[i].numel());
            slots[i].m.assign(n, T(0));
            slots[i].v.assign(n, T(0));
        }
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    void step() {
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = params[i];
            const std::vector<T>* g = p.grad();
            if (!g || !p.requires_grad()) continue;
            Slot& s = slots[i];
            s.step += 1;
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
            T* pv = p.data();
            for (size_t j = 0; j < g->size(); ++j) {
                double gj = static_cast<double>((*g)[j]);
                double mj = beta1 * static_cast<double>(s.m[j]) + (1.0 - beta1) * gj;
                double vj = beta2 * static_cast<double>(s.v[j]) + (1.0 - beta2) * gj * gj;
                s.m[j] = static_cast<T>(mj);
                s.v[j] = static_cast<T>(vj);
                double mhat = mj / bc1;
                double vhat = vj / bc2;
                double upd = lr * (mhat / (std::sqrt(vhat) + eps) +
                                   weight_decay * static_cast<double>(pv[j]));
                pv[j] = static_cast<T>(static_cast<double>(pv[j]) - upd);
            }
        }
    }
};

} // namespace kf
