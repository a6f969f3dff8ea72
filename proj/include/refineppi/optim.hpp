#pragma once
/*
optim.hpp
---------
Named parameter registry and Adam with bias correction. Parameter order
is the lexicographic name order of the map, which keeps every traversal
(updates, checkpoints, gradient checks) deterministic.
*/

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace refineppi {

struct ParamStore {
    std::map<std::string, ad::Tensor> params;

    ad::Tensor add(const std::string& name, ad::Tensor t) {
        if (params.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
        params.emplace(name, t);
        return t;
    }

    ad::Tensor& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end())
            throw std::invalid_argument("ParamStore: unknown parameter " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, t] : params) t.zero_grad();
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params) n += t.size();
        return n;
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    struct Slot {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    std::map<std::string, Slot> slots;
};

// One Adam update over the store (or a named subset). Parameters whose
// gradient was never populated are treated as having zero gradient.
inline void adam_step(ParamStore& store, AdamState& state, const AdamConfig& cfg,
                      const std::set<std::string>* subset = nullptr) {
    for (auto& [name, t] : store.params) {
        if (subset && !subset->count(name)) continue;
        auto& slot = state.slots[name];
        if (slot.m.size() != t.size()) {
            slot.m.assign(t.size(), 0.0);
            slot.v.assign(t.size(), 0.0);
        }
        slot.t += 1;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
        auto& vals = t.values_mut();
        const std::vector<double>* g = t.has_grad() ? &t.grad() : nullptr;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double gi = g ? (*g)[i] : 0.0;
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            vals[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace refineppi
