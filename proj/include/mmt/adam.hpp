#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>

#include "mmt/tensor.hpp"

namespace mmt {

// Named parameter collection. Insertion order is the serialization order;
// std::deque keeps Param pointers stable while layers register themselves.
template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    // Layers hold raw Param pointers into the deque; copying would leave
    // them aimed at the source store. Moves keep element addresses.
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    // Gradient and moment buffers stay empty until first touched, so a
    // build done only for parameter counting costs one buffer per tensor.
    Param<T>& create(const std::string& name, Shape shape) {
        if (index_.count(name)) throw internal_error("duplicate parameter name: " + name);
        params_.push_back(Param<T>{});
        Param<T>& p = params_.back();
        p.name = name;
        p.shape = std::move(shape);
        p.value.assign(numel(p.shape), T(0));
        index_[name] = params_.size() - 1;
        return p;
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw internal_error("unknown parameter: " + name);
        return params_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_)
            std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    void ensure_grad_buffers() {
        for (auto& p : params_)
            if (p.grad.empty()) p.grad.assign(p.size(), T(0));
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t count() const { return params_.size(); }

    std::int64_t step = 0;  // Adam bias-correction counter

private:
    std::deque<Param<T>> params_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update with bias correction over every parameter in the store.
// Gradients are consumed (zeroed) by the step.
template <typename T>
void adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg = {}) {
    store.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(store.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(store.step));
    for (auto& p : store) {
        if (p.grad.empty()) p.grad.assign(p.size(), T(0));
        if (p.adam_m.empty()) p.adam_m.assign(p.size(), T(0));
        if (p.adam_v.empty()) p.adam_v.assign(p.size(), T(0));
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = static_cast<double>(p.grad[i]);
            const double m = b1 * static_cast<double>(p.adam_m[i]) + (1.0 - b1) * g;
            const double v = b2 * static_cast<double>(p.adam_v[i]) + (1.0 - b2) * g * g;
            p.adam_m[i] = static_cast<T>(m);
            p.adam_v[i] = static_cast<T>(v);
            const double mhat = m / corr1;
            const double vhat = v / corr2;
            p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) -
                                        lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
        std::fill(p.grad.begin(), p.grad.end(), T(0));
    }
}

// Parameter initializers.

template <typename T>
void init_uniform_fan_in(Param<T>& p, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : p.value) v = static_cast<T>(rng.next_uniform(-bound, bound));
}

template <typename T>
void init_fill(Param<T>& p, T v) {
    std::fill(p.value.begin(), p.value.end(), v);
}

}  // namespace mmt
