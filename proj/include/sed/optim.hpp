#pragma once

// AdamW with decoupled weight decay and per-group learning rates: parameters
// in the encoder group step with lr * encoder_lr_scale, everything else with
// lr. Decay is applied before the moment update (p *= 1 - lr_eff * wd), so a
// zero-gradient step shrinks a parameter by exactly that factor.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "sed/params.hpp"

namespace sed {

template <typename T>
class AdamW {
public:
    AdamW(T lr, T weight_decay, T encoder_lr_scale)
        : lr_(lr), weight_decay_(weight_decay), encoder_scale_(encoder_lr_scale) {}

    void step(ParamSet<T>& params) {
        ++step_count_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
        for (auto& e : params.entries()) {
            if (!e.tensor.has_grad())
                throw std::invalid_argument("adamw_step: parameter \"" + e.name +
                                            "\" has no gradient");
            const T lr_eff = e.group == ParamGroup::encoder ? lr_ * encoder_scale_ : lr_;
            auto& p = e.tensor.mutable_values();
            const auto& g = e.tensor.grad();
            auto& m = m_[e.name];
            auto& v = v_[e.name];
            if (m.empty()) {
                m.assign(p.size(), T(0));
                v.assign(p.size(), T(0));
            }
            for (size_t i = 0; i < p.size(); ++i) {
                p[i] *= T(1) - lr_eff * weight_decay_;
                m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g[i];
                v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g[i] * g[i];
                const T mhat = m[i] / static_cast<T>(bc1);
                const T vhat = v[i] / static_cast<T>(bc2);
                p[i] -= lr_eff * mhat / (std::sqrt(vhat) + static_cast<T>(eps));
            }
        }
    }

    int64_t step_count() const { return step_count_; }

    // Optimizer state rides along in the checkpoint as extra records so a
    // resumed run is bitwise identical to an uninterrupted one.
    std::vector<CheckpointExtra> state_records(const ParamSet<T>& params) const {
        std::vector<CheckpointExtra> out;
        out.push_back({"opt/step", Shape{1}, {static_cast<float>(step_count_)}});
        for (const auto& e : params.entries()) {
            auto mit = m_.find(e.name);
            if (mit == m_.end()) continue;
            CheckpointExtra m{"opt/m/" + e.name, e.tensor.shape(), {}};
            CheckpointExtra v{"opt/v/" + e.name, e.tensor.shape(), {}};
            m.values.assign(mit->second.begin(), mit->second.end());
            const auto& vv = v_.at(e.name);
            v.values.assign(vv.begin(), vv.end());
            out.push_back(std::move(m));
            out.push_back(std::move(v));
        }
        return out;
    }

    void restore_state(const std::vector<CheckpointExtra>& extras) {
        for (const auto& x : extras) {
            if (x.name == "opt/step") {
                step_count_ = static_cast<int64_t>(x.values.at(0));
            } else if (x.name.rfind("opt/m/", 0) == 0) {
                auto& m = m_[x.name.substr(6)];
                m.assign(x.values.begin(), x.values.end());
            } else if (x.name.rfind("opt/v/", 0) == 0) {
                auto& v = v_[x.name.substr(6)];
                v.assign(x.values.begin(), x.values.end());
            }
        }
    }

private:
    T lr_, weight_decay_, encoder_scale_;
    int64_t step_count_ = 0;
    std::unordered_map<std::string, std::vector<T>> m_, v_;
};

}  // namespace sed
