#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

// Named parameter registry shared by the optimizer and checkpoint I/O.
// Registration order is fixed and becomes the serialization order.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> params;

    Tensor add(const std::string& name, Tensor t) {
        check_contract(t.requires_grad(), "ParamSet: parameter must require grad: " + name);
        for (const auto& [n, _] : params)
            check_contract(n != name, "ParamSet: duplicate parameter name: " + name);
        params.emplace_back(name, t);
        return t;
    }

    Tensor* find(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return &t;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [_, t] : params) t.zero_grad();
    }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& [_, t] : params) n += t.numel();
        return n;
    }
};

// AdamW with decoupled weight decay. step() consumes the gradients
// accumulated on the parameters and leaves them zeroed.
class AdamW {
  public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-4;
    };

    AdamW(ParamSet& params, Options opt) : params_(params), opt_(opt) {
        m_.resize(params_.params.size());
        v_.resize(params_.params.size());
        for (size_t i = 0; i < params_.params.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params_.params[i].second.numel()), 0.0);
            v_[i].assign(static_cast<size_t>(params_.params[i].second.numel()), 0.0);
        }
    }

    double lr() const { return lr_override_ >= 0.0 ? lr_override_ : opt_.lr; }
    void set_lr(double lr) { lr_override_ = lr; }
    int64_t step_count() const { return step_count_; }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_count_));
        const double cur_lr = lr();
        for (size_t i = 0; i < params_.params.size(); ++i) {
            Tensor& p = params_.params[i].second;
            check_contract(p.has_grad(),
                           "AdamW::step: no gradient for parameter " + params_.params[i].first);
            const std::vector<double>& g = p.grad();
            std::vector<double>& w = p.mutable_data();
            for (size_t j = 0; j < w.size(); ++j) {
                double gj = g[j];
                if (!std::isfinite(gj))
                    throw NumericalError("AdamW::step: non-finite gradient in " +
                                         params_.params[i].first);
                m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * gj;
                v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * gj * gj;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                w[j] -= cur_lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * w[j]);
            }
            p.zero_grad();
        }
    }

  private:
    ParamSet& params_;
    Options opt_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t step_count_ = 0;
    double lr_override_ = -1.0;
};

}  // namespace cpda
