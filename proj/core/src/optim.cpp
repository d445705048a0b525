#include "spamae/optim.hpp"

#include <cmath>

namespace spamae {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
        if (!p.requires_grad())
            throw contract_error("AdamW: registered parameter does not require grad");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

AdamW::AdamW(const NamedParams& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& [name, p] : params) {
        (void)name;
        if (!p.requires_grad())
            throw contract_error("AdamW: registered parameter does not require grad");
        params_.push_back(p);
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad())
            throw contract_error("AdamW: parameter " + std::to_string(i) +
                                 " has no populated gradient");
        auto g       = p.grad();
        auto x       = p.data();
        auto& m      = m_[i];
        auto& v      = v_[i];
        const size_t n = x.size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            x[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                               cfg_.weight_decay * x[j]);
        }
    }
}

void AdamW::restore_state(uint64_t step_count, std::vector<std::vector<double>> m,
                          std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw contract_error("AdamW: state buffer count mismatch");
    for (size_t i = 0; i < params_.size(); ++i)
        if (m[i].size() != params_[i].numel() || v[i].size() != params_[i].numel())
            throw contract_error("AdamW: state buffer shape mismatch at index " +
                                 std::to_string(i));
    step_count_ = step_count;
    m_          = std::move(m);
    v_          = std::move(v);
}

}  // namespace spamae
