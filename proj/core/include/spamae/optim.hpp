#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spamae/tensor.hpp"

namespace spamae {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AdamWConfig {
    double lr           = 1e-3;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay: decay acts on the parameters directly
// and never enters the moment estimates.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});
    explicit AdamW(const NamedParams& params, AdamWConfig cfg = {});

    void step();
    void zero_grad();

    uint64_t step_count() const { return step_count_; }
    double learning_rate() const { return cfg_.lr; }
    void set_learning_rate(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const { return cfg_; }

    // Moment buffers in registration order, for checkpointing.
    struct StateView {
        uint64_t step_count;
        const std::vector<std::vector<double>>* m;
        const std::vector<std::vector<double>>* v;
    };
    StateView state() const { return {step_count_, &m_, &v_}; }
    void restore_state(uint64_t step_count, std::vector<std::vector<double>> m,
                       std::vector<std::vector<double>> v);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWConfig cfg_;
    uint64_t step_count_ = 0;
};

}  // namespace spamae
