#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spamae/rng.hpp"
#include "spamae/tensor.hpp"

namespace spamae::testutil {

// Central finite differences against a loss that is rebuilt from scratch on
// every call. Independent of the reverse-mode path it checks.
struct GradCheckReport {
    double max_err   = 0.0;  // |ad - fd| / max(floor, |ad|, |fd|)
    std::string worst = "";
};

inline GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                  const std::function<Tensor()>& loss_fn,
                                  double h = 1e-5, double floor = 1.0) {
    for (auto& [name, p] : params) {
        (void)name;
        const_cast<Tensor&>(p).zero_grad();
    }
    Tensor loss = loss_fn();
    loss.backward();

    std::vector<std::vector<double>> ad;
    for (auto& [name, p] : params) {
        (void)name;
        ad.emplace_back(p.grad().begin(), p.grad().end());
    }

    GradCheckReport rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        auto x   = p.data();
        for (size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i]               = saved + h;
            const double lp    = loss_fn().item();
            x[i]               = saved - h;
            const double lm    = loss_fn().item();
            x[i]               = saved;
            const double fd    = (lp - lm) / (2.0 * h);
            const double a     = ad[pi][i];
            const double err =
                std::abs(a - fd) / std::max({floor, std::abs(a), std::abs(fd)});
            if (err > rep.max_err) {
                rep.max_err = err;
                rep.worst   = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

inline Tensor make_randn(const Shape& shape, uint64_t seed, double stddev = 1.0,
                         bool requires_grad = true) {
    Rng rng(seed);
    return Tensor::randn(shape, rng, stddev, requires_grad);
}

}  // namespace spamae::testutil
