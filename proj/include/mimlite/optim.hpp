#pragma once

#include <string>
#include <vector>

#include "mimlite/autograd.hpp"

namespace mimlite {

// One learnable tensor plus its optimisation policy.
struct NamedParam {
    std::string name;
    ag::Var var;
    bool decay = true;      // participates in decoupled weight decay
    double lr_scale = 1.0;  // per-parameter multiplier on the schedule lr
};

// AdamW: Adam moments on gradients, weight decay applied directly to the
// weights (decoupled), both scaled by the current schedule learning rate.
class AdamW {
public:
    AdamW(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.0);

    void step(double lr);
    void zero_grad();
    const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    std::vector<Mat> m_, v_;
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

// SGD with classical momentum and decoupled weight decay.
class SgdMomentum {
public:
    SgdMomentum(std::vector<NamedParam> params, double momentum = 0.9,
                double weight_decay = 0.0);

    void step(double lr);
    void zero_grad();
    const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    std::vector<Mat> velocity_;
    double momentum_, weight_decay_;
};

}  // namespace mimlite
