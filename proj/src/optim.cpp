#include "mimlite/optim.hpp"

#include <cmath>

namespace mimlite {

AdamW::AdamW(std::vector<NamedParam> params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.push_back(Mat::Zero(p.var->value.rows(), p.var->value.cols()));
        v_.push_back(Mat::Zero(p.var->value.rows(), p.var->value.cols()));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        p.var->ensure_grad();
        const Mat& g = p.var->grad;
        const double plr = lr * p.lr_scale;
        if (p.decay && weight_decay_ > 0.0) p.var->value *= (1.0 - plr * weight_decay_);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        const Mat mhat = m_[i] / bc1;
        const Mat vhat = v_[i] / bc2;
        p.var->value.array() -= plr * mhat.array() / (vhat.array().sqrt() + eps_);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) {
        p.var->ensure_grad();
        p.var->grad.setZero();
    }
}

SgdMomentum::SgdMomentum(std::vector<NamedParam> params, double momentum,
                         double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_)
        velocity_.push_back(Mat::Zero(p.var->value.rows(), p.var->value.cols()));
}

void SgdMomentum::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        p.var->ensure_grad();
        const double plr = lr * p.lr_scale;
        if (p.decay && weight_decay_ > 0.0) p.var->value *= (1.0 - plr * weight_decay_);
        velocity_[i] = momentum_ * velocity_[i] + p.var->grad;
        p.var->value -= plr * velocity_[i];
    }
}

void SgdMomentum::zero_grad() {
    for (auto& p : params_) {
        p.var->ensure_grad();
        p.var->grad.setZero();
    }
}

}  // namespace mimlite
