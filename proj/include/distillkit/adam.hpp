#pragma once

#include <cmath>
#include <stdexcept>

#include "distillkit/encoder.hpp"

namespace dk {

// Bias-corrected Adam over a named parameter collection.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int step_count = 0;
    ParamMap m, v;

    void step(ParamMap& params, const ParamMap& grads) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, step_count);
        double bc2 = 1.0 - std::pow(beta2, step_count);
        for (auto& [name, w] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const Mat& g = git->second;
            if (!g.same_shape(w)) throw std::invalid_argument("adam: gradient shape mismatch for " + name);
            Mat& mm = m[name];
            Mat& vv = v[name];
            if (mm.size() == 0) mm = Mat(w.rows, w.cols);
            if (vv.size() == 0) vv = Mat(w.rows, w.cols);
            for (size_t i = 0; i < w.size(); ++i) {
                mm.a[i] = beta1 * mm.a[i] + (1.0 - beta1) * g.a[i];
                vv.a[i] = beta2 * vv.a[i] + (1.0 - beta2) * g.a[i] * g.a[i];
                double mhat = mm.a[i] / bc1;
                double vhat = vv.a[i] / bc2;
                w.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

}  // namespace dk
