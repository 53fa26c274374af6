#include "otmatch/loss.hpp"

#include <cmath>

namespace otmatch {

namespace {

struct JointResult {
    double loss = 0.0;
    std::vector<double> grad;
    bool masked = false;
};

JointResult matching_joint(const Heatmap& h, const Keypoint& kp, DemanderMode mode,
                           const SinkhornConfig& cfg) {
    JointResult out;
    const int n = h.geometry().num_pixels();
    out.grad.assign(n, 0.0);
    if (!kp.visible) {
        out.masked = true;
        return out;
    }
    SupplierSet suppliers = build_suppliers(h);
    if (suppliers.degenerate) {
        out.masked = true;
        return out;
    }
    DemanderSet demanders = build_demanders(clamp_keypoint(kp, h.geometry()), h.geometry(), mode);
    CostMatrix cost = build_cost(suppliers, demanders);
    SinkhornGradResult res = sinkhorn_with_grad(suppliers.masses, demanders.masses, cost, cfg);
    out.loss = res.plan.objective;

    // normalization backward: s = r / S with r = relu(h), S = sum(r)
    double total = 0.0;
    double dot = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = h.values()[i];
        if (v > 0.0) total += v;
    }
    for (int i = 0; i < n; ++i) dot += res.grad_supply[i] * suppliers.masses[i];
    for (int i = 0; i < n; ++i) {
        if (h.values()[i] > 0.0)
            out.grad[i] = (res.grad_supply[i] - dot) / total;
        // relu subgradient is 0 at and below 0
    }
    return out;
}

JointResult mse_joint(const Heatmap& h, const Keypoint& kp, MseTarget target,
                      const GaussianSpec& spec) {
    JointResult out;
    const int n = h.geometry().num_pixels();
    out.grad.assign(n, 0.0);
    if (!kp.visible) {
        out.masked = true;
        return out;
    }
    Keypoint clamped = clamp_keypoint(kp, h.geometry());
    Heatmap tgt = target == MseTarget::gaussian
                      ? build_gaussian_heatmap(clamped, h.geometry(), spec)
                      : build_dot_heatmap(clamped, h.geometry());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double diff = h.values()[i] - tgt.values()[i];
        loss += diff * diff;
        out.grad[i] = 2.0 * diff;
    }
    out.loss = loss;
    return out;
}

template <typename JointFn>
LossReport run_per_joint(const PoseInstance& instance, Exec exec, JointFn&& fn) {
    const int k = instance.num_joints();
    std::vector<JointResult> results(k);

    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int j = 0; j < k; ++j) fn(j, results[j]);
    } else {
        for (int j = 0; j < k; ++j) fn(j, results[j]);
    }

    LossReport report;
    report.per_joint.resize(k);
    report.gradients.resize(k);
    report.masked.resize(k);
    bool any_unmasked = false;
    for (int j = 0; j < k; ++j) {  // reduce in joint order
        report.per_joint[j] = results[j].loss;
        report.gradients[j] = std::move(results[j].grad);
        report.masked[j] = results[j].masked;
        if (!results[j].masked) {
            report.total += results[j].loss;
            any_unmasked = true;
        }
    }
    if (!any_unmasked)
        throw EmptyLossError("loss: all joints are masked (invisible or degenerate)");
    return report;
}

}  // namespace

LossReport matching_loss(const PoseInstance& instance, DemanderMode mode,
                         const SinkhornConfig& cfg, Exec exec) {
    cfg.validate();
    return run_per_joint(instance, exec, [&](int j, JointResult& out) {
        out = matching_joint(instance.heatmaps[j], instance.joints[j], mode, cfg);
    });
}

LossReport mse_loss(const PoseInstance& instance, MseTarget target, const GaussianSpec& spec,
                    Exec exec) {
    return run_per_joint(instance, exec, [&](int j, JointResult& out) {
        out = mse_joint(instance.heatmaps[j], instance.joints[j], target, spec);
    });
}

}  // namespace otmatch
