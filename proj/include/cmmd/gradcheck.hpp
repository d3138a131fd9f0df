#pragma once

#include <map>
#include <string>

#include "objective.hpp"

namespace cmmd {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::map<std::string, double> worst_by_group; // parameter path -> worst error
    bool passed(double tol = 1e-4) const { return max_relative_error < tol; }
};

// Central-difference check of the full objective against every parameter
// coordinate. The rng is re-derived per evaluation so noise, dropout masks and
// resampling indices are identical across perturbations.
inline GradCheckReport grad_check_objective(const CmmdModel& model,
                                            const MultiModalBatch& batch,
                                            const ObjectiveConfig& cfg,
                                            std::uint64_t rng_seed, double h = 1e-5) {
    auto eval = [&](const ParameterStore& params) {
        CmmdModel m = model;
        m.params = params;
        Tape tape;
        BoundParams bound = bind(tape, m.params);
        Rng rng(rng_seed);
        return tape.value(cmmd_loss(tape, m, bound, batch, cfg, rng).total)[0];
    };

    // analytic gradients
    GradMap analytic;
    {
        CmmdModel m = model;
        Tape tape;
        BoundParams bound = bind(tape, m.params);
        Rng rng(rng_seed);
        ObjectiveVars obj = cmmd_loss(tape, m, bound, batch, cfg, rng);
        tape.backward(obj.total);
        analytic = collect_grads(tape, bound);
    }

    GradCheckReport report;
    for (const auto& [path, base] : model.params.params) {
        double worst = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            ParameterStore plus = model.params;
            ParameterStore minus = model.params;
            plus.at(path)[i] += h;
            minus.at(path)[i] -= h;
            double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            double an = analytic.at(path)[i];
            double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
            worst = std::max(worst, err);
        }
        report.worst_by_group[path] = worst;
        report.max_relative_error = std::max(report.max_relative_error, worst);
    }
    return report;
}

} // namespace cmmd
