#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hfn/rng.hpp"
#include "hfn/tape.hpp"

namespace hfn {

// Central-difference check of tape gradients. `build` must construct the
// (deterministic) loss for the given parameter leaves; it is re-invoked for
// every probe, so tape gradients and finite differences stay independent.
using LossBuilder = std::function<Tape<double>::Id(Tape<double>&, std::span<const Tape<double>::Id>)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};

inline double gradcheck_eval(const LossBuilder& build, const std::vector<Tensor<double>>& params) {
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p, false));
    const auto loss = build(tape, ids);
    const double v = tape.value(loss)[0];
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite loss");
    return v;
}

// `max_total_coords` < 0 checks every coordinate; otherwise that many
// coordinates are sampled without replacement across all parameters.
inline GradCheckReport gradient_check(const LossBuilder& build, std::vector<Tensor<double>> params,
                                      double eps = 1e-5, long max_total_coords = -1,
                                      uint64_t coord_seed = 0) {
    if (!(eps > 0.0)) throw DomainError("gradient_check: eps must be positive");

    // Analytic gradients once.
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p, true));
    const auto loss = build(tape, ids);
    if (!std::isfinite(tape.value(loss)[0])) throw NumericError("gradient_check: non-finite loss");
    const Gradients<double> grads = tape.backward(loss);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t ci = 0; ci < params[pi].size(); ++ci) coords.emplace_back(pi, ci);
    if (max_total_coords >= 0 && static_cast<std::size_t>(max_total_coords) < coords.size()) {
        Rng rng(coord_seed);
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(static_cast<std::size_t>(max_total_coords));
    }

    GradCheckReport rep;
    for (const auto& [pi, ci] : coords) {
        const double orig = params[pi][ci];
        params[pi][ci] = orig + eps;
        const double fp = gradcheck_eval(build, params);
        params[pi][ci] = orig - eps;
        const double fm = gradcheck_eval(build, params);
        params[pi][ci] = orig;

        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = grads.wrt(ids[pi])[ci];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        if (rel > rep.max_rel_err) rep.max_rel_err = rel;
        ++rep.coords_checked;
    }
    return rep;
}

}  // namespace hfn
