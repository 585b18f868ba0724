#include "flatlab/flatness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>

#include <Eigen/Dense>
#include <fmt/format.h>
#include "json.hpp"

#include "flatlab/csv.hpp"
#include "flatlab/error.hpp"

namespace flatlab {

double default_hvp_step(const ParamVec& theta) { return 1e-4 * (1.0 + l2_norm(theta)); }

ParamVec hvp(const GradFn& grad_fn, const ParamVec& theta, const ParamVec& v, std::optional<double> step) {
    require_same_layout(theta, v, "hvp");
    const double vn = l2_norm(v);
    if (vn == 0.0) {
        throw Error("hvp: zero direction");
    }
    const double eps = step.value_or(default_hvp_step(theta));
    if (!(eps > 0.0)) {
        throw Error("hvp: step must be positive");
    }
    ParamVec plus = theta;
    ParamVec minus = theta;
    axpy(eps / vn, v, plus);
    axpy(-eps / vn, v, minus);
    ParamVec out = subtract(grad_fn(plus), grad_fn(minus));
    scale(out, vn / (2.0 * eps));
    return out;
}

namespace {

struct PowerRun {
    double lambda = 0.0;
    double residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

// Power iteration on (H + shift I).
PowerRun run_power(const GradFn& grad_fn, const ParamVec& theta, const PowerIterationOptions& opt, double shift) {
    Rng rng(opt.seed);
    ParamVec v = sample_uniform_direction(rng, theta.layout_ptr());
    scale(v, 1.0 / l2_norm(v));
    PowerRun run;
    double previous = 0.0;
    for (std::size_t it = 1; it <= opt.max_iters; ++it) {
        ParamVec w = hvp(grad_fn, theta, v, opt.step);
        if (shift != 0.0) {
            axpy(shift, v, w);
        }
        const double lambda = dot(v, w);
        ParamVec r = w;
        axpy(-lambda, v, r);
        run.lambda = lambda;
        run.residual = l2_norm(r);
        run.iterations = it;
        const double wn = l2_norm(w);
        const bool small_change = it > 1 && std::abs(lambda - previous) < opt.tol * std::max(std::abs(lambda), 1e-300);
        if (run.residual < opt.tol || small_change || wn == 0.0) {
            run.converged = true;
            break;
        }
        previous = lambda;
        v = std::move(w);
        scale(v, 1.0 / wn);
    }
    return run;
}

}  // namespace

SpectrumReport power_iteration_lambda_max(const GradFn& grad_fn, const ParamVec& theta,
                                          const PowerIterationOptions& options) {
    SpectrumReport report;
    report.method = SpectrumMethod::power_iteration;
    const PowerRun dominant = run_power(grad_fn, theta, options, 0.0);
    report.lambda_max = dominant.lambda;
    report.residual = dominant.residual;
    report.iterations_used = dominant.iterations;
    report.converged = dominant.converged;
    if (dominant.lambda < 0.0) {
        const double shift = std::abs(dominant.lambda);
        const PowerRun top = run_power(grad_fn, theta, options, shift);
        report.lambda_max = top.lambda - shift;
        report.residual = top.residual;
        report.iterations_used += top.iterations;
        report.converged = top.converged;
        report.shifted = true;
    }
    return report;
}

SpectrumReport dense_spectrum(const GradFn& grad_fn, const ParamVec& theta, std::size_t max_params,
                              std::optional<double> step) {
    const std::size_t n = theta.size();
    if (n > max_params) {
        throw Error(fmt::format("dense_spectrum: {} parameters exceed the guard of {}", n, max_params));
    }
    const auto dim = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd hessian(dim, dim);
    ParamVec basis(theta.layout_ptr());
    for (std::size_t i = 0; i < n; ++i) {
        basis[i] = 1.0;
        const ParamVec col = hvp(grad_fn, theta, basis, step);
        basis[i] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            hessian(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = col[r];
        }
    }
    const double frob = hessian.norm();
    const double asym = (hessian - hessian.transpose()).norm();
    const Eigen::MatrixXd sym = 0.5 * (hessian + hessian.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw Error("dense_spectrum: eigensolver failed");
    }
    std::vector<double> eig(solver.eigenvalues().data(), solver.eigenvalues().data() + dim);
    std::sort(eig.begin(), eig.end(), std::greater<>());

    SpectrumReport report;
    report.method = SpectrumMethod::dense;
    report.lambda_max = eig.front();
    report.eigenvalues = std::move(eig);
    report.iterations_used = n;
    report.residual = frob > 0.0 ? asym / frob : 0.0;
    return report;
}

PerturbationResult perturbation_probe(const LossFn& loss_fn, const ParamVec& theta, double strength,
                                      std::size_t n_samples, Rng& rng) {
    if (!(strength >= 0.0)) {
        throw Error("perturbation_probe: strength must be non-negative");
    }
    if (n_samples == 0) {
        throw Error("perturbation_probe: at least one sample required");
    }
    PerturbationResult out;
    out.base_loss = loss_fn(theta);
    const double denom = std::max(out.base_loss, kLossFloor);
    out.samples.reserve(n_samples);
    double sum = 0.0;
    out.max_rel_increase = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n_samples; ++s) {
        const ParamVec dir = filterwise_normalize(sample_uniform_direction(rng, theta.layout_ptr()), theta);
        ParamVec probe = theta;
        axpy(strength, dir, probe);
        const double rel = (loss_fn(probe) - out.base_loss) / denom;
        out.samples.push_back(rel);
        sum += rel;
        out.max_rel_increase = std::max(out.max_rel_increase, rel);
    }
    out.mean_rel_increase = sum / static_cast<double>(n_samples);
    return out;
}

double LandscapeGrid::at(std::size_t ix, std::size_t iy) const {
    const std::size_t ny = axes.size() > 1 ? axes[1].size() : 1;
    return losses.at(ix * ny + iy);
}

LandscapeGrid interp_curve_1d(const LossFn& loss_fn, const ParamVec& theta0, const ParamVec& theta1,
                              std::span<const double> t_grid) {
    require_same_layout(theta0, theta1, "interp_curve_1d");
    if (t_grid.empty()) {
        throw Error("interp_curve_1d: empty grid");
    }
    LandscapeGrid grid;
    grid.axes.emplace_back(t_grid.begin(), t_grid.end());
    grid.basis.push_back(subtract(theta1, theta0));
    grid.origin = theta0;
    for (double t : t_grid) {
        grid.losses.push_back(loss_fn(interpolate(theta0, theta1, t)));
    }
    return grid;
}

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n == 0) {
        throw Error("grid: zero points");
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return out;
}

}  // namespace

std::vector<double> PlaneGridSpec::xs() const { return linspace(x_min, x_max, nx); }
std::vector<double> PlaneGridSpec::ys() const { return linspace(y_min, y_max, ny); }

LandscapeGrid plane_grid_2d(const LossFn& loss_fn, const ParamVec& w1, const ParamVec& w2, const ParamVec& w3,
                            const PlaneGridSpec& spec, std::span<const NamedWeights> extra) {
    require_same_layout(w1, w2, "plane_grid_2d");
    require_same_layout(w1, w3, "plane_grid_2d");
    const ParamVec d1 = subtract(w2, w1);
    const ParamVec d2 = subtract(w3, w1);
    const double n1 = l2_norm(d1);
    const double n2 = l2_norm(d2);
    if (n1 == 0.0 || n2 == 0.0) {
        throw Error("plane_grid_2d: degenerate basis (coincident weights)");
    }
    ParamVec u = scaled(d1, 1.0 / n1);
    ParamVec v = d2;
    axpy(-dot(d2, u), u, v);
    const double vn = l2_norm(v);
    if (vn / n2 < 1e-8) {
        throw Error("plane_grid_2d: degenerate basis (w2 - w1 and w3 - w1 nearly parallel)");
    }
    scale(v, 1.0 / vn);

    LandscapeGrid grid;
    grid.axes = {spec.xs(), spec.ys()};
    grid.origin = w1;
    for (double x : grid.axes[0]) {
        for (double y : grid.axes[1]) {
            ParamVec p = w1;
            axpy(x, u, p);
            axpy(y, v, p);
            grid.losses.push_back(loss_fn(p));
        }
    }

    auto project = [&](const std::string& name, const ParamVec& w) {
        const ParamVec d = subtract(w, w1);
        ProjectedPoint pt{name, dot(d, u), dot(d, v), 0.0};
        ParamVec r = d;
        axpy(-pt.x, u, r);
        axpy(-pt.y, v, r);
        pt.residual = l2_norm(r);
        grid.projected_points.push_back(std::move(pt));
    };
    project("w1", w1);
    project("w2", w2);
    project("w3", w3);
    for (const auto& e : extra) {
        project(e.name, e.weights);
    }
    grid.basis = {std::move(u), std::move(v)};
    return grid;
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
    if (grid.axes.size() == 1) {
        CsvWriter csv(out, {"x", "loss"});
        for (std::size_t i = 0; i < grid.axes[0].size(); ++i) {
            csv.row(grid.axes[0][i], grid.at(i));
        }
        return;
    }
    CsvWriter csv(out, {"x", "y", "loss"});
    for (std::size_t i = 0; i < grid.axes[0].size(); ++i) {
        for (std::size_t j = 0; j < grid.axes[1].size(); ++j) {
            csv.row(grid.axes[0][i], grid.axes[1][j], grid.at(i, j));
        }
    }
}

std::string landscape_sidecar_json(const LandscapeGrid& grid, const std::string& origin_reference) {
    nlohmann::ordered_json j;
    j["dimensions"] = grid.axes.size();
    auto norms = nlohmann::ordered_json::array();
    for (const auto& b : grid.basis) norms.push_back(l2_norm(b));
    j["basis_norms"] = norms;
    j["origin"] = origin_reference;
    auto points = nlohmann::ordered_json::array();
    for (const auto& p : grid.projected_points) {
        points.push_back({{"name", p.name}, {"x", p.x}, {"y", p.y}, {"residual", p.residual}});
    }
    j["projected_points"] = points;
    return j.dump(2) + "\n";
}

}  // namespace flatlab
