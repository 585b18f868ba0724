#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flatlab/models.hpp"
#include "flatlab/params.hpp"
#include "flatlab/rng.hpp"

namespace flatlab {

enum class SpectrumMethod { power_iteration, dense };

struct SpectrumReport {
    double lambda_max = 0.0;
    std::optional<std::vector<double>> eigenvalues;  // descending, dense only
    SpectrumMethod method = SpectrumMethod::power_iteration;
    std::size_t iterations_used = 0;
    double residual = 0.0;  // |Hv - lambda v| / |v| (power); |H - H^T|_F / |H|_F (dense)
    bool converged = true;
    bool shifted = false;  // power iteration rerun on H + cI
};

/// Default finite-difference step along the unit direction: 1e-4 (1 + |theta|).
[[nodiscard]] double default_hvp_step(const ParamVec& theta);

/// Hessian-vector product by central differences of the analytic gradient:
/// (g(theta + eps u) - g(theta - eps u)) / (2 eps) * |v|, u = v / |v|.
[[nodiscard]] ParamVec hvp(const GradFn& grad_fn, const ParamVec& theta, const ParamVec& v,
                           std::optional<double> step = std::nullopt);

struct PowerIterationOptions {
    std::size_t max_iters = 1000;
    double tol = 1e-8;
    std::uint64_t seed = 0;  // start vector
    std::optional<double> step;
};

/// Most-positive Hessian eigenvalue. Runs plain power iteration; if the
/// dominant eigenvalue is negative, reruns on H + cI with c = |lambda_dominant|
/// and subtracts c. Non-convergence is reported (converged = false), not thrown.
[[nodiscard]] SpectrumReport power_iteration_lambda_max(const GradFn& grad_fn, const ParamVec& theta,
                                                        const PowerIterationOptions& options = {});

inline constexpr std::size_t kDenseSpectrumMaxParams = 2000;

/// Full Hessian from n basis HVPs, symmetrized, eigen-decomposed.
[[nodiscard]] SpectrumReport dense_spectrum(const GradFn& grad_fn, const ParamVec& theta,
                                            std::size_t max_params = kDenseSpectrumMaxParams,
                                            std::optional<double> step = std::nullopt);

/// Relative-increase denominators use max(L0, kLossFloor).
inline constexpr double kLossFloor = 1e-8;

struct PerturbationResult {
    double base_loss = 0.0;
    double mean_rel_increase = 0.0;
    double max_rel_increase = 0.0;
    std::vector<double> samples;
};

/// L(theta + s * d) for d = U(-1,1) draws normalized filter-wise against theta.
[[nodiscard]] PerturbationResult perturbation_probe(const LossFn& loss_fn, const ParamVec& theta, double strength,
                                                    std::size_t n_samples, Rng& rng);

struct ProjectedPoint {
    std::string name;
    double x = 0.0;
    double y = 0.0;
    double residual = 0.0;  // out-of-plane distance
};

struct LandscapeGrid {
    std::vector<std::vector<double>> axes;  // one (1-D) or two (2-D) coordinate vectors
    std::vector<double> losses;             // row-major over axes (x outer)
    std::vector<ParamVec> basis;
    std::optional<ParamVec> origin;
    std::vector<ProjectedPoint> projected_points;

    [[nodiscard]] double at(std::size_t ix, std::size_t iy = 0) const;
};

/// Losses along (1 - t) theta0 + t theta1.
[[nodiscard]] LandscapeGrid interp_curve_1d(const LossFn& loss_fn, const ParamVec& theta0, const ParamVec& theta1,
                                            std::span<const double> t_grid);

struct PlaneGridSpec {
    double x_min = -0.5;
    double x_max = 1.5;
    std::size_t nx = 21;
    double y_min = -0.5;
    double y_max = 1.5;
    std::size_t ny = 21;

    [[nodiscard]] std::vector<double> xs() const;
    [[nodiscard]] std::vector<double> ys() const;
};

struct NamedWeights {
    std::string name;
    ParamVec weights;
};

/// Losses on the plane through w1, w2, w3 with Gram-Schmidt basis
/// (w2 - w1, w3 - w1). `extra` weights are orthogonally projected.
[[nodiscard]] LandscapeGrid plane_grid_2d(const LossFn& loss_fn, const ParamVec& w1, const ParamVec& w2,
                                          const ParamVec& w3, const PlaneGridSpec& grid,
                                          std::span<const NamedWeights> extra = {});

/// CSV `x[,y],loss`.
void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);
/// JSON sidecar: basis norms, origin reference, projected points.
[[nodiscard]] std::string landscape_sidecar_json(const LandscapeGrid& grid, const std::string& origin_reference);

}  // namespace flatlab
