#pragma once

#include <span>

#include <Eigen/Dense>

namespace flatlab {

/// Rows are samples, columns are feature dimensions.
using FeatureMatrix = Eigen::MatrixXd;

/// Linear centered kernel alignment, |Y~^T X~|_F^2 / (|X~^T X~|_F |Y~^T Y~|_F)
/// on column-centered X~, Y~. 1 means identical representational geometry.
[[nodiscard]] double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

/// N_diff / N_simul: disagreements over agreements. Throws when the two
/// prediction vectors never agree (ratio undefined).
[[nodiscard]] double prediction_diversity(std::span<const int> preds_a, std::span<const int> preds_b);

}  // namespace flatlab
