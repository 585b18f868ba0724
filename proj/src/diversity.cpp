#include "flatlab/diversity.hpp"

#include <fmt/format.h>

#include "flatlab/error.hpp"

namespace flatlab {

namespace {

Eigen::MatrixXd centered(const FeatureMatrix& m, const char* which) {
    if (m.rows() < 2) {
        throw Error(fmt::format("linear_cka: {} needs at least two rows", which));
    }
    if (!m.allFinite()) {
        throw Error(fmt::format("linear_cka: {} has non-finite entries", which));
    }
    Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
    if (c.squaredNorm() == 0.0) {
        throw Error(fmt::format("linear_cka: {} has zero variance after centering", which));
    }
    return c;
}

}  // namespace

double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
    if (x.rows() != y.rows()) {
        throw Error(fmt::format("linear_cka: row counts differ ({} vs {})", x.rows(), y.rows()));
    }
    const Eigen::MatrixXd xc = centered(x, "X");
    const Eigen::MatrixXd yc = centered(y, "Y");
    const double cross = (yc.transpose() * xc).squaredNorm();
    const double xx = (xc.transpose() * xc).norm();
    const double yy = (yc.transpose() * yc).norm();
    return cross / (xx * yy);
}

double prediction_diversity(std::span<const int> preds_a, std::span<const int> preds_b) {
    if (preds_a.size() != preds_b.size() || preds_a.empty()) {
        throw Error("prediction_diversity: prediction vectors must have equal, non-zero length");
    }
    std::size_t diff = 0;
    for (std::size_t i = 0; i < preds_a.size(); ++i) {
        diff += preds_a[i] != preds_b[i] ? 1 : 0;
    }
    const std::size_t same = preds_a.size() - diff;
    if (same == 0) {
        throw Error("prediction_diversity: undefined ratio (no agreeing predictions)");
    }
    return static_cast<double>(diff) / static_cast<double>(same);
}

}  // namespace flatlab
