#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "flatlab/params.hpp"

namespace testing {

inline flatlab::LayoutPtr single(std::size_t n) { return flatlab::GroupLayout::single("theta", n); }

inline flatlab::ParamVec vec(std::vector<double> v) {
    const auto n = v.size();
    return flatlab::ParamVec(single(n), std::move(v));
}

inline flatlab::ParamVec vec(const flatlab::LayoutPtr& layout, std::vector<double> v) {
    return flatlab::ParamVec(layout, std::move(v));
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Fresh scratch directory under FLATLAB_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
    const char* root = std::getenv("FLATLAB_TEST_TMP");
    std::filesystem::path dir = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "flatlab_tests";
    dir /= name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
