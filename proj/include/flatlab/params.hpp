#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flatlab/rng.hpp"

namespace flatlab {

/// Ordered, named partition of a flat parameter vector. A group is the unit of
/// filter-wise normalization (one weight matrix, one bias, one filter bank...).
class GroupLayout {
public:
    struct Group {
        std::string name;
        std::size_t length = 0;
        bool operator==(const Group&) const = default;
    };

    explicit GroupLayout(std::vector<Group> groups);

    [[nodiscard]] static std::shared_ptr<const GroupLayout> single(std::string name, std::size_t length);

    [[nodiscard]] const std::vector<Group>& groups() const noexcept { return groups_; }
    [[nodiscard]] std::size_t group_count() const noexcept { return groups_.size(); }
    [[nodiscard]] std::size_t total_len() const noexcept { return total_len_; }
    [[nodiscard]] std::size_t offset(std::size_t group) const { return offsets_.at(group); }

    bool operator==(const GroupLayout& other) const { return groups_ == other.groups_; }

private:
    std::vector<Group> groups_;
    std::vector<std::size_t> offsets_;
    std::size_t total_len_ = 0;
};

using LayoutPtr = std::shared_ptr<const GroupLayout>;

/// Dense weight vector tagged with its group layout. Layouts are shared and
/// immutable, so copies are cheap apart from the data itself.
class ParamVec {
public:
    /// Zero vector over `layout`.
    explicit ParamVec(LayoutPtr layout);
    /// Takes ownership of `data`; throws on length mismatch or non-finite entries.
    ParamVec(LayoutPtr layout, std::vector<double> data);

    [[nodiscard]] const GroupLayout& layout() const noexcept { return *layout_; }
    [[nodiscard]] const LayoutPtr& layout_ptr() const noexcept { return layout_; }
    [[nodiscard]] bool same_layout(const ParamVec& other) const noexcept;

    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> group(std::size_t g) const;
    [[nodiscard]] std::span<double> group(std::size_t g);

    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }

    [[nodiscard]] bool all_finite() const noexcept;
    /// Throws flatlab::Error naming `context` if any entry is NaN/Inf.
    void ensure_finite(const char* context) const;

    /// Layouts compare by value; data compares bitwise-equal as doubles.
    bool operator==(const ParamVec& other) const;

private:
    LayoutPtr layout_;
    std::vector<double> data_;
};

void require_same_layout(const ParamVec& a, const ParamVec& b, const char* context);

/// (1 - t) * a + t * b. Extrapolation (t outside [0, 1]) is allowed.
[[nodiscard]] ParamVec interpolate(const ParamVec& a, const ParamVec& b, double t);

/// sum_j weights[j] * vs[j]; weights must be non-negative and sum to 1 (1e-12).
[[nodiscard]] ParamVec weighted_average(std::span<const ParamVec> vs, std::span<const double> weights);

/// Rescales each group of `direction` to the norm of the matching group in
/// `reference`. Zero-norm groups on either side are errors.
[[nodiscard]] ParamVec filterwise_normalize(const ParamVec& direction, const ParamVec& reference);

struct RunningAverage {
    ParamVec mean;
    std::size_t count = 0;
};

/// Folds `next` into an arithmetic mean of `count` previous vectors.
[[nodiscard]] RunningAverage running_average_update(const ParamVec& mean, std::size_t count, const ParamVec& next);

// y <- y + a * x
void axpy(double a, const ParamVec& x, ParamVec& y);
void scale(ParamVec& x, double a);
[[nodiscard]] ParamVec scaled(const ParamVec& x, double a);
[[nodiscard]] ParamVec add(const ParamVec& a, const ParamVec& b);
[[nodiscard]] ParamVec subtract(const ParamVec& a, const ParamVec& b);
[[nodiscard]] double dot(const ParamVec& a, const ParamVec& b);
[[nodiscard]] double l2_norm(const ParamVec& x);
[[nodiscard]] std::vector<double> group_norms(const ParamVec& x);

/// Every entry drawn from U(-1, 1).
[[nodiscard]] ParamVec sample_uniform_direction(Rng& rng, const LayoutPtr& layout);

// Binary checkpoint: "FLTW", u16 version, u32 group count, per group
// (u16 name length, UTF-8 name, u64 length), then little-endian f64 data.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParamVec& params);
[[nodiscard]] ParamVec read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ParamVec& params);
[[nodiscard]] ParamVec load_checkpoint(const std::string& path);

}  // namespace flatlab
