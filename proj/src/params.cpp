#include "flatlab/params.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <fmt/format.h>

#include "flatlab/error.hpp"

namespace flatlab {

GroupLayout::GroupLayout(std::vector<Group> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) {
        throw Error("GroupLayout: at least one group required");
    }
    std::unordered_set<std::string> seen;
    offsets_.reserve(groups_.size());
    for (const auto& g : groups_) {
        if (g.length == 0) {
            throw Error(fmt::format("GroupLayout: group '{}' has zero length", g.name));
        }
        if (!seen.insert(g.name).second) {
            throw Error(fmt::format("GroupLayout: duplicate group name '{}'", g.name));
        }
        offsets_.push_back(total_len_);
        total_len_ += g.length;
    }
}

LayoutPtr GroupLayout::single(std::string name, std::size_t length) {
    return std::make_shared<const GroupLayout>(std::vector<Group>{{std::move(name), length}});
}

ParamVec::ParamVec(LayoutPtr layout) : layout_(std::move(layout)) {
    if (!layout_) {
        throw Error("ParamVec: null layout");
    }
    data_.assign(layout_->total_len(), 0.0);
}

ParamVec::ParamVec(LayoutPtr layout, std::vector<double> data)
    : layout_(std::move(layout)), data_(std::move(data)) {
    if (!layout_) {
        throw Error("ParamVec: null layout");
    }
    if (data_.size() != layout_->total_len()) {
        throw Error(fmt::format("ParamVec: data length {} does not match layout length {}", data_.size(),
                                layout_->total_len()));
    }
    ensure_finite("ParamVec");
}

bool ParamVec::same_layout(const ParamVec& other) const noexcept {
    return layout_ == other.layout_ || *layout_ == *other.layout_;
}

std::span<const double> ParamVec::group(std::size_t g) const {
    return std::span<const double>(data_).subspan(layout_->offset(g), layout_->groups()[g].length);
}

std::span<double> ParamVec::group(std::size_t g) {
    return std::span<double>(data_).subspan(layout_->offset(g), layout_->groups()[g].length);
}

bool ParamVec::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void ParamVec::ensure_finite(const char* context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw Error(fmt::format("{}: non-finite entry at index {}", context, i));
        }
    }
}

bool ParamVec::operator==(const ParamVec& other) const {
    return same_layout(other) && data_ == other.data_;
}

void require_same_layout(const ParamVec& a, const ParamVec& b, const char* context) {
    if (!a.same_layout(b)) {
        throw Error(fmt::format("{}: layout mismatch", context));
    }
}

ParamVec interpolate(const ParamVec& a, const ParamVec& b, double t) {
    require_same_layout(a, b, "interpolate");
    if (!std::isfinite(t)) {
        throw Error("interpolate: non-finite t");
    }
    ParamVec out(a.layout_ptr());
    const double s = 1.0 - t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = s * a[i] + t * b[i];
    }
    out.ensure_finite("interpolate");
    return out;
}

ParamVec weighted_average(std::span<const ParamVec> vs, std::span<const double> weights) {
    if (vs.empty()) {
        throw Error("weighted_average: empty list");
    }
    if (weights.size() != vs.size()) {
        throw Error(fmt::format("weighted_average: {} weights for {} vectors", weights.size(), vs.size()));
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw Error("weighted_average: weights must be finite and non-negative");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw Error(fmt::format("weighted_average: weights sum to {:.17g}, expected 1", sum));
    }
    ParamVec out(vs.front().layout_ptr());
    for (std::size_t j = 0; j < vs.size(); ++j) {
        require_same_layout(vs.front(), vs[j], "weighted_average");
        axpy(weights[j], vs[j], out);
    }
    out.ensure_finite("weighted_average");
    return out;
}

ParamVec filterwise_normalize(const ParamVec& direction, const ParamVec& reference) {
    require_same_layout(direction, reference, "filterwise_normalize");
    ParamVec out = direction;
    const auto& groups = direction.layout().groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        double dn = 0.0;
        double rn = 0.0;
        for (double v : direction.group(g)) dn += v * v;
        for (double v : reference.group(g)) rn += v * v;
        dn = std::sqrt(dn);
        rn = std::sqrt(rn);
        if (dn == 0.0) {
            throw Error(fmt::format("filterwise_normalize: direction group '{}' has zero norm", groups[g].name));
        }
        if (rn == 0.0) {
            throw Error(fmt::format("filterwise_normalize: reference group '{}' has zero norm", groups[g].name));
        }
        const double factor = rn / dn;
        for (double& v : out.group(g)) v *= factor;
    }
    out.ensure_finite("filterwise_normalize");
    return out;
}

RunningAverage running_average_update(const ParamVec& mean, std::size_t count, const ParamVec& next) {
    require_same_layout(mean, next, "running_average_update");
    ParamVec out(mean.layout_ptr());
    const double n = static_cast<double>(count);
    const double denom = n + 1.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        out[i] = (mean[i] * n + next[i]) / denom;
    }
    out.ensure_finite("running_average_update");
    return {std::move(out), count + 1};
}

void axpy(double a, const ParamVec& x, ParamVec& y) {
    require_same_layout(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += a * x[i];
    }
}

void scale(ParamVec& x, double a) {
    for (double& v : x.values()) v *= a;
}

ParamVec scaled(const ParamVec& x, double a) {
    ParamVec out = x;
    scale(out, a);
    return out;
}

ParamVec add(const ParamVec& a, const ParamVec& b) {
    require_same_layout(a, b, "add");
    ParamVec out = a;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] += b[i];
    return out;
}

ParamVec subtract(const ParamVec& a, const ParamVec& b) {
    require_same_layout(a, b, "subtract");
    ParamVec out = a;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
    return out;
}

double dot(const ParamVec& a, const ParamVec& b) {
    require_same_layout(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const ParamVec& x) {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    return std::sqrt(s);
}

std::vector<double> group_norms(const ParamVec& x) {
    std::vector<double> norms;
    norms.reserve(x.layout().group_count());
    for (std::size_t g = 0; g < x.layout().group_count(); ++g) {
        double s = 0.0;
        for (double v : x.group(g)) s += v * v;
        norms.push_back(std::sqrt(s));
    }
    return norms;
}

ParamVec sample_uniform_direction(Rng& rng, const LayoutPtr& layout) {
    ParamVec out(layout);
    for (double& v : out.values()) v = rng.uniform(-1.0, 1.0);
    return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'L', 'T', 'W'};

template <typename T>
void put_le(std::ostream& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    }
    out.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
        throw Error(fmt::format("checkpoint: truncated while reading {}", what));
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(static_cast<T>(buf[i]) << (8 * i));
    }
    return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamVec& params) {
    out.write(kMagic, sizeof(kMagic));
    put_le<std::uint16_t>(out, kCheckpointVersion);
    const auto& groups = params.layout().groups();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(groups.size()));
    for (const auto& g : groups) {
        if (g.name.size() > 0xFFFF) {
            throw Error("checkpoint: group name longer than 65535 bytes");
        }
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(g.name.size()));
        out.write(g.name.data(), static_cast<std::streamsize>(g.name.size()));
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(g.length));
    }
    for (double v : params.values()) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) {
        throw Error("checkpoint: write failed");
    }
}

ParamVec read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
        throw Error("checkpoint: bad magic (expected FLTW)");
    }
    const auto version = get_le<std::uint16_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw Error(fmt::format("checkpoint: unsupported version {}", version));
    }
    const auto count = get_le<std::uint32_t>(in, "group count");
    std::vector<GroupLayout::Group> groups;
    groups.reserve(count);
    for (std::uint32_t g = 0; g < count; ++g) {
        const auto name_len = get_le<std::uint16_t>(in, "name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw Error("checkpoint: truncated group name");
        }
        const auto length = get_le<std::uint64_t>(in, "group length");
        groups.push_back({std::move(name), static_cast<std::size_t>(length)});
    }
    auto layout = std::make_shared<const GroupLayout>(std::move(groups));
    std::vector<double> data(layout->total_len());
    for (double& v : data) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(in, "data"));
    }
    return ParamVec(std::move(layout), std::move(data));
}

void save_checkpoint(const std::string& path, const ParamVec& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(fmt::format("checkpoint: cannot open '{}' for writing", path));
    }
    write_checkpoint(out, params);
}

ParamVec load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(fmt::format("checkpoint: cannot open '{}'", path));
    }
    return read_checkpoint(in);
}

}  // namespace flatlab
