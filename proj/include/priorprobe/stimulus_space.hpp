#pragma once

#include "priorprobe/core.hpp"

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace priorprobe {

/// A point in a stimulus space. The nuisance seed only affects rendering
/// (the identity-like features of a stimulus) and is never read by any
/// probability computation.
struct Stimulus {
    std::variant<std::size_t, std::vector<double>> value;
    std::uint64_t nuisance_seed = 0;

    static Stimulus discrete(std::size_t id, std::uint64_t seed = 0) { return {id, seed}; }
    static Stimulus vector(std::vector<double> coords, std::uint64_t seed = 0) { return {std::move(coords), seed}; }

    bool is_discrete() const noexcept { return std::holds_alternative<std::size_t>(value); }
    std::size_t id() const { return std::get<std::size_t>(value); }
    const std::vector<double>& coords() const { return std::get<std::vector<double>>(value); }

    Stimulus with_seed(std::uint64_t seed) const {
        Stimulus s = *this;
        s.nuisance_seed = seed;
        return s;
    }

    friend bool operator==(const Stimulus&, const Stimulus&) = default;
};

/// Equal coordinates (or ids), ignoring the nuisance seed.
inline bool same_point(const Stimulus& a, const Stimulus& b) { return a.value == b.value; }

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct DiscreteSpace {
    /// Display coordinates of each stimulus in the rendering frame.
    std::vector<std::vector<double>> points;
};

struct ContinuousSpace {
    std::vector<Interval> bounds;
};

/// Default frame used to map coordinates onto drawing attributes.
inline constexpr Interval kDisplayFrame{-3.0, 3.0};

class StimulusSpace {
public:
    StimulusSpace() : StimulusSpace(ContinuousSpace{{kDisplayFrame, kDisplayFrame}}) {}

    explicit StimulusSpace(DiscreteSpace d) : kind_(std::move(d)) {
        const auto& pts = std::get<DiscreteSpace>(kind_).points;
        if (pts.size() < 2)
            throw Error(ErrorCode::InvalidConfig, "a discrete space needs at least 2 stimuli");
    }

    explicit StimulusSpace(ContinuousSpace c) : kind_(std::move(c)) {
        const auto& b = std::get<ContinuousSpace>(kind_).bounds;
        if (b.empty())
            throw Error(ErrorCode::InvalidConfig, "a continuous space needs dim >= 1");
        for (const auto& iv : b)
            if (!(iv.lo < iv.hi))
                throw Error(ErrorCode::InvalidConfig, "continuous bounds need lo < hi");
    }

    /// 2-d box [-3, 3]^2.
    static StimulusSpace default_continuous() { return StimulusSpace(); }

    static StimulusSpace continuous(std::size_t dim, Interval bounds) {
        return StimulusSpace(ContinuousSpace{std::vector<Interval>(dim, bounds)});
    }

    /// `count` stimuli spread on a circle of radius 2 in the display frame.
    static StimulusSpace default_discrete(std::size_t count = 8) {
        DiscreteSpace d;
        for (std::size_t i = 0; i < count; ++i) {
            const double a = 2.0 * M_PI * double(i) / double(count);
            d.points.push_back({2.0 * std::cos(a), 2.0 * std::sin(a)});
        }
        return StimulusSpace(std::move(d));
    }

    bool is_discrete() const noexcept { return std::holds_alternative<DiscreteSpace>(kind_); }

    std::size_t count() const {
        if (!is_discrete()) throw Error(ErrorCode::NotDiscrete, "continuous space has no stimulus count");
        return std::get<DiscreteSpace>(kind_).points.size();
    }

    std::size_t dim() const {
        if (is_discrete()) return std::get<DiscreteSpace>(kind_).points.front().size();
        return std::get<ContinuousSpace>(kind_).bounds.size();
    }

    const std::vector<Interval>& bounds() const {
        if (is_discrete()) throw Error(ErrorCode::NotDiscrete, "discrete space has no bounds");
        return std::get<ContinuousSpace>(kind_).bounds;
    }

    const DiscreteSpace& discrete() const { return std::get<DiscreteSpace>(kind_); }

    bool contains(const Stimulus& f) const {
        if (is_discrete()) return f.is_discrete() && f.id() < count();
        if (f.is_discrete()) return false;
        const auto& b = bounds();
        const auto& x = f.coords();
        if (x.size() != b.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!(x[i] >= b[i].lo && x[i] <= b[i].hi)) return false;
        return true;
    }

    void check(const Stimulus& f) const {
        if (!contains(f)) throw Error(ErrorCode::OutOfBounds, "stimulus outside the space");
    }

    std::vector<Stimulus> enumerate() const {
        const std::size_t n = count();
        std::vector<Stimulus> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(Stimulus::discrete(i));
        return out;
    }

    /// Uniform draw over the space.
    Stimulus sample_uniform(RngStream& rng) const {
        if (is_discrete()) return Stimulus::discrete(std::size_t(rng.below(count())));
        std::vector<double> x;
        x.reserve(dim());
        for (const auto& iv : bounds()) x.push_back(rng.uniform(iv.lo, iv.hi));
        return Stimulus::vector(std::move(x));
    }

    /// Coordinates used for drawing.
    std::vector<double> display_coords(const Stimulus& f) const {
        check(f);
        if (is_discrete()) return discrete().points[f.id()];
        return f.coords();
    }

    std::vector<Interval> display_bounds() const {
        if (is_discrete()) return std::vector<Interval>(dim(), kDisplayFrame);
        return bounds();
    }

private:
    std::variant<DiscreteSpace, ContinuousSpace> kind_;
};

/// Declarative drawing recipe; serialized as a standalone SVG document.
struct RenderSpec {
    struct Rect {
        int width = 0;
        int height = 0;
        std::string fill;
        friend bool operator==(const Rect&, const Rect&) = default;
    };
    struct Ellipse {
        double cx = 0, cy = 0, rx = 0, ry = 0;
        std::string fill;
        friend bool operator==(const Ellipse&, const Ellipse&) = default;
    };
    struct Circle {
        double cx = 0, cy = 0, r = 0;
        std::string fill;
        friend bool operator==(const Circle&, const Circle&) = default;
    };

    Rect background;
    Ellipse primary;
    std::vector<Circle> decorations;

    friend bool operator==(const RenderSpec&, const RenderSpec&) = default;

    std::string to_svg() const {
        std::string out;
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">",
                      background.width, background.height, background.width, background.height);
        out += buf;
        std::snprintf(buf, sizeof buf, "<rect x=\"0\" y=\"0\" width=\"%d\" height=\"%d\" fill=\"%s\"/>",
                      background.width, background.height, background.fill.c_str());
        out += buf;
        std::snprintf(buf, sizeof buf,
                      "<ellipse cx=\"%.3f\" cy=\"%.3f\" rx=\"%.3f\" ry=\"%.3f\" fill=\"%s\"/>",
                      primary.cx, primary.cy, primary.rx, primary.ry, primary.fill.c_str());
        out += buf;
        for (const auto& c : decorations) {
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" fill=\"%s\"/>", c.cx, c.cy,
                          c.r, c.fill.c_str());
            out += buf;
        }
        out += "</svg>";
        return out;
    }
};

namespace detail {

inline std::string hex_color(int r, int g, int b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r & 0xff, g & 0xff, b & 0xff);
    return buf;
}

// h in degrees, s and l in [0, 1].
inline std::string hsl_color(double h, double s, double l) {
    const double c = (1.0 - std::abs(2.0 * l - 1.0)) * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = l - c / 2.0;
    auto to8 = [m](double v) { return int(std::lround((v + m) * 255.0)); };
    return hex_color(to8(r), to8(g), to8(b));
}

inline double unit_position(double x, Interval iv) { return std::clamp((x - iv.lo) / (iv.hi - iv.lo), 0.0, 1.0); }

} // namespace detail

/// Colored blob: hue follows the first coordinate, elongation the second.
/// The nuisance seed picks the background tint and a few decorations in the
/// corners, which carry no category information.
inline RenderSpec render(const StimulusSpace& space, const Stimulus& f) {
    const std::vector<double> x = space.display_coords(f);
    const std::vector<Interval> frame = space.display_bounds();

    RenderSpec spec;
    spec.background.width = 200;
    spec.background.height = 200;

    const double u0 = detail::unit_position(x[0], frame[0]);
    const double u1 = x.size() > 1 ? detail::unit_position(x[1], frame[1]) : 0.5;
    const double elong = 2.0 * u1 - 1.0;
    spec.primary.cx = 100.0;
    spec.primary.cy = 100.0;
    spec.primary.rx = 55.0 * (1.0 + 0.5 * elong);
    spec.primary.ry = 55.0 * (1.0 - 0.5 * elong);
    // Any further dimensions shift lightness.
    double extra = 0.0;
    for (std::size_t i = 2; i < x.size(); ++i) extra += detail::unit_position(x[i], frame[i]) - 0.5;
    if (x.size() > 2) extra /= double(x.size() - 2);
    spec.primary.fill = detail::hsl_color(300.0 * u0, 0.75, 0.5 + 0.3 * extra);

    RngStream nuisance(f.nuisance_seed);
    const int shade = 225 + int(nuisance.below(26));
    spec.background.fill = detail::hex_color(shade, shade, shade - int(nuisance.below(12)));
    const std::size_t n_dec = 2 + std::size_t(nuisance.below(4));
    for (std::size_t i = 0; i < n_dec; ++i) {
        RenderSpec::Circle c;
        // Corners only, outside the primary shape's reach.
        const bool right = nuisance.coin();
        const bool bottom = nuisance.coin();
        c.cx = (right ? 175.0 : 5.0) + 20.0 * nuisance.uniform();
        c.cy = (bottom ? 175.0 : 5.0) + 20.0 * nuisance.uniform();
        c.r = 2.0 + 4.0 * nuisance.uniform();
        const int g = 80 + int(nuisance.below(100));
        c.fill = detail::hex_color(g, g, g);
        spec.decorations.push_back(std::move(c));
    }
    return spec;
}

inline std::string render_svg(const StimulusSpace& space, const Stimulus& f) { return render(space, f).to_svg(); }

} // namespace priorprobe
