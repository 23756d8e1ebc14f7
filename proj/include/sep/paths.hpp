#pragma once

#include "sep/error.hpp"
#include "sep/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace sep {

/// A Brownian trajectory B revealed lazily: values beyond the horizon are
/// extended by independent increments, interior values are drawn from the
/// Brownian bridge between the neighbouring stored points. Every revealed
/// point is kept, so later queries are conditioned on all earlier ones.
class PathStore {
public:
    struct Point {
        double t;
        double b;
    };

    PathStore() : PathStore(RngStream{}) {}
    explicit PathStore(RngStream stream) : stream_(stream), points_{{0.0, 0.0}} {}

    /// Rebuilds a store from known points, e.g. a dump or a reconstructed path.
    static PathStore from_points(std::vector<Point> points, RngStream stream) {
        if (points.empty() || points.front().t != 0.0 || points.front().b != 0.0) {
            throw Error(ErrorCode::domain, "path store must start at (0, 0)");
        }
        for (std::size_t k = 1; k < points.size(); ++k) {
            if (!(points[k].t > points[k - 1].t) || !std::isfinite(points[k].b)) {
                throw Error(ErrorCode::domain, "path store times must increase strictly");
            }
        }
        PathStore s(stream);
        s.points_ = std::move(points);
        return s;
    }

    /// B(t), drawing and storing it when t is new.
    double sample_at(double t) {
        if (!std::isfinite(t) || t < 0.0) {
            throw Error(ErrorCode::domain, "Brownian path queried at t = " + std::to_string(t));
        }
        const auto it = std::lower_bound(points_.begin(), points_.end(), t,
                                         [](const Point& p, double x) { return p.t < x; });
        if (it != points_.end() && it->t == t) return it->b;

        if (it == points_.end()) {
            const Point& last = points_.back();
            const double b = last.b + std::sqrt(t - last.t) * stream_.normal();
            points_.push_back({t, b});
            return b;
        }

        // Bridge between left = it[-1] and right = *it.
        const Point left = *(it - 1);
        const Point right = *it;
        const double span = right.t - left.t;
        const double w_right = (t - left.t) / span;
        const double mean = left.b * (1.0 - w_right) + right.b * w_right;
        const double var = (right.t - t) * (t - left.t) / span;
        const double b = mean + std::sqrt(var) * stream_.normal();
        points_.insert(it, Point{t, b});
        return b;
    }

    /// B(t2) - B(t1) for 0 <= t1 <= t2.
    double increment(double t1, double t2) {
        if (!(t2 >= t1)) {
            throw Error(ErrorCode::domain, "increment needs t1 <= t2, got t1 = " +
                                               std::to_string(t1) + ", t2 = " + std::to_string(t2));
        }
        const double b1 = sample_at(t1);
        if (t1 == t2) return 0.0;
        return sample_at(t2) - b1;
    }

    [[nodiscard]] double horizon() const noexcept { return points_.back().t; }
    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
    [[nodiscard]] std::span<const Point> points() const noexcept { return points_; }
    [[nodiscard]] const RngStream& stream() const noexcept { return stream_; }

private:
    RngStream stream_;
    std::vector<Point> points_;
};

// ---------------------------------------------------------------------------
// Binary dump: little-endian u64 / f64 fields.
//   store record: seed, stream_id, draw position, n_points, n_points x (t, b)
//   file:         "SEPBRWN1", n_stores, store records
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) noexcept {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
        return r;
    }
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    const std::uint64_t le = to_little(v);
    os.write(reinterpret_cast<const char*>(&le), sizeof le);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t le = 0;
    if (!is.read(reinterpret_cast<char*>(&le), sizeof le)) {
        throw Error(ErrorCode::io, "truncated path store dump");
    }
    return to_little(le);
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline constexpr char kDumpMagic[8] = {'S', 'E', 'P', 'B', 'R', 'W', 'N', '1'};

}  // namespace detail

inline void write_store(std::ostream& os, const PathStore& store) {
    detail::write_u64(os, store.stream().seed());
    detail::write_u64(os, store.stream().stream_id());
    detail::write_u64(os, store.stream().position());
    detail::write_u64(os, store.size());
    for (const auto& p : store.points()) {
        detail::write_f64(os, p.t);
        detail::write_f64(os, p.b);
    }
}

inline PathStore read_store(std::istream& is) {
    const std::uint64_t seed = detail::read_u64(is);
    const std::uint64_t stream_id = detail::read_u64(is);
    const std::uint64_t position = detail::read_u64(is);
    const std::uint64_t n = detail::read_u64(is);
    if (n == 0 || n > (std::uint64_t{1} << 32)) {
        throw Error(ErrorCode::io, "implausible point count in path store dump");
    }
    std::vector<PathStore::Point> pts(n);
    for (auto& p : pts) {
        p.t = detail::read_f64(is);
        p.b = detail::read_f64(is);
    }
    try {
        return PathStore::from_points(std::move(pts), RngStream(seed, stream_id, position));
    } catch (const Error& e) {
        throw Error(ErrorCode::io, std::string("corrupt path store dump: ") + e.what());
    }
}

inline void write_stores(std::ostream& os, std::span<const PathStore> stores) {
    os.write(detail::kDumpMagic, sizeof detail::kDumpMagic);
    detail::write_u64(os, stores.size());
    for (const auto& s : stores) write_store(os, s);
    if (!os) throw Error(ErrorCode::io, "failed writing path store dump");
}

inline std::vector<PathStore> read_stores(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof magic) ||
        std::memcmp(magic, detail::kDumpMagic, sizeof magic) != 0) {
        throw Error(ErrorCode::io, "not a path store dump");
    }
    const std::uint64_t n = detail::read_u64(is);
    std::vector<PathStore> out;
    out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
    for (std::uint64_t k = 0; k < n; ++k) out.push_back(read_store(is));
    return out;
}

}  // namespace sep
