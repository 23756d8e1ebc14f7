#include <catch2/catch_amalgamated.hpp>

#include "sep/paths.hpp"
#include "sep/rng.hpp"

#include <cmath>
#include <sstream>
#include <vector>

using namespace sep;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments moments(const std::vector<double>& x) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(x.size() - 1);
    return m;
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors", "[paths][rng]") {
    using C = Philox4x32::Counter;
    CHECK(Philox4x32::apply(C{0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(Philox4x32::apply(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(Philox4x32::apply(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are pure functions of seed, id and index", "[paths][rng]") {
    RngStream a(5, 17), b(5, 17), c(5, 18), d(6, 17);
    for (int k = 0; k < 50; ++k) {
        const double ua = a.uniform();
        CHECK(ua == b.uniform());
        CHECK(ua != c.uniform());
        CHECK(ua != d.uniform());
        CHECK(ua > 0.0);
        CHECK(ua < 1.0);
    }
    RngStream e(5, 17, 20);
    CHECK(e.uniform() == RngStream(5, 17).uniform_at(20));
    CHECK(e.position() == 21);
}

TEST_CASE("uniform and normal moments", "[paths][rng]") {
    RngStream rs(99, 0);
    std::vector<double> u(200000), z(200000);
    for (auto& v : u) v = rs.uniform();
    for (auto& v : z) v = rs.normal();
    const auto mu = moments(u);
    const auto mz = moments(z);
    CHECK(std::fabs(mu.mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / 2e5));
    CHECK(std::fabs(mu.var - 1.0 / 12.0) < 0.01 / 12.0);
    CHECK(std::fabs(mz.mean) < 4.0 / std::sqrt(2e5));
    CHECK(std::fabs(mz.var - 1.0) < 0.02);
}

TEST_CASE("origin is anchored and queries are idempotent", "[paths]") {
    PathStore s(RngStream(1, 2));
    CHECK(s.sample_at(0.0) == 0.0);
    const double x = s.sample_at(0.37);
    CHECK(s.sample_at(0.37) == x);
    CHECK(s.size() == 2);
    CHECK(s.horizon() == 0.37);
    CHECK_THROWS_AS(s.sample_at(-0.1), Error);
    CHECK_THROWS_AS(s.sample_at(std::nan("")), Error);
}

TEST_CASE("increment contract", "[paths]") {
    PathStore s(RngStream(3, 4));
    CHECK(s.increment(0.3, 0.3) == 0.0);
    auto two = PathStore::from_points({{0.0, 0.0}, {1.0, 0.8}}, RngStream(3, 5));
    CHECK(two.increment(0.0, two.horizon()) == 0.8);
    try {
        (void)s.increment(0.5, 0.4);
        FAIL("expected domain error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::domain);
    }
}

TEST_CASE("increment law over fresh stores", "[paths][statistical]") {
    const int n = 100000;
    std::vector<double> inc(n);
    for (int p = 0; p < n; ++p) {
        PathStore s(RngStream(2718, static_cast<std::uint64_t>(p)));
        inc[static_cast<std::size_t>(p)] = s.increment(0.0, 0.25);
    }
    const auto m = moments(inc);
    CHECK(std::fabs(m.mean) <= 4.0 / std::sqrt(double(n)) * 0.5);
    CHECK(std::fabs(m.var - 0.25) <= 0.05 * 0.25);
}

TEST_CASE("bridge moments with pinned endpoints", "[paths][statistical]") {
    const int n = 100000;
    for (double b : {1.0, -0.6}) {
        std::vector<double> mid(n);
        for (int p = 0; p < n; ++p) {
            auto s = PathStore::from_points({{0.0, 0.0}, {1.0, b}}, RngStream(31, static_cast<std::uint64_t>(p)));
            mid[static_cast<std::size_t>(p)] = s.sample_at(0.25);
        }
        const auto m = moments(mid);
        CHECK(std::fabs(m.mean - 0.25 * b) <= 4.0 * std::sqrt(0.1875 / n));
        CHECK(std::fabs(m.var - 0.1875) <= 0.05 * 0.1875);
    }
    // Midpoint of (0,0)-(1,1): N(0.5, 0.25).
    std::vector<double> half(n);
    for (int p = 0; p < n; ++p) {
        auto s = PathStore::from_points({{0.0, 0.0}, {1.0, 1.0}}, RngStream(32, static_cast<std::uint64_t>(p)));
        half[static_cast<std::size_t>(p)] = s.sample_at(0.5);
    }
    const auto m = moments(half);
    CHECK(std::fabs(m.mean - 0.5) <= 4.0 * std::sqrt(0.25 / n));
    CHECK(std::fabs(m.var - 0.25) <= 0.05 * 0.25);
}

TEST_CASE("refinement never moves stored points", "[paths][property]") {
    PathStore s(RngStream(8, 8));
    const double ta = 0.2, tb = 0.9;
    const double va = s.sample_at(ta);
    const double vb = s.sample_at(tb);
    RngStream q(8, 9);
    for (int k = 0; k < 100; ++k) (void)s.sample_at(ta + (tb - ta) * q.uniform());
    for (int k = 0; k < 20; ++k) (void)s.sample_at(1.5 * q.uniform());
    CHECK(s.sample_at(ta) == va);
    CHECK(s.sample_at(tb) == vb);
    const auto pts = s.points();
    for (std::size_t k = 1; k < pts.size(); ++k) CHECK(pts[k].t > pts[k - 1].t);
    CHECK(pts.front().t == 0.0);
    CHECK(pts.front().b == 0.0);
}

TEST_CASE("equal seeds and query sequences give identical stores", "[paths][property]") {
    auto run = [] {
        PathStore s(RngStream(77, 12));
        RngStream q(1, 1);
        for (int k = 0; k < 300; ++k) (void)s.sample_at(2.0 * q.uniform());
        return s;
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a.points()[k].t == b.points()[k].t);
        CHECK(a.points()[k].b == b.points()[k].b);
    }
}

TEST_CASE("binary dump round trip", "[paths][io]") {
    std::vector<PathStore> stores;
    for (std::uint64_t p = 0; p < 5; ++p) {
        PathStore s(RngStream(42, p));
        for (double t : {0.3, 0.1, 0.7, 0.05}) (void)s.sample_at(t * static_cast<double>(p + 1));
        stores.push_back(s);
    }
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_stores(buf, stores);
    auto back = read_stores(buf);
    REQUIRE(back.size() == stores.size());
    for (std::size_t p = 0; p < stores.size(); ++p) {
        REQUIRE(back[p].size() == stores[p].size());
        for (std::size_t k = 0; k < back[p].size(); ++k) {
            CHECK(back[p].points()[k].t == stores[p].points()[k].t);
            CHECK(back[p].points()[k].b == stores[p].points()[k].b);
        }
        CHECK(back[p].stream().position() == stores[p].stream().position());
        // The restored stream continues exactly where the original left off.
        CHECK(back[p].sample_at(9.0) == stores[p].sample_at(9.0));
    }

    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 8) == "SEPBRWN1");
    std::stringstream bad(bytes.substr(0, bytes.size() - 3), std::ios::in | std::ios::binary);
    CHECK_THROWS_AS(read_stores(bad), Error);
    std::stringstream junk("not a dump at all");
    CHECK_THROWS_AS(read_stores(junk), Error);
}
