#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "evreg/events/events.hpp"
#include "evreg/events/formats.hpp"

using namespace evreg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "evreg_test_events";
  fs::create_directories(dir);
  return dir / name;
}

EventStream seeded_stream(std::uint64_t seed, std::size_t n, std::uint32_t W = 16,
                          std::uint32_t H = 12, std::uint64_t tmax = 10000) {
  std::mt19937_64 rng(seed);
  EventStream s{W, H, {}};
  std::vector<std::uint64_t> ts(n);
  for (auto& t : ts) t = rng() % (tmax + 1);
  std::sort(ts.begin(), ts.end());
  for (std::uint64_t t : ts) {
    s.events.push_back({t, static_cast<std::uint16_t>(rng() % W), static_cast<std::uint16_t>(rng() % H),
                        static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
  }
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_SUITE("parse_events") {
  TEST_CASE("empty EVT1 body") {
    const fs::path p = scratch("empty.evt");
    write_evt1(EventStream{4, 4, {}}, p);
    const EventStream s = parse_events(p);
    CHECK(s.width == 4);
    CHECK(s.height == 4);
    CHECK(s.events.empty());
  }

  TEST_CASE("csv field mapping") {
    const fs::path p = scratch("one.csv");
    write_text(p, "t_us,x,y,p\n10,1,2,1\n");
    const EventStream s = parse_events(p);
    REQUIRE(s.events.size() == 1);
    CHECK(s.events[0] == Event{10, 1, 2, 1});
  }

  TEST_CASE("binary and csv encodings agree and roundtrip") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const EventStream s = seeded_stream(seed, 500);
      write_evt1(s, scratch("rt.evt"));
      write_events_csv(s, scratch("rt.csv"));
      const EventStream a = parse_events(scratch("rt.evt"));
      const EventStream b = parse_events(scratch("rt.csv"));
      CHECK(a == s);
      CHECK(b == s);
    }
  }

  TEST_CASE("errors name their location") {
    write_text(scratch("bad_magic.bin"), "XYZW\x01\x02");
    CHECK_THROWS_WITH_AS(parse_events(scratch("bad_magic.bin")), doctest::Contains("byte offset 0"), Error);

    write_text(scratch("dec.csv"), "# width=4 height=4\nt_us,x,y,p\n10,1,1,1\n5,1,1,1\n");
    CHECK_THROWS_WITH_AS(parse_events(scratch("dec.csv")), doctest::Contains("decreases"), Error);

    write_text(scratch("oob.csv"), "# width=4 height=4\nt_us,x,y,p\n10,4,1,1\n");
    CHECK_THROWS_WITH_AS(parse_events(scratch("oob.csv")), doctest::Contains("outside"), Error);

    write_text(scratch("pol.csv"), "t_us,x,y,p\n10,1,1,0\n");
    CHECK_THROWS_WITH_AS(parse_events(scratch("pol.csv")), doctest::Contains("line 2"), Error);

    EventStream s = seeded_stream(1, 3, 4, 4);
    write_evt1(s, scratch("oob.evt"));
    {
      std::fstream f(scratch("oob.evt"), std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(20 + 13 + 8);
      const std::uint16_t x = 9;
      f.write(reinterpret_cast<const char*>(&x), 2);
    }
    CHECK_THROWS_WITH_AS(parse_events(scratch("oob.evt")), doctest::Contains("byte offset 33"), Error);
  }
}

TEST_SUITE("window_events") {
  TEST_CASE("single window restricts to the range") {
    const EventStream s = seeded_stream(2, 200);
    const auto w = window_events(s, 1000, 5000, 1);
    REQUIRE(w.size() == 1);
    CHECK(w[0].events.events == slice_events(s, 1000, 5000).events);
  }

  TEST_CASE("even split") {
    EventStream s{4, 4, {}};
    for (std::uint64_t t = 0; t < 4; ++t) s.events.push_back({t, 0, 0, 1});
    const auto w = window_events(s, 0, 4, 2);
    REQUIRE(w.size() == 2);
    REQUIRE(w[0].events.events.size() == 2);
    CHECK(w[0].events.events[1].t == 1);
    REQUIRE(w[1].events.events.size() == 2);
    CHECK(w[1].events.events[0].t == 2);
  }

  TEST_CASE("partition preserves every event exactly once") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const EventStream s = seeded_stream(seed, 1000);
      for (long N : {1L, 3L, 7L, 15L}) {
        const auto w = window_events(s, 123, 9876, N);
        std::vector<Event> joined;
        for (std::size_t i = 0; i < w.size(); ++i) {
          for (const Event& e : w[i].events.events) {
            CHECK(e.t >= w[i].t_start);
            CHECK((e.t < w[i].t_end || (i + 1 == w.size() && e.t == w[i].t_end)));
          }
          joined.insert(joined.end(), w[i].events.events.begin(), w[i].events.events.end());
          if (i > 0) CHECK(w[i].t_start == w[i - 1].t_end);
        }
        CHECK(joined == slice_events(s, 123, 9876).events);
      }
    }
  }

  TEST_CASE("last window is closed on the right") {
    EventStream s{2, 2, {{10, 0, 0, 1}}};
    const auto w = window_events(s, 0, 10, 3);
    CHECK(w[2].events.events.size() == 1);
  }

  TEST_CASE("non-positive N") {
    CHECK_THROWS_AS(window_events(EventStream{2, 2, {}}, 0, 10, 0), Error);
  }
}

TEST_SUITE("event frames") {
  TEST_CASE("lone event") {
    EventStream s{5, 4, {{3, 2, 1, 1}}};
    const EventTensorStack st = build_event_frames(window_events(s, 0, 10, 1), 1);
    CHECK(st.data.shape() == Shape{1, 4, 5, 1});
    CHECK(st.data(0, 1, 2, 0) == 1.0);
    CHECK(sum(st.data) == 1.0);
  }

  TEST_CASE("opposite polarities cancel") {
    EventStream s{2, 2, {{1, 1, 1, 1}, {2, 1, 1, -1}}};
    const EventTensorStack st = build_event_frames(window_events(s, 0, 10, 1), 1);
    CHECK(st.data(0, 1, 1, 0) == 0.0);
  }

  TEST_CASE("absolute mass bounded by count, equal without mixing") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const EventStream s = seeded_stream(seed, 800, 8, 8);
      const EventTensorStack st = make_event_stack(s, 0, 10000, 5, 2);
      double mass = 0.0;
      for (double v : st.data.values()) mass += std::abs(v);
      CHECK(mass <= 800.0);

      // Same stream with every polarity positive cannot mix.
      EventStream pos = s;
      for (Event& e : pos.events) e.p = 1;
      const EventTensorStack st_pos = make_event_stack(pos, 0, 10000, 5, 2);
      double mass_pos = 0.0;
      for (double v : st_pos.data.values()) mass_pos += std::abs(v);
      CHECK(mass_pos == 800.0);
    }
  }

  TEST_CASE("time reversal flips order and polarity") {
    const EventStream s = seeded_stream(4, 300, 6, 6);
    const EventTensorStack st = make_event_stack(s, 0, 10000, 4, 1);
    const EventTensorStack r = reverse_frames(st);
    for (std::size_t n = 0; n < 4; ++n) {
      CHECK(r.windows[n] == st.windows[3 - n]);
      for (std::size_t i = 0; i < 36; ++i) CHECK(r.data[n * 36 + i] == -st.data[(3 - n) * 36 + i]);
    }
  }
}

TEST_SUITE("voxel grid") {
  TEST_CASE("kernel peak and symmetry") {
    EventStream a{3, 3, {{100, 1, 1, 1}}};
    NdArray g = build_voxel_grid(a, 100, 200, 4);
    CHECK(g(1, 1, 0) == 1.0);
    CHECK(sum(g) == 1.0);
    EventStream b{3, 3, {{150, 2, 0, 1}}};
    g = build_voxel_grid(b, 100, 200, 3);
    CHECK(g(0, 2, 1) == 1.0);
    CHECK(sum(g) == 1.0);
  }

  TEST_CASE("half-bin event splits its mass") {
    EventStream s{2, 2, {{50, 0, 0, -1}}};
    const NdArray g = build_voxel_grid(s, 0, 200, 3);  // t* = 0.5
    CHECK(g(0, 0, 0) == doctest::Approx(-0.5));
    CHECK(g(0, 0, 1) == doctest::Approx(-0.5));
  }

  TEST_CASE("mass conservation per event") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const EventStream s = seeded_stream(seed, 1, 4, 4);
      for (std::size_t B : {2ul, 5ul, 9ul}) {
        const NdArray g = build_voxel_grid(s, 0, 10000, B);
        double m = 0.0;
        for (double v : g.values()) m += std::abs(v);
        CHECK(std::abs(m - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("optional max-abs normalization") {
    EventStream s{2, 1, {{0, 0, 0, 1}, {0, 0, 0, 1}, {0, 1, 0, -1}}};
    const NdArray g = build_voxel_grid(s, 0, 10, 2, true);
    CHECK(g(0, 0, 0) == 1.0);
    CHECK(g(0, 1, 0) == -0.5);
  }
}

TEST_SUITE("tensor files") {
  TEST_CASE("FLT1 roundtrip of float-representable values") {
    std::mt19937_64 rng(3);
    NdArray x({5, 4, 3});
    for (double& v : x.values()) v = static_cast<float>(std::normal_distribution<double>()(rng));
    write_flt1(scratch("x.flt"), x);
    CHECK(max_abs_diff(read_flt1(scratch("x.flt")), x) == 0.0);
  }

  TEST_CASE("PGM roundtrip") {
    NdArray x({3, 4});
    for (std::size_t i = 0; i < 12; ++i) x[i] = static_cast<double>(i * 20);
    write_pgm(scratch("x.pgm"), x);
    CHECK(max_abs_diff(read_pgm(scratch("x.pgm")), x) == 0.0);
  }

  TEST_CASE("bad magic") {
    write_text(scratch("bad.flt"), "FLT2abcdefghijkl");
    CHECK_THROWS_AS(read_flt1(scratch("bad.flt")), Error);
  }
}
