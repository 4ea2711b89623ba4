// Acceptance suite. Runs criteria 1-8 and prints one verdict line each:
//
//   criterion <n> PASS|FAIL <title>: <summary>
//
// Measurements that support a verdict are printed above it, indented.
// Usage: pcvault_acceptance [criterion numbers...]   (default: all)

#include <httplib.h>
#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <list>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcvault/abe.hpp"
#include "pcvault/codec.hpp"
#include "pcvault/delivery.hpp"
#include "pcvault/geometry.hpp"
#include "pcvault/harness.hpp"
#include "pcvault/manifest.hpp"
#include "pcvault/player.hpp"
#include "pcvault/policy.hpp"
#include "pcvault/scene.hpp"

using namespace pcvault;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------- plumbing

struct Verdict {
  bool pass = true;
  std::string summary;
};

class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  Verdict verdict(const std::string& summary) const {
    if (pass_) return {true, summary};
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    return {false, s};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> failures_;
};

void note(const std::string& line) { std::cout << "    " << line << '\n'; }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

class Workspace {
 public:
  Workspace() {
    std::random_device rd;
    root_ = fs::temp_directory_path() / ("pcvault-acceptance-" + std::to_string(rd()));
    fs::create_directories(root_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  const fs::path& root() const { return root_; }

  // Shared 5 s @ 24 fps dataset of 10k-point frames with an "X" variant.
  const fs::path& stream_dataset() {
    if (dataset_.empty()) {
      harness::DatasetOptions o;
      o.points_per_frame = 10000;
      o.frame_count = 120;
      o.frame_rate = 24;
      o.out_dir = root_ / "dataset";
      o.seed = 5;
      o.levels = {"X"};
      o.policy = "subscriber";
      harness::gen_dataset(o);
      dataset_ = o.out_dir;
    }
    return dataset_;
  }

 private:
  fs::path root_;
  fs::path dataset_;
};

harness::ExperimentReport experiment(Workspace& ws, const std::string& name, const std::string& scenario) {
  const fs::path dir = ws.root() / "experiments" / name;
  fs::create_directories(dir);
  harness::ExperimentOptions o;
  o.executable = PCVAULT_CLI_PATH;
  o.out_dir = dir / "out";
  return harness::run_experiment(harness::parse_scenario(scenario + "dataset=" + ws.stream_dataset().string() + "\n"),
                                 o);
}

double summary_value(const harness::ExperimentReport& r, std::string_view metric, std::string_view scope) {
  for (const auto& row : r.summary) {
    if (row.metric == metric && row.scope == scope) return row.value;
  }
  throw std::runtime_error("summary has no " + std::string(metric) + "/" + std::string(scope));
}

// ---------------------------------------------------------------- 1

ply::PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, bool normals, bool colors) {
  std::uniform_real_distribution<double> coord(-1e3, 1e3);
  std::vector<ply::Vertex> vs(n);
  for (auto& v : vs) {
    for (int a = 0; a < 3; ++a) {
      v.position[a] = rng() % 97 == 0 ? -0.0 : coord(rng);
      v.normal[a] = coord(rng) / 1e3;
      v.color[a] = static_cast<std::uint8_t>(rng());
    }
  }
  return ply::PointCloud::from_vertices(ply::VertexSchema::canonical(normals, colors), vs);
}

Verdict criterion_1() {
  Checks c;
  std::mt19937_64 rng(101);
  SeededRandom crypto_rng(102);
  const auto keys = abe::setup(crypto_rng);
  const auto policy = abe::parse_policy("subscriber");
  const auto key = abe::keygen(keys.public_params, keys.master_key, abe::AttributeSet::parse("subscriber"), crypto_rng);
  const std::vector<std::string> patterns{"XYZ", "XY", "X", "2X", "3X", "2XY", "FULL"};

  const auto t0 = Clock::now();
  std::size_t roundtrips = 0, min_n = SIZE_MAX, max_n = 0;
  std::set<std::pair<bool, bool>> layouts;
  for (int i = 0; i < 50; ++i) {
    // Log-uniform size over [1e2, 1e5]; the first two clouds pin the ends.
    std::size_t n = static_cast<std::size_t>(std::llround(std::pow(10.0, 2.0 + 3.0 * (rng() % 10001) / 10000.0)));
    if (i == 0) n = 100;
    if (i == 1) n = 100000;
    const bool normals = i % 4 == 1 || i % 4 == 3;
    const bool colors = i % 4 >= 2;
    layouts.insert({normals, colors});
    min_n = std::min(min_n, n);
    max_n = std::max(max_n, n);
    const Bytes frame = ply::write_ply(random_cloud(rng, n, normals, colors));
    for (const auto& p : patterns) {
      const Bytes enc = codec::encrypt_frame(frame, parse_pattern(p), keys.public_params, policy, crypto_rng);
      const Bytes dec = codec::decrypt_frame(enc, key);
      c.expect(dec == frame, "cloud " + std::to_string(i) + " (" + std::to_string(n) + " vertices) pattern " + p +
                                 " did not roundtrip");
      ++roundtrips;
    }
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  note("clouds=50 vertices=[" + std::to_string(min_n) + ", " + std::to_string(max_n) +
       "] layouts=" + std::to_string(layouts.size()) + " roundtrips=" + std::to_string(roundtrips) +
       " runtime_s=" + fmt(seconds, 2));
  c.expect(layouts.size() == 4, "not every normals/colors layout was exercised");
  c.expect(seconds < 60.0, "runtime " + fmt(seconds, 1) + " s exceeds 60 s");
  return c.verdict(std::to_string(roundtrips) + " roundtrips byte-identical in " + fmt(seconds, 1) + " s");
}

// ---------------------------------------------------------------- 2

Verdict criterion_2() {
  Checks c;
  SeededRandom rng(202);
  const auto keys = abe::setup(rng);
  const auto policy = abe::parse_policy("researcher and (univx or europe)");
  const std::vector<std::string> tags{"researcher", "univx", "europe", "student"};
  const Bytes payload(4096, 0x5a);
  const auto blob = abe::encrypt(keys.public_params, policy, payload, rng);

  auto try_decrypt = [&](const abe::AttributeSet& attrs) {
    const auto key = abe::keygen(keys.public_params, keys.master_key, attrs, rng);
    try {
      return abe::decrypt(key, blob) == payload;
    } catch (const Error& e) {
      if (e.code() != Errc::PolicyNotSatisfied) throw;
      return false;
    }
  };

  int granted = 0;
  for (unsigned mask = 0; mask < 16; ++mask) {
    abe::AttributeSet attrs;
    std::set<std::string> held;
    for (unsigned b = 0; b < 4; ++b) {
      if (mask & (1U << b)) {
        attrs.add_tag(tags[b]);
        held.insert(tags[b]);
      }
    }
    const bool truth = held.count("researcher") && (held.count("univx") || held.count("europe"));
    const bool evaluated = abe::eval_policy(policy, attrs);
    const bool decrypted = try_decrypt(attrs);
    granted += decrypted;
    c.expect(evaluated == truth, "eval_policy disagrees with the oracle on {" + attrs.to_string() + "}");
    c.expect(decrypted == evaluated, "decrypt disagrees with eval_policy on {" + attrs.to_string() + "}");
  }
  const bool alice = try_decrypt(abe::AttributeSet::parse("researcher;univx"));
  const bool bob = try_decrypt(abe::AttributeSet::parse("student;asia"));
  c.expect(alice, "Alice {researcher, univx} cannot decrypt");
  c.expect(!bob, "Bob {student, asia} can decrypt");
  note("subsets=16 granted=" + std::to_string(granted) + " alice=" + (alice ? "granted" : "denied") +
       " bob=" + (bob ? "granted" : "denied"));

  // Numeric compilation against direct comparison.
  using abe::Comparator;
  const std::vector<std::pair<Comparator, std::function<bool(std::uint64_t, std::uint64_t)>>> cmps{
      {Comparator::Less, [](auto a, auto b) { return a < b; }},
      {Comparator::LessEqual, [](auto a, auto b) { return a <= b; }},
      {Comparator::Equal, [](auto a, auto b) { return a == b; }},
      {Comparator::GreaterEqual, [](auto a, auto b) { return a >= b; }},
      {Comparator::Greater, [](auto a, auto b) { return a > b; }}};
  std::size_t cases = 0, mismatches = 0;
  for (unsigned width = 1; width <= 6; ++width) {
    const std::uint64_t limit = 1ULL << width;
    for (const auto& [cmp, direct] : cmps) {
      for (std::uint64_t v = 0; v < limit; ++v) {
        const auto tree = abe::compile_numeric("exp", cmp, v, width);
        for (std::uint64_t held = 0; held < limit; ++held) {
          std::set<std::string> bits;
          for (unsigned b = 0; b < width; ++b) bits.insert(abe::bit_tag("exp", b, (held >> b) & 1U));
          ++cases;
          if (abe::eval_compiled(tree, bits) != direct(held, v)) ++mismatches;
        }
      }
    }
  }
  note("numeric compilation: widths 1..6, 5 comparators, " + std::to_string(cases) + " cases, " +
       std::to_string(mismatches) + " mismatches");
  c.expect(mismatches == 0, std::to_string(mismatches) + " numeric compilation mismatches");
  return c.verdict("16/16 subsets agree, Alice granted, Bob denied, " + std::to_string(cases) +
                   " numeric cases exact");
}

// ---------------------------------------------------------------- 3

struct BruteDistances {
  double chamfer = 0.0;
  double hausdorff = 0.0;
};

BruteDistances brute_force(const std::vector<geometry::Point>& a, const std::vector<geometry::Point>& b) {
  auto one_way = [](const std::vector<geometry::Point>& from, const std::vector<geometry::Point>& to,
                    double& sum, double& max) {
    sum = 0.0;
    max = 0.0;
    for (const auto& p : from) {
      double best = INFINITY;
      for (const auto& q : to) {
        const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      best = std::sqrt(best);
      sum += best;
      max = std::max(max, best);
    }
  };
  double sa, ma, sb, mb;
  one_way(a, b, sa, ma);
  one_way(b, a, sb, mb);
  return {0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size())), std::max(ma, mb)};
}

bool close_rel(double got, double want, double rel) {
  return std::abs(got - want) <= rel * std::max(std::abs(want), 1e-300) || got == want;
}

Verdict criterion_3() {
  Checks c;
  const auto room = scene::generate_room(50000, 3, 0);
  const std::vector<Pattern> patterns{Pattern::parse("XYZ"), Pattern::parse("XY"), Pattern::parse("X"),
                                      Pattern::parse("2X"), Pattern::parse("5X")};
  SeededRandom rng(303);
  const auto rows = geometry::obfuscation_report(room, patterns, rng);
  for (const auto& r : rows) note(r.pattern + ": CD=" + fmt(r.chamfer, 6) + " HD=" + fmt(r.hausdorff, 6));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    c.expect(rows[i].chamfer < rows[i - 1].chamfer, "CD not decreasing at " + rows[i].pattern);
    c.expect(rows[i].hausdorff < rows[i - 1].hausdorff, "HD not decreasing at " + rows[i].pattern);
  }
  const auto& x = rows[2];
  for (std::size_t i = 3; i < rows.size(); ++i) {
    c.expect(rows[i].chamfer < 0.25 * x.chamfer, rows[i].pattern + " CD is not below 25% of X");
    c.expect(rows[i].hausdorff < 0.25 * x.hausdorff, rows[i].pattern + " HD is not below 25% of X");
  }

  // Grid metrics against brute force on 2000-point subsets of original and
  // zero-filled views.
  const auto keys = abe::setup(rng);
  const Bytes frame = ply::write_ply(room);
  std::mt19937_64 pick(304);
  double worst = 0.0;
  for (const auto& p : patterns) {
    const Bytes enc = codec::encrypt_frame(frame, p, keys.public_params, abe::parse_policy("subscriber"), rng);
    const auto view = ply::parse_ply(codec::zero_fill(enc)).cloud;
    std::vector<geometry::Point> a, b;
    for (int i = 0; i < 2000; ++i) {
      const std::size_t ia = pick() % room.size(), ib = pick() % view.size();
      a.push_back({room.position(ia, Axis::X), room.position(ia, Axis::Y), room.position(ia, Axis::Z)});
      b.push_back({view.position(ib, Axis::X), view.position(ib, Axis::Y), view.position(ib, Axis::Z)});
    }
    const auto grid = geometry::compare(geometry::PointSet(a), geometry::PointSet(b));
    const auto brute = brute_force(a, b);
    for (const auto& [got, want, name] : {std::tuple{grid.chamfer, brute.chamfer, "CD"},
                                          std::tuple{grid.hausdorff, brute.hausdorff, "HD"}}) {
      worst = std::max(worst, std::abs(got - want) / std::max(std::abs(want), 1e-300));
      c.expect(close_rel(got, want, 1e-12), std::string(name) + " grid/brute mismatch for " + p.canonical_text());
    }
  }
  note("grid vs brute force on 2000-point subsets: worst relative error " + [&] {
    std::ostringstream os;
    os << worst;
    return os.str();
  }());
  return c.verdict("CD and HD strictly decreasing XYZ>XY>X>2X>5X, 2X/5X below 25% of X, grid exact to 1e-12");
}

// ---------------------------------------------------------------- 4

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return syy == 0 ? 1.0 : sxy * sxy / (sxx * syy);
}

Verdict criterion_4() {
  Checks c;
  const Bytes frame = ply::write_ply(scene::generate_room(100000, 4, 0));
  const std::vector<Granularity> selective{parse_pattern("XYZ"), parse_pattern("XY"), parse_pattern("X")};
  // 5 rounds of 40 repetitions over all patterns; per-round medians are
  // combined by their median.
  std::map<std::string, std::map<std::string, std::vector<double>>> rounds;  // op -> pattern -> medians
  for (int round = 0; round < 5; ++round) {
    for (const auto& r : harness::bench_codec(frame, selective, 40)) rounds[r.op][r.pattern].push_back(r.median_ms);
  }
  note("policy '" + std::string(harness::kBenchPolicy) + "', key {" + std::string(harness::kBenchAttributes) +
       "}, 10^5 points, 5 rounds x 40 repetitions");
  std::map<std::string, std::map<std::string, double>> median;  // op -> pattern -> ms
  for (const std::string p : {"FULL", "XYZ", "XY", "X"}) {
    for (const std::string op : {"encrypt", "decrypt"}) {
      median[op][p] = harness::summarize(rounds[op][p]).median;
      note(p + " " + op + ": median_ms=" + fmt(median[op][p]) + " reduction_vs_full_pct=" +
           fmt(100.0 * (1.0 - median[op][p] / median[op]["FULL"]), 1));
    }
  }
  const std::vector<std::string> order{"FULL", "XYZ", "XY", "X"};
  for (const std::string op : {"encrypt", "decrypt"}) {
    for (std::size_t i = 1; i < order.size(); ++i) {
      c.expect(median[op][order[i - 1]] > median[op][order[i]],
               op + " median " + order[i - 1] + " (" + fmt(median[op][order[i - 1]]) + ") <= " + order[i] + " (" +
                   fmt(median[op][order[i]]) + ")");
    }
  }
  for (const std::string p : {"XYZ", "XY", "X"}) {
    c.expect(median["decrypt"][p] < median["encrypt"][p],
             p + " decrypt median " + fmt(median["decrypt"][p]) + " ms >= encrypt median " +
                 fmt(median["encrypt"][p]) + " ms");
  }

  // Sizes are interleaved over rounds so a burst of host noise cannot land
  // on one size only; each size gets 200 repetitions in total.
  const std::vector<double> sizes{10000, 50000, 100000};
  std::vector<Bytes> frames;
  for (double n : sizes) frames.push_back(ply::write_ply(scene::generate_room(static_cast<std::size_t>(n), 4, 0)));
  const std::vector<Granularity> x_only{parse_pattern("X")};
  std::vector<std::vector<double>> round_medians(sizes.size());
  for (int round = 0; round < 5; ++round) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const auto r = harness::bench_codec(frames[i], x_only, 40);
      const auto it =
          std::find_if(r.begin(), r.end(), [](const auto& row) { return row.pattern == "X" && row.op == "encrypt"; });
      round_medians[i].push_back(it->median_ms);
    }
  }
  std::vector<double> times;
  for (auto& m : round_medians) times.push_back(harness::summarize(m).median);
  const double r2 = r_squared(sizes, times);
  note("X encrypt median_ms at 10k/50k/100k: " + fmt(times[0]) + " / " + fmt(times[1]) + " / " + fmt(times[2]) +
       ", linear fit R^2=" + fmt(r2, 4));
  c.expect(r2 >= 0.95, "X encrypt scaling R^2 " + fmt(r2, 4) + " < 0.95");
  return c.verdict("FULL>XYZ>XY>X for both ops, decrypt<encrypt per pattern, R^2=" + fmt(r2, 4));
}

// ---------------------------------------------------------------- 5

// The blob carries the removed coordinates, so |blob| = 8*t + blob overhead
// and the constant named by the criterion, marker + blob overhead, is
// |enc| - |orig|. The literal expression |enc| - |orig| + 8*t is reported
// too; it grows by 8 bytes per targeted coordinate.
Verdict criterion_5() {
  Checks c;
  SeededRandom rng(505);
  const auto keys = abe::setup(rng);
  const auto policy = abe::parse_policy("subscriber and exp >= 20260101");
  const std::vector<std::string> patterns{"XYZ", "XY", "X", "2X", "3X", "2XY", "5X2Y3Z"};
  std::int64_t lo = INT64_MAX, hi = INT64_MIN, lit_lo = INT64_MAX, lit_hi = INT64_MIN;
  std::size_t samples = 0;
  for (std::size_t n : {100, 1000, 10000, 100000}) {
    const Bytes frame = ply::write_ply(scene::generate_room(n, 5, 0));
    const auto orig = static_cast<std::int64_t>(frame.size());
    for (const auto& text : patterns) {
      const Pattern p = Pattern::parse(text);
      const auto t = static_cast<std::int64_t>(p.targeted_count(n));
      const Bytes enc = codec::encrypt_frame(frame, p, keys.public_params, policy, rng);
      const auto view = codec::inspect_frame(enc);
      const auto marker = static_cast<std::int64_t>(view.marker.size());
      const auto blob = static_cast<std::int64_t>(view.blob.size());
      const auto size = static_cast<std::int64_t>(enc.size());
      c.expect(size == orig - 8 * t + marker + blob,
               text + " at " + std::to_string(n) + ": |enc| != |orig| - 8t + |marker| + |blob|");
      c.expect(view.reduced_body.size() == frame.size() - view.header->size - 8 * static_cast<std::size_t>(t),
               text + " at " + std::to_string(n) + ": reduced body is not 8t shorter");
      const std::int64_t overhead = marker + (blob - 8 * t);
      c.expect(overhead == size - orig, "overhead bookkeeping");
      lo = std::min(lo, overhead);
      hi = std::max(hi, overhead);
      lit_lo = std::min(lit_lo, size - orig + 8 * t);
      lit_hi = std::max(lit_hi, size - orig + 8 * t);
      ++samples;
    }
  }
  const double centre = 0.5 * static_cast<double>(lo + hi);
  const double spread = 0.5 * static_cast<double>(hi - lo);
  note("samples=" + std::to_string(samples) + " (4 sizes x 7 patterns), |enc| = |orig| - 8t + |marker| + |blob| exact");
  note("marker + blob overhead in [" + std::to_string(lo) + ", " + std::to_string(hi) + "] bytes, constant " +
       fmt(centre, 1) + " +/- " + fmt(spread, 1));
  note("literal |enc| - |orig| + 8t in [" + std::to_string(lit_lo) + ", " + std::to_string(lit_hi) +
       "] (includes the 8t payload bytes)");
  c.expect(hi - lo <= 32, "overhead spread " + std::to_string(hi - lo) + " bytes exceeds +/-16");
  return c.verdict("exact size law on all frames, marker + blob overhead " + fmt(centre, 1) + " +/- " +
                   fmt(spread, 1) + " bytes");
}

// ---------------------------------------------------------------- 6

// Reference LRU: resident objects in a list, most recent at the back.
class ReferenceLru {
 public:
  explicit ReferenceLru(std::uint64_t capacity) : capacity_(capacity) {}

  // True on a hit. A miss admits the object if it fits at all.
  bool access(const std::string& key, std::uint64_t size) {
    for (auto it = items_.begin(); it != items_.end(); ++it) {
      if (it->first == key) {
        items_.splice(items_.end(), items_, it);
        return true;
      }
    }
    if (size <= capacity_) {
      while (used_ + size > capacity_) {
        used_ -= items_.front().second;
        items_.pop_front();
      }
      items_.emplace_back(key, size);
      used_ += size;
    }
    return false;
  }
  std::vector<std::string> order() const {
    std::vector<std::string> out;
    for (const auto& i : items_) out.push_back(i.first);
    return out;
  }

 private:
  std::uint64_t capacity_;
  std::uint64_t used_ = 0;
  std::list<std::pair<std::string, std::uint64_t>> items_;
};

std::vector<std::size_t> zipf_trace(std::size_t objects, std::size_t length, double s, std::uint64_t seed) {
  std::vector<double> w(objects);
  for (std::size_t i = 0; i < objects; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), s);
  std::discrete_distribution<std::size_t> d(w.begin(), w.end());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out(length);
  for (auto& o : out) o = d(rng);
  return out;
}

Verdict criterion_6(Workspace& ws) {
  Checks c;

  const auto zero = experiment(ws, "capacity-zero", "clients=3\nlambda=0.5\nlevel=X\npolicy=subscriber\ncache_mb=0\n");
  const double zero_hit = summary_value(zero, "hit_rate", "cache");
  note("capacity 0: requests=" + std::to_string(zero.measured.records.size()) + " hit_rate=" + fmt(zero_hit, 2) + "%");
  c.expect(zero_hit == 0.0, "capacity-0 hit rate " + fmt(zero_hit, 2) + "%");

  const auto warm = experiment(ws, "warmup", "clients=3\nlambda=0.5\nlevel=X\npolicy=subscriber\ncache_mb=256\nwarmup=true\n");
  const double warm_hit = summary_value(warm, "hit_rate", "cache");
  note("warm-up then measure, 256 MiB: warmup hit_rate=" + fmt(summary_value(warm, "hit_rate", "warmup"), 2) +
       "% measured hit_rate=" + fmt(warm_hit, 2) + "% over " + std::to_string(warm.measured.records.size()) +
       " requests");
  c.expect(warm_hit == 100.0, "measured hit rate after warm-up " + fmt(warm_hit, 2) + "%");

  // Reference simulator against the store, 8 traces.
  std::size_t store_requests = 0, store_mismatches = 0;
  for (std::uint64_t t = 0; t < 8; ++t) {
    std::mt19937_64 rng(600 + t);
    std::vector<std::uint64_t> sizes(300);
    for (auto& s : sizes) s = 1 + rng() % 40000;
    const std::uint64_t capacity = 200000 + t * 150000;
    delivery::LruStore store(capacity);
    ReferenceLru ref(capacity);
    for (std::size_t o : zipf_trace(sizes.size(), 10000, 0.6 + 0.1 * static_cast<double>(t), 610 + t)) {
      const std::string key = "/o/" + std::to_string(o);
      const bool hit = store.touch(key);
      if (!hit) store.admit(key, sizes[o]);
      if (hit != ref.access(key, sizes[o])) ++store_mismatches;
      ++store_requests;
    }
    if (store.order() != ref.order()) ++store_mismatches;
  }
  note("LruStore vs reference: 8 traces, " + std::to_string(store_requests) + " requests, " +
       std::to_string(store_mismatches) + " mismatches");
  c.expect(store_mismatches == 0, std::to_string(store_mismatches) + " LruStore mismatches");

  // The running cache service against the same simulator, 10^4 requests.
  {
    const fs::path root = ws.root() / "lru-origin";
    fs::create_directories(root / "o");
    std::mt19937_64 rng(620);
    std::vector<std::uint64_t> sizes(250);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      sizes[i] = 1 + rng() % 30000;
      write_file(root / "o" / std::to_string(i), Bytes(sizes[i], static_cast<std::uint8_t>(i)));
    }
    const std::uint64_t capacity = 600000;
    auto origin = delivery::serve_origin({.root = root});
    auto cache = delivery::run_cache({.upstream = origin.base_url(), .capacity_bytes = capacity});
    httplib::Client client(cache.base_url());
    client.set_keep_alive(true);
    ReferenceLru ref(capacity);
    std::size_t mismatches = 0, errors = 0, hits = 0;
    const auto trace = zipf_trace(sizes.size(), 10000, 0.8, 621);
    for (std::size_t o : trace) {
      const std::string path = "/o/" + std::to_string(o);
      const auto res = client.Get(path);
      if (!res || res->status != 200 || res->body.size() != sizes[o]) ++errors;
      const bool expect_hit = ref.access(path, sizes[o]);
      const bool got_hit = res && res->get_header_value("X-Cache") == "HIT";
      hits += got_hit;
      if (expect_hit != got_hit) ++mismatches;
    }
    const auto log = cache.records();
    std::size_t log_mismatches = log.size() == trace.size() ? 0 : 1;
    ReferenceLru replay(capacity);
    for (std::size_t i = 0; i < std::min(log.size(), trace.size()); ++i) {
      const bool hit = replay.access(log[i].path, sizes[trace[i]]);
      if (hit != (log[i].outcome == delivery::Outcome::Hit)) ++log_mismatches;
    }
    if (cache.resident() != ref.order()) ++mismatches;
    cache.stop();
    origin.stop();
    note("cache service vs reference: " + std::to_string(trace.size()) + " requests, " + std::to_string(hits) +
         " hits, " + std::to_string(mismatches) + " mismatches, access-log replay mismatches " +
         std::to_string(log_mismatches) + ", errors " + std::to_string(errors));
    c.expect(mismatches == 0 && log_mismatches == 0, "cache service diverges from the reference LRU");
    c.expect(errors == 0, std::to_string(errors) + " failed cache requests");
  }

  const std::string parity = "clients=3\nlambda=0.5\ncache_mb=256\nseed=6\n";
  const auto none = experiment(ws, "parity-none", parity);
  const auto x = experiment(ws, "parity-x", parity + "level=X\npolicy=subscriber\n");
  const double none_hit = summary_value(none, "hit_rate", "cache");
  const double x_hit = summary_value(x, "hit_rate", "cache");
  const bool same_requests = none.normalized_requests() == x.normalized_requests();
  note("parity: NONE hit_rate=" + fmt(none_hit, 4) + "% X hit_rate=" + fmt(x_hit, 4) +
       "% identical request sequences=" + (same_requests ? "yes" : "no"));
  c.expect(none_hit == x_hit, "NONE and X hit rates differ");
  c.expect(same_requests, "NONE and X request sequences differ");

  return c.verdict("capacity 0 -> 0%, warm -> 100%, LRU exact on 8+1 traces of 1e4, NONE/X hit rate " +
                   fmt(none_hit, 2) + "% both");
}

// ---------------------------------------------------------------- 7

// Clock model for one client with a download queue of 1: frame i is
// requested once frame i-1 is in the buffer, enters the buffer once frame
// i-C has left it, and playback ticks every T from the moment the first C
// frames are buffered, stalling whenever the head frame has not arrived.
std::vector<player::StallRecord> predict_stalls(const std::vector<double>& download_ms, std::size_t capacity,
                                                double period_ms) {
  const std::size_t n = download_ms.size();
  const std::size_t warm = std::min(capacity, n);
  std::vector<double> push(n), leave(n);
  auto arrive = [&](std::size_t i) {
    const double requested = i == 0 ? 0.0 : push[i - 1];
    const double arrived = requested + download_ms[i];
    return i < capacity ? arrived : std::max(arrived, leave[i - capacity]);
  };
  for (std::size_t i = 0; i < warm; ++i) push[i] = arrive(i);

  std::vector<player::StallRecord> stalls;
  double tick = push[warm - 1];
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= warm) push[i] = arrive(i);
    if (push[i] > tick) {
      stalls.push_back({tick, push[i] - tick});
      tick = push[i];
    }
    leave[i] = tick;
    tick += period_ms;
  }
  return stalls;
}

Verdict criterion_7(Workspace& ws) {
  Checks c;

  const auto qoe = experiment(ws, "qoe-x", "clients=3\nlambda=5\nbuffer=1\nlevel=X\npolicy=subscriber\ncache_mb=256\n");
  double worst = 0.0;
  for (const auto& client : qoe.measured.clients) {
    const double r = client.rebuffering_pct.value_or(-1.0);
    note(client.id + ": start_offset_s=" + fmt(client.start_offset_s, 2) + " exit=" + std::to_string(client.exit_code) +
         " frames=" + std::to_string(client.frame_sequence.size()) + " rebuffering_pct=" + fmt(r, 3));
    c.expect(client.exit_code == 0 && client.rebuffering_pct, client.id + " failed");
    c.expect(client.frame_sequence.size() == 120, client.id + " played " +
                                                      std::to_string(client.frame_sequence.size()) + " frames");
    worst = std::max(worst, r);
  }
  c.expect(qoe.measured.clients.size() == 3, "expected 3 clients");
  c.expect(worst == 0.0, "rebuffering " + fmt(worst, 3) + "% with satisfying keys");

  // Scripted delay on one frame of a 150-frame NONE stream.
  {
    harness::DatasetOptions o;
    o.points_per_frame = 2000;
    o.frame_count = 150;
    o.frame_rate = 24;
    o.out_dir = ws.root() / "delay-dataset";
    harness::gen_dataset(o);
    const fs::path root = o.out_dir / "NONE";
    const auto m = manifest::parse_mpd(as_chars(read_file(root / "manifest.mpd")));
    const double period = 1000.0 / 24.0;
    const std::size_t capacity = 24;  // 1 s buffer
    const std::size_t delayed = 100;
    const double delay = 3000.0 + static_cast<double>(capacity + 1) * period;

    std::vector<double> downloads(150, 0.0);
    downloads[delayed] = delay;
    const auto predicted = predict_stalls(downloads, capacity, period);

    auto origin = delivery::serve_origin(
        {.root = root,
         .delays = {{"/" + manifest::frame_url(m, delayed), std::chrono::milliseconds(std::llround(delay))}}});
    player::PlayerConfig cfg;
    cfg.mpd_url = origin.base_url() + "/manifest.mpd";
    cfg.buffer_seconds = 1.0;
    cfg.decrypt = false;
    const auto log = player::stream(cfg);
    origin.stop();

    std::string observed;
    for (const auto& s : log.stalls) observed += (observed.empty() ? "" : ", ") + fmt(s.duration_ms, 1);
    note("scripted delay " + fmt(delay, 1) + " ms on frame " + std::to_string(delayed) + ": predicted " +
         std::to_string(predicted.size()) + " stall of " + (predicted.empty() ? "-" : fmt(predicted[0].duration_ms, 1)) +
         " ms, observed [" + observed + "] ms");
    c.expect(predicted.size() == 1, "model predicts " + std::to_string(predicted.size()) + " stalls");
    c.expect(log.stalls.size() == 1, "observed " + std::to_string(log.stalls.size()) + " stalls");
    if (predicted.size() == 1 && log.stalls.size() == 1) {
      const double err = std::abs(log.stalls[0].duration_ms - predicted[0].duration_ms);
      c.expect(err <= 50.0, "stall off by " + fmt(err, 1) + " ms");
    }
  }

  const std::vector<player::StallRecord> quarter{{1000.0, 15000.0}};
  const double r25 = player::compute_rebuffering(quarter, 60.0);
  const std::vector<player::StallRecord> long_stalls{{0.0, 66000.0}, {70000.0, 66000.0}};
  const double r220 = player::compute_rebuffering(long_stalls, 60.0);
  note("rebuffering(15 s / 60 s)=" + fmt(r25, 6) + "% rebuffering(132 s / 60 s)=" + fmt(r220, 6) + "%");
  c.expect(std::abs(r25 - 25.0) < 1e-9, "15 s over 60 s gives " + fmt(r25, 6) + "%");
  c.expect(std::abs(r220 - 220.0) < 1e-9, "132 s over 60 s gives " + fmt(r220, 6) + "%");

  return c.verdict("3 clients on X at 0% rebuffering, scripted stall within 50 ms, 25% and 220% formulas exact");
}

// ---------------------------------------------------------------- 8

Verdict criterion_8(Workspace& ws) {
  Checks c;
  const std::uint32_t today = delivery::today_utc();
  SeededRandom rng(808);
  const auto keys = abe::setup(rng);
  const std::string policy = "subscriber and exp >= " + std::to_string(today);

  const Bytes frame = ply::write_ply(scene::generate_room(5000, 8, 0));
  const fs::path stored = ws.root() / "revocation" / "f_0.eply";
  fs::create_directories(stored.parent_path());
  write_file(stored, codec::encrypt_frame(frame, parse_pattern("X"), keys.public_params, abe::parse_policy(policy), rng));
  const Bytes before = read_file(stored);
  const auto mtime = fs::last_write_time(stored);

  delivery::LicenseOptions lo;
  lo.registry = delivery::ClientRegistry::parse("alice,subscriber,20991231\nbob,subscriber,20200101\n");
  lo.public_params = keys.public_params;
  lo.master_key = keys.master_key;
  lo.today = today;
  auto license = delivery::serve_license(lo);
  httplib::Client http(license.base_url());
  const auto expired = http.Get("/license?client=bob");
  const auto current = http.Get("/license?client=alice");
  license.stop();
  const int expired_status = expired ? expired->status : 0;
  const int current_status = current ? current->status : 0;
  note("license today=" + std::to_string(today) + ": bob (exp 20200101) -> " + std::to_string(expired_status) +
       ", alice (exp 20991231) -> " + std::to_string(current_status));
  c.expect(expired_status == 403, "expired registration got HTTP " + std::to_string(expired_status));
  c.expect(current_status == 200, "current registration got HTTP " + std::to_string(current_status));

  // A key minted before the expiry passed, carrying exp=20200101.
  const auto old_key =
      abe::keygen(keys.public_params, keys.master_key, abe::AttributeSet::parse("subscriber;exp=20200101"), rng);
  std::string outcome = "decrypted";
  try {
    (void)codec::decrypt_frame(read_file(stored), old_key);
  } catch (const Error& e) {
    outcome = std::string(errc_name(e.code()));
  }
  note("stored frame under '" + policy + "' with exp=20200101 key: " + outcome);
  c.expect(outcome == "PolicyNotSatisfied", "exp=20200101 key: " + outcome);

  if (current_status == 200) {
    const auto fresh = abe::parse_user_key(as_bytes(current->body));
    c.expect(codec::decrypt_frame(read_file(stored), fresh) == frame, "current key cannot decrypt the stored frame");
  }
  const bool untouched = read_file(stored) == before && fs::last_write_time(stored) == mtime;
  note(std::string("stored ciphertext unchanged: ") + (untouched ? "yes" : "no"));
  c.expect(untouched, "stored content changed");
  return c.verdict("expired registration refused (403), exp=20200101 key denied, stored frame untouched");
}

}  // namespace

int main(int argc, char** argv) {
  // Keep freed frame buffers in the heap so timing repetitions do not pay
  // for fresh page faults.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  Workspace ws;
  const std::vector<std::tuple<int, std::string, std::function<Verdict()>>> criteria{
      {1, "codec roundtrip", criterion_1},
      {2, "policy gating equivalence", criterion_2},
      {3, "obfuscation ordering", criterion_3},
      {4, "runtime ordering", criterion_4},
      {5, "size law", criterion_5},
      {6, "cache behavior", [&] { return criterion_6(ws); }},
      {7, "streaming QoE", [&] { return criterion_7(ws); }},
      {8, "revocation", [&] { return criterion_8(ws); }},
  };

  int failed = 0;
  for (const auto& [n, title, run] : criteria) {
    if (!selected.empty() && !selected.count(n)) continue;
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    std::cout << "criterion " << n << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << title << ": " << v.summary << " ("
              << fmt(s, 1) << " s)" << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
