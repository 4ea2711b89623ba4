#include "pcvault/delivery.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <thread>

#include "pcvault/bytes.hpp"
#include "support/test_util.hpp"

using namespace pcvault;
using namespace pcvault::delivery;
using namespace std::chrono_literals;

namespace {

// Plain vector LRU: front is least recent.
struct ReferenceLru {
  std::uint64_t capacity;
  std::vector<std::pair<std::string, std::uint64_t>> entries;

  bool get(const std::string& k) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == k; });
    if (it == entries.end()) return false;
    auto e = *it;
    entries.erase(it);
    entries.push_back(e);
    return true;
  }
  std::vector<std::string> put(const std::string& k, std::uint64_t size) {
    std::vector<std::string> evicted;
    if (size > capacity) return evicted;
    std::uint64_t used = 0;
    for (const auto& e : entries) used += e.second;
    while (used + size > capacity) {
      used -= entries.front().second;
      evicted.push_back(entries.front().first);
      entries.erase(entries.begin());
    }
    entries.emplace_back(k, size);
    return evicted;
  }
  std::vector<std::string> order() const {
    std::vector<std::string> o;
    for (const auto& e : entries) o.push_back(e.first);
    return o;
  }
};

// One cache request against the bookkeeping alone.
Outcome request(LruStore& s, const std::string& key, std::uint64_t size) {
  if (s.touch(key)) return Outcome::Hit;
  s.admit(key, size);
  return Outcome::Miss;
}

std::vector<AccessRecord> records_of(std::initializer_list<Outcome> outcomes) {
  std::vector<AccessRecord> r;
  for (auto o : outcomes) r.push_back({0.0, "/p", o, 1.0, 10});
  return r;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

std::string random_body(std::mt19937_64& rng, std::size_t n) {
  std::string s(n, '\0');
  for (auto& c : s) c = static_cast<char>(rng());
  return s;
}

// Origin over a temp dir with files /f/0 .. /f/(n-1), `size` bytes each.
struct Content {
  testing::TempDir dir{"origin"};
  std::vector<std::string> bodies;

  Content(std::size_t n, std::size_t size, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      bodies.push_back(random_body(rng, size));
      write_text(dir.path() / "f" / std::to_string(i), bodies.back());
    }
  }
};

httplib::Client client_for(const Service& s) {
  httplib::Client c(s.base_url());
  c.set_keep_alive(true);
  c.set_tcp_nodelay(true);
  c.set_read_timeout(30);
  return c;
}

}  // namespace

TEST_CASE("LRU: A,B,C,A with room for two entries misses every time") {
  LruStore s(200);
  std::vector<Outcome> got;
  for (const char* k : {"A", "B", "C", "A"}) got.push_back(request(s, k, 100));
  CHECK(got == std::vector<Outcome>{Outcome::Miss, Outcome::Miss, Outcome::Miss, Outcome::Miss});
  CHECK(s.order() == std::vector<std::string>{"C", "A"});
  s.audit();
}

TEST_CASE("LRU: touch protects from eviction") {
  LruStore s(200);
  s.admit("A", 100);
  s.admit("B", 100);
  CHECK(s.touch("A"));
  const auto a = s.admit("C", 100);
  CHECK(a.evicted == std::vector<std::string>{"B"});
  CHECK(s.order() == std::vector<std::string>{"A", "C"});
}

TEST_CASE("LRU: zero capacity and oversized objects") {
  LruStore zero(0);
  for (int i = 0; i < 5; ++i) CHECK(request(zero, "A", 1) == Outcome::Miss);
  CHECK(zero.size() == 0);
  LruStore s(100);
  s.admit("A", 60);
  const auto a = s.admit("big", 101);
  CHECK_FALSE(a.admitted);
  CHECK(a.evicted.empty());
  CHECK(s.contains("A"));
  CHECK(s.admit("empty", 0).admitted);
  s.audit();
}

TEST_CASE("LRU matches a reference simulator on synthetic traces") {
  std::mt19937_64 rng(42);
  for (int trace = 0; trace < 8; ++trace) {
    const std::uint64_t capacity = 1 + rng() % 5000;
    LruStore store(capacity);
    ReferenceLru ref{capacity, {}};
    std::vector<std::uint64_t> sizes(50 + rng() % 200);
    for (auto& sz : sizes) sz = rng() % (capacity / 3 + 2);
    // Zipf-ish key popularity.
    std::discrete_distribution<std::size_t> pick([&] {
      std::vector<double> w;
      for (std::size_t i = 0; i < sizes.size(); ++i) w.push_back(1.0 / static_cast<double>(i + 1));
      return std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }());
    for (int i = 0; i < 10000; ++i) {
      const std::size_t k = pick(rng);
      const std::string key = "/k" + std::to_string(k);
      const bool hit = store.touch(key);
      REQUIRE(hit == ref.get(key));
      if (!hit) {
        const auto a = store.admit(key, sizes[k]);
        REQUIRE(a.evicted == ref.put(key, sizes[k]));
      }
      REQUIRE(store.order() == ref.order());
      REQUIRE(store.used_bytes() <= capacity);
    }
    store.audit();
  }
}

TEST_CASE("hit rate and response time") {
  CHECK(hit_rate(records_of({Outcome::Miss, Outcome::Miss})) == 0.0);
  CHECK(hit_rate(records_of({Outcome::Hit, Outcome::Miss, Outcome::Miss})) == doctest::Approx(33.333333333).epsilon(1e-9));
  CHECK(hit_rate(records_of({Outcome::Hit, Outcome::Hit})) == 100.0);
  CHECK_ERRC(hit_rate({}), Errc::EmptyLog);
  CHECK_ERRC(mean_response_ms({}), Errc::EmptyLog);
  auto r = records_of({Outcome::Hit, Outcome::Miss});
  r[1].response_time_ms = 3.0;
  CHECK(mean_response_ms(r) == 2.0);
}

TEST_CASE("access log csv roundtrip") {
  std::vector<AccessRecord> recs{{0.0, "/a/f_0000.eply", Outcome::Miss, 1.0 / 3.0, 123456},
                                 {12.5, "/manifest.mpd", Outcome::Hit, 0.01, 0}};
  const std::string text = access_log_csv(recs);
  CHECK(text.rfind("timestamp_ms,path,outcome,response_time_ms,bytes\n", 0) == 0);
  CHECK(parse_access_log(text) == recs);
  CHECK(parse_access_log(access_log_csv({}) + access_log_line(recs[0]) + access_log_line(recs[1])) == recs);
  CHECK_ERRC(parse_access_log("timestamp_ms,path,outcome,response_time_ms,bytes\n1,/a,MAYBE,1,1\n"),
             Errc::InvalidArgument);
}

TEST_CASE("dates") {
  CHECK(valid_date(20260101));
  CHECK(valid_date(20240229));
  CHECK_FALSE(valid_date(20230229));
  CHECK_FALSE(valid_date(20261301));
  CHECK_FALSE(valid_date(20260100));
  CHECK_FALSE(valid_date(99999999));
  CHECK(valid_date(today_utc()));
}

TEST_CASE("client registry") {
  const auto reg = ClientRegistry::parse(
      "# id,attributes,expiry\n"
      "alice, researcher;univx;europe , 20991231\n"
      "\n"
      "bob,student;level=3,20200101\r\n");
  REQUIRE(reg.entries().size() == 2);
  const auto* alice = reg.find("alice");
  REQUIRE(alice);
  CHECK(alice->attributes.has_tag("researcher"));
  CHECK(alice->attributes.has_tag("europe"));
  CHECK(alice->expiry == 20991231u);
  CHECK(reg.find("bob")->attributes.numeric("level") == 3u);
  CHECK(reg.find("mallory") == nullptr);
  CHECK(ClientRegistry::parse(reg.to_text()).entries() == reg.entries());

  CHECK_ERRC(ClientRegistry::parse("a,x,20991231\na,y,20991231\n"), Errc::InvalidArgument);
  CHECK_ERRC(ClientRegistry::parse("a,x,20230230\n"), Errc::InvalidArgument);
  CHECK_ERRC(ClientRegistry::parse("a,x,2099123\n"), Errc::InvalidArgument);
  CHECK_ERRC(ClientRegistry::parse("a,x\n"), Errc::InvalidArgument);
  CHECK_ERRC(ClientRegistry::parse("a,exp=20991231,20991231\n"), Errc::InvalidArgument);
  CHECK_ERRC(ClientRegistry::parse("a,Bad Attr,20991231\n"), Errc::InvalidArgument);
  try {
    ClientRegistry::parse("ok,x,20991231\n# c\nbad,x,1\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.detail() == 3);
  }
}

TEST_CASE("origin serves exact bytes") {
  Content content(3, 70000);
  write_text(content.dir.path() / "manifest.mpd", "<MPD/>");
  auto origin = serve_origin({.root = content.dir.path()});
  CHECK(origin.port() != 0);

  auto a = client_for(origin);
  auto b = client_for(origin);
  for (int round = 0; round < 3; ++round) {
    for (std::size_t i = 0; i < content.bodies.size(); ++i) {
      auto ra = a.Get("/f/" + std::to_string(i));
      auto rb = b.Get("/f/" + std::to_string(i));
      REQUIRE(ra);
      REQUIRE(rb);
      CHECK(ra->status == 200);
      CHECK(ra->body == content.bodies[i]);
      CHECK(ra->body == rb->body);
      CHECK(ra->get_header_value("Content-Length") == std::to_string(content.bodies[i].size()));
    }
  }
  CHECK(a.Get("/manifest.mpd")->body == "<MPD/>");
  CHECK(a.Get("/missing")->status == 404);
  CHECK(a.Get("/f")->status == 404);
  CHECK(a.Get("/f/../f/0")->status == 404);
  CHECK(a.Post("/f/0", "x", "text/plain")->status == 405);
  CHECK(a.Put("/f/0", "x", "text/plain")->status == 405);
  CHECK(a.Delete("/f/0")->status == 405);
}

TEST_CASE("origin errors and throttling") {
  CHECK_ERRC(serve_origin({.root = "/nonexistent/pcvault"}), Errc::IoError);
  Content content(1, 20000);
  auto first = serve_origin({.root = content.dir.path()});
  CHECK_ERRC(serve_origin({.root = content.dir.path(), .port = first.port()}), Errc::BindFailure);

  auto slow = serve_origin({.root = content.dir.path(), .bytes_per_second = 100000});
  auto cli = client_for(slow);
  const auto t0 = std::chrono::steady_clock::now();
  auto res = cli.Get("/f/0");
  const auto took = std::chrono::steady_clock::now() - t0;
  REQUIRE(res);
  CHECK(res->body == content.bodies[0]);
  CHECK(took >= 150ms);
}

TEST_CASE("concurrent origin requests are served independently") {
  Content content(4, 5000);
  auto origin = serve_origin({.root = content.dir.path(), .delays = {{"/f/0", 300ms}}});
  std::atomic<bool> slow_done{false};
  std::thread slow([&] {
    auto c = client_for(origin);
    CHECK(c.Get("/f/0")->body == content.bodies[0]);
    slow_done = true;
  });
  std::this_thread::sleep_for(20ms);
  auto c = client_for(origin);
  CHECK(c.Get("/f/1")->body == content.bodies[1]);
  CHECK_FALSE(slow_done.load());
  slow.join();
}

TEST_CASE("license service") {
  SeededRandom rng(5);
  const auto keys = abe::setup(rng);
  LicenseOptions opts;
  opts.registry = ClientRegistry::parse("alice,researcher;univx;europe,20991231\nbob,student,20200101\n");
  opts.public_params = keys.public_params;
  opts.master_key = keys.master_key;
  opts.today = 20260101;
  auto lic = serve_license(opts);
  auto cli = client_for(lic);

  auto res = cli.Get("/license?client=alice");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  const auto key = abe::parse_user_key(as_bytes(res->body));
  auto expected = opts.registry.find("alice")->attributes;
  expected.add_numeric("exp", 20991231);
  CHECK(key.attributes == expected);
  CHECK(key.expiry == 20991231u);

  auto params = cli.Get("/params");
  REQUIRE(params);
  const auto pp = abe::parse_public_params(as_bytes(params->body));
  CHECK(pp == keys.public_params.client_view());
  CHECK_FALSE(pp.attribute_root.has_value());
  CHECK(abe::verify_user_key(pp, key));

  CHECK(cli.Get("/license?client=mallory")->status == 403);
  CHECK(cli.Get("/license?client=bob")->status == 403);
  CHECK(cli.Get("/license")->status == 400);
  CHECK(cli.Post("/license?client=alice", "", "text/plain")->status == 405);

  // Without an authority-side root the service cannot mint keys.
  LicenseOptions client_side = opts;
  client_side.public_params = keys.public_params.client_view();
  CHECK_ERRC(serve_license(client_side), Errc::InvalidArgument);
}

TEST_CASE("expired key fails an expiry policy without re-encryption") {
  SeededRandom rng(6);
  const auto keys = abe::setup(rng);
  const Bytes payload{1, 2, 3, 4};
  const auto blob = abe::encrypt(keys.public_params, abe::parse_policy("subscriber and exp >= 20260101"), payload, rng);
  const auto fresh = abe::keygen(keys.public_params, keys.master_key,
                                 abe::AttributeSet::parse("subscriber;exp=20991231"), rng);
  const auto stale = abe::keygen(keys.public_params, keys.master_key,
                                 abe::AttributeSet::parse("subscriber;exp=20200101"), rng);
  CHECK(abe::decrypt(fresh, blob) == payload);
  CHECK_ERRC(abe::decrypt(stale, blob), Errc::PolicyNotSatisfied);
}

TEST_CASE("cache: repeat requests hit with identical bodies") {
  Content content(3, 1000);
  auto origin = serve_origin({.root = content.dir.path()});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 1 << 20});
  auto cli = client_for(cache);
  for (int round = 0; round < 2; ++round) {
    for (std::size_t i = 0; i < 3; ++i) {
      auto res = cli.Get("/f/" + std::to_string(i));
      REQUIRE(res);
      CHECK(res->body == content.bodies[i]);
      CHECK(res->get_header_value("X-Cache") == (round == 0 ? "MISS" : "HIT"));
    }
  }
  const auto recs = cache.records();
  REQUIRE(recs.size() == 6);
  CHECK(hit_rate(recs) == 50.0);
  for (std::size_t i = 1; i < recs.size(); ++i) CHECK(recs[i].timestamp_ms >= recs[i - 1].timestamp_ms);
  for (const auto& r : recs) CHECK(r.response_time_ms >= 0.0);
  CHECK(cache.used_bytes() == 3000);
  cache.audit();
}

TEST_CASE("cache: capacity zero disables caching") {
  Content content(2, 500);
  auto origin = serve_origin({.root = content.dir.path()});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 0});
  auto cli = client_for(cache);
  for (int i = 0; i < 6; ++i) CHECK(cli.Get("/f/" + std::to_string(i % 2))->body == content.bodies[i % 2]);
  CHECK(hit_rate(cache.records()) == 0.0);
  CHECK(cache.used_bytes() == 0);
}

TEST_CASE("cache: A,B,C,A with room for two entries") {
  Content content(3, 1000);
  auto origin = serve_origin({.root = content.dir.path()});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 2000});
  auto cli = client_for(cache);
  for (const char* p : {"/f/0", "/f/1", "/f/2", "/f/0"}) REQUIRE(cli.Get(p));
  const auto recs = cache.records();
  REQUIRE(recs.size() == 4);
  for (const auto& r : recs) CHECK(r.outcome == Outcome::Miss);
  CHECK(cache.resident() == std::vector<std::string>{"/f/2", "/f/0"});
}

TEST_CASE("cache: upstream errors") {
  Content content(1, 100);
  auto origin = serve_origin({.root = content.dir.path()});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 1 << 20});
  auto cli = client_for(cache);
  CHECK(cli.Get("/nope")->status == 404);
  CHECK(cli.Get("/nope")->status == 404);
  CHECK(cli.Post("/f/0", "", "text/plain")->status == 405);
  const auto recs = cache.records();
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].outcome == Outcome::Miss);
  CHECK(cache.resident().empty());

  const std::string dead = origin.base_url();
  origin.stop();
  auto orphan = run_cache({.upstream = dead, .capacity_bytes = 1 << 20});
  auto oc = client_for(orphan);
  CHECK(oc.Get("/f/0")->status == 502);
  REQUIRE(orphan.records().size() == 1);
  CHECK(orphan.records()[0].outcome == Outcome::Miss);
}

TEST_CASE("cache is transparent and its log matches the LRU oracle") {
  Content content(12, 0);
  std::mt19937_64 rng(9);
  std::vector<std::uint64_t> sizes;
  for (std::size_t i = 0; i < 12; ++i) {
    content.bodies[i] = random_body(rng, 100 + rng() % 4000);
    sizes.push_back(content.bodies[i].size());
    write_text(content.dir.path() / "f" / std::to_string(i), content.bodies[i]);
  }
  auto origin = serve_origin({.root = content.dir.path()});
  testing::TempDir logdir("log");
  const auto log_path = logdir.path() / "access.csv";
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 12000, .log_path = log_path});
  auto direct = client_for(origin);
  auto via = client_for(cache);

  LruStore oracle(12000);
  std::vector<Outcome> expected;
  for (int i = 0; i < 300; ++i) {
    const std::size_t k = rng() % 12;
    const std::string path = "/f/" + std::to_string(k);
    auto a = via.Get(path);
    auto b = direct.Get(path);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->body == b->body);
    expected.push_back(request(oracle, path, sizes[k]));
  }
  const auto recs = cache.records();
  REQUIRE(recs.size() == expected.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].outcome == expected[i]);
  CHECK(cache.resident() == oracle.order());

  std::ifstream in(log_path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(parse_access_log(text) == recs);
}

TEST_CASE("cache coalesces concurrent misses") {
  Content content(1, 50000);
  auto origin = serve_origin({.root = content.dir.path(), .delays = {{"/f/0", 200ms}}});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 1 << 20});
  std::vector<std::thread> ts;
  std::atomic<int> good{0};
  for (int i = 0; i < 8; ++i) {
    ts.emplace_back([&] {
      auto c = client_for(cache);
      auto r = c.Get("/f/0");
      if (r && r->body == content.bodies[0]) ++good;
    });
  }
  for (auto& t : ts) t.join();
  CHECK(good == 8);
  const auto recs = cache.records();
  REQUIRE(recs.size() == 8);
  CHECK(std::count_if(recs.begin(), recs.end(), [](const auto& r) { return r.outcome == Outcome::Miss; }) == 1);
}

TEST_CASE("cache hits are not slower than misses against a slow origin") {
  Content content(5, 2000);
  auto origin = serve_origin({.root = content.dir.path(), .delays = {{"/f/0", 20ms}, {"/f/1", 20ms}, {"/f/2", 20ms}}});
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 1 << 20});
  auto cli = client_for(cache);
  for (int round = 0; round < 3; ++round) {
    for (int i = 0; i < 3; ++i) REQUIRE(cli.Get("/f/" + std::to_string(i)));
  }
  std::vector<AccessRecord> hits, misses;
  for (const auto& r : cache.records()) (r.outcome == Outcome::Hit ? hits : misses).push_back(r);
  REQUIRE(!hits.empty());
  REQUIRE(!misses.empty());
  CHECK(mean_response_ms(hits) <= mean_response_ms(misses));
}

TEST_CASE("cache disk mode") {
  Content content(3, 3000);
  auto origin = serve_origin({.root = content.dir.path()});
  testing::TempDir store("store");
  auto cache = run_cache({.upstream = origin.base_url(), .capacity_bytes = 6000, .disk_dir = store.path()});
  auto cli = client_for(cache);
  for (const char* p : {"/f/0", "/f/1", "/f/0", "/f/2", "/f/0", "/f/1"}) {
    auto r = cli.Get(p);
    REQUIRE(r);
    CHECK(r->body == content.bodies[static_cast<std::size_t>(p[3] - '0')]);
  }
  std::vector<Outcome> got;
  for (const auto& r : cache.records()) got.push_back(r.outcome);
  CHECK(got == std::vector<Outcome>{Outcome::Miss, Outcome::Miss, Outcome::Hit, Outcome::Miss, Outcome::Hit,
                                    Outcome::Miss});
  CHECK(std::distance(std::filesystem::directory_iterator(store.path()), {}) == 2);
}
