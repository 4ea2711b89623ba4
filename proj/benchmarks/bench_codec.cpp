// Microbenchmarks for the frame codec, policy evaluation, the distance
// metrics and the cache store. `pcvault bench-codec` produces the CSV the
// experiments use; these are for profiling single operations.

#include <benchmark/benchmark.h>
#include <malloc.h>

#include <map>
#include <random>
#include <string>

#include "pcvault/abe.hpp"
#include "pcvault/codec.hpp"
#include "pcvault/delivery.hpp"
#include "pcvault/geometry.hpp"
#include "pcvault/ply.hpp"
#include "pcvault/scene.hpp"

using namespace pcvault;

namespace {

struct Fixture {
  abe::KeyPair keys = abe::setup();
  abe::PolicyTree policy = abe::parse_policy("subscriber and exp >= 20260101");
  abe::UserKey key = abe::keygen(keys.public_params, keys.master_key, abe::AttributeSet::parse("subscriber;exp=20991231"));
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

const Bytes& frame(std::size_t points) {
  static std::map<std::size_t, Bytes> cache;
  auto it = cache.find(points);
  if (it == cache.end()) it = cache.emplace(points, ply::write_ply(scene::generate_room(points, 4, 0))).first;
  return it->second;
}

const char* const kLevels[] = {"FULL", "XYZ", "XY", "X", "2X", "5X"};

void BM_Encrypt(benchmark::State& state) {
  const Bytes& ply = frame(static_cast<std::size_t>(state.range(1)));
  const Granularity g = parse_pattern(kLevels[state.range(0)]);
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(codec::encrypt_frame(ply, g, f.keys.public_params, f.policy));
  state.SetLabel(kLevels[state.range(0)]);
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * ply.size()));
}

void BM_Decrypt(benchmark::State& state) {
  const Bytes& ply = frame(static_cast<std::size_t>(state.range(1)));
  const auto& f = fixture();
  const Bytes enc = codec::encrypt_frame(ply, parse_pattern(kLevels[state.range(0)]), f.keys.public_params, f.policy);
  for (auto _ : state) benchmark::DoNotOptimize(codec::decrypt_frame(enc, f.key));
  state.SetLabel(kLevels[state.range(0)]);
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * ply.size()));
}

void BM_ZeroFill(benchmark::State& state) {
  const Bytes& ply = frame(static_cast<std::size_t>(state.range(0)));
  const auto& f = fixture();
  const Bytes enc = codec::encrypt_frame(ply, parse_pattern("X"), f.keys.public_params, f.policy);
  for (auto _ : state) benchmark::DoNotOptimize(codec::zero_fill(enc));
}

void codec_args(benchmark::internal::Benchmark* b) {
  for (int level = 0; level < 6; ++level) {
    for (int points : {10000, 100000}) b->Args({level, points});
  }
  b->Unit(benchmark::kMillisecond);
}

void BM_PolicyEval(benchmark::State& state) {
  const auto policy = abe::parse_policy("(researcher and univx) or (europe and level >= 3 and exp >= 20260101)");
  const auto attrs = abe::AttributeSet::parse("europe;level=4;exp=20991231");
  for (auto _ : state) benchmark::DoNotOptimize(abe::eval_policy(policy, attrs));
}

void BM_Hausdorff(benchmark::State& state) {
  const auto cloud = scene::generate_room(static_cast<std::size_t>(state.range(0)), 4, 0);
  const auto& f = fixture();
  const Bytes enc = codec::encrypt_frame(ply::write_ply(cloud), parse_pattern("X"), f.keys.public_params, f.policy);
  const auto a = geometry::PointSet::from_cloud(cloud);
  const auto b = geometry::PointSet::from_cloud(ply::parse_ply(codec::zero_fill(enc)).cloud);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::compare(a, b));
  state.SetComplexityN(state.range(0));
}

void BM_LruTouchAdmit(benchmark::State& state) {
  const std::size_t keys = 4096;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < keys; ++i) names.push_back("/X/frames/f_" + std::to_string(i) + ".eply");
  delivery::LruStore store(static_cast<std::uint64_t>(state.range(0)) * 1024);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, keys - 1);
  for (auto _ : state) {
    const auto& k = names[pick(rng)];
    if (!store.touch(k)) benchmark::DoNotOptimize(store.admit(k, 1024));
  }
}

}  // namespace

BENCHMARK(BM_Encrypt)->Apply(codec_args);
BENCHMARK(BM_Decrypt)->Apply(codec_args);
BENCHMARK(BM_ZeroFill)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PolicyEval);
BENCHMARK(BM_Hausdorff)->Arg(5000)->Arg(20000)->Arg(50000)->Unit(benchmark::kMillisecond)->Complexity();
BENCHMARK(BM_LruTouchAdmit)->Arg(512)->Arg(2048);

int main(int argc, char** argv) {
  // Same heap settings as `pcvault bench-codec`: keep frame-sized buffers
  // on the heap instead of fresh mmap pages each iteration.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
