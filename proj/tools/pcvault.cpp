#include <malloc.h>
#include <signal.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcvault/abe.hpp"
#include "pcvault/codec.hpp"
#include "pcvault/delivery.hpp"
#include "pcvault/error.hpp"
#include "pcvault/harness.hpp"
#include "pcvault/player.hpp"

namespace fs = std::filesystem;
using namespace pcvault;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i <= s.size()) {
    const std::size_t j = std::min(s.find(',', i), s.size());
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file(out, as_bytes(text));
  }
}

struct Listen {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string port_file;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--host", host, "Bind address")->capture_default_str();
    cmd->add_option("--port", port, "Port, 0 picks a free one")->capture_default_str();
    cmd->add_option("--port-file", port_file, "Write the bound port here once listening");
  }
};

// Runs until SIGINT or SIGTERM. The signals are blocked before the service
// threads start so only sigwait sees them.
void serve(delivery::Service& svc, const Listen& l, const std::string& what) {
  if (!l.port_file.empty()) {
    const std::string tmp = l.port_file + ".tmp";
    write_file(tmp, as_bytes(std::to_string(svc.port()) + "\n"));
    fs::rename(tmp, l.port_file);
  }
  std::cout << what << " listening on " << svc.base_url() << std::endl;
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
  svc.stop();
  std::cout << what << " stopped" << std::endl;
}

void block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcvault: selective attribute-based encryption for point-cloud video"};
  app.require_subcommand(1);
  std::function<void()> action;

  // ---- keys and frames
  std::string out_dir;
  auto* setup = app.add_subcommand("setup", "Generate public parameters and a master key");
  setup->add_option("--out", out_dir, "Output directory")->required();
  setup->callback([&] {
    action = [&] {
      fs::create_directories(out_dir);
      const auto keys = abe::setup();
      write_file(fs::path(out_dir) / "public.key", abe::serialize(keys.public_params));
      write_file(fs::path(out_dir) / "public.client.key", abe::serialize(keys.public_params.client_view()));
      write_file(fs::path(out_dir) / "master.key", abe::serialize(keys.master_key));
    };
  });

  std::string pub, master, priv, attrs, in, out, pattern = "X", policy;
  auto* keygen = app.add_subcommand("keygen", "Issue a user key for an attribute set");
  keygen->add_option("--pub", pub, "Authority public parameters")->required();
  keygen->add_option("--master", master, "Master key")->required();
  keygen->add_option("--attrs", attrs, "Attributes, e.g. \"researcher;univx;exp=20261231\"")->required();
  keygen->add_option("--out", out, "User key file")->required();
  keygen->callback([&] {
    action = [&] {
      const auto pp = abe::parse_public_params(read_file(pub));
      const auto mk = abe::parse_master_key(read_file(master));
      write_file(out, abe::serialize(abe::keygen(pp, mk, abe::AttributeSet::parse(attrs))));
    };
  });

  auto* encrypt = app.add_subcommand("encrypt", "Encrypt a PLY frame");
  encrypt->add_option("--in", in, "Input PLY")->required();
  encrypt->add_option("--out", out, "Output .eply")->required();
  encrypt->add_option("--pattern", pattern, "Granularity (XYZ, XY, X, 2X, ..., FULL)")->capture_default_str();
  encrypt->add_option("--pub", pub, "Authority public parameters")->required();
  encrypt->add_option("--policy", policy, "Access policy")->required();
  encrypt->callback([&] {
    action = [&] {
      const auto pp = abe::parse_public_params(read_file(pub));
      write_file(out, codec::encrypt_frame(read_file(in), parse_pattern(pattern), pp, abe::parse_policy(policy)));
    };
  });

  auto* decrypt = app.add_subcommand("decrypt", "Decrypt an encrypted frame");
  decrypt->add_option("--in", in, "Input .eply")->required();
  decrypt->add_option("--out", out, "Output PLY")->required();
  decrypt->add_option("--priv", priv, "User key")->required();
  decrypt->add_option("--pub", pub, "Public parameters; verifies the key first");
  decrypt->callback([&] {
    action = [&] {
      const auto key = abe::parse_user_key(read_file(priv));
      if (!pub.empty() && !abe::verify_user_key(abe::parse_public_params(read_file(pub)), key)) {
        throw Error(Errc::KeyMismatch, "user key does not verify against " + pub);
      }
      write_file(out, codec::decrypt_frame(read_file(in), key));
    };
  });

  auto* zero = app.add_subcommand("zero-fill", "Rebuild the unauthorised view of an encrypted frame");
  zero->add_option("--in", in, "Input .eply")->required();
  zero->add_option("--out", out, "Output PLY")->required();
  zero->callback([&] { action = [&] { write_file(out, codec::zero_fill(read_file(in))); }; });

  // ---- harness
  harness::DatasetOptions ds;
  std::string ds_out;
  auto* gen = app.add_subcommand("gen-dataset", "Write a synthetic room sequence and its manifests");
  gen->add_option("--points", ds.points_per_frame, "Points per frame")->capture_default_str();
  gen->add_option("--frames", ds.frame_count, "Frame count")->capture_default_str();
  gen->add_option("--fps", ds.frame_rate, "Frame rate")->capture_default_str();
  gen->add_option("--seed", ds.seed, "Scene seed")->capture_default_str();
  gen->add_option("--out", ds_out, "Dataset directory")->required();
  gen->add_option("--level", ds.levels, "Encrypted variant to produce (repeatable)");
  gen->add_option("--policy", ds.policy, "Policy for encrypted variants")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      ds.out_dir = ds_out;
      harness::gen_dataset(ds);
    };
  });

  std::string cloud, patterns = "FULL,XYZ,XY,X";
  std::size_t reps = 100;
  auto* bench = app.add_subcommand("bench-codec", "Time encrypt/decrypt per granularity");
  bench->add_option("--cloud", cloud, "PLY frame")->required();
  bench->add_option("--patterns", patterns, "Comma-separated granularities")->capture_default_str();
  bench->add_option("--reps", reps, "Repetitions")->capture_default_str();
  std::string bench_policy(harness::kBenchPolicy), bench_attrs(harness::kBenchAttributes);
  bench->add_option("--policy", bench_policy, "Access policy for the encrypted frames")->capture_default_str();
  bench->add_option("--attrs", bench_attrs, "Attributes of the decrypting key")->capture_default_str();
  bench->add_option("--out", out, "CSV output (default stdout)");
  bench->callback([&] {
    action = [&] {
      // Keep freed frame buffers in the heap so repetitions do not pay for fresh page faults.
      mallopt(M_MMAP_THRESHOLD, 256 << 20);
      mallopt(M_TRIM_THRESHOLD, 512 << 20);
      std::vector<Granularity> gs;
      for (const auto& p : split_list(patterns)) gs.push_back(parse_pattern(p));
      emit(harness::bench_csv(harness::bench_codec(read_file(cloud), gs, reps, bench_policy, bench_attrs)), out);
    };
  });

  std::string quality_patterns = "XYZ,XY,X,2X,5X";
  auto* quality = app.add_subcommand("quality-report", "Chamfer and Hausdorff distance of zero-filled views");
  quality->add_option("--cloud", cloud, "PLY frame")->required();
  quality->add_option("--patterns", quality_patterns, "Comma-separated patterns")->capture_default_str();
  quality->add_option("--out", out, "CSV output (default stdout)");
  quality->callback([&] {
    action = [&] {
      std::vector<Pattern> ps;
      for (const auto& p : split_list(quality_patterns)) ps.push_back(Pattern::parse(p));
      emit(harness::quality_report(read_file(cloud), ps), out);
    };
  });

  std::string scenario_file;
  auto* experiment = app.add_subcommand("run-experiment", "Run an origin/license/cache/clients scenario");
  experiment->add_option("--scenario", scenario_file, "Scenario file")->required();
  experiment->add_option("--out", out_dir, "Output directory")->required();
  experiment->callback([&] {
    action = [&] {
      harness::ExperimentOptions opts;
      opts.executable = fs::read_symlink("/proc/self/exe");
      opts.out_dir = out_dir;
      const auto report = harness::run_experiment(harness::load_scenario(scenario_file), opts);
      std::cout << harness::summary_csv(report.summary);
    };
  });

  // ---- services
  Listen listen;
  delivery::OriginOptions origin;
  std::string root;
  std::vector<std::string> delays;
  auto* serve_origin = app.add_subcommand("serve-origin", "Static origin server");
  serve_origin->add_option("--root", root, "Directory to serve")->required();
  serve_origin->add_option("--delay", delays, "PATH=MS extra latency (repeatable)");
  serve_origin->add_option("--throttle", origin.bytes_per_second, "Bytes per second per response, 0 = off");
  listen.add_to(serve_origin);
  serve_origin->callback([&] {
    action = [&] {
      origin.root = root;
      origin.host = listen.host;
      origin.port = listen.port;
      for (const auto& d : delays) {
        const std::size_t eq = d.rfind('=');
        if (eq == std::string::npos) throw Error(Errc::InvalidArgument, "--delay expects PATH=MS");
        origin.delays[d.substr(0, eq)] = std::chrono::milliseconds(std::stoll(d.substr(eq + 1)));
      }
      block_stop_signals();
      auto svc = delivery::serve_origin(origin);
      serve(svc, listen, "origin");
    };
  });

  std::string registry;
  std::uint32_t today = 0;
  auto* serve_license = app.add_subcommand("serve-license", "License service issuing user keys");
  serve_license->add_option("--registry", registry, "Client registry file")->required();
  serve_license->add_option("--pub", pub, "Authority public parameters")->required();
  serve_license->add_option("--master", master, "Master key")->required();
  serve_license->add_option("--today", today, "Date used for expiry checks, YYYYMMDD");
  listen.add_to(serve_license);
  serve_license->callback([&] {
    action = [&] {
      delivery::LicenseOptions lo;
      lo.registry = delivery::ClientRegistry::load(registry);
      lo.public_params = abe::parse_public_params(read_file(pub));
      lo.master_key = abe::parse_master_key(read_file(master));
      lo.host = listen.host;
      lo.port = listen.port;
      lo.today = today;
      block_stop_signals();
      auto svc = delivery::serve_license(lo);
      serve(svc, listen, "license");
    };
  });

  delivery::CacheOptions co;
  double capacity_mb = 0;
  std::uint64_t capacity_bytes = 0;
  std::string log_path, disk_dir;
  auto* cache = app.add_subcommand("cache", "Caching proxy with LRU eviction");
  cache->add_option("--upstream", co.upstream, "Origin base URL, e.g. http://127.0.0.1:8080")->required();
  auto* mb = cache->add_option("--capacity-mb", capacity_mb, "Capacity in MiB, 0 disables caching");
  auto* bytes = cache->add_option("--capacity-bytes", capacity_bytes, "Capacity in bytes");
  mb->excludes(bytes);
  cache->add_option("--log", log_path, "Access log CSV, appended per request");
  cache->add_option("--disk", disk_dir, "Keep cached bodies in this directory instead of memory");
  listen.add_to(cache);
  cache->callback([&] {
    action = [&] {
      co.capacity_bytes = bytes->count() ? capacity_bytes : static_cast<std::uint64_t>(std::llround(capacity_mb * 1048576.0));
      if (!log_path.empty()) co.log_path = log_path;
      if (!disk_dir.empty()) co.disk_dir = disk_dir;
      co.host = listen.host;
      co.port = listen.port;
      block_stop_signals();
      auto svc = delivery::run_cache(co);
      serve(svc, listen, "cache");
    };
  });

  player::PlayerConfig pc;
  std::string session_log;
  auto* stream = app.add_subcommand("stream", "Play a stream and log stalls and timings");
  stream->add_option("--URL", pc.mpd_url, "Manifest URL")->required();
  stream->add_option("--buffer", pc.buffer_seconds, "Playback buffer in seconds")->capture_default_str();
  stream->add_flag("--decrypt", pc.decrypt, "Decrypt frames");
  stream->add_option("--pub", pub, "Public parameters");
  stream->add_option("--priv", priv, "User key");
  stream->add_option("--download-queue", pc.download_queue, "Frames in flight")->capture_default_str();
  stream->add_option("--log", session_log, "Session CSV prefix");
  stream->callback([&] {
    action = [&] {
      if (!pub.empty()) pc.public_params = abe::parse_public_params(read_file(pub));
      if (!priv.empty()) pc.user_key = abe::parse_user_key(read_file(priv));
      const auto log = player::stream(pc);
      if (!session_log.empty()) player::write_session(log, session_log);
      std::cout << "frames=" << log.frames.size() << " stalls=" << log.stalls.size()
                << " rebuffering_pct=" << player::compute_rebuffering(log, log.manifest.duration_s()) << std::endl;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
