#include "pcvault/harness.hpp"

#include <fcntl.h>
#include <httplib.h>
#include <signal.h>
#include <spawn.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "pcvault/abe.hpp"
#include "pcvault/codec.hpp"
#include "pcvault/csv.hpp"
#include "pcvault/error.hpp"
#include "pcvault/geometry.hpp"
#include "pcvault/manifest.hpp"
#include "pcvault/player.hpp"
#include "pcvault/scene.hpp"

extern char** environ;

namespace pcvault::harness {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

std::string read_text(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(as_chars(b));
}

void write_text(const fs::path& p, std::string_view text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, as_bytes(text));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// key=value lines; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> key_values(std::string_view text, Errc errc) {
  std::vector<std::pair<std::string, std::string>> out;
  std::int64_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(errc, "line " + std::to_string(line_no) + ": expected key=value", line_no);
    }
    out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- datasets

std::string level_dir(std::string_view level) {
  if (level == manifest::kLevelNone) return std::string(manifest::kLevelNone);
  return canonical_text(parse_pattern(level));
}

void gen_dataset(const DatasetOptions& opts) {
  if (opts.points_per_frame == 0 || opts.frame_count == 0 || opts.frame_rate == 0) {
    throw Error(Errc::InvalidArgument, "dataset parameters must be positive");
  }
  if (opts.out_dir.empty()) throw Error(Errc::InvalidArgument, "dataset needs an output directory");
  for (const auto& l : opts.levels) (void)level_dir(l);
  (void)abe::parse_policy(opts.policy);

  std::error_code ec;
  fs::create_directories(opts.out_dir / "NONE" / "frames", ec);
  fs::create_directories(opts.out_dir / "keys", ec);
  if (!fs::is_directory(opts.out_dir / "NONE" / "frames")) {
    throw Error(Errc::IoError, "cannot create dataset directory " + opts.out_dir.string());
  }

  const auto keys = abe::setup();
  write_file(opts.out_dir / "keys" / "public.key", abe::serialize(keys.public_params));
  write_file(opts.out_dir / "keys" / "public.client.key", abe::serialize(keys.public_params.client_view()));
  write_file(opts.out_dir / "keys" / "master.key", abe::serialize(keys.master_key));

  manifest::Manifest m;
  m.frame_rate = opts.frame_rate;
  m.frame_count = opts.frame_count;
  m.media_template = "frames/f_$Index$.ply";
  for (std::uint64_t i = 0; i < opts.frame_count; ++i) {
    const auto cloud = scene::generate_room(opts.points_per_frame, opts.seed, i);
    write_file(opts.out_dir / "NONE" / manifest::frame_url(m, i), ply::write_ply(cloud));
  }
  write_text(opts.out_dir / "NONE" / "manifest.mpd", manifest::generate_mpd(m));
  write_text(opts.out_dir / "dataset.txt", "points=" + std::to_string(opts.points_per_frame) +
                                               "\nframes=" + std::to_string(opts.frame_count) +
                                               "\nfps=" + std::to_string(opts.frame_rate) +
                                               "\nseed=" + std::to_string(opts.seed) + "\n");
  for (const auto& level : opts.levels) {
    if (level != manifest::kLevelNone) ensure_level(opts.out_dir, level, opts.policy);
  }
}

DatasetInfo read_dataset_info(const fs::path& dir) {
  DatasetInfo info;
  for (const auto& [k, v] : key_values(read_text(dir / "dataset.txt"), Errc::IoError)) {
    const long long n = csv::parse_int(v);
    if (n <= 0) throw Error(Errc::IoError, "dataset.txt: " + k + " must be positive");
    if (k == "points") info.points_per_frame = static_cast<std::size_t>(n);
    else if (k == "frames") info.frame_count = static_cast<std::uint64_t>(n);
    else if (k == "fps") info.frame_rate = static_cast<std::uint32_t>(n);
    else if (k == "seed") info.seed = static_cast<std::uint64_t>(n);
  }
  if (!info.points_per_frame || !info.frame_count || !info.frame_rate) {
    throw Error(Errc::IoError, "dataset.txt is incomplete in " + dir.string());
  }
  return info;
}

fs::path ensure_level(const fs::path& dir, std::string_view level, std::string_view policy) {
  const std::string name = level_dir(level);
  const fs::path out = dir / name;
  if (name == manifest::kLevelNone) return out;

  const fs::path mpd = out / "manifest.mpd";
  if (fs::exists(mpd)) {
    const auto existing = manifest::parse_mpd(read_text(mpd));
    if (existing.policy && *existing.policy == policy) return out;
  }
  const auto plain_m = manifest::parse_mpd(read_text(dir / "NONE" / "manifest.mpd"));
  const auto pp = abe::parse_public_params(read_file(dir / "keys" / "public.key"));
  const auto tree = abe::parse_policy(policy);
  const Granularity g = parse_pattern(level);

  manifest::Manifest m = plain_m;
  m.media_template = "frames/f_$Index$" + std::string(codec::kEncryptedExtension);
  m.encryption_level = name;
  m.policy = std::string(policy);
  fs::create_directories(out / "frames");
  for (std::uint64_t i = 0; i < m.frame_count; ++i) {
    const Bytes plain = read_file(dir / "NONE" / manifest::frame_url(plain_m, i));
    write_file(out / manifest::frame_url(m, i), codec::encrypt_frame(plain, g, pp, tree));
  }
  write_text(mpd, manifest::generate_mpd(m));
  return out;
}

// ---------------------------------------------------------------- benches

Stats summarize(std::vector<double> s) {
  if (s.empty()) throw Error(Errc::InvalidArgument, "no samples");
  std::sort(s.begin(), s.end());
  Stats st;
  double sum = 0;
  for (double v : s) sum += v;
  st.mean = sum / static_cast<double>(s.size());
  const std::size_t n = s.size();
  st.median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  st.p95 = s[std::max<std::size_t>(rank, 1) - 1];
  return st;
}

std::vector<BenchRow> bench_codec(ByteView ply, std::span<const Granularity> granularities, std::size_t repetitions,
                                  std::string_view policy_text, std::string_view attributes) {
  if (repetitions < 1) throw Error(Errc::InvalidArgument, "repetitions must be at least 1");
  const auto policy = abe::parse_policy(policy_text);
  const auto attrs = abe::AttributeSet::parse(attributes);
  if (!abe::eval_policy(policy, attrs)) {
    throw Error(Errc::InvalidArgument, "benchmark attributes do not satisfy '" + policy.to_string() + "'");
  }
  std::vector<Granularity> list(granularities.begin(), granularities.end());
  if (std::find(list.begin(), list.end(), Granularity{FullFrame{}}) == list.end()) list.insert(list.begin(), FullFrame{});

  const auto keys = abe::setup();
  const auto key = abe::keygen(keys.public_params, keys.master_key, attrs);
  using ms = std::chrono::duration<double, std::milli>;

  struct Timing {
    std::string name;
    Stats enc, dec;
  };
  std::vector<Timing> timings;
  for (const auto& g : list) {
    std::vector<double> enc, dec;
    enc.reserve(repetitions);
    dec.reserve(repetitions);
    for (std::size_t r = 0; r < repetitions; ++r) {
      auto t0 = Clock::now();
      const Bytes e = codec::encrypt_frame(ply, g, keys.public_params, policy);
      auto t1 = Clock::now();
      const Bytes d = codec::decrypt_frame(e, key);
      auto t2 = Clock::now();
      if (d.size() != ply.size()) throw Error(Errc::IntegrityFailure, "benchmark roundtrip changed the frame");
      enc.push_back(ms(t1 - t0).count());
      dec.push_back(ms(t2 - t1).count());
    }
    timings.push_back({canonical_text(g), summarize(std::move(enc)), summarize(std::move(dec))});
  }

  const auto full = std::find_if(timings.begin(), timings.end(), [](const auto& t) { return t.name == "FULL"; });
  std::vector<BenchRow> rows;
  for (const auto& t : timings) {
    rows.push_back({t.name, "encrypt", t.enc.mean, t.enc.median, t.enc.p95, 100.0 * (1.0 - t.enc.median / full->enc.median)});
    rows.push_back({t.name, "decrypt", t.dec.mean, t.dec.median, t.dec.p95, 100.0 * (1.0 - t.dec.median / full->dec.median)});
  }
  return rows;
}

namespace {
const std::vector<std::string> kBenchHeader{"pattern", "op", "mean_ms", "median_ms", "p95_ms", "reduction_vs_full_pct"};
const std::vector<std::string> kSummaryHeader{"metric", "scope", "value"};
}  // namespace

std::string bench_csv(std::span<const BenchRow> rows) {
  csv::Table t{kBenchHeader, {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.pattern, r.op, csv::format_double(r.mean_ms), csv::format_double(r.median_ms),
                      csv::format_double(r.p95_ms), csv::format_double(r.reduction_vs_full_pct)});
  }
  return csv::write(t);
}

std::vector<BenchRow> parse_bench_csv(std::string_view text) {
  const auto t = csv::parse(text, &kBenchHeader);
  std::vector<BenchRow> rows;
  for (const auto& r : t.rows) {
    rows.push_back({r[0], r[1], csv::parse_double(r[2]), csv::parse_double(r[3]), csv::parse_double(r[4]),
                    csv::parse_double(r[5])});
  }
  return rows;
}

std::string quality_report(ByteView ply, std::span<const Pattern> patterns) {
  const auto rows = geometry::obfuscation_report(ply::parse_ply(ply).cloud, patterns);
  return geometry::report_csv(rows);
}

// ---------------------------------------------------------------- scenarios

std::uint64_t Scenario::cache_bytes() const { return static_cast<std::uint64_t>(std::llround(cache_mb * 1048576.0)); }

Scenario parse_scenario(std::string_view text, const fs::path& base_dir) {
  Scenario s;
  std::map<std::string, std::string> seen;
  auto bad = [](const std::string& key, const std::string& why) {
    return Error(Errc::ScenarioError, key + ": " + why);
  };
  auto positive_int = [&](const std::string& k, const std::string& v) {
    long long n = 0;
    try {
      n = csv::parse_int(v);
    } catch (const Error&) {
      throw bad(k, "not an integer: " + v);
    }
    if (n <= 0) throw bad(k, "must be positive");
    return static_cast<std::uint64_t>(n);
  };
  auto number = [&](const std::string& k, const std::string& v, bool allow_zero) {
    double d = 0;
    try {
      d = csv::parse_double(v);
    } catch (const Error&) {
      throw bad(k, "not a number: " + v);
    }
    if (!std::isfinite(d) || d < 0 || (!allow_zero && d == 0)) throw bad(k, "out of range: " + v);
    return d;
  };

  for (const auto& [k, v] : key_values(text, Errc::ScenarioError)) {
    if (!seen.emplace(k, v).second) throw bad(k, "given twice");
    if (k == "clients") {
      s.clients = positive_int(k, v);
    } else if (k == "lambda") {
      s.lambda_s = number(k, v, false);
    } else if (k == "buffer") {
      s.buffer_s = number(k, v, false);
    } else if (k == "queue") {
      s.queue = positive_int(k, v);
    } else if (k == "level") {
      try {
        s.level = level_dir(v);
      } catch (const Error& e) {
        throw bad(k, e.what());
      }
    } else if (k == "policy") {
      try {
        (void)abe::parse_policy(v);
      } catch (const Error& e) {
        throw bad(k, e.what());
      }
      s.policy = v;
    } else if (k == "cache_mb") {
      s.cache_mb = number(k, v, true);
    } else if (k == "warmup") {
      if (v != "true" && v != "false") throw bad(k, "expected true or false");
      s.warmup = v == "true";
    } else if (k == "dataset") {
      if (v.empty()) throw bad(k, "empty path");
      s.dataset = fs::path(v).is_relative() && !base_dir.empty() ? base_dir / v : fs::path(v);
    } else if (k == "seed") {
      long long n = 0;
      try {
        n = csv::parse_int(v);
      } catch (const Error&) {
        throw bad(k, "not an integer");
      }
      if (n < 0) throw bad(k, "must be non-negative");
      s.seed = static_cast<std::uint64_t>(n);
    } else if (k == "client_attrs") {
      try {
        (void)abe::AttributeSet::parse(v);
      } catch (const Error& e) {
        throw bad(k, e.what());
      }
      s.client_attrs = v;
    } else if (k == "today") {
      const auto d = positive_int(k, v);
      if (d > 99991231 || !delivery::valid_date(static_cast<std::uint32_t>(d))) throw bad(k, "not a YYYYMMDD date");
      s.today = static_cast<std::uint32_t>(d);
    } else {
      throw bad(k, "unknown key");
    }
  }
  if (s.dataset.empty()) throw Error(Errc::ScenarioError, "dataset is required");
  if (s.level != manifest::kLevelNone && !s.policy) throw Error(Errc::ScenarioError, "an encrypted level needs a policy");
  return s;
}

Scenario load_scenario(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw Error(Errc::ScenarioError, e.what());
  }
  return parse_scenario(text, path.parent_path());
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  csv::Table t{kSummaryHeader, {}};
  for (const auto& r : rows) t.rows.push_back({r.metric, r.scope, csv::format_double(r.value)});
  return csv::write(t);
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
  const auto t = csv::parse(text, &kSummaryHeader);
  std::vector<SummaryRow> rows;
  for (const auto& r : t.rows) rows.push_back({r[0], r[1], csv::parse_double(r[2])});
  return rows;
}

std::vector<std::string> ExperimentReport::normalized_requests() const {
  std::vector<std::string> out;
  for (const auto& r : measured.records) {
    std::string p = r.path;
    const std::size_t second = p.find('/', 1);
    if (second != std::string::npos) p = p.substr(second);
    if (const std::size_t dot = p.rfind('.'); dot != std::string::npos && p.find('/', dot) == std::string::npos) {
      p = p.substr(0, dot);
    }
    out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- processes

namespace {

struct Exit {
  int code = -1;  // exit status, or 128 + signal
  double cpu_s = 0.0;
};

class Child {
 public:
  Child(const fs::path& exe, const std::vector<std::string>& args, const fs::path& log) : name_(args.at(0)) {
    std::vector<std::string> argv_s{exe.string()};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_s) argv.push_back(a.data());
    argv.push_back(nullptr);

    fs::create_directories(log.parent_path());
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    const std::string log_s = log.string();
    posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log_s.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    sigset_t none, defaults;
    sigemptyset(&none);
    sigemptyset(&defaults);
    sigaddset(&defaults, SIGTERM);
    sigaddset(&defaults, SIGINT);
    sigaddset(&defaults, SIGPIPE);
    posix_spawnattr_setsigmask(&attr, &none);
    posix_spawnattr_setsigdefault(&attr, &defaults);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETSIGDEF);
    const int rc = posix_spawn(&pid_, argv_s[0].c_str(), &fa, &attr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    posix_spawnattr_destroy(&attr);
    if (rc != 0) {
      pid_ = -1;
      throw Error(Errc::ServiceStartFailure, "cannot spawn " + exe.string() + " " + name_ + ": " + std::strerror(rc));
    }
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;
  ~Child() {
    if (pid_ > 0 && !exit_) {
      ::kill(pid_, SIGKILL);
      wait();
    }
  }

  pid_t pid() const { return pid_; }
  const std::string& name() const { return name_; }

  // Non-blocking; true once the child has exited.
  bool exited() {
    if (exit_) return true;
    int status = 0;
    rusage ru{};
    if (::wait4(pid_, &status, WNOHANG, &ru) == pid_) record(status, ru);
    return exit_.has_value();
  }

  Exit wait() {
    while (!exit_) {
      int status = 0;
      rusage ru{};
      const pid_t r = ::wait4(pid_, &status, 0, &ru);
      if (r == pid_) record(status, ru);
      else if (r < 0 && errno != EINTR) exit_ = Exit{};
    }
    return *exit_;
  }

  Exit terminate() {
    if (!exited()) ::kill(pid_, SIGTERM);
    return wait();
  }

 private:
  void record(int status, const rusage& ru) {
    Exit e;
    e.code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    auto sec = [](const timeval& tv) { return static_cast<double>(tv.tv_sec) + static_cast<double>(tv.tv_usec) / 1e6; };
    e.cpu_s = sec(ru.ru_utime) + sec(ru.ru_stime);
    exit_ = e;
  }

  std::string name_;
  pid_t pid_ = -1;
  std::optional<Exit> exit_;
};

// Per-process CPU seconds from /proc, sampled once a second.
class CpuSampler {
 public:
  explicit CpuSampler(fs::path out) : out_(std::move(out)), started_(Clock::now()) {
    thread_ = std::thread([this] { loop(); });
  }
  ~CpuSampler() { stop(); }

  void watch(pid_t pid, std::string label) {
    std::lock_guard lk(mu_);
    watched_.emplace_back(pid, std::move(label));
  }
  void forget(pid_t pid) {
    std::lock_guard lk(mu_);
    std::erase_if(watched_, [&](const auto& w) { return w.first == pid; });
  }
  void stop() {
    {
      std::lock_guard lk(mu_);
      if (done_) return;
      done_ = true;
    }
    cv_.notify_all();
    thread_.join();
    write_file(out_, as_bytes(csv::write(table_)));
  }

 private:
  static std::optional<double> cpu_seconds(pid_t pid) {
    std::ifstream in("/proc/" + std::to_string(pid) + "/stat");
    std::string line;
    if (!std::getline(in, line)) return std::nullopt;
    const std::size_t close = line.rfind(')');
    if (close == std::string::npos) return std::nullopt;
    std::istringstream rest(line.substr(close + 2));
    std::string field;
    unsigned long long utime = 0, stime = 0;
    // Fields after the command name start at 3 (state); utime is 14.
    for (int i = 3; i <= 15 && rest >> field; ++i) {
      if (i == 14) utime = std::stoull(field);
      if (i == 15) stime = std::stoull(field);
    }
    return static_cast<double>(utime + stime) / static_cast<double>(::sysconf(_SC_CLK_TCK));
  }

  void loop() {
    std::unique_lock lk(mu_);
    while (!done_) {
      const double t = std::chrono::duration<double>(Clock::now() - started_).count();
      for (const auto& [pid, label] : watched_) {
        if (auto cpu = cpu_seconds(pid)) table_.rows.push_back({csv::format_double(t), label, csv::format_double(*cpu)});
      }
      cv_.wait_for(lk, std::chrono::seconds(1), [&] { return done_; });
    }
  }

  fs::path out_;
  Clock::time_point started_;
  csv::Table table_{{"t_s", "process", "cpu_s"}, {}};
  std::mutex mu_;
  std::condition_variable cv_;
  bool done_ = false;
  std::vector<std::pair<pid_t, std::string>> watched_;
  std::thread thread_;
};

std::uint16_t await_port(Child& child, const fs::path& port_file, std::chrono::milliseconds timeout,
                         const fs::path& log) {
  const auto deadline = Clock::now() + timeout;
  while (Clock::now() < deadline) {
    std::error_code ec;
    if (fs::exists(port_file, ec)) {
      const std::string text(trim(read_text(port_file)));
      const long long p = csv::parse_int(text);
      if (p > 0 && p < 65536) return static_cast<std::uint16_t>(p);
    }
    if (child.exited()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  std::string tail;
  std::error_code ec;
  if (fs::exists(log, ec)) tail = read_text(log);
  throw Error(Errc::ServiceStartFailure, child.name() + " did not start: " + tail);
}

std::string fetch_to(const std::string& base, const std::string& path, const fs::path& out) {
  httplib::Client cli(base);
  cli.set_read_timeout(30);
  auto res = cli.Get(path);
  if (!res || res->status != 200) {
    throw Error(Errc::ServiceStartFailure,
                "GET " + base + path + " failed" + (res ? " with " + std::to_string(res->status) : std::string()));
  }
  write_file(out, as_bytes(res->body));
  return res->body;
}

std::vector<delivery::AccessRecord> read_access_log(const fs::path& p) {
  std::error_code ec;
  if (!fs::exists(p, ec)) return {};
  return delivery::parse_access_log(read_text(p));
}

}  // namespace

ExperimentReport run_experiment(const Scenario& scenario, const ExperimentOptions& opts) {
  if (opts.executable.empty() || !fs::exists(opts.executable)) {
    throw Error(Errc::ServiceStartFailure, "pcvault executable not found: " + opts.executable.string());
  }
  if (opts.out_dir.empty()) throw Error(Errc::InvalidArgument, "experiment needs an output directory");
  DatasetInfo info;
  try {
    info = read_dataset_info(scenario.dataset);
  } catch (const Error& e) {
    throw Error(Errc::ScenarioError, "dataset " + scenario.dataset.string() + ": " + e.what());
  }
  const std::string level = level_dir(scenario.level);
  ensure_level(scenario.dataset, level, scenario.policy.value_or(""));
  const bool encrypted = level != manifest::kLevelNone;

  const fs::path out = opts.out_dir;
  fs::create_directories(out / "logs");
  fs::create_directories(out / "keys");
  const fs::path exe = fs::absolute(opts.executable);
  const fs::path dataset = fs::absolute(scenario.dataset);

  ExperimentReport report;
  report.scenario = scenario;
  CpuSampler sampler(out / "cpu_trace.csv");

  auto start_service = [&](const std::string& name, std::vector<std::string> args) {
    const fs::path port_file = out / "logs" / (name + ".port");
    std::error_code ec;
    fs::remove(port_file, ec);
    args.insert(args.end(), {"--host", "127.0.0.1", "--port", "0", "--port-file", port_file.string()});
    const fs::path log = out / "logs" / (name + ".log");
    auto child = std::make_unique<Child>(exe, args, log);
    const std::uint16_t port = await_port(*child, port_file, opts.service_timeout, log);
    sampler.watch(child->pid(), name);
    return std::make_pair(std::move(child), "http://127.0.0.1:" + std::to_string(port));
  };

  // Registry: every client gets the scenario attributes.
  std::string registry;
  for (std::size_t i = 0; i < scenario.clients; ++i) {
    registry += "client-" + std::to_string(i) + "," + scenario.client_attrs + ",20991231\n";
  }
  write_text(out / "registry.txt", registry);

  auto [origin, origin_url] = start_service("origin", {"serve-origin", "--root", dataset.string()});
  std::vector<std::string> license_args{"serve-license",  "--registry", (out / "registry.txt").string(),
                                        "--pub",          (dataset / "keys" / "public.key").string(),
                                        "--master",       (dataset / "keys" / "master.key").string()};
  if (scenario.today) license_args.insert(license_args.end(), {"--today", std::to_string(scenario.today)});
  auto [license, license_url] = start_service("license", license_args);
  const fs::path access_log = out / "cache_access.csv";
  std::error_code rm_ec;
  fs::remove(access_log, rm_ec);
  auto [cache, cache_url] = start_service(
      "cache", {"cache", "--upstream", origin_url, "--capacity-bytes", std::to_string(scenario.cache_bytes()), "--log",
                access_log.string()});

  if (encrypted) {
    fetch_to(license_url, "/params", out / "keys" / "params.key");
    for (std::size_t i = 0; i < scenario.clients; ++i) {
      const std::string id = "client-" + std::to_string(i);
      fetch_to(license_url, "/license?client=" + id, out / "keys" / (id + ".key"));
    }
  }

  const auto offsets = player::schedule_poisson(scenario.clients, scenario.lambda_s, scenario.seed);
  const double media_s = static_cast<double>(info.frame_count) / info.frame_rate;
  const std::string mpd_url = cache_url + "/" + level + "/manifest.mpd";

  auto run_pass = [&](const std::string& name) {
    PassResult pass;
    pass.name = name;
    const std::size_t log_before = read_access_log(access_log).size();
    std::vector<std::unique_ptr<Child>> clients;
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < scenario.clients; ++i) {
      const std::string id = "client-" + std::to_string(i);
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(offsets[i])));
      std::vector<std::string> args{"stream",   "--URL", mpd_url, "--buffer", csv::format_double(scenario.buffer_s),
                                    "--download-queue", std::to_string(scenario.queue),
                                    "--log",    (out / name / id).string()};
      if (encrypted) {
        args.insert(args.end(), {"--decrypt", "--pub", (out / "keys" / "params.key").string(), "--priv",
                                 (out / "keys" / (id + ".key")).string()});
      }
      clients.push_back(std::make_unique<Child>(exe, args, out / name / (id + ".log")));
      sampler.watch(clients.back()->pid(), name + "/" + id);
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const Exit e = clients[i]->wait();
      sampler.forget(clients[i]->pid());
      ClientResult r;
      r.id = "client-" + std::to_string(i);
      r.start_offset_s = offsets[i];
      r.exit_code = e.code;
      r.cpu_s = e.cpu_s;
      if (e.code == 0) {
        try {
          const fs::path prefix = out / name / r.id;
          const auto stalls = player::parse_stalls_csv(read_text(prefix.string() + ".stalls.csv"));
          r.rebuffering_pct = player::compute_rebuffering(stalls, media_s);
          for (const auto& f : player::parse_frames_csv(read_text(prefix.string() + ".frames.csv"))) {
            r.frame_sequence.push_back(f.index);
          }
        } catch (const Error&) {
          r.exit_code = -1;
        }
      }
      pass.clients.push_back(std::move(r));
    }
    auto all = read_access_log(access_log);
    pass.records.assign(all.begin() + static_cast<std::ptrdiff_t>(std::min(log_before, all.size())), all.end());
    return pass;
  };

  if (scenario.warmup) report.warmup = run_pass("warmup");
  report.measured = run_pass("measured");

  for (auto* svc : {&cache, &license, &origin}) {
    sampler.forget((*svc)->pid());
    report.service_cpu_s[(*svc)->name() == "serve-origin"    ? "origin"
                         : (*svc)->name() == "serve-license" ? "license"
                                                             : "cache"] = (*svc)->terminate().cpu_s;
  }
  sampler.stop();

  // Summary.
  auto& rows = report.summary;
  const auto& recs = report.measured.records;
  if (!recs.empty()) {
    rows.push_back({"hit_rate", "cache", delivery::hit_rate(recs)});
    rows.push_back({"mean_response_ms", "cache", delivery::mean_response_ms(recs)});
  }
  rows.push_back({"requests", "cache", static_cast<double>(recs.size())});
  double reb_sum = 0, client_cpu = 0;
  std::size_t ok = 0, errors = 0;
  for (const auto& c : report.measured.clients) {
    client_cpu += c.cpu_s;
    if (c.rebuffering_pct) {
      rows.push_back({"rebuffering_pct", c.id, *c.rebuffering_pct});
      reb_sum += *c.rebuffering_pct;
      ++ok;
    } else {
      ++errors;
    }
  }
  if (ok) rows.push_back({"rebuffering_pct", "mean", reb_sum / static_cast<double>(ok)});
  rows.push_back({"client_errors", "clients", static_cast<double>(errors)});
  for (const auto& [svc, cpu] : report.service_cpu_s) rows.push_back({"cpu_s", svc, cpu});
  rows.push_back({"cpu_s", "clients", client_cpu});
  if (report.warmup && !report.warmup->records.empty()) {
    rows.push_back({"hit_rate", "warmup", delivery::hit_rate(report.warmup->records)});
  }
  write_text(out / "summary.csv", summary_csv(rows));
  return report;
}

}  // namespace pcvault::harness
