#include "pcvault/player.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "pcvault/codec.hpp"
#include "pcvault/csv.hpp"
#include "pcvault/error.hpp"
#include "pcvault/pattern.hpp"
#include "pcvault/ply.hpp"

namespace pcvault::player {

namespace {

using Clock = std::chrono::steady_clock;

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

Url split_url(std::string_view url) {
  constexpr std::string_view kScheme = "http://";
  if (url.substr(0, kScheme.size()) != kScheme) {
    throw Error(Errc::ManifestError, "only http:// URLs are supported: " + std::string(url));
  }
  const std::size_t slash = url.find('/', kScheme.size());
  if (slash == kScheme.size()) throw Error(Errc::ManifestError, "URL without host: " + std::string(url));
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

// Frame URL relative to the manifest's directory.
Url resolve(const Url& mpd, const std::string& ref) {
  if (ref.rfind("http://", 0) == 0) return split_url(ref);
  if (!ref.empty() && ref.front() == '/') return {mpd.origin, ref};
  return {mpd.origin, mpd.path.substr(0, mpd.path.rfind('/') + 1) + ref};
}

std::unique_ptr<httplib::Client> make_client(const std::string& origin) {
  auto c = std::make_unique<httplib::Client>(origin);
  c->set_keep_alive(true);
  c->set_tcp_nodelay(true);
  c->set_connection_timeout(5);
  c->set_read_timeout(120);
  return c;
}

std::string fetch(httplib::Client& cli, const std::string& path) {
  auto res = cli.Get(path);
  if (!res) throw Error(Errc::HttpError, "GET " + path + ": " + httplib::to_string(res.error()), 0);
  if (res->status != 200) {
    throw Error(Errc::HttpError, "GET " + path + " returned " + std::to_string(res->status), res->status);
  }
  return std::move(res->body);
}

struct Decoded {
  std::uint64_t index = 0;
  std::optional<ply::PointCloud> cloud;
  double download_ms = 0.0;
  double decrypt_ms = 0.0;
};

// Decrypts (when the level requires it) and decodes one frame.
class FrameDecoder {
 public:
  FrameDecoder(const PlayerConfig& cfg, const manifest::Manifest& m) : cfg_(cfg) {
    if (m.encrypted()) level_ = canonical_text(parse_pattern(m.encryption_level));
  }

  ply::PointCloud decode(std::uint64_t index, const std::string& body, double& decrypt_ms) const {
    const ByteView bytes = as_bytes(body);
    if (!level_) {
      auto parsed = ply::parse_ply(bytes);
      if (!parsed.tail.empty()) {
        throw Error(Errc::LevelMismatch, "frame " + std::to_string(index) + " carries data past its body under level NONE");
      }
      return std::move(parsed.cloud);
    }
    codec::FrameView view;
    try {
      view = codec::inspect_frame(bytes);
    } catch (const Error& e) {
      if (e.code() != Errc::MarkerNotFound) throw;
      throw Error(Errc::LevelMismatch, "frame " + std::to_string(index) + " has no encryption marker");
    }
    if (view.marker.pattern != *level_) {
      throw Error(Errc::LevelMismatch, "frame " + std::to_string(index) + " is encrypted as " + view.marker.pattern +
                                           ", manifest says " + *level_);
    }
    const auto t0 = Clock::now();
    Bytes plain;
    try {
      plain = codec::decrypt_frame(bytes, *cfg_.user_key);
    } catch (const Error& e) {
      throw Error(Errc::DecryptError, "frame " + std::to_string(index) + ": " + e.what());
    }
    decrypt_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return std::move(ply::parse_ply(plain).cloud);
  }

 private:
  const PlayerConfig& cfg_;
  std::optional<std::string> level_;
};

// Download -> decrypt pool -> reorder -> bounded buffer -> virtual clock.
class Session {
 public:
  Session(const PlayerConfig& cfg, manifest::Manifest m, Url mpd, Clock::time_point t0)
      : cfg_(cfg), mpd_(std::move(mpd)), t0_(t0), decoder_(cfg, m) {
    log_.manifest = std::move(m);
    const double fps = log_.manifest.frame_rate;
    log_.buffer_capacity = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.buffer_seconds * fps - 1e-9)));
    log_.frames.resize(log_.manifest.frame_count);
    for (std::uint64_t i = 0; i < log_.manifest.frame_count; ++i) log_.frames[i].index = i;
  }

  SessionLog run() {
    std::vector<std::thread> threads;
    threads.emplace_back([this] { guarded([this] { download(); }); });
    for (std::size_t w = 0; w < cfg_.download_queue; ++w) threads.emplace_back([this] { guarded([this] { work(); }); });
    threads.emplace_back([this] { guarded([this] { feed(); }); });
    guarded([this] { play(); });
    fail(nullptr);  // release any stage still waiting
    for (auto& t : threads) t.join();
    if (error_) std::rethrow_exception(error_);
    return std::move(log_);
  }

 private:
  double now_ms() const { return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count(); }

  template <typename F>
  void guarded(F&& f) {
    try {
      f();
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void fail(std::exception_ptr e) {
    {
      std::lock_guard lk(mu_);
      if (e && !error_) error_ = e;
      stop_ = true;
    }
    cv_.notify_all();
  }

  // One keep-alive connection; at most `download_queue` frames between
  // request and buffer entry.
  void download() {
    std::map<std::string, std::unique_ptr<httplib::Client>> clients;
    const std::uint64_t n = log_.manifest.frame_count;
    for (std::uint64_t i = 0; i < n; ++i) {
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || in_flight_ < cfg_.download_queue; });
        if (stop_) return;
        ++in_flight_;
      }
      const Url url = resolve(mpd_, manifest::frame_url(log_.manifest, i));
      auto& cli = clients[url.origin];
      if (!cli) cli = make_client(url.origin);
      const auto start = Clock::now();
      std::string body = fetch(*cli, url.path);
      const double dl = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      {
        std::lock_guard lk(mu_);
        jobs_.push_back({i, std::move(body), dl});
      }
      cv_.notify_all();
    }
  }

  void work() {
    while (true) {
      Job job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || !jobs_.empty(); });
        if (stop_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      Decoded d;
      d.index = job.index;
      d.download_ms = job.download_ms;
      d.cloud = decoder_.decode(job.index, job.body, d.decrypt_ms);
      {
        std::lock_guard lk(mu_);
        ready_.emplace(d.index, std::move(d));
      }
      cv_.notify_all();
    }
  }

  // Restores index order and pushes into the buffer, polling at 1 ms while
  // the buffer is full.
  void feed() {
    const std::uint64_t n = log_.manifest.frame_count;
    for (std::uint64_t next = 0; next < n; ++next) {
      Decoded d;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || ready_.count(next) != 0; });
        if (stop_) return;
        auto it = ready_.find(next);
        d = std::move(it->second);
        ready_.erase(it);
      }
      while (true) {
        std::unique_lock lk(mu_);
        if (stop_) return;
        if (buffer_.size() < log_.buffer_capacity) {
          const double t = now_ms();
          auto& rec = log_.frames[next];
          rec.download_ms = d.download_ms;
          rec.decrypt_ms = d.decrypt_ms;
          rec.enqueue_ms = t;
          buffer_.push_back({next, t, std::move(d.cloud)});
          if (buffer_.size() > log_.buffer_capacity) throw std::logic_error("playback buffer overflow");
          log_.occupancy.push_back({t, buffer_.size()});
          ++pushed_;
          --in_flight_;
          break;
        }
        lk.unlock();
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
      cv_.notify_all();
    }
  }

  void play() {
    const std::uint64_t n = log_.manifest.frame_count;
    const std::size_t start_level = static_cast<std::size_t>(std::min<std::uint64_t>(log_.buffer_capacity, n));
    const double period = 1000.0 / log_.manifest.frame_rate;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return stop_ || pushed_ >= start_level; });
      if (stop_) return;
      log_.playback_start_ms = log_.frames[start_level - 1].enqueue_ms;
    }
    double tick = log_.playback_start_ms;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::this_thread::sleep_until(t0_ + std::chrono::duration_cast<Clock::duration>(
                                              std::chrono::duration<double, std::milli>(tick)));
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return stop_ || !buffer_.empty(); });
      if (stop_) return;
      Buffered head = std::move(buffer_.front());
      buffer_.pop_front();
      if (head.index != i) throw std::logic_error("playback buffer out of order");
      // Empty at the tick: the stall lasts until the frame's arrival.
      double dequeue = tick;
      if (head.enqueue_ms > tick) {
        log_.stalls.push_back({tick, head.enqueue_ms - tick});
        dequeue = head.enqueue_ms;
      }
      log_.frames[i].dequeue_ms = dequeue;
      log_.occupancy.push_back({std::max(dequeue, now_ms()), buffer_.size()});
      tick = dequeue + period;
      lk.unlock();
      cv_.notify_all();
    }
  }

  struct Job {
    std::uint64_t index = 0;
    std::string body;
    double download_ms = 0.0;
  };
  struct Buffered {
    std::uint64_t index = 0;
    double enqueue_ms = 0.0;
    std::optional<ply::PointCloud> cloud;
  };

  const PlayerConfig& cfg_;
  Url mpd_;
  Clock::time_point t0_;
  FrameDecoder decoder_;
  SessionLog log_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::exception_ptr error_;
  std::size_t in_flight_ = 0;
  std::uint64_t pushed_ = 0;
  std::deque<Job> jobs_;
  std::map<std::uint64_t, Decoded> ready_;
  std::deque<Buffered> buffer_;
};

void check_config(const PlayerConfig& cfg) {
  if (!(cfg.buffer_seconds > 0) || !std::isfinite(cfg.buffer_seconds)) {
    throw Error(Errc::InvalidArgument, "buffer must be a positive number of seconds");
  }
  if (cfg.download_queue < 1) throw Error(Errc::InvalidArgument, "download queue must be at least 1");
  if (cfg.decrypt) {
    if (!cfg.public_params || !cfg.user_key) throw Error(Errc::InvalidArgument, "decryption needs --pub and --priv");
    if (!abe::verify_user_key(*cfg.public_params, *cfg.user_key)) {
      throw Error(Errc::DecryptError, "user key does not verify against the public parameters");
    }
  }
}

}  // namespace

SessionLog stream(const PlayerConfig& cfg) {
  const auto t0 = Clock::now();
  check_config(cfg);
  const Url mpd = split_url(cfg.mpd_url);
  manifest::Manifest m;
  {
    auto cli = make_client(mpd.origin);
    std::string text;
    try {
      text = fetch(*cli, mpd.path);
      m = manifest::parse_mpd(text);
      if (m.encrypted()) (void)parse_pattern(m.encryption_level);
    } catch (const Error& e) {
      throw Error(Errc::ManifestError, std::string("cannot load ") + cfg.mpd_url + ": " + e.what(), e.detail());
    }
  }
  if (m.encrypted() && !cfg.decrypt) {
    throw Error(Errc::InvalidArgument, "stream is encrypted (" + m.encryption_level + ") but decryption is disabled");
  }
  return Session(cfg, std::move(m), mpd, t0).run();
}

double compute_rebuffering(std::span<const StallRecord> stalls, double media_duration_s) {
  if (!(media_duration_s > 0)) throw Error(Errc::InvalidArgument, "media duration must be positive");
  double total = 0;
  for (const auto& s : stalls) total += s.duration_ms;
  return 100.0 * total / (media_duration_s * 1000.0);
}

double compute_rebuffering(const SessionLog& log, double media_duration_s) {
  return compute_rebuffering(log.stalls, media_duration_s);
}

std::vector<double> schedule_poisson(std::size_t n_clients, double lambda_s, std::uint64_t seed) {
  if (n_clients < 1) throw Error(Errc::InvalidArgument, "need at least one client");
  if (!(lambda_s > 0) || !std::isfinite(lambda_s)) throw Error(Errc::InvalidArgument, "lambda must be positive");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(1.0 / lambda_s);
  std::vector<double> out(n_clients, 0.0);
  for (std::size_t i = 1; i < n_clients; ++i) out[i] = out[i - 1] + gap(rng);
  return out;
}

namespace {
const std::vector<std::string> kFramesHeader{"index", "download_ms", "decrypt_ms", "enqueue_ms", "dequeue_ms"};
const std::vector<std::string> kStallsHeader{"start_ms", "duration_ms"};
const std::vector<std::string> kOccupancyHeader{"t_ms", "frames"};
}  // namespace

std::string frames_csv(std::span<const FrameRecord> frames) {
  csv::Table t{kFramesHeader, {}};
  for (const auto& f : frames) {
    t.rows.push_back({std::to_string(f.index), csv::format_double(f.download_ms), csv::format_double(f.decrypt_ms),
                      csv::format_double(f.enqueue_ms), csv::format_double(f.dequeue_ms)});
  }
  return csv::write(t);
}

std::vector<FrameRecord> parse_frames_csv(std::string_view text) {
  const auto t = csv::parse(text, &kFramesHeader);
  std::vector<FrameRecord> out;
  for (const auto& r : t.rows) {
    const long long idx = csv::parse_int(r[0]);
    if (idx < 0) throw Error(Errc::InvalidArgument, "negative frame index");
    out.push_back({static_cast<std::uint64_t>(idx), csv::parse_double(r[1]), csv::parse_double(r[2]),
                   csv::parse_double(r[3]), csv::parse_double(r[4])});
  }
  return out;
}

std::string stalls_csv(std::span<const StallRecord> stalls) {
  csv::Table t{kStallsHeader, {}};
  for (const auto& s : stalls) t.rows.push_back({csv::format_double(s.start_ms), csv::format_double(s.duration_ms)});
  return csv::write(t);
}

std::vector<StallRecord> parse_stalls_csv(std::string_view text) {
  const auto t = csv::parse(text, &kStallsHeader);
  std::vector<StallRecord> out;
  for (const auto& r : t.rows) out.push_back({csv::parse_double(r[0]), csv::parse_double(r[1])});
  return out;
}

std::string occupancy_csv(std::span<const OccupancySample> samples) {
  csv::Table t{kOccupancyHeader, {}};
  for (const auto& s : samples) t.rows.push_back({csv::format_double(s.t_ms), std::to_string(s.frames)});
  return csv::write(t);
}

void write_session(const SessionLog& log, const std::filesystem::path& prefix) {
  auto put = [&](const char* suffix, const std::string& text) {
    const std::filesystem::path p = prefix.string() + suffix;
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_file(p, as_bytes(text));
  };
  put(".frames.csv", frames_csv(log.frames));
  put(".stalls.csv", stalls_csv(log.stalls));
  put(".occupancy.csv", occupancy_csv(log.occupancy));
}

}  // namespace pcvault::player
