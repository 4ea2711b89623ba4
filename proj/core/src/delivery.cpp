#include "pcvault/delivery.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pcvault/bytes.hpp"
#include "pcvault/csv.hpp"
#include "pcvault/error.hpp"

namespace pcvault::delivery {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0, Clock::time_point t1 = Clock::now()) {
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

constexpr int kThreads = 64;
constexpr std::size_t kKeepAliveRequests = 1u << 20;

void reject(const httplib::Request&, httplib::Response& res) {
  res.status = 405;
  res.set_header("Allow", "GET");
}

void configure(httplib::Server& svr) {
  svr.new_task_queue = [] { return new httplib::ThreadPool(kThreads); };
  svr.set_keep_alive_max_count(kKeepAliveRequests);
  // Idle connections hold a worker; stop() waits for them.
  svr.set_keep_alive_timeout(2);
  svr.set_tcp_nodelay(true);
  // No SO_REUSEPORT: a taken port must fail to bind.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  // Routed (not pre-routed) so request bodies are drained off keep-alive streams.
  svr.Post(".*", reject);
  svr.Put(".*", reject);
  svr.Patch(".*", reject);
  svr.Delete(".*", reject);
  svr.Options(".*", reject);
}

bool safe_path(std::string_view p) {
  if (p.empty() || p.front() != '/') return false;
  std::size_t i = 1;
  while (i <= p.size()) {
    const std::size_t j = std::min(p.find('/', i), p.size());
    if (p.substr(i, j - i) == "..") return false;
    i = j + 1;
  }
  return p.find('\0') == std::string_view::npos && p.find('\\') == std::string_view::npos;
}

}  // namespace

std::string_view to_string(Outcome o) { return o == Outcome::Hit ? "HIT" : "MISS"; }

// ---------------------------------------------------------------- access log

const std::vector<std::string> kAccessLogHeader{"timestamp_ms", "path", "outcome", "response_time_ms", "bytes"};

namespace {
std::vector<std::string> record_fields(const AccessRecord& r) {
  return {csv::format_double(r.timestamp_ms), r.path, std::string(to_string(r.outcome)),
          csv::format_double(r.response_time_ms), std::to_string(r.bytes)};
}
}  // namespace

std::string access_log_csv(std::span<const AccessRecord> records) {
  csv::Table t{kAccessLogHeader, {}};
  for (const auto& r : records) t.rows.push_back(record_fields(r));
  return csv::write(t);
}

std::string access_log_line(const AccessRecord& r) {
  const std::string text = csv::write(csv::Table{kAccessLogHeader, {record_fields(r)}});
  return text.substr(text.find('\n') + 1);
}

std::vector<AccessRecord> parse_access_log(std::string_view text) {
  const auto t = csv::parse(text, &kAccessLogHeader);
  std::vector<AccessRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    AccessRecord r;
    r.timestamp_ms = csv::parse_double(row[0]);
    r.path = row[1];
    if (row[2] == "HIT") {
      r.outcome = Outcome::Hit;
    } else if (row[2] == "MISS") {
      r.outcome = Outcome::Miss;
    } else {
      throw Error(Errc::InvalidArgument, "access log outcome must be HIT or MISS: " + row[2]);
    }
    r.response_time_ms = csv::parse_double(row[3]);
    const long long b = csv::parse_int(row[4]);
    if (b < 0) throw Error(Errc::InvalidArgument, "negative byte count in access log");
    r.bytes = static_cast<std::uint64_t>(b);
    out.push_back(std::move(r));
  }
  return out;
}

double hit_rate(std::span<const AccessRecord> records) {
  if (records.empty()) throw Error(Errc::EmptyLog, "hit rate of an empty log");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.outcome == Outcome::Hit; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_response_ms(std::span<const AccessRecord> records) {
  if (records.empty()) throw Error(Errc::EmptyLog, "mean response time of an empty log");
  double sum = 0;
  for (const auto& r : records) sum += r.response_time_ms;
  return sum / static_cast<double>(records.size());
}

// ---------------------------------------------------------------- LRU

bool LruStore::touch(const std::string& key) {
  auto it = index_.find(key);
  if (it == index_.end()) return false;
  lru_.splice(lru_.end(), lru_, it->second);
  return true;
}

LruStore::Admission LruStore::admit(const std::string& key, std::uint64_t size) {
  Admission a;
  if (size > capacity_) {
    erase(key);
    return a;
  }
  erase(key);
  while (used_ + size > capacity_) {
    auto& victim = lru_.front();
    used_ -= victim.second;
    a.evicted.push_back(victim.first);
    index_.erase(victim.first);
    lru_.pop_front();
  }
  lru_.emplace_back(key, size);
  index_[key] = std::prev(lru_.end());
  used_ += size;
  a.admitted = true;
  return a;
}

bool LruStore::erase(const std::string& key) {
  auto it = index_.find(key);
  if (it == index_.end()) return false;
  used_ -= it->second->second;
  lru_.erase(it->second);
  index_.erase(it);
  return true;
}

std::vector<std::string> LruStore::order() const {
  std::vector<std::string> keys;
  keys.reserve(lru_.size());
  for (const auto& e : lru_) keys.push_back(e.first);
  return keys;
}

void LruStore::audit() const {
  std::uint64_t sum = 0;
  for (const auto& e : lru_) {
    auto it = index_.find(e.first);
    if (it == index_.end() || &*it->second != &e) throw std::logic_error("LRU index out of sync for " + e.first);
    sum += e.second;
  }
  if (index_.size() != lru_.size()) throw std::logic_error("LRU index size mismatch");
  if (sum != used_) throw std::logic_error("LRU byte count drifted");
  if (used_ > capacity_) throw std::logic_error("LRU capacity exceeded");
}

// ---------------------------------------------------------------- registry

bool valid_date(std::uint32_t d) {
  using namespace std::chrono;
  const year_month_day ymd{year(static_cast<int>(d / 10000)), month(d / 100 % 100), day(d % 100)};
  return d >= 10000101 && d <= 99991231 && ymd.ok();
}

std::uint32_t today_utc() {
  using namespace std::chrono;
  const year_month_day ymd{floor<days>(system_clock::now())};
  return static_cast<std::uint32_t>(static_cast<int>(ymd.year())) * 10000 + static_cast<unsigned>(ymd.month()) * 100 +
         static_cast<unsigned>(ymd.day());
}

namespace {
std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}
}  // namespace

void ClientRegistry::add(ClientEntry entry) {
  if (entry.id.empty() || entry.id.find_first_of(",;#\n ") != std::string::npos) {
    throw Error(Errc::InvalidArgument, "bad client id '" + entry.id + "'");
  }
  if (find(entry.id)) throw Error(Errc::InvalidArgument, "duplicate client id '" + entry.id + "'");
  if (!valid_date(entry.expiry)) {
    throw Error(Errc::InvalidArgument, "invalid expiry date " + std::to_string(entry.expiry) + " for " + entry.id);
  }
  if (entry.attributes.contains("exp")) {
    throw Error(Errc::InvalidArgument, "client " + entry.id + " sets exp directly; use the expiry column");
  }
  entries_.push_back(std::move(entry));
}

ClientRegistry ClientRegistry::parse(std::string_view text) {
  ClientRegistry reg;
  std::int64_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    try {
      const std::size_t c1 = line.find(',');
      const std::size_t c2 = line.rfind(',');
      if (c1 == std::string_view::npos || c1 == c2) throw Error(Errc::InvalidArgument, "expected id,attributes,expiry");
      ClientEntry e;
      e.id = std::string(trim(line.substr(0, c1)));
      e.attributes = abe::AttributeSet::parse(line.substr(c1 + 1, c2 - c1 - 1));
      const std::string_view date = trim(line.substr(c2 + 1));
      auto [p, ec] = std::from_chars(date.data(), date.data() + date.size(), e.expiry);
      if (ec != std::errc{} || p != date.data() + date.size() || date.size() != 8) {
        throw Error(Errc::InvalidArgument, "expiry must be YYYYMMDD, got '" + std::string(date) + "'");
      }
      reg.add(std::move(e));
    } catch (const Error& err) {
      throw Error(Errc::InvalidArgument, "registry line " + std::to_string(line_no) + ": " + err.what(), line_no);
    }
  }
  return reg;
}

ClientRegistry ClientRegistry::load(const std::filesystem::path& path) {
  const Bytes raw = read_file(path);
  return parse(as_chars(raw));
}

const ClientEntry* ClientRegistry::find(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::string ClientRegistry::to_text() const {
  std::string out;
  for (const auto& e : entries_) {
    out += e.id + "," + e.attributes.to_string() + "," + std::to_string(e.expiry) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- services

struct Service::Impl {
  httplib::Server server;
  std::string host;
  std::uint16_t port = 0;
  std::thread thread;
  std::mutex join_mu;

  void start(const std::string& h, std::uint16_t p) {
    host = h;
    if (p == 0) {
      const int got = server.bind_to_any_port(h);
      if (got <= 0) throw Error(Errc::BindFailure, "cannot bind " + h);
      port = static_cast<std::uint16_t>(got);
    } else {
      if (!server.bind_to_port(h, p)) throw Error(Errc::BindFailure, "cannot bind " + h + ":" + std::to_string(p));
      port = p;
    }
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  void stop() {
    server.stop();
    std::lock_guard lk(join_mu);
    if (thread.joinable()) thread.join();
  }
};

Service::Service(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Service::Service(Service&&) noexcept = default;
Service& Service::operator=(Service&& other) noexcept {
  if (this != &other) {
    if (impl_) impl_->stop();
    impl_ = std::move(other.impl_);
  }
  return *this;
}
Service::~Service() {
  if (impl_) impl_->stop();
}

std::uint16_t Service::port() const { return impl_->port; }
std::string Service::base_url() const { return "http://" + impl_->host + ":" + std::to_string(impl_->port); }
void Service::stop() { impl_->stop(); }
void Service::wait() {
  std::lock_guard lk(impl_->join_mu);
  if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------- origin

namespace {

void send_body(httplib::Response& res, std::string body, std::uint64_t bytes_per_second) {
  constexpr const char* kType = "application/octet-stream";
  if (bytes_per_second == 0) {
    res.set_content(std::move(body), kType);
    return;
  }
  auto shared = std::make_shared<std::string>(std::move(body));
  const std::size_t chunk = std::max<std::size_t>(1024, bytes_per_second / 100);
  res.set_content_provider(shared->size(), kType,
                           [shared, chunk, bytes_per_second](std::size_t offset, std::size_t length,
                                                             httplib::DataSink& sink) {
                             const std::size_t n = std::min(chunk, length);
                             const auto pause = std::chrono::duration<double>(static_cast<double>(n) /
                                                                              static_cast<double>(bytes_per_second));
                             std::this_thread::sleep_for(pause);
                             return sink.write(shared->data() + offset, n);
                           });
}

}  // namespace

Service serve_origin(const OriginOptions& opts) {
  std::error_code ec;
  if (!std::filesystem::is_directory(opts.root, ec)) {
    throw Error(Errc::IoError, "origin root is not a readable directory: " + opts.root.string());
  }
  auto impl = std::make_unique<Service::Impl>();
  configure(impl->server);
  const auto root = std::filesystem::canonical(opts.root);
  impl->server.Get(".*", [root, delays = opts.delays, bps = opts.bytes_per_second](const httplib::Request& req,
                                                                                   httplib::Response& res) {
    if (auto d = delays.find(req.path); d != delays.end()) std::this_thread::sleep_for(d->second);
    if (!safe_path(req.path)) {
      res.status = 404;
      return;
    }
    const auto file = root / req.path.substr(1);
    std::error_code fec;
    if (!std::filesystem::is_regular_file(file, fec)) {
      res.status = 404;
      return;
    }
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      res.status = 404;
      return;
    }
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.status = 200;
    send_body(res, std::move(body), bps);
  });
  impl->start(opts.host, opts.port);
  return Service(std::move(impl));
}

// ---------------------------------------------------------------- license

Service serve_license(const LicenseOptions& opts) {
  if (!opts.public_params.attribute_root) {
    throw Error(Errc::InvalidArgument, "license service needs authority-side public parameters");
  }
  auto impl = std::make_unique<Service::Impl>();
  configure(impl->server);
  auto shared = std::make_shared<LicenseOptions>(opts);
  auto rng_mu = std::make_shared<std::mutex>();

  impl->server.Get("/license", [shared, rng_mu](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("client")) {
      res.status = 400;
      res.set_content("missing client parameter\n", "text/plain");
      return;
    }
    const ClientEntry* entry = shared->registry.find(req.get_param_value("client"));
    if (!entry) {
      res.status = 403;
      res.set_content("unknown client\n", "text/plain");
      return;
    }
    const std::uint32_t today = shared->today != 0 ? shared->today : today_utc();
    if (entry->expiry < today) {
      res.status = 403;
      res.set_content("registration expired\n", "text/plain");
      return;
    }
    abe::AttributeSet attrs = entry->attributes;
    attrs.add_numeric("exp", entry->expiry);
    abe::UserKey key;
    {
      std::lock_guard lk(*rng_mu);
      key = abe::keygen(shared->public_params, shared->master_key, attrs);
    }
    const Bytes wire = abe::serialize(key);
    res.status = 200;
    res.set_content(std::string(as_chars(wire)), "application/octet-stream");
  });

  const Bytes params = abe::serialize(opts.public_params.client_view());
  impl->server.Get("/params", [body = std::string(as_chars(params))](const httplib::Request&, httplib::Response& res) {
    res.status = 200;
    res.set_content(body, "application/octet-stream");
  });

  impl->start(opts.host, opts.port);
  return Service(std::move(impl));
}

// ---------------------------------------------------------------- cache

namespace {

struct Fetch {
  int status = 0;  // 0 = upstream unreachable
  std::shared_ptr<const std::string> body;
};

struct Inflight {
  bool done = false;
  Fetch result;
  std::condition_variable cv;
};

// httplib::Client is not safe for concurrent requests; keep one per caller.
class ClientPool {
 public:
  explicit ClientPool(std::string upstream) : upstream_(std::move(upstream)) {}

  Fetch get(const std::string& path) {
    std::unique_ptr<httplib::Client> cli;
    {
      std::lock_guard lk(mu_);
      if (!idle_.empty()) {
        cli = std::move(idle_.back());
        idle_.pop_back();
      }
    }
    if (!cli) {
      cli = std::make_unique<httplib::Client>(upstream_);
      cli->set_keep_alive(true);
      cli->set_tcp_nodelay(true);
      cli->set_connection_timeout(5);
      cli->set_read_timeout(120);
    }
    Fetch f;
    if (auto res = cli->Get(path)) {
      f.status = res->status;
      f.body = std::make_shared<const std::string>(std::move(res->body));
    }
    std::lock_guard lk(mu_);
    idle_.push_back(std::move(cli));
    return f;
  }

 private:
  std::string upstream_;
  std::mutex mu_;
  std::vector<std::unique_ptr<httplib::Client>> idle_;
};

std::string disk_name(const std::string& path) {
  std::string out;
  for (char c : path) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ? c : '-';
  return out + "." + std::to_string(std::hash<std::string>{}(path));
}

}  // namespace

struct CacheService::State {
  explicit State(const CacheOptions& o) : opts(o), store(o.capacity_bytes), pool(o.upstream) {}

  CacheOptions opts;
  Clock::time_point started = Clock::now();

  mutable std::mutex mu;
  LruStore store;
  std::unordered_map<std::string, std::shared_ptr<const std::string>> bodies;  // memory mode
  std::unordered_map<std::string, std::shared_ptr<Inflight>> inflight;

  mutable std::mutex log_mu;
  std::vector<AccessRecord> records;
  std::ofstream log;

  ClientPool pool;

  void append(AccessRecord r) {
    std::lock_guard lk(log_mu);
    if (log.is_open()) {
      log << access_log_line(r);
      log.flush();
    }
    records.push_back(std::move(r));
  }

  std::shared_ptr<const std::string> load(const std::string& path) {
    if (!opts.disk_dir) return bodies.at(path);
    std::ifstream in(*opts.disk_dir / disk_name(path), std::ios::binary);
    return std::make_shared<const std::string>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  // Caller holds mu.
  void admit(const std::string& path, const std::shared_ptr<const std::string>& body) {
    const auto a = store.admit(path, body->size());
    for (const auto& k : a.evicted) {
      if (opts.disk_dir) {
        std::error_code ec;
        std::filesystem::remove(*opts.disk_dir / disk_name(k), ec);
      } else {
        bodies.erase(k);
      }
    }
    if (!a.admitted) return;
    if (opts.disk_dir) {
      std::ofstream out(*opts.disk_dir / disk_name(path), std::ios::binary | std::ios::trunc);
      out.write(body->data(), static_cast<std::streamsize>(body->size()));
    } else {
      bodies[path] = body;
    }
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    const auto t0 = Clock::now();
    const std::string& path = req.path;
    Outcome outcome = Outcome::Miss;
    Fetch f;

    if (opts.capacity_bytes == 0) {
      f = pool.get(path);
    } else {
      std::unique_lock lk(mu);
      if (store.touch(path)) {
        outcome = Outcome::Hit;
        f = {200, load(path)};
      } else if (auto it = inflight.find(path); it != inflight.end()) {
        auto waiter = it->second;
        waiter->cv.wait(lk, [&] { return waiter->done; });
        f = waiter->result;
        outcome = f.status == 200 ? Outcome::Hit : Outcome::Miss;
      } else {
        auto mine = std::make_shared<Inflight>();
        inflight.emplace(path, mine);
        lk.unlock();
        f = pool.get(path);
        lk.lock();
        if (f.status == 200) admit(path, f.body);
        mine->result = f;
        mine->done = true;
        inflight.erase(path);
        mine->cv.notify_all();
      }
    }

    std::uint64_t bytes = 0;
    if (f.status == 0) {
      res.status = 502;
      res.set_content("upstream unreachable\n", "text/plain");
    } else {
      res.status = f.status;
      if (f.status == 200) {
        bytes = f.body->size();
        res.set_content(*f.body, "application/octet-stream");
      }
    }
    res.set_header("X-Cache", std::string(to_string(outcome)));
    append({ms_since(started, t0), path, outcome, ms_since(t0), bytes});
  }
};

CacheService::CacheService(std::unique_ptr<Impl> impl, std::shared_ptr<State> state)
    : Service(std::move(impl)), state_(std::move(state)) {}

std::vector<AccessRecord> CacheService::records() const {
  std::lock_guard lk(state_->log_mu);
  return state_->records;
}

std::uint64_t CacheService::used_bytes() const {
  std::lock_guard lk(state_->mu);
  return state_->store.used_bytes();
}

std::vector<std::string> CacheService::resident() const {
  std::lock_guard lk(state_->mu);
  return state_->store.order();
}

void CacheService::audit() const {
  std::lock_guard lk(state_->mu);
  state_->store.audit();
}

CacheService run_cache(const CacheOptions& opts) {
  if (opts.upstream.empty()) throw Error(Errc::InvalidArgument, "cache needs an upstream URL");
  auto state = std::make_shared<CacheService::State>(opts);
  if (opts.disk_dir) std::filesystem::create_directories(*opts.disk_dir);
  if (opts.log_path) {
    const bool fresh = !std::filesystem::exists(*opts.log_path) || std::filesystem::file_size(*opts.log_path) == 0;
    state->log.open(*opts.log_path, std::ios::app);
    if (!state->log) throw Error(Errc::IoError, "cannot open access log " + opts.log_path->string());
    if (fresh) {
      const std::string header = access_log_csv({});
      state->log << header;
      state->log.flush();
    }
  }
  auto impl = std::make_unique<Service::Impl>();
  configure(impl->server);
  impl->server.Get(".*", [state](const httplib::Request& req, httplib::Response& res) { state->handle(req, res); });
  impl->start(opts.host, opts.port);
  return CacheService(std::move(impl), std::move(state));
}

}  // namespace pcvault::delivery
