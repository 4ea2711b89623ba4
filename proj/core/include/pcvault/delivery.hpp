#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pcvault/abe.hpp"
#include "pcvault/policy.hpp"

namespace pcvault::delivery {

enum class Outcome : std::uint8_t { Hit, Miss };
std::string_view to_string(Outcome o);

struct AccessRecord {
  double timestamp_ms = 0.0;  // since the cache started
  std::string path;
  Outcome outcome = Outcome::Miss;
  double response_time_ms = 0.0;
  std::uint64_t bytes = 0;

  bool operator==(const AccessRecord&) const = default;
};

// "timestamp_ms,path,outcome,response_time_ms,bytes"
extern const std::vector<std::string> kAccessLogHeader;
std::string access_log_csv(std::span<const AccessRecord> records);
std::string access_log_line(const AccessRecord& r);
std::vector<AccessRecord> parse_access_log(std::string_view text);

// 100 * hits / records. Throws EmptyLog.
double hit_rate(std::span<const AccessRecord> records);
// Throws EmptyLog.
double mean_response_ms(std::span<const AccessRecord> records);

// Byte-bounded LRU bookkeeping. Tracks keys and sizes only; bodies live with
// the caller. Not thread-safe.
class LruStore {
 public:
  explicit LruStore(std::uint64_t capacity_bytes) : capacity_(capacity_bytes) {}

  struct Admission {
    bool admitted = false;
    std::vector<std::string> evicted;  // least recent first
  };

  // Marks `key` most recently used. False if not resident.
  bool touch(const std::string& key);
  bool contains(const std::string& key) const { return index_.count(key) != 0; }

  // Inserts or resizes `key` as most recently used, evicting from the LRU
  // end until the capacity holds. Objects larger than the capacity are not
  // admitted and evict nothing.
  Admission admit(const std::string& key, std::uint64_t size);
  bool erase(const std::string& key);

  std::uint64_t used_bytes() const { return used_; }
  std::uint64_t capacity_bytes() const { return capacity_; }
  std::size_t size() const { return index_.size(); }
  // Resident keys, least recently used first.
  std::vector<std::string> order() const;
  // Throws std::logic_error if bookkeeping is inconsistent.
  void audit() const;

 private:
  using Entry = std::pair<std::string, std::uint64_t>;
  std::uint64_t capacity_;
  std::uint64_t used_ = 0;
  std::list<Entry> lru_;  // front = least recent
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

// YYYYMMDD helpers.
bool valid_date(std::uint32_t yyyymmdd);
std::uint32_t today_utc();

struct ClientEntry {
  std::string id;
  abe::AttributeSet attributes;
  std::uint32_t expiry = 0;
  bool operator==(const ClientEntry&) const = default;
};

// Lines of "id,attr1;attr2,expiryYYYYMMDD"; blank lines and '#' comments are
// skipped. Throws InvalidArgument with the 1-based line in detail().
class ClientRegistry {
 public:
  ClientRegistry() = default;
  static ClientRegistry parse(std::string_view text);
  static ClientRegistry load(const std::filesystem::path& path);

  void add(ClientEntry entry);
  const ClientEntry* find(std::string_view id) const;
  const std::vector<ClientEntry>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::vector<ClientEntry> entries_;
};

// A running HTTP service on its own accept thread. Stops on destruction.
class Service {
 public:
  struct Impl;
  explicit Service(std::unique_ptr<Impl> impl);
  Service(Service&&) noexcept;
  Service& operator=(Service&&) noexcept;
  ~Service();

  std::uint16_t port() const;
  std::string base_url() const;
  void stop();
  // Blocks until the service stops.
  void wait();

 protected:
  std::unique_ptr<Impl> impl_;
};

struct OriginOptions {
  std::filesystem::path root;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  // Extra latency before the response, per request path.
  std::map<std::string, std::chrono::milliseconds> delays;
  // Per-response throughput cap; 0 disables.
  std::uint64_t bytes_per_second = 0;
};

// Static GET server over `root`. Throws BindFailure.
Service serve_origin(const OriginOptions& opts);

struct LicenseOptions {
  ClientRegistry registry;
  abe::PublicParams public_params;
  abe::MasterKey master_key;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::uint32_t today = 0;  // 0 means the current UTC date
};

// GET /license?client=ID -> serialized UserKey carrying exp=<expiry>.
// GET /params -> serialized client-view PublicParams.
Service serve_license(const LicenseOptions& opts);

struct CacheOptions {
  std::string upstream;  // "http://host:port"
  std::uint64_t capacity_bytes = 0;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::optional<std::filesystem::path> log_path;  // appended per request
  std::optional<std::filesystem::path> disk_dir;  // bodies on disk instead of memory
};

// Caching proxy. Concurrent misses on one path share a single upstream
// fetch; the followers are logged as hits.
class CacheService : public Service {
 public:
  struct State;
  CacheService(std::unique_ptr<Impl> impl, std::shared_ptr<State> state);

  std::vector<AccessRecord> records() const;
  std::uint64_t used_bytes() const;
  std::vector<std::string> resident() const;  // least recent first
  void audit() const;

 private:
  std::shared_ptr<State> state_;
};

CacheService run_cache(const CacheOptions& opts);

}  // namespace pcvault::delivery
