// Blob files plus an append-only metadata journal replayed at startup.
//
// Layout under the data directory:
//   blobs/<id>        container or P5 bytes
//   journal.jsonl     one JSON record per line: data/job upserts and removals
//
// Writes are two-phase: the blob is written to a temporary name, synced and
// renamed before the journal line that references it is appended. Startup
// drops metadata whose blob is missing and deletes blobs nothing references,
// so a crash at any point leaves "blob exists iff meta exists".
#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmrc/container.hpp"
#include "xmrc/solver.hpp"

namespace xmrc::service {

enum class JobStatus { Queued, Running, Done, Failed };
enum class Method { Pfista, PfistaParallel };

inline std::string_view status_name(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

inline std::string_view method_name(Method m) { return m == Method::Pfista ? "pfista" : "pfista_parallel"; }

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "pfista") return Method::Pfista;
  if (s == "pfista_parallel") return Method::PfistaParallel;
  return std::nullopt;
}

/// queued -> running -> {done, failed}, plus queued -> failed for jobs
/// cancelled before they start.
inline bool legal_transition(JobStatus from, JobStatus to) {
  switch (from) {
    case JobStatus::Queued: return to == JobStatus::Running || to == JobStatus::Failed;
    case JobStatus::Running: return to == JobStatus::Done || to == JobStatus::Failed;
    default: return false;
  }
}

struct DataMeta {
  std::string id;
  std::string owner;
  ContainerKind kind = ContainerKind::Image;
  std::size_t nc = 1;
  std::size_t ny = 0;
  std::size_t nx = 0;
  std::size_t size_bytes = 0;
  std::int64_t created_ms = 0;
};

struct JobRecord {
  std::string id;
  std::string owner;
  Method method = Method::Pfista;
  JobStatus status = JobStatus::Queued;
  SolverParams params;
  std::string data_id;
  std::string mask_id;
  std::optional<std::string> maps_id;
  std::optional<std::string> truth_id;
  int iteration = 0;
  double iterate_change = 0.0;
  std::optional<std::string> recon_id;
  std::optional<double> rlne;
  std::optional<std::string> errmap_id;
  std::string error;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::uint64_t seq = 0;      // submission order
  int attempts = 0;           // claims so far
  bool input_deleted = false;
  double solver_seconds = 0.0;
};

// ---- JSON ------------------------------------------------------------------

inline nlohmann::json params_to_json(const SolverParams& p) {
  return {{"lambda", p.lambda},
          {"lambda_mode", p.lambda_mode == LambdaMode::Absolute ? "absolute" : "relative"},
          {"gamma", p.gamma},
          {"max_iter", p.max_iter},
          {"tol", p.tol},
          {"frame", p.frame.kind == FrameKind::Identity ? "identity" : "haar"},
          {"levels", p.frame.levels}};
}

/// Missing keys take defaults; unknown keys or wrong types are InvalidParams.
/// Does not call validate().
inline SolverParams params_from_json(const nlohmann::json& j) {
  SolverParams p;
  if (j.is_null()) return p;
  if (!j.is_object()) raise(Errc::InvalidParams, "params must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lambda") {
        p.lambda = v.get<double>();
      } else if (key == "gamma") {
        p.gamma = v.get<double>();
      } else if (key == "max_iter") {
        p.max_iter = v.get<int>();
      } else if (key == "tol") {
        p.tol = v.get<double>();
      } else if (key == "levels") {
        p.frame.levels = v.get<int>();
      } else if (key == "lambda_mode") {
        const auto s = v.get<std::string>();
        if (s == "absolute") {
          p.lambda_mode = LambdaMode::Absolute;
        } else if (s == "relative") {
          p.lambda_mode = LambdaMode::RelativeToZeroFilled;
        } else {
          raise(Errc::InvalidParams, "lambda_mode must be absolute or relative");
        }
      } else if (key == "frame") {
        const auto s = v.get<std::string>();
        if (s == "haar") {
          p.frame.kind = FrameKind::UndecimatedHaar;
        } else if (s == "identity") {
          p.frame.kind = FrameKind::Identity;
        } else {
          raise(Errc::InvalidParams, "frame must be haar or identity");
        }
      } else {
        raise(Errc::InvalidParams, "unknown parameter: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::InvalidParams, std::string("bad parameter value: ") + e.what());
  }
  return p;
}

inline nlohmann::json to_json(const DataMeta& m) {
  return {{"data_id", m.id},   {"owner", m.owner}, {"kind", static_cast<int>(m.kind)},
          {"kind_name", kind_name(m.kind)},        {"nc", m.nc},
          {"ny", m.ny},        {"nx", m.nx},       {"size_bytes", m.size_bytes},
          {"created_ms", m.created_ms}};
}

inline DataMeta data_meta_from_json(const nlohmann::json& j) {
  DataMeta m;
  m.id = j.at("data_id");
  m.owner = j.at("owner");
  m.kind = static_cast<ContainerKind>(j.at("kind").get<int>());
  m.nc = j.at("nc");
  m.ny = j.at("ny");
  m.nx = j.at("nx");
  m.size_bytes = j.at("size_bytes");
  m.created_ms = j.at("created_ms");
  return m;
}

namespace detail {

inline nlohmann::json opt(const std::optional<std::string>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace detail

/// Full record including bookkeeping fields, as stored in the journal.
inline nlohmann::json to_json(const JobRecord& r) {
  return {{"job_id", r.id},
          {"owner", r.owner},
          {"method", method_name(r.method)},
          {"status", status_name(r.status)},
          {"params", params_to_json(r.params)},
          {"data_id", r.data_id},
          {"mask_id", r.mask_id},
          {"maps_id", detail::opt(r.maps_id)},
          {"truth_id", detail::opt(r.truth_id)},
          {"progress", {{"iteration", r.iteration}, {"iterate_change", r.iterate_change}}},
          {"recon_id", detail::opt(r.recon_id)},
          {"rlne", r.rlne ? nlohmann::json(*r.rlne) : nlohmann::json()},
          {"errmap_id", detail::opt(r.errmap_id)},
          {"error", r.error},
          {"created_ms", r.created_ms},
          {"updated_ms", r.updated_ms},
          {"seq", r.seq},
          {"attempts", r.attempts},
          {"input_deleted", r.input_deleted},
          {"solver_seconds", r.solver_seconds}};
}

inline JobRecord job_from_json(const nlohmann::json& j) {
  JobRecord r;
  r.id = j.at("job_id");
  r.owner = j.at("owner");
  r.method = parse_method(j.at("method").get<std::string>()).value();
  const auto s = j.at("status").get<std::string>();
  for (auto st : {JobStatus::Queued, JobStatus::Running, JobStatus::Done, JobStatus::Failed}) {
    if (status_name(st) == s) r.status = st;
  }
  r.params = params_from_json(j.at("params"));
  r.data_id = j.at("data_id");
  r.mask_id = j.at("mask_id");
  r.maps_id = detail::opt_string(j, "maps_id");
  r.truth_id = detail::opt_string(j, "truth_id");
  r.iteration = j.at("progress").at("iteration");
  r.iterate_change = j.at("progress").at("iterate_change");
  r.recon_id = detail::opt_string(j, "recon_id");
  if (!j.at("rlne").is_null()) r.rlne = j.at("rlne").get<double>();
  r.errmap_id = detail::opt_string(j, "errmap_id");
  r.error = j.at("error");
  r.created_ms = j.at("created_ms");
  r.updated_ms = j.at("updated_ms");
  r.seq = j.at("seq");
  r.attempts = j.at("attempts");
  r.input_deleted = j.at("input_deleted");
  r.solver_seconds = j.at("solver_seconds");
  return r;
}

// ---- files -----------------------------------------------------------------

namespace detail {

[[noreturn]] inline void raise_errno(const std::string& what, const std::filesystem::path& p) {
  raise(Errc::Io, what + " " + p.string() + ": " + std::strerror(errno));
}

inline void write_all(int fd, const void* data, std::size_t n, const std::filesystem::path& p) {
  const auto* c = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t w = ::write(fd, c, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      raise_errno("write", p);
    }
    c += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void fsync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

/// Write to <path>.tmp, fsync, rename over <path>.
inline void durable_replace(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
  if (fd < 0) raise_errno("open", tmp);
  try {
    write_all(fd, bytes.data(), bytes.size(), tmp);
    if (::fsync(fd) != 0) raise_errno("fsync", tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) raise_errno("rename", tmp);
  fsync_dir(path.parent_path());
}

inline void durable_append(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0600);
  if (fd < 0) raise_errno("open", path);
  try {
    write_all(fd, line.data(), line.size(), path);
    if (::fsync(fd) != 0) raise_errno("fsync", path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace detail

/// Not thread-safe; the service serializes access.
class Store {
 public:
  explicit Store(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(blob_dir());
    replay();
    collect_garbage();
    compact();
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::map<std::string, DataMeta>& data() const { return data_; }
  const std::map<std::string, JobRecord>& jobs() const { return jobs_; }
  std::uint64_t next_seq() { return next_seq_++; }

  const DataMeta* find_data(const std::string& id) const {
    const auto it = data_.find(id);
    return it == data_.end() ? nullptr : &it->second;
  }
  JobRecord* find_job(const std::string& id) {
    const auto it = jobs_.find(id);
    return it == jobs_.end() ? nullptr : &it->second;
  }

  void put_data(const DataMeta& meta, std::span<const std::uint8_t> bytes) {
    put_blob(meta.id, bytes);
    append({{"op", "data"}, {"meta", to_json(meta)}});
    data_[meta.id] = meta;
  }

  /// Journal first, then the blob; a crash in between leaves an orphan blob
  /// that the next startup removes.
  void erase_data(const std::string& id) {
    data_.erase(id);
    append({{"op", "rm_data"}, {"id", id}});
    compact();
    remove_blob(id);
  }

  /// Upsert; the journal keeps the latest full record.
  void put_job(const JobRecord& r) {
    append({{"op", "job"}, {"job", to_json(r)}});
    jobs_[r.id] = r;
  }

  void erase_job(const std::string& id) {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return;
    const JobRecord r = it->second;
    jobs_.erase(it);
    append({{"op", "rm_job"}, {"id", id}});
    compact();
    if (r.recon_id) remove_blob(*r.recon_id);
    if (r.errmap_id) remove_blob(*r.errmap_id);
  }

  void put_blob(const std::string& id, std::span<const std::uint8_t> bytes) {
    detail::durable_replace(blob_dir() / id, bytes);
  }
  std::vector<std::uint8_t> get_blob(const std::string& id) const { return read_file(blob_dir() / id); }
  bool has_blob(const std::string& id) const { return std::filesystem::exists(blob_dir() / id); }
  void remove_blob(const std::string& id) {
    std::error_code ec;
    std::filesystem::remove(blob_dir() / id, ec);
    detail::fsync_dir(blob_dir());
  }

 private:
  std::filesystem::path blob_dir() const { return dir_ / "blobs"; }
  std::filesystem::path journal() const { return dir_ / "journal.jsonl"; }

  void append(const nlohmann::json& rec) { detail::durable_append(journal(), rec.dump() + "\n"); }

  void replay() {
    std::ifstream in(journal());
    std::string line;
    while (std::getline(in, line)) {
      // a torn final line from a crash mid-append is skipped
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      try {
        const std::string op = j.at("op");
        if (op == "data") {
          auto m = data_meta_from_json(j.at("meta"));
          data_[m.id] = m;
        } else if (op == "rm_data") {
          data_.erase(j.at("id").get<std::string>());
        } else if (op == "job") {
          auto r = job_from_json(j.at("job"));
          next_seq_ = std::max(next_seq_, r.seq + 1);
          jobs_[r.id] = r;
        } else if (op == "rm_job") {
          jobs_.erase(j.at("id").get<std::string>());
        }
      } catch (const std::exception&) {
        continue;
      }
    }
  }

  void collect_garbage() {
    std::erase_if(data_, [&](const auto& kv) { return !has_blob(kv.first); });
    for (auto& [id, r] : jobs_) {
      // results referenced by a record whose blob vanished cannot be served
      if (r.status == JobStatus::Done && (!has_blob(*r.recon_id) || (r.errmap_id && !has_blob(*r.errmap_id)))) {
        r.status = JobStatus::Failed;
        r.error = "Io: result blob missing after restart";
        r.recon_id.reset();
        r.errmap_id.reset();
        r.rlne.reset();
      }
    }
    std::set<std::string> live;
    for (const auto& [id, m] : data_) live.insert(id);
    for (const auto& [id, r] : jobs_) {
      if (r.recon_id) live.insert(*r.recon_id);
      if (r.errmap_id) live.insert(*r.errmap_id);
    }
    for (const auto& entry : std::filesystem::directory_iterator(blob_dir())) {
      if (!live.contains(entry.path().filename().string())) std::filesystem::remove(entry.path());
    }
  }

  /// Rewrite the journal with only live records, so removed metadata does
  /// not linger on disk.
  void compact() {
    std::string text;
    for (const auto& [id, m] : data_) text += nlohmann::json{{"op", "data"}, {"meta", to_json(m)}}.dump() + "\n";
    for (const auto& [id, r] : jobs_) text += nlohmann::json{{"op", "job"}, {"job", to_json(r)}}.dump() + "\n";
    detail::durable_replace(journal(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  std::filesystem::path dir_;
  std::map<std::string, DataMeta> data_;
  std::map<std::string, JobRecord> jobs_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace xmrc::service
