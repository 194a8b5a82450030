#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "xmrc/demo.hpp"
#include "xmrc/metrics.hpp"
#include "xmrc/phantoms.hpp"
#include "xmrc/service/auth.hpp"
#include "xmrc/service/config.hpp"
#include "xmrc/service/store.hpp"
#include "xmrc/solver.hpp"

namespace xmrc::service {

/// Fully sampled center rows a parallel job needs before coil maps can be
/// estimated from the data itself.
inline constexpr std::size_t kMinAcsRows = 8;

using TransitionFn = std::function<void(const std::string& job_id, JobStatus from, JobStatus to)>;

struct ServiceOptions {
  Clock clock = system_clock();
  TransitionFn on_transition;  // called under the service lock
};

struct JobSubmission {
  Method method = Method::Pfista;
  std::string data_id;
  std::string mask_id;
  std::optional<std::string> maps_id;
  std::optional<std::string> truth_id;
  SolverParams params;
};

struct LoginResult {
  std::string token;
  std::int64_t expires_ms = 0;
};

struct DemoEntry {
  std::string name;
  ContainerKind kind;
  std::size_t nc, ny, nx, size_bytes;
};

class Service {
 public:
  explicit Service(ServiceConfig config, ServiceOptions options = {})
      : config_(std::move(config)),
        clock_(options.clock),
        on_transition_(std::move(options.on_transition)),
        auth_(config_.accounts, config_.token_ttl, clock_),
        store_(config_.data_dir) {
    for (auto& a : config_.accounts) a.password.clear();
    killed_ = std::vector<std::atomic<bool>>(config_.workers);
    for (std::size_t i = 0; i < config_.workers; ++i) workers_.emplace_back([this, i] { worker_main(i); });
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  /// Joins the workers. A job that is mid-solve is abandoned in the running
  /// state and re-claimed by the next process that opens the data directory.
  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) {
      if (w.joinable()) w.join();
    }
  }

  const ServiceConfig& config() const { return config_; }

  LoginResult login(const std::string& username, const std::string& password) {
    const auto t = auth_.login(username, password);
    return {t.value, to_ms(t.expires)};
  }

  std::string authenticate(const std::string& token) { return auth_.authenticate(token); }

  // ---- data ----------------------------------------------------------------

  DataMeta upload(const std::string& token, std::span<const std::uint8_t> bytes) {
    const auto owner = authenticate(token);
    if (bytes.size() > config_.max_upload_bytes) {
      raise(Errc::TooLarge, "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
    }
    ContainerHeader h;
    try {
      read_container(bytes);
      h = read_header(bytes);
    } catch (const Error& e) {
      raise(Errc::MalformedContainer, std::string(e.name()) + ": " + e.what());
    }
    DataMeta m{detail::random_hex(16), owner, h.kind, h.nc, h.ny, h.nx, bytes.size(), now_ms()};
    std::lock_guard lock(mu_);
    store_.put_data(m, bytes);
    return m;
  }

  DataMeta data_meta(const std::string& token, const std::string& id) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    return owned_data(owner, id);
  }

  std::vector<std::uint8_t> data_bytes(const std::string& token, const std::string& id) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    owned_data(owner, id);
    return store_.get_blob(id);
  }

  /// Removes bytes and metadata before returning. Queued jobs reading this
  /// blob are cancelled; running ones finish and have their results dropped.
  void delete_data(const std::string& token, const std::string& id) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    owned_data(owner, id);
    std::vector<std::string> affected;
    for (const auto& [jid, r] : store_.jobs()) {
      if (uses(r, id) && (r.status == JobStatus::Queued || r.status == JobStatus::Running)) affected.push_back(jid);
    }
    for (const auto& jid : affected) {
      JobRecord r = *store_.find_job(jid);
      r.input_deleted = true;
      if (r.status == JobStatus::Queued) {
        r.error = kCancelled;
        transition(r, JobStatus::Failed);
      } else {
        store_.put_job(r);
      }
    }
    store_.erase_data(id);
  }

  // ---- jobs ----------------------------------------------------------------

  std::string submit(const std::string& token, const JobSubmission& sub) {
    const auto owner = authenticate(token);
    std::unique_lock lock(mu_);
    const auto data = owned_data(owner, sub.data_id);
    const auto mask = owned_data(owner, sub.mask_id);
    const auto expected = sub.method == Method::Pfista ? ContainerKind::KSpace : ContainerKind::MultiCoilKSpace;
    require_kind(data, expected);
    require_kind(mask, ContainerKind::Mask);
    const Shape s{data.ny, data.nx};
    require_same_shape(s, Shape{mask.ny, mask.nx});
    if (sub.maps_id) {
      if (sub.method == Method::Pfista) raise(Errc::InvalidParams, "coil maps apply to pfista_parallel only");
      const auto maps = owned_data(owner, *sub.maps_id);
      require_kind(maps, ContainerKind::CoilMaps);
      require_same_shape(s, Shape{maps.ny, maps.nx});
      if (maps.nc != data.nc) raise(Errc::ShapeMismatch, "coil maps and k-space have different coil counts");
    }
    if (sub.truth_id) {
      const auto truth = owned_data(owner, *sub.truth_id);
      require_kind(truth, ContainerKind::Image);
      require_same_shape(s, Shape{truth.ny, truth.nx});
    }
    sub.params.validate();
    try {
      check_frame(sub.params.frame, s);
    } catch (const Error& e) {
      raise(Errc::InvalidParams, e.what());
    }
    if (sub.method == Method::PfistaParallel && !sub.maps_id) {
      const auto m = read_container_as<SamplingMask>(store_.get_blob(sub.mask_id));
      if (count_acs_rows(m) < kMinAcsRows) {
        raise(Errc::MissingACS, "no coil maps given and the mask has fewer than " + std::to_string(kMinAcsRows) +
                                    " fully sampled center rows");
      }
    }

    JobRecord r;
    r.id = detail::random_hex(16);
    r.owner = owner;
    r.method = sub.method;
    r.params = sub.params;
    r.data_id = sub.data_id;
    r.mask_id = sub.mask_id;
    r.maps_id = sub.maps_id;
    r.truth_id = sub.truth_id;
    r.created_ms = r.updated_ms = now_ms();
    r.seq = store_.next_seq();
    store_.put_job(r);
    lock.unlock();
    cv_.notify_one();
    return r.id;
  }

  JobRecord status(const std::string& token, const std::string& id) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    return owned_job(owner, id);
  }

  std::vector<std::uint8_t> fetch_result(const std::string& token, const std::string& id) {
    return result_blob(token, id, [](const JobRecord& r) { return r.recon_id; });
  }

  /// P5 image of ||truth| - |recon||; only for jobs submitted with a truth.
  std::vector<std::uint8_t> fetch_errormap(const std::string& token, const std::string& id) {
    return result_blob(token, id, [](const JobRecord& r) { return r.errmap_id; });
  }

  void delete_job(const std::string& token, const std::string& id) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    owned_job(owner, id);
    leases_.erase(id);
    store_.erase_job(id);
  }

  // ---- demo fixtures -------------------------------------------------------

  std::vector<DemoEntry> demo_list(const std::string& token) {
    authenticate(token);
    std::vector<DemoEntry> out;
    for (const auto& f : demo()) {
      const auto h = read_header(f.bytes);
      out.push_back({f.name, h.kind, h.nc, h.ny, h.nx, f.bytes.size()});
    }
    return out;
  }

  std::vector<std::uint8_t> demo_bytes(const std::string& token, const std::string& name) {
    authenticate(token);
    for (const auto& f : demo()) {
      if (f.name == name) return f.bytes;
    }
    raise(Errc::UnknownDataId, "no demo fixture named " + name);
  }

  // ---- worker control (tests, crash simulation) ----------------------------

  std::size_t worker_count() const { return workers_.size(); }

  /// The worker abandons its current job at the next iteration and exits,
  /// leaving the record running until the lease runs out.
  void kill_worker(std::size_t index) {
    killed_.at(index) = true;
    cv_.notify_all();
  }

  /// Index of the worker holding a live lease on the job, if any.
  std::optional<std::size_t> worker_of(const std::string& job_id) {
    std::lock_guard lock(mu_);
    const auto it = leases_.find(job_id);
    if (it == leases_.end()) return std::nullopt;
    return it->second.worker;
  }

 private:
  static constexpr const char* kCancelled = "cancelled: input deleted";

  struct Lease {
    std::uint64_t claim = 0;
    std::size_t worker = 0;
    std::chrono::steady_clock::time_point expires;
  };

  struct Abandoned {};

  struct Claim {
    std::string job_id;
    std::uint64_t claim = 0;
    JobRecord snapshot;
  };

  struct Outcome {
    std::vector<std::uint8_t> recon;
    std::optional<double> rlne;
    std::optional<std::vector<std::uint8_t>> errmap;
    double seconds = 0.0;
  };

  std::int64_t now_ms() const { return to_ms(clock_()); }
  static std::int64_t to_ms(std::chrono::system_clock::time_point t) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  }

  static bool uses(const JobRecord& r, const std::string& id) {
    return r.data_id == id || r.mask_id == id || r.maps_id == id || r.truth_id == id;
  }

  static void require_kind(const DataMeta& m, ContainerKind k) {
    if (m.kind != k) {
      raise(Errc::KindMismatch, "data " + m.id + " is " + std::string(kind_name(m.kind)) + ", expected " +
                                    std::string(kind_name(k)));
    }
  }

  DataMeta owned_data(const std::string& owner, const std::string& id) const {
    const auto* m = store_.find_data(id);
    if (!m) raise(Errc::UnknownDataId, "unknown data id " + id);
    if (m->owner != owner) raise(Errc::Unauthorized, "not the owner of " + id);
    return *m;
  }

  JobRecord owned_job(const std::string& owner, const std::string& id) {
    const auto* r = store_.find_job(id);
    if (!r) raise(Errc::UnknownJob, "unknown job id " + id);
    if (r->owner != owner) raise(Errc::Unauthorized, "not the owner of " + id);
    return *r;
  }

  template <class Pick>
  std::vector<std::uint8_t> result_blob(const std::string& token, const std::string& id, Pick pick) {
    const auto owner = authenticate(token);
    std::lock_guard lock(mu_);
    const auto r = owned_job(owner, id);
    if (r.status == JobStatus::Queued || r.status == JobStatus::Running) {
      raise(Errc::NotReady, "job is " + std::string(status_name(r.status)));
    }
    if (r.status == JobStatus::Failed) raise(Errc::JobFailed, r.error);
    const auto blob = pick(r);
    if (!blob) raise(Errc::UnknownJob, "job " + id + " has no error map (no truth supplied)");
    return store_.get_blob(*blob);
  }

  /// Caller holds mu_ and has filled the outcome fields of r.
  void transition(JobRecord r, JobStatus to) {
    const auto from = r.status;
    if (!legal_transition(from, to)) {
      throw std::logic_error("illegal job transition " + std::string(status_name(from)) + " -> " +
                             std::string(status_name(to)));
    }
    r.status = to;
    r.updated_ms = now_ms();
    store_.put_job(r);
    if (to != JobStatus::Running) leases_.erase(r.id);
    if (on_transition_) on_transition_(r.id, from, to);
  }

  const std::vector<DemoFixture>& demo() {
    std::call_once(demo_once_, [this] { demo_ = demo_fixtures(); });
    return demo_;
  }

  // ---- workers -------------------------------------------------------------

  /// Oldest job that is queued or running on an expired lease.
  std::optional<std::string> next_claimable() {
    const auto now = std::chrono::steady_clock::now();
    const JobRecord* best = nullptr;
    for (const auto& [id, r] : store_.jobs()) {
      bool open = r.status == JobStatus::Queued;
      if (r.status == JobStatus::Running) {
        const auto it = leases_.find(id);
        open = it == leases_.end() || it->second.expires <= now;
      }
      if (open && (!best || r.seq < best->seq)) best = &r;
    }
    if (!best) return std::nullopt;
    return best->id;
  }

  std::optional<Claim> claim(std::size_t worker) {
    std::unique_lock lock(mu_);
    const auto poll = std::min<std::chrono::milliseconds>(config_.lease_timeout, std::chrono::milliseconds(100));
    for (;;) {
      if (stopping_ || killed_[worker]) return std::nullopt;
      const auto id = next_claimable();
      if (!id) {
        cv_.wait_for(lock, poll);
        continue;
      }
      JobRecord r = *store_.find_job(*id);
      if (r.input_deleted) {
        leases_.erase(r.id);
        r.error = kCancelled;
        transition(r, JobStatus::Failed);
        continue;
      }
      const std::uint64_t c = ++claims_;
      leases_[r.id] = {c, worker, std::chrono::steady_clock::now() + config_.lease_timeout};
      r.attempts += 1;
      if (r.status == JobStatus::Queued) {
        transition(r, JobStatus::Running);
      } else {
        r.updated_ms = now_ms();
        store_.put_job(r);
      }
      return Claim{r.id, c, *store_.find_job(r.id)};
    }
  }

  bool holds(const Claim& c) const {
    const auto it = leases_.find(c.job_id);
    return it != leases_.end() && it->second.claim == c.claim;
  }

  void worker_main(std::size_t index) {
    while (auto c = claim(index)) {
      std::optional<Outcome> outcome;
      std::string failure;
      try {
        outcome = execute(*c, index);
      } catch (const Abandoned&) {
        continue;
      } catch (const Error& e) {
        failure = std::string(e.name()) + ": " + e.what();
      } catch (const std::exception& e) {
        failure = std::string("Internal: ") + e.what();
      } catch (...) {
        failure = "Internal: unknown failure";
      }
      commit(*c, std::move(outcome), failure);
    }
  }

  Outcome execute(const Claim& c, std::size_t worker) {
    const JobRecord& job = c.snapshot;
    const auto blob = [&](const std::string& id) {
      std::lock_guard lock(mu_);
      if (!store_.find_data(id)) raise(Errc::UnknownDataId, "input " + id + " was deleted");
      return store_.get_blob(id);
    };
    const auto progress = [&](int iteration, double change) {
      std::lock_guard lock(mu_);
      if (stopping_ || killed_[worker] || !holds(c)) throw Abandoned{};
      auto* r = store_.find_job(c.job_id);
      if (!r) throw Abandoned{};
      // a re-claimed job restarts from iteration 1; polls never see it go back
      if (iteration >= r->iteration) {
        r->iteration = iteration;
        r->iterate_change = change;
      }
      r->updated_ms = now_ms();
      leases_[c.job_id].expires = std::chrono::steady_clock::now() + config_.lease_timeout;
    };

    const auto mask = read_container_as<SamplingMask>(blob(job.mask_id));
    const auto result = [&] {
      if (job.method == Method::Pfista) {
        const auto y = read_container_as<KSpaceGrid>(blob(job.data_id));
        return pfista_single(y, mask, job.params, progress);
      }
      const auto y = read_container_as<MultiCoilKSpace>(blob(job.data_id));
      const auto maps = job.maps_id ? read_container_as<CoilSensitivities>(blob(*job.maps_id))
                                    : estimate_coil_maps(y, count_acs_rows(mask));
      return pfista_parallel(y, mask, maps, job.params, progress);
    }();

    Outcome out;
    out.recon = write_container(result.image);
    out.seconds = result.wall_time;
    if (job.truth_id) {
      const auto truth = read_container_as<ComplexImage>(blob(*job.truth_id));
      out.rlne = rlne(truth, result.image);
      out.errmap = encode_pgm(error_map(truth, result.image));
    }
    return out;
  }

  void commit(const Claim& c, std::optional<Outcome> outcome, const std::string& failure) {
    std::lock_guard lock(mu_);
    if (!holds(c)) return;  // deleted or re-claimed meanwhile
    JobRecord r = *store_.find_job(c.job_id);
    if (r.input_deleted) {
      r.error = kCancelled;
      transition(r, JobStatus::Failed);
      return;
    }
    if (!outcome) {
      r.error = failure;
      transition(r, JobStatus::Failed);
      return;
    }
    try {
      r.recon_id = detail::random_hex(16);
      store_.put_blob(*r.recon_id, outcome->recon);
      if (outcome->errmap) {
        r.errmap_id = detail::random_hex(16);
        store_.put_blob(*r.errmap_id, *outcome->errmap);
      }
    } catch (const Error& e) {
      store_.remove_blob(*r.recon_id);
      if (r.errmap_id) store_.remove_blob(*r.errmap_id);
      r.recon_id.reset();
      r.errmap_id.reset();
      r.error = std::string(e.name()) + ": " + e.what();
      transition(r, JobStatus::Failed);
      return;
    }
    r.rlne = outcome->rlne;
    r.solver_seconds = outcome->seconds;
    transition(r, JobStatus::Done);
  }

  ServiceConfig config_;
  Clock clock_;
  TransitionFn on_transition_;
  Authenticator auth_;

  std::mutex mu_;
  std::condition_variable cv_;
  Store store_;
  std::map<std::string, Lease> leases_;
  std::uint64_t claims_ = 0;
  bool stopping_ = false;
  std::vector<std::atomic<bool>> killed_;
  std::vector<std::thread> workers_;

  std::once_flag demo_once_;
  std::vector<DemoFixture> demo_;
};

}  // namespace xmrc::service
