#include <gtest/gtest.h>

#include <set>

#include "service_fixture.hpp"
#include "xmrc/container.hpp"
#include "xmrc/phantoms.hpp"
#include "xmrc/sampling.hpp"
#include "xmrc/service/service.hpp"

namespace xmrc {
namespace {

using service::JobStatus;
using service::JobSubmission;
using service::Method;
using service::Service;
using testing::eventually;

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::Io;
}

/// 64x64 single-coil fixture: phantom, 30% radial mask, masked k-space.
struct SingleCoil {
  Shape s{64, 64};
  ComplexImage truth = shepp_logan(s);
  SamplingMask mask = pseudo_radial_mask(s, {MaskKind::PseudoRadial, 0.30, 0.0, 0});
  KSpaceGrid y = apply_mask(dft2_centered(truth), mask);
};

class ServiceTest : public ::testing::Test {
 protected:
  void start(std::size_t workers = 2, service::ServiceOptions opts = {}) {
    auto cfg = testing::test_config(dir.path, workers);
    cfg.lease_timeout = lease;
    svc = std::make_unique<Service>(cfg, std::move(opts));
    token = svc->login("EMBC", "EMBC2021").token;
  }

  std::string put(const std::vector<std::uint8_t>& bytes) { return svc->upload(token, bytes).id; }

  JobStatus wait_final(const std::string& job) {
    JobStatus st = JobStatus::Queued;
    eventually([&] {
      st = svc->status(token, job).status;
      return st == JobStatus::Done || st == JobStatus::Failed;
    });
    return st;
  }

  JobSubmission single_job(const std::string& data, const std::string& mask) {
    JobSubmission sub;
    sub.method = Method::Pfista;
    sub.data_id = data;
    sub.mask_id = mask;
    return sub;
  }

  testing::TempDir dir;
  std::chrono::milliseconds lease{60'000};
  std::unique_ptr<Service> svc;
  std::string token;
  SingleCoil fx;
};

TEST_F(ServiceTest, LoginWithTestAccount) {
  start(1);
  EXPECT_EQ(token.size(), 32u);
  EXPECT_NE(svc->login("EMBC", "EMBC2021").token, token);
  EXPECT_EQ(svc->authenticate(token), "EMBC");
  EXPECT_EQ(error_of([&] { svc->login("EMBC", "wrong"); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->authenticate("deadbeef"); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->authenticate(""); }), Errc::Unauthorized);
}

TEST_F(ServiceTest, LoginErrorsDoNotRevealAccounts) {
  start(1);
  std::string wrong_pass, no_user;
  try {
    svc->login("EMBC", "nope");
  } catch (const Error& e) {
    wrong_pass = e.what();
  }
  try {
    svc->login("nobody", "nope");
  } catch (const Error& e) {
    no_user = e.what();
  }
  EXPECT_EQ(wrong_pass, no_user);
}

TEST_F(ServiceTest, TokensExpire) {
  testing::FakeClock clock;
  start(1, {clock.clock(), {}});
  const auto id = put(write_container(fx.mask));
  clock.advance(std::chrono::hours(23));
  EXPECT_NO_THROW(svc->data_meta(token, id));
  clock.advance(std::chrono::hours(1));
  EXPECT_EQ(error_of([&] { svc->data_meta(token, id); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->upload(token, write_container(fx.mask)); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->submit(token, single_job(id, id)); }), Errc::Unauthorized);
}

TEST_F(ServiceTest, UploadRecordsMetadata) {
  start(1);
  const auto bytes = write_container(fx.y);
  const auto meta = svc->upload(token, bytes);
  EXPECT_EQ(meta.kind, ContainerKind::KSpace);
  EXPECT_EQ(meta.ny, 64u);
  EXPECT_EQ(meta.nx, 64u);
  EXPECT_EQ(meta.size_bytes, bytes.size());
  EXPECT_EQ(svc->data_bytes(token, meta.id), bytes);

  auto bad = bytes;
  bad[0] = 'Y';
  EXPECT_EQ(error_of([&] { svc->upload(token, bad); }), Errc::MalformedContainer);
  EXPECT_EQ(error_of([&] { svc->upload(token, std::vector<std::uint8_t>{}); }), Errc::MalformedContainer);
}

TEST_F(ServiceTest, UploadCap) {
  auto cfg = testing::test_config(dir.path, 1);
  cfg.max_upload_bytes = 1000;
  Service s(cfg);
  const auto t = s.login("EMBC", "EMBC2021").token;
  EXPECT_EQ(error_of([&] { s.upload(t, write_container(fx.y)); }), Errc::TooLarge);
  EXPECT_NO_THROW(s.upload(t, write_container(SamplingMask::full({8, 8}))));
}

TEST_F(ServiceTest, SingleCoilLifecycleMatchesLibrary) {
  start(2);
  const auto data = put(write_container(fx.y));
  const auto mask = put(write_container(fx.mask));
  const auto truth = put(write_container(fx.truth));
  auto sub = single_job(data, mask);
  sub.truth_id = truth;
  const auto job = svc->submit(token, sub);

  ASSERT_EQ(wait_final(job), JobStatus::Done);
  const auto rec = svc->status(token, job);
  ASSERT_TRUE(rec.recon_id && rec.rlne && rec.errmap_id);
  EXPECT_GT(rec.iteration, 0);
  EXPECT_EQ(rec.attempts, 1);

  const auto bytes = svc->fetch_result(token, job);
  const auto recon = read_container_as<ComplexImage>(bytes);
  EXPECT_EQ(recon.shape(), fx.s);

  // same inputs through the container round trip, called directly
  const auto y = read_container_as<KSpaceGrid>(write_container(fx.y));
  const auto direct = pfista_single(y, fx.mask, SolverParams{});
  EXPECT_EQ(bytes, write_container(direct.image));
  EXPECT_EQ(*rec.rlne, rlne(read_container_as<ComplexImage>(write_container(fx.truth)), direct.image));

  const auto pgm = svc->fetch_errormap(token, job);
  EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + 3), "P5\n");

  svc->delete_job(token, job);
  EXPECT_EQ(error_of([&] { svc->status(token, job); }), Errc::UnknownJob);
  EXPECT_EQ(error_of([&] { svc->fetch_result(token, job); }), Errc::UnknownJob);
  EXPECT_EQ(error_of([&] { svc->delete_job(token, job); }), Errc::UnknownJob);
  // only the three uploads remain on disk
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path / "blobs"), {}), 3);
}

TEST_F(ServiceTest, NoErrorMapWithoutTruth) {
  start(1);
  const auto job = svc->submit(token, single_job(put(write_container(fx.y)), put(write_container(fx.mask))));
  ASSERT_EQ(wait_final(job), JobStatus::Done);
  EXPECT_FALSE(svc->status(token, job).rlne);
  EXPECT_EQ(error_of([&] { svc->fetch_errormap(token, job); }), Errc::UnknownJob);
}

TEST_F(ServiceTest, SubmitValidation) {
  start(1);
  const auto single = put(write_container(fx.y));
  const auto mask = put(write_container(fx.mask));
  const auto maps = simulate_coil_maps(fx.s, 4, 1);
  const auto multi = put(write_container(sense_forward(fx.truth, maps, fx.mask)));

  auto sub = single_job(multi, mask);
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::KindMismatch);
  sub = single_job(single, single);
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::KindMismatch);
  sub = single_job(single, mask);
  sub.method = Method::PfistaParallel;
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::KindMismatch);

  sub = single_job(single, mask);
  sub.params.gamma = 2.0;
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::InvalidParams);
  sub.params.gamma = 1.0;
  sub.params.frame.levels = 9;  // deeper than 64 supports
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::InvalidParams);

  sub = single_job("0123", mask);
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::UnknownDataId);

  // radial mask has no calibration block
  sub = single_job(multi, mask);
  sub.method = Method::PfistaParallel;
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::MissingACS);
  sub.maps_id = put(write_container(maps));
  EXPECT_NO_THROW(svc->submit(token, sub));

  const auto small = put(write_container(SamplingMask::full({32, 32})));
  sub = single_job(single, small);
  EXPECT_EQ(error_of([&] { svc->submit(token, sub); }), Errc::ShapeMismatch);
}

TEST_F(ServiceTest, ParallelJobEstimatesMapsFromCalibration) {
  start(1);
  const auto maps = simulate_coil_maps(fx.s, 4, 2);
  const auto mask = cartesian_mask(fx.s, {MaskKind::CartesianLines, 0.3, 0.15, 3});
  const auto y = sense_forward(fx.truth, maps, mask);
  JobSubmission sub;
  sub.method = Method::PfistaParallel;
  sub.data_id = put(write_container(y));
  sub.mask_id = put(write_container(mask));
  const auto job = svc->submit(token, sub);
  ASSERT_EQ(wait_final(job), JobStatus::Done) << svc->status(token, job).error;

  const auto yq = read_container_as<MultiCoilKSpace>(write_container(y));
  const auto est = estimate_coil_maps(yq, count_acs_rows(mask));
  EXPECT_EQ(svc->fetch_result(token, job), write_container(pfista_parallel(yq, mask, est, SolverParams{}).image));
}

TEST_F(ServiceTest, OwnershipIsEnforced) {
  start(1);
  const auto data = put(write_container(fx.y));
  const auto mask = put(write_container(fx.mask));
  const auto job = svc->submit(token, single_job(data, mask));
  const auto other = svc->login("other", "other-pass").token;
  EXPECT_EQ(error_of([&] { svc->status(other, job); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->fetch_result(other, job); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->delete_job(other, job); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->data_meta(other, data); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->delete_data(other, data); }), Errc::Unauthorized);
  EXPECT_EQ(error_of([&] { svc->submit(other, single_job(data, mask)); }), Errc::Unauthorized);
  EXPECT_EQ(wait_final(job), JobStatus::Done);
}

TEST_F(ServiceTest, DeleteIsPermanentAcrossRestart) {
  start(1);
  const auto keep = put(write_container(fx.mask));
  const auto gone = put(write_container(fx.y));
  const auto job = svc->submit(token, single_job(gone, keep));
  ASSERT_EQ(wait_final(job), JobStatus::Done);
  const auto result = svc->fetch_result(token, job);

  svc->delete_data(token, gone);
  EXPECT_EQ(error_of([&] { svc->data_meta(token, gone); }), Errc::UnknownDataId);
  EXPECT_EQ(error_of([&] { svc->data_bytes(token, gone); }), Errc::UnknownDataId);
  EXPECT_EQ(error_of([&] { svc->delete_data(token, gone); }), Errc::UnknownDataId);
  EXPECT_FALSE(std::filesystem::exists(dir.path / "blobs" / gone));

  svc.reset();
  start(1);
  EXPECT_EQ(error_of([&] { svc->data_meta(token, gone); }), Errc::UnknownDataId);
  EXPECT_EQ(svc->data_meta(token, keep).kind, ContainerKind::Mask);
  // finished jobs keep their results
  EXPECT_EQ(svc->fetch_result(token, job), result);

  // no metadata record for the deleted blob lingers in the journal
  std::ifstream journal(dir.path / "journal.jsonl");
  for (std::string line; std::getline(journal, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("op") == "data") EXPECT_NE(j.at("meta").at("data_id"), gone);
  }
}

TEST_F(ServiceTest, StartupRemovesOrphansAndTornLines) {
  start(1);
  const auto id = put(write_container(fx.mask));
  svc.reset();
  write_file(dir.path / "blobs" / "stray", std::vector<std::uint8_t>{1, 2, 3});
  std::ofstream(dir.path / "journal.jsonl", std::ios::app) << "{\"op\":\"data\",\"meta\":{\"data_";
  // meta without its blob
  std::filesystem::copy_file(dir.path / "blobs" / id, dir.path / "blobs" / "copy");
  start(1);
  EXPECT_FALSE(std::filesystem::exists(dir.path / "blobs" / "stray"));
  EXPECT_FALSE(std::filesystem::exists(dir.path / "blobs" / "copy"));
  EXPECT_EQ(svc->data_meta(token, id).kind, ContainerKind::Mask);
}

TEST_F(ServiceTest, TokensDoNotSurviveRestart) {
  start(1);
  const auto old = token;
  svc.reset();
  start(1);
  EXPECT_EQ(error_of([&] { svc->authenticate(old); }), Errc::Unauthorized);
}

TEST_F(ServiceTest, FailedJobReportsReasonAndServiceContinues) {
  start(1);
  const auto data = put(write_container(fx.y));
  const auto mask = put(write_container(fx.mask));
  auto sub = single_job(data, mask);
  sub.truth_id = put(write_container(ComplexImage::zeros(fx.s)));
  const auto bad = svc->submit(token, sub);
  ASSERT_EQ(wait_final(bad), JobStatus::Failed);
  const auto rec = svc->status(token, bad);
  EXPECT_NE(rec.error.find("ZeroGroundTruth"), std::string::npos);
  EXPECT_FALSE(rec.recon_id);
  EXPECT_FALSE(rec.rlne);
  try {
    svc->fetch_result(token, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::JobFailed);
    EXPECT_NE(std::string(e.what()).find("ZeroGroundTruth"), std::string::npos);
  }
  const auto good = svc->submit(token, single_job(data, mask));
  EXPECT_EQ(wait_final(good), JobStatus::Done);
}

/// A job that runs long enough to observe: 128x128, tol 0, many iterations.
struct SlowJob {
  Shape s{128, 128};
  ComplexImage truth = shepp_logan(s);
  SamplingMask mask = pseudo_radial_mask(s, {MaskKind::PseudoRadial, 0.30, 0.0, 0});
  KSpaceGrid y = apply_mask(dft2_centered(truth), mask);
};

TEST_F(ServiceTest, QueuedJobIsNotReadyAndCancelledByInputDeletion) {
  start(1);
  SlowJob slow;
  auto blocker = single_job(put(write_container(slow.y)), put(write_container(slow.mask)));
  blocker.params.tol = 0.0;
  blocker.params.max_iter = 100000;
  const auto b = svc->submit(token, blocker);
  ASSERT_TRUE(eventually([&] { return svc->status(token, b).status == JobStatus::Running; }));

  const auto data = put(write_container(fx.y));
  const auto queued = svc->submit(token, single_job(data, put(write_container(fx.mask))));
  EXPECT_EQ(svc->status(token, queued).status, JobStatus::Queued);
  EXPECT_EQ(error_of([&] { svc->fetch_result(token, queued); }), Errc::NotReady);
  EXPECT_EQ(error_of([&] { svc->fetch_result(token, b); }), Errc::NotReady);

  svc->delete_data(token, data);
  const auto rec = svc->status(token, queued);
  EXPECT_EQ(rec.status, JobStatus::Failed);
  EXPECT_EQ(rec.error, "cancelled: input deleted");
  EXPECT_EQ(error_of([&] { svc->fetch_result(token, queued); }), Errc::JobFailed);

  // progress only moves forward
  int last = 0;
  for (int i = 0; i < 20; ++i) {
    const int it = svc->status(token, b).iteration;
    EXPECT_GE(it, last);
    last = it;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  EXPECT_GT(last, 0);
  svc->delete_job(token, b);
}

TEST_F(ServiceTest, RunningJobWithDeletedInputDropsResults) {
  start(1);
  SlowJob slow;
  const auto data = put(write_container(slow.y));
  auto sub = single_job(data, put(write_container(slow.mask)));
  sub.params.tol = 0.0;
  sub.params.max_iter = 400;
  const auto job = svc->submit(token, sub);
  ASSERT_TRUE(eventually([&] { return svc->status(token, job).iteration > 0; }));
  svc->delete_data(token, data);
  ASSERT_EQ(wait_final(job), JobStatus::Failed);
  const auto rec = svc->status(token, job);
  EXPECT_EQ(rec.error, "cancelled: input deleted");
  EXPECT_FALSE(rec.recon_id);
  // only the mask blob is left
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path / "blobs"), {}), 1);
}

TEST_F(ServiceTest, SingleWorkerIsFifo) {
  std::mutex mu;
  std::vector<std::string> done;
  start(1, {service::system_clock(), [&](const std::string& id, JobStatus, JobStatus to) {
              if (to != JobStatus::Done) return;
              std::lock_guard lock(mu);
              done.push_back(id);
            }});
  const auto data = put(write_container(fx.y));
  const auto mask = put(write_container(fx.mask));
  std::vector<std::string> jobs;
  for (int i = 0; i < 3; ++i) jobs.push_back(svc->submit(token, single_job(data, mask)));
  for (const auto& j : jobs) ASSERT_EQ(wait_final(j), JobStatus::Done);
  std::lock_guard lock(mu);
  EXPECT_EQ(done, jobs);
}

/// Records every transition and checks it against the state machine.
struct TransitionLog {
  std::mutex mu;
  std::map<std::string, std::vector<JobStatus>> seen;
  int running = 0;
  int max_running = 0;
  bool illegal = false;

  service::TransitionFn fn() {
    return [this](const std::string& id, JobStatus from, JobStatus to) {
      std::lock_guard lock(mu);
      auto& v = seen[id];
      if (v.empty()) v.push_back(JobStatus::Queued);
      if (v.back() != from || !service::legal_transition(from, to)) illegal = true;
      v.push_back(to);
      if (to == JobStatus::Running) max_running = std::max(max_running, ++running);
      if (from == JobStatus::Running) --running;
    };
  }
};

TEST_F(ServiceTest, TwoWorkersRunConcurrently) {
  TransitionLog log;
  start(2, {service::system_clock(), log.fn()});
  SlowJob slow;
  auto sub = single_job(put(write_container(slow.y)), put(write_container(slow.mask)));
  sub.params.tol = 0.0;
  sub.params.max_iter = 300;
  std::vector<std::string> jobs;
  for (int i = 0; i < 4; ++i) jobs.push_back(svc->submit(token, sub));
  for (const auto& j : jobs) EXPECT_EQ(wait_final(j), JobStatus::Done);
  std::lock_guard lock(log.mu);
  EXPECT_FALSE(log.illegal);
  EXPECT_EQ(log.max_running, 2);
  for (const auto& j : jobs) {
    EXPECT_EQ(log.seen[j], (std::vector<JobStatus>{JobStatus::Queued, JobStatus::Running, JobStatus::Done}));
  }
}

TEST_F(ServiceTest, KilledWorkerJobIsReclaimedAfterLease) {
  TransitionLog log;
  lease = std::chrono::milliseconds(300);
  start(2, {service::system_clock(), log.fn()});
  SlowJob slow;
  auto sub = single_job(put(write_container(slow.y)), put(write_container(slow.mask)));
  sub.params.tol = 0.0;
  sub.params.max_iter = 200;
  const auto victim = svc->submit(token, sub);
  ASSERT_TRUE(eventually([&] { return svc->status(token, victim).iteration > 3; }));
  const auto worker = svc->worker_of(victim);
  ASSERT_TRUE(worker);
  svc->kill_worker(*worker);
  const auto kill_time = std::chrono::steady_clock::now();

  ASSERT_EQ(wait_final(victim), JobStatus::Done);
  EXPECT_GE(std::chrono::steady_clock::now() - kill_time, lease);
  const auto rec = svc->status(token, victim);
  EXPECT_EQ(rec.attempts, 2);
  EXPECT_EQ(svc->fetch_result(token, victim), write_container(pfista_single(
                                                  read_container_as<KSpaceGrid>(write_container(slow.y)),
                                                  slow.mask, sub.params)
                                                  .image));
  std::lock_guard lock(log.mu);
  EXPECT_FALSE(log.illegal);
  EXPECT_EQ(log.seen[victim], (std::vector<JobStatus>{JobStatus::Queued, JobStatus::Running, JobStatus::Done}));
}

TEST_F(ServiceTest, RunningJobResumesAfterRestart) {
  start(1);
  SlowJob slow;
  auto sub = single_job(put(write_container(slow.y)), put(write_container(slow.mask)));
  sub.params.tol = 0.0;
  sub.params.max_iter = 300;
  const auto job = svc->submit(token, sub);
  ASSERT_TRUE(eventually([&] { return svc->status(token, job).iteration > 0; }));
  svc.reset();  // abandons the job mid-run
  start(1);
  ASSERT_EQ(wait_final(job), JobStatus::Done);
  EXPECT_EQ(svc->status(token, job).attempts, 2);
}

TEST_F(ServiceTest, DemoFixtures) {
  start(1);
  const auto list = svc->demo_list(token);
  std::set<std::string> names;
  for (const auto& e : list) names.insert(e.name);
  EXPECT_TRUE(names.contains("kspace_single.xmrc"));
  EXPECT_TRUE(names.contains("mask_radial30.xmrc"));
  const auto bytes = svc->demo_bytes(token, "kspace_multi.xmrc");
  EXPECT_EQ(read_container_as<MultiCoilKSpace>(bytes).nc(), kDemoCoils);
  EXPECT_EQ(error_of([&] { svc->demo_bytes(token, "nope.xmrc"); }), Errc::UnknownDataId);
  EXPECT_EQ(error_of([&] { svc->demo_list("bad"); }), Errc::Unauthorized);
}

}  // namespace
}  // namespace xmrc
