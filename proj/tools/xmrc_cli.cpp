// xmrc: local reconstruction, fixture generation, evaluation, benchmarking
// and the HTTP service launcher.
//
// Exit status: 0 success, 1 usage error, 2 runtime error (typed error name on
// stderr).
#include <signal.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "xmrc/container.hpp"
#include "xmrc/demo.hpp"
#include "xmrc/metrics.hpp"
#include "xmrc/phantoms.hpp"
#include "xmrc/sampling.hpp"
#include "xmrc/service/http.hpp"
#include "xmrc/service/service.hpp"
#include "xmrc/solver.hpp"

namespace fs = std::filesystem;
using namespace xmrc;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverFlags {
  double lambda = 1e-3;
  std::string lambda_mode = "relative";
  double gamma = 1.0;
  int iters = 200;
  double tol = 1e-6;
  std::string frame = "haar";
  int levels = 3;

  void add(CLI::App* app) {
    app->add_option("--lambda", lambda, "Regularization weight")->capture_default_str();
    app->add_option("--lambda-mode", lambda_mode, "relative: scaled by max|Psi x0|; absolute: as given")
        ->check(CLI::IsMember({"relative", "absolute"}))
        ->capture_default_str();
    app->add_option("--gamma", gamma, "Step size in (0, 1]")->capture_default_str();
    app->add_option("--iters", iters, "Maximum iterations")->capture_default_str();
    app->add_option("--tol", tol, "Stop when the relative iterate change drops to this")->capture_default_str();
    app->add_option("--frame", frame, "Sparsifying frame")
        ->check(CLI::IsMember({"haar", "identity"}))
        ->capture_default_str();
    app->add_option("--levels", levels, "Haar decomposition levels")->capture_default_str();
  }

  SolverParams params() const {
    SolverParams p;
    p.lambda = lambda;
    p.lambda_mode = lambda_mode == "absolute" ? LambdaMode::Absolute : LambdaMode::RelativeToZeroFilled;
    p.gamma = gamma;
    p.max_iter = iters;
    p.tol = tol;
    p.frame = {frame == "identity" ? FrameKind::Identity : FrameKind::UndecimatedHaar, levels};
    try {
      p.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return p;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Recon {
  SolverResult result;
  double total_seconds;
};

/// Reads inputs, solves, and (if out is set) writes the reconstruction.
Recon reconstruct(const std::string& method, const fs::path& in, const fs::path& mask_path,
                  const std::optional<fs::path>& maps_path, const SolverParams& params,
                  const std::optional<fs::path>& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto mask = read_container_as<SamplingMask>(read_file(mask_path));
  auto result = [&] {
    if (method == "pfista") {
      if (maps_path) throw UsageError("--maps applies to pfista_parallel only");
      return pfista_single(read_container_as<KSpaceGrid>(read_file(in)), mask, params);
    }
    const auto y = read_container_as<MultiCoilKSpace>(read_file(in));
    if (maps_path) return pfista_parallel(y, mask, read_container_as<CoilSensitivities>(read_file(*maps_path)), params);
    const auto acs = count_acs_rows(mask);
    if (acs < service::kMinAcsRows) raise(Errc::MissingACS, "no --maps and too few fully sampled center rows");
    return pfista_parallel(y, mask, estimate_coil_maps(y, acs), params);
  }();
  if (out) write_file(*out, write_container(result.image));
  return {std::move(result), seconds_since(t0)};
}

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "pseudo-radial") return MaskKind::PseudoRadial;
  if (s == "cartesian") return MaskKind::CartesianLines;
  return MaskKind::Full;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRI reconstruction tools"};
  app.require_subcommand(1);

  // recon
  auto* recon = app.add_subcommand("recon", "Reconstruct undersampled k-space");
  std::string in, mask, out, method = "pfista";
  std::optional<std::string> maps, truth;
  SolverFlags solver;
  recon->add_option("--in", in, "k-space container (kind 2 or 3)")->required()->check(CLI::ExistingFile);
  recon->add_option("--mask", mask, "Mask container")->required()->check(CLI::ExistingFile);
  recon->add_option("--maps", maps, "Coil maps container (pfista_parallel)")->check(CLI::ExistingFile);
  recon->add_option("--truth", truth, "Ground-truth image for RLNE")->check(CLI::ExistingFile);
  recon->add_option("--out", out, "Output image container")->required();
  recon->add_option("--method", method)->check(CLI::IsMember({"pfista", "pfista_parallel"}))->capture_default_str();
  solver.add(recon);

  // mask
  auto* mask_cmd = app.add_subcommand("mask", "Generate a sampling mask");
  std::string kind = "pseudo-radial";
  double rate = 0.30, center_fraction = 0.0;
  std::size_t size = 256;
  std::uint64_t seed = 0;
  mask_cmd->add_option("--kind", kind)
      ->check(CLI::IsMember({"pseudo-radial", "cartesian", "full"}))
      ->capture_default_str();
  mask_cmd->add_option("--rate", rate, "Target sampling rate in (0, 1]")->capture_default_str();
  mask_cmd->add_option("--center-fraction", center_fraction, "Fully sampled center rows (cartesian)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  mask_cmd->add_option("--size", size, "Grid edge length")->check(CLI::Range(2, 1 << 16))->capture_default_str();
  mask_cmd->add_option("--seed", seed)->capture_default_str();
  mask_cmd->add_option("--out", out)->required();

  // phantom
  auto* phantom_cmd = app.add_subcommand("phantom", "Write a Shepp-Logan phantom image");
  phantom_cmd->add_option("--size", size)->check(CLI::Range(16, 1 << 16))->capture_default_str();
  phantom_cmd->add_option("--out", out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "RLNE of a reconstruction against the truth");
  std::string truth_path;
  std::optional<std::string> map_out;
  eval_cmd->add_option("--truth", truth_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--in", in, "Reconstruction image container")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", map_out, "Write the error map as P5");

  // demo
  auto* demo_cmd = app.add_subcommand("demo", "Write the demo fixture set into a directory");
  demo_cmd->add_option("--out", out, "Output directory")->required();
  demo_cmd->add_option("--size", size)->check(CLI::Range(16, 1 << 14))->capture_default_str();
  demo_cmd->add_option("--seed", seed)->capture_default_str();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Median timings and RLNE over repetitions, as CSV");
  int reps = 3;
  bench_cmd->add_option("--in", in, "Fixture directory written by `demo`")->required();
  bench_cmd->add_option("--reps", reps)->check(CLI::Range(1, 1000))->capture_default_str();
  solver.add(bench_cmd);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  std::optional<std::string> config_path, data_dir;
  std::optional<int> port;
  std::optional<std::size_t> workers;
  serve_cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--data-dir", data_dir);
  serve_cmd->add_option("--workers", workers)->check(CLI::Range(1, 256));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*recon) {
      const auto params = solver.params();
      const auto r = reconstruct(method, in, mask, maps ? std::optional<fs::path>(*maps) : std::nullopt, params,
                                 fs::path(out));
      std::string rl = "n/a";
      if (truth) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f",
                      rlne(read_container_as<ComplexImage>(read_file(*truth)), r.result.image));
        rl = buf;
      }
      std::printf("iters=%d rlne=%s time=%.3f\n", r.result.iterations_run, rl.c_str(), r.result.wall_time);
    } else if (*mask_cmd) {
      if (!(rate > 0.0 && rate <= 1.0)) throw UsageError("--rate must lie in (0, 1]");
      const auto m = make_mask({size, size}, {parse_mask_kind(kind), rate, center_fraction, seed});
      write_file(out, write_container(m));
      std::printf("rate=%.6f\n", m.rate());
    } else if (*phantom_cmd) {
      write_file(out, write_container(shepp_logan({size, size})));
    } else if (*eval_cmd) {
      const auto t = read_container_as<ComplexImage>(read_file(truth_path));
      const auto x = read_container_as<ComplexImage>(read_file(in));
      std::printf("rlne=%.6f\n", rlne(t, x));
      if (map_out) write_file(*map_out, encode_pgm(error_map(t, x)));
    } else if (*demo_cmd) {
      fs::create_directories(out);
      for (const auto& f : demo_fixtures(size, seed)) write_file(fs::path(out) / f.name, f.bytes);
    } else if (*bench_cmd) {
      const auto params = solver.params();
      const fs::path dir(in);
      for (const char* name : {"phantom.xmrc", "kspace_single.xmrc", "mask_radial30.xmrc", "kspace_multi.xmrc",
                               "mask_cartesian25.xmrc", "maps.xmrc"}) {
        if (!fs::exists(dir / name)) raise(Errc::Io, "missing fixture " + (dir / name).string());
      }
      const auto truth_img = read_container_as<ComplexImage>(read_file(dir / "phantom.xmrc"));
      std::printf("method,reps,median_solver_s,median_total_s,iterations,rlne\n");
      struct Case {
        const char* method;
        const char* data;
        const char* mask;
        std::optional<fs::path> maps;
      };
      for (const Case& c : {Case{"pfista", "kspace_single.xmrc", "mask_radial30.xmrc", std::nullopt},
                            Case{"pfista_parallel", "kspace_multi.xmrc", "mask_cartesian25.xmrc", dir / "maps.xmrc"}}) {
        std::vector<double> solve, total;
        std::optional<Recon> last;
        for (int i = 0; i < reps; ++i) {
          last = reconstruct(c.method, dir / c.data, dir / c.mask, c.maps, params, std::nullopt);
          solve.push_back(last->result.wall_time);
          total.push_back(last->total_seconds);
        }
        std::printf("%s,%d,%.6f,%.6f,%d,%.6f\n", c.method, reps, median(solve), median(total),
                    last->result.iterations_run, rlne(truth_img, last->result.image));
      }
    } else if (*serve_cmd) {
      auto cfg = config_path ? service::load_config(*config_path) : service::ServiceConfig{};
      if (port) cfg.port = *port;
      if (data_dir) cfg.data_dir = *data_dir;
      if (workers) cfg.workers = *workers;

      // Signals are taken synchronously by one thread that stops the server.
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);

      service::Service svc(cfg);
      service::HttpServer http(svc);
      const int bound = http.bind(cfg.host, cfg.port);
      std::printf("listening on http://%s:%d (data dir %s, %zu workers)\n", cfg.host.c_str(), bound,
                  cfg.data_dir.c_str(), cfg.workers);
      std::fflush(stdout);
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        http.stop();
      });
      waiter.detach();
      http.run();
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(e.name()).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
