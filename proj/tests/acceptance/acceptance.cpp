// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. `mspnf_acceptance N` runs criterion N (1-10) and prints
// one line: "criterion N: PASS|FAIL <measurements>". With no argument every
// criterion runs in turn. The exit status is non-zero if any check fails.
#include "mspnf/cli.hpp"
#include "mspnf/metrics.hpp"
#include "mspnf/spatial_index.hpp"

#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace mspnf;
using mspnf::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

/// The reference model config scaled down for a single-core desk machine.
RunConfig desk_config() {
  RunConfig c;
  c.field.feature_dim = 16;
  c.field.mlp_width = 32;
  c.field.mlp_layers = 3;
  c.field.decoder_width = 32;
  c.field.decoder_layers = 3;
  c.field.global_triplane_res = 32;
  c.render.num_samples = 64;
  c.train.batch_rays = 64;
  c.train.lr_decoder = 5e-3;
  c.train.lr_features = 2e-2;
  c.train.iterations = 2000;
  c.workers = 1;
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_check_micro() {
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;
  std::size_t checked = 0, failed = 0, one_sided = 0, tiny = 0;
  double worst = 0.0, worst_abs_tiny = 0.0;
  std::string worst_name;
  bool mlp = false, point_triplane = false, global_triplane = false;
  for (int i = 0; i < kInstances; ++i) {
    const auto m = mspnf::testing::micro_instance(1000 + i);
    const auto r = mspnf::testing::gradient_check(*m.model.field, m.model.params, m.batch, m.options, kTol);
    checked += r.checked;
    failed += r.failed;
    if (r.worst_relative > worst) {
      worst = r.worst_relative;
      worst_name = "instance " + std::to_string(i) + " " + r.worst_name;
    }
    for (const auto& name : r.touched) {
      mlp = mlp || name.ends_with(".mlp.0.weight");
      point_triplane = point_triplane || (name.starts_with("level") && name.ends_with(".triplane"));
      global_triplane = global_triplane || name == "global.triplane";
    }
    // Diagnostics only: a failure whose one-sided difference agrees sits on a
    // ReLU kink inside the step; one with |fd| < 1e-7 is at the rounding floor.
    for (const auto& f : r.failures) {
      auto close = [&](double d) { return std::abs(f.analytic - d) <= kTol * std::abs(d); };
      if (close(f.forward) || close(f.backward)) {
        ++one_sided;
      } else if (std::abs(f.central) < 1e-7) {
        ++tiny;
        worst_abs_tiny = std::max(worst_abs_tiny, std::abs(f.analytic - f.central));
      }
    }
  }
  std::ostringstream d;
  d << kInstances << " instances, " << checked << " entries, " << failed << " over tolerance (" << one_sided
    << " match a one-sided difference, " << tiny << " with |fd|<1e-7 and |error|<=" << fmt("%.2g", worst_abs_tiny)
    << "), worst " << fmt("%.3g", worst) << " at " << worst_name << "; mlp=" << mlp
    << " point_triplane=" << point_triplane << " global_triplane=" << global_triplane;
  return {failed == 0 && checked > 0 && mlp && point_triplane && global_triplane, d.str()};
}

Outcome compositing_identities() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> sigma(0.5);
  double worst = 0.0;
  std::vector<Vec3> colors;
  std::vector<double> dens, deltas;
  for (int r = 0; r < 100000; ++r) {
    const int n = 1 + static_cast<int>(u(rng) * 128);
    colors.assign(n, Vec3(u(rng), u(rng), u(rng)));
    dens.resize(n);
    deltas.resize(n);
    for (int i = 0; i < n; ++i) {
      dens[i] = u(rng) < 0.2 ? 0.0 : sigma(rng) * (u(rng) < 0.1 ? 1e3 : 1.0);
      deltas[i] = u(rng) * 0.1;
    }
    const auto c = composite(colors, dens, deltas, Vec3::Ones());
    double total = c.residual_transmittance;
    for (double w : c.weights) total += w;
    worst = std::max(worst, std::abs(total - 1.0));
  }
  const int n = 1000;
  const double length = 4.0;
  const double s = 2.0 / length;
  std::vector<Vec3> black(n, Vec3::Zero());
  std::vector<double> constant(n, s), step(n, length / n);
  const double t = composite(black, constant, step, Vec3::Ones()).residual_transmittance;
  const double err = std::abs(t - std::exp(-2.0));
  std::ostringstream d;
  d << "max |sum w + T - 1| = " << fmt("%.3g", worst) << " over 1e5 rays; |T - exp(-2)| = " << fmt("%.3g", err);
  return {worst <= 1e-12 && err <= 1e-9, d.str()};
}

/// Exhaustive neighbors sorted by (distance, index), truncated to k.
std::vector<std::uint32_t> scan(const std::vector<Vec3>& pts, const Vec3& q, double radius, std::size_t k) {
  std::vector<std::pair<double, std::uint32_t>> hits;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const double d = (pts[i] - q).norm();
    if (d <= radius) hits.emplace_back(d, i);
  }
  std::sort(hits.begin(), hits.end());
  if (hits.size() > k) hits.resize(k);
  std::vector<std::uint32_t> out;
  for (const auto& h : hits) out.push_back(h.second);
  return out;
}

Outcome ball_query_exhaustive() {
  std::mt19937_64 rng(3);
  std::size_t mismatches = 0, queries = 0, tie_queries = 0;
  for (int c = 0; c < 100; ++c) {
    const bool lattice = c % 2 == 1;
    const std::size_t n = 1 + rng() % 2000;
    ScaleLevel level;
    level.voxel_edge = lattice ? 0.125 : 0.02 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> cell(-8, 8);
    for (std::size_t i = 0; i < n; ++i) {
      // Lattice clouds put many points at exactly the query radius; duplicates
      // give equal distances that must resolve by index.
      if (lattice) {
        level.representatives.push_back(Vec3(cell(rng), cell(rng), cell(rng)) * 0.125);
      } else {
        level.representatives.push_back(Vec3(u(rng), u(rng), u(rng)));
      }
    }
    level.source_counts.assign(n, 1);
    const VoxelHashIndex index(level);
    for (int q = 0; q < 500; ++q) {
      Vec3 p = Vec3(u(rng), u(rng), u(rng)) * 1.1;
      if (lattice) p = Vec3(cell(rng), cell(rng), cell(rng)) * 0.125 + Vec3(0, 0, q % 2 ? 0.0625 : 0.0);
      const double radius = 1.0 * level.voxel_edge;
      for (std::size_t k : {std::size_t{8}, n}) {
        const auto got = index.ball_query(p, 1.0, static_cast<int>(k));
        const auto want = scan(level.representatives, p, radius, k);
        if (got.point_indices != want) ++mismatches;
        ++queries;
      }
      if (lattice) ++tie_queries;
    }
  }
  std::ostringstream d;
  d << queries << " queries (" << tie_queries << " on tie-heavy lattices), " << mismatches << " mismatches";
  return {mismatches == 0, d.str()};
}

Outcome grid_subsample_bruteforce() {
  std::mt19937_64 rng(4);
  std::size_t bad_clouds = 0;
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const auto cloud = mspnf::testing::random_cloud(rng, 1 + rng() % 3000, -2.0, 2.0);
    const double edge = 0.05 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto level = grid_subsample(cloud, edge);
    std::map<CellKey, std::pair<Vec3, std::size_t>> cells;
    for (const auto& p : cloud.positions) {
      auto& e = cells[cell_of(p, edge)];
      if (e.second == 0) e.first = Vec3::Zero();
      e.first += p;
      ++e.second;
    }
    bool ok = cells.size() == level.size();
    std::size_t total = 0;
    for (auto n : level.source_counts) total += n;
    ok = ok && total == cloud.count();
    if (ok) {
      std::size_t i = 0;
      for (const auto& [key, sum] : cells) {
        const double err = (level.representatives[i] - sum.first / static_cast<double>(sum.second)).cwiseAbs().maxCoeff();
        worst = std::max(worst, err);
        ok = ok && err <= 1e-12 && level.source_counts[i] == sum.second;
        ++i;
      }
    }
    if (!ok) ++bad_clouds;
  }
  const PointHierarchy h = build_hierarchy(mspnf::testing::random_cloud(rng, 500, 0.0, 0.1), 0.004, 1.6, 4);
  const double want[] = {0.004, 0.0064, 0.01024, 0.016384};
  double edge_err = 0.0;
  std::ostringstream edges;
  for (int s = 0; s < 4; ++s) {
    edge_err = std::max(edge_err, std::abs(h.levels[s].voxel_edge - want[s]) / want[s]);
    edges << (s ? ", " : "") << fmt("%.10g", h.levels[s].voxel_edge);
  }
  std::ostringstream d;
  d << "50 clouds, " << bad_clouds << " mismatched, worst barycenter error " << fmt("%.3g", worst) << "; edges {"
    << edges.str() << "}";
  return {bad_clouds == 0 && edge_err <= 1e-12, d.str()};
}

Outcome global_only_ignores_points() {
  SceneSpec spec;
  spec.num_train_views = 4;
  spec.num_test_views = 2;
  const SyntheticScene scene = generate_scene(spec);
  RunConfig c = desk_config();
  c.hierarchy.num_local_levels = 0;
  c.hierarchy.canonical = "fixed";
  c.train.iterations = 30;
  const TrainResult trained = train(scene.dataset, c, TrainOptions{});
  const PointCloud sparse = subset_points(scene.dataset.cloud, 0.1, 99);
  Model reduced = build_model(c, sparse);
  reduced.params = trained.model.params;
  std::size_t differing = 0, pixels = 0;
  for (const auto& view : scene.dataset.test) {
    const auto opts = eval_render_options(c, 1);
    const Image a = render_image(view.camera, *trained.model.field, trained.model.params, opts);
    const Image b = render_image(view.camera, *reduced.field, reduced.params, opts);
    for (std::size_t i = 0; i < a.data.size(); ++i) differing += a.data[i] != b.data[i];
    pixels += a.data.size();
  }
  std::ostringstream d;
  d << scene.dataset.cloud.count() << " -> " << sparse.count() << " points, " << differing << " of " << pixels
    << " channel values differ";
  return {differing == 0 && sparse.count() * 10 <= scene.dataset.cloud.count() + 5, d.str()};
}

Outcome global_local_ablation() {
  SceneSpec spec;
  spec.hole_fraction = 0.3;
  const SyntheticScene scene = generate_scene(spec);
  RunConfig c = desk_config();
  c.train.iterations = 1500;
  const auto rows = run_ablation(scene.dataset, c, builtin_grid("global"), 1);
  std::map<std::string, double> p;
  for (const auto& r : rows) p[r.variant] = r.error.empty() ? r.psnr : -1.0;
  const double full = p["full"], global_only = p["global-only"], local_only = p["local-only"];
  std::ostringstream d;
  d << "removed " << fmt("%.3f", scene.removed_fraction) << "; PSNR full " << fmt("%.2f", full) << ", global-only "
    << fmt("%.2f", global_only) << " (margin " << fmt("%.2f", full - global_only) << "), local-only "
    << fmt("%.2f", local_only) << " (margin " << fmt("%.2f", full - local_only) << ")";
  return {scene.removed_fraction >= 0.3 && full >= global_only + 1.0 && full >= local_only + 0.5, d.str()};
}

Outcome point_ratio_monotone() {
  const SyntheticScene scene = generate_scene(SceneSpec{});
  RunConfig c = desk_config();
  c.train.iterations = 1500;
  const auto rows = run_ablation(scene.dataset, c, builtin_grid("ratio"), 1);
  bool ok = rows.size() == 4;
  std::ostringstream d;
  d << "PSNR";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d << " " << rows[i].variant << "=" << fmt("%.2f", rows[i].psnr);
    ok = ok && rows[i].error.empty();
    if (i > 0) ok = ok && rows[i].psnr >= rows[i - 1].psnr - 0.3;
  }
  return {ok, d.str()};
}

Outcome training_converges() {
  const SyntheticScene scene = generate_scene(SceneSpec{});
  const RunConfig c = desk_config();
  const TrainResult r = train(scene.dataset, c, TrainOptions{});
  if (r.losses.size() != 2000) return {false, "unexpected iteration count"};
  const double at10 = r.losses[9];
  const double final_loss = r.losses.back();
  std::ostringstream d;
  d << scene.dataset.train.size() << " views " << scene.spec.width << "x" << scene.spec.height << ", "
    << c.render.num_samples << " samples; loss@10 " << fmt("%.4g", at10) << ", final " << fmt("%.4g", final_loss)
    << " (" << fmt("%.1f", 100.0 * final_loss / at10) << "%), held-out PSNR " << fmt("%.2f", r.final_eval.psnr);
  return {scene.dataset.train.size() == 8 && final_loss <= 0.5 * at10 && r.final_eval.psnr >= 20.0, d.str()};
}

Outcome metric_conventions() {
  const Image a(32, 32, 0.3f), b(32, 32, 0.4f);
  const double p = psnr(a, b);
  const Image c(32, 32, 0.2f), e(32, 32, 0.8f);
  const double s = ssim(c, e);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image x(24, 20), y(24, 20);
  for (auto& v : x.data) v = u(rng);
  for (auto& v : y.data) v = u(rng);
  const bool symmetric = psnr(x, y) == psnr(y, x) && std::abs(ssim(x, y) - ssim(y, x)) <= 1e-15 &&
                         psnr(a, b) == psnr(b, a) && ssim(c, e) == ssim(e, c);
  std::ostringstream d;
  d << "PSNR(delta 0.1) = " << fmt("%.6f", p) << ", SSIM(0.2 vs 0.8) = " << fmt("%.6f", s)
    << ", symmetric=" << symmetric;
  return {std::abs(p - 20.0) <= 1e-5 && std::abs(s - 0.4709) <= 1e-3 && symmetric, d.str()};
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "mspnf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

Outcome workers_bit_identical() {
  TempDir dir("acceptance10");
  const std::string scene = (dir / "scene").string();
  if (cli({"gen-scene", "--out", scene}) != 0) return {false, "gen-scene failed"};
  const std::vector<std::string> model{"feature_dim=16", "mlp_width=32",         "mlp_layers=3",
                                       "decoder_width=32", "decoder_layers=3",   "global_triplane_res=32",
                                       "batch_rays=64",   "lr_decoder=5e-3",     "lr_features=2e-2",
                                       "iterations=200",  "eval_every=100",      "checkpoint_every=100"};
  std::map<std::string, std::string> metrics, logs;
  std::map<std::string, std::string> ckpt;
  for (const std::string w : {"1", "4"}) {
    const std::string run = (dir / ("run" + w)).string();
    std::vector<std::string> args{"train", "--scene", scene, "--out", run, "--workers", w};
    args.insert(args.end(), model.begin(), model.end());
    if (cli(args, &logs[w]) != 0) return {false, "train failed with workers=" + w};
    if (cli({"eval", "--checkpoint", run + "/final.ckpt", "--scene", scene, "--workers", w}, &metrics[w]) != 0)
      return {false, "eval failed with workers=" + w};
    ckpt[w] = mspnf::testing::read_bytes(run + "/final.ckpt") + mspnf::testing::read_bytes(run + "/step_000100.ckpt");
  }
  const bool same_ckpt = !ckpt["1"].empty() && ckpt["1"] == ckpt["4"];
  const bool same_metrics = metrics["1"] == metrics["4"];
  const bool same_logs = logs["1"] == logs["4"];
  std::string m = metrics["1"];
  if (!m.empty() && m.back() == '\n') m.pop_back();
  std::ostringstream d;
  d << "checkpoints identical=" << same_ckpt << ", metrics identical=" << same_metrics
    << ", logs identical=" << same_logs << "; " << m;
  return {same_ckpt && same_metrics && same_logs, d.str()};
}

struct Criterion {
  std::function<Outcome()> run;
  double limit_seconds;  // <= 0: no limit
};

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Criterion> criteria{
      {1, {gradient_check_micro, 60}},      {2, {compositing_identities, 10}},
      {3, {ball_query_exhaustive, 30}},     {4, {grid_subsample_bruteforce, 10}},
      {5, {global_only_ignores_points, 60}}, {6, {global_local_ablation, 20 * 60}},
      {7, {point_ratio_monotone, 30 * 60}},  {8, {training_converges, 5 * 60}},
      {9, {metric_conventions, 0}},          {10, {workers_bit_identical, 0}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [n, c] : criteria) selected.push_back(n);

  int failures = 0;
  for (int n : selected) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::printf("criterion %d: FAIL unknown criterion\n", n);
      ++failures;
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double limit = it->second.limit_seconds;
    const bool in_time = limit <= 0 || secs <= limit;
    const bool pass = o.pass && in_time;
    std::printf("criterion %d: %s %s; %.1f s%s\n", n, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                limit > 0 ? (in_time ? fmt(" (limit %.0f s)", limit).c_str() : fmt(" (over limit %.0f s)", limit).c_str())
                          : "");
    std::fflush(stdout);
    failures += !pass;
  }
  return failures == 0 ? 0 : 1;
}
