// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/harness.hpp"

#include "mspnf/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace mspnf;

TEST_SUITE("harness") {
  TEST_CASE("primitive parsing and signed distance") {
    const Primitive s = parse_primitive("sphere 0 0 0 0.5 1 0 0");
    CHECK(s.kind == Primitive::Kind::Sphere);
    CHECK(s.sdf(Vec3(1, 0, 0)) == doctest::Approx(0.5));
    CHECK(s.sdf(Vec3::Zero()) == doctest::Approx(-0.5));
    const Primitive b = parse_primitive("  box 1 0 0 0.5 0.25 0.25 0 1 0 ");
    CHECK(b.kind == Primitive::Kind::Box);
    CHECK(b.sdf(Vec3(2, 0, 0)) == doctest::Approx(0.5));
    CHECK(b.sdf(Vec3(1, 0, 0)) == doctest::Approx(-0.25));
    CHECK(parse_primitive(format_primitive(b)).center == b.center);
    CHECK_THROWS_AS(parse_primitive("sphere 0 0 0 1"), ParseError);
    CHECK_THROWS_AS(parse_primitive("cone 0 0 0 1 1 1 1"), ParseError);
    CHECK_THROWS_AS(parse_primitive("sphere 0 0 0 x 1 1 1"), ParseError);
    CHECK_THROWS_AS(parse_primitive("sphere 0 0 0 -1 1 1 1"), Error);
    CHECK_THROWS_AS(parse_primitive("sphere 0 0 0 1 2 1 1"), Error);
  }

  TEST_CASE("scene spec keys and validation") {
    const SceneSpec s = resolve_scene_spec("width = 20\nholes = 0 0 0 0.1; 1 1 1 0.2\n", {{"seed", "4", 0}});
    CHECK(s.width == 20);
    CHECK(s.seed == 4);
    REQUIRE(s.parsed_holes().size() == 2);
    CHECK(s.parsed_holes()[1].radius == 0.2);
    CHECK_THROWS_AS(resolve_scene_spec("bogus = 1\n", {}), ParseError);
    CHECK_THROWS_AS(resolve_scene_spec("gt_sample_factor = 2\n", {}), Error);
    CHECK_THROWS_AS(resolve_scene_spec("primitives = \n", {}), Error);
  }

  TEST_CASE("analytic field") {
    const AnalyticField f({parse_primitive("sphere 0 0 0 0.5 1 0 0"), parse_primitive("sphere 2 0 0 0.5 0 0 1")}, 40.0,
                          0.01);
    CHECK(f.density(Vec3::Zero()) == doctest::Approx(40.0));
    CHECK(f.density(Vec3(1, 0, 0)) < 1e-10);
    CHECK((f.color(Vec3::Zero()) - Vec3(1, 0, 0)).norm() < 1e-9);
    CHECK((f.color(Vec3(2, 0, 0)) - Vec3(0, 0, 1)).norm() < 1e-9);
    CHECK((f.color(Vec3(1, 0, 0)) - Vec3(0.5, 0, 0.5)).norm() < 1e-9);
    CHECK_THROWS_AS(AnalyticField({}, 1.0, 1.0), Error);
  }

  TEST_CASE("ground truth is converged with respect to quadrature") {
    SceneSpec spec = mspnf::testing::tiny_scene_spec();
    const AnalyticField f(spec.parsed_primitives(), spec.density, spec.softness);
    const Camera cam = ring_cameras(spec, 1, 0.0)[0];
    const Image a = render_analytic(f, cam, 256, spec.background);
    const Image b = render_analytic(f, cam, 1024, spec.background);
    CHECK(psnr(a, b) > 40.0);
  }

  TEST_CASE("ring cameras look at the origin") {
    const SceneSpec spec = mspnf::testing::tiny_scene_spec();
    const auto cams = ring_cameras(spec, 4, 0.0);
    REQUIRE(cams.size() == 4);
    for (const auto& c : cams) {
      CHECK(c.center().norm() == doctest::Approx(spec.camera_radius));
      const Vec3 origin_cam = c.rotation * Vec3::Zero() + c.translation;
      CHECK(origin_cam.x() == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(origin_cam.y() == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(origin_cam.z() < 0.0);
    }
    CHECK((ring_cameras(spec, 4, 0.5)[0].center() - cams[0].center()).norm() > 1e-3);
  }

  TEST_CASE("holes") {
    PointCloud c{{Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(1, 0, 0), Vec3(0.2, 0, 0)}};
    const auto r = punch_holes(c, {{Vec3::Zero(), 0.1}});
    CHECK(r.removed == 2);
    CHECK(r.removed_fraction == 0.5);
    CHECK(r.cloud.positions == std::vector<Vec3>{Vec3(1, 0, 0), Vec3(0.2, 0, 0)});

    std::mt19937_64 rng(1);
    const auto cloud = mspnf::testing::random_cloud(rng, 2000);
    const auto holes = random_holes(cloud, 0.3, 0.3, 5);
    CHECK(punch_holes(cloud, holes).removed_fraction >= 0.3);
    CHECK(random_holes(cloud, 0.0, 0.3, 5).empty());
  }

  TEST_CASE("scene generation is deterministic and removes the requested fraction") {
    SceneSpec spec = mspnf::testing::tiny_scene_spec();
    spec.hole_fraction = 0.3;
    const SyntheticScene a = generate_scene(spec);
    const SyntheticScene b = generate_scene(spec);
    CHECK(a.dataset.cloud.positions == b.dataset.cloud.positions);
    CHECK(a.dataset.train[0].image.data == b.dataset.train[0].image.data);
    CHECK(a.removed_fraction >= 0.3);
    CHECK(a.dataset.train.size() == 4);
    CHECK(a.dataset.test.size() == 2);
    CHECK(a.dataset.train[0].image.width == 12);
    // Emitted points lie on primitive surfaces.
    for (const auto& p : a.dataset.cloud.positions) {
      double best = 1e9;
      for (const auto& prim : a.field.primitives()) best = std::min(best, std::abs(prim.sdf(p)));
      CHECK(best < 1e-6);
    }
    spec.seed = 1;
    CHECK(generate_scene(spec).dataset.cloud.positions != a.dataset.cloud.positions);
  }

  TEST_CASE("save_scene writes a loadable dataset and the spec") {
    mspnf::testing::TempDir dir("scene");
    const SyntheticScene s = generate_scene(mspnf::testing::tiny_scene_spec());
    save_scene(dir.path(), s);
    const Dataset d = load_dataset(dir.path());
    CHECK(d.cloud.positions == s.dataset.cloud.positions);
    CHECK(d.test[1].image.data == s.dataset.test[1].image.data);
    const SceneSpec back = resolve_scene_spec(read_text_file((dir / "scene.cfg").string()), {});
    CHECK(back.width == 12);
    CHECK(back.primitives == s.spec.primitives);
  }

  TEST_CASE("grids") {
    const auto g = parse_grid("# comment\nfast iterations=5 seed=2\nslow\n");
    REQUIRE(g.size() == 2);
    CHECK(g[0].name == "fast");
    CHECK(g[0].overrides.size() == 2);
    CHECK(g[1].overrides.empty());
    CHECK(parse_grid("global").size() == 3);
    CHECK(builtin_grid("ratio").size() == 4);
    CHECK(builtin_grid("scales").size() == 5);
    CHECK(builtin_grid("representation").size() == 2);
    CHECK_THROWS_AS(builtin_grid("nope"), ParseError);
    CHECK_THROWS_AS(parse_grid("# nothing\n"), ParseError);
    CHECK_THROWS_AS(parse_grid("a=1\n"), ParseError);
  }

  TEST_CASE("ablation rows record failures and keep going") {
    const SyntheticScene s = generate_scene(mspnf::testing::tiny_scene_spec());
    RunConfig c = mspnf::testing::tiny_run_config();
    c.train.iterations = 2;
    const auto rows = run_ablation(s.dataset, c, parse_grid("ok\nbroken lr_decoder=-1\nalso-ok seed=3\n"), 1);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].error.empty());
    CHECK_FALSE(rows[1].error.empty());
    CHECK(rows[2].error.empty());
    CHECK(rows[2].iterations == 2);
    const std::string csv = format_ablation_csv(rows);
    CHECK(csv.starts_with("variant,psnr,ssim,iterations,wall_seconds,error\n"));
    CHECK(format_ablation_csv({rows[0]}).starts_with("variant,psnr,ssim,iterations,wall_seconds\n"));
  }
}
