#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "raingen/synthdata.hpp"

using raingen::Error;
using raingen::Image;
namespace synth = raingen::synth;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("synthdata");

TEST_CASE("a zero-object scene has exactly the sky and road classes") {
  synth::SceneSpec spec;
  spec.size = 32;
  spec.horizon = 0.5;
  synth::Scene scene = synth::gen_scene(spec);
  std::set<uint8_t> classes(scene.segmap.classes.begin(), scene.segmap.classes.end());
  CHECK(classes == std::set<uint8_t>{0, 1});
  CHECK(scene.segmap.at(0, 0) == 0);
  CHECK(scene.segmap.at(31, 0) == 1);
}

TEST_CASE("rendering is deterministic per spec") {
  synth::SceneSpec spec = synth::random_scene(77, 48);
  synth::Scene a = synth::gen_scene(spec);
  synth::Scene b = synth::gen_scene(spec);
  CHECK(a.image.pix == b.image.pix);
  CHECK(a.segmap.classes == b.segmap.classes);
}

TEST_CASE("vehicle pixel count equals the analytic rectangle-area sum") {
  synth::SceneSpec spec;
  spec.size = 64;
  spec.horizon = 0.4;
  // non-overlapping rectangles on the road
  spec.objects.push_back({synth::SceneObject::Kind::kRect, 2, 4, 40, 10, 6, {0.5, 0.2, 0.2}});
  spec.objects.push_back({synth::SceneObject::Kind::kRect, 2, 30, 44, 8, 9, {0.2, 0.5, 0.2}});
  synth::Scene scene = synth::gen_scene(spec);
  int count = 0;
  for (uint8_t c : scene.segmap.classes)
    if (c == 2) ++count;
  CHECK(count == 10 * 6 + 8 * 9);
}

TEST_CASE("segmap matches the topmost object at every pixel") {
  synth::SceneSpec spec;
  spec.size = 32;
  spec.horizon = 0.4;
  spec.objects.push_back({synth::SceneObject::Kind::kRect, 2, 4, 16, 10, 10, {0.5, 0.2, 0.2}});
  spec.objects.push_back({synth::SceneObject::Kind::kRect, 3, 8, 20, 10, 10, {0.9, 0.9, 0.5}});
  synth::Scene scene = synth::gen_scene(spec);
  CHECK(scene.segmap.at(17, 5) == 2);   // first rect only
  CHECK(scene.segmap.at(21, 10) == 3);  // overlap: later object wins
}

TEST_CASE("all-zero weather is the identity") {
  synth::Scene scene = synth::gen_scene(synth::random_scene(3, 32));
  synth::WeatherParams wp;  // all intensities zero
  Image out = synth::apply_rain(scene.image, scene.segmap, wp, 9);
  CHECK(out.pix == scene.image.pix);
}

TEST_CASE("pure darkening halves every pixel exactly") {
  synth::Scene scene = synth::gen_scene(synth::random_scene(4, 32));
  synth::WeatherParams wp;
  wp.darkening = 0.5;
  Image out = synth::apply_rain(scene.image, scene.segmap, wp, 9);
  for (size_t i = 0; i < out.pix.size(); ++i)
    CHECK(out.pix[i] == scene.image.pix[i] * 0.5);
}

TEST_CASE("mean brightness strictly decreases under darkening") {
  synth::Scene scene = synth::gen_scene(synth::random_scene(5, 32));
  synth::WeatherParams wp;
  wp.darkening = 0.2;
  Image out = synth::apply_rain(scene.image, scene.segmap, wp, 9);
  double before = 0.0, after = 0.0;
  for (double v : scene.image.pix) before += v;
  for (double v : out.pix) after += v;
  CHECK(after < before);
}

TEST_CASE("full rain is deterministic per seed and differs across seeds") {
  synth::Scene scene = synth::gen_scene(synth::random_scene(6, 32));
  synth::WeatherParams wp;
  wp.streak_count = 30;
  wp.streak_opacity = 0.3;
  wp.darkening = 0.3;
  wp.reflection = 0.4;
  wp.mist_radius = 0.6;
  Image a = synth::apply_rain(scene.image, scene.segmap, wp, 42);
  Image b = synth::apply_rain(scene.image, scene.segmap, wp, 42);
  Image c = synth::apply_rain(scene.image, scene.segmap, wp, 43);
  CHECK(a.pix == b.pix);
  CHECK(a.pix != c.pix);
}

TEST_CASE("reflection blends mirrored above-horizon content onto road pixels") {
  synth::SceneSpec spec;
  spec.size = 32;
  spec.horizon = 0.5;  // horizon row 16
  spec.sky_color = {0.8, 0.8, 0.8};
  spec.road_color = {0.2, 0.2, 0.2};
  synth::Scene scene = synth::gen_scene(spec);
  synth::WeatherParams wp;
  wp.reflection = 0.5;
  Image out = synth::apply_rain(scene.image, scene.segmap, wp, 1);
  // road row 17 mirrors sky row 15: 0.5*0.2 + 0.5*0.8
  CHECK(out.at(0, 17, 4) == doctest::Approx(0.5).epsilon(1e-12));
  // sky rows are untouched
  CHECK(out.at(0, 3, 4) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("build_dataset writes the full split layout deterministically") {
  const fs::path root = temp_dir("raingen_ds_a");
  synth::BuildConfig cfg;
  cfg.root = root;
  cfg.train_per_domain = 8;
  cfg.test_per_domain = 2;
  cfg.image_size = 32;
  cfg.seed = 11;
  synth::DatasetManifest manifest = synth::build_dataset(cfg);
  CHECK(manifest.entries.size() == 20);

  int files = 0;
  for (const auto& e : manifest.entries) {
    CHECK(fs::exists(root / e.image));
    CHECK(fs::exists(root / e.segmap));
    files += 2;
  }
  CHECK(files == 40);

  // reload validates and preserves order
  synth::DatasetManifest loaded = synth::load_manifest(root / "manifest.tsv");
  CHECK(loaded.entries.size() == 20);
  CHECK(loaded.split("trainA").size() == 8);
  CHECK(loaded.split("testB").size() == 2);

  // regeneration reproduces identical bytes
  const fs::path root2 = temp_dir("raingen_ds_b");
  synth::BuildConfig cfg2 = cfg;
  cfg2.root = root2;
  synth::build_dataset(cfg2);
  for (const auto& e : manifest.entries) {
    CHECK(file_bytes(root / e.image) == file_bytes(root2 / e.image));
    CHECK(file_bytes(root / e.segmap) == file_bytes(root2 / e.segmap));
  }
  fs::remove_all(root);
  fs::remove_all(root2);
}

TEST_CASE("scene ids never repeat across domains") {
  const fs::path root = temp_dir("raingen_ds_c");
  synth::BuildConfig cfg;
  cfg.root = root;
  cfg.train_per_domain = 4;
  cfg.test_per_domain = 1;
  cfg.image_size = 32;
  synth::DatasetManifest manifest = synth::build_dataset(cfg);
  std::set<std::string> a_stems, b_stems;
  for (const auto& e : manifest.entries) {
    const std::string stem = fs::path(e.image).stem().string();
    if (e.split == "trainA" || e.split == "testA") a_stems.insert(stem);
    else b_stems.insert(stem);
  }
  for (const std::string& s : a_stems) CHECK(b_stems.count(s) == 0);
  fs::remove_all(root);
}

TEST_CASE("semantic spread across unpaired A/B pairs is nonzero") {
  const fs::path root = temp_dir("raingen_ds_d");
  synth::BuildConfig cfg;
  cfg.root = root;
  cfg.train_per_domain = 6;
  cfg.test_per_domain = 1;
  cfg.image_size = 32;
  cfg.seed = 5;
  synth::DatasetManifest manifest = synth::build_dataset(cfg);
  auto a = manifest.split("trainA");
  auto b = manifest.split("trainB");
  std::vector<double> scores;
  for (const auto* ea : a)
    for (const auto* eb : b)
      scores.push_back(raingen::semantic::mpa(
          raingen::semantic::load_segmap(root / ea->segmap, synth::kNumClasses),
          raingen::semantic::load_segmap(root / eb->segmap, synth::kNumClasses)));
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  CHECK(*hi - *lo > 0.0);
  fs::remove_all(root);
}

TEST_CASE("load_image_folder ordering, emptiness and mismatch errors") {
  const fs::path dir = temp_dir("raingen_folder");
  CHECK(synth::load_image_folder(dir, false).empty());

  synth::Scene s1 = synth::gen_scene(synth::random_scene(1, 32));
  synth::Scene s2 = synth::gen_scene(synth::random_scene(2, 32));
  raingen::write_image(dir / "b.ppm", s1.image);
  raingen::write_image(dir / "a.ppm", s2.image);
  raingen::semantic::save_segmap(dir / "b.seg.pgm", s1.segmap);

  auto items = synth::load_image_folder(dir, false);
  REQUIRE(items.size() == 2);
  CHECK(items[0].image_path.filename() == "a.ppm");
  CHECK(items[1].image_path.filename() == "b.ppm");
  CHECK(!items[0].segmap.has_value());
  CHECK(items[1].segmap.has_value());

  CHECK_THROWS_WITH_AS(synth::load_image_folder(dir, true),
                       doctest::Contains("missing segmap"), Error);

  // 32x32 image with a 16x16 segmap is rejected
  raingen::semantic::SegMap small(16, 16, synth::kNumClasses);
  raingen::semantic::save_segmap(dir / "a.seg.pgm", small);
  CHECK_THROWS_WITH_AS(synth::load_image_folder(dir, true),
                       doctest::Contains("size mismatch"), Error);
  fs::remove_all(dir);
}

TEST_SUITE_END();
