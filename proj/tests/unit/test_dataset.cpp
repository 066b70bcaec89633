#include <doctest.h>

#include "instructir/dataset.hpp"
#include "support/support.hpp"

using namespace instructir;
using namespace testing;

namespace {

struct Fixture {
  TempDir dir;
  DatasetManifest manifest;
  PromptBank bank = load_seed_prompts();

  Fixture() {
    std::filesystem::create_directories(dir / "clean");
    std::filesystem::create_directories(dir / "rainy");
    for (int i = 0; i < 3; ++i) {
      const auto name = "img" + std::to_string(i) + ".png";
      save_png(dir / "clean" / name, synthetic_image(i, 40, 36));
      save_png(dir / "rainy" / name, rain_streaks(synthetic_image(i, 40, 36), 9));
    }
    manifest.root = dir.path();
    manifest.records.push_back({"clean/img0.png", Task::Denoising, std::nullopt, DegradationSpec::noise(0.0)});
    manifest.records.push_back({"clean/img1.png", Task::Deraining, "rainy/img1.png", std::nullopt});
  }
};

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("manifest text round trips") {
  Fixture f;
  auto text = serialize_manifest(f.manifest);
  auto back = parse_manifest(text, f.dir.path());
  CHECK((back.records == f.manifest.records));
  CHECK(text.find(R"("spec":{"type":"gaussian_noise","sigma":0.0})") != std::string::npos);
  save_manifest(f.dir / "m.jsonl", f.manifest);
  auto loaded = load_manifest(f.dir / "m.jsonl");
  CHECK(loaded.root == f.dir.path());
  CHECK((loaded.records == f.manifest.records));
}

TEST_CASE("manifest parse errors name the line") {
  auto msg = [](const std::string& doc) {
    try {
      parse_manifest(doc, ".");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string ok = R"({"clean_path":"a.png","task":"denoising","spec":{"type":"gaussian_noise","sigma":25}})";
  CHECK(msg(ok + "\n" + R"({"clean_path":"a.png","task":"denoising"})").find("line 2") != std::string::npos);
  CHECK(msg(R"({"clean_path":"a.png","task":"denoising","degraded_path":"b.png","spec":{"type":"bicubic","scale":2}})")
            .find("exactly one") != std::string::npos);
  CHECK(msg(R"({"task":"denoising","degraded_path":"b.png"})").find("clean_path") != std::string::npos);
}

TEST_CASE("pairs load, synthesize and check shapes") {
  Fixture f;
  Rng rng(1);
  auto synth = load_pair(f.manifest, f.manifest.records[0], rng);
  CHECK(torch::equal(synth.degraded, synth.clean));
  auto paired = load_pair(f.manifest, f.manifest.records[1], rng);
  CHECK_FALSE(torch::equal(paired.degraded, paired.clean));

  save_png(f.dir / "small.png", synthetic_image(1, 20, 20));
  ManifestRecord bad{"clean/img2.png", Task::Deraining, "small.png", std::nullopt};
  try {
    load_pair(f.manifest, bad, rng);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    CHECK(m.find("[3, 20, 20]") != std::string::npos);
    CHECK(m.find("[3, 40, 36]") != std::string::npos);
  }
  ManifestRecord missing{"clean/none.png", Task::Denoising, std::nullopt, DegradationSpec::noise(25)};
  CHECK_THROWS_AS(load_pair(f.manifest, missing, rng), IoError);
}

TEST_CASE("crops and flips apply identically to both images") {
  Fixture f;
  ImageCache cache;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    auto sample = make_train_sample(f.manifest, f.manifest.records[0], f.bank, rng, {16, true}, &cache);
    CHECK(sample.degraded.sizes() == torch::IntArrayRef({3, 16, 16}));
    CHECK(torch::equal(sample.degraded, sample.clean));
    // The crop comes from the recorded offsets and flips.
    auto full = load_image(f.dir / "clean/img0.png");
    auto expected = full.narrow(1, sample.crop_top, 16).narrow(2, sample.crop_left, 16);
    if (sample.flip_h) expected = expected.flip({2});
    if (sample.flip_v) expected = expected.flip({1});
    CHECK(torch::equal(expected, sample.clean));
    CHECK(sample.task == Task::Denoising);
    CHECK(f.bank.pool(Task::Denoising, Split::Train).size() == 3);
  }
}

TEST_CASE("samples are a pure function of the rng state") {
  Fixture f;
  Rng a(42), b(42);
  auto s1 = make_train_sample(f.manifest, f.manifest.records[1], f.bank, a, {24, true});
  auto s2 = make_train_sample(f.manifest, f.manifest.records[1], f.bank, b, {24, true});
  CHECK(torch::equal(s1.degraded, s2.degraded));
  CHECK(s1.prompt == s2.prompt);
  CHECK(s1.crop_top == s2.crop_top);
}

TEST_CASE("crop corners and flips are uniform") {
  Fixture f;
  ImageCache cache;
  const int n = 4000;
  int flips_h = 0, flips_v = 0;
  std::vector<int> tops(40 - 32 + 1, 0);
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(7, {static_cast<std::uint64_t>(i)});
    auto s = make_train_sample(f.manifest, f.manifest.records[1], f.bank, rng, {32, true}, &cache);
    flips_h += s.flip_h;
    flips_v += s.flip_v;
    ++tops[s.crop_top];
  }
  // Binomial(4000, 0.5): 4 standard deviations is about 126.
  CHECK(std::abs(flips_h - n / 2) < 126);
  CHECK(std::abs(flips_v - n / 2) < 126);
  double chi2 = 0.0;
  const double expect = double(n) / tops.size();
  for (int c : tops) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 26.12);  // p = 0.001, 8 dof
}

TEST_CASE("augmentation can be disabled") {
  Fixture f;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s);
    auto sample = make_train_sample(f.manifest, f.manifest.records[1], f.bank, rng, {16, false});
    CHECK_FALSE(sample.flip_h);
    CHECK_FALSE(sample.flip_v);
  }
}

TEST_CASE("images smaller than the crop are padded with a warning") {
  Fixture f;
  WarningCapture capture;
  Rng rng(1);
  auto s = make_train_sample(f.manifest, f.manifest.records[0], f.bank, rng, {64, true});
  CHECK(s.clean.sizes() == torch::IntArrayRef({3, 64, 64}));
  CHECK(capture.contains("smaller than the crop"));
}

TEST_CASE("task balancing caps by seeded subsampling") {
  DatasetManifest a, b;
  a.root = b.root = "/data";
  for (int i = 0; i < 50; ++i) a.records.push_back({"n" + std::to_string(i), Task::Denoising, std::nullopt, DegradationSpec::noise(25)});
  for (int i = 0; i < 10; ++i) b.records.push_back({"r" + std::to_string(i), Task::Deraining, "d" + std::to_string(i), std::nullopt});
  auto m1 = balance_tasks({a, b}, {{Task::Denoising, 20}}, 3);
  auto m2 = balance_tasks({a, b}, {{Task::Denoising, 20}}, 3);
  auto m3 = balance_tasks({a, b}, {{Task::Denoising, 20}}, 4);
  CHECK(m1.count(Task::Denoising) == 20);
  CHECK(m1.count(Task::Deraining) == 10);
  CHECK((m1.records == m2.records));
  CHECK((m1.records != m3.records));
  // Original order is kept.
  for (std::size_t i = 1; i < 20; ++i) {
    CHECK(std::stoi(m1.records[i - 1].clean_path.substr(1)) < std::stoi(m1.records[i].clean_path.substr(1)));
  }
  WarningCapture capture;
  auto m4 = balance_tasks({a, b}, {{Task::Deraining, 99}}, 3);
  CHECK(m4.count(Task::Deraining) == 10);
  CHECK(capture.contains("exceeds"));
}

TEST_CASE("directory scanning pairs by file name") {
  Fixture f;
  auto m = scan_paired(f.dir.path(), "clean", "rainy", Task::Deraining);
  CHECK(m.size() == 3);
  CHECK(m.records[2].degraded_path == "rainy/img2.png");
  save_png(f.dir / "clean" / "extra.png", synthetic_image(1, 8, 8));
  CHECK_THROWS_AS(scan_paired(f.dir.path(), "clean", "rainy", Task::Deraining), IoError);
  auto s = scan_synthetic(f.dir.path(), "clean", Task::Denoising, DegradationSpec::noise(15));
  CHECK(s.size() == 4);
  CHECK(s.records[0].spec->sigma == 15.0);
}

}
