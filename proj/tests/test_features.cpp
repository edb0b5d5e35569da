#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mvsr/features.hpp"
#include "mvsr/rng.hpp"
#include "test_support.hpp"

using namespace mvsr;
using testsup::textured_image;

TEST_CASE("handcrafted features of a constant image are zero vectors") {
  FeaturePyramid pyr = extract_handcrafted(GrayImage(32, 16, 0.6));
  for (int lvl : {1, 2, 4, 8}) {
    const FeatureMap& fm = pyr.level(lvl);
    REQUIRE(fm.channels() == 3);
    for (float v : fm.values.data) CHECK(v == doctest::Approx(0.0));
  }
}

TEST_CASE("handcrafted features ignore global brightness shifts") {
  GrayImage img = textured_image(32, 24);
  GrayImage shifted = img;
  for (auto& v : shifted.raw()) v += 0.3;
  FeaturePyramid a = extract_handcrafted(img);
  FeaturePyramid b = extract_handcrafted(shifted);
  for (int lvl : {1, 2, 4, 8}) {
    const auto& fa = a.level(lvl).values.data;
    const auto& fb = b.level(lvl).values.data;
    REQUIRE(fa.size() == fb.size());
    for (size_t i = 0; i < fa.size(); ++i)
      CHECK(std::abs(fa[i] - fb[i]) < 1e-6);
  }
}

TEST_CASE("handcrafted sobel channel flips sign across a vertical edge") {
  GrayImage img(32, 16, 0.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 16; x < 32; ++x) img.at(x, y) = 1.0;
  const FeatureMap& fm = extract_handcrafted(img).level(1);
  // Channel 1 is Sobel-x; the rising edge sits between x=15 and x=16.
  CHECK(fm.at(1, 8, 15) > 0.1f);
  CHECK(fm.at(1, 8, 16) > 0.1f);
  // Flip the image; gradient sign flips with it.
  GrayImage rev(32, 16, 0.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) rev.at(x, y) = 1.0;
  const FeatureMap& fr = extract_handcrafted(rev).level(1);
  CHECK(fr.at(1, 8, 15) < -0.1f);
}

TEST_CASE("handcrafted output is unit normalized") {
  FeaturePyramid pyr = extract_handcrafted(textured_image(40, 24, 1.0));
  for (int lvl : {1, 2, 4, 8}) {
    const FeatureMap& fm = pyr.level(lvl);
    CHECK(fm.unit_norm);
    for (int y = 0; y < fm.height(); ++y)
      for (int x = 0; x < fm.width(); ++x) {
        double n = 0;
        for (int c = 0; c < fm.channels(); ++c)
          n += double(fm.at(c, y, x)) * fm.at(c, y, x);
        n = std::sqrt(n);
        CHECK((std::abs(n - 1.0) < 1e-5 || n < 1e-6));
      }
  }
}

TEST_CASE("handcrafted pyramid dimensions halve per level") {
  FeaturePyramid pyr = extract_handcrafted(GrayImage(160, 128, 0.5));
  CHECK(pyr.level(1).width() == 160);
  CHECK(pyr.level(2).width() == 80);
  CHECK(pyr.level(4).height() == 32);
  CHECK(pyr.level(8).width() == 20);
  CHECK(pyr.level(8).height() == 16);
}

TEST_CASE("unet config reports widths and emitted levels") {
  UNetConfig cfg = desk_match_config();
  CHECK(cfg.finest_output == 2);
  std::vector<int> emitted = cfg.emitted_levels();
  CHECK(std::count(emitted.begin(), emitted.end(), 8) == 1);
  CHECK(std::count(emitted.begin(), emitted.end(), 2) == 1);
  CHECK(std::count(emitted.begin(), emitted.end(), 1) == 0);
  CHECK(cfg.head_channels(8) == cfg.out_channels.at(8));
}

TEST_CASE("unet forward shapes and determinism") {
  UNetConfig cfg = desk_match_config();
  nn::ParamStore params;
  Rng rng(19);
  init_unet_params(params, "m.", cfg, 1, rng);

  GrayImage img = textured_image(48, 32);
  nn::Tape tape;
  VarDict<float> vars = bind_params<float>(tape, params, false);
  nn::Var x = tape.constant(image_to_tensor(img));
  auto out = unet_forward(tape, vars, "m.", cfg, x);
  REQUIRE(out.count(8) == 1);
  REQUIRE(out.count(4) == 1);
  REQUIRE(out.count(2) == 1);
  CHECK(tape.val(out.at(8)).shape ==
        std::vector<int>{cfg.out_channels.at(8), 4, 6});
  CHECK(tape.val(out.at(2)).shape ==
        std::vector<int>{cfg.out_channels.at(2), 16, 24});

  nn::Tape tape2;
  VarDict<float> vars2 = bind_params<float>(tape2, params, false);
  auto out2 = unet_forward(tape2, vars2, "m.", cfg,
                           tape2.constant(image_to_tensor(img)));
  CHECK(tape.val(out.at(4)).data == tape2.val(out2.at(4)).data);
}

TEST_CASE("unet with zero weights emits zero features") {
  UNetConfig cfg = desk_match_config();
  nn::ParamStore params;
  Rng rng(20);
  init_unet_params(params, "m.", cfg, 1, rng);
  for (const std::string& name : params.names())
    std::fill(params.get(name).data.begin(), params.get(name).data.end(), 0.f);

  FeaturePyramid pyr =
      extract_learned(textured_image(32, 24), params, "m.", cfg);
  for (int lvl : cfg.emitted_levels())
    for (float v : pyr.level(lvl).values.data) CHECK(v == 0.0f);
}

TEST_CASE("unet l2 normalization yields unit pixels") {
  UNetConfig cfg = desk_match_config();
  REQUIRE(cfg.l2norm_outputs);
  nn::ParamStore params;
  Rng rng(21);
  init_unet_params(params, "m.", cfg, 1, rng);
  FeaturePyramid pyr =
      extract_learned(textured_image(32, 24, 0.4), params, "m.", cfg);
  const FeatureMap& fm = pyr.level(4);
  CHECK(fm.unit_norm);
  for (int y = 0; y < fm.height(); ++y)
    for (int x = 0; x < fm.width(); ++x) {
      double n = 0;
      for (int c = 0; c < fm.channels(); ++c)
        n += double(fm.at(c, y, x)) * fm.at(c, y, x);
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("context config emits stage levels without normalization") {
  UNetConfig cfg = desk_context_config();
  CHECK(!cfg.l2norm_outputs);
  CHECK(cfg.out_channels.count(8) == 1);
  CHECK(cfg.out_channels.count(4) == 1);
  CHECK(cfg.finest_output == 4);
}

TEST_CASE("unet rejects images not divisible by 8") {
  UNetConfig cfg = desk_match_config();
  nn::ParamStore params;
  Rng rng(22);
  init_unet_params(params, "m.", cfg, 1, rng);
  CHECK_THROWS_AS(extract_learned(GrayImage(30, 24, 0.5), params, "m.", cfg),
                  Error);
}

TEST_CASE("image_to_tensor lays out rows") {
  GrayImage img(3, 2, 0.0);
  img.at(2, 1) = 0.75;
  nn::Tensor t = image_to_tensor(img);
  REQUIRE(t.shape == std::vector<int>{1, 2, 3});
  CHECK(t.at3(0, 1, 2) == doctest::Approx(0.75));
  CHECK(t.at3(0, 0, 0) == doctest::Approx(0.0));
}
