#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "scarbench/augment.hpp"
#include "scarbench/augment_spec.hpp"
#include "support.hpp"

using namespace scarbench;
using namespace scarbench::augment;
using scarbench::testing::random_image;
using scarbench::testing::random_mask;
using scarbench::testing::rect_mask;

namespace {

// Straight-line CLAHE for a tiles_x x 1 grid: integer histograms per tile,
// clip, spread the excess, cumulative sum; then horizontal interpolation
// between tile centres, clamped at the outer centres.
std::vector<double> clahe_reference_row_tiles(const Image& img, int tiles_x, double clip) {
  const int w = img.width(), h = img.height();
  std::vector<std::array<double, 256>> maps(tiles_x);
  std::vector<double> centre(tiles_x);
  for (int t = 0; t < tiles_x; ++t) {
    const int x0 = t * w / tiles_x, x1 = (t + 1) * w / tiles_x;
    centre[t] = (x0 + x1 - 1) / 2.0;
    std::array<int, 256> counts{};
    for (int r = 0; r < h; ++r)
      for (int c = x0; c < x1; ++c) counts[static_cast<int>(std::lround(img(r, c) * 255))]++;
    const double n = (x1 - x0) * h;
    const double limit = clip * n / 256;
    double clipped_total = 0;
    std::array<double, 256> kept{};
    for (int b = 0; b < 256; ++b) {
      kept[b] = std::min<double>(counts[b], limit);
      clipped_total += counts[b] - kept[b];
    }
    double run = 0;
    for (int b = 0; b < 256; ++b) {
      run += kept[b] + clipped_total / 256;
      maps[t][b] = std::min(1.0, run / n);
    }
  }
  std::vector<double> out(img.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int bin = static_cast<int>(std::lround(img(r, c) * 255));
      int t = 0;
      while (t + 1 < tiles_x && centre[t + 1] <= c) ++t;
      double v;
      if (c <= centre[0]) {
        v = maps[0][bin];
      } else if (c >= centre[tiles_x - 1]) {
        v = maps[tiles_x - 1][bin];
      } else {
        const double wt = (c - centre[t]) / (centre[t + 1] - centre[t]);
        v = (1 - wt) * maps[t][bin] + wt * maps[t + 1][bin];
      }
      out[img.index(r, c)] = v;
    }
  return out;
}

Image quantized_image(CounterRng& rng, int w, int h, int levels) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.set(i, static_cast<double>(rng.next_u64() % levels) / 255.0);
  }
  return img;
}

bool binary(const Mask& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](auto v) { return v <= 1; });
}

bool in_unit(const Image& img) {
  return std::all_of(img.data().begin(), img.data().end(), [](double v) { return v >= 0 && v <= 1; });
}

}  // namespace

TEST(Intensity, GammaExamples) {
  const Image img(3, 1, std::vector<double>{0.25, 0.0, 1.0});
  EXPECT_EQ(gamma_correct(img, 1.0), img);
  EXPECT_DOUBLE_EQ(gamma_correct(img, 2.0)[0], 0.0625);
  EXPECT_DOUBLE_EQ(gamma_correct(img, 0.5)[0], 0.5);
  EXPECT_ERRC(gamma_correct(img, 0.0), Errc::InvalidParameter);
  EXPECT_ERRC(gamma_correct(img, -1.0), Errc::InvalidParameter);
}

TEST(Intensity, BrightnessExamples) {
  const Image img(2, 1, std::vector<double>{0.4, 0.8});
  EXPECT_EQ(adjust_brightness(img, 1.0), img);
  EXPECT_DOUBLE_EQ(adjust_brightness(img, 0.5)[0], 0.2);
  EXPECT_EQ(adjust_brightness(img, 1.5)[1], 1.0);
  EXPECT_ERRC(adjust_brightness(img, -0.1), Errc::InvalidParameter);
}

TEST(Intensity, Monotone) {
  CounterRng rng(21, 0);
  for (int t = 0; t < 100; ++t) {
    const double a = rng.uniform(), b = rng.uniform();
    const Image img(2, 1, std::vector<double>{std::min(a, b), std::max(a, b)});
    const double g = rng.uniform(0.2, 4.0), f = rng.uniform(0.0, 3.0);
    const auto gi = gamma_correct(img, g), bi = adjust_brightness(img, f);
    EXPECT_LE(gi[0], gi[1]);
    EXPECT_LE(bi[0], bi[1]);
    EXPECT_TRUE(in_unit(gi));
    EXPECT_TRUE(in_unit(bi));
  }
}

TEST(Clahe, MatchesReferenceOnTwoTileFixture) {
  // 16x16, left tile dark and narrow, right tile bright and spread, with a
  // spike bin so clipping engages.
  Image img(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const int v = c < 8 ? (r * 8 + c) % 40 : 100 + ((r * 13 + c * 7) % 150);
      img.set(r, c, (r < 4 && c >= 8 ? 200 : v) / 255.0);
    }
  for (double clip : {1.0, 2.0, 4.0, 1000.0}) {
    const auto out = clahe(img, 2, 1, clip);
    const auto ref = clahe_reference_row_tiles(img, 2, clip);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-12) << clip << " " << i;
  }
}

TEST(Clahe, MatchesReferenceOnRandomRowTilings) {
  CounterRng rng(22, 0);
  for (int t = 0; t < 20; ++t) {
    const int tiles = 1 + static_cast<int>(rng.next_u64() % 5);
    const int w = tiles + static_cast<int>(rng.next_u64() % 30);
    const int h = 1 + static_cast<int>(rng.next_u64() % 10);
    const Image img = quantized_image(rng, w, h, 256);
    const double clip = rng.uniform(0.5, 6.0);
    const auto out = clahe(img, tiles, 1, clip);
    const auto ref = clahe_reference_row_tiles(img, tiles, clip);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-12);
  }
}

TEST(Clahe, RangeAndMonotonicity) {
  CounterRng rng(23, 0);
  for (int t = 0; t < 20; ++t) {
    const Image img = random_image(rng, 40, 33);
    EXPECT_TRUE(in_unit(clahe(img, 8, 8, 2.0)));
    EXPECT_TRUE(in_unit(clahe(img, 3, 5, 0.3)));
    // Same interpolation weights (a single tile): order is preserved.
    const auto one = clahe(img, 1, 1, 2.0);
    for (std::size_t i = 0; i < img.size(); ++i)
      for (std::size_t j : {std::size_t{0}, img.size() / 2, img.size() - 1}) {
        if (img[i] < img[j]) {
          ASSERT_LE(one[i], one[j]);
        }
      }
    const auto map = clahe_tile_mapping(img, 0, 20, 0, 11, 1.5);
    for (int b = 1; b < kClaheBins; ++b) ASSERT_LE(map[b - 1], map[b]);
    EXPECT_NEAR(map.back(), 1.0, 1e-12);
  }
}

TEST(Clahe, UnclippedSingleTileIsHistogramEqualization) {
  CounterRng rng(24, 0);
  const Image img = quantized_image(rng, 10, 10, 40);
  const auto out = clahe(img, 1, 1, 1e9);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double below = 0;
    for (std::size_t j = 0; j < img.size(); ++j) below += img[j] <= img[i];
    EXPECT_NEAR(out[i], below / 100.0, 1e-12);
  }
}

TEST(Clahe, Errors) {
  const Image img(8, 8, 0.5);
  EXPECT_ERRC(clahe(img, 0, 1, 2.0), Errc::InvalidParameter);
  EXPECT_ERRC(clahe(img, 9, 1, 2.0), Errc::InvalidParameter);
  EXPECT_ERRC(clahe(img, 2, 2, 0.0), Errc::InvalidParameter);
}

TEST(Rician, ZeroSigmaIsIdentity) {
  CounterRng rng(25, 0);
  const Image img = random_image(rng, 17, 9);
  EXPECT_EQ(add_rician_noise(img, 0.0, 99u), img);
  EXPECT_ERRC(add_rician_noise(img, -0.1, 1u), Errc::InvalidParameter);
}

TEST(Rician, RayleighMomentsOnZeroImage) {
  const Image zero(1000, 1000, 0.0);
  const auto out = add_rician_noise(zero, 0.1, 2024u);
  double sum = 0, sq = 0, mx = 0;
  for (double v : out.data()) {
    sum += v;
    sq += v * v;
    mx = std::max(mx, v);
  }
  const double n = static_cast<double>(out.size());
  const double rayleigh_mean = 0.1 * std::sqrt(std::numbers::pi / 2);
  EXPECT_LT(mx, 1.0);  // clamp inactive
  EXPECT_NEAR(sum / n, rayleigh_mean, 0.01 * rayleigh_mean);
  EXPECT_NEAR(sq / n, 2 * 0.01, 0.01 * 0.02);  // E[M^2] = 2 sigma^2
}

TEST(Rician, NonNegativeAndDeterministic) {
  CounterRng rng(26, 0);
  const Image img = random_image(rng, 20, 20);
  const auto a = add_rician_noise(img, 0.3, 5u), b = add_rician_noise(img, 0.3, 5u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(in_unit(a));
  EXPECT_NE(a, add_rician_noise(img, 0.3, 6u));
}

TEST(Spatial, FlipsAreInvolutions) {
  CounterRng rng(27, 0);
  const Image img = random_image(rng, 7, 5);
  const Mask m = random_mask(rng, 7, 5, 0.4);
  for (SpatialStep s : {SpatialStep{FlipH{}}, SpatialStep{FlipV{}}}) {
    const auto once = spatial_transform(img, m, s, 0);
    const auto twice = spatial_transform(once.first, once.second, s, 0);
    EXPECT_EQ(twice.first, img);
    EXPECT_EQ(twice.second, m);
  }
  const auto h = spatial_transform(img, m, FlipH{}, 0);
  EXPECT_EQ(h.first(2, 0), img(2, 6));
  const auto v = spatial_transform(img, m, FlipV{}, 0);
  EXPECT_EQ(v.second(0, 3), m(4, 3));
}

TEST(Spatial, Rotate90MatchesIndexPermutation) {
  Image img(4, 4);
  Mask m(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) img.set(r, c, (r * 4 + c) / 15.0);
  m.set(0, 1, true);
  m.set(0, 2, true);
  m.set(1, 2, true);
  m.set(3, 0, true);
  const auto [ri, rm] = spatial_transform(img, m, Rotate{90}, 0);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(ri(c, 3 - r), img(r, c));
      EXPECT_EQ(rm(c, 3 - r), m(r, c));
    }
}

TEST(Spatial, RightAngleCompositions) {
  CounterRng rng(28, 0);
  const Image img = random_image(rng, 9, 9);
  const Mask m = random_mask(rng, 9, 9, 0.5);
  auto rot = [](const std::pair<Image, Mask>& p, double d) { return spatial_transform(p.first, p.second, Rotate{d}, 0); };
  auto p = std::pair{img, m};
  for (int k = 0; k < 4; ++k) p = rot(p, 90);
  EXPECT_EQ(p.first, img);
  EXPECT_EQ(p.second, m);
  const auto half = rot({img, m}, 180);
  const auto flips = spatial_transform(spatial_transform(img, m, FlipH{}, 0).first,
                                       spatial_transform(img, m, FlipH{}, 0).second, FlipV{}, 0);
  EXPECT_EQ(half.first, flips.first);
  EXPECT_EQ(half.second, flips.second);
  EXPECT_EQ(rot({img, m}, 360).first, img);
  EXPECT_EQ(rot({img, m}, -90).second, rot({img, m}, 270).second);
}

TEST(Spatial, ScaleOneAndElasticZeroAreIdentity) {
  CounterRng rng(29, 0);
  const Image img = random_image(rng, 11, 8);
  const Mask m = random_mask(rng, 11, 8, 0.5);
  const auto s = spatial_transform(img, m, Scale{1.0}, 0);
  EXPECT_EQ(s.first, img);
  EXPECT_EQ(s.second, m);
  const auto e = spatial_transform(img, m, Elastic{0.0, 3.0}, 17);
  EXPECT_EQ(e.first, img);
  EXPECT_EQ(e.second, m);
}

TEST(Spatial, ScaleEnlargesAboutCentre) {
  const Mask m = rect_mask(21, 21, 8, 8, 5, 5);
  const auto [img, big] = spatial_transform(Image(21, 21, 0.5), m, Scale{2.0}, 0);
  // Rows 8..12 sample back from y = 10 + (r - 10) / 2, rounding .5 up: r in [5, 15).
  EXPECT_EQ(bounding_box(big), (BoundingBox{5, 5, 14, 14}));
  EXPECT_EQ(img(10, 10), 0.5);
  const auto small = spatial_transform(Image(21, 21, 0.5), m, Scale{0.5}, 0);
  EXPECT_LT(small.second.count(), m.count());
  EXPECT_EQ(small.first(0, 0), 0.0);  // zero fill outside the frame
}

TEST(Spatial, ContractsOnRandomInputs) {
  CounterRng rng(30, 0);
  for (int t = 0; t < 40; ++t) {
    const int w = 2 + static_cast<int>(rng.next_u64() % 30), h = 2 + static_cast<int>(rng.next_u64() % 30);
    const Image img = random_image(rng, w, h);
    const Mask m = random_mask(rng, w, h, 0.3);
    const SpatialStep steps[] = {FlipH{}, FlipV{}, Rotate{rng.uniform(-180, 180)},
                                 Scale{rng.uniform(0.5, 2.0)}, Elastic{rng.uniform(0, 10), rng.uniform(1, 8)}};
    for (const auto& s : steps) {
      const auto [oi, om] = spatial_transform(img, m, s, rng.next_u64());
      EXPECT_TRUE(in_unit(oi));
      EXPECT_TRUE(binary(om));
      const auto [ei, em] = spatial_transform(img, Mask(w, h), s, 3);
      EXPECT_TRUE(em.empty());
    }
  }
  EXPECT_ERRC(spatial_transform(Image(3, 3), Mask(3, 4), FlipH{}, 0), Errc::DimensionMismatch);
  EXPECT_ERRC(spatial_transform(Image(3, 3), Mask(3, 3), Scale{0.0}, 0), Errc::InvalidParameter);
}

TEST(Spatial, ElasticDisplacementPeakIsAlpha) {
  // A single foreground pixel on a grid of zeros: wherever the warp samples
  // it, the source is within alpha of the output position.
  const int n = 40;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Mask m(n, n);
    m.set(20, 20, true);
    const auto [img, out] = spatial_transform(Image(n, n), m, Elastic{3.0, 4.0}, seed);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        if (out(r, c)) {
          EXPECT_LE(std::hypot(r - 20.0, c - 20.0), 3.0 + std::sqrt(0.5) + 1e-9);
        }
      }
  }
}

TEST(Jitter, ZeroFractionsAndContracts) {
  const BoundingBox b{3, 4, 10, 12};
  EXPECT_EQ(jitter_bbox(b, 0.0, 0.0, 1u, 20, 20), b);
  CounterRng rng(31, 0);
  for (int t = 0; t < 500; ++t) {
    const int w = 1 + static_cast<int>(rng.next_u64() % 50), h = 1 + static_cast<int>(rng.next_u64() % 50);
    const int x0 = static_cast<int>(rng.next_u64() % w), y0 = static_cast<int>(rng.next_u64() % h);
    const int x1 = x0 + static_cast<int>(rng.next_u64() % (w - x0));
    const int y1 = y0 + static_cast<int>(rng.next_u64() % (h - y0));
    const BoundingBox box{x0, y0, x1, y1};
    const double sf = rng.uniform(0, 2), kf = rng.uniform(0, 2);
    const auto seed = rng.next_u64();
    const auto out = jitter_bbox(box, sf, kf, seed, w, h);
    EXPECT_TRUE(out.valid_in(w, h));
    EXPECT_EQ(out, jitter_bbox(box, sf, kf, seed, w, h));
  }
  EXPECT_ERRC(jitter_bbox(b, -0.1, 0.0, 1u, 20, 20), Errc::InvalidParameter);
  EXPECT_ERRC(jitter_bbox(b, 0.1, 0.1, 1u, 8, 20), Errc::InvalidParameter);
}

TEST(Jitter, ShiftStaysWithinFraction) {
  const BoundingBox b{20, 20, 29, 39};  // 10 x 20
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto out = jitter_bbox(b, 0.1, 0.0, seed, 100, 100);
    EXPECT_EQ(out.width(), 10);
    EXPECT_EQ(out.height(), 20);
    EXPECT_LE(std::abs(out.x_min - b.x_min), 1);
    EXPECT_LE(std::abs(out.y_min - b.y_min), 2);
  }
}

TEST(AugmentSpec, DeterministicAndSeedSensitive) {
  AugmentSpec spec;
  spec.seed = 42;
  spec.steps = {GammaStep{}, BrightnessStep{}, ClaheStep{4, 4, 2.0}, RicianStep{{0.01, 0.05}},
                FlipHStep{}, RotateStep{}, ScaleStep{}, ElasticStep{}, BBoxJitterStep{}};
  CounterRng rng(32, 0);
  const Image img = random_image(rng, 32, 32);
  const Mask m = rect_mask(32, 32, 10, 8, 9, 12);
  const auto a = apply(spec, img, m, BoundingBox{8, 10, 19, 18});
  const auto b = apply(spec, img, m, BoundingBox{8, 10, 19, 18});
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.bbox, b.bbox);
  ASSERT_TRUE(a.bbox);
  EXPECT_TRUE(a.bbox->valid_in(32, 32));
  EXPECT_TRUE(in_unit(a.image));
  EXPECT_TRUE(binary(a.mask));
  spec.seed = 43;
  EXPECT_NE(apply(spec, img, m).image, a.image);
}

TEST(AugmentSpec, StepStreamsAreIndependent) {
  // Rician noise in slot 1 sees the same stream whatever sits in slot 0.
  const Image zero(16, 16, 0.0);
  const Mask m(16, 16);
  AugmentSpec s1{{FlipHStep{}, RicianStep{{0.05, 0.05}}}, 9};
  AugmentSpec s2{{FlipVStep{}, RicianStep{{0.05, 0.05}}}, 9};
  EXPECT_EQ(apply(s1, zero, m).image, apply(s2, zero, m).image);
}

TEST(AugmentSpec, BoxFollowsMaskAfterSpatialSteps) {
  const Mask m = rect_mask(10, 10, 1, 1, 2, 3);
  const AugmentSpec spec{{FlipHStep{}}, 0};
  const auto r = apply(spec, Image(10, 10), m, BoundingBox{1, 1, 3, 2});
  EXPECT_EQ(r.bbox, (BoundingBox{6, 1, 8, 2}));
  const auto keep = apply(AugmentSpec{{GammaStep{}}, 0}, Image(10, 10), m, BoundingBox{0, 0, 9, 9});
  EXPECT_EQ(keep.bbox, (BoundingBox{0, 0, 9, 9}));
}

TEST(AugmentSpec, JsonRoundTripAndErrors) {
  const auto j = nlohmann::json::parse(R"({"seed": 7, "steps": [
    {"kind": "gamma", "gamma": [0.8, 1.2]}, {"kind": "brightness", "factor": 1.1},
    {"kind": "clahe", "tiles_x": 4, "tiles_y": 2, "clip_limit": 3.0}, {"kind": "rician"},
    {"kind": "flip_h"}, {"kind": "flip_v"}, {"kind": "rotate", "degrees": 90},
    {"kind": "scale", "factor": [0.9, 1.1]}, {"kind": "elastic", "alpha": 4, "sigma": 5},
    {"kind": "bbox_jitter", "shift_frac": 0.2, "scale_frac": 0.05}]})");
  const auto spec = spec_from_json(j);
  EXPECT_EQ(spec.seed, 7u);
  ASSERT_EQ(spec.steps.size(), 10u);
  EXPECT_EQ(std::get<RotateStep>(spec.steps[6]).degrees, (ParamRange{90, 90}));
  EXPECT_EQ(std::get<RicianStep>(spec.steps[3]).sigma, (ParamRange{0.0, 0.05}));
  EXPECT_EQ(to_json(spec_from_json(to_json(spec))), to_json(spec));

  using nlohmann::json;
  EXPECT_EQ(spec_from_json(json::parse(R"({"steps": []})")).seed, 0u);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": -3})")), Errc::ParseError);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1.5})")), Errc::ParseError);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1, "steps": [{"kind": "warp"}]})")), Errc::ParseError);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1, "steps": [{"kind": "gamma", "gamma": "x"}]})")),
              Errc::ParseError);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1, "steps": [{"kind": "gamma", "gamma": [-1, 1]}]})")),
              Errc::InvalidParameter);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1, "steps": [{"kind": "scale", "factor": [1.2, 1.1]}]})")),
              Errc::InvalidParameter);
  EXPECT_ERRC(spec_from_json(json::parse(R"({"seed": 1, "steps": [{"kind": "clahe", "tiles_x": 0}]})")),
              Errc::InvalidParameter);
}
