#include "mvsr/features.hpp"

#include <cmath>

namespace mvsr {
namespace {

GrayImage area_down2_image(const GrayImage& in) {
  check(in.width() % 2 == 0 && in.height() % 2 == 0,
        "features: image dims must be even for downsampling");
  GrayImage out(in.width() / 2, in.height() / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      out.at(x, y) = 0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) +
                             in.at(2 * x, 2 * y + 1) + in.at(2 * x + 1, 2 * y + 1));
  return out;
}

FeatureMap handcrafted_level(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  nn::Tensor vals({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double mean = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) mean += img.at_clamped(x + dx, y + dy);
      mean /= 25.0;
      auto s = [&](int dx, int dy) { return img.at_clamped(x + dx, y + dy); };
      double gx = (s(1, -1) + 2 * s(1, 0) + s(1, 1) - s(-1, -1) - 2 * s(-1, 0) -
                   s(-1, 1)) / 8.0;
      double gy = (s(-1, 1) + 2 * s(0, 1) + s(1, 1) - s(-1, -1) - 2 * s(0, -1) -
                   s(1, -1)) / 8.0;
      double c0 = img.at(x, y) - mean;
      double n = std::sqrt(c0 * c0 + gx * gx + gy * gy);
      if (n < 1e-8) {
        vals.at3(0, y, x) = vals.at3(1, y, x) = vals.at3(2, y, x) = 0.0f;
      } else {
        vals.at3(0, y, x) = float(c0 / n);
        vals.at3(1, y, x) = float(gx / n);
        vals.at3(2, y, x) = float(gy / n);
      }
    }
  return FeatureMap{std::move(vals), true};
}

}  // namespace

FeaturePyramid extract_handcrafted(const GrayImage& image) {
  check(image.width() >= 8 && image.height() >= 8, "features: image too small");
  check(image.width() % 8 == 0 && image.height() % 8 == 0,
        "features: image dims must be divisible by 8");
  FeaturePyramid pyr;
  GrayImage level = image;
  for (int f : {1, 2, 4, 8}) {
    if (f > 1) level = area_down2_image(level);
    pyr.levels[f] = handcrafted_level(level);
  }
  return pyr;
}

int UNetConfig::width_at(int factor) const {
  switch (factor) {
    case 1: return widths[0];
    case 2: return widths[1];
    case 4: return widths[2];
    case 8: return widths[3];
    default: fail("unet: bad downscale factor");
  }
}

int UNetConfig::head_channels(int factor) const {
  auto it = out_channels.find(factor);
  return it != out_channels.end() ? it->second : width_at(factor);
}

std::vector<int> UNetConfig::emitted_levels() const {
  std::vector<int> out;
  for (int f : {8, 4, 2, 1})
    if (f >= finest_output) out.push_back(f);
  return out;
}

UNetConfig desk_match_config() {
  // Sized for single-core training: a step with three source views has to
  // stay well under a second.
  UNetConfig cfg;
  cfg.widths = {8, 12, 16, 16};
  cfg.finest_output = 2;
  cfg.out_channels = {{2, 8}, {4, 8}, {8, 8}};
  cfg.l2norm_outputs = true;
  return cfg;
}

UNetConfig paper_match_config() {
  UNetConfig cfg;
  cfg.widths = {16, 32, 48, 48};
  cfg.finest_output = 1;
  cfg.l2norm_outputs = true;
  return cfg;
}

UNetConfig desk_context_config() {
  UNetConfig cfg;
  cfg.widths = {8, 12, 16, 16};
  cfg.finest_output = 4;
  cfg.out_channels = {{8, 12}, {4, 12}};
  cfg.l2norm_outputs = false;
  return cfg;
}

UNetConfig paper_context_config() {
  UNetConfig cfg;
  cfg.widths = {16, 32, 48, 48};
  cfg.finest_output = 4;
  cfg.out_channels = {{8, 48}, {4, 48}};
  cfg.l2norm_outputs = false;
  return cfg;
}

namespace {

nn::Tensor he_conv(std::vector<int> shape, size_t fan_in, double gain, Rng& rng) {
  nn::Tensor t(std::move(shape));
  double std = std::sqrt(gain / double(fan_in));
  for (float& v : t.data) v = float(std * rng.normal());
  return t;
}

void add_conv(nn::ParamStore& ps, const std::string& base, int co, int ci, int k,
              Rng& rng) {
  ps.add(base + ".w", he_conv({co, ci, k, k}, size_t(ci) * k * k, 2.0, rng));
  ps.add(base + ".g", nn::Tensor::full({co}, 1.0f));
  ps.add(base + ".b", nn::Tensor({co}));
}

}  // namespace

void init_unet_params(nn::ParamStore& params, const std::string& prefix,
                      const UNetConfig& cfg, int in_channels, Rng& rng) {
  add_conv(params, prefix + "enc1.a", cfg.width_at(1), in_channels, 3, rng);
  add_conv(params, prefix + "enc1.b", cfg.width_at(1), cfg.width_at(1), 3, rng);
  for (int f : {2, 4, 8}) {
    const std::string base = prefix + "enc" + std::to_string(f);
    add_conv(params, base + ".a", cfg.width_at(f), cfg.width_at(f / 2), 3, rng);
    add_conv(params, base + ".b", cfg.width_at(f), cfg.width_at(f), 3, rng);
  }
  for (int f : {4, 2, 1}) {
    if (f < cfg.finest_output) break;
    const std::string base = prefix + "dec" + std::to_string(f);
    const int ci = cfg.width_at(2 * f), co = cfg.width_at(f);
    params.add(base + ".up.w", he_conv({ci, co, 4, 4}, size_t(ci) * 16, 2.0, rng));
    params.add(base + ".up.g", nn::Tensor::full({co}, 1.0f));
    params.add(base + ".up.b", nn::Tensor({co}));
    add_conv(params, base + ".m", co, 2 * co, 3, rng);
  }
  for (int f : cfg.emitted_levels()) {
    const std::string base = prefix + "out" + std::to_string(f);
    const int ci = cfg.width_at(f), co = cfg.head_channels(f);
    params.add(base + ".w", he_conv({co, ci, 1, 1}, size_t(ci), 1.0, rng));
    params.add(base + ".b", nn::Tensor({co}));
  }
}

template <typename T>
std::map<int, nn::Var> unet_forward(nn::TapeT<T>& tape, const VarDict<T>& params,
                                    const std::string& prefix,
                                    const UNetConfig& cfg, nn::Var image) {
  const auto& iv = tape.val(image);
  check(iv.rank() == 3 && iv.dim(1) % 8 == 0 && iv.dim(2) % 8 == 0,
        "unet: input must be {C, H, W} with dims divisible by 8");
  auto block = [&](nn::Var x, const std::string& name, int stride) {
    nn::Var y = tape.conv2d(x, params.at(prefix + name + ".w"), nn::Var{}, stride, 1);
    y = tape.channel_affine(y, params.at(prefix + name + ".g"),
                            params.at(prefix + name + ".b"));
    return tape.relu(y);
  };

  std::map<int, nn::Var> trunk;
  nn::Var e = block(block(image, "enc1.a", 1), "enc1.b", 1);
  trunk[1] = e;
  for (int f : {2, 4, 8}) {
    const std::string base = "enc" + std::to_string(f);
    e = block(block(e, base + ".a", 2), base + ".b", 1);
    trunk[f] = e;
  }

  std::map<int, nn::Var> dec;
  dec[8] = trunk[8];
  for (int f : {4, 2, 1}) {
    if (f < cfg.finest_output) break;
    const std::string base = "dec" + std::to_string(f);
    nn::Var up = tape.deconv2d_k4s2(dec[2 * f], params.at(prefix + base + ".up.w"),
                                    nn::Var{});
    up = tape.channel_affine(up, params.at(prefix + base + ".up.g"),
                             params.at(prefix + base + ".up.b"));
    up = tape.relu(up);
    nn::Var cat = tape.concat0({up, trunk[f]});
    dec[f] = block(cat, base + ".m", 1);
  }

  std::map<int, nn::Var> out;
  for (int f : cfg.emitted_levels()) {
    const std::string base = "out" + std::to_string(f);
    nn::Var head = tape.conv2d(dec[f], params.at(prefix + base + ".w"),
                               params.at(prefix + base + ".b"), 1, 0);
    out[f] = cfg.l2norm_outputs ? tape.l2norm0(head) : head;
  }
  return out;
}

template std::map<int, nn::Var> unet_forward<float>(nn::TapeT<float>&,
                                                    const VarDict<float>&,
                                                    const std::string&,
                                                    const UNetConfig&, nn::Var);
template std::map<int, nn::Var> unet_forward<double>(nn::TapeT<double>&,
                                                     const VarDict<double>&,
                                                     const std::string&,
                                                     const UNetConfig&, nn::Var);

FeaturePyramid extract_learned(const GrayImage& image,
                               const nn::ParamStore& params,
                               const std::string& prefix, const UNetConfig& cfg) {
  nn::Tape tape;
  VarDict<float> bound = bind_params(tape, params, false);
  nn::Var img = tape.constant(image_to_tensor(image));
  std::map<int, nn::Var> out = unet_forward(tape, bound, prefix, cfg, img);
  FeaturePyramid pyr;
  for (auto& [f, v] : out)
    pyr.levels[f] = FeatureMap{tape.val(v), cfg.l2norm_outputs};
  return pyr;
}

nn::Tensor image_to_tensor(const GrayImage& image) {
  nn::Tensor t({1, image.height(), image.width()});
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      t.at3(0, y, x) = float(image.at(x, y));
  return t;
}

}  // namespace mvsr
