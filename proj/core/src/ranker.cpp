#include "mvsr/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mvsr {

namespace {

constexpr int kRingDx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr int kRingDy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};

nn::Tensor he_conv(int co, int ci, int k, double gain, Rng& rng) {
  nn::Tensor w;
  w.shape = {co, ci, k, k};
  w.data.resize(nn::Tensor::numel_of(w.shape));
  const double stddev = std::sqrt(gain / (ci * k * k));
  for (auto& v : w.data) v = static_cast<float>(rng.normal() * stddev);
  return w;
}

void add_conv(nn::ParamStore& params, const std::string& name, int co, int ci,
              int k, double gain, Rng& rng) {
  params.add(name + ".w", he_conv(co, ci, k, gain, rng));
  params.add(name + ".b", nn::Tensor::zeros({co}));
}

template <typename T>
nn::Var conv_layer(nn::TapeT<T>& tape, const VarDict<T>& params,
                   const std::string& name, nn::Var x, int pad) {
  return tape.conv2d(x, params.at(name + ".w"), params.at(name + ".b"), 1, pad);
}

// Standard ConvGRU cell; h and x stay at the same spatial size.
template <typename T>
nn::Var conv_gru(nn::TapeT<T>& tape, const VarDict<T>& params,
                 const std::string& prefix, nn::Var h, nn::Var x) {
  nn::Var hx = tape.concat0({h, x});
  nn::Var z = tape.sigmoid_(conv_layer(tape, params, prefix + "z", hx, 1));
  nn::Var r = tape.sigmoid_(conv_layer(tape, params, prefix + "r", hx, 1));
  nn::Var rhx = tape.concat0({tape.mul(r, h), x});
  nn::Var n = tape.tanh_(conv_layer(tape, params, prefix + "n", rhx, 1));
  // h' = (1 - z) h + z n
  nn::Var keep = tape.mul(tape.affine(z, -1.0, 1.0), h);
  return tape.add(keep, tape.mul(z, n));
}

}  // namespace

void init_stage_params(nn::ParamStore& params, const std::string& prefix,
                       const RankerConfig& cfg, Rng& rng) {
  check(cfg.c_ctx > 0 && cfg.hidden > 0 && cfg.app_channels > 0 &&
            (cfg.cost_len == 3 || cfg.cost_len == 6),
        "init_stage_params: bad config");
  const int f = cfg.feature_len();
  add_conv(params, prefix + "mlp.0", cfg.hidden, f, 1, 2.0, rng);
  add_conv(params, prefix + "mlp.1", cfg.hidden, cfg.hidden, 1, 2.0, rng);
  add_conv(params, prefix + "mlp.2", cfg.hidden, cfg.hidden, 1, 2.0, rng);
  add_conv(params, prefix + "mlp.3", 1, cfg.hidden, 1, 1.0, rng);

  const int ci_in = cfg.init_input_len();
  add_conv(params, prefix + "ci.0", cfg.c_ctx, ci_in, 3, 2.0, rng);
  add_conv(params, prefix + "ci.1", cfg.c_ctx, cfg.c_ctx, 3, 1.0, rng);

  const int gru_in = cfg.c_ctx + cfg.gru_input_len();
  for (const char* g : {"gruF.", "gruH."}) {
    add_conv(params, prefix + g + std::string("z"), cfg.c_ctx, gru_in, 3, 1.0,
             rng);
    add_conv(params, prefix + g + std::string("r"), cfg.c_ctx, gru_in, 3, 1.0,
             rng);
    add_conv(params, prefix + g + std::string("n"), cfg.c_ctx, gru_in, 3, 1.0,
             rng);
  }
}

std::array<double, 8> second_order_error(const PseudoDisparityMap& d_hat,
                                         const DepthGradient& grad, int x,
                                         int y, double d_i) {
  const int w = d_hat.values.width();
  const int h = d_hat.values.height();
  std::array<double, 8> e{};
  for (int k = 0; k < 8; ++k) {
    const int nx = std::clamp(x + kRingDx[k], 0, w - 1);
    const int ny = std::clamp(y + kRingDy[k], 0, h - 1);
    const double dn = d_hat.values.at(nx, ny);
    if (!is_valid(dn) || !is_valid(d_i)) {
      e[k] = 0.0;
      continue;
    }
    // Neighbor's first-order prediction at p, compared against d_i. The
    // offset from neighbor to p is -(ring offset).
    const double pred = dn - grad.dx.at(nx, ny) * static_cast<double>(kRingDx[k]) -
                        grad.dy.at(nx, ny) * static_cast<double>(kRingDy[k]);
    e[k] = std::tanh(pred - d_i);
  }
  return e;
}

namespace {

// Fills channels [cost triplet | 8 ring errors] for one candidate map given
// by eval(x, y) -> d_i.
template <typename F>
nn::Tensor input_maps_impl(const CostVolumePyramid& pyr,
                           const PseudoDisparityMap& d_hat,
                           const DepthGradient& grad, bool drop_geom, F&& eval) {
  const int w = pyr.coarse.width;
  const int h = pyr.coarse.height;
  check(d_hat.values.width() == w && d_hat.values.height() == h,
        "input maps: estimate size mismatch");
  const int clen = pyr.fine ? 6 : 3;
  nn::Tensor out = nn::Tensor::zeros({clen + 8, h, w});
  const size_t plane = static_cast<size_t>(w) * h;
  double trip[6];
  int tlen = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double di = eval(x, y);
      const size_t px = static_cast<size_t>(y) * w + x;
      cost_triplet(pyr, x, y, di, trip, &tlen);
      for (int c = 0; c < tlen; ++c)
        out.data[c * plane + px] = static_cast<float>(trip[c]);
      if (!drop_geom) {
        const auto e = second_order_error(d_hat, grad, x, y, di);
        for (int c = 0; c < 8; ++c)
          out.data[(clen + c) * plane + px] = static_cast<float>(e[c]);
      }
    }
  }
  return out;
}

}  // namespace

nn::Tensor candidate_input_maps(const CostVolumePyramid& pyr,
                                const PseudoDisparityMap& d_hat,
                                const DepthGradient& grad,
                                const HypothesisSet& hyps, int cand_index,
                                bool drop_geom) {
  check(cand_index >= 0 && cand_index < hyps.k,
        "candidate_input_maps: slot out of range");
  return input_maps_impl(pyr, d_hat, grad, drop_geom, [&](int x, int y) {
    return hyps.at(x, y, cand_index);
  });
}

nn::Tensor estimate_input_maps(const CostVolumePyramid& pyr,
                               const PseudoDisparityMap& d_hat,
                               const DepthGradient& grad, bool drop_geom) {
  return input_maps_impl(pyr, d_hat, grad, drop_geom,
                         [&](int x, int y) { return d_hat.values.at(x, y); });
}

template <typename T>
nn::Var score_map(nn::TapeT<T>& tape, const VarDict<T>& params,
                  const std::string& prefix, const RankerConfig& cfg,
                  nn::Var cand_input, nn::Var ctx) {
  check(tape.val(cand_input).dim(0) == cfg.cost_len + 8 &&
            tape.val(ctx).dim(0) == cfg.c_ctx,
        "score_map: channel mismatch");
  nn::Var x = tape.concat0({cand_input, ctx});
  x = tape.relu(conv_layer(tape, params, prefix + "mlp.0", x, 0));
  x = tape.relu(conv_layer(tape, params, prefix + "mlp.1", x, 0));
  x = tape.relu(conv_layer(tape, params, prefix + "mlp.2", x, 0));
  return conv_layer(tape, params, prefix + "mlp.3", x, 0);
}

template <typename T>
nn::Var score_all_candidates(nn::TapeT<T>& tape, const VarDict<T>& params,
                             const std::string& prefix, const RankerConfig& cfg,
                             const CostVolumePyramid& pyr,
                             const PseudoDisparityMap& d_hat,
                             const DepthGradient& grad,
                             const HypothesisSet& hyps, nn::Var ctx) {
  std::vector<nn::Var> per_cand;
  per_cand.reserve(hyps.k);
  for (int i = 0; i < hyps.k; ++i) {
    nn::Tensor maps = candidate_input_maps(pyr, d_hat, grad, hyps, i,
                                           cfg.drop_geom);
    nn::Var in = tape.constant(maps.template cast<T>());
    per_cand.push_back(score_map(tape, params, prefix, cfg, in, ctx));
  }
  return tape.concat0(per_cand);
}

double score_single(const nn::ParamStore& params, const std::string& prefix,
                    const RankerConfig& cfg,
                    const std::vector<double>& feature) {
  check(static_cast<int>(feature.size()) == cfg.feature_len(),
        "score_single: feature length mismatch");
  nn::TapeD tape;
  VarDict<double> vars = bind_params<double>(tape, params, false);
  nn::TensorD cand = nn::TensorD::zeros({cfg.cost_len + 8, 1, 1});
  nn::TensorD ctx = nn::TensorD::zeros({cfg.c_ctx, 1, 1});
  for (int c = 0; c < cfg.cost_len + 8; ++c) cand.data[c] = feature[c];
  for (int c = 0; c < cfg.c_ctx; ++c) ctx.data[c] = feature[cfg.cost_len + 8 + c];
  nn::Var s = score_map(tape, vars, prefix, cfg, tape.constant(cand),
                        tape.constant(ctx));
  return tape.val(s).data[0];
}

PseudoDisparityMap select_best(const HypothesisSet& hyps,
                               const nn::Tensor& scores) {
  check(scores.rank() == 3 && scores.dim(0) == hyps.k &&
            scores.dim(1) == hyps.height && scores.dim(2) == hyps.width,
        "select_best: score shape mismatch");
  PseudoDisparityMap out;
  out.scale_fb = hyps.scale_fb;
  out.values = Image2D<double>(hyps.width, hyps.height, 0.0);
  const size_t plane = static_cast<size_t>(hyps.width) * hyps.height;
  for (int y = 0; y < hyps.height; ++y) {
    for (int x = 0; x < hyps.width; ++x) {
      const size_t px = static_cast<size_t>(y) * hyps.width + x;
      int best = 0;
      float best_s = scores.data[px];
      for (int i = 1; i < hyps.k; ++i) {
        const float s = scores.data[i * plane + px];
        if (s > best_s) {
          best_s = s;
          best = i;
        }
      }
      out.values.at(x, y) = hyps.at(x, y, best);
    }
  }
  return out;
}

PseudoDisparityMap expectation_refine(const HypothesisSet& hyps,
                                      const nn::Tensor& scores) {
  check(scores.rank() == 3 && scores.dim(0) == hyps.k &&
            scores.dim(1) == hyps.height && scores.dim(2) == hyps.width,
        "expectation_refine: score shape mismatch");
  PseudoDisparityMap out;
  out.scale_fb = hyps.scale_fb;
  out.values = Image2D<double>(hyps.width, hyps.height, 0.0);
  const size_t plane = static_cast<size_t>(hyps.width) * hyps.height;
  for (int y = 0; y < hyps.height; ++y) {
    for (int x = 0; x < hyps.width; ++x) {
      const size_t px = static_cast<size_t>(y) * hyps.width + x;
      double mx = scores.data[px];
      for (int i = 1; i < hyps.k; ++i)
        mx = std::max(mx, static_cast<double>(scores.data[i * plane + px]));
      double zsum = 0.0, dsum = 0.0;
      for (int i = 0; i < hyps.k; ++i) {
        const double z = std::exp(scores.data[i * plane + px] - mx);
        zsum += z;
        dsum += z * hyps.at(x, y, i);
      }
      out.values.at(x, y) = dsum / zsum;
    }
  }
  return out;
}

template <typename T>
nn::Var init_context(nn::TapeT<T>& tape, const VarDict<T>& params,
                     const std::string& prefix, const RankerConfig& cfg,
                     nn::Var cost_e_input, nn::Var appearance) {
  check(tape.val(cost_e_input).dim(0) == cfg.gru_input_len() &&
            tape.val(appearance).dim(0) == cfg.app_channels,
        "init_context: channel mismatch");
  nn::Var x = tape.concat0({cost_e_input, appearance});
  x = tape.relu(conv_layer(tape, params, prefix + "ci.0", x, 1));
  return tape.tanh_(conv_layer(tape, params, prefix + "ci.1", x, 1));
}

template <typename T>
nn::Var update_context(nn::TapeT<T>& tape, const VarDict<T>& params,
                       const std::string& prefix, const RankerConfig& cfg,
                       nn::Var ctx, nn::Var cost_e_input) {
  check(tape.val(ctx).dim(0) == cfg.c_ctx &&
            tape.val(cost_e_input).dim(0) == cfg.gru_input_len(),
        "update_context: channel mismatch");
  const int h = tape.val(ctx).dim(1);
  const int w = tape.val(ctx).dim(2);
  nn::Var full = conv_gru(tape, params, prefix + "gruF.", ctx, cost_e_input);
  nn::Var half = conv_gru(tape, params, prefix + "gruH.",
                          tape.area_down2(ctx), tape.area_down2(cost_e_input));
  nn::Var half_up = tape.resize_bilinear(half, h, w);
  return tape.add(full, half_up);
}

template nn::Var score_map<float>(nn::TapeT<float>&, const VarDict<float>&,
                                  const std::string&, const RankerConfig&,
                                  nn::Var, nn::Var);
template nn::Var score_map<double>(nn::TapeT<double>&, const VarDict<double>&,
                                   const std::string&, const RankerConfig&,
                                   nn::Var, nn::Var);
template nn::Var score_all_candidates<float>(
    nn::TapeT<float>&, const VarDict<float>&, const std::string&,
    const RankerConfig&, const CostVolumePyramid&, const PseudoDisparityMap&,
    const DepthGradient&, const HypothesisSet&, nn::Var);
template nn::Var score_all_candidates<double>(
    nn::TapeT<double>&, const VarDict<double>&, const std::string&,
    const RankerConfig&, const CostVolumePyramid&, const PseudoDisparityMap&,
    const DepthGradient&, const HypothesisSet&, nn::Var);
template nn::Var init_context<float>(nn::TapeT<float>&, const VarDict<float>&,
                                     const std::string&, const RankerConfig&,
                                     nn::Var, nn::Var);
template nn::Var init_context<double>(nn::TapeT<double>&, const VarDict<double>&,
                                      const std::string&, const RankerConfig&,
                                      nn::Var, nn::Var);
template nn::Var update_context<float>(nn::TapeT<float>&, const VarDict<float>&,
                                       const std::string&, const RankerConfig&,
                                       nn::Var, nn::Var);
template nn::Var update_context<double>(nn::TapeT<double>&,
                                        const VarDict<double>&,
                                        const std::string&, const RankerConfig&,
                                        nn::Var, nn::Var);

}  // namespace mvsr
