#include "mvsr/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <memory>

#include "mvsr/cost.hpp"
#include "mvsr/losses.hpp"
#include "mvsr/ranker.hpp"

namespace mvsr {

namespace {

using TapeD = nn::TapeD;
using TensorD = nn::TensorT<double>;
using Builder = std::function<nn::Var(TapeD&, const std::vector<nn::Var>&)>;

/// Fixed-weight contraction to a scalar so non-scalar outputs get checked
/// across all elements at once.
nn::Var scalarize(TapeD& t, nn::Var v, uint64_t wseed) {
  TensorD w(t.val(v).shape);
  Rng r(wseed);
  for (double& x : w.data) x = r.uniform(-1.0, 1.0);
  return t.sum_all(t.mul_const(v, std::move(w)));
}

class Harness {
 public:
  Harness(uint64_t seed, double tol) : rng_(seed), tol_(tol) {}

  Rng& rng() { return rng_; }
  std::vector<GradCheckCase> take() { return std::move(cases_); }

  TensorD uniform(std::vector<int> shape, double lo, double hi) {
    TensorD t(std::move(shape));
    for (double& v : t.data) v = rng_.uniform(lo, hi);
    return t;
  }

  /// Magnitude in [0.1, 0.4] or [0.6, 0.9], random sign: at least 0.1 away
  /// from the kinks of relu, |.|, clamp(+-0.5) and div-by-zero.
  TensorD away(std::vector<int> shape) {
    TensorD t(std::move(shape));
    for (double& v : t.data) {
      double m = rng_.next_u64() & 1 ? rng_.uniform(0.1, 0.4)
                                     : rng_.uniform(0.6, 0.9);
      v = rng_.next_u64() & 1 ? m : -m;
    }
    return t;
  }

  void run(const std::string& name, std::vector<TensorD> inputs, Builder f,
           int max_probes = 12) {
    GradCheckCase c;
    c.name = name;

    TapeD tape;
    std::vector<nn::Var> leaves;
    for (const TensorD& t : inputs) leaves.push_back(tape.leaf(t, true));
    nn::Var y = f(tape, leaves);
    check(tape.val(y).numel() == 1, "gradcheck: case must produce a scalar");
    tape.backward(y);
    std::vector<TensorD> analytic;
    for (nn::Var l : leaves) {
      const TensorD& g = tape.grad(l);
      analytic.push_back(g.data.empty() ? TensorD(tape.val(l).shape) : g);
    }

    auto eval = [&f](const std::vector<TensorD>& xs) {
      TapeD t2;
      std::vector<nn::Var> ls;
      for (const TensorD& t : xs) ls.push_back(t2.leaf(t, true));
      return t2.val(f(t2, ls)).data[0];
    };

    std::vector<std::pair<size_t, size_t>> probes;
    for (size_t l = 0; l < inputs.size(); ++l)
      for (size_t i = 0; i < inputs[l].data.size(); ++i) probes.push_back({l, i});
    if (static_cast<int>(probes.size()) > max_probes) {
      // Deterministic subset; partial Fisher-Yates.
      for (int k = 0; k < max_probes; ++k) {
        size_t j = k + rng_.uniform_index(probes.size() - k);
        std::swap(probes[k], probes[j]);
      }
      probes.resize(static_cast<size_t>(max_probes));
    }

    const double h = 1e-3;
    for (auto [l, i] : probes) {
      std::vector<TensorD> xs = inputs;
      xs[l].data[i] = inputs[l].data[i] + h;
      const double fp = eval(xs);
      xs[l].data[i] = inputs[l].data[i] - h;
      const double fm = eval(xs);
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[l].data[i];
      const double rel =
          std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1.0});
      c.max_rel_err = std::max(c.max_rel_err, rel);
    }
    c.probes = static_cast<int>(probes.size());
    c.pass = c.max_rel_err < tol_;
    cases_.push_back(std::move(c));
  }

 private:
  Rng rng_;
  double tol_;
  std::vector<GradCheckCase> cases_;
};

/// VarDict view over harness leaves; the first names.size() leaves are the
/// parameters, in store order.
VarDict<double> dict_of(TapeD& t, const std::vector<std::string>& names,
                        const std::vector<nn::Var>& ls) {
  VarDict<double> d;
  d.tape = &t;
  for (size_t i = 0; i < names.size(); ++i) d.vars[names[i]] = ls[i];
  return d;
}

std::vector<TensorD> param_inputs(const nn::ParamStore& store) {
  std::vector<TensorD> out;
  for (const std::string& n : store.names())
    out.push_back(store.get(n).cast<double>());
  return out;
}

void elementwise_cases(Harness& h) {
  const std::vector<int> s{2, 3, 4};
  h.run("op.add", {h.away(s), h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.add(l[0], l[1]), 11);
  });
  h.run("op.sub", {h.away(s), h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.sub(l[0], l[1]), 12);
  });
  h.run("op.mul", {h.away(s), h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.mul(l[0], l[1]), 13);
  });
  h.run("op.div", {h.away(s), h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.div(l[0], l[1]), 14);
  });
  h.run("op.affine", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.affine(l[0], 1.7, -0.3), 15);
  });
  {
    TensorD c(s);
    Rng r(99);
    for (double& v : c.data) v = r.uniform(-1.0, 1.0);
    h.run("op.mul_const", {h.away(s)}, [c](TapeD& t, auto& l) {
      return scalarize(t, t.mul_const(l[0], c), 16);
    });
  }
  h.run("op.channel_affine", {h.away(s), h.away({2}), h.away({2})},
        [](TapeD& t, auto& l) {
          return scalarize(t, t.channel_affine(l[0], l[1], l[2]), 17);
        });
  h.run("op.relu", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.relu(l[0]), 18);
  });
  h.run("op.tanh", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.tanh_(l[0]), 19);
  });
  h.run("op.sigmoid", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.sigmoid_(l[0]), 20);
  });
  h.run("op.cube", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.cube(l[0]), 21);
  });
  h.run("op.exp", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.exp_(l[0]), 22);
  });
  h.run("op.clamp", {h.away(s)}, [](TapeD& t, auto& l) {
    return scalarize(t, t.clamp(l[0], -0.5, 0.5), 23);
  });
}

void shaped_cases(Harness& h) {
  h.run("op.matvec", {h.away({4, 6}), h.away({6})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.matvec(l[0], l[1]), 31);
  });
  h.run("op.conv2d_s1",
        {h.away({3, 6, 5}), h.away({4, 3, 3, 3}), h.away({4})},
        [](TapeD& t, auto& l) {
          return scalarize(t, t.conv2d(l[0], l[1], l[2], 1, 1), 32);
        },
        16);
  h.run("op.conv2d_s2",
        {h.away({3, 6, 6}), h.away({2, 3, 3, 3}), h.away({2})},
        [](TapeD& t, auto& l) {
          return scalarize(t, t.conv2d(l[0], l[1], l[2], 2, 1), 33);
        },
        16);
  h.run("op.deconv2d",
        {h.away({2, 3, 4}), h.away({2, 3, 4, 4}), h.away({3})},
        [](TapeD& t, auto& l) {
          return scalarize(t, t.deconv2d_k4s2(l[0], l[1], l[2]), 34);
        },
        16);
  h.run("op.reshape", {h.away({2, 3, 4})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.reshape(l[0], {6, 4}), 35);
  });
  h.run("op.concat0", {h.away({2, 3, 4}), h.away({3, 3, 4})},
        [](TapeD& t, auto& l) {
          return scalarize(t, t.concat0({l[0], l[1]}), 36);
        });
  h.run("op.slice0", {h.away({5, 3, 4})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.slice0(l[0], 1, 4), 37);
  });
  h.run("op.area_down2", {h.away({2, 4, 6})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.area_down2(l[0]), 38);
  });
  h.run("op.resize_bilinear", {h.away({2, 3, 4})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.resize_bilinear(l[0], 6, 8), 39);
  });
  {
    // Positions are constants of the case; only map values get perturbed.
    std::vector<double> px, py;
    std::vector<uint8_t> valid;
    Rng r(402);
    for (int i = 0; i < 7; ++i) {
      px.push_back(r.uniform(-0.7, 5.7));
      py.push_back(r.uniform(-0.7, 4.7));
      valid.push_back(i == 3 ? 0 : 1);
    }
    h.run("op.gather_bilinear", {h.away({3, 5, 6})},
          [px, py, valid](TapeD& t, auto& l) {
            return scalarize(t, t.gather_bilinear(l[0], px, py, valid), 40);
          });
  }
  h.run("op.l2norm0", {h.away({4, 3, 2})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.l2norm0(l[0]), 41);
  });
  h.run("op.sum0", {h.away({3, 4, 2})}, [](TapeD& t, auto& l) {
    return scalarize(t, t.sum0(l[0]), 42);
  });
  h.run("op.softmax0", {h.uniform({5, 2, 3}, -1.0, 1.0)},
        [](TapeD& t, auto& l) { return scalarize(t, t.softmax0(l[0]), 43); });
  {
    std::vector<uint8_t> mask(4 * 2 * 3, 1);
    Rng r(77);
    for (auto& m : mask) m = r.uniform() < 0.3 ? 0 : 1;
    for (size_t i = 0; i < 6; ++i) mask[i] = 1;  // every column keeps channel 0
    h.run("op.logsumexp0_masked", {h.uniform({4, 2, 3}, -1.0, 1.0)},
          [mask](TapeD& t, auto& l) {
            return scalarize(t, t.logsumexp0_masked(l[0], mask), 44);
          });
  }
  h.run("op.sum_all", {h.away({3, 4})}, [](TapeD& t, auto& l) {
    return t.sum_all(t.mul(l[0], l[0]));
  });
  {
    std::vector<uint8_t> mask{1, 0, 1, 1, 0, 1, 1, 1, 0, 1, 0, 1};
    h.run("op.mean_masked", {h.away({3, 4})}, [mask](TapeD& t, auto& l) {
      return t.mean_masked(l[0], mask);
    });
  }
  {
    // Residuals stay >= 0.1 away from the delta = 0.5 joint.
    TensorD target({6});
    std::vector<uint8_t> mask{1, 1, 0, 1, 1, 1};
    h.run("op.smooth_l1_masked", {h.away({6})}, [target, mask](TapeD& t, auto& l) {
      return t.smooth_l1_masked(l[0], target, mask, 0.5);
    });
  }
}

void composed_ranker_cases(Harness& h) {
  RankerConfig cfg;
  cfg.c_ctx = 4;
  cfg.cost_len = 3;
  cfg.hidden = 6;
  cfg.app_channels = 3;

  nn::ParamStore store;
  Rng init = h.rng().fork(501);
  init_stage_params(store, "s0.", cfg, init);
  const std::vector<std::string> names = store.names();
  std::vector<TensorD> base = param_inputs(store);

  const int H = 4, W = 4;
  {
    std::vector<TensorD> in = base;
    in.push_back(h.uniform({cfg.gru_input_len(), H, W}, -0.8, 0.8));
    in.push_back(h.uniform({cfg.c_ctx, H, W}, -0.8, 0.8));
    h.run("path.score_mlp", std::move(in),
          [names, cfg](TapeD& t, auto& l) {
            VarDict<double> d = dict_of(t, names, l);
            return scalarize(
                t, score_map(t, d, "s0.", cfg, l[names.size()], l[names.size() + 1]),
                61);
          },
          20);
  }
  {
    std::vector<TensorD> in = base;
    in.push_back(h.uniform({cfg.gru_input_len(), H, W}, -0.8, 0.8));
    in.push_back(h.uniform({cfg.app_channels, H, W}, -0.8, 0.8));
    h.run("path.context_init", std::move(in),
          [names, cfg](TapeD& t, auto& l) {
            VarDict<double> d = dict_of(t, names, l);
            return scalarize(
                t,
                init_context(t, d, "s0.", cfg, l[names.size()], l[names.size() + 1]),
                62);
          },
          20);
  }
  {
    std::vector<TensorD> in = base;
    in.push_back(h.uniform({cfg.c_ctx, H, W}, -0.8, 0.8));
    in.push_back(h.uniform({cfg.gru_input_len(), H, W}, -0.8, 0.8));
    h.run("path.context_gru", std::move(in),
          [names, cfg](TapeD& t, auto& l) {
            VarDict<double> d = dict_of(t, names, l);
            return scalarize(
                t,
                update_context(t, d, "s0.", cfg, l[names.size()], l[names.size() + 1]),
                63);
          },
          20);
  }
  {
    // init -> GRU -> score, the per-iteration chain of one stage.
    std::vector<TensorD> in = base;
    in.push_back(h.uniform({cfg.gru_input_len(), H, W}, -0.8, 0.8));
    in.push_back(h.uniform({cfg.app_channels, H, W}, -0.8, 0.8));
    in.push_back(h.uniform({cfg.gru_input_len(), H, W}, -0.8, 0.8));
    h.run("path.score_gru_chain", std::move(in),
          [names, cfg](TapeD& t, auto& l) {
            VarDict<double> d = dict_of(t, names, l);
            const size_t n = names.size();
            nn::Var ctx = init_context(t, d, "s0.", cfg, l[n], l[n + 1]);
            ctx = update_context(t, d, "s0.", cfg, ctx, l[n + 2]);
            return scalarize(t, score_map(t, d, "s0.", cfg, l[n + 2], ctx), 64);
          },
          20);
  }
}

void composed_unet_case(Harness& h) {
  UNetConfig cfg;
  cfg.widths = {4, 6, 8, 8};
  cfg.finest_output = 2;
  cfg.out_channels = {{2, 4}, {4, 4}, {8, 4}};
  cfg.l2norm_outputs = true;

  nn::ParamStore store;
  Rng init = h.rng().fork(502);
  init_unet_params(store, "u.", cfg, 1, init);
  const std::vector<std::string> names = store.names();
  std::vector<TensorD> in = param_inputs(store);
  in.push_back(h.uniform({1, 8, 8}, 0.0, 1.0));

  h.run("path.unet", std::move(in),
        [names, cfg](TapeD& t, auto& l) {
          VarDict<double> d = dict_of(t, names, l);
          std::map<int, nn::Var> out = unet_forward(t, d, "u.", cfg, l[names.size()]);
          nn::Var acc;
          bool first = true;
          uint64_t ws = 71;
          for (auto& [lvl, v] : out) {
            nn::Var s = scalarize(t, v, ws++);
            acc = first ? s : t.add(acc, s);
            first = false;
          }
          return acc;
        },
        24);
}

HypothesisSet toy_hypotheses(int w, int ht, int k, double base, Rng& rng) {
  HypothesisSet hs;
  hs.width = w;
  hs.height = ht;
  hs.k = k;
  hs.scale_fb = 1.0;
  hs.values.resize(static_cast<size_t>(w) * ht * k);
  hs.provenance.assign(static_cast<size_t>(k), Provenance::kInitial);
  hs.fallback.assign(static_cast<size_t>(w) * ht, 0);
  for (int y = 0; y < ht; ++y)
    for (int x = 0; x < w; ++x)
      for (int i = 0; i < k; ++i)
        hs.values[hs.idx(x, y, i)] = base + (i - k / 2) + rng.uniform(-0.45, 0.45);
  return hs;
}

void composed_loss_cases(Harness& h) {
  const int W = 4, H = 3, K = 5;
  Rng r = h.rng().fork(503);
  HypothesisSet hyps = toy_hypotheses(W, H, K, 5.0, r);
  PseudoDisparityMap gt;
  gt.scale_fb = 1.0;
  gt.values = Image2D<double>(W, H, 5.0);
  gt.values.at(1, 1) = kInvalid;
  gt.values.at(3, 2) = 5.3;

  h.run("path.loss_cl", {h.uniform({K, H, W}, -1.0, 1.0)},
        [hyps, gt](TapeD& t, auto& l) {
          return loss_cl_tape(t, l[0], hyps, gt);
        });
  h.run("path.loss_expectation", {h.uniform({K, H, W}, -1.0, 1.0)},
        [hyps, gt](TapeD& t, auto& l) {
          return loss_expectation_tape(t, l[0], hyps, gt);
        });
}

void composed_loss_fm_case(Harness& h) {
  // Two-view toy rig: source displaced along +x, identity rotations, both
  // cameras 12x5 at f = 10. The sweep spans pd 2..5, so the frame is wide
  // enough that right-half pixels stay warped in-bounds across all slices.
  Camera ref;
  ref.width = 12;
  ref.height = 5;
  ref.intr = {10.0, 10.0, 6.0, 2.5};
  Camera src = ref;
  src.extr.t = Vec3(-0.5, 0.0, 0.0);

  TensorD ref_feat = h.uniform({3, 5, 12}, -0.9, 0.9);
  TensorD src_feat = h.uniform({3, 5, 12}, -0.9, 0.9);

  auto fmap = [](const TensorD& t) {
    FeatureMap fm;
    fm.values = t.cast<float>();
    fm.unit_norm = false;
    return fm;
  };
  auto ref_fm = std::make_shared<FeatureMap>(fmap(ref_feat));
  auto src_fm = std::make_shared<FeatureMap>(fmap(src_feat));

  auto lvl = std::make_shared<VolumeLevel>();
  lvl->ref_cam = ref;
  lvl->src_cams = {src};
  lvl->ref_feat = ref_fm.get();
  lvl->src_feats = {src_fm.get()};
  lvl->scale_fb = ref.intr.fx * 0.5;

  CostParams cp;
  cp.jitter = false;
  Rng vr = h.rng().fork(504);
  // Depth range [1, 2.5] m -> pd in [2, 5].
  auto vol = std::make_shared<CostVolume>(
      build_full_volume(*lvl, lvl->scale_fb / 2.5, lvl->scale_fb / 1.0, 8, cp,
                        vr, 1));

  PseudoDisparityMap gt;
  gt.scale_fb = lvl->scale_fb;
  gt.values = Image2D<double>(12, 5, 3.4);
  gt.values.at(2, 2) = kInvalid;
  gt.values.at(9, 1) = 3.9;

  // Wide clip bounds keep every probed point away from the clamp kinks.
  {
    int sup = 0;
    TapeD probe;
    nn::Var rv = probe.leaf(ref_feat, true);
    nn::Var sv = probe.leaf(src_feat, true);
    loss_fm_tape(probe, *vol, *lvl, rv, {sv}, cp, gt, -10.0, 10.0, &sup);
    check(sup > 0, "gradcheck: loss_fm toy setup supervises no pixels");
  }
  h.run("path.loss_fm", {ref_feat, src_feat},
        [vol, lvl, cp, gt, ref_fm, src_fm](TapeD& t, auto& l) {
          return loss_fm_tape(t, *vol, *lvl, l[0], {l[1]}, cp, gt, -10.0, 10.0);
        },
        16);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck(uint64_t seed, double tol) {
  Harness h(seed, tol);
  elementwise_cases(h);
  shaped_cases(h);
  composed_ranker_cases(h);
  composed_unet_case(h);
  composed_loss_cases(h);
  composed_loss_fm_case(h);
  return h.take();
}

bool all_pass(const std::vector<GradCheckCase>& cases) {
  for (const GradCheckCase& c : cases)
    if (!c.pass) return false;
  return !cases.empty();
}

}  // namespace mvsr
