#include "mvsr/config_json.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mvsr {

namespace {

using nlohmann::json;

json unet_to_json(const UNetConfig& c) {
  json j;
  j["widths"] = c.widths;
  j["finest_output"] = c.finest_output;
  json heads = json::object();
  for (const auto& [factor, ch] : c.out_channels)
    heads[std::to_string(factor)] = ch;
  j["out_channels"] = heads;
  j["l2norm_outputs"] = c.l2norm_outputs;
  return j;
}

UNetConfig unet_from_json(const json& j, UNetConfig base) {
  if (j.contains("widths")) {
    const auto w = j.at("widths").get<std::vector<int>>();
    check(w.size() == 4, "config: unet widths must have 4 entries");
    std::copy(w.begin(), w.end(), base.widths.begin());
  }
  if (j.contains("finest_output"))
    base.finest_output = j.at("finest_output").get<int>();
  if (j.contains("out_channels")) {
    base.out_channels.clear();
    for (const auto& [key, value] : j.at("out_channels").items())
      base.out_channels[std::stoi(key)] = value.get<int>();
  }
  if (j.contains("l2norm_outputs"))
    base.l2norm_outputs = j.at("l2norm_outputs").get<bool>();
  return base;
}

json stage_to_json(const StageConfig& s) {
  return json{{"base_factor", s.base_factor},
              {"fine_factor", s.fine_factor},
              {"iterations", s.iterations},
              {"m", s.m},
              {"pyramid", s.pyramid}};
}

StageConfig stage_from_json(const json& j) {
  StageConfig s;
  s.base_factor = j.at("base_factor").get<int>();
  s.fine_factor = j.at("fine_factor").get<int>();
  s.iterations = j.value("iterations", 4);
  s.m = j.value("m", 4);
  s.pyramid = j.value("pyramid", true);
  return s;
}

json ranker_to_json(const RankerConfig& r) {
  return json{{"c_ctx", r.c_ctx},
              {"cost_len", r.cost_len},
              {"hidden", r.hidden},
              {"app_channels", r.app_channels}};
}

RankerConfig ranker_from_json(const json& j) {
  RankerConfig r;
  r.c_ctx = j.at("c_ctx").get<int>();
  r.cost_len = j.value("cost_len", 6);
  r.hidden = j.value("hidden", 24);
  r.app_channels = j.at("app_channels").get<int>();
  return r;
}

void refine_from_json(const json& j, RefineConfig& cfg) {
  const std::string preset = j.value("preset", "desk");
  if (preset == "desk")
    cfg = RefineConfig::desk_default();
  else if (preset == "paper")
    cfg = RefineConfig::paper_default();
  else
    fail("config: unknown preset '" + preset + "'");

  if (j.contains("n_full")) cfg.n_full = j.at("n_full").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("expectation"))
    cfg.expectation = j.at("expectation").get<bool>();
  if (j.contains("drop_geom")) cfg.drop_geom = j.at("drop_geom").get<bool>();
  if (j.contains("handcrafted"))
    cfg.handcrafted = j.at("handcrafted").get<bool>();
  if (j.contains("oracle_scorer"))
    cfg.oracle_scorer = j.at("oracle_scorer").get<bool>();
  if (j.contains("cost")) {
    const json& c = j.at("cost");
    cfg.cost.alpha = c.value("alpha", cfg.cost.alpha);
    cfg.cost.delta = c.value("delta", cfg.cost.delta);
    cfg.cost.jitter = c.value("jitter", cfg.cost.jitter);
  }
  if (j.contains("stages")) {
    cfg.stages.clear();
    for (const json& s : j.at("stages")) cfg.stages.push_back(stage_from_json(s));
  }
  if (j.contains("match_net"))
    cfg.match_net = unet_from_json(j.at("match_net"), cfg.match_net);
  if (j.contains("context_net"))
    cfg.context_net = unet_from_json(j.at("context_net"), cfg.context_net);
  if (j.contains("stage_rankers")) {
    cfg.stage_rankers.clear();
    for (const json& r : j.at("stage_rankers"))
      cfg.stage_rankers.push_back(ranker_from_json(r));
  }
}

void train_from_json(const json& j, TrainConfig& cfg) {
  cfg.steps = j.value("steps", cfg.steps);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.crop_width = j.value("crop_width", cfg.crop_width);
  cfg.crop_height = j.value("crop_height", cfg.crop_height);
  cfg.random_sources = j.value("random_sources", cfg.random_sources);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.fm_alpha = j.value("fm_alpha", cfg.fm_alpha);
  cfg.fm_beta = j.value("fm_beta", cfg.fm_beta);
  cfg.fm_beta_finest = j.value("fm_beta_finest", cfg.fm_beta_finest);
}

}  // namespace

void parse_run_config(const std::string& text, RefineConfig* refine,
                      TrainConfig* train) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("config: ") + e.what());
  }
  check(j.value("schema_version", 0) == 1,
        "config: unsupported schema_version (expected 1)");
  if (refine && j.contains("refine")) refine_from_json(j.at("refine"), *refine);
  if (train && j.contains("train")) train_from_json(j.at("train"), *train);
}

std::string serialize_run_config(const RefineConfig& refine,
                                 const TrainConfig* train) {
  json j;
  j["schema_version"] = 1;
  json r;
  r["n_full"] = refine.n_full;
  r["seed"] = refine.seed;
  r["expectation"] = refine.expectation;
  r["drop_geom"] = refine.drop_geom;
  r["handcrafted"] = refine.handcrafted;
  r["oracle_scorer"] = refine.oracle_scorer;
  r["cost"] = json{{"alpha", refine.cost.alpha},
                   {"delta", refine.cost.delta},
                   {"jitter", refine.cost.jitter}};
  r["stages"] = json::array();
  for (const StageConfig& s : refine.stages) r["stages"].push_back(stage_to_json(s));
  r["match_net"] = unet_to_json(refine.match_net);
  r["context_net"] = unet_to_json(refine.context_net);
  r["stage_rankers"] = json::array();
  for (const RankerConfig& rk : refine.stage_rankers)
    r["stage_rankers"].push_back(ranker_to_json(rk));
  j["refine"] = r;
  if (train) {
    j["train"] = json{{"steps", train->steps},
                      {"lr", train->lr},
                      {"beta1", train->beta1},
                      {"beta2", train->beta2},
                      {"eps", train->eps},
                      {"crop_width", train->crop_width},
                      {"crop_height", train->crop_height},
                      {"random_sources", train->random_sources},
                      {"checkpoint_every", train->checkpoint_every},
                      {"fm_alpha", train->fm_alpha},
                      {"fm_beta", train->fm_beta},
                      {"fm_beta_finest", train->fm_beta_finest}};
  }
  return j.dump(2);
}

void load_run_config(const std::string& path, RefineConfig* refine,
                     TrainConfig* train) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  parse_run_config(ss.str(), refine, train);
}

void save_run_config(const std::string& path, const RefineConfig& refine,
                     const TrainConfig* train) {
  std::ofstream out(path);
  check(out.good(), "config: cannot write " + path);
  out << serialize_run_config(refine, train) << "\n";
}

}  // namespace mvsr
