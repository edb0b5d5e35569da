#pragma once

#include <optional>
#include <string>

#include "mvsr/pipeline.hpp"

namespace mvsr {

struct TrainConfig {
  int steps = 1500;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int crop_width = 96;   // reference-view crop; sources stay full frame
  int crop_height = 128;
  int random_sources = 2;  // drawn per step on top of the fixed closest view
  int checkpoint_every = 500;
  double fm_alpha = 0.0;       // negative-cost clip floor, every level
  double fm_beta = 1.0;        // clip ceiling, coarse levels
  double fm_beta_finest = 0.8; // clip ceiling at the finest level in use
};

/// Run documents carry {"schema_version": 1, "refine": {...}, "train": {...}}.
/// "refine.preset" ("desk" | "paper") seeds the defaults; any further keys
/// override field-wise (whole-array replacement for stages/rankers).
void parse_run_config(const std::string& text, RefineConfig* refine,
                      TrainConfig* train);

std::string serialize_run_config(const RefineConfig& refine,
                                 const TrainConfig* train);

/// File wrappers around the string forms.
void load_run_config(const std::string& path, RefineConfig* refine,
                     TrainConfig* train);
void save_run_config(const std::string& path, const RefineConfig& refine,
                     const TrainConfig* train);

}  // namespace mvsr
