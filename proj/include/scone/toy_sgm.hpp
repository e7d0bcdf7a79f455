#pragma once

#include "scone/score_model.hpp"
#include "scone/sampler.hpp"

#include <cstdint>
#include <ostream>

namespace scone {

/// Self-check of the score model and sampler: fit φ to samples of
/// N(mean, variance·I) in 2-D, reverse-sample from pure noise, compare moments.
struct ToySgmOptions {
  std::uint64_t seed = 1;
  double mean_x = 1.0;
  double mean_y = -0.5;
  double variance = 0.05;
  int iterations = 5000;
  int batch_size = 256;
  double learning_rate = 3e-3;
  double final_lr_fraction = 0.05;
  double sigma_min = 0.01;
  double sigma_max = 1.5;
  int total_steps = 100;
  int samples = 2000;
  int outer_dim = 64;
  int inner_dim = 128;
  int time_dim = 32;
  double mean_tolerance = 0.1;
  double trace_tolerance = 0.2;  ///< relative
};

struct ToySgmReport {
  double target_mean[2] = {0.0, 0.0};
  double sample_mean[2] = {0.0, 0.0};
  double target_trace = 0.0;
  double sample_trace = 0.0;
  double mean_error = 0.0;   ///< Euclidean distance of the means
  double trace_error = 0.0;  ///< |trace − target| / target
  double final_dsm_loss = 0.0;
  bool passed = false;
};

ToySgmReport run_toy_sgm(const ToySgmOptions& options, const TrajectoryObserver& observer = {});

/// `metric,value` rows followed by `status,PASS|FAIL`.
void write_toy_report(const ToySgmReport& report, std::ostream& out);

}  // namespace scone
