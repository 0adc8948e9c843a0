#pragma once

#include <ostream>

#include "nearl/dataset.hpp"
#include "nearl/error.hpp"
#include "nearl/run_config.hpp"

namespace nearl {

// Each command writes only inside config.output_dir (created when missing)
// and always leaves a manifest.json there that reproduces the run. Failures
// surface as nearl::Error.

// dataset.nrld from data.spec.
void cmd_gen_data(const RunConfig& config, std::ostream& log);
// metrics.csv, checkpoint.nearl (best-validation weights), summary.json.
void cmd_train(const RunConfig& config, std::ostream& log);
// eval.json for the val and test splits; uses config.checkpoint if set.
void cmd_eval(const RunConfig& config, std::ostream& log);
// ablation_<suite>.csv.
void cmd_ablate(const RunConfig& config, std::ostream& log);
// audit.txt; the same report goes to `log`.
void cmd_params(const RunConfig& config, std::ostream& log);
// analysis.json, pca.csv and cosine_hist.csv comparing the checkpoint's
// image embeddings with the frozen model's on the test split.
void cmd_analyze(const RunConfig& config, std::ostream& log);

// Loads data.path and/or generates data.spec; a spec given next to a path
// must match the file header.
Dataset obtain_dataset(const RunConfig& config);

// Process exit status for a failure category (0 is success).
int exit_code(ErrorKind kind) noexcept;

}  // namespace nearl
