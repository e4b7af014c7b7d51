#pragma once

#include <CLI11.hpp>

namespace nvsed::cli {

// Each register_* adds one subcommand whose callback does the work.
void register_synth(CLI::App& app);
void register_annotate(CLI::App& app);
void register_train(CLI::App& app);
void register_eval(CLI::App& app);
void register_optimize(CLI::App& app);
void register_detect(CLI::App& app);
void register_personalize(CLI::App& app);
void register_audit(CLI::App& app);
void register_serve(CLI::App& app);

}  // namespace nvsed::cli
