#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "madn/phantom.hpp"
#include "madn/training.hpp"

// Single-file experiment configuration: one JSON document drives dataset
// generation, training, evaluation and plotting. Every key is documented in
// docs/config_schema.json; unknown keys are rejected on load so typos fail
// loudly instead of silently keeping a default.

namespace madn {

struct RunConfig {
    PhantomSpec phantom;  // synthetic dataset geometry and corruption
    TrainConfig train;    // optimizer, loss weights, LNCC settings

    // Dataset split sizes for gen-data.
    int n_clean_train = 200;
    int n_corrupted_train = 200;
    int n_test = 20;

    // Command outputs land under <output_root>/<run_name>/. The
    // MADN_OUTPUT_ROOT environment variable, when set and non-empty,
    // overrides output_root.
    std::filesystem::path output_root = "runs";
    std::string run_name = "default";

    bool plot_panels = true;  // side-by-side qualitative comparison figures
    bool plot_bars = true;    // per-ROI noise bar charts with significance stars

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Strict parse: any key absent from the schema, at any nesting level, is a
// ValueError naming the offending dotted path; so is a type mismatch.
// Value-range validation is separate (validate()), so a file can hold
// placeholders that command-line overrides fill in.
RunConfig parse_run_config(const nlohmann::json& j);

// parse_run_config over the file's contents; IoError when unreadable or not
// valid JSON.
RunConfig load_run_config(const std::filesystem::path& path);

// Applies one `key=value` override, with dots selecting into nested sections
// (e.g. "train.learning_rate=1e-4", "phantom.seed=3"). The value parses as
// JSON when possible ("true", "0.5", "[0,0.4,1]") and is taken as a plain
// string otherwise. Unknown keys and type mismatches are ValueErrors.
void apply_override(RunConfig& cfg, const std::string& spec);

// <output_root>/<run_name>, honoring the MADN_OUTPUT_ROOT override.
std::filesystem::path resolved_run_dir(const RunConfig& cfg);

}  // namespace madn
