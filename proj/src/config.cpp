#include "madn/config.hpp"

#include <cstdlib>

#include "madn/image.hpp"

namespace madn {

namespace {

// The default-serialized document carries the full key set at every level,
// so walking the input against it finds unknown keys without a separate
// hand-maintained table.
void require_known_keys(const nlohmann::json& input, const nlohmann::json& reference,
                        const std::string& prefix) {
    MADN_CHECK(input.is_object(), "config: expected an object at '",
               prefix.empty() ? "<root>" : prefix.substr(0, prefix.size() - 1), "'");
    for (const auto& [key, value] : input.items()) {
        const auto it = reference.find(key);
        MADN_CHECK(it != reference.end(), "config: unknown key '", prefix, key, "'");
        if (it->is_object()) require_known_keys(value, *it, prefix + key + ".");
    }
}

}  // namespace

void RunConfig::validate() const {
    phantom.validate();
    train.validate();
    MADN_CHECK(n_clean_train >= 1, "RunConfig: n_clean_train must be >= 1, got ", n_clean_train);
    MADN_CHECK(n_corrupted_train >= 1, "RunConfig: n_corrupted_train must be >= 1, got ",
               n_corrupted_train);
    MADN_CHECK(n_test >= 1, "RunConfig: n_test must be >= 1, got ", n_test);
    MADN_CHECK(!output_root.empty(), "RunConfig: output_root must not be empty");
    MADN_CHECK(!run_name.empty() && run_name.find('/') == std::string::npos,
               "RunConfig: run_name must be a non-empty single path segment, got '", run_name, "'");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"phantom", c.phantom},
                       {"train", c.train},
                       {"n_clean_train", c.n_clean_train},
                       {"n_corrupted_train", c.n_corrupted_train},
                       {"n_test", c.n_test},
                       {"output_root", c.output_root.string()},
                       {"run_name", c.run_name},
                       {"plot_panels", c.plot_panels},
                       {"plot_bars", c.plot_bars}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    if (j.contains("phantom")) j.at("phantom").get_to(c.phantom);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("n_clean_train")) j.at("n_clean_train").get_to(c.n_clean_train);
    if (j.contains("n_corrupted_train")) j.at("n_corrupted_train").get_to(c.n_corrupted_train);
    if (j.contains("n_test")) j.at("n_test").get_to(c.n_test);
    if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    if (j.contains("run_name")) j.at("run_name").get_to(c.run_name);
    if (j.contains("plot_panels")) j.at("plot_panels").get_to(c.plot_panels);
    if (j.contains("plot_bars")) j.at("plot_bars").get_to(c.plot_bars);
}

RunConfig parse_run_config(const nlohmann::json& j) {
    const nlohmann::json reference = RunConfig{};
    require_known_keys(j, reference, "");
    try {
        return j.get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValueError(std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_json_file(path));
}

void apply_override(RunConfig& cfg, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    MADN_CHECK(eq != std::string::npos && eq > 0, "--set expects key=value, got '", spec, "'");
    const std::string dotted = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    nlohmann::json doc = cfg;
    nlohmann::json* node = &doc;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key =
            dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        MADN_CHECK(!key.empty() && node->is_object() && node->contains(key),
                   "config: unknown key '", dotted, "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    MADN_CHECK(!node->is_object(), "config: '", dotted, "' is a section, not a settable value");

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;  // unquoted strings ("madn", paths)
    *node = value;
    cfg = parse_run_config(doc);
}

std::filesystem::path resolved_run_dir(const RunConfig& cfg) {
    const char* env = std::getenv("MADN_OUTPUT_ROOT");
    const std::filesystem::path root =
        (env != nullptr && *env != '\0') ? std::filesystem::path(env) : cfg.output_root;
    return root / cfg.run_name;
}

}  // namespace madn
