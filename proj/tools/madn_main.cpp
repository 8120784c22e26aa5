#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "madn/config.hpp"
#include "madn/eval.hpp"
#include "madn/model.hpp"
#include "madn/phantom.hpp"
#include "madn/plots.hpp"
#include "madn/training.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
constexpr int kOk = 0, kUsage = 1, kRuntime = 2;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path,
                    "JSON config file (see docs/config_schema.json); built-in defaults when omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides,
                    "Override one config key with a dotted path, e.g. --set train.learning_rate=1e-4")
        ->type_name("KEY=VALUE");
}

madn::RunConfig resolve_config(const CommonOpts& c) {
    madn::RunConfig cfg =
        c.config_path.empty() ? madn::RunConfig{} : madn::load_run_config(c.config_path);
    for (const std::string& o : c.overrides) madn::apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

std::vector<madn::EvalMethod> parse_methods(const std::vector<std::string>& specs) {
    std::vector<madn::EvalMethod> out;
    for (const std::string& s : specs) {
        const std::size_t eq = s.find('=');
        madn::EvalMethod m;
        m.name = s.substr(0, eq == std::string::npos ? s.size() : eq);
        if (eq != std::string::npos) m.checkpoint = s.substr(eq + 1);
        MADN_CHECK(!m.name.empty(), "--method: empty name in '", s, "'");
        out.push_back(std::move(m));
    }
    return out;
}

int usage_error(const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
}

int runtime_error_exit(const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
}

int run_gen_data(const CommonOpts& common, const std::string& out_flag) {
    madn::RunConfig cfg;
    fs::path out;
    try {
        cfg = resolve_config(common);
        out = out_flag.empty() ? madn::resolved_run_dir(cfg) / "dataset" : fs::path(out_flag);
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        madn::build_dataset(cfg.phantom, cfg.n_clean_train, cfg.n_corrupted_train, cfg.n_test, out);
        std::cout << (out / "manifest.json").string() << '\n';
        return kOk;
    } catch (const std::exception& e) {
        return runtime_error_exit(e);
    }
}

int run_train(const CommonOpts& common, const std::string& mode_flag,
              const std::string& dataset_flag, const std::string& out_flag,
              const std::string& resume_flag) {
    madn::TrainConfig tc;
    try {
        const madn::RunConfig cfg = resolve_config(common);
        tc = cfg.train;
        if (!mode_flag.empty()) tc.mode = madn::parse_mode(mode_flag);
        if (!dataset_flag.empty()) tc.dataset_dir = dataset_flag;
        if (tc.dataset_dir.empty()) tc.dataset_dir = madn::resolved_run_dir(cfg) / "dataset";
        if (!out_flag.empty()) tc.out_dir = out_flag;
        if (tc.out_dir.empty())
            tc.out_dir =
                madn::resolved_run_dir(cfg) / (std::string("train_") + madn::to_string(tc.mode));
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        const std::optional<fs::path> resume =
            resume_flag.empty() ? std::nullopt : std::optional<fs::path>(resume_flag);
        const madn::TrainResult result = madn::train(tc, resume);
        std::cout << result.final_checkpoint.string() << '\n';
        return kOk;
    } catch (const std::exception& e) {
        return runtime_error_exit(e);
    }
}

int run_correct(const std::string& checkpoint, const std::string& input_stem,
                const std::string& out_stem) {
    try {
        const madn::ModelBundle model = madn::load_bundle(checkpoint);
        const madn::MultimodalSlice corrected =
            madn::correct_pair(model, madn::read_slice(input_stem));
        madn::write_slice(out_stem, corrected, {{"source", input_stem}});
        std::cout << out_stem << ".raw\n";
        return kOk;
    } catch (const std::exception& e) {
        return runtime_error_exit(e);
    }
}

int run_eval(const CommonOpts& common, const std::vector<std::string>& method_specs,
             const std::string& dataset_flag, const std::string& out_flag) {
    std::vector<madn::EvalMethod> methods;
    fs::path dataset_dir, out;
    try {
        const madn::RunConfig cfg = resolve_config(common);
        methods = parse_methods(method_specs);
        dataset_dir = dataset_flag.empty() ? madn::resolved_run_dir(cfg) / "dataset"
                                           : fs::path(dataset_flag);
        out = out_flag.empty() ? madn::resolved_run_dir(cfg) / "eval" : fs::path(out_flag);
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        const madn::EvaluationReport report = madn::evaluate(methods, dataset_dir, out);
        std::cout << report.csv_path.string() << '\n' << report.summary_path.string() << '\n';
        return kOk;
    } catch (const std::exception& e) {
        return runtime_error_exit(e);
    }
}

int run_plot(const CommonOpts& common, const std::string& report_flag,
             const std::vector<std::string>& method_specs, int n_samples,
             const std::string& dataset_flag, const std::string& out_flag) {
    madn::RunConfig cfg;
    std::vector<madn::EvalMethod> methods;
    fs::path report_dir, dataset_dir, out;
    try {
        cfg = resolve_config(common);
        methods = parse_methods(method_specs);
        report_dir = report_flag.empty() ? madn::resolved_run_dir(cfg) / "eval"
                                         : fs::path(report_flag);
        dataset_dir = dataset_flag.empty() ? madn::resolved_run_dir(cfg) / "dataset"
                                           : fs::path(dataset_flag);
        out = out_flag.empty() ? madn::resolved_run_dir(cfg) / "figures" : fs::path(out_flag);
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        std::vector<fs::path> files;
        if (cfg.plot_bars) {
            const madn::EvaluationReport report = madn::load_report(report_dir);
            files = madn::plot_sigma_bars(report, out);
        }
        if (cfg.plot_panels && !methods.empty()) {
            std::vector<int> indices;
            for (int i = 0; i < n_samples; ++i) indices.push_back(i);
            const auto panels = madn::plot_method_panels(methods, dataset_dir, indices, out);
            files.insert(files.end(), panels.begin(), panels.end());
        }
        MADN_CHECK(!files.empty(),
                   "plot: nothing to render (both figure kinds disabled or no methods given)");
        for (const fs::path& f : files) std::cout << f.string() << '\n';
        return kOk;
    } catch (const std::exception& e) {
        return runtime_error_exit(e);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"madn: unpaired metal-artefact removal on synthetic CT/MR slice pairs"};
    app.require_subcommand(1);

    CommonOpts gen_common;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with paired test split");
    add_common(gen, gen_common);
    gen->add_option("--out-dir", gen_out, "Dataset directory (default: <run dir>/dataset)");

    CommonOpts train_common;
    std::string train_mode, train_dataset, train_out, train_resume;
    CLI::App* train = app.add_subcommand("train", "Train one model variant on an existing dataset");
    add_common(train, train_common);
    train->add_option("--mode", train_mode,
                      "Model variant: adn_ct, adn_mr, multichannel_adn or madn (overrides train.mode)");
    train->add_option("--dataset-dir", train_dataset, "Dataset directory (default: <run dir>/dataset)");
    train->add_option("--out-dir", train_out,
                      "Checkpoint/metrics directory (default: <run dir>/train_<mode>)");
    train->add_option("--resume", train_resume, "Checkpoint with optimizer state to continue from");

    std::string correct_ckpt, correct_input, correct_out;
    CLI::App* correct = app.add_subcommand("correct", "Correct one stored slice pair with a checkpoint");
    correct->add_option("--checkpoint", correct_ckpt, "Trained model checkpoint")->required();
    correct->add_option("--input", correct_input, "Input slice stem (without .raw/.json)")->required();
    correct->add_option("--out", correct_out, "Output slice stem")->required();

    CommonOpts eval_common;
    std::vector<std::string> eval_methods;
    std::string eval_dataset, eval_out;
    CLI::App* eval = app.add_subcommand("eval", "Compute the metric report over the paired test split");
    add_common(eval, eval_common);
    eval->add_option("--method", eval_methods,
                     "Method as name=checkpoint, or a bare name for the uncorrected baseline; repeatable")
        ->required();
    eval->add_option("--dataset-dir", eval_dataset, "Dataset directory (default: <run dir>/dataset)");
    eval->add_option("--out-dir", eval_out, "Report directory (default: <run dir>/eval)");

    CommonOpts plot_common;
    std::string plot_report, plot_dataset, plot_out;
    std::vector<std::string> plot_methods;
    int plot_samples = 4;
    CLI::App* plot = app.add_subcommand("plot", "Render bar charts and comparison panels from a report");
    add_common(plot, plot_common);
    plot->add_option("--report-dir", plot_report, "Directory written by eval (default: <run dir>/eval)");
    plot->add_option("--method", plot_methods,
                     "Methods for comparison panels, as in eval; panels are skipped when omitted");
    plot->add_option("--samples", plot_samples, "Number of leading test samples to panel")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    plot->add_option("--dataset-dir", plot_dataset, "Dataset directory (default: <run dir>/dataset)");
    plot->add_option("--out-dir", plot_out, "Figure directory (default: <run dir>/figures)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (gen->parsed()) return run_gen_data(gen_common, gen_out);
    if (train->parsed()) return run_train(train_common, train_mode, train_dataset, train_out, train_resume);
    if (correct->parsed()) return run_correct(correct_ckpt, correct_input, correct_out);
    if (eval->parsed()) return run_eval(eval_common, eval_methods, eval_dataset, eval_out);
    if (plot->parsed())
        return run_plot(plot_common, plot_report, plot_methods, plot_samples, plot_dataset, plot_out);
    return kUsage;
}
