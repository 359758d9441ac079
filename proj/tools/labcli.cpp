// Command-line driver: parse flags, load and validate the config, dispatch
// the experiment, and report via exit code (0 pass, 1 certificate failure,
// 2 config/parse error).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "speclab/cli.hpp"
#include "speclab/io.hpp"

namespace {

int run_kind(const std::string& kind, const std::string& config_path,
             const std::string& out_dir, std::uint64_t seed, int threads,
             const std::vector<std::string>& overrides) {
    std::string text;
    try {
        text = speclab::io::read_text_file(config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    std::vector<std::string> errors;
    speclab::cli::SectionMap sections =
        speclab::cli::parse_sections(text, errors);
    if (errors.empty()) {
        sections["run"]["kind"] = kind;
        if (!out_dir.empty()) sections["run"]["out"] = out_dir;
        if (seed != 0) sections["run"]["seed"] = std::to_string(seed);
        if (threads != 1) sections["run"]["threads"] = std::to_string(threads);
        for (const auto& ov : overrides) {
            std::string err;
            if (!speclab::cli::apply_override(sections, ov, err))
                errors.push_back(err);
        }
    }
    std::optional<speclab::cli::RunConfig> cfg;
    if (errors.empty())
        cfg = speclab::cli::validate_config(
            speclab::cli::detail::canonical_echo(sections), errors);
    if (!cfg) {
        for (const auto& e : errors)
            std::fprintf(stderr, "config error: %s\n", e.c_str());
        return 2;
    }

    speclab::cli::RunManifest manifest;
    bool ok = speclab::cli::run(*cfg, manifest);
    for (const auto& note : manifest.notes)
        std::fprintf(stderr, "%s\n", note.c_str());
    std::printf("%s: %s\n", kind.c_str(), ok ? "pass" : "FAIL");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic-operator spectrum laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<std::string> overrides;

    std::vector<CLI::App*> subs;
    for (const auto& kind : speclab::cli::experiment_kinds())
        subs.push_back(app.add_subcommand(kind));
    for (CLI::App* sub : subs) {
        sub->add_option("--config", config_path, "Config file path")
            ->required();
        sub->add_option("--out", out_dir,
                        "Output directory (default: $SPECLAB_OUT_DIR or .)");
        sub->add_option("--seed", seed, "Sampling seed");
        sub->add_option("--threads", threads, "Worker thread count");
        sub->add_option("--override", overrides,
                        "Config override section.key=value (repeatable)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (std::size_t i = 0; i < subs.size(); ++i)
        if (subs[i]->parsed())
            return run_kind(speclab::cli::experiment_kinds()[i], config_path,
                            out_dir, seed, threads, overrides);
    return 2;
}
