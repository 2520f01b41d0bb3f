// svafreq command line: runs experiment stages from a YAML config.

#include "svafreq/pipeline.hpp"
#include "svafreq/synthetic.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
namespace pl = svafreq::pipeline;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string outputDir;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override a config key, e.g. --set scorer.neural.epochs=3")->take_all();
    cmd->add_option("-o,--output-dir", c.outputDir, "Override output_dir");
    cmd->add_option("--seed", c.seed, "Override master_seed");
    cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

pl::ExperimentConfig load(const Common& c) {
    std::vector<std::string> overrides = c.sets;
    if (!c.outputDir.empty()) overrides.push_back("output_dir=" + fs::absolute(c.outputDir).string());
    if (c.seed) overrides.push_back("master_seed=" + std::to_string(*c.seed));
    return pl::ExperimentConfig::load(c.config, overrides);
}

void write_example_config(const fs::path& dir) {
    std::ofstream out(dir / "experiment.yaml");
    out << "output_dir: out\n"
           "master_seed: 1\n"
           "corpus:\n"
           "  paths: [corpus.txt]\n"
           "lexicon:\n"
           "  nouns: nouns.txt\n"
           "  verbs: verbs.txt\n"
           "  contexts: contexts.txt\n"
           "  filter_contexts: false\n"
           "intervention:\n"
           "  vois: [";
    std::ifstream vois(dir / "vois.txt");
    std::string lemma;
    bool first = true;
    while (std::getline(vois, lemma)) {
        if (lemma.empty()) continue;
        out << (first ? "" : ", ") << lemma;
        first = false;
    }
    out << "]\n"
           "  mode: absolute\n"
           "  n: 100\n"
           "scorer:\n"
           "  kind: neural\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency effects on subject-verb agreement in masked language models"};
    app.set_version_flag("--version", SVAFREQ_VERSION);
    app.require_subcommand(1);

    Common common;
    std::map<CLI::App*, std::optional<pl::Stage>> stageCommands;
    for (auto stage : pl::all_stages()) {
        const std::string name(pl::to_string(stage));
        auto* cmd = app.add_subcommand(name, "Run the pipeline up to and including '" + name + "'");
        add_common(cmd, common);
        stageCommands[cmd] = stage;
    }
    auto* runCmd = app.add_subcommand("run", "Run every stage");
    add_common(runCmd, common);
    stageCommands[runCmd] = std::nullopt;

    auto* sweepCmd = app.add_subcommand("sweep", "One run per value of an intervention count");
    add_common(sweepCmd, common);
    std::string axis;
    std::vector<std::uint64_t> values;
    sweepCmd->add_option("--axis", axis, "absoluteN or nVary")->required();
    sweepCmd->add_option("--values", values, "Values to sweep")->required()->delimiter(',');

    auto* synthCmd = app.add_subcommand("synth", "Write a synthetic agreement corpus and lexicon");
    svafreq::synthetic::GrammarConfig grammar;
    std::string synthOut;
    synthCmd->add_option("-o,--output-dir", synthOut, "Destination directory")->required();
    synthCmd->add_option("--seed", grammar.seed, "Grammar seed");
    synthCmd->add_option("--sentences", grammar.sentences, "Corpus size");
    synthCmd->add_option("--nouns", grammar.nouns, "Number of nouns");
    synthCmd->add_option("--verbs", grammar.verbs, "Number of non-VOI verbs");
    synthCmd->add_option("--vois", grammar.vois, "Number of VOIs");
    synthCmd->add_option("--contexts", grammar.contexts, "Number of evaluation contexts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synthCmd->parsed()) {
            grammar.validate();
            const auto g = svafreq::synthetic::make_grammar(grammar);
            const auto corpus = svafreq::synthetic::sample_corpus(g, grammar);
            fs::create_directories(synthOut);
            svafreq::synthetic::write_bundle(g, corpus, synthOut);
            write_example_config(synthOut);
            std::cout << "wrote " << corpus.size() << " sentences to " << synthOut << '\n';
            return 0;
        }
        const auto config = load(common);
        std::ostream* log = common.quiet ? nullptr : &std::cerr;
        if (sweepCmd->parsed()) {
            const auto result = pl::sweep(config, pl::parse_sweep_axis(axis), values, log);
            for (const auto& p : result.curve) {
                std::cout << axis << '=' << p.value << " error=" << p.errorRate;
                if (p.constantTargetError) std::cout << " constant_target_error=" << *p.constantTargetError;
                std::cout << '\n';
            }
            return 0;
        }
        for (const auto& [cmd, stage] : stageCommands) {
            if (cmd->parsed()) {
                pl::run(config, stage, log);
                return 0;
            }
        }
        return 1;
    } catch (const pl::VerificationFailure& e) {
        std::cerr << "verification failed: " << e.what() << '\n';
        return 3;
    } catch (const pl::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const svafreq::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const svafreq::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const svafreq::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
