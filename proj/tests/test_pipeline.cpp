#include "svafreq/error.hpp"
#include "svafreq/pipeline.hpp"
#include "svafreq/synthetic.hpp"

#include "support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace svafreq;
using namespace svafreq::pipeline;
using svafreq::testing::TempDir;
using svafreq::testing::read_text;
using svafreq::testing::write_text;

namespace {

// Small synthetic bundle plus a fast experiment config.
std::string make_bundle(const fs::path& dir, std::size_t sentences = 6000) {
    synthetic::GrammarConfig g;
    g.sentences = sentences;
    g.nouns = 12;
    g.verbs = 10;
    g.vois = 4;
    g.contexts = 6;
    const auto grammar = synthetic::make_grammar(g);
    synthetic::write_bundle(grammar, synthetic::sample_corpus(grammar, g), dir);
    std::string vois;
    for (const auto& v : grammar.vois) vois += (vois.empty() ? "" : ", ") + v;
    std::string yaml =
        "output_dir: out\n"
        "master_seed: 3\n"
        "corpus:\n  paths: [corpus.txt]\n"
        "lexicon:\n  nouns: nouns.txt\n  verbs: verbs.txt\n  contexts: contexts.txt\n  filter_contexts: false\n"
        "intervention:\n  vois: [" + vois + "]\n  mode: absolute\n  n: 20\n"
        "scorer:\n  kind: neural\n  neural:\n    embedding_dim: 8\n    hidden_dim: 16\n    epochs: 1\n"
        "probe:\n  hidden_dim: 8\n  epochs: 3\n";
    write_text(dir / "experiment.yaml", yaml);
    return yaml;
}

std::vector<std::string> skipped_stages(const fs::path& out) {
    const auto j = nlohmann::json::parse(read_text(out / "timings.json"));
    std::vector<std::string> names;
    for (const auto& [name, t] : j.items()) {
        if (t.at("skipped").get<bool>()) names.push_back(name);
    }
    return names;
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(SVAFREQ_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, ParsesAndResolvesPaths) {
    TempDir dir;
    const auto yaml = make_bundle(dir.path(), 200);
    const auto c = ExperimentConfig::load(dir / "experiment.yaml");
    EXPECT_EQ(c.masterSeed, 3u);
    EXPECT_EQ(c.resolve(c.outputDir), dir / "out");
    EXPECT_EQ(c.resolve(c.corpusPaths.at(0)), dir / "corpus.txt");
    ASSERT_TRUE(c.intervention);
    EXPECT_EQ(c.intervention->n, 20u);
    EXPECT_EQ(c.intervention->vois.size(), 4u);
    EXPECT_EQ(c.neural.embeddingDim, 8u);
    EXPECT_EQ(c.probe.epochs, 3u);
    EXPECT_FALSE(c.filterContexts);
    EXPECT_NO_THROW(c.preflight());
}

TEST(Config, CanonicalYamlRoundTrips) {
    TempDir dir;
    make_bundle(dir.path(), 200);
    const auto c = ExperimentConfig::load(dir / "experiment.yaml");
    const auto again = ExperimentConfig::from_yaml(c.to_yaml(), dir.path());
    EXPECT_EQ(again.to_yaml(), c.to_yaml());
    EXPECT_EQ(again.hash(), c.hash());
}

TEST(Config, HashIgnoresOutputDirOnly) {
    TempDir dir;
    const auto yaml = make_bundle(dir.path(), 200);
    const auto a = ExperimentConfig::from_yaml(yaml, dir.path());
    const std::vector<std::string> moved{"output_dir=elsewhere"};
    const std::vector<std::string> reseeded{"master_seed=4"};
    EXPECT_EQ(ExperimentConfig::from_yaml(yaml, dir.path(), moved).hash(), a.hash());
    EXPECT_NE(ExperimentConfig::from_yaml(yaml, dir.path(), reseeded).hash(), a.hash());
}

TEST(Config, OverridesApplyBeforeParsing) {
    TempDir dir;
    const auto yaml = make_bundle(dir.path(), 200);
    const std::vector<std::string> sets{"scorer.neural.epochs=5", "intervention.n=7", "eval.sample=11"};
    const auto c = ExperimentConfig::from_yaml(yaml, dir.path(), sets);
    EXPECT_EQ(c.neural.epochs, 5u);
    EXPECT_EQ(c.intervention->n, 7u);
    EXPECT_EQ(c.evalSample, 11u);
    const std::vector<std::string> noEquals{"scorer.neural.epochs"};
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml, dir.path(), noEquals), ValidationError);
    const std::vector<std::string> unknown{"scorer.neural.depth=3"};
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml, dir.path(), unknown), ValidationError);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    TempDir dir;
    const auto yaml = make_bundle(dir.path(), 200);
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml + "colour: blue\n", dir.path()), ValidationError);
    const std::vector<std::string> badKind{"scorer.kind=oracle"};
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml, dir.path(), badKind).preflight(), ValidationError);
    const std::vector<std::string> badMode{"intervention.mode=sideways"};
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml, dir.path(), badMode).preflight(), ValidationError);
    EXPECT_ANY_THROW(ExperimentConfig::from_yaml("output_dir: [unclosed\n", dir.path()));
    EXPECT_THROW(ExperimentConfig::load(dir / "missing.yaml"), IoError);
}

TEST(Config, PreflightReportsMissingInputs) {
    TempDir dir;
    make_bundle(dir.path(), 200);
    fs::remove(dir / "corpus.txt");
    fs::remove(dir / "contexts.txt");
    const auto c = ExperimentConfig::load(dir / "experiment.yaml");
    try {
        c.preflight();
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("corpus.txt"), std::string::npos) << msg;
        EXPECT_NE(msg.find("contexts.txt"), std::string::npos) << msg;
    }
    EXPECT_THROW(run(c), ValidationError);
}

TEST(Config, PreflightRejectsUnknownVoi) {
    TempDir dir;
    const auto yaml = make_bundle(dir.path(), 200);
    const std::vector<std::string> sets{"intervention.vois=[nosuchverb]"};
    EXPECT_THROW(ExperimentConfig::from_yaml(yaml, dir.path(), sets).preflight(), ValidationError);
}

TEST(Stages, NamesRoundTrip) {
    for (auto s : all_stages()) EXPECT_EQ(parse_stage(to_string(s)), s);
    EXPECT_EQ(all_stages().size(), 7u);
    EXPECT_THROW(parse_stage("deploy"), ValidationError);
}

TEST(Run, FullRunResumeAndDeterminism) {
    TempDir dir;
    make_bundle(dir.path());
    const auto c = ExperimentConfig::load(dir / "experiment.yaml");
    const auto out = c.resolve(c.outputDir);
    const auto m1 = run(c);
    EXPECT_EQ(m1.stages.size(), 7u);
    for (const char* f : {"manifest.json", "timings.json", "config.effective.yaml", "index/index.tsv",
                          "gen-stimuli/stimuli.tsv", "intervene/corpus.txt", "intervene/verification.csv",
                          "train/model.bin", "eval/summary.json", "probe/h3.json", "report/summary.json",
                          "report/seen_unseen.csv", "report/plot_data.csv"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    const auto manifest1 = read_text(out / "manifest.json");
    EXPECT_TRUE(skipped_stages(out).empty());
    EXPECT_FALSE(fs::exists(out / ".lock"));

    // Second run: everything is up to date and the manifest is byte-identical.
    run(c);
    EXPECT_EQ(skipped_stages(out).size(), 7u);
    EXPECT_EQ(read_text(out / "manifest.json"), manifest1);

    // Deleting an artifact reruns its stage. The rebuilt outputs hash the
    // same, so later stages stay valid.
    fs::remove(out / "eval" / "summary.json");
    run(c);
    EXPECT_EQ(skipped_stages(out),
              (std::vector<std::string>{"gen-stimuli", "index", "intervene", "probe", "report", "train"}));
    EXPECT_EQ(read_text(out / "manifest.json"), manifest1);

    // A damaged output is rebuilt too.
    write_text(out / "intervene" / "corpus.txt", "the dog runs .\n");
    run(c);
    EXPECT_EQ(skipped_stages(out),
              (std::vector<std::string>{"eval", "gen-stimuli", "index", "probe", "report", "train"}));
    EXPECT_EQ(read_text(out / "manifest.json"), manifest1);

    // A copy of the bundle in a fresh directory reproduces every byte.
    TempDir other;
    for (const char* f : {"experiment.yaml", "corpus.txt", "nouns.txt", "verbs.txt", "contexts.txt"}) {
        fs::copy_file(dir / f, other / f);
    }
    run(ExperimentConfig::load(other / "experiment.yaml"));
    EXPECT_EQ(read_text(other / "out" / "manifest.json"), manifest1);
}

TEST(Run, ConfigChangeInvalidatesDownstreamOnly) {
    TempDir dir;
    make_bundle(dir.path(), 3000);
    const std::vector<std::string> fast{"probe.enabled=false"};
    run(ExperimentConfig::load(dir / "experiment.yaml", fast), Stage::Train);
    const std::vector<std::string> changed{"probe.enabled=false", "scorer.neural.epochs=2"};
    const auto m = run(ExperimentConfig::load(dir / "experiment.yaml", changed), Stage::Train);
    EXPECT_EQ(m.stages.size(), 4u);
    const auto skipped = skipped_stages(dir / "out");
    EXPECT_EQ(std::count(skipped.begin(), skipped.end(), "train"), 0);
}

TEST(Run, UntilStopsEarly) {
    TempDir dir;
    make_bundle(dir.path(), 3000);
    const auto m = run(ExperimentConfig::load(dir / "experiment.yaml"), Stage::GenStimuli);
    EXPECT_EQ(m.stages.size(), 2u);
    EXPECT_FALSE(fs::exists(dir / "out" / "intervene"));
}

TEST(Run, PoolUnderflowIsStageError) {
    TempDir dir;
    make_bundle(dir.path(), 1000);
    const std::vector<std::string> sets{"intervention.n=100000"};
    try {
        run(ExperimentConfig::load(dir / "experiment.yaml", sets));
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "intervene");
        EXPECT_NE(std::string(e.what()).find("pool underflow"), std::string::npos) << e.what();
    }
    EXPECT_FALSE(fs::exists(dir / "out" / ".lock"));
}

TEST(Lock, ExclusiveAndStaleTakeover) {
    TempDir dir;
    {
        DirectoryLock a(dir.path());
        EXPECT_THROW(DirectoryLock b(dir.path()), IoError);
        make_bundle(dir.path(), 200);
        const std::vector<std::string> here{"output_dir=" + dir.path().string()};
        EXPECT_THROW(run(ExperimentConfig::load(dir / "experiment.yaml", here)), IoError);
    }
    EXPECT_FALSE(fs::exists(dir / ".lock"));
    write_text(dir / ".lock", "999999999\n");
    EXPECT_NO_THROW(DirectoryLock c(dir.path()));
}

TEST(Sweep, AbsoluteLadder) {
    TempDir dir;
    make_bundle(dir.path(), 8000);
    const std::vector<std::string> fast{"scorer.kind=pair", "probe.enabled=false"};
    const auto c = ExperimentConfig::load(dir / "experiment.yaml", fast);
    const auto out = c.resolve(c.outputDir);
    const std::vector<std::uint64_t> values{1, 10, 100};
    const auto r = sweep(c, SweepAxis::AbsoluteN, values);
    ASSERT_EQ(r.runs.size(), 3u);
    ASSERT_EQ(r.curve.size(), 3u);
    for (std::size_t i = 0; i < values.size(); ++i) {
        EXPECT_EQ(r.curve[i].value, values[i]);
        EXPECT_GT(r.curve[i].records, 0u);
        EXPECT_FALSE(r.curve[i].constantTargetError);
        EXPECT_TRUE(fs::exists(out / ("sweep-absoluteN-" + std::to_string(values[i])) / "manifest.json"));
    }
    const auto csv = read_text(out / "sweep-absoluteN.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(csv.rfind("value,records,error_rate,constant_target_error\n", 0), 0u);
    EXPECT_TRUE(fs::exists(out / "sweep-absoluteN-plot.csv"));
    const std::vector<std::uint64_t> one{5};
    EXPECT_THROW(sweep(c, SweepAxis::NVary, one), ValidationError);
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    make_bundle(dir.path(), 2000);
    const auto cfg = (dir / "experiment.yaml").string();
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("index"), 1);
    EXPECT_EQ(run_cli("index -c " + (dir / "nope.yaml").string()), 1);
    EXPECT_EQ(run_cli("index -q -c " + cfg + " --set colour=blue"), 1);
    EXPECT_EQ(run_cli("index -q -c " + cfg), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "index" / "index.tsv"));
    EXPECT_EQ(run_cli("intervene -q -c " + cfg + " --set intervention.n=100000"), 2);
    EXPECT_EQ(run_cli("index -q -c " + cfg + " -o " + (dir / "other").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "other" / "manifest.json"));
    EXPECT_EQ(run_cli("--version"), 0);
}
