#include "svafreq/pipeline.hpp"

#include "svafreq/analysis.hpp"
#include "svafreq/hash.hpp"
#include "svafreq/intervene.hpp"
#include "svafreq/rng.hpp"
#include "svafreq/scorer.hpp"
#include "svafreq/stimuli.hpp"
#include "svafreq/text.hpp"

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <fstream>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace svafreq::pipeline {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!node) return;
    if (!node.IsMap()) {
        throw ValidationError("config: '" + where + "' must be a mapping");
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ValidationError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out) {
    if (node && node[key]) out = node[key].as<T>();
}

void read_path(const YAML::Node& node, const char* key, fs::path& out) {
    if (node && node[key]) out = node[key].as<std::string>();
}

void apply_override(YAML::Node& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override '" + assignment + "' is not of the form key=value");
    }
    const auto keys = text::split(assignment.substr(0, eq), '.');
    YAML::Node value = YAML::Load(assignment.substr(eq + 1));
    // Node assignment copies values, so rebind the cursor with reset().
    YAML::Node cur;
    cur.reset(root);
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!cur[keys[i]].IsMap()) cur[keys[i]] = YAML::Node(YAML::NodeType::Map);
        YAML::Node next = cur[keys[i]];
        cur.reset(next);
    }
    cur[keys.back()] = value;
}

std::string yaml_double(double v) {
    return text::format_double(v);
}

} // namespace

ExperimentConfig ExperimentConfig::from_yaml(const std::string& textIn, const fs::path& baseDir,
                                             std::span<const std::string> overrides) {
    YAML::Node root;
    try {
        root = YAML::Load(textIn);
        if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
        for (const auto& o : overrides) apply_override(root, o);
    } catch (const YAML::Exception& e) {
        throw ParseError("config", static_cast<std::size_t>(e.mark.line + 1), e.msg);
    }
    try {
        check_keys(root, "",
                   {"output_dir", "master_seed", "corpus", "lexicon", "intervention", "scorer", "eval", "probe",
                    "analysis"});
        ExperimentConfig c;
        c.baseDir = baseDir;
        read_path(root, "output_dir", c.outputDir);
        read(root, "master_seed", c.masterSeed);

        const auto corpusNode = root["corpus"];
        check_keys(corpusNode, "corpus", {"paths", "lowercase", "split_punctuation"});
        if (corpusNode && corpusNode["paths"]) {
            for (const auto& p : corpusNode["paths"].as<std::vector<std::string>>()) c.corpusPaths.emplace_back(p);
        }
        read(corpusNode, "lowercase", c.tokenizer.lowercase);
        read(corpusNode, "split_punctuation", c.tokenizer.splitPunctuation);

        const auto lex = root["lexicon"];
        check_keys(lex, "lexicon", {"nouns", "verbs", "contexts", "manual_annotations", "filter_contexts"});
        read_path(lex, "nouns", c.nouns);
        read_path(lex, "verbs", c.verbs);
        read_path(lex, "contexts", c.contexts);
        if (lex && lex["manual_annotations"] && !lex["manual_annotations"].IsNull()) c.manualAnnotations = lex["manual_annotations"].as<std::string>();
        read(lex, "filter_contexts", c.filterContexts);

        if (const auto iv = root["intervention"]; iv && !iv.IsNull()) {
            check_keys(iv, "intervention",
                       {"vois", "mode", "n", "group_s", "group_p", "n_vary", "n_constant", "eligibility_min"});
            InterventionConfig i;
            read(iv, "vois", i.vois);
            read(iv, "mode", i.mode);
            read(iv, "n", i.n);
            read(iv, "group_s", i.groupS);
            read(iv, "group_p", i.groupP);
            read(iv, "n_vary", i.nVary);
            read(iv, "n_constant", i.nConstant);
            read(iv, "eligibility_min", i.eligibilityMin);
            c.intervention = std::move(i);
        }

        const auto sc = root["scorer"];
        check_keys(sc, "scorer", {"kind", "vocab_min_count", "neural"});
        read(sc, "kind", c.scorer);
        read(sc, "vocab_min_count", c.vocabMinCount);
        if (sc && sc["neural"]) {
            const auto nn = sc["neural"];
            check_keys(nn, "scorer.neural",
                       {"embedding_dim", "context_layers", "hidden_dim", "mask_probability", "epochs", "learning_rate",
                        "batch_size", "max_positions", "init_scale", "held_out_fraction", "max_held_out"});
            read(nn, "embedding_dim", c.neural.embeddingDim);
            read(nn, "context_layers", c.neural.contextLayers);
            read(nn, "hidden_dim", c.neural.hiddenDim);
            read(nn, "mask_probability", c.neural.maskProbability);
            read(nn, "epochs", c.neural.epochs);
            read(nn, "learning_rate", c.neural.learningRate);
            read(nn, "batch_size", c.neural.batchSize);
            read(nn, "max_positions", c.neural.maxPositions);
            read(nn, "init_scale", c.neural.initScale);
            read(nn, "held_out_fraction", c.neural.heldOutFraction);
            read(nn, "max_held_out", c.neural.maxHeldOut);
        }

        const auto ev = root["eval"];
        check_keys(ev, "eval", {"verbs", "sample", "audit_size"});
        read(ev, "verbs", c.evalVerbs);
        read(ev, "sample", c.evalSample);
        read(ev, "audit_size", c.auditSize);

        const auto pr = root["probe"];
        check_keys(pr, "probe",
                   {"enabled", "hidden_dim", "epochs", "learning_rate", "batch_size", "train_subjects",
                    "train_contexts", "folds"});
        read(pr, "enabled", c.probeEnabled);
        read(pr, "hidden_dim", c.probe.hiddenDim);
        read(pr, "epochs", c.probe.epochs);
        read(pr, "learning_rate", c.probe.learningRate);
        read(pr, "batch_size", c.probe.batchSize);
        read(pr, "train_subjects", c.probeTrainSubjects);
        read(pr, "train_contexts", c.probeTrainContexts);
        read(pr, "folds", c.probeFolds);

        const auto an = root["analysis"];
        check_keys(an, "analysis", {"frequency_edges", "ratio_edges", "attractor_edges", "confidence_thresholds"});
        read(an, "frequency_edges", c.frequencyEdges);
        read(an, "ratio_edges", c.ratioEdges);
        read(an, "attractor_edges", c.attractorEdges);
        read(an, "confidence_thresholds", c.confidenceThresholds);

        c.neural.seed = derive_seed(c.masterSeed, "train");
        c.probe.seed = derive_seed(c.masterSeed, "probe");
        return c;
    } catch (const YAML::Exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, std::span<const std::string> overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_yaml(ss.str(), fs::absolute(path).parent_path(), overrides);
}

namespace {

std::string canonical_yaml(const ExperimentConfig& c, bool withOutputDir) {
    YAML::Emitter out;
    auto seq = [&](const std::vector<double>& v) {
        out << YAML::Flow << YAML::BeginSeq;
        for (double d : v) out << yaml_double(d);
        out << YAML::EndSeq;
    };
    out << YAML::BeginMap;
    if (withOutputDir) out << YAML::Key << "output_dir" << YAML::Value << c.outputDir.string();
    out << YAML::Key << "master_seed" << YAML::Value << c.masterSeed;

    out << YAML::Key << "corpus" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "paths" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : c.corpusPaths) out << p.string();
    out << YAML::EndSeq;
    out << YAML::Key << "lowercase" << YAML::Value << c.tokenizer.lowercase;
    out << YAML::Key << "split_punctuation" << YAML::Value << c.tokenizer.splitPunctuation;
    out << YAML::EndMap;

    out << YAML::Key << "lexicon" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "nouns" << YAML::Value << c.nouns.string();
    out << YAML::Key << "verbs" << YAML::Value << c.verbs.string();
    out << YAML::Key << "contexts" << YAML::Value << c.contexts.string();
    if (c.manualAnnotations) out << YAML::Key << "manual_annotations" << YAML::Value << c.manualAnnotations->string();
    out << YAML::Key << "filter_contexts" << YAML::Value << c.filterContexts;
    out << YAML::EndMap;

    if (c.intervention) {
        const auto& i = *c.intervention;
        out << YAML::Key << "intervention" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "vois" << YAML::Value << YAML::Flow << i.vois;
        out << YAML::Key << "mode" << YAML::Value << i.mode;
        if (i.mode == "absolute") {
            out << YAML::Key << "n" << YAML::Value << i.n;
        } else {
            out << YAML::Key << "group_s" << YAML::Value << YAML::Flow << i.groupS;
            out << YAML::Key << "group_p" << YAML::Value << YAML::Flow << i.groupP;
            out << YAML::Key << "n_vary" << YAML::Value << i.nVary;
            out << YAML::Key << "n_constant" << YAML::Value << i.nConstant;
        }
        out << YAML::Key << "eligibility_min" << YAML::Value << i.eligibilityMin;
        out << YAML::EndMap;
    }

    out << YAML::Key << "scorer" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << c.scorer;
    out << YAML::Key << "vocab_min_count" << YAML::Value << c.vocabMinCount;
    out << YAML::Key << "neural" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "embedding_dim" << YAML::Value << c.neural.embeddingDim;
    out << YAML::Key << "context_layers" << YAML::Value << c.neural.contextLayers;
    out << YAML::Key << "hidden_dim" << YAML::Value << c.neural.hiddenDim;
    out << YAML::Key << "mask_probability" << YAML::Value << yaml_double(c.neural.maskProbability);
    out << YAML::Key << "epochs" << YAML::Value << c.neural.epochs;
    out << YAML::Key << "learning_rate" << YAML::Value << yaml_double(c.neural.learningRate);
    out << YAML::Key << "batch_size" << YAML::Value << c.neural.batchSize;
    out << YAML::Key << "max_positions" << YAML::Value << c.neural.maxPositions;
    out << YAML::Key << "init_scale" << YAML::Value << yaml_double(c.neural.initScale);
    out << YAML::Key << "held_out_fraction" << YAML::Value << yaml_double(c.neural.heldOutFraction);
    out << YAML::Key << "max_held_out" << YAML::Value << c.neural.maxHeldOut;
    out << YAML::EndMap;
    out << YAML::EndMap;

    out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "verbs" << YAML::Value << c.evalVerbs;
    out << YAML::Key << "sample" << YAML::Value << c.evalSample;
    out << YAML::Key << "audit_size" << YAML::Value << c.auditSize;
    out << YAML::EndMap;

    out << YAML::Key << "probe" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "enabled" << YAML::Value << c.probeEnabled;
    out << YAML::Key << "hidden_dim" << YAML::Value << c.probe.hiddenDim;
    out << YAML::Key << "epochs" << YAML::Value << c.probe.epochs;
    out << YAML::Key << "learning_rate" << YAML::Value << yaml_double(c.probe.learningRate);
    out << YAML::Key << "batch_size" << YAML::Value << c.probe.batchSize;
    out << YAML::Key << "train_subjects" << YAML::Value << c.probeTrainSubjects;
    out << YAML::Key << "train_contexts" << YAML::Value << c.probeTrainContexts;
    out << YAML::Key << "folds" << YAML::Value << c.probeFolds;
    out << YAML::EndMap;

    out << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "frequency_edges" << YAML::Value;
    seq(c.frequencyEdges);
    out << YAML::Key << "ratio_edges" << YAML::Value;
    seq(c.ratioEdges);
    out << YAML::Key << "attractor_edges" << YAML::Value;
    seq(c.attractorEdges);
    out << YAML::Key << "confidence_thresholds" << YAML::Value;
    seq(c.confidenceThresholds);
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

} // namespace

std::string ExperimentConfig::to_yaml() const {
    return canonical_yaml(*this, true);
}

std::string ExperimentConfig::hash() const {
    return sha256_hex(canonical_yaml(*this, false));
}

fs::path ExperimentConfig::resolve(const fs::path& p) const {
    return p.is_absolute() ? p : baseDir / p;
}

void ExperimentConfig::preflight() const {
    std::vector<std::string> problems;
    if (outputDir.empty()) problems.push_back("output_dir is not set");
    if (corpusPaths.empty()) problems.push_back("corpus.paths is empty");
    auto need = [&](const fs::path& p, const char* what) {
        if (p.empty()) {
            problems.push_back(std::string(what) + " is not set");
        } else if (!fs::is_regular_file(resolve(p))) {
            problems.push_back(std::string(what) + " not found: " + resolve(p).string());
        }
    };
    for (const auto& p : corpusPaths) need(p, "corpus file");
    need(nouns, "lexicon.nouns");
    need(verbs, "lexicon.verbs");
    need(contexts, "lexicon.contexts");
    if (manualAnnotations) need(*manualAnnotations, "lexicon.manual_annotations");
    if (scorer != "neural" && scorer != "unigram" && scorer != "pair") {
        problems.push_back("scorer.kind must be neural, unigram or pair");
    }
    if (evalVerbs != "vois" && evalVerbs != "all") problems.push_back("eval.verbs must be vois or all");
    if (evalVerbs == "vois" && !intervention) problems.push_back("eval.verbs = vois needs an intervention section");
    if (intervention) {
        if (intervention->vois.empty()) problems.push_back("intervention.vois is empty");
        if (intervention->mode != "absolute" && intervention->mode != "relative") {
            problems.push_back("intervention.mode must be absolute or relative");
        }
        if (!verbs.empty() && fs::is_regular_file(resolve(verbs))) {
            try {
                std::set<std::string> lemmas;
                for (const auto& v : stimuli::load_lexicon_file(resolve(verbs))) lemmas.insert(v.lemma);
                for (const auto& l : intervention->vois) {
                    if (!lemmas.contains(l)) problems.push_back("intervention VOI '" + l + "' is not in lexicon.verbs");
                }
            } catch (const Error& e) {
                problems.push_back(e.what());
            }
        }
    }
    if (probeFolds == 0) problems.push_back("probe.folds must be positive");
    try {
        neural.validate();
        probe.validate();
        analysis::Binning{analysis::BinningKind::Log10Frequency, frequencyEdges}.validate();
        analysis::Binning{analysis::BinningKind::Log2Ratio, ratioEdges}.validate();
        analysis::Binning{analysis::BinningKind::AttractorCount, attractorEdges}.validate();
    } catch (const ValidationError& e) {
        problems.push_back(e.what());
    }
    if (!problems.empty()) {
        std::string msg = "config preflight failed:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
}

// ---------------------------------------------------------------------------
// Stages

namespace {

constexpr Stage kStages[] = {Stage::Index, Stage::GenStimuli, Stage::Intervene, Stage::Train,
                             Stage::Eval,  Stage::Probe,      Stage::Report};

} // namespace

std::string_view to_string(Stage s) noexcept {
    switch (s) {
    case Stage::Index: return "index";
    case Stage::GenStimuli: return "gen-stimuli";
    case Stage::Intervene: return "intervene";
    case Stage::Train: return "train";
    case Stage::Eval: return "eval";
    case Stage::Probe: return "probe";
    case Stage::Report: return "report";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    for (auto st : kStages) {
        if (s == to_string(st)) return st;
    }
    throw ValidationError("unknown stage '" + std::string(s) + "'");
}

std::span<const Stage> all_stages() noexcept {
    return kStages;
}

std::string RunManifest::to_json() const {
    json j;
    j["schema"] = "svafreq.manifest/1";
    j["software_version"] = softwareVersion;
    j["config_hash"] = configHash;
    j["master_seed"] = masterSeed;
    auto files = [](const std::vector<OutputFile>& v) {
        auto a = json::array();
        for (const auto& f : v) a.push_back(json{{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
        return a;
    };
    j["inputs"] = files(inputs);
    j["effective_config"] = json{{"path", effectiveConfig.path}, {"sha256", effectiveConfig.sha256},
                                 {"bytes", effectiveConfig.bytes}};
    auto list = json::array();
    for (const auto& s : stages) {
        list.push_back(json{{"name", s.name}, {"input_hash", s.inputHash}, {"outputs", files(s.outputs)}});
    }
    j["stages"] = std::move(list);
    return j.dump(2) + "\n";
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY | O_CLOEXEC, 0644);
        if (fd >= 0) {
            const auto pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        if (errno != EEXIST) {
            throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
        }
        // Take over a lock whose owner is gone.
        std::ifstream in(path_);
        long owner = 0;
        in >> owner;
        if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) break;
        fs::remove(path_);
    }
    throw IoError("output directory " + path_.parent_path().string() + " is locked by another run (" + path_.string() +
                ")");
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << content;
    if (!out) {
        throw IoError("write error on " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Everything a stage may need, loaded once per run.
struct Context {
    const ExperimentConfig& cfg;
    fs::path out;
    std::ostream* log;

    std::optional<stimuli::Lexicon> lexicon;
    std::vector<stimuli::SententialContext> acceptedContexts;
    std::vector<std::pair<stimuli::SententialContext, stimuli::ContextReject>> rejectedContexts;
    bool contextsLoaded = false;

    const stimuli::Lexicon& lex() {
        if (!lexicon) lexicon = stimuli::load_lexicon(cfg.resolve(cfg.nouns), cfg.resolve(cfg.verbs));
        return *lexicon;
    }

    std::vector<Lexeme> all_lexemes() {
        std::vector<Lexeme> all = lex().nouns;
        all.insert(all.end(), lex().verbs.begin(), lex().verbs.end());
        return all;
    }

    const std::vector<stimuli::SententialContext>& contexts() {
        if (contextsLoaded) return acceptedContexts;
        std::set<std::string> nounForms;
        for (const auto& n : lex().nouns) {
            nounForms.insert(n.singular);
            nounForms.insert(n.plural);
        }
        auto rules = stimuli::ContextRules::defaults();
        if (cfg.manualAnnotations) rules.manual = stimuli::load_manual_annotations(cfg.resolve(*cfg.manualAnnotations));
        for (auto& c : stimuli::load_contexts(cfg.resolve(cfg.contexts), nounForms)) {
            const auto reject = cfg.filterContexts ? stimuli::validate_context(c, rules) : std::nullopt;
            if (reject) {
                rejectedContexts.emplace_back(c, *reject);
            } else {
                acceptedContexts.push_back(std::move(c));
            }
        }
        contextsLoaded = true;
        return acceptedContexts;
    }

    std::vector<Lexeme> vois() {
        std::vector<Lexeme> out;
        if (!cfg.intervention) return out;
        for (const auto& lemma : cfg.intervention->vois) {
            auto it = std::find_if(lex().verbs.begin(), lex().verbs.end(),
                                   [&](const Lexeme& v) { return v.lemma == lemma; });
            if (it == lex().verbs.end()) {
                throw ValidationError("VOI '" + lemma + "' is not in the verb lexicon");
            }
            out.push_back(*it);
        }
        return out;
    }

    std::vector<Lexeme> eval_verbs() {
        return cfg.evalVerbs == "vois" ? vois() : lex().verbs;
    }

    corpus::Corpus raw_corpus() {
        corpus::Corpus all;
        for (const auto& p : cfg.corpusPaths) {
            for (const auto& s : corpus::ingest(cfg.resolve(p), cfg.tokenizer)) all.add(s.tokens);
        }
        return all;
    }

    std::vector<stimuli::Stimulus> eval_stimuli() {
        const auto nonce = stimuli::generate_nonce(lex().nouns, eval_verbs(), contexts());
        std::vector<stimuli::Stimulus> out;
        if (cfg.evalSample == 0 || cfg.evalSample >= nonce.size()) {
            out.reserve(static_cast<std::size_t>(nonce.size()));
            for (auto s : nonce) out.push_back(std::move(s));
        } else {
            Rng rng(derive_seed(cfg.masterSeed, "gen-stimuli/sample"));
            for (auto i : rng.sample_indices(static_cast<std::size_t>(nonce.size()),
                                             static_cast<std::size_t>(cfg.evalSample))) {
                out.push_back(nonce.at(i));
            }
        }
        return out;
    }

    std::optional<intervene::InterventionSpec> spec() {
        if (!cfg.intervention) return std::nullopt;
        const auto& i = *cfg.intervention;
        intervene::InterventionSpec s;
        s.vois = vois();
        s.seed = derive_seed(cfg.masterSeed, "intervene");
        if (i.mode == "absolute") {
            s.mode = intervene::AbsoluteMode{i.n};
        } else {
            s.mode = intervene::RelativeMode{i.groupS, i.groupP, i.nVary, i.nConstant};
        }
        s.validate();
        return s;
    }

    void say(const std::string& msg) {
        if (log) *log << msg << std::endl;
    }
};

std::vector<OutputFile> list_outputs(const fs::path& root, const fs::path& dir) {
    std::vector<OutputFile> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() == ".stamp") continue;
        out.push_back(OutputFile{fs::relative(e.path(), root).generic_string(), sha256_file(e.path()),
                                 static_cast<std::uint64_t>(e.file_size())});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
}

std::string stamp_json(const std::string& inputHash, const std::vector<OutputFile>& outputs) {
    json j;
    j["input_hash"] = inputHash;
    auto a = json::array();
    for (const auto& f : outputs) a.push_back(json{{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    j["outputs"] = std::move(a);
    return j.dump(2) + "\n";
}

// Outputs recorded in a valid stamp, or nullopt when the stage must run.
std::optional<std::vector<OutputFile>> check_stamp(const fs::path& root, const fs::path& dir,
                                                   const std::string& inputHash) {
    const auto stamp = dir / ".stamp";
    if (!fs::exists(stamp)) return std::nullopt;
    try {
        const auto j = json::parse(read_file(stamp));
        if (j.at("input_hash").get<std::string>() != inputHash) return std::nullopt;
        std::vector<OutputFile> recorded;
        for (const auto& f : j.at("outputs")) {
            recorded.push_back(OutputFile{f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                                          f.at("bytes").get<std::uint64_t>()});
        }
        if (list_outputs(root, dir) != recorded) return std::nullopt;
        return recorded;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// --- individual stages -----------------------------------------------------

void stage_index(Context& ctx, const fs::path& dir) {
    const auto corpus = ctx.raw_corpus();
    const auto index = corpus::build_frequency_index(corpus, ctx.all_lexemes());
    index.save(dir / "index.tsv");
    json j;
    j["sentences"] = corpus.size();
    j["tokens"] = corpus.token_count();
    write_file(dir / "corpus_stats.json", j.dump(2) + "\n");
    ctx.say("  corpus: " + std::to_string(corpus.size()) + " sentences, " + std::to_string(corpus.token_count()) +
            " tokens");
}

void stage_gen_stimuli(Context& ctx, const fs::path& dir) {
    const auto& contexts = ctx.contexts();
    {
        std::ostringstream out;
        out << "context_id,code,template\n";
        for (const auto& [c, code] : ctx.rejectedContexts) {
            out << c.id << ',' << stimuli::to_string(code) << ',' << text::csv_field(c.to_template()) << '\n';
        }
        write_file(dir / "context_rejections.csv", out.str());
    }
    if (contexts.empty()) {
        throw ValidationError("no contexts survive validation");
    }
    const auto stim = ctx.eval_stimuli();
    stimuli::write_stimuli_tsv(stim, dir / "stimuli.tsv");
    const auto k = std::min(ctx.cfg.auditSize, stim.size());
    const auto sheet = stimuli::sample_audit(stim, k, derive_seed(ctx.cfg.masterSeed, "audit"));
    stimuli::write_audit(sheet, dir / "audit_sheet.csv", dir / "audit_key.csv");
    ctx.say("  " + std::to_string(stim.size()) + " stimuli over " + std::to_string(contexts.size()) + " contexts (" +
            std::to_string(ctx.rejectedContexts.size()) + " rejected)");
}

void stage_intervene(Context& ctx, const fs::path& dir) {
    const auto corpus = ctx.raw_corpus();
    const auto spec = ctx.spec();
    corpus::Corpus train;
    json summary;
    if (spec) {
        if (ctx.cfg.intervention->eligibilityMin > 0) {
            const auto index = corpus::build_frequency_index(corpus, ctx.all_lexemes());
            intervene::check_voi_eligibility(index, spec->vois, ctx.cfg.intervention->eligibilityMin);
        }
        auto ex = intervene::excise(corpus, spec->vois);
        train = intervene::apply_spec(ex.clean, ex.pool, *spec);
        intervene::save_spec(*spec, dir / "spec.yaml");
        const auto report = intervene::verify_spec(train, *spec);
        intervene::write_verification_csv(report, dir / "verification.csv");
        summary["original_sentences"] = corpus.size();
        summary["clean_sentences"] = ex.clean.size();
        summary["pooled_sentences"] = ex.pool.pooled();
        summary["discarded_sentences"] = ex.pool.discarded.size();
        summary["injected_sentences"] = train.size() - ex.clean.size();
        summary["size_delta"] = static_cast<std::int64_t>(train.size()) - static_cast<std::int64_t>(corpus.size());
        summary["size_delta_fraction"] =
            corpus.size() == 0 ? 0.0
                               : static_cast<double>(summary["size_delta"].get<std::int64_t>()) /
                                     static_cast<double>(corpus.size());
        summary["verification_pass"] = report.pass;
        write_file(dir / "summary.json", summary.dump(2) + "\n");
        if (!report.pass) {
            std::string forms;
            for (const auto& f : report.failing_forms()) forms += (forms.empty() ? "" : ", ") + f;
            corpus::write_corpus(train, dir / "corpus.txt");
            throw VerificationFailure("intervention verification failed for: " + forms);
        }
    } else {
        train = corpus;
        summary["original_sentences"] = corpus.size();
        summary["verification_pass"] = true;
        write_file(dir / "summary.json", summary.dump(2) + "\n");
    }
    corpus::write_corpus(train, dir / "corpus.txt");
    corpus::build_frequency_index(train, ctx.all_lexemes()).save(dir / "index.tsv");
    ctx.say("  training corpus: " + std::to_string(train.size()) + " sentences");
}

std::set<std::string> required_forms(Context& ctx) {
    std::set<std::string> req;
    for (const auto& l : ctx.all_lexemes()) {
        req.insert(l.singular);
        req.insert(l.plural);
    }
    return req;
}

void stage_train(Context& ctx, const fs::path& dir) {
    if (ctx.cfg.scorer != "neural") {
        ctx.say("  scorer '" + ctx.cfg.scorer + "' needs no training");
        return;
    }
    const auto corpus = corpus::ingest(ctx.out / "intervene" / "corpus.txt");
    auto vocab = neural::build_vocabulary(corpus, ctx.cfg.vocabMinCount, required_forms(ctx));
    const auto result = neural::train_mlm(corpus, ctx.cfg.neural, std::move(vocab));
    result.model->save(dir / "model.bin");
    json j;
    j["epoch_loss"] = result.epochLoss;
    j["held_out_accuracy"] = result.heldOutAccuracy;
    j["held_out_sentences"] = result.heldOutSentences;
    j["vocabulary_size"] = result.model->vocabulary().size();
    j["parameters"] = result.model->parameters().size();
    write_file(dir / "train.json", j.dump(2) + "\n");
    ctx.say("  held-out masked accuracy " + text::format_double(result.heldOutAccuracy));
}

std::shared_ptr<const corpus::FrequencyIndex> train_index(Context& ctx) {
    return std::make_shared<const corpus::FrequencyIndex>(
        corpus::FrequencyIndex::load(ctx.out / "intervene" / "index.tsv"));
}

void stage_eval(Context& ctx, const fs::path& dir) {
    const auto stim = ctx.eval_stimuli();
    const auto index = train_index(ctx);
    auto unigram = scorer::make_unigram_scorer(index);
    auto pair = scorer::make_pair_scorer(index, unigram);
    std::vector<std::shared_ptr<const scorer::Scorer>> scorers{unigram, pair};
    if (ctx.cfg.scorer == "neural") {
        scorers.push_back(neural::MaskedLanguageModel::load(ctx.out / "train" / "model.bin"));
    }
    json summary;
    summary["primary_scorer"] = ctx.cfg.scorer;
    summary["stimuli"] = stim.size();
    for (const auto& s : scorers) {
        const auto records = scorer::evaluate(*s, stim);
        scorer::write_records_csv(records, dir / ("records_" + s->id() + ".csv"));
        const double err = records.empty() ? 0.0 : analysis::error_rate(records);
        summary["error_rate"][s->id()] = err;
        ctx.say("  " + s->id() + " error " + text::format_double(err));
    }
    write_file(dir / "summary.json", summary.dump(2) + "\n");
}

std::vector<scorer::EvaluationRecord> primary_records(Context& ctx) {
    return scorer::read_records_csv(ctx.out / "eval" / ("records_" + ctx.cfg.scorer + ".csv"));
}

void stage_probe(Context& ctx, const fs::path& dir) {
    if (ctx.cfg.scorer != "neural" || !ctx.cfg.probeEnabled) {
        ctx.say("  probes disabled for this configuration");
        return;
    }
    const auto model = neural::MaskedLanguageModel::load(ctx.out / "train" / "model.bin");
    const auto& nouns = ctx.lex().nouns;
    const auto& contexts = ctx.contexts();
    const std::size_t trainS = ctx.cfg.probeTrainSubjects ? ctx.cfg.probeTrainSubjects : nouns.size() * 3 / 4;
    const std::size_t trainC = ctx.cfg.probeTrainContexts
                                   ? ctx.cfg.probeTrainContexts
                                   : contexts.size() - std::max<std::size_t>(1, contexts.size() * 6 / 56);
    const auto cv =
        probe::cross_validate_subject_probe(*model, nouns, contexts, trainS, trainC, ctx.cfg.probeFolds, ctx.cfg.probe);
    {
        std::ostringstream out;
        out << "fold,error_rate\n";
        for (std::size_t i = 0; i < cv.foldErrors.size(); ++i) out << i << ',' << text::format_double(cv.foldErrors[i]) << '\n';
        write_file(dir / "subject_cv.csv", out.str());
    }

    std::set<std::string> held;
    if (ctx.cfg.intervention) {
        held.insert(ctx.cfg.intervention->vois.begin(), ctx.cfg.intervention->vois.end());
    } else {
        const auto& verbs = ctx.lex().verbs;
        Rng rng(derive_seed(ctx.cfg.masterSeed, "probe/verbs"));
        for (auto i : rng.sample_indices(verbs.size(), std::max<std::size_t>(1, verbs.size() / 8))) {
            held.insert(verbs[i].lemma);
        }
    }
    const auto data = probe::build_verb_probe_dataset(*model, ctx.lex().verbs, contexts, held);
    const auto verbProbe = probe::train_probe(data.train, ctx.cfg.probe);
    const auto ev = probe::eval_probe(verbProbe, data.eval);
    {
        std::vector<Lexeme> evalVerbs;
        for (const auto& v : ctx.lex().verbs) {
            if (held.contains(v.lemma)) evalVerbs.push_back(v);
        }
        const std::uint32_t first = static_cast<std::uint32_t>(ctx.lex().verbs.size() - evalVerbs.size());
        const auto index = train_index(ctx);
        std::ostringstream out;
        out << "lemma,singular_count,plural_count,items,errors,error_rate\n";
        for (const auto& [id, g] : ev.perVerb) {
            const auto& v = evalVerbs.at(id - first);
            out << text::csv_field(v.lemma) << ',' << index->count_form(v.singular).value_or(0) << ','
                << index->count_form(v.plural).value_or(0) << ',' << g.total << ',' << g.errors << ','
                << text::format_double(g.rate()) << '\n';
        }
        write_file(dir / "verb_probe.csv", out.str());
    }
    const auto records = primary_records(ctx);
    const double observed = records.empty() ? 0.0 : analysis::error_rate(records);
    const auto h3 = probe::h3_report(cv.meanError, ev.errorRate, observed);
    probe::write_h3_json(h3, dir / "h3.json");
    const std::vector<std::string> labels{"run"};
    probe::write_h3_csv(std::span(&h3, 1), labels, dir / "h3.csv");
    ctx.say("  subject probe " + text::format_double(cv.meanError) + ", verb probe " +
            text::format_double(ev.errorRate) + ", gap " + text::format_double(h3.gap));
}

void stage_report(Context& ctx, const fs::path& dir) {
    using namespace analysis;
    const auto records = primary_records(ctx);
    const auto index = train_index(ctx);
    const Binning freq{BinningKind::Log10Frequency, ctx.cfg.frequencyEdges};
    const Binning ratio{BinningKind::Log2Ratio, ctx.cfg.ratioEdges};
    const Binning attr{BinningKind::AttractorCount, ctx.cfg.attractorEdges};

    std::vector<std::pair<std::string, StratifiedReport>> reports;
    reports.emplace_back("seen_unseen", stratify_seen_unseen(records, *index));
    reports.emplace_back("seen_unseen_by_kind", stratify_seen_unseen_by_kind(records, *index));
    reports.emplace_back("frequency_pair", stratify_by_frequency(records, *index, FrequencyKey::Pair, freq));
    reports.emplace_back("frequency_verb", stratify_by_frequency(records, *index, FrequencyKey::VerbForm, freq));
    reports.emplace_back("frequency_subject", stratify_by_frequency(records, *index, FrequencyKey::SubjectForm, freq));
    reports.emplace_back("ratio", stratify_by_ratio(records, *index, ratio));
    reports.emplace_back("attractors", stratify_by_attractors(records, ctx.contexts(), attr));
    for (const auto& [name, r] : reports) {
        emit_report(r, ReportFormat::Json, dir / (name + ".json"));
        emit_report(r, ReportFormat::Csv, dir / (name + ".csv"));
    }
    const auto curves = confidence_curves(records, ctx.cfg.confidenceThresholds);
    write_file(dir / "confidence.csv", confidence_to_csv(curves));
    write_file(dir / "abs_vs_relative.csv", abs_rel_to_csv(abs_vs_relative_table(*index, ctx.lex().verbs)));

    // Error per target form against that form's training count.
    std::map<std::string, std::pair<std::size_t, std::size_t>> perForm;  // errors, total
    for (const auto& r : records) {
        auto& e = perForm[r.targetForm];
        e.first += r.correct ? 0 : 1;
        ++e.second;
    }
    std::ostringstream pf;
    pf << "target_form,count,records,errors,error_rate\n";
    PlotSeries byCount{"error_by_target_count", {}};
    for (const auto& [form, e] : perForm) {
        const auto c = index->count_form(form).value_or(0);
        const double rate = static_cast<double>(e.first) / static_cast<double>(e.second);
        pf << text::csv_field(form) << ',' << c << ',' << e.second << ',' << e.first << ',' << text::format_double(rate)
           << '\n';
        byCount.points.push_back(PlotPoint{static_cast<double>(c), rate, e.second});
    }
    std::sort(byCount.points.begin(), byCount.points.end(), [](const auto& a, const auto& b) { return a.x < b.x; });
    write_file(dir / "per_target_form.csv", pf.str());

    PlotSeries above{"confidence_above", {}};
    PlotSeries below{"confidence_below", {}};
    for (const auto& p : curves) {
        above.points.push_back(PlotPoint{p.threshold, p.above.errorRate, p.above.count});
        below.points.push_back(PlotPoint{p.threshold, p.below.errorRate, p.below.count});
    }
    const std::vector<PlotSeries> series{byCount, above, below};
    write_plot_data(series, dir / "plot_data.csv");

    json summary;
    summary["scorer"] = ctx.cfg.scorer;
    summary["records"] = records.size();
    summary["error_rate"] = records.empty() ? 0.0 : error_rate(records);
    write_file(dir / "summary.json", summary.dump(2) + "\n");
}

using StageFn = void (*)(Context&, const fs::path&);

StageFn stage_fn(Stage s) {
    switch (s) {
    case Stage::Index: return stage_index;
    case Stage::GenStimuli: return stage_gen_stimuli;
    case Stage::Intervene: return stage_intervene;
    case Stage::Train: return stage_train;
    case Stage::Eval: return stage_eval;
    case Stage::Probe: return stage_probe;
    case Stage::Report: return stage_report;
    }
    return nullptr;
}

} // namespace

RunManifest run(const ExperimentConfig& config, std::optional<Stage> until, std::ostream* log) {
    config.preflight();
    const fs::path out = config.resolve(config.outputDir);
    DirectoryLock lock(out);

    RunManifest manifest;
    manifest.softwareVersion = SVAFREQ_VERSION;
    manifest.configHash = config.hash();
    manifest.masterSeed = config.masterSeed;
    std::vector<std::pair<std::string, fs::path>> inputs;
    for (const auto& p : config.corpusPaths) inputs.emplace_back(p.generic_string(), config.resolve(p));
    inputs.emplace_back(config.nouns.generic_string(), config.resolve(config.nouns));
    inputs.emplace_back(config.verbs.generic_string(), config.resolve(config.verbs));
    inputs.emplace_back(config.contexts.generic_string(), config.resolve(config.contexts));
    if (config.manualAnnotations) {
        inputs.emplace_back(config.manualAnnotations->generic_string(), config.resolve(*config.manualAnnotations));
    }
    for (const auto& [name, path] : inputs) {
        manifest.inputs.push_back(OutputFile{name, sha256_file(path), static_cast<std::uint64_t>(fs::file_size(path))});
    }
    const auto effective = config.to_yaml();
    write_file(out / "config.effective.yaml", effective);
    manifest.effectiveConfig = OutputFile{"config.effective.yaml", sha256_hex(effective), effective.size()};

    Context ctx{config, out, log, {}, {}, {}, false};
    std::string chain = manifest.configHash;
    for (const auto& in : manifest.inputs) chain += in.sha256;

    for (Stage s : kStages) {
        const std::string name(to_string(s));
        const fs::path dir = out / name;
        StageRecord rec;
        rec.name = name;
        rec.inputHash = sha256_hex(chain + "/" + name);
        const auto t0 = std::chrono::steady_clock::now();
        if (auto recorded = check_stamp(out, dir, rec.inputHash)) {
            rec.outputs = std::move(*recorded);
            rec.skipped = true;
            ctx.say("[" + name + "] up to date");
        } else {
            ctx.say("[" + name + "] running");
            std::error_code ec;
            fs::remove_all(dir, ec);
            fs::create_directories(dir);
            try {
                stage_fn(s)(ctx, dir);
            } catch (const VerificationFailure&) {
                throw;
            } catch (const StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(name, e.what());
            }
            rec.outputs = list_outputs(out, dir);
            write_file(dir / ".stamp", stamp_json(rec.inputHash, rec.outputs));
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& f : rec.outputs) chain += f.sha256;
        manifest.stages.push_back(std::move(rec));
        if (until && *until == s) break;
    }

    json timings;
    for (const auto& s : manifest.stages) {
        timings[s.name] = json{{"seconds", s.seconds}, {"skipped", s.skipped}};
    }
    write_file(out / "timings.json", timings.dump(2) + "\n");
    write_file(out / "manifest.json", manifest.to_json());
    return manifest;
}

// ---------------------------------------------------------------------------
// Sweep

std::string_view to_string(SweepAxis a) noexcept {
    return a == SweepAxis::AbsoluteN ? "absoluteN" : "nVary";
}

SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "absoluteN") return SweepAxis::AbsoluteN;
    if (s == "nVary") return SweepAxis::NVary;
    throw ValidationError("unknown sweep axis '" + std::string(s) + "' (expected absoluteN or nVary)");
}

SweepResult sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const std::uint64_t> values,
                  std::ostream* log) {
    if (!config.intervention) {
        throw ValidationError("sweep needs an intervention section");
    }
    const bool absolute = config.intervention->mode == "absolute";
    if ((axis == SweepAxis::AbsoluteN) != absolute) {
        throw ValidationError("sweep axis " + std::string(to_string(axis)) + " does not match intervention mode '" +
                              config.intervention->mode + "'");
    }
    if (values.empty()) {
        throw ValidationError("sweep needs at least one value");
    }
    config.preflight();
    const fs::path base = config.resolve(config.outputDir);
    SweepResult result;
    for (auto v : values) {
        ExperimentConfig c = config;
        c.outputDir = base / ("sweep-" + std::string(to_string(axis)) + "-" + std::to_string(v));
        if (absolute) {
            c.intervention->n = v;
        } else {
            c.intervention->nVary = v;
        }
        if (log) *log << "== " << to_string(axis) << " = " << v << std::endl;
        result.runs.push_back(run(c, std::nullopt, log));

        const auto records =
            scorer::read_records_csv(c.outputDir / "eval" / ("records_" + config.scorer + ".csv"));
        SweepPoint p;
        p.value = v;
        p.records = records.size();
        p.errorRate = records.empty() ? 0.0 : analysis::error_rate(records);
        if (!absolute) {
            std::set<std::string> constantForms;
            const std::set<std::string> groupS(c.intervention->groupS.begin(), c.intervention->groupS.end());
            stimuli::Lexicon lex = stimuli::load_lexicon(c.resolve(c.nouns), c.resolve(c.verbs));
            for (const auto& verb : lex.verbs) {
                if (groupS.contains(verb.lemma)) constantForms.insert(verb.plural);
                else if (std::find(c.intervention->groupP.begin(), c.intervention->groupP.end(), verb.lemma) !=
                         c.intervention->groupP.end()) {
                    constantForms.insert(verb.singular);
                }
            }
            std::vector<scorer::EvaluationRecord> subset;
            for (const auto& r : records) {
                if (constantForms.contains(r.targetForm)) subset.push_back(r);
            }
            if (!subset.empty()) p.constantTargetError = analysis::error_rate(subset);
        }
        result.curve.push_back(p);
    }

    std::ostringstream csv;
    csv << "value,records,error_rate,constant_target_error\n";
    analysis::PlotSeries overall{"error_rate", {}};
    analysis::PlotSeries constant{"constant_target_error", {}};
    for (const auto& p : result.curve) {
        csv << p.value << ',' << p.records << ',' << text::format_double(p.errorRate) << ','
            << (p.constantTargetError ? text::format_double(*p.constantTargetError) : "") << '\n';
        overall.points.push_back({static_cast<double>(p.value), p.errorRate, p.records});
        if (!absolute) constant.points.push_back({static_cast<double>(p.value), p.constantTargetError, p.records});
    }
    write_file(base / ("sweep-" + std::string(to_string(axis)) + ".csv"), csv.str());
    std::vector<analysis::PlotSeries> series{overall};
    if (!absolute) series.push_back(constant);
    analysis::write_plot_data(series, base / ("sweep-" + std::string(to_string(axis)) + "-plot.csv"));
    return result;
}

} // namespace svafreq::pipeline
