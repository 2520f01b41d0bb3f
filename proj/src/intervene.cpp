#include "svafreq/intervene.hpp"

#include "svafreq/error.hpp"
#include "svafreq/rng.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

namespace svafreq::intervene {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::string> yaml_string_list(const YAML::Node& node, const char* key) {
    if (!node[key]) return {};
    if (!node[key].IsSequence()) {
        throw ValidationError(std::string("intervention spec: '") + key + "' must be a list");
    }
    return node[key].as<std::vector<std::string>>();
}

} // namespace

void InterventionSpec::validate() const {
    std::set<std::string> lemmas;
    for (const auto& v : vois) {
        if (v.singular == v.plural || v.singular.empty() || v.plural.empty()) {
            throw ValidationError("VOI '" + v.lemma + "' needs two distinct nonempty forms");
        }
        if (!lemmas.insert(v.lemma).second) {
            throw ValidationError("VOI '" + v.lemma + "' listed twice");
        }
    }
    if (const auto* rel = std::get_if<RelativeMode>(&mode)) {
        if (rel->nVary < 1 || rel->nConstant < 1) {
            throw ValidationError("relative intervention: n_vary and n_constant must be >= 1");
        }
        if (rel->groupS.size() != rel->groupP.size()) {
            throw ValidationError("relative intervention: groups must have equal size");
        }
        std::set<std::string> s(rel->groupS.begin(), rel->groupS.end());
        std::set<std::string> p(rel->groupP.begin(), rel->groupP.end());
        if (s.size() != rel->groupS.size() || p.size() != rel->groupP.size()) {
            throw ValidationError("relative intervention: duplicate lemma within a group");
        }
        for (const auto& l : s) {
            if (p.contains(l)) {
                throw ValidationError("relative intervention: '" + l + "' is in both groups");
            }
        }
        std::set<std::string> all = s;
        all.insert(p.begin(), p.end());
        if (all != lemmas) {
            throw ValidationError("relative intervention: groups must partition the VOIs");
        }
    }
}

std::map<std::string, std::uint64_t> InterventionSpec::target_counts() const {
    std::map<std::string, std::uint64_t> out;
    std::visit(overloaded{
                   [&](const AbsoluteMode& a) {
                       for (const auto& v : vois) {
                           out[v.singular] = a.n;
                           out[v.plural] = a.n;
                       }
                   },
                   [&](const RelativeMode& r) {
                       const std::set<std::string> s(r.groupS.begin(), r.groupS.end());
                       for (const auto& v : vois) {
                           const bool inS = s.contains(v.lemma);
                           out[v.singular] = inS ? r.nVary : r.nConstant;
                           out[v.plural] = inS ? r.nConstant : r.nVary;
                       }
                   },
               },
               mode);
    return out;
}

InterventionSpec load_spec(const std::filesystem::path& path, std::span<const Lexeme> verbs) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::BadFile&) {
        throw IoError("cannot open intervention spec " + path.string());
    } catch (const YAML::Exception& e) {
        throw ParseError(path.string(), static_cast<std::size_t>(e.mark.line + 1), e.msg);
    }
    std::unordered_map<std::string, const Lexeme*> byLemma;
    for (const auto& v : verbs) {
        byLemma.emplace(v.lemma, &v);
    }
    try {
        InterventionSpec spec;
        spec.seed = root["seed"] ? root["seed"].as<std::uint64_t>() : 0;
        for (const auto& lemma : yaml_string_list(root, "vois")) {
            auto it = byLemma.find(lemma);
            if (it == byLemma.end()) {
                throw ValidationError("VOI '" + lemma + "' is not in the verb lexicon");
            }
            spec.vois.push_back(*it->second);
        }
        const std::string mode = root["mode"] ? root["mode"].as<std::string>() : "absolute";
        if (mode == "absolute") {
            spec.mode = AbsoluteMode{root["n"] ? root["n"].as<std::uint64_t>() : 0};
        } else if (mode == "relative") {
            RelativeMode r;
            r.groupS = yaml_string_list(root, "group_s");
            r.groupP = yaml_string_list(root, "group_p");
            r.nVary = root["n_vary"].as<std::uint64_t>();
            r.nConstant = root["n_constant"].as<std::uint64_t>();
            spec.mode = std::move(r);
        } else {
            throw ValidationError("intervention spec: unknown mode '" + mode + "'");
        }
        spec.validate();
        return spec;
    } catch (const YAML::Exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void save_spec(const InterventionSpec& spec, const std::filesystem::path& path) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "seed" << YAML::Value << spec.seed;
    out << YAML::Key << "vois" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : spec.vois) out << v.lemma;
    out << YAML::EndSeq;
    std::visit(overloaded{
                   [&](const AbsoluteMode& a) {
                       out << YAML::Key << "mode" << YAML::Value << "absolute";
                       out << YAML::Key << "n" << YAML::Value << a.n;
                   },
                   [&](const RelativeMode& r) {
                       out << YAML::Key << "mode" << YAML::Value << "relative";
                       out << YAML::Key << "group_s" << YAML::Value << YAML::Flow << r.groupS;
                       out << YAML::Key << "group_p" << YAML::Value << YAML::Flow << r.groupP;
                       out << YAML::Key << "n_vary" << YAML::Value << r.nVary;
                       out << YAML::Key << "n_constant" << YAML::Value << r.nConstant;
                   },
               },
               spec.mode);
    out << YAML::EndMap;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    f << out.c_str() << '\n';
}

std::size_t RemovedPool::pooled() const {
    std::size_t n = 0;
    for (const auto& [form, sentences] : perForm) {
        n += sentences.size();
    }
    return n;
}

ExciseResult excise(const corpus::Corpus& corpus, std::span<const Lexeme> vois) {
    std::unordered_map<std::string, std::string> voiForms;  // form -> form (stable key storage)
    for (const auto& v : vois) {
        voiForms.emplace(v.singular, v.singular);
        voiForms.emplace(v.plural, v.plural);
    }
    ExciseResult result;
    for (const auto& [form, key] : voiForms) {
        result.pool.perForm[form];
    }
    std::vector<std::vector<std::string>> kept;
    for (const auto& sentence : corpus) {
        const std::string* hit = nullptr;
        std::size_t occurrences = 0;
        for (const auto& tok : sentence.tokens) {
            if (auto it = voiForms.find(tok); it != voiForms.end()) {
                ++occurrences;
                hit = &it->second;
            }
        }
        if (occurrences == 0) {
            kept.push_back(sentence.tokens);
        } else if (occurrences == 1) {
            result.pool.perForm[*hit].push_back(sentence);
        } else {
            result.pool.discarded.push_back(sentence);
        }
    }
    result.clean = corpus::Corpus::from_tokens(std::move(kept));
    return result;
}

corpus::Corpus inject_counts(const corpus::Corpus& clean, const RemovedPool& pool,
                             const std::map<std::string, std::uint64_t>& counts, std::uint64_t seed) {
    std::string shortfall;
    for (const auto& [form, n] : counts) {
        auto it = pool.perForm.find(form);
        const std::size_t have = it == pool.perForm.end() ? 0 : it->second.size();
        if (have < n) {
            shortfall += (shortfall.empty() ? "" : ", ") + form + " (need " + std::to_string(n) + ", pool has " +
                         std::to_string(have) + ", short by " + std::to_string(n - have) + ")";
        }
    }
    if (!shortfall.empty()) {
        throw PoolUnderflowError("pool underflow: " + shortfall);
    }

    Rng rng(seed);
    std::vector<const corpus::Sentence*> injected;
    for (const auto& [form, n] : counts) {  // std::map: sorted form order
        if (n == 0) continue;
        const auto& candidates = pool.perForm.at(form);
        for (auto idx : rng.sample_indices(candidates.size(), static_cast<std::size_t>(n))) {
            injected.push_back(&candidates[idx]);
        }
    }
    rng.shuffle(injected);

    const std::size_t total = clean.size() + injected.size();
    const auto slots = rng.sample_indices(total, injected.size());
    std::vector<std::vector<std::string>> out;
    out.reserve(total);
    std::size_t nextClean = 0;
    std::size_t nextInjected = 0;
    for (std::size_t pos = 0; pos < total; ++pos) {
        if (nextInjected < slots.size() && slots[nextInjected] == pos) {
            out.push_back(injected[nextInjected++]->tokens);
        } else {
            out.push_back(clean[nextClean++].tokens);
        }
    }
    return corpus::Corpus::from_tokens(std::move(out));
}

corpus::Corpus inject_absolute(const corpus::Corpus& clean, const RemovedPool& pool, std::span<const Lexeme> vois,
                               std::uint64_t n, std::uint64_t seed) {
    InterventionSpec spec{std::vector<Lexeme>(vois.begin(), vois.end()), AbsoluteMode{n}, seed};
    spec.validate();
    return inject_counts(clean, pool, spec.target_counts(), seed);
}

corpus::Corpus inject_relative(const corpus::Corpus& clean, const RemovedPool& pool, std::span<const Lexeme> vois,
                               const RelativeMode& mode, std::uint64_t seed) {
    InterventionSpec spec{std::vector<Lexeme>(vois.begin(), vois.end()), mode, seed};
    spec.validate();
    return inject_counts(clean, pool, spec.target_counts(), seed);
}

corpus::Corpus apply_spec(const corpus::Corpus& clean, const RemovedPool& pool, const InterventionSpec& spec) {
    spec.validate();
    return inject_counts(clean, pool, spec.target_counts(), spec.seed);
}

std::vector<std::string> VerificationReport::failing_forms() const {
    std::vector<std::string> out;
    for (const auto& [form, check] : perForm) {
        if (check.requested != check.observed) out.push_back(form);
    }
    return out;
}

VerificationReport verify_spec(const corpus::Corpus& corpus, const InterventionSpec& spec) {
    VerificationReport report;
    std::unordered_map<std::string, std::uint64_t> observed;
    for (const auto& [form, n] : spec.target_counts()) {
        report.perForm[form].requested = n;
        observed.emplace(form, 0);
    }
    for (const auto& sentence : corpus) {
        for (const auto& tok : sentence.tokens) {
            if (auto it = observed.find(tok); it != observed.end()) {
                ++it->second;
            }
        }
    }
    report.pass = true;
    for (auto& [form, check] : report.perForm) {
        check.observed = observed.at(form);
        report.pass = report.pass && check.observed == check.requested;
    }
    return report;
}

void write_verification_csv(const VerificationReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "form,requested,observed\n";
    for (const auto& [form, check] : report.perForm) {
        out << form << ',' << check.requested << ',' << check.observed << '\n';
    }
}

void check_voi_eligibility(const corpus::FrequencyIndex& index, std::span<const Lexeme> vois, std::uint64_t minCount) {
    std::string failures;
    for (const auto& v : vois) {
        for (const auto* form : {&v.singular, &v.plural}) {
            const auto c = index.count_form(*form);
            if (!c || *c < minCount) {
                failures += (failures.empty() ? "" : ", ") + *form + "=" + (c ? std::to_string(*c) : "not-indexed");
            }
        }
    }
    if (!failures.empty()) {
        throw ValidationError("VOI forms below the eligibility floor of " + std::to_string(minCount) + ": " + failures);
    }
}

} // namespace svafreq::intervene
