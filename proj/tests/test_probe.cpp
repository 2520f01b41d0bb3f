#include "svafreq/error.hpp"
#include "svafreq/hash.hpp"
#include "svafreq/probe.hpp"
#include "svafreq/rng.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace svafreq;
using namespace svafreq::probe;
using svafreq::testing::TempDir;
using svafreq::testing::noun;
using svafreq::testing::verb;

namespace {

// Deterministic embedding: the first coordinate encodes whether the relevant
// token ends in "s", the rest is token-hash noise. Records every input.
class StubModel : public scorer::EmbeddingModel {
public:
    explicit StubModel(bool verbSide = false) : verbSide_(verbSide) {}

    std::size_t embedding_dim() const override { return 4; }

    std::vector<double> masked_state(const scorer::ScoreRequest& r) const override {
        seen.push_back(r.tokens);
        // The subject is the token before the first non-determiner; use the token
        // right after "the".
        const auto it = std::find(r.tokens.begin(), r.tokens.end(), "the");
        return encode(*(it + 1));
    }

    std::vector<double> contextual_embedding(std::span<const std::string> tokens, std::size_t index) const override {
        if (index >= tokens.size()) throw ValidationError("index out of range");
        seen.emplace_back(tokens.begin(), tokens.end());
        seenIndex.push_back(index);
        return encode(tokens[index]);
    }

    mutable std::vector<std::vector<std::string>> seen;
    mutable std::vector<std::size_t> seenIndex;

private:
    std::vector<double> encode(const std::string& tok) const {
        const bool endsS = !tok.empty() && tok.back() == 's';
        // Nouns: plural ends in s. Verbs: singular ends in s.
        const double sign = (endsS != verbSide_) ? 1.0 : -1.0;
        const auto h = sha256_hex(tok);
        std::vector<double> v{sign};
        for (int i = 0; i < 3; ++i) v.push_back(static_cast<double>(std::stoi(h.substr(2 * i, 2), nullptr, 16)) / 512.0);
        return v;
    }

    bool verbSide_;
};

std::vector<Lexeme> nouns(std::size_t n) {
    std::vector<Lexeme> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(noun("n" + std::to_string(i), "n" + std::to_string(i) + "s"));
    return out;
}

std::vector<Lexeme> verbs(std::size_t n, const std::string& prefix = "v") {
    std::vector<Lexeme> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto b = prefix + std::to_string(i);
        out.push_back(verb(b, b + "s", b));
    }
    return out;
}

std::vector<stimuli::SententialContext> contexts(std::size_t n) {
    std::vector<stimuli::SententialContext> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(stimuli::parse_context("the [SUBJECT] [VERB] item " + std::to_string(i) + " .",
                                             static_cast<std::uint32_t>(i)));
    }
    return out;
}

ProbeDataset gaussian(std::uint64_t seed, std::size_t n, std::size_t dim, const std::vector<double>& w, bool randomLabels) {
    Rng rng(seed);
    ProbeDataset d;
    while (d.size() < n) {
        std::vector<double> x(dim);
        for (auto& v : x) v = rng.normal();
        double dot = 0.3;
        for (std::size_t i = 0; i < dim; ++i) dot += w[i] * x[i];
        if (!randomLabels && std::abs(dot) < 0.25) continue;  // keep a margin
        const Number label = randomLabels ? (rng.bernoulli(0.5) ? Number::Plural : Number::Singular)
                                          : (dot > 0 ? Number::Plural : Number::Singular);
        d.add(ProbeItem{x, label, GroupKeys{std::nullopt, std::nullopt, 0}});
    }
    return d;
}

ProbeConfig quick(std::uint64_t seed = 1) {
    ProbeConfig c;
    c.hiddenDim = 16;
    c.epochs = 30;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Dataset, DimensionChecks) {
    ProbeDataset d;
    d.add(ProbeItem{{1.0, 2.0}, Number::Singular, {}});
    EXPECT_THROW(d.add(ProbeItem{{1.0}, Number::Plural, {}}), ValidationError);
    EXPECT_THROW(d.add(ProbeItem{{}, Number::Plural, {}}), ValidationError);
    EXPECT_EQ(d.dim(), 2u);
    EXPECT_EQ(d.count(Number::Singular), 1u);
}

TEST(Dataset, CsvRoundTripIsExact) {
    TempDir dir;
    auto d = gaussian(3, 30, 5, {1, 0, 0, 0, 0}, false);
    ProbeDataset keyed;
    std::uint32_t i = 0;
    for (auto item : d.items()) {
        item.keys = GroupKeys{i % 2 ? std::optional<std::uint32_t>(i) : std::nullopt,
                              i % 3 ? std::optional<std::uint32_t>(i * 7) : std::nullopt, i % 4};
        keyed.add(item);
        ++i;
    }
    save_dataset_csv(keyed, dir / "d.csv");
    EXPECT_EQ(load_dataset_csv(dir / "d.csv"), keyed);
}

TEST(Split, ToySevenByThree) {
    const StubModel m;
    const auto split = rotated_split(10, 4, 7, 3);
    const auto data = build_subject_probe_dataset(m, nouns(10), contexts(4), split);
    EXPECT_EQ(data.train.size(), 7u * 3u * 2u);
    EXPECT_EQ(data.eval.size(), 3u * 1u * 2u);
    std::set<std::uint32_t> evalSubjects, evalContexts;
    for (const auto& it : data.eval.items()) {
        evalSubjects.insert(*it.keys.subjectId);
        evalContexts.insert(it.keys.contextId);
    }
    EXPECT_EQ(evalSubjects, (std::set<std::uint32_t>{7, 8, 9}));
    EXPECT_EQ(evalContexts, (std::set<std::uint32_t>{3}));
    EXPECT_EQ(data.train.count(Number::Singular), data.train.count(Number::Plural));
    EXPECT_EQ(data.eval.count(Number::Singular), data.eval.count(Number::Plural));
    // Inputs carry the mask at the verb slot.
    for (const auto& toks : m.seen) EXPECT_EQ(toks[2], "[MASK]");
}

TEST(Split, FullSizeSplitIsDisjoint) {
    const StubModel m;
    for (std::size_t rot = 0; rot < 4; ++rot) {
        const auto split = rotated_split(200, 56, 150, 50, rot, 4);
        ASSERT_EQ(split.trainSubjects.size(), 150u);
        ASSERT_EQ(split.trainContexts.size(), 50u);
        const auto data = build_subject_probe_dataset(m, nouns(200), contexts(56), split);
        std::set<std::uint32_t> ts, tc, es, ec;
        for (const auto& it : data.train.items()) {
            ts.insert(*it.keys.subjectId);
            tc.insert(it.keys.contextId);
        }
        for (const auto& it : data.eval.items()) {
            es.insert(*it.keys.subjectId);
            ec.insert(it.keys.contextId);
        }
        EXPECT_EQ(ts.size(), 150u);
        EXPECT_EQ(tc.size(), 50u);
        EXPECT_EQ(es.size(), 50u);
        EXPECT_EQ(ec.size(), 6u);
        for (auto s : es) EXPECT_FALSE(ts.contains(s));
        for (auto c : ec) EXPECT_FALSE(tc.contains(c));
        EXPECT_EQ(data.eval.size(), 50u * 6u * 2u);
    }
}

TEST(Split, Errors) {
    const StubModel m;
    EXPECT_THROW(rotated_split(10, 4, 11, 3), ValidationError);
    EXPECT_THROW(build_subject_probe_dataset(m, nouns(10), contexts(4), rotated_split(10, 4, 10, 3)), ValidationError);
    EXPECT_THROW(build_subject_probe_dataset(m, nouns(10), contexts(4), SubjectSplit{{0, 12}, {0}}), ValidationError);
}

TEST(VerbProbe, ToyCounts) {
    const StubModel m(true);
    auto all = verbs(4);
    const auto vois = verbs(2, "w");
    all.insert(all.end(), vois.begin(), vois.end());
    const auto data = build_verb_probe_dataset(m, all, contexts(3), std::set<std::string>{"w0", "w1"});
    EXPECT_EQ(data.train.size(), 24u);
    EXPECT_EQ(data.eval.size(), 12u);
    for (std::size_t i = 0; i < m.seen.size(); ++i) {
        EXPECT_EQ(m.seen[i][1], "[MASK]");
        EXPECT_EQ(m.seenIndex[i], 2u);
    }
    std::set<std::uint32_t> trainIds, evalIds;
    for (const auto& it : data.train.items()) trainIds.insert(*it.keys.verbId);
    for (const auto& it : data.eval.items()) evalIds.insert(*it.keys.verbId);
    EXPECT_EQ(trainIds, (std::set<std::uint32_t>{0, 1, 2, 3}));
    EXPECT_EQ(evalIds, (std::set<std::uint32_t>{4, 5}));
}

TEST(VerbProbe, OverlapAndMissingVoiRejected) {
    const StubModel m(true);
    const auto vs = verbs(3);
    EXPECT_THROW(build_verb_probe_dataset(m, vs, std::vector<Lexeme>{vs[0]}, contexts(2)), ValidationError);
    EXPECT_THROW(build_verb_probe_dataset(m, vs, contexts(2), std::set<std::string>{"nope"}), ValidationError);
}

TEST(Train, SeparableDataIsLearnedExactly) {
    const std::vector<double> w{1.5, -2.0, 0.5, 0.0, 1.0, 0.0};
    const auto train = gaussian(1, 600, 6, w, false);
    const auto held = gaussian(2, 400, 6, w, false);
    const auto p = train_probe(train, quick());
    EXPECT_EQ(eval_probe(p, held).errorRate, 0.0);
}

TEST(Train, PermutedLabelsGiveChance) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto train = gaussian(10 + seed, 400, 6, std::vector<double>(6, 0.0), true);
        const auto held = gaussian(100 + seed, 3000, 6, std::vector<double>(6, 0.0), true);
        const double acc = 1.0 - eval_probe(train_probe(train, quick(seed)), held).errorRate;
        EXPECT_GE(acc, 0.45) << seed;
        EXPECT_LE(acc, 0.55) << seed;
    }
}

TEST(Train, DeterministicAndOrderInvariant) {
    const auto d = gaussian(4, 200, 4, {1, 1, 0, 0}, false);
    const auto held = gaussian(5, 200, 4, {1, 1, 0, 0}, false);
    const auto a = eval_probe(train_probe(d, quick(3)), held);
    const auto b = eval_probe(train_probe(d, quick(3)), held);
    EXPECT_EQ(a.predictions, b.predictions);
    auto items = d.items();
    std::reverse(items.begin(), items.end());
    ProbeDataset rev;
    for (auto& it : items) rev.add(it);
    EXPECT_EQ(eval_probe(train_probe(rev, quick(3)), held).predictions, a.predictions);
}

TEST(Train, DegenerateDataRejected) {
    EXPECT_THROW(train_probe(ProbeDataset{}, quick()), ValidationError);
    ProbeDataset one;
    one.add(ProbeItem{{1.0}, Number::Plural, {}});
    one.add(ProbeItem{{2.0}, Number::Plural, {}});
    EXPECT_THROW(train_probe(one, quick()), ValidationError);
    ProbeConfig bad = quick();
    bad.hiddenDim = 0;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Eval, HandScoredToyProbe) {
    // 1-d rule: x > 0 is plural. Train far from the boundary.
    ProbeDataset train;
    for (int i = 1; i <= 20; ++i) {
        train.add(ProbeItem{{static_cast<double>(i)}, Number::Plural, {}});
        train.add(ProbeItem{{-static_cast<double>(i)}, Number::Singular, {}});
    }
    const auto p = train_probe(train, quick());
    // Hand-labelled points: two of five labels disagree with the rule.
    ProbeDataset test;
    test.add(ProbeItem{{5.0}, Number::Plural, GroupKeys{0, 10, 0}});
    test.add(ProbeItem{{-5.0}, Number::Singular, GroupKeys{0, 10, 0}});
    test.add(ProbeItem{{8.0}, Number::Singular, GroupKeys{1, 11, 0}});
    test.add(ProbeItem{{-8.0}, Number::Plural, GroupKeys{1, 11, 0}});
    test.add(ProbeItem{{12.0}, Number::Plural, GroupKeys{1, 11, 0}});
    const auto e = eval_probe(p, test);
    EXPECT_EQ(e.errors, 2u);
    EXPECT_EQ(e.total, 5u);
    EXPECT_DOUBLE_EQ(e.errorRate, 0.4);
    EXPECT_EQ(e.predictions, (std::vector<Number>{Number::Plural, Number::Singular, Number::Plural, Number::Singular,
                                                  Number::Plural}));
    EXPECT_EQ(e.perSubject.at(0), (GroupError{0, 2}));
    EXPECT_EQ(e.perSubject.at(1), (GroupError{2, 3}));
    EXPECT_EQ(e.perVerb.at(11), (GroupError{2, 3}));
    EXPECT_THROW(eval_probe(p, ProbeDataset{}), ValidationError);

    ProbeDataset clean;
    clean.add(ProbeItem{{3.0}, Number::Plural, {}});
    EXPECT_EQ(eval_probe(p, clean).errorRate, 0.0);
}

TEST(CrossValidation, StubModelIsPerfect) {
    const StubModel m;
    const auto cv = cross_validate_subject_probe(m, nouns(20), contexts(8), 15, 6, 4, quick());
    ASSERT_EQ(cv.foldErrors.size(), 4u);
    EXPECT_EQ(cv.meanError, 0.0);
}

TEST(H3, Examples) {
    const auto zero = h3_report(0, 0, 0);
    EXPECT_EQ(zero.combinedProbeError, 0.0);
    EXPECT_EQ(zero.gap, 0.0);
    const auto r = h3_report(0.1, 0.2, 0.28);
    EXPECT_NEAR(r.combinedProbeError, 0.28, 1e-15);
    EXPECT_NEAR(r.gap, 0.0, 1e-15);
    // Probe error 18.7% against an observed 23.5%.
    const auto fig = h3_report(0.187, 0.0, 0.235);
    EXPECT_NEAR(fig.gap, 0.048, 1e-12);
    EXPECT_THROW(h3_report(1.2, 0, 0), ValidationError);
    EXPECT_THROW(h3_report(0, -0.1, 0), ValidationError);
}

TEST(H3, CombinationIdentity) {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const double s = rng.uniform(), v = rng.uniform(), o = rng.uniform();
        const auto r = h3_report(s, v, o);
        EXPECT_NEAR(r.combinedProbeError, s + v - s * v, 1e-12);
        EXPECT_GE(r.combinedProbeError, std::max(s, v) - 1e-15);
        EXPECT_EQ(r.gap, o - r.combinedProbeError);
    }
}

TEST(H3, JsonAndCsv) {
    TempDir dir;
    const auto r = h3_report(0.125, 0.25, 0.5);
    EXPECT_EQ(h3_from_json(to_json(r)), r);
    write_h3_json(r, dir / "h.json");
    EXPECT_EQ(h3_from_json(svafreq::testing::read_text(dir / "h.json")), r);
    const std::vector<H3Report> rows{r, h3_report(0, 0, 0)};
    const std::vector<std::string> labels{"n=1", "n=10"};
    write_h3_csv(rows, labels, dir / "h.csv");
    EXPECT_EQ(svafreq::testing::read_text(dir / "h.csv"),
              "run,subject_probe_error,verb_probe_error,combined_probe_error,observed_sva_error,gap\n"
              "n=1,0.125,0.25,0.34375,0.5,0.15625\n"
              "n=10,0,0,0,0,0\n");
}
