#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "custpred/encode.hpp"
#include "custpred/sim.hpp"

using namespace custpred;

namespace {

StateActionPair pair_of(std::string_view raw, SessionState state = {Primary::web, std::string(kRoot)}) {
  Event e = parse_event(0, raw);
  return StateActionPair{std::move(state), e.channel, e.kind};
}

std::vector<std::vector<StateActionPair>> simulated_pairs(std::size_t n, std::uint64_t seed) {
  SimConfig c;
  c.seed = seed;
  auto d = simulate_dataset(n, c);
  std::vector<std::vector<StateActionPair>> out;
  for (const auto& t : d.trajectories) out.push_back(trajectory_to_pairs(t.events));
  return out;
}

}  // namespace

TEST(Vocab, MinCountAndOov) {
  auto v = Vocab::from_counts({{"a", 5}, {"b", 1}}, 2);
  EXPECT_EQ(v.size(), 2u);
  EXPECT_EQ(v.index("a"), 1);
  EXPECT_EQ(v.index("b"), Vocab::kOov);
  EXPECT_EQ(v.token(0), Vocab::kOovToken);
  EXPECT_THROW(Vocab::from_counts({{"a", 1}}, 2), EmptyVocab);
  std::vector<std::vector<StateActionPair>> none;
  EXPECT_THROW(build_vocab(none, 1), EmptyVocab);
}

TEST(Vocab, DeterministicAndRoundTrips) {
  auto pairs = simulated_pairs(20, 3);
  auto a = build_vocab(pairs, 2);
  auto b = build_vocab(pairs, 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  std::stringstream ss;
  a.write(ss);
  auto back = Vocab::read(ss);
  EXPECT_EQ(back, a);
  EXPECT_EQ(back.hash(), a.hash());
  for (std::size_t i = 1; i < a.size(); ++i) {
    ASSERT_TRUE(a.decode(static_cast<int>(i)).has_value()) << a.token(static_cast<int>(i));
    EXPECT_EQ(format_event(*a.decode(static_cast<int>(i))), a.token(static_cast<int>(i)));
  }
}

TEST(Vocab, EveryFrequentActionClassAppears) {
  auto pairs = simulated_pairs(100, 5);
  auto v = build_vocab(pairs, 10);
  std::map<ActionClass, std::uint64_t> class_counts;
  for (const auto& t : pairs) {
    for (const auto& p : t) ++class_counts[action_class(p.action)];
  }
  std::set<ActionClass> in_vocab;
  for (std::size_t i = 1; i < v.size(); ++i) in_vocab.insert(action_class(v.decode(static_cast<int>(i))->kind));
  for (const auto& [cls, n] : class_counts) {
    if (n >= 10) EXPECT_TRUE(in_vocab.count(cls)) << to_string(cls);
  }
}

TEST(PairToken, CanonicalSpelling) {
  auto p = pair_of("web: get information on credit-card-transaction-history", {Primary::web, "credit-card"});
  EXPECT_EQ(pair_token(p), "web: get information on credit-card-trans-history");
  auto login = pair_of("mobile: login", SessionState{});
  EXPECT_EQ(pair_token(login), "mobile: login");
}

TEST(OneHot, Examples) {
  auto v = Vocab::from_counts({{"teller: login", 1}, {"web: login", 1}, {"web: log-off", 1}, {"atm: login", 1}}, 1);
  ASSERT_EQ(v.size(), 5u);
  // sorted: atm: login(1), teller: login(2), web: log-off(3), web: login(4)
  auto x = one_hot(pair_of("web: log-off"), v);
  Eigen::VectorXd expected(5);
  expected << 0, 0, 0, 1, 0;
  EXPECT_EQ(x, expected);
  auto oov = one_hot(pair_of("web: enter menu offers"), v);
  EXPECT_EQ(oov(0), 1.0);
  EXPECT_EQ(oov.sum(), 1.0);
}

TEST(BagOfWords, Examples) {
  auto v = Vocab::from_counts({{"web: login", 1}, {"web: log-off", 1}}, 1);
  EXPECT_EQ(bag_of_words({}, v).sum(), 0.0);
  std::vector<StateActionPair> prefix = {pair_of("web: login", SessionState{}), pair_of("web: login", SessionState{}),
                                         pair_of("web: log-off")};
  auto b = bag_of_words(prefix, v);
  EXPECT_EQ(b(v.index("web: login")), 2.0);
  EXPECT_EQ(b(v.index("web: log-off")), 1.0);
  EXPECT_EQ(b.lpNorm<1>(), 3.0);
}

TEST(EncodeWindow, SingleStep) {
  auto pairs = simulated_pairs(10, 1);
  auto v = build_vocab(pairs, 1);
  std::span<const StateActionPair> w(pairs[0].data(), 1);
  auto e = encode_window(w, v, nullptr, EncodingMode::bow);
  ASSERT_EQ(e.steps(), 1u);
  EXPECT_EQ(e.bow(0), e.one_hot(0));
  EXPECT_EQ(e.dense_step(0).size(), 2 * static_cast<Eigen::Index>(v.size()));
  EXPECT_THROW(encode_window(w, v, nullptr, EncodingMode::graph), DataError);
}

TEST(EncodeWindow, GraphFirstStepMarksOnlyFirstState) {
  auto pairs = simulated_pairs(30, 2);
  auto v = build_vocab(pairs, 1);
  auto g = build_state_graph(pairs, 10);
  std::span<const StateActionPair> w(pairs[0].data() + 7, 20);
  auto e = encode_window(w, v, &g, EncodingMode::graph);
  auto a0 = e.annotation(0);
  auto first = g.find(w[0].state);
  ASSERT_TRUE(first);
  EXPECT_EQ(a0(*first, kEgoNode), 1.0);
  EXPECT_EQ(a0(*first, kPastNodes), 1.0);
  EXPECT_EQ(a0.col(kEgoNode).sum() + a0.col(kPastNodes).sum(), 2.0);
  for (std::size_t t = 0; t < w.size(); ++t) {
    EXPECT_EQ(e.annotation(t), annotate(g, w.first(t + 1)));
  }
}

TEST(EncodeWindow, FullHistoryScopeCarriesIndicators) {
  auto pairs = simulated_pairs(30, 2);
  auto v = build_vocab(pairs, 1);
  auto g = build_state_graph(pairs, 10);
  std::span<const StateActionPair> all(pairs[1]);
  auto w = all.subspan(40, 20);
  auto e = encode_window(w, v, &g, EncodingMode::graph, all.first(40));
  for (std::size_t t = 0; t < w.size(); ++t) {
    EXPECT_EQ(e.annotation(t), annotate(g, all.first(40 + t + 1)));
  }
}

TEST(EncodeWindow, TelescopingAndMonotoneCounts) {
  auto pairs = simulated_pairs(40, 4);
  auto v = build_vocab(pairs, 1);
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& t = pairs[rng.below(pairs.size())];
    std::span<const StateActionPair> w(t.data() + rng.below(t.size() - 20), 20);
    auto e = encode_window(w, v, nullptr, EncodingMode::bow);
    for (std::size_t s = 0; s < e.steps(); ++s) {
      auto step = e.dense_step(s);
      ASSERT_EQ(step.size(), e.step_dim());
      ASSERT_EQ((step.head(e.vocab_size).array() != 0).count(), 1);
      if (s > 0) {
        Eigen::VectorXd diff = e.bow(s) - e.bow(s - 1);
        ASSERT_EQ(diff, e.one_hot(s));
        ASSERT_TRUE((diff.array() >= 0).all());
      }
    }
  }
}

TEST(EncodeWindow, UnseenTokensMapToOovWithoutChangingVocab) {
  auto train = simulated_pairs(5, 1);
  auto v = build_vocab(train, 1);
  auto before = v.hash();
  Event e0 = parse_event(0, "web: get information on weather", ParseMode::lenient);
  std::vector<StateActionPair> odd = {StateActionPair{SessionState{Primary::web, "root"}, e0.channel, e0.kind}};
  auto e = encode_window(odd, v, nullptr, EncodingMode::bow);
  EXPECT_EQ(e.tokens[0], Vocab::kOov);
  EXPECT_EQ(v.hash(), before);
}
