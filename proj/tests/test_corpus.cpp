#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "ciess/corpus.hpp"
#include "test_support.hpp"

using namespace ciess;
using testsupport::TempDir;

namespace {

std::string write_file(const TempDir& dir, const std::string& name,
                       const std::string& content) {
  const std::string path = dir.str(name);
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

SplitOptions loose_split(uint64_t seed = 0) {
  SplitOptions o;
  o.seed = seed;
  o.min_interactions = 1;
  return o;
}

std::vector<RawPair> pairs_of(std::initializer_list<std::pair<const char*, const char*>> xs) {
  std::vector<RawPair> out;
  for (const auto& [u, v] : xs) out.push_back({u, v});
  return out;
}

}  // namespace

TEST_CASE("loader drops a header over numeric data") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", "user,item\n1,10\n2,20\n");
  const auto pairs = load_interactions(path, PairFormat::csv);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].user == "1");
  CHECK(pairs[0].item == "10");
  CHECK(pairs[1].user == "2");
  CHECK(pairs[1].item == "20");
}

TEST_CASE("loader keeps a first row that looks like the rest of the data") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", "u1,i1\nu2,i2\n");
  const auto pairs = load_interactions(path, PairFormat::csv);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].user == "u1");
  CHECK(pairs[0].item == "i1");
}

TEST_CASE("loader keeps a single non-numeric row") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", "u1,i1\n");
  const auto pairs = load_interactions(path, PairFormat::csv);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].user == "u1");
}

TEST_CASE("loader trims whitespace, skips blank lines, handles crlf") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", " 1 , 2 \r\n\n3,4\r\n");
  const auto pairs = load_interactions(path, PairFormat::csv);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].user == "1");
  CHECK(pairs[0].item == "2");
  CHECK(pairs[1].user == "3");
}

TEST_CASE("loader ignores extra columns in tsv") {
  TempDir dir;
  const auto path = write_file(dir, "a.tsv", "1\t2\t5.0\t97\n3\t4\t1.0\t12\n");
  const auto pairs = load_interactions(path, PairFormat::tsv);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].user == "1");
  CHECK(pairs[0].item == "2");
}

TEST_CASE("loader reports the malformed row by number") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", "1,2\nbad\n");
  CHECK_THROWS_WITH_AS(load_interactions(path, PairFormat::csv),
                       doctest::Contains("row 2"), InputError);
}

TEST_CASE("loader rejects empty input and missing files") {
  TempDir dir;
  const auto path = write_file(dir, "a.csv", "\n\n");
  CHECK_THROWS_AS(load_interactions(path, PairFormat::csv), InputError);
  CHECK_THROWS_AS(load_interactions(dir.str("missing.csv"), PairFormat::csv),
                  InputError);
}

TEST_CASE("split deduplicates and maps tokens by first appearance") {
  const auto pairs =
      pairs_of({{"u1", "i1"}, {"u1", "i1"}, {"u1", "i2"}, {"u2", "i1"}});
  const auto data = InteractionDataset::split(pairs, loose_split());
  CHECK(data.num_users() == 2);
  CHECK(data.num_items() == 2);
  CHECK(data.user_tokens() == std::vector<std::string>{"u1", "u2"});
  CHECK(data.item_tokens() == std::vector<std::string>{"i1", "i2"});
  CHECK(data.train().size() + data.val().size() + data.test().size() == 3);
  // u1 kept two distinct pairs -> one train, one val; u2 has one -> train
  CHECK(data.train_items(0).size() == 1);
  CHECK(data.val_items(0).size() == 1);
  CHECK(data.test_items(0).empty());
  CHECK(data.train_items(1).size() == 1);
}

TEST_CASE("per-user allocation follows the ratio floors") {
  // One user with eight distinct items: 2-1-1 quarters scale to 4/2/2.
  std::vector<RawPair> pairs;
  for (int k = 0; k < 8; ++k) pairs.push_back({"u", "i" + std::to_string(k)});
  const auto data = InteractionDataset::split(pairs, loose_split(3));
  CHECK(data.train_items(0).size() == 4);
  CHECK(data.val_items(0).size() == 2);
  CHECK(data.test_items(0).size() == 2);
}

TEST_CASE("small interaction counts keep every split usable") {
  std::vector<RawPair> pairs;
  for (int k = 0; k < 3; ++k) pairs.push_back({"u3", "a" + std::to_string(k)});
  for (int k = 0; k < 2; ++k) pairs.push_back({"u2", "b" + std::to_string(k)});
  pairs.push_back({"u1", "c0"});
  const auto data = InteractionDataset::split(pairs, loose_split(5));
  const auto idx = [&](const std::string& token) {
    const auto& t = data.user_tokens();
    return static_cast<int32_t>(std::find(t.begin(), t.end(), token) - t.begin());
  };
  const int32_t u3 = idx("u3"), u2 = idx("u2"), u1 = idx("u1");
  CHECK(data.train_items(u3).size() == 1);
  CHECK(data.val_items(u3).size() == 1);
  CHECK(data.test_items(u3).size() == 1);
  CHECK(data.train_items(u2).size() == 1);
  CHECK(data.val_items(u2).size() == 1);
  CHECK(data.test_items(u2).empty());
  CHECK(data.train_items(u1).size() == 1);
  CHECK(data.val_items(u1).empty());
  CHECK(data.test_items(u1).empty());
}

TEST_CASE("interaction filter iterates to a fixpoint") {
  // Dropping u2 (one pair) starves i2, whose removal must not cascade
  // past the remaining pairs of u0 and u1.
  auto pairs = pairs_of({{"u0", "i0"},
                         {"u0", "i1"},
                         {"u0", "i2"},
                         {"u1", "i0"},
                         {"u1", "i1"},
                         {"u2", "i2"}});
  SplitOptions o;
  o.seed = 1;
  o.min_interactions = 2;
  const auto data = InteractionDataset::split(pairs, o);
  CHECK(data.num_users() == 2);
  CHECK(data.num_items() == 2);
  CHECK(data.user_tokens() == std::vector<std::string>{"u0", "u1"});
  CHECK(data.item_tokens() == std::vector<std::string>{"i0", "i1"});
}

TEST_CASE("split rejects unusable inputs") {
  CHECK_THROWS_AS(InteractionDataset::split({}, loose_split()), InputError);
  // everything filtered away
  SplitOptions strict;
  strict.min_interactions = 5;
  CHECK_THROWS_AS(
      InteractionDataset::split(pairs_of({{"u", "i"}}), strict), InputError);
  // bad ratios
  SplitOptions bad = loose_split();
  bad.ratios = {0.6, 0.3, 0.2};
  CHECK_THROWS_AS(InteractionDataset::split(pairs_of({{"u", "i"}}), bad), InputError);
  SplitOptions negative = loose_split();
  negative.ratios = {1.2, -0.1, -0.1};
  CHECK_THROWS_AS(InteractionDataset::split(pairs_of({{"u", "i"}}), negative),
                  InputError);
}

TEST_CASE("default filter guarantees coverage everywhere") {
  const auto data = testsupport::toy_dataset(30, 20, 6, 7);
  for (int32_t u = 0; u < data.num_users(); ++u) {
    CHECK(!data.train_items(u).empty());
    CHECK(!data.val_items(u).empty());
    CHECK(!data.test_items(u).empty());  // every kept user has >= 4 pairs here
  }
  std::vector<int> val_count(data.num_items(), 0);
  for (const auto& x : data.val()) val_count[x.item]++;
  for (int32_t v = 0; v < data.num_items(); ++v) {
    CHECK(!data.train_users_of_item(v).empty());
    CHECK(val_count[v] >= 1);
  }
  for (int64_t n = 0; n < data.num_entities(); ++n) CHECK(data.popularity()[n] >= 1);
}

TEST_CASE("splits never overlap and popularity counts the train split") {
  const auto data = testsupport::toy_dataset(25, 18, 6, 11);
  std::set<std::pair<int32_t, int32_t>> seen;
  auto absorb = [&](const std::vector<Interaction>& xs) {
    for (const auto& x : xs) {
      const bool fresh = seen.insert({x.user, x.item}).second;
      CHECK(fresh);
    }
  };
  absorb(data.train());
  absorb(data.val());
  absorb(data.test());

  std::vector<int64_t> pop(data.num_entities(), 0);
  for (const auto& x : data.train()) {
    pop[data.entity_of_user(x.user)]++;
    pop[data.entity_of_item(x.item)]++;
  }
  CHECK(pop == data.popularity());

  for (const auto& x : data.train()) CHECK(data.in_train(x.user, x.item));
  for (const auto& x : data.val()) CHECK(!data.in_train(x.user, x.item));
}

TEST_CASE("split vectors arrive sorted by user then item") {
  const auto data = testsupport::toy_dataset(15, 12, 5, 2);
  auto sorted = [](const std::vector<Interaction>& xs) {
    return std::is_sorted(xs.begin(), xs.end(), [](auto a, auto b) {
      return a.user != b.user ? a.user < b.user : a.item < b.item;
    });
  };
  CHECK(sorted(data.train()));
  CHECK(sorted(data.val()));
  CHECK(sorted(data.test()));
}

TEST_CASE("same seed reproduces the split, different seed moves it") {
  const auto pairs = testsupport::window_pairs(20, 15, 6);
  SplitOptions o;
  o.seed = 9;
  const auto a = InteractionDataset::split(pairs, o);
  const auto b = InteractionDataset::split(pairs, o);
  auto key = [](const InteractionDataset& d) {
    std::vector<std::pair<int32_t, int32_t>> k;
    for (const auto& x : d.val()) k.push_back({x.user, x.item});
    return k;
  };
  CHECK(key(a) == key(b));
  o.seed = 10;
  const auto c = InteractionDataset::split(pairs, o);
  CHECK(key(a) != key(c));
}

TEST_CASE("snapshot round trip preserves the dataset") {
  TempDir dir;
  const auto data = testsupport::toy_dataset(12, 10, 5, 4);
  const auto path = dir.str("d.snapshot");
  data.save_snapshot(path);
  const auto loaded = InteractionDataset::load_snapshot(path);
  CHECK(loaded.num_users() == data.num_users());
  CHECK(loaded.num_items() == data.num_items());
  CHECK(loaded.user_tokens() == data.user_tokens());
  CHECK(loaded.item_tokens() == data.item_tokens());
  auto same = [](const std::vector<Interaction>& a, const std::vector<Interaction>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i].user != b[i].user || a[i].item != b[i].item) return false;
    }
    return true;
  };
  CHECK(same(loaded.train(), data.train()));
  CHECK(same(loaded.val(), data.val()));
  CHECK(same(loaded.test(), data.test()));
  CHECK(loaded.popularity() == data.popularity());
}

TEST_CASE("load_snapshot rejects junk") {
  TempDir dir;
  // an absent snapshot is missing run state, not malformed input
  CHECK_THROWS_AS(InteractionDataset::load_snapshot(dir.str("nope")), StateError);
  const auto path = write_file(dir, "bad", "not a snapshot\n");
  CHECK_THROWS_AS(InteractionDataset::load_snapshot(path), InputError);
}

TEST_CASE("ranking triples pair a train interaction with a clean negative") {
  const auto data = testsupport::toy_dataset(20, 12, 5, 6);
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto t = data.sample_bpr_triple(rng);
    CHECK(data.in_train(t.user, t.pos));
    CHECK(!data.in_train(t.user, t.neg));
    CHECK(t.neg >= 0);
    CHECK(t.neg < data.num_items());
  }
  Rng r1(8), r2(8);
  for (int i = 0; i < 50; ++i) {
    const auto a = data.sample_bpr_triple(r1);
    const auto b = data.sample_bpr_triple(r2);
    CHECK(a.user == b.user);
    CHECK(a.pos == b.pos);
    CHECK(a.neg == b.neg);
  }
}
