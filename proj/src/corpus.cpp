#include "ciess/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ciess {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    size_t b = f.find_first_not_of(" \t");
    size_t e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

bool is_numeric(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

std::vector<RawPair> load_interactions(const std::string& path, PairFormat format) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open interaction file: " + path);
  const char delim = format == PairFormat::csv ? ',' : '\t';

  std::vector<RawPair> pairs;
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, delim);
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
      throw InputError(path + ": row " + std::to_string(row) +
                       ": expected at least user and item columns");
    }
    pairs.push_back({std::move(fields[0]), std::move(fields[1])});
  }
  // A header announces itself by being non-numeric while the data below it
  // is numeric. Non-numeric tokens throughout (e.g. "u1,i1") are data.
  if (pairs.size() >= 2 && !is_numeric(pairs[0].user) && !is_numeric(pairs[0].item) &&
      is_numeric(pairs[1].user) && is_numeric(pairs[1].item)) {
    pairs.erase(pairs.begin());
  }
  if (pairs.empty()) throw InputError(path + ": no interactions found");
  return pairs;
}

namespace {

constexpr int kTrain = 0;
constexpr int kVal = 1;
constexpr int kTest = 2;

struct SplitWork {
  std::vector<int32_t> pair_user;   // contiguous ids
  std::vector<int32_t> pair_item;
  std::vector<int8_t> assignment;   // kTrain / kVal / kTest per pair
  std::vector<std::array<int32_t, 3>> user_count;
  std::vector<std::array<int32_t, 3>> item_count;
  std::vector<std::vector<int32_t>> pairs_of_user;
  std::vector<std::vector<int32_t>> pairs_of_item;

  void move_pair(int32_t p, int to) {
    int from = assignment[p];
    assignment[p] = static_cast<int8_t>(to);
    user_count[pair_user[p]][from]--;
    user_count[pair_user[p]][to]++;
    item_count[pair_item[p]][from]--;
    item_count[pair_item[p]][to]++;
  }
};

/// Moves one of item v's pairs into `target` (train or val) without breaking
/// any other coverage guarantee. Returns false only when no legal move or
/// swap exists.
bool repair_item_coverage(SplitWork& w, int32_t v, int target) {
  const int sib = target == kTrain ? kVal : kTrain;

  // Plain move from test; the donor user must keep a test interaction.
  for (int32_t p : w.pairs_of_item[v]) {
    if (w.assignment[p] == kTest && w.user_count[w.pair_user[p]][kTest] >= 2) {
      w.move_pair(p, target);
      return true;
    }
  }
  // Plain move from the sibling split; both the user and the item must keep
  // a pair there.
  for (int32_t p : w.pairs_of_item[v]) {
    if (w.assignment[p] != sib) continue;
    int32_t u = w.pair_user[p];
    if (w.user_count[u][sib] >= 2 && w.item_count[v][sib] >= 2) {
      w.move_pair(p, target);
      return true;
    }
  }
  // Swap through a source split where the donor user has only one pair:
  // (u, v) source -> target, compensated by (u, w') target -> source with
  // w' keeping target coverage.
  for (int source : {kTest, sib}) {
    for (int32_t p : w.pairs_of_item[v]) {
      if (w.assignment[p] != source) continue;
      if (source == sib && w.item_count[v][sib] < 2) continue;
      int32_t u = w.pair_user[p];
      for (int32_t q : w.pairs_of_user[u]) {
        if (w.assignment[q] != target || w.pair_item[q] == v) continue;
        if (w.item_count[w.pair_item[q]][target] < 2) continue;
        w.move_pair(p, target);
        w.move_pair(q, source);
        return true;
      }
    }
  }
  return false;
}

}  // namespace

InteractionDataset InteractionDataset::split(const std::vector<RawPair>& pairs,
                                             const SplitOptions& options) {
  const auto& r = options.ratios;
  if (!(r.train > 0.0 && r.val > 0.0 && r.test > 0.0) ||
      std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw InputError("split ratios must be positive and sum to 1");
  }

  // Binarize: keep each (user, item) pair once, in first-appearance order.
  std::vector<RawPair> uniq;
  {
    std::unordered_set<std::string> seen;
    seen.reserve(pairs.size() * 2);
    for (const auto& p : pairs) {
      std::string key = p.user;
      key.push_back('\x1f');
      key += p.item;
      if (seen.insert(std::move(key)).second) uniq.push_back(p);
    }
  }

  // Iterated minimum-interaction filter: dropping one side can push the
  // other side below the threshold, so repeat until stable.
  std::vector<char> alive(uniq.size(), 1);
  if (options.min_interactions > 1) {
    bool changed = true;
    while (changed) {
      changed = false;
      std::unordered_map<std::string, int> uc, ic;
      for (size_t i = 0; i < uniq.size(); ++i) {
        if (!alive[i]) continue;
        uc[uniq[i].user]++;
        ic[uniq[i].item]++;
      }
      for (size_t i = 0; i < uniq.size(); ++i) {
        if (!alive[i]) continue;
        if (uc[uniq[i].user] < options.min_interactions ||
            ic[uniq[i].item] < options.min_interactions) {
          alive[i] = 0;
          changed = true;
        }
      }
    }
  }

  InteractionDataset ds;
  SplitWork w;
  {
    std::unordered_map<std::string, int32_t> user_ids, item_ids;
    for (size_t i = 0; i < uniq.size(); ++i) {
      if (!alive[i]) continue;
      auto [uit, unew] = user_ids.try_emplace(uniq[i].user,
                                              static_cast<int32_t>(ds.user_tokens_.size()));
      if (unew) ds.user_tokens_.push_back(uniq[i].user);
      auto [iit, inew] = item_ids.try_emplace(uniq[i].item,
                                              static_cast<int32_t>(ds.item_tokens_.size()));
      if (inew) ds.item_tokens_.push_back(uniq[i].item);
      w.pair_user.push_back(uit->second);
      w.pair_item.push_back(iit->second);
    }
  }
  if (w.pair_user.empty()) {
    throw InputError("no interactions survive the minimum-interaction filter");
  }
  ds.num_users_ = static_cast<int32_t>(ds.user_tokens_.size());
  ds.num_items_ = static_cast<int32_t>(ds.item_tokens_.size());

  const size_t n_pairs = w.pair_user.size();
  w.assignment.assign(n_pairs, kTrain);
  w.user_count.assign(ds.num_users_, {0, 0, 0});
  w.item_count.assign(ds.num_items_, {0, 0, 0});
  w.pairs_of_user.resize(ds.num_users_);
  w.pairs_of_item.resize(ds.num_items_);
  for (size_t p = 0; p < n_pairs; ++p) {
    w.pairs_of_user[w.pair_user[p]].push_back(static_cast<int32_t>(p));
    w.pairs_of_item[w.pair_item[p]].push_back(static_cast<int32_t>(p));
  }

  // Per-user stratified assignment: shuffle the user's pairs, then cut by
  // the ratios with floors going to train. Users with three or more pairs
  // get at least one pair per split.
  Rng rng(SeedTree(options.seed).child("corpus-split").rng());
  for (int32_t u = 0; u < ds.num_users_; ++u) {
    std::vector<int32_t> mine = w.pairs_of_user[u];
    rng.shuffle(mine);
    const int64_t n = static_cast<int64_t>(mine.size());
    int64_t n_test = static_cast<int64_t>(n * r.test);
    int64_t n_val = static_cast<int64_t>(n * r.val);
    int64_t n_train = n - n_val - n_test;
    if (n >= 3) {
      auto steal_from_largest = [&](int64_t& starving) {
        int64_t* largest = &n_train;
        if (n_val > *largest) largest = &n_val;
        if (n_test > *largest) largest = &n_test;
        (*largest)--;
        starving++;
      };
      while (n_train == 0) steal_from_largest(n_train);
      while (n_val == 0) steal_from_largest(n_val);
      while (n_test == 0) steal_from_largest(n_test);
    } else if (n == 2) {
      n_train = 1;
      n_val = 1;
      n_test = 0;
    } else {
      n_train = n;
      n_val = n_test = 0;
    }
    for (int64_t i = 0; i < n; ++i) {
      int to = i < n_train ? kTrain : (i < n_train + n_val ? kVal : kTest);
      w.assignment[mine[i]] = static_cast<int8_t>(to);
    }
  }
  for (size_t p = 0; p < n_pairs; ++p) {
    w.user_count[w.pair_user[p]][w.assignment[p]]++;
    w.item_count[w.pair_item[p]][w.assignment[p]]++;
  }

  // Stratifying per user leaves some items without train or validation
  // presence; repair by moving single pairs. Only meaningful under the
  // default filter, where every entity has enough pairs to cover both.
  if (options.min_interactions >= 4) {
    for (int32_t v = 0; v < ds.num_items_; ++v) {
      if (w.item_count[v][kTrain] == 0 && !repair_item_coverage(w, v, kTrain)) {
        throw StateError("cannot guarantee train coverage for item " +
                         ds.item_tokens_[v]);
      }
      if (w.item_count[v][kVal] == 0 && !repair_item_coverage(w, v, kVal)) {
        throw StateError("cannot guarantee validation coverage for item " +
                         ds.item_tokens_[v]);
      }
    }
  }

  for (size_t p = 0; p < n_pairs; ++p) {
    Interaction x{w.pair_user[p], w.pair_item[p]};
    (w.assignment[p] == kTrain ? ds.train_
                               : w.assignment[p] == kVal ? ds.val_ : ds.test_)
        .push_back(x);
  }
  auto by_user_item = [](const Interaction& a, const Interaction& b) {
    return a.user != b.user ? a.user < b.user : a.item < b.item;
  };
  std::sort(ds.train_.begin(), ds.train_.end(), by_user_item);
  std::sort(ds.val_.begin(), ds.val_.end(), by_user_item);
  std::sort(ds.test_.begin(), ds.test_.end(), by_user_item);

  ds.build_index();
  ds.check_invariants(options.min_interactions);
  return ds;
}

void InteractionDataset::build_index() {
  train_by_user_.assign(num_users_, {});
  val_by_user_.assign(num_users_, {});
  test_by_user_.assign(num_users_, {});
  train_by_item_.assign(num_items_, {});
  for (const auto& x : train_) {
    train_by_user_[x.user].push_back(x.item);
    train_by_item_[x.item].push_back(x.user);
  }
  for (const auto& x : val_) val_by_user_[x.user].push_back(x.item);
  for (const auto& x : test_) test_by_user_[x.user].push_back(x.item);
  for (auto& v : train_by_user_) std::sort(v.begin(), v.end());
  for (auto& v : val_by_user_) std::sort(v.begin(), v.end());
  for (auto& v : test_by_user_) std::sort(v.begin(), v.end());
  for (auto& v : train_by_item_) std::sort(v.begin(), v.end());

  popularity_.assign(num_entities(), 0);
  for (int32_t u = 0; u < num_users_; ++u) {
    popularity_[entity_of_user(u)] = static_cast<int64_t>(train_by_user_[u].size());
  }
  for (int32_t v = 0; v < num_items_; ++v) {
    popularity_[entity_of_item(v)] = static_cast<int64_t>(train_by_item_[v].size());
  }
}

void InteractionDataset::check_invariants(int min_interactions) const {
  for (int32_t u = 0; u < num_users_; ++u) {
    const auto& tr = train_by_user_[u];
    for (int32_t v : val_by_user_[u]) {
      if (std::binary_search(tr.begin(), tr.end(), v)) {
        throw StateError("train/val overlap for user " + user_tokens_[u]);
      }
    }
    for (int32_t v : test_by_user_[u]) {
      if (std::binary_search(tr.begin(), tr.end(), v) ||
          std::binary_search(val_by_user_[u].begin(), val_by_user_[u].end(), v)) {
        throw StateError("test overlap for user " + user_tokens_[u]);
      }
    }
  }
  if (min_interactions < 4) return;
  for (int32_t u = 0; u < num_users_; ++u) {
    if (train_by_user_[u].empty() || val_by_user_[u].empty()) {
      throw StateError("user " + user_tokens_[u] + " lacks train or val coverage");
    }
  }
  for (int32_t v = 0; v < num_items_; ++v) {
    if (train_by_item_[v].empty()) {
      throw StateError("item " + item_tokens_[v] + " lacks train coverage");
    }
  }
}

bool InteractionDataset::in_train(int32_t u, int32_t v) const {
  const auto& items = train_by_user_[u];
  return std::binary_search(items.begin(), items.end(), v);
}

InteractionDataset::BprTriple InteractionDataset::sample_bpr_triple(Rng& rng) const {
  if (train_.empty()) throw StateError("cannot sample BPR triples: train split is empty");
  for (int pair_attempt = 0; pair_attempt < 64; ++pair_attempt) {
    const Interaction& pos = train_[rng.bounded(train_.size())];
    if (static_cast<int64_t>(train_by_user_[pos.user].size()) >= num_items_) {
      continue;  // user covers the whole catalog, no negative exists
    }
    for (int tries = 0; tries < 4096; ++tries) {
      int32_t neg = static_cast<int32_t>(rng.bounded(static_cast<uint64_t>(num_items_)));
      if (!in_train(pos.user, neg)) return {pos.user, pos.item, neg};
    }
  }
  throw StateError("failed to sample a negative item after bounded retries");
}

void InteractionDataset::save_snapshot(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write dataset snapshot: " + path);
  out << "ciess-dataset-v1\n";
  out << "users " << num_users_ << " items " << num_items_ << "\n";
  for (const auto& t : user_tokens_) out << t << "\n";
  for (const auto& t : item_tokens_) out << t << "\n";
  auto dump = [&out](const char* name, const std::vector<Interaction>& xs) {
    out << name << " " << xs.size() << "\n";
    for (const auto& x : xs) out << x.user << " " << x.item << "\n";
  };
  dump("train", train_);
  dump("val", val_);
  dump("test", test_);
  if (!out) throw StateError("short write on dataset snapshot: " + path);
}

InteractionDataset InteractionDataset::load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open dataset snapshot: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ciess-dataset-v1") {
    throw InputError(path + ": not a ciess-dataset-v1 snapshot");
  }
  InteractionDataset ds;
  std::string word;
  int32_t nu = -1, ni = -1;
  if (!std::getline(in, line)) throw InputError(path + ": truncated snapshot");
  {
    std::istringstream hdr(line);
    std::string a, b;
    if (!(hdr >> a >> nu >> b >> ni) || a != "users" || b != "items" || nu < 0 || ni < 0) {
      throw InputError(path + ": bad snapshot header");
    }
  }
  ds.num_users_ = nu;
  ds.num_items_ = ni;
  ds.user_tokens_.reserve(nu);
  ds.item_tokens_.reserve(ni);
  for (int32_t i = 0; i < nu; ++i) {
    if (!std::getline(in, line)) throw InputError(path + ": truncated user tokens");
    ds.user_tokens_.push_back(line);
  }
  for (int32_t i = 0; i < ni; ++i) {
    if (!std::getline(in, line)) throw InputError(path + ": truncated item tokens");
    ds.item_tokens_.push_back(line);
  }
  auto read_block = [&](const char* name, std::vector<Interaction>& xs) {
    if (!(in >> word) || word != name) throw InputError(path + ": expected block " + name);
    int64_t n = 0;
    if (!(in >> n) || n < 0) throw InputError(path + ": bad count for block " + name);
    xs.resize(n);
    for (int64_t i = 0; i < n; ++i) {
      if (!(in >> xs[i].user >> xs[i].item) || xs[i].user < 0 || xs[i].user >= nu ||
          xs[i].item < 0 || xs[i].item >= ni) {
        throw InputError(path + ": bad interaction in block " + name);
      }
    }
  };
  read_block("train", ds.train_);
  read_block("val", ds.val_);
  read_block("test", ds.test_);
  ds.build_index();
  ds.check_invariants(0);
  return ds;
}

}  // namespace ciess
