#include "ciess/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ciess {

namespace {

bool contains(std::span<const int32_t> sorted, int32_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

void require_relevant(std::span<const int32_t> relevant) {
  if (relevant.empty()) {
    throw InputError("metric undefined for an empty relevant set; exclude the user");
  }
}

}  // namespace

double recall_at_k(std::span<const int32_t> ranked, std::span<const int32_t> relevant,
                   int k) {
  require_relevant(relevant);
  if (k < 1) throw InputError("recall_at_k: k must be at least 1");
  const size_t top = std::min<size_t>(k, ranked.size());
  int64_t hits = 0;
  for (size_t i = 0; i < top; ++i) {
    if (contains(relevant, ranked[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const int32_t> ranked, std::span<const int32_t> relevant,
                 int k) {
  require_relevant(relevant);
  if (k < 1) throw InputError("ndcg_at_k: k must be at least 1");
  const size_t top = std::min<size_t>(k, ranked.size());
  double dcg = 0.0;
  for (size_t i = 0; i < top; ++i) {
    if (contains(relevant, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  const size_t ideal_hits = std::min<size_t>(k, relevant.size());
  double idcg = 0.0;
  for (size_t i = 0; i < ideal_hits; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

double ensemble_eval(std::span<const int32_t> ranked, std::span<const int32_t> relevant) {
  double sum = 0.0;
  for (int k : kEnsembleCutoffs) {
    sum += recall_at_k(ranked, relevant, k) + ndcg_at_k(ranked, relevant, k);
  }
  return sum / (2.0 * kEnsembleCutoffs.size());
}

double quality_ratio(double current, double baseline) {
  const double q = current / std::max(baseline, kBaselineFloor);
  return std::min(q, 1.0);
}

Evaluator::Evaluator(const InteractionDataset& data, int threads)
    : data_(&data), threads_(resolve_threads(threads)) {}

const std::vector<int32_t>& Evaluator::relevant_for(int32_t user, Split split) const {
  return split == Split::validation ? data_->val_items(user) : data_->test_items(user);
}

Evaluator::PassResult Evaluator::evaluate_users(const Recommender& rec, Split split) const {
  const int32_t nu = data_->num_users();
  const int max_k = kEnsembleCutoffs.back();
  PassResult out;
  out.user_eval.assign(nu, 0.0);
  std::vector<std::array<double, 4>> per_user(nu, {0.0, 0.0, 0.0, 0.0});
  std::vector<char> counted(nu, 0);

  parallel_for(nu, threads_, [&](int64_t begin, int64_t end) {
    for (int64_t u = begin; u < end; ++u) {
      const auto& relevant = relevant_for(static_cast<int32_t>(u), split);
      if (relevant.empty()) continue;
      const auto ranked = rec.rank_items(static_cast<int32_t>(u), max_k);
      out.user_eval[u] = ensemble_eval(ranked, relevant);
      per_user[u] = {recall_at_k(ranked, relevant, 5), recall_at_k(ranked, relevant, 20),
                     ndcg_at_k(ranked, relevant, 5), ndcg_at_k(ranked, relevant, 20)};
      counted[u] = 1;
    }
  });

  for (int32_t u = 0; u < nu; ++u) {
    if (!counted[u]) continue;
    out.summary.recall5 += per_user[u][0];
    out.summary.recall20 += per_user[u][1];
    out.summary.ndcg5 += per_user[u][2];
    out.summary.ndcg20 += per_user[u][3];
    out.summary.users_counted++;
  }
  if (out.summary.users_counted > 0) {
    const double n = static_cast<double>(out.summary.users_counted);
    out.summary.recall5 /= n;
    out.summary.recall20 /= n;
    out.summary.ndcg5 /= n;
    out.summary.ndcg20 /= n;
  }
  return out;
}

double Evaluator::eval_user(const Recommender& rec, int32_t user, Split split) const {
  const auto& relevant = relevant_for(user, split);
  if (relevant.empty()) return 0.0;
  return ensemble_eval(rec.rank_items(user, kEnsembleCutoffs.back()), relevant);
}

std::vector<double> Evaluator::item_evals(const std::vector<double>& user_evals) const {
  if (static_cast<int32_t>(user_evals.size()) != data_->num_users()) {
    throw InputError("item_evals: per-user scores have the wrong length");
  }
  const int32_t nv = data_->num_items();
  std::vector<double> out(nv, 0.0);
  for (int32_t v = 0; v < nv; ++v) {
    const auto& users = data_->train_users_of_item(v);
    if (users.empty()) continue;  // unreachable under the default corpus filter
    double sum = 0.0;
    for (int32_t u : users) sum += user_evals[u];
    out[v] = sum / static_cast<double>(users.size());
  }
  return out;
}

TopkSummary Evaluator::topk_summary(const Recommender& rec, Split split) const {
  return evaluate_users(rec, split).summary;
}

FullEvalBaseline make_full_baseline(const std::vector<double>& user_evals,
                                    const Evaluator& evaluator) {
  FullEvalBaseline b;
  b.user_eval = user_evals;
  b.item_eval = evaluator.item_evals(user_evals);
  for (auto& x : b.user_eval) x = std::max(x, kBaselineFloor);
  for (auto& x : b.item_eval) x = std::max(x, kBaselineFloor);
  return b;
}

void save_baseline_cache(const std::string& path, const FullEvalBaseline& baseline,
                         const std::string& backbone, int d_max) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write baseline cache: " + path);
  out << "ciess-baseline-v1\n";
  out << "backbone " << backbone << "\n";
  out << "d_max " << d_max << "\n";
  out << "users " << baseline.user_eval.size() << " items " << baseline.item_eval.size()
      << "\n";
  char buf[64];
  for (double x : baseline.user_eval) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", x);
    out << buf;
  }
  for (double x : baseline.item_eval) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", x);
    out << buf;
  }
  if (!out) throw StateError("short write on baseline cache: " + path);
}

BaselineCache load_baseline_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open baseline cache: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ciess-baseline-v1") {
    throw InputError(path + ": not a ciess baseline cache");
  }
  BaselineCache cache;
  std::string word;
  if (!(in >> word >> cache.backbone) || word != "backbone") {
    throw InputError(path + ": bad backbone line");
  }
  if (!(in >> word >> cache.d_max) || word != "d_max") {
    throw InputError(path + ": bad d_max line");
  }
  int64_t nu = 0, nv = 0;
  if (!(in >> word >> nu) || word != "users" || !(in >> word >> nv) || word != "items") {
    throw InputError(path + ": bad count line");
  }
  cache.baseline.user_eval.resize(nu);
  cache.baseline.item_eval.resize(nv);
  for (auto& x : cache.baseline.user_eval) {
    if (!(in >> x)) throw InputError(path + ": truncated user scores");
  }
  for (auto& x : cache.baseline.item_eval) {
    if (!(in >> x)) throw InputError(path + ": truncated item scores");
  }
  return cache;
}

QualitySnapshot quality_snapshot(const std::vector<double>& user_evals,
                                 const std::vector<double>& item_evals,
                                 const FullEvalBaseline& baseline) {
  if (user_evals.size() != baseline.user_eval.size() ||
      item_evals.size() != baseline.item_eval.size()) {
    throw InputError("quality_snapshot: evaluation sizes do not match the baseline");
  }
  QualitySnapshot snap;
  snap.q.reserve(user_evals.size() + item_evals.size());
  double su = 0.0, si = 0.0;
  for (size_t u = 0; u < user_evals.size(); ++u) {
    const double q = quality_ratio(user_evals[u], baseline.user_eval[u]);
    if (!(q >= 0.0 && q <= 1.0)) {
      throw std::logic_error("quality ratio outside [0, 1] for user " + std::to_string(u));
    }
    snap.q.push_back(q);
    su += q;
  }
  for (size_t v = 0; v < item_evals.size(); ++v) {
    const double q = quality_ratio(item_evals[v], baseline.item_eval[v]);
    if (!(q >= 0.0 && q <= 1.0)) {
      throw std::logic_error("quality ratio outside [0, 1] for item " + std::to_string(v));
    }
    snap.q.push_back(q);
    si += q;
  }
  snap.mean_users = user_evals.empty() ? 0.0 : su / static_cast<double>(user_evals.size());
  snap.mean_items = item_evals.empty() ? 0.0 : si / static_cast<double>(item_evals.size());
  const size_t total = user_evals.size() + item_evals.size();
  snap.mean_all = total == 0 ? 0.0 : (su + si) / static_cast<double>(total);
  return snap;
}

}  // namespace ciess
