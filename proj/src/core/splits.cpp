#include "splits.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace nforge {

namespace {

void shuffle_ids(std::vector<std::string>& ids, uint64_t seed) {
    // sort first so the plan depends only on the id set and seed, not input order
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw std::invalid_argument("split: duplicate volume ids");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
}

}  // namespace

std::vector<std::string> SplitPlan::ids_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
        if (f == fold) out.push_back(id);
    return out;  // map iteration: sorted by id
}

SplitPlan holdout_split(std::vector<std::string> ids, uint64_t seed) {
    if (ids.empty()) throw std::invalid_argument("holdout_split: no ids");
    shuffle_ids(ids, seed);
    size_t n_train =
        static_cast<size_t>(std::llround(0.8 * static_cast<double>(ids.size())));
    SplitPlan plan;
    plan.kind = SplitKind::holdout;
    plan.seed = seed;
    for (size_t i = 0; i < ids.size(); ++i) plan.assignments[ids[i]] = i < n_train ? 0 : 1;
    return plan;
}

SplitPlan kfold_split(std::vector<std::string> ids, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    if (ids.size() < static_cast<size_t>(k))
        throw std::invalid_argument("kfold_split: fewer ids than folds");
    shuffle_ids(ids, seed);
    SplitPlan plan;
    plan.kind = SplitKind::kfold;
    plan.seed = seed;
    plan.k = k;
    for (size_t i = 0; i < ids.size(); ++i)
        plan.assignments[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
    return plan;
}

}  // namespace nforge
