#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nforge {

enum class SplitKind { holdout, kfold };

struct SplitPlan {
    SplitKind kind = SplitKind::holdout;
    // holdout: 0 = train, 1 = test; kfold: fold index 0..k-1
    std::map<std::string, int> assignments;
    uint64_t seed = 0;
    int k = 0;  // kfold only

    std::vector<std::string> ids_in(int fold) const;
};

// Seeded shuffle then partition with train fraction round(0.8 n).
SplitPlan holdout_split(std::vector<std::string> ids, uint64_t seed);

// Seeded shuffle into k folds with sizes differing by at most 1.
SplitPlan kfold_split(std::vector<std::string> ids, int k, uint64_t seed);

}  // namespace nforge
