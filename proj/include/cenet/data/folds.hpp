#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cenet/data/rng.hpp"
#include "cenet/tensor.hpp"

namespace cenet::data {

/// Shuffled partition of the cases into folds whose sizes differ by at most one.
struct FoldSplit {
    int fold_count = 0;
    std::vector<std::string> order;            // shuffled case ids; case order[i] is in fold i % fold_count
    std::map<std::string, int> assignments;    // case id -> fold
    std::optional<int64_t> train_count;        // inverted protocol: train on this many, validate on the rest

    std::vector<std::string> fold_cases(int f) const
    {
        std::vector<std::string> out;
        for (size_t i = 0; i < order.size(); ++i)
            if (int(i % size_t(fold_count)) == f) out.push_back(order[i]);
        return out;
    }

    /// Training cases of run `f`: every other fold, or with `train_count` set, that many cases
    /// starting at the first case of fold f in fold-major order.
    std::vector<std::string> training_cases(int f) const
    {
        check_fold(f);
        if (train_count) {
            const auto ring = fold_major();
            size_t start = 0;
            for (int g = 0; g < f; ++g) start += fold_cases(g).size();
            std::vector<std::string> out;
            for (int64_t i = 0; i < *train_count; ++i) out.push_back(ring[(start + size_t(i)) % ring.size()]);
            return out;
        }
        std::vector<std::string> out;
        for (const auto& id : fold_major())
            if (assignments.at(id) != f) out.push_back(id);
        return out;
    }

    std::vector<std::string> validation_cases(int f) const
    {
        check_fold(f);
        if (train_count) {
            const auto train = training_cases(f);
            std::vector<std::string> out;
            for (const auto& id : fold_major())
                if (std::find(train.begin(), train.end(), id) == train.end()) out.push_back(id);
            return out;
        }
        return fold_cases(f);
    }

private:
    void check_fold(int f) const
    {
        if (f < 0 || f >= fold_count) throw ValidationError("fold index " + std::to_string(f) + " out of range");
    }

    std::vector<std::string> fold_major() const
    {
        std::vector<std::string> out;
        for (int g = 0; g < fold_count; ++g)
            for (auto& id : fold_cases(g)) out.push_back(id);
        return out;
    }
};

inline FoldSplit make_folds(const std::vector<std::string>& case_ids, int fold_count, uint64_t seed,
                            std::optional<int64_t> train_count = std::nullopt)
{
    if (fold_count < 1) throw ValidationError("make_folds: fold_count must be >= 1");
    if (size_t(fold_count) > case_ids.size()) {
        throw ValidationError("make_folds: " + std::to_string(fold_count) + " folds requested for " +
                              std::to_string(case_ids.size()) + " cases");
    }
    if (train_count && (*train_count < 1 || size_t(*train_count) >= case_ids.size())) {
        throw ValidationError("make_folds: train_count must lie in [1, #cases)");
    }
    FoldSplit s;
    s.fold_count = fold_count;
    s.train_count = train_count;
    s.order = case_ids;
    std::sort(s.order.begin(), s.order.end());  // independent of input order
    Rng rng(seed);
    for (size_t i = s.order.size(); i > 1; --i) std::swap(s.order[i - 1], s.order[size_t(uniform_int(rng, 0, int64_t(i) - 1))]);
    for (size_t i = 0; i < s.order.size(); ++i) {
        if (!s.assignments.emplace(s.order[i], int(i % size_t(fold_count))).second) {
            throw ValidationError("make_folds: duplicate case id '" + s.order[i] + "'");
        }
    }
    return s;
}

}  // namespace cenet::data
