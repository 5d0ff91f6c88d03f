#pragma once

// Shared helpers for the unit tests and the acceptance suite.

#include <cstdint>
#include <vector>

#include "facetouch/battery.hpp"

namespace ftest {

using namespace facetouch;

// O(n^2) pairwise concordance with half credit for ties; the textbook
// probabilistic definition of AUC used as the oracle for the sweep-based
// implementation.
inline double auc_concordance(const std::vector<int>& y, const std::vector<double>& s) {
    double num = 0.0;
    int64_t pairs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j])
                num += 1.0;
            else if (s[i] == s[j])
                num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

}  // namespace ftest
