#include "mmt/baselines.hpp"

#include <cstdlib>

namespace mmt {

GruBudget solve_gru_budget(std::size_t target, double tolerance,
                           const std::function<std::size_t(std::size_t, std::size_t)>& count,
                           std::size_t max_hidden) {
    if (target == 0) throw config_error("solve_gru_budget: target must be positive");
    auto gap = [&](std::size_t n) {
        return n > target ? n - target : target - n;
    };
    GruBudget best;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (std::size_t layers = 1; layers <= 2; ++layers) {
        // binary search for the crossing point, counts are monotone in hidden
        std::size_t lo = 1, hi = max_hidden;
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            if (count(mid, layers) < target) lo = mid + 1;
            else hi = mid;
        }
        for (std::size_t h : {lo > 1 ? lo - 1 : lo, lo}) {
            const std::size_t n = count(h, layers);
            if (gap(n) < best_gap) {
                best_gap = gap(n);
                best = {h, layers, n, false};
            }
        }
        // a single layer that already meets tolerance wins; layers stay minimal
        if (layers == 1 &&
            static_cast<double>(best_gap) <= tolerance * static_cast<double>(target))
            break;
    }
    best.within_tolerance =
        static_cast<double>(best_gap) <= tolerance * static_cast<double>(target);
    return best;
}

}  // namespace mmt
