#pragma once
/*
metrics.hpp
-----------
Regression and ranking metrics for ddG evaluation: Pearson, Spearman
(average ranks on ties), RMSE/MAE after least-squares affine
calibration, Mann-Whitney AUROC with the positive class y > 0, and
per-structure aggregation.
*/

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace refineppi {

inline void check_paired(const std::vector<double>& x, const std::vector<double>& y,
                         const char* op) {
    if (x.size() != y.size())
        throw std::invalid_argument(std::string(op) + ": length mismatch " +
                                    std::to_string(x.size()) + " vs " + std::to_string(y.size()));
    if (x.size() < 2) throw std::invalid_argument(std::string(op) + ": need at least 2 points");
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    check_paired(x, y, "pearson");
    const double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("pearson: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

// Ranks 1..n with ties assigned the mean of the ranks they span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    check_paired(x, y, "spearman");
    return pearson(average_ranks(x), average_ranks(y));
}

struct AffineFit {
    double a = 0.0;
    double b = 0.0;
};

// Least-squares fit of y ~ a*pred + b; a degenerate design (zero
// prediction variance) falls back to the best constant a=0, b=mean(y).
inline AffineFit least_squares_calibration(const std::vector<double>& pred,
                                           const std::vector<double>& y) {
    check_paired(pred, y, "least_squares_calibration");
    const double n = static_cast<double>(pred.size());
    double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double spp = 0.0, spy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double dp = pred[i] - mp;
        spp += dp * dp;
        spy += dp * (y[i] - my);
    }
    if (spp <= 0.0) return {0.0, my};
    double a = spy / spp;
    return {a, my - a * mp};
}

inline double minimized_rmse(const std::vector<double>& pred, const std::vector<double>& y) {
    AffineFit f = least_squares_calibration(pred, y);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double e = f.a * pred[i] + f.b - y[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double minimized_mae(const std::vector<double>& pred, const std::vector<double>& y) {
    AffineFit f = least_squares_calibration(pred, y);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(f.a * pred[i] + f.b - y[i]);
    return s / static_cast<double>(pred.size());
}

// Probability that a positive (y_true > 0) outranks a negative, ties at
// half credit; computed from the rank sum (Mann-Whitney U).
inline double auroc(const std::vector<double>& pred, const std::vector<double>& y_true) {
    check_paired(pred, y_true, "auroc");
    std::size_t n_pos = 0;
    for (double y : y_true)
        if (y > 0.0) ++n_pos;
    std::size_t n_neg = y_true.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: need both positive and negative labels");
    std::vector<double> ranks = average_ranks(pred);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i)
        if (y_true[i] > 0.0) rank_sum_pos += ranks[i];
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct EvalRecord {
    std::string structure;
    double y_true = 0.0;
    double y_pred = 0.0;
};

struct PerStructureEntry {
    std::string structure;
    std::size_t n = 0;
    double pearson = 0.0;
    double spearman = 0.0;
};

struct PerStructureReport {
    std::vector<PerStructureEntry> entries;  // qualifying structures only
    double mean_pearson = 0.0;               // unweighted over entries
    double mean_spearman = 0.0;
};

// Per-structure correlations over groups with at least `min_group` records
// (smaller groups are dropped), averaged without weighting.
inline PerStructureReport per_structure(const std::vector<EvalRecord>& records,
                                        std::size_t min_group = 10) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& r : records) {
        groups[r.structure].first.push_back(r.y_pred);
        groups[r.structure].second.push_back(r.y_true);
    }
    PerStructureReport rep;
    for (const auto& [id, xy] : groups) {
        if (xy.first.size() < min_group) continue;
        PerStructureEntry e;
        e.structure = id;
        e.n = xy.first.size();
        e.pearson = pearson(xy.first, xy.second);
        e.spearman = spearman(xy.first, xy.second);
        rep.entries.push_back(e);
    }
    if (rep.entries.empty())
        throw std::invalid_argument("per_structure: no structure has enough records");
    for (const auto& e : rep.entries) {
        rep.mean_pearson += e.pearson;
        rep.mean_spearman += e.spearman;
    }
    rep.mean_pearson /= static_cast<double>(rep.entries.size());
    rep.mean_spearman /= static_cast<double>(rep.entries.size());
    return rep;
}

}  // namespace refineppi
