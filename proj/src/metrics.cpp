#include "mmt/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace mmt {

namespace {

void check_pair(const char* op, std::size_t nx, std::size_t ny, std::size_t min_n) {
    if (nx != ny)
        throw shape_error(std::string(op) + ": length mismatch " + std::to_string(nx) + " vs " +
                          std::to_string(ny));
    if (nx < min_n)
        throw config_error(std::string(op) + ": needs at least " + std::to_string(min_n) +
                           " samples, got " + std::to_string(nx));
}

struct Moments {
    double mean_x, mean_y, var_x, var_y, cov;
};

Moments population_moments(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    return {mx, my, vx / n, vy / n, cov / n};
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> truths) {
    check_pair("accuracy", preds.size(), truths.size(), 1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == truths[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mae(std::span<const double> x, std::span<const double> y) {
    check_pair("mae", x.size(), y.size(), 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
    return acc / static_cast<double>(x.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
    check_pair("pearson", x.size(), y.size(), 2);
    const Moments m = population_moments(x, y);
    const double denom = std::sqrt(m.var_x * m.var_y);
    if (denom == 0.0) throw config_error("pearson undefined: constant series");
    return m.cov / denom;
}

double ccc(std::span<const double> x, std::span<const double> y) {
    check_pair("ccc", x.size(), y.size(), 2);
    const Moments m = population_moments(x, y);
    const double shift = m.mean_x - m.mean_y;
    const double denom = m.var_x + m.var_y + shift * shift;
    if (denom == 0.0)
        throw config_error("ccc undefined: both series constant with equal means");
    return 2.0 * m.cov / denom;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["n"] = sample_count;
    if (accuracy) j["accuracy"] = *accuracy;
    for (const auto& t : targets) j[t.name] = {{"mae", t.mae}, {"ccc", t.ccc}};
    return j.dump(2);
}

}  // namespace mmt
