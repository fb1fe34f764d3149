#pragma once

// Sparse linear calibration from optical features to biomass concentration.
//
//   X_hat = beta0 + sum_i beta_i s_i
//
// fitted by L1-penalised least squares on standardised features using cyclic
// coordinate descent.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "raceway/errors.hpp"
#include "raceway/sensor.hpp"
#include "raceway/time.hpp"

namespace raceway::estimation {

inline constexpr double kRatioGuard = 1e-6;

struct CalibrationSample {
    std::vector<double> features;
    double reference_x = 0.0;  // g/L, mean of replicates
    double sigma = 0.0;        // g/L, replicate std
    Timestamp t{};
};

struct CalibrationModel {
    double beta0 = 0.0;
    std::vector<double> beta;  // original (unstandardised) units
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;
    double lambda = 0.0;
    std::vector<std::string> feature_names;

    std::size_t n_features() const { return beta.size(); }
    std::size_t nonzero_count() const {
        return static_cast<std::size_t>(std::count_if(beta.begin(), beta.end(), [](double b) { return b != 0.0; }));
    }
};

struct ErrorMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
};

// ---------------------------------------------------------------------------
// Features

/// Names for extract_features' output, in order: absorbance channels,
/// fluorescence channels, then fluorescence/abs0 ratios.
inline std::vector<std::string> feature_names(std::size_t n_abs, std::size_t n_fluo) {
    std::vector<std::string> names;
    names.reserve(n_abs + 2 * n_fluo);
    for (std::size_t i = 0; i < n_abs; ++i) names.push_back("abs" + std::to_string(i));
    for (std::size_t j = 0; j < n_fluo; ++j) names.push_back("fluo" + std::to_string(j));
    for (std::size_t j = 0; j < n_fluo; ++j) names.push_back("fluo" + std::to_string(j) + "_over_abs0");
    return names;
}

inline std::vector<double> extract_features(const sensor::SpectralFrame& frame) {
    if (frame.absorbance.empty()) throw FeatureError("frame has no absorbance channels");
    for (double a : frame.absorbance)
        if (!std::isfinite(a)) throw FeatureError("non-finite absorbance channel");
    for (double f : frame.fluorescence)
        if (!std::isfinite(f)) throw FeatureError("non-finite fluorescence channel");

    std::vector<double> out;
    out.reserve(frame.absorbance.size() + 2 * frame.fluorescence.size());
    out.insert(out.end(), frame.absorbance.begin(), frame.absorbance.end());
    out.insert(out.end(), frame.fluorescence.begin(), frame.fluorescence.end());
    const double a0 = frame.absorbance.front();
    for (double f : frame.fluorescence) out.push_back(a0 > kRatioGuard ? f / a0 : 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// LASSO

struct LassoOptions {
    double tolerance = 1e-8;  // max standardised coefficient change per sweep
    std::size_t max_sweeps = 100000;
};

struct LassoFit {
    CalibrationModel model;
    std::size_t sweeps = 0;
    std::vector<double> objective_trace;  // standardised objective after each sweep
};

/// Raised when coordinate descent hits max_sweeps; carries the last iterate.
class ConvergenceError : public Error {
public:
    explicit ConvergenceError(LassoFit last)
        : Error("coordinate descent did not converge in " + std::to_string(last.sweeps) + " sweeps"),
          last_(std::move(last)) {}
    const LassoFit& last_iterate() const noexcept { return last_; }

private:
    LassoFit last_;
};

class FitError : public Error {
public:
    using Error::Error;
};

inline double soft_threshold(double z, double gamma) {
    // The relative slack absorbs last-ulp differences between a caller's
    // lambda_max and the value recomputed here.
    if (std::abs(z) <= gamma * (1.0 + 1e-12)) return 0.0;
    return z > 0 ? z - gamma : z + gamma;
}

namespace detail {

/// Column-major standardised design plus centred response.
struct Standardised {
    std::size_t n = 0, p = 0;
    std::vector<double> z;  // z[j * n + i]
    std::vector<double> mean, scale;
    std::vector<bool> constant;
    std::vector<double> y_centred;
    double y_mean = 0.0;

    std::span<const double> column(std::size_t j) const { return {z.data() + j * n, n}; }
};

inline Standardised standardise(std::span<const CalibrationSample> samples) {
    Standardised s;
    s.n = samples.size();
    s.p = samples.front().features.size();
    s.z.resize(s.n * s.p);
    s.mean.assign(s.p, 0.0);
    s.scale.assign(s.p, 1.0);
    s.constant.assign(s.p, false);
    const double n = static_cast<double>(s.n);
    for (std::size_t j = 0; j < s.p; ++j) {
        double m = 0.0;
        for (const auto& smp : samples) m += smp.features[j];
        m /= n;
        double ss = 0.0;
        for (const auto& smp : samples) ss += (smp.features[j] - m) * (smp.features[j] - m);
        const double sd = std::sqrt(ss / n);
        s.mean[j] = m;
        if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
            s.constant[j] = true;
            s.scale[j] = 1.0;
        } else {
            s.scale[j] = sd;
        }
        for (std::size_t i = 0; i < s.n; ++i)
            s.z[j * s.n + i] = s.constant[j] ? 0.0 : (samples[i].features[j] - m) / s.scale[j];
    }
    for (const auto& smp : samples) s.y_mean += smp.reference_x;
    s.y_mean /= n;
    s.y_centred.reserve(s.n);
    for (const auto& smp : samples) s.y_centred.push_back(smp.reference_x - s.y_mean);
    return s;
}

inline double mean_product(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc / static_cast<double>(a.size());
}

inline void check_dataset(std::span<const CalibrationSample> samples, double lambda) {
    if (samples.size() < 2) throw FitError("LASSO fit needs at least 2 samples");
    const std::size_t p = samples.front().features.size();
    if (p == 0) throw FitError("LASSO fit needs at least 1 feature");
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw FitError("lambda must be finite and >= 0");
    for (const auto& s : samples) {
        if (s.features.size() != p) throw FitError("feature length differs across samples");
        if (!std::isfinite(s.reference_x) || s.reference_x < 0) throw FitError("reference X must be finite and >= 0");
        for (double f : s.features)
            if (!std::isfinite(f)) throw FitError("non-finite feature value");
    }
}

inline double objective(const Standardised& s, std::span<const double> residual, std::span<const double> b,
                        double lambda) {
    double rss = 0.0;
    for (double r : residual) rss += r * r;
    double l1 = 0.0;
    for (double v : b) l1 += std::abs(v);
    return rss / (2.0 * static_cast<double>(s.n)) + lambda * l1;
}

}  // namespace detail

/// Smallest lambda at which every coefficient is zero.
inline double lambda_max(std::span<const CalibrationSample> samples) {
    detail::check_dataset(samples, 0.0);
    const auto s = detail::standardise(samples);
    double lm = 0.0;
    for (std::size_t j = 0; j < s.p; ++j)
        if (!s.constant[j]) lm = std::max(lm, std::abs(detail::mean_product(s.column(j), s.y_centred)));
    return lm;
}

inline LassoFit fit_lasso_traced(std::span<const CalibrationSample> samples, double lambda,
                                 const LassoOptions& opt = {}) {
    detail::check_dataset(samples, lambda);
    const auto s = detail::standardise(samples);

    std::vector<double> b(s.p, 0.0);
    std::vector<double> r = s.y_centred;
    LassoFit fit;
    bool converged = false;
    while (fit.sweeps < opt.max_sweeps) {
        ++fit.sweeps;
        double max_change = 0.0;
        for (std::size_t j = 0; j < s.p; ++j) {
            if (s.constant[j]) continue;
            const auto zj = s.column(j);
            // Standardised columns have mean square 1, so the coordinate
            // minimiser is a plain soft-threshold.
            const double rho = detail::mean_product(zj, r) + b[j];
            const double next = soft_threshold(rho, lambda);
            const double delta = next - b[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < s.n; ++i) r[i] -= zj[i] * delta;
                b[j] = next;
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        fit.objective_trace.push_back(detail::objective(s, r, b, lambda));
        if (max_change < opt.tolerance) {
            converged = true;
            break;
        }
    }

    auto& m = fit.model;
    m.lambda = lambda;
    m.feature_mean = s.mean;
    m.feature_scale = s.scale;
    m.beta.assign(s.p, 0.0);
    m.beta0 = s.y_mean;
    for (std::size_t j = 0; j < s.p; ++j) {
        if (b[j] == 0.0) continue;
        m.beta[j] = b[j] / s.scale[j];
        m.beta0 -= m.beta[j] * s.mean[j];
    }
    if (!converged) throw ConvergenceError(std::move(fit));
    return fit;
}

inline CalibrationModel fit_lasso(std::span<const CalibrationSample> samples, double lambda,
                                  const LassoOptions& opt = {}) {
    return fit_lasso_traced(samples, lambda, opt).model;
}

struct Prediction {
    double x_hat = 0.0;
    double raw = 0.0;
    bool clamped = false;
};

inline Prediction predict_detailed(const CalibrationModel& model, std::span<const double> features) {
    if (features.size() != model.n_features())
        throw PredictionError("feature length " + std::to_string(features.size()) + " does not match model (" +
                              std::to_string(model.n_features()) + ")");
    Prediction p;
    p.raw = model.beta0;
    for (std::size_t j = 0; j < features.size(); ++j) p.raw += model.beta[j] * features[j];
    p.x_hat = p.raw;
    if (p.raw < 0) {
        p.x_hat = 0.0;
        p.clamped = true;
        spdlog::debug("prediction {:.4f} g/L clamped to 0", p.raw);
    }
    return p;
}

inline double predict(const CalibrationModel& model, std::span<const double> features) {
    return predict_detailed(model, features).x_hat;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CvRow {
    double lambda = 0.0;
    std::vector<double> fold_rmse;
    double mean_rmse = 0.0;
};

struct CvResult {
    double lambda_star = 0.0;
    std::vector<CvRow> table;  // ascending lambda
};

inline constexpr std::size_t kFolds = 5;

/// Contiguous fold boundaries; the first n % k folds take one extra sample.
inline std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n, std::size_t k = kFolds) {
    std::vector<std::pair<std::size_t, std::size_t>> folds;
    std::size_t begin = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = n / k + (f < n % k ? 1 : 0);
        folds.emplace_back(begin, begin + len);
        begin += len;
    }
    return folds;
}

/// Blocked k-fold CV over a time-ordered dataset. Ties go to the larger lambda.
inline CvResult cross_validate(std::span<const CalibrationSample> samples, std::vector<double> lambda_grid,
                               const LassoOptions& opt = {}) {
    if (samples.size() < kFolds) throw FitError("cross-validation needs at least 5 samples");
    if (lambda_grid.empty()) throw FitError("lambda grid is empty");
    for (double l : lambda_grid)
        if (!(l >= 0) || !std::isfinite(l)) throw FitError("lambda grid values must be finite and >= 0");
    std::sort(lambda_grid.begin(), lambda_grid.end());
    lambda_grid.erase(std::unique(lambda_grid.begin(), lambda_grid.end()), lambda_grid.end());

    const auto folds = contiguous_folds(samples.size());
    CvResult res;
    for (double lambda : lambda_grid) {
        CvRow row{lambda, {}, 0.0};
        for (auto [lo, hi] : folds) {
            std::vector<CalibrationSample> train;
            train.reserve(samples.size() - (hi - lo));
            for (std::size_t i = 0; i < samples.size(); ++i)
                if (i < lo || i >= hi) train.push_back(samples[i]);
            CalibrationModel model;
            try {
                model = fit_lasso(train, lambda, opt);
            } catch (const ConvergenceError& e) {
                spdlog::warn("cv: lambda={:.3g} did not converge; scoring the last iterate", lambda);
                model = e.last_iterate().model;
            }
            double se = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const double e = predict(model, samples[i].features) - samples[i].reference_x;
                se += e * e;
            }
            row.fold_rmse.push_back(std::sqrt(se / static_cast<double>(hi - lo)));
        }
        row.mean_rmse = std::accumulate(row.fold_rmse.begin(), row.fold_rmse.end(), 0.0) /
                        static_cast<double>(row.fold_rmse.size());
        res.table.push_back(std::move(row));
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : res.table) {
        if (row.mean_rmse <= best * (1.0 + 1e-12) + 1e-15) {
            best = std::min(best, row.mean_rmse);
            res.lambda_star = row.lambda;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Metrics

struct TimedValue {
    Timestamp t{};
    double value = 0.0;
};

inline ErrorMetrics metrics(std::span<const double> pred, std::span<const double> ref) {
    if (pred.size() != ref.size() || pred.empty()) throw MetricsError("metrics need equal, non-empty series");
    ErrorMetrics m;
    m.n = pred.size();
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - ref[i];
        m.mae += std::abs(e);
        m.rmse += e * e;
    }
    m.mae /= static_cast<double>(m.n);
    m.rmse = std::sqrt(m.rmse / static_cast<double>(m.n));
    return m;
}

/// Pairs each reference with the nearest-in-time prediction within max_gap.
/// References with no prediction in range are skipped.
inline ErrorMetrics metrics(std::span<const TimedValue> pred, std::span<const TimedValue> ref,
                            Seconds max_gap = Seconds{600}) {
    std::vector<double> p, r;
    for (const auto& rv : ref) {
        const TimedValue* best = nullptr;
        Seconds best_gap = max_gap + Seconds{1};
        for (const auto& pv : pred) {
            const Seconds gap = pv.t > rv.t ? pv.t - rv.t : rv.t - pv.t;
            if (gap < best_gap) {
                best_gap = gap;
                best = &pv;
            }
        }
        if (best && best_gap <= max_gap) {
            p.push_back(best->value);
            r.push_back(rv.value);
        }
    }
    if (p.empty()) throw MetricsError("no prediction lies within the pairing window of any reference sample");
    return metrics(std::span<const double>(p), std::span<const double>(r));
}

}  // namespace raceway::estimation
