#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cenet/metrics/overlap.hpp"
#include "cenet/metrics/surface.hpp"

namespace cenet::metrics {

/// Per-case evaluation. Distances are missing when either mask is empty.
struct MetricReport {
    double dsc = 0;
    std::optional<double> hd95_mm;
    std::optional<double> assd_mm;
    double sensitivity = 0;
    double precision = 0;
};

inline MetricReport evaluate_case(const BinaryMask& pred, const BinaryMask& gt)
{
    if (pred.dims != gt.dims) throw ShapeError("evaluate_case: prediction " + pred.dims.str() + " vs ground truth " + gt.dims.str());
    if (pred.spacing != gt.spacing) throw ShapeError("evaluate_case: prediction and ground truth spacings differ");
    MetricReport r;
    const Confusion c = confusion(pred, gt);
    r.dsc = ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    r.sensitivity = ratio_or_one(c.tp, c.tp + c.fn);
    r.precision = ratio_or_one(c.tp, c.tp + c.fp);
    if (c.tp + c.fp > 0 && c.tp + c.fn > 0) {
        const SurfaceDistances d = surface_distances(pred, gt);
        r.hd95_mm = hd95(d);
        r.assd_mm = assd(d);
    }
    return r;
}

struct CaseResult {
    std::string case_id;
    int fold = 0;
    MetricReport report;
};

struct Summary {
    double mean = NAN, std = NAN, median = NAN;
    int64_t count = 0;
};

/// Mean, sample standard deviation (n - 1) and median of the present values.
inline Summary summarize(std::vector<double> v)
{
    Summary s;
    s.count = static_cast<int64_t>(v.size());
    if (v.empty()) return s;
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    return s;
}

inline const char* kMetricsHeader = "case_id,fold,dsc,hd95_mm,assd_mm,sensitivity,precision";

inline std::string format_value(std::optional<double> v)
{
    if (!v || std::isnan(*v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

/// One row per case followed by mean, std and median rows (fold column left empty).
inline void write_metrics_csv(std::ostream& os, const std::vector<CaseResult>& rows)
{
    os << kMetricsHeader << '\n';
    std::vector<double> dsc, hd, as, se, pr;
    for (const auto& r : rows) {
        const MetricReport& m = r.report;
        os << r.case_id << ',' << r.fold << ',' << format_value(m.dsc) << ',' << format_value(m.hd95_mm) << ','
           << format_value(m.assd_mm) << ',' << format_value(m.sensitivity) << ',' << format_value(m.precision) << '\n';
        dsc.push_back(m.dsc);
        se.push_back(m.sensitivity);
        pr.push_back(m.precision);
        if (m.hd95_mm) hd.push_back(*m.hd95_mm);
        if (m.assd_mm) as.push_back(*m.assd_mm);
    }
    const Summary s[5] = {summarize(dsc), summarize(hd), summarize(as), summarize(se), summarize(pr)};
    const char* names[3] = {"mean", "std", "median"};
    for (int k = 0; k < 3; ++k) {
        os << names[k] << ',';
        for (const auto& x : s) {
            const double v = k == 0 ? x.mean : (k == 1 ? x.std : x.median);
            os << ',' << format_value(v);
        }
        os << '\n';
    }
}

}  // namespace cenet::metrics
