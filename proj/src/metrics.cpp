#include "edmsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace edmsr {

namespace {

constexpr int kWin        = 11;
constexpr double kWinSig  = 1.5;
constexpr double kC1      = (0.01 * 2.0) * (0.01 * 2.0);
constexpr double kC2      = (0.03 * 2.0) * (0.03 * 2.0);

double mse_of(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

double psnr_from_mse(double mse) {
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

const std::vector<double>& gaussian_window_1d() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWin);
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = static_cast<double>(i - kWin / 2);
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kWinSig * kWinSig));
            sum += v[static_cast<size_t>(i)];
        }
        for (double& x : v)
            x /= sum;
        return v;
    }();
    return w;
}

// separable Gaussian filtering, valid region only: output (h-10) x (w-10)
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h, int64_t w) {
    const auto& k = gaussian_window_1d();
    const int64_t ow = w - kWin + 1;
    const int64_t oh = h - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h * ow));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i)
                acc += k[static_cast<size_t>(i)] * img[static_cast<size_t>(y * w + x + i)];
            tmp[static_cast<size_t>(y * ow + x)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh * ow));
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i)
                acc += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
            out[static_cast<size_t>(y * ow + x)] = acc;
        }
    return out;
}

std::string format_psnr(double v) {
    if (std::isinf(v))
        return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string format_ssim(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double psnr(const Volume& a, const Volume& b) {
    require(a.same_dims(b), "psnr: shape mismatch");
    require(a.domain == Domain::Unit && b.domain == Domain::Unit,
            "psnr: volumes must be unit-domain");
    return psnr_from_mse(mse_of(a.voxels.data(), b.voxels.data(), a.voxels.size()));
}

double psnr(const Image& a, const Image& b) {
    require(a.h == b.h && a.w == b.w, "psnr: shape mismatch");
    return psnr_from_mse(mse_of(a.pixels.data(), b.pixels.data(), a.pixels.size()));
}

double ssim(const Image& a, const Image& b) {
    require(a.h == b.h && a.w == b.w, "ssim: shape mismatch");
    require(a.h >= kWin && a.w >= kWin, "ssim: image must be at least 11x11");

    const size_t n = a.pixels.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a.pixels[i] * a.pixels[i];
        bb[i] = b.pixels[i] * b.pixels[i];
        ab[i] = a.pixels[i] * b.pixels[i];
    }
    const auto mu_a  = filter_valid(a.pixels, a.h, a.w);
    const auto mu_b  = filter_valid(b.pixels, a.h, a.w);
    const auto m_aa  = filter_valid(aa, a.h, a.w);
    const auto m_bb  = filter_valid(bb, a.h, a.w);
    const auto m_ab  = filter_valid(ab, a.h, a.w);

    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double ma  = mu_a[i];
        const double mb  = mu_b[i];
        const double va  = m_aa[i] - ma * ma;
        const double vb  = m_bb[i] - mb * mb;
        const double cab = m_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + kC1) * (2.0 * cab + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    return acc / static_cast<double>(mu_a.size());
}

std::vector<MetricRow> evaluate_volume(const Volume& pred, const Volume& truth,
                                       const std::string& subject_id,
                                       const std::string& method) {
    require(pred.same_dims(truth), "evaluate_volume: dim mismatch");
    std::vector<MetricRow> rows;
    rows.reserve(static_cast<size_t>(pred.d) + 1);

    double ssim_sum = 0.0;
    double psnr_sum = 0.0;
    int64_t finite  = 0;
    for (int64_t i = 0; i < pred.d; ++i) {
        const Image pa = get_slice(pred, i);
        const Image pb = get_slice(truth, i);
        MetricRow row;
        row.subject_id  = subject_id;
        row.slice_index = i;
        row.method      = method;
        row.psnr_db     = psnr(pa, pb);
        row.ssim        = ssim(pa, pb);
        ssim_sum += row.ssim;
        if (std::isfinite(row.psnr_db)) {
            psnr_sum += row.psnr_db;
            ++finite;
        }
        rows.push_back(std::move(row));
    }

    MetricRow agg;
    agg.subject_id  = subject_id;
    agg.slice_index = -1;
    agg.method      = method;
    agg.psnr_db = finite > 0 ? psnr_sum / static_cast<double>(finite)
                             : std::numeric_limits<double>::infinity();
    agg.ssim = ssim_sum / static_cast<double>(pred.d);
    rows.push_back(std::move(agg));
    return rows;
}

double psnr_pooled(const Volume& pred, const Volume& truth) {
    require(pred.same_dims(truth), "psnr_pooled: dim mismatch");
    return psnr_from_mse(mse_of(pred.voxels.data(), truth.voxels.data(), pred.voxels.size()));
}

std::string render_error_heatmap_pgm(const Volume& pred, const Volume& truth,
                                     int64_t slice_index) {
    require(pred.same_dims(truth), "error_heatmap: dim mismatch");
    require(slice_index >= 0 && slice_index < pred.d, "error_heatmap: slice index out of range");

    const Image pa = get_slice(pred, slice_index);
    const Image pb = get_slice(truth, slice_index);
    std::vector<double> err(pa.pixels.size());
    double max_err = 0.0;
    for (size_t i = 0; i < err.size(); ++i) {
        err[i]  = std::fabs(pa.pixels[i] - pb.pixels[i]);
        max_err = std::max(max_err, err[i]);
    }

    std::ostringstream out;
    out << "P2\n" << pa.w << " " << pa.h << "\n255\n";
    for (int64_t y = 0; y < pa.h; ++y) {
        for (int64_t x = 0; x < pa.w; ++x) {
            const double e = err[static_cast<size_t>(y * pa.w + x)];
            const int g = max_err > 0.0
                              ? static_cast<int>(std::lround(e / max_err * 255.0))
                              : 0;
            out << g << (x + 1 < pa.w ? " " : "");
        }
        out << "\n";
    }
    return out.str();
}

void write_error_heatmap(const Volume& pred, const Volume& truth, int64_t slice_index,
                         const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "error_heatmap: cannot open for writing: " + path);
    out << render_error_heatmap_pgm(pred, truth, slice_index);
    require(out.good(), "error_heatmap: write failed: " + path);
}

void MetricReport::recompute_aggregates() {
    aggregates.clear();
    // per (subject, method) means over slice rows, then per-method means over
    // the subject aggregates
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
        by_subject;
    for (const MetricRow& r : rows) {
        if (r.slice_index < 0)
            continue;
        auto& acc = by_subject[{r.subject_id, r.method}];
        if (std::isfinite(r.psnr_db))
            acc.first.push_back(r.psnr_db);
        acc.second.push_back(r.ssim);
    }
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_method;
    for (const auto& [key, acc] : by_subject) {
        MetricAggregate a;
        a.subject_id = key.first;
        a.method     = key.second;
        a.psnr_db    = acc.first.empty()
                           ? std::numeric_limits<double>::infinity()
                           : std::accumulate(acc.first.begin(), acc.first.end(), 0.0) /
                                 static_cast<double>(acc.first.size());
        a.ssim = std::accumulate(acc.second.begin(), acc.second.end(), 0.0) /
                 static_cast<double>(acc.second.size());
        aggregates.push_back(a);
        auto& m = by_method[key.second];
        if (std::isfinite(a.psnr_db))
            m.first.push_back(a.psnr_db);
        m.second.push_back(a.ssim);
    }
    for (const auto& [method, acc] : by_method) {
        MetricAggregate a;
        a.subject_id = "";
        a.method     = method;
        a.psnr_db    = acc.first.empty()
                           ? std::numeric_limits<double>::infinity()
                           : std::accumulate(acc.first.begin(), acc.first.end(), 0.0) /
                                 static_cast<double>(acc.first.size());
        a.ssim = std::accumulate(acc.second.begin(), acc.second.end(), 0.0) /
                 static_cast<double>(acc.second.size());
        aggregates.push_back(a);
    }
}

void write_report(const MetricReport& report, const std::string& path, ReportFormat format) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "write_report: cannot open for writing: " + path);

    if (format == ReportFormat::Csv) {
        out << "subject_id,slice_index,method,psnr_db,ssim\n";
        for (const MetricRow& r : report.rows)
            out << r.subject_id << "," << r.slice_index << "," << r.method << ","
                << format_psnr(r.psnr_db) << "," << format_ssim(r.ssim) << "\n";
    } else {
        nlohmann::ordered_json j;
        j["rows"] = nlohmann::ordered_json::array();
        for (const MetricRow& r : report.rows) {
            nlohmann::ordered_json row;
            row["subject_id"]  = r.subject_id;
            row["slice_index"] = r.slice_index;
            row["method"]      = r.method;
            if (std::isinf(r.psnr_db)) {
                row["psnr_db"]       = nullptr;
                row["psnr_infinite"] = true;
            } else {
                row["psnr_db"]       = r.psnr_db;
                row["psnr_infinite"] = false;
            }
            row["ssim"] = r.ssim;
            // reserved so externally computed perceptual scores can be merged
            row["lpips"] = nullptr;
            j["rows"].push_back(row);
        }
        j["aggregates"] = nlohmann::ordered_json::array();
        for (const MetricAggregate& a : report.aggregates) {
            nlohmann::ordered_json row;
            row["subject_id"] = a.subject_id;
            row["method"]     = a.method;
            if (std::isinf(a.psnr_db)) {
                row["psnr_db"]       = nullptr;
                row["psnr_infinite"] = true;
            } else {
                row["psnr_db"]       = a.psnr_db;
                row["psnr_infinite"] = false;
            }
            row["ssim"] = a.ssim;
            j["aggregates"].push_back(row);
        }
        out << j.dump(2) << "\n";
    }
    require(out.good(), "write_report: write failed: " + path);
}

MetricReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_report: cannot open: " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "read_report: empty file");
    require(line == "subject_id,slice_index,method,psnr_db,ssim",
            "read_report: unexpected CSV header");

    MetricReport report;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::stringstream ss(line);
        MetricRow r;
        std::string tok;
        std::getline(ss, r.subject_id, ',');
        std::getline(ss, tok, ',');
        r.slice_index = std::stoll(tok);
        std::getline(ss, r.method, ',');
        std::getline(ss, tok, ',');
        r.psnr_db = (tok == "inf") ? std::numeric_limits<double>::infinity() : std::stod(tok);
        std::getline(ss, tok, ',');
        r.ssim = std::stod(tok);
        report.rows.push_back(std::move(r));
    }
    report.recompute_aggregates();
    return report;
}

}  // namespace edmsr
