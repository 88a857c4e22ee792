#pragma once

#include <string>
#include <vector>

#include "edmsr/volume.hpp"

namespace edmsr {

// One evaluated slice (or the volume aggregate when slice_index == -1).
// psnr_db is +infinity for identical inputs; it serializes as "inf" in CSV
// and null-with-flag in JSON.
struct MetricRow {
    std::string subject_id;
    int64_t slice_index = -1;
    std::string method;
    double psnr_db = 0.0;
    double ssim    = 0.0;
};

struct MetricAggregate {
    std::string subject_id;  // empty for the overall (per-method) mean
    std::string method;
    double psnr_db = 0.0;
    double ssim    = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<MetricAggregate> aggregates;

    void recompute_aggregates();
};

// 10*log10(R^2/MSE) with data range R = 2 (the [-1,1] unit domain).
// Identical inputs yield +infinity.
double psnr(const Volume& a, const Volume& b);
double psnr(const Image& a, const Image& b);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// data range 2, windows fully inside the image.
double ssim(const Image& a, const Image& b);

// One row per sagittal slice plus a volume-aggregate row (slice_index -1).
// The aggregate PSNR is the mean of the finite slice PSNRs (infinite when
// every slice is identical); aggregate SSIM is the plain slice mean.
std::vector<MetricRow> evaluate_volume(const Volume& pred, const Volume& truth,
                                       const std::string& subject_id,
                                       const std::string& method);

// PSNR of the pooled whole-volume MSE, the alternative to slice-mean
// aggregation; reported methods are labeled accordingly.
double psnr_pooled(const Volume& pred, const Volume& truth);

// |pred - truth| on one slice, scaled [0,max_err] -> [0,255], as a plain
// text PGM (P2).
void write_error_heatmap(const Volume& pred, const Volume& truth, int64_t slice_index,
                         const std::string& path);
std::string render_error_heatmap_pgm(const Volume& pred, const Volume& truth,
                                     int64_t slice_index);

enum class ReportFormat { Csv, Json };

void write_report(const MetricReport& report, const std::string& path, ReportFormat format);

// Parses the CSV emitted by write_report (round-trip checks and merging).
MetricReport read_report_csv(const std::string& path);

}  // namespace edmsr
