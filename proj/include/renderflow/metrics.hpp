#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "renderflow/common.hpp"

namespace rf {

// 10 log10(1 / MSE) over [0,1] images; identical images give +inf.
double psnr(const Image& a, const Image& b);

// Mean local SSIM: grayscale = channel mean, 11x11 Gaussian window sigma 1.5,
// K1 = 0.01, K2 = 0.03, L = 1, valid positions only.
double ssim(const Image& a, const Image& b);

// Mean angular error in degrees between [0,1]-encoded normal buffers over
// mask = 1 pixels.
double angular_error_deg(const Image& pred_enc, const Image& gt_enc, const Image& mask);

double rmse(const Image& a, const Image& b, const Image* mask = nullptr);

// Same formula as the training-time perceptual proxy, evaluated on a pair of
// images (no gradients).
double perceptual_proxy_metric(const Image& a, const Image& b);

struct FrameMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double proxy = 0.0;
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    double psnr = 0.0, ssim = 0.0, proxy = 0.0;  // means over frames
    double angular_deg = std::numeric_limits<double>::quiet_NaN();
    double rmse = std::numeric_limits<double>::quiet_NaN();
    std::string metadata;  // free-form JSON string
};

MetricReport compare_clips(const std::vector<Image>& pred, const std::vector<Image>& gt);

// JSON rendering; +inf psnr is emitted as the string "inf".
std::string report_to_json(const MetricReport& r);
std::string report_to_csv(const MetricReport& r);
void write_report(const MetricReport& r, const std::string& path);

struct VarianceReport {
    int runs = 0;
    double max_pixel_deviation = 0.0;  // max abs deviation across runs
    double psnr_variance = 0.0;
    double ssim_variance = 0.0;
    double proxy_variance = 0.0;
};

// Executes render() n_runs times and reports cross-run metric variance plus
// the maximum per-pixel deviation from the first run.
VarianceReport variance_over_runs(const std::function<std::vector<Image>()>& render, int n_runs,
                                  const std::vector<Image>& gt);

}  // namespace rf
