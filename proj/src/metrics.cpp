#include "renderflow/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "renderflow/losses.hpp"

namespace rf {

using json = nlohmann::json;

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a.v[i]) - b.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> gaussian_window() {
    const int n = 11;
    const double sigma = 1.5;
    std::vector<double> w(static_cast<size_t>(n) * n);
    double sum = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double dy = y - 5, dx = x - 5;
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(y) * n + x] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    return w;
}

std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(static_cast<size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0.0;
            for (int c = 0; c < img.c; ++c) s += img.at(y, x, c);
            g[static_cast<size_t>(y) * img.w + x] = s / img.c;
        }
    return g;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    const int n = 11;
    if (a.h < n || a.w < n) throw std::invalid_argument("ssim: image smaller than 11x11 window");
    static const std::vector<double> win = gaussian_window();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1

    std::vector<double> ga = to_gray(a), gb = to_gray(b);
    const int w = a.w;
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y + n <= a.h; ++y)
        for (int x = 0; x + n <= a.w; ++x) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int dy = 0; dy < n; ++dy)
                for (int dx = 0; dx < n; ++dx) {
                    double wv = win[static_cast<size_t>(dy) * n + dx];
                    double pa = ga[static_cast<size_t>(y + dy) * w + x + dx];
                    double pb = gb[static_cast<size_t>(y + dy) * w + x + dx];
                    ma += wv * pa;
                    mb += wv * pb;
                    va += wv * pa * pa;
                    vb += wv * pb * pb;
                    cov += wv * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            ++count;
        }
    return total / static_cast<double>(count);
}

double angular_error_deg(const Image& pred_enc, const Image& gt_enc, const Image& mask) {
    if (!pred_enc.same_shape(gt_enc)) throw std::invalid_argument("angular_error: shape mismatch");
    if (pred_enc.c != 3) throw std::invalid_argument("angular_error: expected 3 channels");
    if (mask.h != pred_enc.h || mask.w != pred_enc.w)
        throw std::invalid_argument("angular_error: mask shape mismatch");
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < pred_enc.h; ++y)
        for (int x = 0; x < pred_enc.w; ++x) {
            if (mask.at(y, x, 0) < 0.5f) continue;
            Vec3 p{2.0 * pred_enc.at(y, x, 0) - 1.0, 2.0 * pred_enc.at(y, x, 1) - 1.0,
                   2.0 * pred_enc.at(y, x, 2) - 1.0};
            Vec3 g{2.0 * gt_enc.at(y, x, 0) - 1.0, 2.0 * gt_enc.at(y, x, 1) - 1.0,
                   2.0 * gt_enc.at(y, x, 2) - 1.0};
            double denom = std::max(length(p) * length(g), 1e-12);
            double c = std::clamp(dot(p, g) / denom, -1.0, 1.0);
            total += std::acos(c) * 180.0 / 3.14159265358979323846;
            ++count;
        }
    return count ? total / static_cast<double>(count) : 0.0;
}

double rmse(const Image& a, const Image& b, const Image* mask) {
    if (!a.same_shape(b)) throw std::invalid_argument("rmse: shape mismatch");
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            if (mask && mask->at(y, x, 0) < 0.5f) continue;
            for (int c = 0; c < a.c; ++c) {
                double d = static_cast<double>(a.at(y, x, c)) - b.at(y, x, c);
                total += d * d;
                ++count;
            }
        }
    return count ? std::sqrt(total / static_cast<double>(count)) : 0.0;
}

double perceptual_proxy_metric(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("proxy: shape mismatch");
    Tensor<float> ta({1, a.h, a.w, a.c});
    Tensor<float> tb({1, a.h, a.w, a.c});
    std::copy(a.v.begin(), a.v.end(), ta.v.begin());
    std::copy(b.v.begin(), b.v.end(), tb.v.begin());
    auto loss = loss_perceptual_proxy(constant(std::move(ta)), constant(std::move(tb)));
    return static_cast<double>(loss->val.v[0]);
}

MetricReport compare_clips(const std::vector<Image>& pred, const std::vector<Image>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("compare_clips: clip length mismatch");
    MetricReport r;
    for (size_t i = 0; i < pred.size(); ++i) {
        FrameMetrics fm;
        fm.psnr = psnr(pred[i], gt[i]);
        fm.ssim = ssim(pred[i], gt[i]);
        fm.proxy = perceptual_proxy_metric(pred[i], gt[i]);
        r.psnr += fm.psnr;
        r.ssim += fm.ssim;
        r.proxy += fm.proxy;
        r.frames.push_back(fm);
    }
    r.psnr /= static_cast<double>(pred.size());
    r.ssim /= static_cast<double>(pred.size());
    r.proxy /= static_cast<double>(pred.size());
    return r;
}

namespace {
json num_or_inf(double v) {
    if (std::isinf(v)) return "inf";
    if (std::isnan(v)) return nullptr;
    return v;
}
}  // namespace

std::string report_to_json(const MetricReport& r) {
    json j;
    j["aggregate"] = {{"psnr", num_or_inf(r.psnr)},
                      {"ssim", num_or_inf(r.ssim)},
                      {"perceptual_proxy", num_or_inf(r.proxy)}};
    if (!std::isnan(r.angular_deg)) j["aggregate"]["angular_deg"] = r.angular_deg;
    if (!std::isnan(r.rmse)) j["aggregate"]["rmse"] = r.rmse;
    j["perceptual_metric"] = "multi_scale_gradient_proxy (not LPIPS)";
    j["frames"] = json::array();
    for (const auto& f : r.frames)
        j["frames"].push_back({{"psnr", num_or_inf(f.psnr)},
                               {"ssim", num_or_inf(f.ssim)},
                               {"perceptual_proxy", num_or_inf(f.proxy)}});
    if (!r.metadata.empty()) {
        json m = json::parse(r.metadata, nullptr, false);
        j["metadata"] = m.is_discarded() ? json(r.metadata) : m;
    }
    return j.dump(2);
}

std::string report_to_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "frame,psnr,ssim,perceptual_proxy\n";
    for (size_t i = 0; i < r.frames.size(); ++i)
        os << i << "," << r.frames[i].psnr << "," << r.frames[i].ssim << "," << r.frames[i].proxy
           << "\n";
    os << "mean," << r.psnr << "," << r.ssim << "," << r.proxy << "\n";
    return os.str();
}

void write_report(const MetricReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_report: cannot open " + path);
    os << report_to_json(r) << "\n";
}

VarianceReport variance_over_runs(const std::function<std::vector<Image>()>& render, int n_runs,
                                  const std::vector<Image>& gt) {
    if (n_runs < 1) throw std::invalid_argument("variance_over_runs: n_runs must be >= 1");
    VarianceReport rep;
    rep.runs = n_runs;
    std::vector<Image> first;
    std::vector<double> psnrs, ssims, proxies;
    for (int run = 0; run < n_runs; ++run) {
        std::vector<Image> out = render();
        if (run == 0) {
            first = out;
        } else {
            for (size_t i = 0; i < out.size(); ++i)
                for (size_t j = 0; j < out[i].size(); ++j)
                    rep.max_pixel_deviation =
                        std::max(rep.max_pixel_deviation,
                                 static_cast<double>(std::abs(out[i].v[j] - first[i].v[j])));
        }
        MetricReport mr = compare_clips(out, gt);
        psnrs.push_back(mr.psnr);
        ssims.push_back(mr.ssim);
        proxies.push_back(mr.proxy);
    }
    auto variance = [](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        bool all_equal = true;
        for (double x : v)
            if (x != v[0]) all_equal = false;
        if (all_equal) return 0.0;  // deterministic runs report exactly zero
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size());
    };
    rep.psnr_variance = variance(psnrs);
    rep.ssim_variance = variance(ssims);
    rep.proxy_variance = variance(proxies);
    return rep;
}

}  // namespace rf
