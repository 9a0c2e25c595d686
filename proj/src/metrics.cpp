// SPDX-License-Identifier: Apache-2.0
#include "ivfuse/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace ivfuse {

namespace {

void check_triple(const Image& f, const Image& v, const Image& i, const char* what) {
  if (!f.is_gray() || !v.is_gray() || !i.is_gray())
    throw InvalidChannelCount(std::string(what) + ": metrics expect gray images");
  if (f.height() != v.height() || f.width() != v.width() || f.height() != i.height() ||
      f.width() != i.width())
    throw ShapeError(std::string(what) + ": shape mismatch");
}

double pearson(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  const Eigen::ArrayXXd ca = a - a.mean();
  const Eigen::ArrayXXd cb = b - b.mean();
  const double va = (ca * ca).sum();
  const double vb = (cb * cb).sum();
  if (va <= 0.0 || vb <= 0.0) return 0.0;  // constant-image guard
  return (ca * cb).sum() / std::sqrt(va * vb);
}

Eigen::ArrayXXd to_byte(const Image& img) {
  return img.range == Range::Byte ? img.plane() : Eigen::ArrayXXd(img.plane() * 255.0);
}

Eigen::ArrayXXd to_unit(const Image& img) {
  return img.range == Range::Unit ? img.plane() : Eigen::ArrayXXd(img.plane() / 255.0);
}

// separable [1,2,1]/4 blur with replicate padding
Eigen::ArrayXXd blur121(const Eigen::ArrayXXd& x) {
  const int h = static_cast<int>(x.rows()), w = static_cast<int>(x.cols());
  Eigen::ArrayXXd t(h, w), out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int jm = std::max(j - 1, 0), jp = std::min(j + 1, w - 1);
      t(i, j) = 0.25 * x(i, jm) + 0.5 * x(i, j) + 0.25 * x(i, jp);
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int im = std::max(i - 1, 0), ip = std::min(i + 1, h - 1);
      out(i, j) = 0.25 * t(im, j) + 0.5 * t(i, j) + 0.25 * t(ip, j);
    }
  return out;
}

Eigen::ArrayXXd downsample2(const Eigen::ArrayXXd& x) {
  const Eigen::ArrayXXd b = blur121(x);
  Eigen::ArrayXXd out((x.rows() + 1) / 2, (x.cols() + 1) / 2);
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) = b(2 * i, 2 * j);
  return out;
}

Eigen::ArrayXXd upsample2(const Eigen::ArrayXXd& x, int h, int w) {
  Eigen::ArrayXXd out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out(i, j) = x(std::min<int>(i / 2, x.rows() - 1), std::min<int>(j / 2, x.cols() - 1));
  return blur121(out);
}

Eigen::ArrayXXd box3_mean(const Eigen::ArrayXXd& x) {
  const int h = static_cast<int>(x.rows()), w = static_cast<int>(x.cols());
  Eigen::ArrayXXd out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v)
          acc += x(std::clamp(i + u, 0, h - 1), std::clamp(j + v, 0, w - 1));
      out(i, j) = acc / 9.0;
    }
  return out;
}

/// K-1 bandpass levels plus the final lowpass, each divided by local mean
/// absolute activity + stabilizer.
std::vector<Eigen::ArrayXXd> normalized_pyramid(const Eigen::ArrayXXd& img, int levels) {
  std::vector<Eigen::ArrayXXd> bands;
  Eigen::ArrayXXd current = img;
  for (int k = 0; k < levels - 1; ++k) {
    Eigen::ArrayXXd down = downsample2(current);
    Eigen::ArrayXXd band =
        current - upsample2(down, static_cast<int>(current.rows()),
                            static_cast<int>(current.cols()));
    bands.push_back(std::move(band));
    current = std::move(down);
  }
  bands.push_back(current);
  for (auto& band : bands) {
    const Eigen::ArrayXXd activity = box3_mean(band.abs());
    band = band / (activity + kNlpdStabilizer);
  }
  return bands;
}

double nlpd_pair(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int levels) {
  const auto pa = normalized_pyramid(a, levels);
  const auto pb = normalized_pyramid(b, levels);
  double acc = 0;
  for (int k = 0; k < levels; ++k) {
    acc += std::sqrt((pa[k] - pb[k]).square().mean());
  }
  return acc / levels;
}

struct EdgeField {
  Eigen::ArrayXXd strength;
  Eigen::ArrayXXd angle;  // atan2(gy, gx) folded into (-pi/2, pi/2]
};

EdgeField edge_field(const Image& img) {
  const Eigen::ArrayXXd gx = conv3x3_replicate(img.plane(), sobel_kernel_x());
  const Eigen::ArrayXXd gy = conv3x3_replicate(img.plane(), sobel_kernel_y());
  EdgeField e;
  e.strength = (gx.square() + gy.square()).sqrt();
  e.angle = Eigen::ArrayXXd::Zero(gx.rows(), gx.cols());
  for (int i = 0; i < gx.rows(); ++i)
    for (int j = 0; j < gx.cols(); ++j)
      e.angle(i, j) = gx(i, j) == 0.0 && gy(i, j) == 0.0
                          ? 0.0
                          : std::atan(gy(i, j) / (gx(i, j) == 0.0 ? 1e-30 : gx(i, j)));
  return e;
}

// Xydeas-Petrovic edge preservation, sigmoid model constants
constexpr double kGammaG = 0.9994, kKappaG = -15.0, kSigmaG = 0.5;
constexpr double kGammaA = 0.9879, kKappaA = -22.0, kSigmaA = 0.8;

double edge_preservation(double g_src, double a_src, double g_f, double a_f) {
  double ratio;
  if (g_src == 0.0 && g_f == 0.0)
    ratio = 1.0;
  else if (g_src > g_f)
    ratio = g_f / g_src;
  else
    ratio = g_src / g_f;
  const double ang = 1.0 - std::abs(a_src - a_f) / (M_PI / 2.0);
  const double qg = kGammaG / (1.0 + std::exp(kKappaG * (ratio - kSigmaG)));
  const double qa = kGammaA / (1.0 + std::exp(kKappaA * (ang - kSigmaA)));
  return qg * qa;
}

}  // namespace

double metric_cc(const Image& f, const Image& v, const Image& i) {
  check_triple(f, v, i, "cc");
  return 0.5 * (pearson(f.plane(), v.plane()) + pearson(f.plane(), i.plane()));
}

double metric_scd(const Image& f, const Image& v, const Image& i) {
  check_triple(f, v, i, "scd");
  return pearson(f.plane() - v.plane(), i.plane()) +
         pearson(f.plane() - i.plane(), v.plane());
}

double metric_psnr(const Image& f, const Image& v, const Image& i) {
  check_triple(f, v, i, "psnr");
  const Eigen::ArrayXXd fb = to_byte(f), vb = to_byte(v), ib = to_byte(i);
  const double mse = 0.5 * ((fb - vb).square().mean() + (fb - ib).square().mean());
  if (mse < 255.0 * 255.0 * 1e-10) return 100.0;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double metric_nabf(const Image& f, const Image& v, const Image& i) {
  check_triple(f, v, i, "nabf");
  const EdgeField ef = edge_field(f), ev = edge_field(v), ei = edge_field(i);
  constexpr double kWeightExp = 1.5;
  double num = 0, den = 0;
  for (int r = 0; r < ef.strength.rows(); ++r)
    for (int c = 0; c < ef.strength.cols(); ++c) {
      const double wv = std::pow(ev.strength(r, c), kWeightExp);
      const double wi = std::pow(ei.strength(r, c), kWeightExp);
      den += wv + wi;
      const bool artifact = ef.strength(r, c) > ev.strength(r, c) &&
                            ef.strength(r, c) > ei.strength(r, c);
      if (!artifact) continue;
      const double qvf = edge_preservation(ev.strength(r, c), ev.angle(r, c),
                                           ef.strength(r, c), ef.angle(r, c));
      const double qif = edge_preservation(ei.strength(r, c), ei.angle(r, c),
                                           ef.strength(r, c), ef.angle(r, c));
      num += (1.0 - qvf) * (1.0 - qif) * (wv + wi);
    }
  return den > 0.0 ? num / den : 0.0;
}

double metric_nlpd(const Image& f, const Image& v, const Image& i, int levels) {
  check_triple(f, v, i, "nlpd");
  const int min_dim = std::min(f.height(), f.width());
  if (min_dim < (1 << levels))
    throw ConfigError("nlpd: image smaller than 2^levels");
  const Eigen::ArrayXXd fu = to_unit(f), vu = to_unit(v), iu = to_unit(i);
  return 0.5 * (nlpd_pair(fu, vu, levels) + nlpd_pair(fu, iu, levels));
}

MetricRow compute_row(const std::string& name, const Image& f, const Image& v,
                      const Image& i) {
  MetricRow row;
  row.name = name;
  row.cc = metric_cc(f, v, i);
  row.scd = metric_scd(f, v, i);
  row.psnr = metric_psnr(f, v, i);
  row.nabf = metric_nabf(f, v, i);
  row.nlpd = metric_nlpd(f, v, i);
  return row;
}

MetricReport evaluate(const std::string& dir_v, const std::string& dir_i,
                      const std::string& dir_f) {
  namespace fs = std::filesystem;
  auto stems = [](const std::string& dir) {
    std::map<std::string, fs::path> m;
    if (!fs::is_directory(dir)) throw DataError("evaluate: not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".png") m[e.path().stem().string()] = e.path();
    return m;
  };
  const auto sv = stems(dir_v), si = stems(dir_i), sf = stems(dir_f);
  std::vector<std::string> matched;
  std::set<std::string> all;
  for (const auto& [k, _] : sv) all.insert(k);
  for (const auto& [k, _] : si) all.insert(k);
  for (const auto& [k, _] : sf) all.insert(k);
  std::string unmatched;
  for (const auto& k : all) {
    if (sv.count(k) && si.count(k) && sf.count(k))
      matched.push_back(k);
    else
      unmatched += " " + k;
  }
  if (matched.empty())
    throw DataError("evaluate: no matched stems; unmatched:" + unmatched);

  MetricReport report;
  std::sort(matched.begin(), matched.end());
  for (const auto& k : matched) {
    const Image v = luma(read_png(sv.at(k).string()));
    const Image i = luma(read_png(si.at(k).string()));
    const Image f = luma(read_png(sf.at(k).string()));
    report.rows.push_back(compute_row(k, f, v, i));
  }
  MetricRow agg;
  agg.name = "mean";
  for (const auto& r : report.rows) {
    agg.cc += r.cc;
    agg.scd += r.scd;
    agg.psnr += r.psnr;
    agg.nabf += r.nabf;
    agg.nlpd += r.nlpd;
  }
  const double n = static_cast<double>(report.rows.size());
  agg.cc /= n;
  agg.scd /= n;
  agg.psnr /= n;
  agg.nabf /= n;
  agg.nlpd /= n;
  report.aggregate = agg;

  const auto now = std::chrono::system_clock::now();
  report.timestamp = std::to_string(
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count());
  return report;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("write_report_csv: cannot write " + path);
  os << "name,cc,scd,psnr,nabf,nlpd\n";
  auto line = [&](const MetricRow& r) {
    os << r.name << "," << r.cc << "," << r.scd << "," << r.psnr << "," << r.nabf << ","
       << r.nlpd << "\n";
  };
  for (const auto& r : report.rows) line(r);
  line(report.aggregate);
}

void write_report_json(const MetricReport& report, const std::string& path) {
  nlohmann::json j;
  auto row_json = [](const MetricRow& r) {
    return nlohmann::json{{"name", r.name}, {"cc", r.cc},     {"scd", r.scd},
                          {"psnr", r.psnr}, {"nabf", r.nabf}, {"nlpd", r.nlpd}};
  };
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
  j["aggregate"] = row_json(report.aggregate);
  j["metadata"] = {{"dataset", report.dataset},
                   {"method", report.method},
                   {"timestamp", report.timestamp}};
  std::ofstream os(path);
  if (!os) throw IoError("write_report_json: cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace ivfuse
