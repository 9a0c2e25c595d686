// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ivfuse/imaging.hpp"

namespace ivfuse {

/// Mean Pearson correlation of the fused image against the two sources.
/// r is defined as 0 when either operand is constant.
double metric_cc(const Image& f, const Image& v, const Image& i);

/// Sum of correlations of differences: r(F-V, I) + r(F-I, V).
double metric_scd(const Image& f, const Image& v, const Image& i);

/// 10*log10(255^2 / mean MSE) on the byte scale, capped at 100 dB.
double metric_psnr(const Image& f, const Image& v, const Image& i);

/// Modified fusion-artifact measure (gradient-based, edge-preservation
/// weighted); lower is better, 0 when fused gradients never exceed both
/// sources'.
double metric_nabf(const Image& f, const Image& v, const Image& i);

/// Normalized Laplacian pyramid distance, averaged over the two sources.
double metric_nlpd(const Image& f, const Image& v, const Image& i, int levels = 4);

constexpr double kNlpdStabilizer = 0.1;

struct MetricRow {
  std::string name;
  double cc = 0, scd = 0, psnr = 0, nabf = 0, nlpd = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // sorted by name
  MetricRow aggregate;          // arithmetic means, name = "mean"
  std::string dataset;
  std::string method;
  std::string timestamp;
};

MetricRow compute_row(const std::string& name, const Image& f, const Image& v,
                      const Image& i);

/// Batch evaluation over three directories of PNGs matched by filename stem.
MetricReport evaluate(const std::string& dir_v, const std::string& dir_i,
                      const std::string& dir_f);

void write_report_csv(const MetricReport& report, const std::string& path);
void write_report_json(const MetricReport& report, const std::string& path);

}  // namespace ivfuse
