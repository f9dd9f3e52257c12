#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mifcn/dataset.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn {

/// A metric value that may be degenerate. `flag` says why `value` is not an ordinary number:
/// Infinite for a zero denominator with nonzero numerator (identical images, flat ROI),
/// Undefined when both vanish.
struct Measure {
  enum class Flag { None, Infinite, Undefined };

  double value = 0.0;
  Flag flag = Flag::None;

  bool finite() const { return flag == Flag::None; }
  static Measure infinite() { return {std::numeric_limits<double>::infinity(), Flag::Infinite}; }
  static Measure undefined() { return {std::numeric_limits<double>::quiet_NaN(), Flag::Undefined}; }
};

std::string to_string(const Measure& m, int precision = 4);

/// Population mean and standard deviation of a region.
struct RoiStats {
  double mean = 0.0;
  double sd = 0.0;
};

double mse(const Tensor& x, const Tensor& ref);

/// 10 log10(peak^2 / MSE); infinite when the images agree exactly.
Measure psnr(const Tensor& x, const Tensor& ref, double peak = 255.0);

RoiStats roi_stats(const Tensor& image, const Rect& rect);

/// Mean over foreground ROIs of mu / sigma.
Measure msr(const Tensor& image, std::span<const NamedRect> foreground);

/// Mean over foreground ROIs of (mu_m - mu_b) / sqrt(sigma_m^2 + sigma_b^2).
Measure cnr(const Tensor& image, std::span<const NamedRect> foreground, const Rect& background);

/// mu_b^2 / sigma_b^2 over the background ROI.
Measure enl(const Tensor& image, const Rect& background);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;     // sum of ranks of positive differences
  std::size_t n = 0;       // pairs left after dropping zero differences
  bool exact = true;
  bool all_zero = false;   // every difference vanished; p reported as 1
};

/// Two-sided Wilcoxon signed-rank test of a - b. Zero differences are dropped and tied
/// magnitudes share their average rank. For n <= 25 the null distribution of W+ is counted
/// exactly over all 2^n sign assignments; above that a tie-corrected normal approximation with
/// continuity correction is used.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

inline constexpr std::size_t kWilcoxonExactLimit = 25;

/// Metrics for one image. MSR/CNR/ENL are absent when no ROI specification was supplied.
struct ImageMetrics {
  std::string id;
  Measure psnr;
  std::optional<Measure> msr;
  std::optional<Measure> cnr;
  std::optional<Measure> enl;
};

ImageMetrics evaluate_image(const std::string& id, const Tensor& image, const Tensor& reference,
                            const RoiSpec* rois);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;      // finite values that entered mean/sd
  std::size_t excluded = 0;   // flagged values left out
};

/// Mean and population SD over the finite entries.
Summary summarize(std::span<const Measure> values);

struct MetricReport {
  std::vector<ImageMetrics> rows;
  Summary psnr, msr, cnr, enl;
  /// Paired two-sided p-values against a comparison result set, when one was given.
  std::optional<WilcoxonResult> psnr_p, msr_p, cnr_p, enl_p;
};

MetricReport make_report(std::vector<ImageMetrics> rows);

/// Adds paired Wilcoxon p-values for every metric present in both reports (same image ids,
/// same order).
void attach_wilcoxon(MetricReport& report, const MetricReport& other);

void write_report_table(std::ostream& os, const MetricReport& report);
/// `image,psnr,msr,cnr,enl` rows; flagged values print as inf / nan, absent ones empty.
void write_report_csv(std::ostream& os, const MetricReport& report);

}  // namespace mifcn
