#include "mifcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mifcn {

std::string to_string(const Measure& m, int precision) {
  switch (m.flag) {
    case Measure::Flag::Infinite: return "inf";
    case Measure::Flag::Undefined: return "nan";
    case Measure::Flag::None: break;
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << m.value;
  return os.str();
}

double mse(const Tensor& x, const Tensor& ref) {
  require_same_shape(x, ref, "mse");
  require(!x.empty(), "mse: empty images");
  return (x.array() - ref.array()).square().mean();
}

Measure psnr(const Tensor& x, const Tensor& ref, double peak) {
  const double err = mse(x, ref);
  if (err == 0.0) return Measure::infinite();
  return {10.0 * std::log10(peak * peak / err)};
}

RoiStats roi_stats(const Tensor& image, const Rect& rect) {
  require(image.rank() == 2, "roi_stats: image must be [H,W]");
  require(rect.area() >= 1 && rect.inside(image.dim(0), image.dim(1)),
          "roi_stats: rectangle (" + std::to_string(rect.top) + "," + std::to_string(rect.left) + " " +
              std::to_string(rect.height) + "x" + std::to_string(rect.width) + ") outside image " +
              shape_string(image.shape()));
  // Welford accumulation.
  double mean = 0.0, m2 = 0.0;
  Index n = 0;
  for (Index r = rect.top; r < rect.bottom(); ++r) {
    for (Index c = rect.left; c < rect.right(); ++c) {
      const double v = image(r, c);
      ++n;
      const double delta = v - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (v - mean);
    }
  }
  return {mean, std::sqrt(std::max(m2, 0.0) / static_cast<double>(n))};
}

namespace {

Measure ratio(double num, double den) {
  if (den != 0.0) return {num / den};
  return num == 0.0 ? Measure::undefined() : Measure::infinite();
}

Measure mean_of(std::span<const Measure> terms) {
  double total = 0.0;
  bool infinite = false;
  for (const Measure& m : terms) {
    if (m.flag == Measure::Flag::Undefined) return Measure::undefined();
    if (m.flag == Measure::Flag::Infinite) infinite = true;
    total += m.value;
  }
  if (infinite) return Measure::infinite();
  return {total / static_cast<double>(terms.size())};
}

}  // namespace

Measure msr(const Tensor& image, std::span<const NamedRect> foreground) {
  require(!foreground.empty(), "msr: need at least one foreground ROI");
  std::vector<Measure> terms;
  for (const auto& roi : foreground) {
    const RoiStats s = roi_stats(image, roi.rect);
    terms.push_back(s.sd == 0.0 ? Measure::infinite() : Measure{s.mean / s.sd});
  }
  return mean_of(terms);
}

Measure cnr(const Tensor& image, std::span<const NamedRect> foreground, const Rect& background) {
  require(!foreground.empty(), "cnr: need at least one foreground ROI");
  const RoiStats bg = roi_stats(image, background);
  std::vector<Measure> terms;
  bool any_variance = bg.sd != 0.0;
  for (const auto& roi : foreground) {
    const RoiStats s = roi_stats(image, roi.rect);
    any_variance = any_variance || s.sd != 0.0;
    terms.push_back(ratio(s.mean - bg.mean, std::sqrt(s.sd * s.sd + bg.sd * bg.sd)));
  }
  if (!any_variance) return Measure::undefined();
  return mean_of(terms);
}

Measure enl(const Tensor& image, const Rect& background) {
  require(background.area() >= 2, "enl: background ROI needs at least two pixels");
  const RoiStats s = roi_stats(image, background);
  if (s.sd == 0.0) return Measure::infinite();
  return {(s.mean * s.mean) / (s.sd * s.sd)};
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "wilcoxon_signed_rank: samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) diffs.push_back(a[i] - b[i]);

  WilcoxonResult result;
  result.n = diffs.size();
  if (diffs.empty()) {
    result.all_zero = true;
    return result;
  }

  // Doubled average ranks of |d| are integers, so the null distribution lives on a lattice.
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long doubled = static_cast<long>(i + j + 2);  // (i+1) + (j+1)
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (diffs[i] > 0) w2 += rank2[i];
  result.w_plus = static_cast<double>(w2) / 2.0;

  if (n <= kWilcoxonExactLimit) {
    const long total = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s)
        if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s <= w2) lower += ways[static_cast<std::size_t>(s)];
      if (s >= w2) upper += ways[static_cast<std::size_t>(s)];
    }
    result.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    result.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(result.w_plus - mean) - 0.5) / std::sqrt(var);
    result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    result.exact = false;
  }
  return result;
}

ImageMetrics evaluate_image(const std::string& id, const Tensor& image, const Tensor& reference, const RoiSpec* rois) {
  ImageMetrics m;
  m.id = id;
  m.psnr = psnr(image, reference);
  if (rois) {
    rois->check(image.dim(0), image.dim(1));
    m.msr = msr(image, rois->foreground);
    m.cnr = cnr(image, rois->foreground, rois->background);
    m.enl = enl(image, rois->background);
  }
  return m;
}

Summary summarize(std::span<const Measure> values) {
  Summary s;
  double total = 0.0;
  for (const Measure& m : values) {
    if (!m.finite()) {
      ++s.excluded;
      continue;
    }
    total += m.value;
    ++s.count;
  }
  if (s.count == 0) return s;
  s.mean = total / static_cast<double>(s.count);
  double sq = 0.0;
  for (const Measure& m : values)
    if (m.finite()) sq += (m.value - s.mean) * (m.value - s.mean);
  s.sd = std::sqrt(sq / static_cast<double>(s.count));
  return s;
}

namespace {

template <typename Get>
std::vector<Measure> column(const std::vector<ImageMetrics>& rows, Get get) {
  std::vector<Measure> out;
  for (const auto& r : rows)
    if (auto v = get(r)) out.push_back(*v);
  return out;
}

std::optional<Measure> get_psnr(const ImageMetrics& m) { return m.psnr; }
std::optional<Measure> get_msr(const ImageMetrics& m) { return m.msr; }
std::optional<Measure> get_cnr(const ImageMetrics& m) { return m.cnr; }
std::optional<Measure> get_enl(const ImageMetrics& m) { return m.enl; }

std::optional<WilcoxonResult> paired(const std::vector<Measure>& a, const std::vector<Measure>& b) {
  if (a.empty() || a.size() != b.size()) return std::nullopt;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].finite() || !b[i].finite()) continue;
    x.push_back(a[i].value);
    y.push_back(b[i].value);
  }
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < x.size(); ++i) nonzero += (x[i] != y[i]);
  if (nonzero != 0 && nonzero < 5) return std::nullopt;
  return wilcoxon_signed_rank(x, y);
}

}  // namespace

MetricReport make_report(std::vector<ImageMetrics> rows) {
  MetricReport report;
  report.rows = std::move(rows);
  report.psnr = summarize(column(report.rows, get_psnr));
  report.msr = summarize(column(report.rows, get_msr));
  report.cnr = summarize(column(report.rows, get_cnr));
  report.enl = summarize(column(report.rows, get_enl));
  return report;
}

void attach_wilcoxon(MetricReport& report, const MetricReport& other) {
  require(report.rows.size() == other.rows.size(), "attach_wilcoxon: reports cover different image counts");
  for (std::size_t i = 0; i < report.rows.size(); ++i)
    require(report.rows[i].id == other.rows[i].id,
            "attach_wilcoxon: image ids differ ('" + report.rows[i].id + "' vs '" + other.rows[i].id + "')");
  report.psnr_p = paired(column(report.rows, get_psnr), column(other.rows, get_psnr));
  report.msr_p = paired(column(report.rows, get_msr), column(other.rows, get_msr));
  report.cnr_p = paired(column(report.rows, get_cnr), column(other.rows, get_cnr));
  report.enl_p = paired(column(report.rows, get_enl), column(other.rows, get_enl));
}

void write_report_table(std::ostream& os, const MetricReport& report) {
  const auto cell = [](const std::optional<Measure>& m) { return m ? to_string(*m, 2) : std::string("-"); };
  std::size_t id_width = 5;
  for (const auto& r : report.rows) id_width = std::max(id_width, r.id.size());
  os << std::left << std::setw(static_cast<int>(id_width)) << "image" << std::right << std::setw(10) << "PSNR"
     << std::setw(10) << "MSR" << std::setw(10) << "CNR" << std::setw(12) << "ENL" << '\n';
  for (const auto& r : report.rows)
    os << std::left << std::setw(static_cast<int>(id_width)) << r.id << std::right << std::setw(10) << cell(r.psnr)
       << std::setw(10) << cell(r.msr) << std::setw(10) << cell(r.cnr) << std::setw(12) << cell(r.enl) << '\n';
  const auto stat = [](const Summary& s, bool mean, int width) {
    std::ostringstream v;
    if (s.count == 0)
      v << "-";
    else
      v << std::fixed << std::setprecision(2) << (mean ? s.mean : s.sd);
    std::ostringstream out;
    out << std::setw(width) << v.str();
    return out.str();
  };
  for (bool mean : {true, false})
    os << std::left << std::setw(static_cast<int>(id_width)) << (mean ? "mean" : "sd") << std::right
       << stat(report.psnr, mean, 10) << stat(report.msr, mean, 10) << stat(report.cnr, mean, 10)
       << stat(report.enl, mean, 12) << '\n';
  if (report.psnr_p || report.msr_p || report.cnr_p || report.enl_p) {
    const auto pcell = [](const std::optional<WilcoxonResult>& w, int width) {
      std::ostringstream v;
      if (w)
        v << std::setprecision(3) << w->p_value << (w->p_value < 0.05 ? "*" : "");
      else
        v << "-";
      std::ostringstream out;
      out << std::setw(width) << v.str();
      return out.str();
    };
    os << std::left << std::setw(static_cast<int>(id_width)) << "p" << std::right << pcell(report.psnr_p, 10)
       << pcell(report.msr_p, 10) << pcell(report.cnr_p, 10) << pcell(report.enl_p, 12) << '\n';
  }
}

void write_report_csv(std::ostream& os, const MetricReport& report) {
  const auto cell = [](const std::optional<Measure>& m) {
    if (!m) return std::string();
    if (!m->finite()) return to_string(*m);
    std::ostringstream v;
    v << std::setprecision(17) << m->value;
    return v.str();
  };
  os << "image,psnr,msr,cnr,enl\n";
  for (const auto& r : report.rows)
    os << r.id << ',' << cell(r.psnr) << ',' << cell(r.msr) << ',' << cell(r.cnr) << ',' << cell(r.enl) << '\n';
}

}  // namespace mifcn
