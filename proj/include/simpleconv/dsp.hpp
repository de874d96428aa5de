#pragma once

// Signal conditioning primitives: a 4th-order Butterworth high-pass usable in
// zero-phase (forward-backward) or causal form, and a polyphase Kaiser-sinc
// resampler. Multichannel signals are Eigen matrices, channels x samples, in
// double precision.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace simpleconv::dsp {

/// Transfer-function IIR coefficients, denominator normalised to a[0] = 1.
/// max_pole_radius records the slowest digital pole so edge padding can be
/// sized to the filter's real settle time.
struct Iir {
  std::vector<double> b, a;
  double max_pole_radius = 0.0;
  int order() const { return static_cast<int>(a.size()) - 1; }

  /// Samples until the impulse response decays below `atten`.
  Eigen::Index settle_samples(double atten = 1e-9) const {
    if (max_pole_radius <= 0.0 || max_pole_radius >= 1.0) return 3 * (order() + 1);
    return static_cast<Eigen::Index>(std::ceil(std::log(atten) / std::log(max_pole_radius)));
  }
};

namespace detail {

// Expand prod (x - r_i) into monic polynomial coefficients, highest power
// first. Roots must come in conjugate pairs for a real result.
inline std::vector<double> real_poly(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    c.push_back(0.0);
    for (std::size_t i = c.size() - 1; i >= 1; --i) c[i] -= r * c[i - 1];
  }
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

}  // namespace detail

/// Butterworth high-pass via the analog prototype, high-pass transform and
/// bilinear mapping with cutoff pre-warping.
inline Iir butter_highpass(double fc, double fs, int order = 4) {
  if (fc <= 0.0) throw std::invalid_argument("butter_highpass: cutoff must be positive");
  if (fs <= 2.0 * fc)
    throw std::invalid_argument("butter_highpass: fs must exceed 2*fc (fs=" +
                                std::to_string(fs) + ", fc=" + std::to_string(fc) + ")");
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double warped = 2.0 * fs * std::tan(pi * fc / fs);

  // Unit-circle low-pass prototype poles, mapped by s -> warped / s. The
  // transform plants `order` zeros at s = 0 and leaves the gain at 1.
  std::vector<cd> poles, zeros;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * (2.0 * k + 1.0) / (2.0 * order) + pi / 2.0;
    poles.push_back(warped / std::polar(1.0, theta));
    zeros.push_back(cd(0.0, 0.0));
  }

  // Bilinear transform s = 2 fs (z-1)/(z+1).
  const double fs2 = 2.0 * fs;
  cd num(1.0, 0.0), den(1.0, 0.0);
  std::vector<cd> zd, pd;
  for (const cd& z : zeros) {
    zd.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const cd& p : poles) {
    pd.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  const double k_z = (num / den).real();

  Iir f;
  f.b = detail::real_poly(zd);
  for (double& v : f.b) v *= k_z;
  f.a = detail::real_poly(pd);
  for (const cd& p : pd) f.max_pole_radius = std::max(f.max_pole_radius, std::abs(p));
  return f;
}

/// Steady-state filter state for a unit-step input (transposed direct form
/// II). Scaling by x[0] before filtering suppresses the DC startup transient.
inline std::vector<double> filter_zi(const Iir& f) {
  const int n = f.order();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  // I - companion(a)^T
  for (int i = 0; i < n; ++i) m(i, 0) += f.a[static_cast<std::size_t>(i) + 1];
  for (int i = 0; i + 1 < n; ++i) m(i, i + 1) -= 1.0;
  Eigen::VectorXd rhs(n);
  for (int i = 0; i < n; ++i)
    rhs(i) = f.b[static_cast<std::size_t>(i) + 1] - f.a[static_cast<std::size_t>(i) + 1] * f.b[0];
  Eigen::VectorXd zi = m.partialPivLu().solve(rhs);
  return {zi.data(), zi.data() + n};
}

/// One-pass IIR filter (transposed direct form II) with explicit initial
/// state; the state is left at its final value for streaming use.
inline void filter_inplace(const Iir& f, const double* x, double* y, Eigen::Index n,
                           std::vector<double>& z) {
  const int ord = f.order();
  if (static_cast<int>(z.size()) != ord) throw std::invalid_argument("filter: bad state size");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = f.b[0] * xi + z[0];
    for (int j = 0; j < ord - 1; ++j)
      z[static_cast<std::size_t>(j)] = f.b[static_cast<std::size_t>(j) + 1] * xi -
                                       f.a[static_cast<std::size_t>(j) + 1] * yi +
                                       z[static_cast<std::size_t>(j) + 1];
    z[static_cast<std::size_t>(ord) - 1] =
        f.b[static_cast<std::size_t>(ord)] * xi - f.a[static_cast<std::size_t>(ord)] * yi;
    y[i] = yi;
  }
}

/// Zero-phase forward-backward filtering with odd-symmetric edge extension
/// and steady-state initial conditions, applied per row. The extension is
/// sized from the filter's settle time (capped at T-1) so that low cutoffs,
/// whose transients ring for hundreds of samples, stay out of the signal.
inline Eigen::MatrixXd filtfilt(const Iir& f, const Eigen::MatrixXd& x) {
  const Eigen::Index C = x.rows(), T = x.cols();
  const Eigen::Index min_pad = 3 * (static_cast<Eigen::Index>(f.a.size()));
  if (T <= min_pad)
    throw std::invalid_argument("filtfilt: signal length " + std::to_string(T) +
                                " must exceed the minimum edge padding of " +
                                std::to_string(min_pad));
  const Eigen::Index padlen = std::min<Eigen::Index>(std::max(min_pad, f.settle_samples()), T - 1);
  const std::vector<double> zi = filter_zi(f);
  const Eigen::Index n = T + 2 * padlen;
  Eigen::MatrixXd out(C, T);
  std::vector<double> ext(static_cast<std::size_t>(n)), tmp(static_cast<std::size_t>(n));
  std::vector<double> z(zi.size());

  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index i = 0; i < padlen; ++i) ext[static_cast<std::size_t>(i)] = 2.0 * x(c, 0) - x(c, padlen - i);
    for (Eigen::Index i = 0; i < T; ++i) ext[static_cast<std::size_t>(padlen + i)] = x(c, i);
    for (Eigen::Index i = 0; i < padlen; ++i)
      ext[static_cast<std::size_t>(padlen + T + i)] = 2.0 * x(c, T - 1) - x(c, T - 2 - i);

    for (std::size_t j = 0; j < zi.size(); ++j) z[j] = zi[j] * ext[0];
    filter_inplace(f, ext.data(), tmp.data(), n, z);
    std::reverse(tmp.begin(), tmp.end());
    for (std::size_t j = 0; j < zi.size(); ++j) z[j] = zi[j] * tmp[0];
    filter_inplace(f, tmp.data(), ext.data(), n, z);
    std::reverse(ext.begin(), ext.end());
    for (Eigen::Index i = 0; i < T; ++i) out(c, i) = ext[static_cast<std::size_t>(padlen + i)];
  }
  return out;
}

/// Causal single-pass variant, startup state matched to the first sample.
inline Eigen::MatrixXd causal_filter(const Iir& f, const Eigen::MatrixXd& x) {
  const Eigen::Index C = x.rows(), T = x.cols();
  const std::vector<double> zi = filter_zi(f);
  Eigen::MatrixXd out(C, T);
  std::vector<double> z(zi.size()), row(static_cast<std::size_t>(T)), y(static_cast<std::size_t>(T));
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index i = 0; i < T; ++i) row[static_cast<std::size_t>(i)] = x(c, i);
    const double x0 = T > 0 ? row[0] : 0.0;
    for (std::size_t j = 0; j < zi.size(); ++j) z[j] = zi[j] * x0;
    filter_inplace(f, row.data(), y.data(), T, z);
    for (Eigen::Index i = 0; i < T; ++i) out(c, i) = y[static_cast<std::size_t>(i)];
  }
  return out;
}

/// High-pass at fc (default 0.5 Hz): zero-phase offline, single-pass causal
/// when `causal` is set (streaming-compatible, uses no future samples).
inline Eigen::MatrixXd highpass(const Eigen::MatrixXd& x, double fs, double fc = 0.5,
                                bool causal = false) {
  const Iir f = butter_highpass(fc, fs);
  return causal ? causal_filter(f, x) : filtfilt(f, x);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Modified Bessel function of the first kind, order zero (power series).
inline double bessel_i0(double x) {
  const double y = x * x / 4.0;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 128; ++k) {
    term *= y / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

/// Best rational approximation p/q of x with q <= max_den (continued
/// fractions).
inline std::pair<std::int64_t, std::int64_t> rational_approx(double x, std::int64_t max_den) {
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = x;
  for (int it = 0; it < 64; ++it) {
    const auto a = static_cast<std::int64_t>(std::floor(r));
    if (q0 + a * q1 > max_den) break;
    const std::int64_t p2 = a * p1 + p0, q2 = a * q1 + q0;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double frac = r - static_cast<double>(a);
    if (frac < 1e-12) break;
    r = 1.0 / frac;
  }
  return {p1, q1};
}

/// Kaiser-windowed sinc low-pass prototype; `cutoff` is a fraction of the
/// Nyquist rate, taps normalised to unit DC gain, length 2*half+1.
inline std::vector<double> kaiser_lowpass(int half, double cutoff, double beta) {
  const double pi = std::numbers::pi;
  const int n = 2 * half + 1;
  std::vector<double> h(static_cast<std::size_t>(n));
  const double denom = bessel_i0(beta);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double m = i - half;
    const double t = cutoff * m;
    const double sinc = t == 0.0 ? 1.0 : std::sin(pi * t) / (pi * t);
    const double r = (i - half) / static_cast<double>(half);
    const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
    h[static_cast<std::size_t>(i)] = cutoff * sinc * w;
    sum += h[static_cast<std::size_t>(i)];
  }
  for (double& v : h) v /= sum;
  return h;
}

/// Polyphase Kaiser-sinc downsampling, anti-alias cutoff at 0.9 of the
/// target Nyquist. Output length is round(T * fs_to / fs_from); equal rates
/// return the input unchanged.
inline Eigen::MatrixXd resample(const Eigen::MatrixXd& x, double fs_from, double fs_to) {
  if (fs_to <= 0.0) throw std::invalid_argument("resample: target rate must be positive");
  if (fs_from <= 0.0) throw std::invalid_argument("resample: source rate must be positive");
  if (fs_to > fs_from)
    throw std::invalid_argument("resample: upsampling not supported (fs_to " +
                                std::to_string(fs_to) + " > fs_from " + std::to_string(fs_from) +
                                ")");
  if (fs_to == fs_from) return x;

  const Eigen::Index C = x.rows(), T = x.cols();
  const auto [L, M] = rational_approx(fs_to / fs_from, 1000);
  const Eigen::Index To = static_cast<Eigen::Index>(std::llround(T * fs_to / fs_from));
  Eigen::MatrixXd out(C, To);
  if (To == 0) return out;

  // FIR on the L-fold upsampled grid; cutoff 0.9 * (fs_to/2) as a fraction of
  // the upsampled Nyquist fs_from*L/2 equals 0.9/M for an exact L/M ratio.
  const double cutoff = std::min(1.0, 0.9 * fs_to / (fs_from * static_cast<double>(L)));
  const auto half = static_cast<std::int64_t>(10 * std::max(L, M));
  const std::vector<double> h = kaiser_lowpass(static_cast<int>(half), cutoff, 5.0);

  std::vector<double> row(static_cast<std::size_t>(T));
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index t = 0; t < T; ++t) row[static_cast<std::size_t>(t)] = x(c, t);
    for (Eigen::Index n = 0; n < To; ++n) {
      const std::int64_t u = static_cast<std::int64_t>(n) * M;  // upsampled-grid index
      // taps j = u + half - m*L must lie in [0, 2*half]; the clamp to the
      // signal also repairs truncated ceil for u < half
      const std::int64_t m0 = std::max<std::int64_t>((u - half + L - 1) / L, 0);
      const std::int64_t m1 = std::min<std::int64_t>((u + half) / L, T - 1);
      double acc = 0.0;
      for (std::int64_t m = m0; m <= m1; ++m)
        acc += row[static_cast<std::size_t>(m)] * h[static_cast<std::size_t>(u + half - m * L)];
      out(c, n) = acc * static_cast<double>(L);
    }
  }
  return out;
}

}  // namespace simpleconv::dsp
