#include "ccstereo/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace ccs {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

void fft_pow2(std::vector<std::complex<double>>* data, bool inverse) {
  auto& a = *data;
  const size_t n = a.size();
  if (n == 0) return;
  if (!is_pow2(n)) throw std::invalid_argument("fft_pow2: length must be a power of two");

  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

void fft_any(std::vector<std::complex<double>>* data, bool inverse) {
  auto& a = *data;
  const size_t n = a.size();
  if (n == 0) return;
  if (is_pow2(n)) {
    fft_pow2(data, inverse);
    return;
  }
  if (inverse) {
    for (auto& x : a) x = std::conj(x);
    fft_any(data, false);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x = std::conj(x) * inv_n;
    return;
  }

  // Bluestein: X[k] = w[k] * (c (*) d)[k] with c[j] = a[j] w[j],
  // w[j] = exp(-i pi j^2 / n), d[m] = conj(w[m]) embedded circularly.
  const size_t m = next_pow2(2 * n - 1);
  std::vector<std::complex<double>> w(n);
  for (size_t j = 0; j < n; ++j) {
    // j^2 mod 2n keeps the chirp argument small for long inputs.
    const size_t j2 = (j * j) % (2 * n);
    const double angle = -kPi * static_cast<double>(j2) / static_cast<double>(n);
    w[j] = {std::cos(angle), std::sin(angle)};
  }

  std::vector<std::complex<double>> c(m, {0.0, 0.0});
  std::vector<std::complex<double>> d(m, {0.0, 0.0});
  for (size_t j = 0; j < n; ++j) c[j] = a[j] * w[j];
  d[0] = std::conj(w[0]);
  for (size_t j = 1; j < n; ++j) {
    d[j] = std::conj(w[j]);
    d[m - j] = std::conj(w[j]);
  }

  fft_pow2(&c, false);
  fft_pow2(&d, false);
  for (size_t j = 0; j < m; ++j) c[j] *= d[j];
  fft_pow2(&c, true);

  for (size_t k = 0; k < n; ++k) a[k] = w[k] * c[k];
}

}  // namespace ccs
