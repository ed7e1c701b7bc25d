#pragma once

#include <complex>
#include <vector>

namespace ccs {

// In-place iterative radix-2 FFT. n must be a power of two.
// Forward is unscaled; inverse divides by n.
void fft_pow2(std::vector<std::complex<double>>* data, bool inverse);

// FFT for arbitrary length via Bluestein's chirp-z when n is not a power of
// two. Same scaling convention as fft_pow2.
void fft_any(std::vector<std::complex<double>>* data, bool inverse);

}  // namespace ccs
