#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <fftw3.h>

#include "avsam/config.hpp"
#include "avsam/error.hpp"
#include "avsam/tensor.hpp"

namespace avsam {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Log-magnitude STFT, stored as (frequency bins, frames).
struct Spectrogram {
  Tensor values;
  SpectrogramParams params;
};

namespace wav {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

/// Decodes a PCM16 little-endian mono RIFF/WAVE byte buffer.
inline Waveform decode(const std::vector<unsigned char>& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) { throw ContractError("WAV decode error (" + origin + "): " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  int rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* h = bytes.data() + pos;
    const std::uint32_t len = read_u32(h + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) fail("truncated chunk");
    if (std::memcmp(h, "fmt ", 4) == 0) {
      if (len < 16) fail("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      if (read_u16(f) != 1) fail("only PCM format is supported");
      if (read_u16(f + 2) != 1) fail("expected mono audio, got " + std::to_string(read_u16(f + 2)) + " channels");
      rate = static_cast<int>(read_u32(f + 4));
      if (read_u16(f + 14) != 16) fail("expected 16-bit samples");
      if (rate <= 0) fail("invalid sample rate");
      have_fmt = true;
    } else if (std::memcmp(h, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (len % 2 != 0) fail("odd data length");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return w;
    }
    pos = body + len + (len & 1u);
  }
  fail("missing data chunk");
  return {};
}

inline std::vector<unsigned char> encode(const Waveform& w) {
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  auto put = [&out](const char* s) { out.insert(out.end(), s, s + 4); };
  auto u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto u16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  put("RIFF");
  u32(36 + data_len);
  put("WAVE");
  put("fmt ");
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(w.sample_rate));
  u32(static_cast<std::uint32_t>(w.sample_rate * 2));
  u16(2);
  u16(16);
  put("data");
  u32(data_len);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)))));
  }
  return out;
}

}  // namespace wav

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  require(std::filesystem::exists(path), "file not found: " + path);
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "write failed: " + path);
}

/// Linear-interpolation resampling.
inline Waveform resample(const Waveform& w, int target_rate) {
  require(w.sample_rate > 0 && target_rate > 0, "resample: sample rates must be positive");
  if (w.sample_rate == target_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(w.samples.size()) / ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, w.samples.size() - 1);
    const double t = src - static_cast<double>(i0);
    out.samples[i] = (1.0 - t) * w.samples[i0] + t * w.samples[i1];
  }
  return out;
}

/// Center-crops or symmetrically zero-pads to exactly `n` samples.
inline Waveform fit_length(const Waveform& w, std::size_t n) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(n, 0.0);
  const std::size_t len = w.samples.size();
  if (len >= n) {
    const std::size_t start = (len - n) / 2;
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(start), n, out.samples.begin());
  } else {
    const std::size_t offset = (n - len) / 2;
    std::copy(w.samples.begin(), w.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  return out;
}

inline Waveform load_waveform(const std::string& path, const SpectrogramParams& p = {}) {
  Waveform w = wav::decode(read_file_bytes(path), path);
  for (double s : w.samples) require(std::isfinite(s), "non-finite sample in " + path);
  return fit_length(resample(w, p.sample_rate), p.num_samples());
}

inline void save_waveform(const std::string& path, const Waveform& w) { write_file_bytes(path, wav::encode(w)); }

namespace dsp {

/// Reusable real-input FFT of a fixed frame size, backed by FFTW.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    require(n >= 1 && in_ && out_, "fft: invalid frame size");
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }

  /// Magnitudes of the first n/2+1 DFT bins of `frame`.
  void magnitudes(const std::vector<double>& frame, std::vector<double>& mag) {
    require(frame.size() == n_, "fft: frame size mismatch");
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    mag.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out_[k][0], out_[k][1]);
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

inline void magnitude_spectrum(const std::vector<double>& frame, std::vector<double>& mag) {
  RealFft(frame.size()).magnitudes(frame, mag);
}

/// Periodic Hann window of `win` samples, zero-padded symmetrically to `n_fft`.
inline std::vector<double> hann_window(int win, int n_fft) {
  std::vector<double> w(static_cast<std::size_t>(n_fft), 0.0);
  const int off = (n_fft - win) / 2;
  for (int i = 0; i < win; ++i)
    w[static_cast<std::size_t>(off + i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  return w;
}

}  // namespace dsp

/// log(|STFT| + eps) with frames centred at t * hop (zero padding at both
/// ends); the frame grid is truncated to floor(samples / hop) frames.
inline Spectrogram compute_log_spectrogram(const Waveform& w, const SpectrogramParams& p = {}) {
  require(w.sample_rate == p.sample_rate, "spectrogram: expected sample rate " + std::to_string(p.sample_rate) + ", got " +
                                              std::to_string(w.sample_rate));
  require(w.samples.size() == p.num_samples(), "spectrogram: expected " + std::to_string(p.num_samples()) +
                                                   " samples, got " + std::to_string(w.samples.size()));
  require(p.win_length <= p.n_fft && p.hop >= 1, "spectrogram: invalid parameters");
  const std::size_t F = p.num_bins(), T = p.num_frames(), n_fft = static_cast<std::size_t>(p.n_fft);
  const auto window = dsp::hann_window(p.win_length, p.n_fft);
  Spectrogram out{Tensor({F, T}), p};
  std::vector<double> frame(n_fft), mag;
  dsp::RealFft fft(n_fft);
  const long half = static_cast<long>(n_fft / 2);
  const long len = static_cast<long>(w.samples.size());
  for (std::size_t t = 0; t < T; ++t) {
    const long start = static_cast<long>(t) * p.hop - half;
    for (std::size_t i = 0; i < n_fft; ++i) {
      const long idx = start + static_cast<long>(i);
      frame[i] = (idx >= 0 && idx < len) ? w.samples[static_cast<std::size_t>(idx)] * window[i] : 0.0;
    }
    fft.magnitudes(frame, mag);
    for (std::size_t f = 0; f < F; ++f) out.values.at(f, t) = std::log(mag[f] + p.eps);
  }
  return out;
}

}  // namespace avsam
