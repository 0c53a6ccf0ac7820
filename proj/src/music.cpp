#include "duet/music.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>

#include <fftw3.h>

#include "duet/error.hpp"
#include "duet/rng.hpp"

namespace duet {

namespace {

using std::numbers::pi;

uint32_t read_u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24); }
uint16_t read_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void write_u32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
void write_u16(std::ostream& out, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

// FFTW planning is not thread-safe.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// Magnitude-squared spectra of centered, Hann-windowed frames.
class Stft {
 public:
  Stft() {
    in_ = fftw_alloc_real(kMusicFft);
    out_ = fftw_alloc_complex(kMusicFft / 2 + 1);
    std::lock_guard lock(fftw_plan_mutex());
    plan_ = fftw_plan_dft_r2c_1d(kMusicFft, in_, out_, FFTW_ESTIMATE);
    window_.resize(kMusicFft);
    for (int i = 0; i < kMusicFft; ++i) window_[i] = 0.5 - 0.5 * std::cos(2.0 * pi * i / kMusicFft);
  }
  ~Stft() {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  Stft(const Stft&) = delete;
  Stft& operator=(const Stft&) = delete;

  static constexpr int kBins = kMusicFft / 2 + 1;

  // Frame centered at sample center; out of range samples are reflected.
  void power(const std::vector<double>& x, long center, std::vector<double>& out) {
    const long n = static_cast<long>(x.size());
    for (int i = 0; i < kMusicFft; ++i) {
      long idx = center - kMusicFft / 2 + i;
      if (n == 1) {
        idx = 0;
      } else {
        while (idx < 0 || idx >= n) idx = idx < 0 ? -idx : 2 * (n - 1) - idx;
      }
      in_[i] = x[idx] * window_[i];
    }
    fftw_execute(plan_);
    out.resize(kBins);
    for (int k = 0; k < kBins; ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
  std::vector<double> window_;
};

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters on the mel scale between 0 Hz and Nyquist, area-normalized.
const std::vector<std::vector<double>>& mel_filterbank() {
  static const auto bank = [] {
    const double sr = kMusicSampleRate;
    const int bins = Stft::kBins;
    std::vector<double> edges(kMelBands + 2);
    const double mmax = hz_to_mel(sr / 2.0);
    for (int i = 0; i < kMelBands + 2; ++i) edges[i] = mel_to_hz(mmax * i / (kMelBands + 1));
    std::vector<std::vector<double>> fb(kMelBands, std::vector<double>(bins, 0.0));
    for (int m = 0; m < kMelBands; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      const double norm = 2.0 / (hi - lo);
      for (int k = 0; k < bins; ++k) {
        const double f = k * sr / kMusicFft;
        double w = 0.0;
        if (f > lo && f < mid) w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
        fb[m][k] = w * norm;
      }
    }
    return fb;
  }();
  return bank;
}

// Pitch class per FFT bin (C = 0 .. B = 11), -1 for bins below 55 Hz.
const std::vector<int>& chroma_map() {
  static const auto map = [] {
    std::vector<int> m(Stft::kBins, -1);
    for (int k = 1; k < Stft::kBins; ++k) {
      const double f = k * kMusicSampleRate / kMusicFft;
      if (f < 55.0) continue;
      const long semis = std::lround(12.0 * std::log2(f / 440.0)) + 9;
      m[k] = static_cast<int>(((semis % 12) + 12) % 12);
    }
    return m;
  }();
  return map;
}

}  // namespace

AudioClip resample(const AudioClip& audio, double target_rate) {
  if (audio.sample_rate <= 0 || target_rate <= 0) throw Error("bad-sample-rate");
  if (audio.sample_rate == target_rate) return audio;
  const size_t n_in = audio.samples.size();
  const size_t n_out = static_cast<size_t>(std::llround(n_in * target_rate / audio.sample_rate));
  const double ratio = target_rate / audio.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  constexpr int kZeros = 16;
  const double half_width = kZeros / cutoff;

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (size_t i = 0; i < n_out; ++i) {
    const double t = i / ratio;  // position in input samples
    const long lo = static_cast<long>(std::ceil(t - half_width));
    const long hi = static_cast<long>(std::floor(t + half_width));
    double acc = 0.0, wsum = 0.0;
    for (long j = std::max(0L, lo); j <= std::min<long>(hi, static_cast<long>(n_in) - 1); ++j) {
      const double x = (t - j) * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(pi * x) / (pi * x);
      const double win = 0.5 + 0.5 * std::cos(pi * (t - j) / half_width);
      const double w = sinc * win;
      acc += w * audio.samples[j];
      wsum += w;
    }
    out.samples[i] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

AudioClip load_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing-file", path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error("empty-audio", path.string());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error("unsupported-audio", "not a RIFF/WAVE file");
  }
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t len = read_u32(chunk + 4);
    const size_t avail = std::min<size_t>(len, bytes.size() - pos - 8);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);  // extensible sub-format
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos += 8 + len + (len & 1u);
  }
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!(pcm16 || f32) || channels == 0 || rate == 0) throw Error("unsupported-audio", "need PCM16 or float32 WAV");
  if (!data) throw Error("unsupported-audio", "missing data chunk");
  const size_t frame_bytes = static_cast<size_t>(channels) * (bits / 8);
  const size_t frames = data_len / frame_bytes;
  if (frames == 0) throw Error("empty-audio", path.string());

  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        acc += static_cast<int16_t>(read_u16(p)) / 32768.0;
      } else {
        float v;
        const uint32_t raw = read_u32(p);
        std::memcpy(&v, &raw, 4);
        acc += v;
      }
    }
    clip.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return resample(clip, kMusicSampleRate);
}

void save_wav(const std::filesystem::path& path, const AudioClip& audio, WavEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", path.string());
  const uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const uint32_t rate = static_cast<uint32_t>(std::lround(audio.sample_rate));
  const uint32_t data_len = static_cast<uint32_t>(audio.samples.size() * (bits / 8));
  out.write("RIFF", 4);
  write_u32(out, 36 + data_len);
  out.write("WAVEfmt ", 8);
  write_u32(out, 16);
  write_u16(out, encoding == WavEncoding::kPcm16 ? 1 : 3);
  write_u16(out, 1);
  write_u32(out, rate);
  write_u32(out, rate * (bits / 8));
  write_u16(out, bits / 8);
  write_u16(out, bits);
  out.write("data", 4);
  write_u32(out, data_len);
  for (double s : audio.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    if (encoding == WavEncoding::kPcm16) {
      write_u16(out, static_cast<uint16_t>(static_cast<int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)))));
    } else {
      const float f = static_cast<float>(c);
      uint32_t raw;
      std::memcpy(&raw, &f, 4);
      write_u32(out, raw);
    }
  }
}

MusicFeatures extract_features(const AudioClip& audio, int n_frames) {
  if (audio.sample_rate != kMusicSampleRate) throw Error("bad-sample-rate", "resample to 15360 Hz first");
  if (n_frames < 1) throw Error("bad-length", "n_frames must be positive");
  if (audio.samples.empty() || static_cast<long>(n_frames - 1) * kMusicHop >= static_cast<long>(audio.samples.size())) {
    throw Error("audio-too-short", std::to_string(audio.samples.size()) + " samples for " + std::to_string(n_frames) + " frames");
  }
  const auto& fb = mel_filterbank();
  const auto& cmap = chroma_map();
  Stft stft;
  std::vector<double> power;

  Eigen::MatrixXd mfcc(n_frames, kMfcc);
  MusicFeatures out;
  out.frames.resize(n_frames, kMusicWidth);
  std::vector<double> logmel(kMelBands);
  for (int i = 0; i < n_frames; ++i) {
    stft.power(audio.samples, static_cast<long>(i) * kMusicHop, power);
    for (int m = 0; m < kMelBands; ++m) {
      double e = 0.0;
      for (int k = 0; k < Stft::kBins; ++k) e += fb[m][k] * power[k];
      logmel[m] = 10.0 * std::log10(std::max(e, 1e-10));
    }
    // Orthonormal DCT-II.
    for (int c = 0; c < kMfcc; ++c) {
      double acc = 0.0;
      for (int m = 0; m < kMelBands; ++m) acc += logmel[m] * std::cos(pi * c * (m + 0.5) / kMelBands);
      mfcc(i, c) = acc * std::sqrt((c == 0 ? 1.0 : 2.0) / kMelBands);
    }
    std::array<double, kChroma> chroma{};
    for (int k = 0; k < Stft::kBins; ++k) {
      if (cmap[k] >= 0) chroma[cmap[k]] += power[k];
    }
    double total = 0.0;
    for (double& c : chroma) total += (c += 1e-10);
    for (int c = 0; c < kChroma; ++c) out.frames(i, 2 * kMfcc + c) = chroma[c] / total;
  }
  for (int i = 0; i < n_frames; ++i) {
    const int prev = std::max(0, i - 1), next = std::min(n_frames - 1, i + 1);
    for (int c = 0; c < kMfcc; ++c) {
      out.frames(i, c) = mfcc(i, c);
      out.frames(i, kMfcc + c) = 0.5 * (mfcc(next, c) - mfcc(prev, c));
    }
  }
  return out;
}

std::vector<double> detect_music_beats(const AudioClip& audio, const BeatDetectorOptions& opts) {
  if (audio.samples.empty()) throw Error("empty-audio");
  const AudioClip a = resample(audio, kMusicSampleRate);
  const int n = static_cast<int>(a.samples.size() + kMusicHop - 1) / kMusicHop;
  Stft stft;
  std::vector<double> power, prev(Stft::kBins, 0.0), flux(n, 0.0);
  for (int i = 0; i < n; ++i) {
    stft.power(a.samples, static_cast<long>(i) * kMusicHop, power);
    double f = 0.0;
    for (int k = 0; k < Stft::kBins; ++k) {
      const double mag = std::sqrt(power[k]);
      f += std::max(0.0, mag - prev[k]);
      prev[k] = mag;
    }
    flux[i] = f;
  }
  const double mean = std::accumulate(flux.begin(), flux.end(), 0.0) / n;
  double var = 0.0;
  for (double f : flux) var += (f - mean) * (f - mean);
  const double threshold = mean + opts.threshold_sigmas * std::sqrt(var / n);

  std::vector<double> beats;
  for (int i = 0; i < n; ++i) {
    if (!(flux[i] > threshold)) continue;
    bool peak = true;
    for (int j = std::max(0, i - opts.peak_radius); j <= std::min(n - 1, i + opts.peak_radius) && peak; ++j) {
      if (j < i) peak = flux[i] > flux[j];  // plateaus resolve to their first frame
      else if (j > i) peak = flux[i] >= flux[j];
    }
    if (peak) beats.push_back(static_cast<double>(i) * kMusicHop / kMusicSampleRate);
  }
  return beats;
}

ClickTrack synth_click_track(double bpm, double duration, uint64_t seed) {
  if (!(bpm >= 40.0 && bpm <= 240.0)) throw Error("bad-bpm", std::to_string(bpm));
  if (!(duration > 0.0)) throw Error("bad-duration");
  Rng rng(seed);
  const double sr = kMusicSampleRate;
  const size_t n = static_cast<size_t>(std::llround(duration * sr));
  ClickTrack track;
  track.audio.sample_rate = sr;
  track.audio.samples.assign(n, 0.0);

  // Low harmonic bed: a seeded triad held for the whole clip.
  static constexpr double kRoots[] = {110.0, 123.47, 130.81, 146.83, 164.81, 174.61, 196.0};
  const double root = kRoots[rng.below(std::size(kRoots))];
  const double ratios[3] = {1.0, rng.uniform() < 0.5 ? 1.189207 : 1.259921, 1.498307};
  double phases[3];
  for (double& p : phases) p = rng.uniform(0.0, 2.0 * pi);
  for (size_t i = 0; i < n; ++i) {
    const double t = i / sr;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += 0.02 * std::sin(2.0 * pi * root * ratios[k] * t + phases[k]);
    track.audio.samples[i] = s;
  }

  const double period = 60.0 / bpm;
  const double click_hz = rng.uniform(900.0, 1500.0);
  for (int k = 0;; ++k) {
    const double tb = k * period;
    if (tb >= duration) break;
    track.beat_times.push_back(tb);
    const size_t start = static_cast<size_t>(std::ceil(tb * sr - 1e-9));
    for (size_t i = start; i < n; ++i) {
      const double dt = i / sr - tb;
      if (dt > 0.08) break;
      track.audio.samples[i] += 0.6 * std::exp(-dt / 0.012) * std::sin(2.0 * pi * click_hz * dt);
    }
  }
  return track;
}

AudioClip synth_tone(double freq_hz, double duration, double amplitude, double sample_rate) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<size_t>(std::llround(duration * sample_rate)));
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = amplitude * std::sin(2.0 * pi * freq_hz * i / sample_rate);
  }
  return clip;
}

}  // namespace duet
