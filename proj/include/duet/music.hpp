#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace duet {

inline constexpr double kMusicSampleRate = 15360.0;
inline constexpr int kMusicHop = 512;  // 15360 / 512 = 30 feature rows per second
inline constexpr int kMusicFft = 1024;
inline constexpr int kMelBands = 80;
inline constexpr int kMfcc = 40;
inline constexpr int kChroma = 12;
inline constexpr int kMusicWidth = 2 * kMfcc + kChroma;  // 92

struct AudioClip {
  std::vector<double> samples;  // [-1, 1]
  double sample_rate = kMusicSampleRate;

  double duration() const { return samples.size() / sample_rate; }
};

// Rows: [40 MFCC | 40 MFCC delta | 12 chroma], one per motion frame.
struct MusicFeatures {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> frames;
  double fps = 30.0;

  int rows() const { return static_cast<int>(frames.rows()); }
};

enum class WavEncoding { kPcm16, kFloat32 };

// Reads PCM16 / float32 WAV, averages channels and resamples to 15,360 Hz.
AudioClip load_audio(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, const AudioClip& audio,
              WavEncoding encoding = WavEncoding::kPcm16);

// Windowed-sinc resampling; output length is round(n * target / source).
AudioClip resample(const AudioClip& audio, double target_rate);

MusicFeatures extract_features(const AudioClip& audio, int n_frames);

struct BeatDetectorOptions {
  int peak_radius = 7;          // frames on each side
  double threshold_sigmas = 1.0;
};

std::vector<double> detect_music_beats(const AudioClip& audio, const BeatDetectorOptions& opts = {});

struct ClickTrack {
  AudioClip audio;
  std::vector<double> beat_times;
};

ClickTrack synth_click_track(double bpm, double duration, uint64_t seed);

AudioClip synth_tone(double freq_hz, double duration, double amplitude = 0.5,
                     double sample_rate = kMusicSampleRate);

}  // namespace duet
