#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "duet/archive.hpp"
#include "duet/duet_repr.hpp"
#include "duet/music.hpp"
#include "duet/skeleton.hpp"
#include "duet/synth.hpp"

namespace duet {

struct Window {
  int start = 0;
  int length = 0;
};

// Windows start at 0, stride, 2*stride, ... while start + window <= n_frames.
std::vector<Window> window_split(int n_frames, int window, int stride);

struct DatasetItem {
  std::string id;
  std::string split;  // "train" or "test"
  SynthSpec spec;
  int window_start = 0;
  bool mirrored = false;
  DuetClip clip;                    // un-normalized, canonical unless mirrored
  MusicFeatures music;              // one row per motion frame
  std::vector<double> beat_times;   // seconds, relative to the window start
};

// Originals followed by their person-swapped copies.
std::vector<DuetClip> augment_mirror(std::span<const DuetClip> clips, const Skeleton& skel);
std::vector<DatasetItem> augment_mirror(std::span<const DatasetItem> items, const Skeleton& skel);

// Per-channel mean/std over every frame of every matrix; std floored at 1e-8.
FeatureStats compute_stats(std::span<const DuetClip> clips);
FeatureStats compute_column_stats(std::span<const Eigen::MatrixXd> blocks);

struct DatasetConfig {
  uint64_t seed = 7;
  int train_duets = 64;
  int test_duets = 32;
  double duration = 17.0;
  int window = 400;
  int stride = 100;
  int test_stride = 100;
  bool mirror = true;
  int min_frames_per_beat = 12;  // tempos with a whole number of frames per beat
  int max_frames_per_beat = 20;
  double min_profile = 0.2;
  double max_profile = 0.9;
};

struct PreparedDataset {
  DatasetConfig config;
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> test;
  FeatureStats motion_stats;  // over training clips
  FeatureStats music_stats;   // over training music rows
};

SynthSpec dataset_spec(const DatasetConfig& cfg, const std::string& split, int index);

// Seeded synthetic duets -> canonical windows -> features (+ mirrored copies for training).
PreparedDataset build_synthetic_dataset(const DatasetConfig& cfg, const Skeleton& skel);

// Cuts one long duet into canonical windows with aligned music rows.
std::vector<DatasetItem> windows_from_duet(const SynthDuet& duet, const SynthSpec& spec, const std::string& split,
                                           const std::string& id_prefix, int window, int stride, const Skeleton& skel);

Archive stats_to_archive(const FeatureStats& motion, const FeatureStats& music);
void stats_from_archive(const Archive& archive, FeatureStats& motion, FeatureStats& music);

Archive clip_to_archive(const DuetClip& clip, const MusicFeatures* music = nullptr);
DuetClip clip_from_archive(const Archive& archive, MusicFeatures* music = nullptr);

void save_dataset(const PreparedDataset& data, const std::filesystem::path& dir);
PreparedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace duet
