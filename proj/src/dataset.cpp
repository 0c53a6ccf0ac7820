#include "duet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "duet/error.hpp"
#include "duet/rng.hpp"

namespace duet {

std::vector<Window> window_split(int n_frames, int window, int stride) {
  if (window < 1 || stride < 1) throw Error("bad-window", "window and stride must be positive");
  std::vector<Window> out;
  for (int start = 0; start + window <= n_frames; start += stride) out.push_back({start, window});
  return out;
}

std::vector<DuetClip> augment_mirror(std::span<const DuetClip> clips, const Skeleton& skel) {
  std::vector<DuetClip> out(clips.begin(), clips.end());
  out.reserve(2 * clips.size());
  for (const auto& c : clips) out.push_back(mirror_swap(c, skel));
  return out;
}

std::vector<DatasetItem> augment_mirror(std::span<const DatasetItem> items, const Skeleton& skel) {
  std::vector<DatasetItem> out(items.begin(), items.end());
  out.reserve(2 * items.size());
  for (const auto& item : items) {
    DatasetItem m = item;
    m.id = item.id + "-m";
    m.mirrored = !item.mirrored;
    m.clip = mirror_swap(item.clip, skel);
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

FeatureStats finish_stats(const Eigen::VectorXd& sum, const Eigen::VectorXd& sq, double count) {
  FeatureStats s;
  s.mean = sum / count;
  s.std = (sq / count - s.mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(FeatureStats::kStdFloor);
  return s;
}

}  // namespace

FeatureStats compute_stats(std::span<const DuetClip> clips) {
  if (clips.empty()) throw Error("empty-dataset");
  const auto width = clips[0].features.cols();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(width);
  double count = 0.0;
  for (const auto& c : clips) {
    if (c.normalized) throw Error("already-normalized", "stats need raw features");
    if (c.features.cols() != width) throw Error("shape-mismatch");
    mean += c.features.colwise().sum().transpose();
    count += static_cast<double>(c.features.rows());
  }
  mean /= count;
  // Two-pass variance keeps constant channels at exactly zero spread.
  Eigen::VectorXd var = Eigen::VectorXd::Zero(width);
  for (const auto& c : clips) var += (c.features.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum().transpose();
  FeatureStats s;
  s.mean = mean;
  s.std = (var / count).cwiseSqrt().cwiseMax(FeatureStats::kStdFloor);
  return s;
}

FeatureStats compute_column_stats(std::span<const Eigen::MatrixXd> blocks) {
  if (blocks.empty()) throw Error("empty-dataset");
  const auto width = blocks[0].cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(width), sq = Eigen::VectorXd::Zero(width);
  double count = 0.0;
  for (const auto& b : blocks) {
    sum += b.colwise().sum().transpose();
    sq += b.cwiseAbs2().colwise().sum().transpose();
    count += static_cast<double>(b.rows());
  }
  return finish_stats(sum, sq, count);
}

SynthSpec dataset_spec(const DatasetConfig& cfg, const std::string& split, int index) {
  Rng rng(cfg.seed * 1000003ULL + (split == "train" ? 0ULL : 500009ULL) + static_cast<uint64_t>(index));
  SynthSpec s;
  s.seed = rng.next_u64();
  const int span = cfg.max_frames_per_beat - cfg.min_frames_per_beat + 1;
  const int frames_per_beat = cfg.min_frames_per_beat + static_cast<int>(rng.below(static_cast<uint64_t>(span)));
  s.bpm = 60.0 * kFps / frames_per_beat;
  s.duration = cfg.duration;
  s.interaction_profile = rng.uniform(cfg.min_profile, cfg.max_profile);
  s.genre_id = static_cast<int>(rng.below(kGenreCount));
  return s;
}

std::vector<DatasetItem> windows_from_duet(const SynthDuet& duet, const SynthSpec& spec, const std::string& split,
                                           const std::string& id_prefix, int window, int stride, const Skeleton& skel) {
  const int n = duet.motion.frames();
  const MusicFeatures music = extract_features(duet.audio, n);
  std::vector<DatasetItem> out;
  for (const Window& w : window_split(n, window, stride)) {
    GlobalDuetMotion sub;
    sub.fps = duet.motion.fps;
    for (int p = 0; p < 2; ++p) {
      const auto& src = duet.motion.person[p];
      auto& dst = sub.person[p];
      dst.root_position.assign(src.root_position.begin() + w.start, src.root_position.begin() + w.start + w.length);
      dst.root_orientation.assign(src.root_orientation.begin() + w.start,
                                  src.root_orientation.begin() + w.start + w.length);
      dst.local_rotations.assign(src.local_rotations.begin() + w.start, src.local_rotations.begin() + w.start + w.length);
    }
    DatasetItem item;
    item.id = id_prefix + "-w" + std::to_string(w.start);
    item.split = split;
    item.spec = spec;
    item.window_start = w.start;
    item.clip = encode_features(canonicalize(sub), skel);
    item.music.frames = music.frames.middleRows(w.start, w.length);
    const double t0 = w.start / kFps, t1 = (w.start + w.length) / kFps;
    for (double t : duet.beat_times) {
      if (t >= t0 && t < t1) item.beat_times.push_back(t - t0);
    }
    out.push_back(std::move(item));
  }
  return out;
}

PreparedDataset build_synthetic_dataset(const DatasetConfig& cfg, const Skeleton& skel) {
  PreparedDataset data;
  data.config = cfg;
  auto make = [&](const std::string& split, int count, int stride, std::vector<DatasetItem>& dst) {
    for (int i = 0; i < count; ++i) {
      const SynthSpec spec = dataset_spec(cfg, split, i);
      const SynthDuet duet = synth_duet(spec, skel);
      char prefix[32];
      std::snprintf(prefix, sizeof(prefix), "%s%04d", split.c_str(), i);
      auto items = windows_from_duet(duet, spec, split, prefix, cfg.window, stride, skel);
      for (auto& it : items) dst.push_back(std::move(it));
    }
  };
  make("train", cfg.train_duets, cfg.stride, data.train);
  make("test", cfg.test_duets, cfg.test_stride, data.test);
  if (cfg.mirror) data.train = augment_mirror(std::span<const DatasetItem>(data.train), skel);
  if (data.train.empty()) throw Error("empty-dataset", "no training windows");

  std::vector<DuetClip> clips;
  std::vector<Eigen::MatrixXd> music;
  for (const auto& it : data.train) {
    clips.push_back(it.clip);
    music.emplace_back(it.music.frames);
  }
  data.motion_stats = compute_stats(clips);
  data.music_stats = compute_column_stats(music);
  return data;
}

namespace {

ArrayEntry matrix_entry(const std::string& name, const Eigen::Ref<const FeatureMatrix>& m) {
  std::vector<float> v(m.data(), m.data() + m.size());
  return ArrayEntry::from_f32(name, {m.rows(), m.cols()}, v);
}

FeatureMatrix matrix_from(const ArrayEntry& e) {
  if (e.shape.size() != 2) throw Error("corrupt-archive", e.name + " is not a matrix");
  const auto v = e.to_f64();
  FeatureMatrix m(e.shape[0], e.shape[1]);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

void put_vector(Archive& a, const std::string& name, const Eigen::VectorXd& v) {
  a.add(ArrayEntry::from_f64(name, {v.size()}, std::span<const double>(v.data(), v.size())));
}

Eigen::VectorXd get_vector(const Archive& a, const std::string& name) {
  const auto v = a.at(name).to_f64();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json spec_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"bpm", s.bpm},
          {"duration", s.duration},
          {"interaction_profile", s.interaction_profile},
          {"genre_id", s.genre_id}};
}

SynthSpec spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.seed = j.at("seed").get<uint64_t>();
  s.bpm = j.at("bpm").get<double>();
  s.duration = j.at("duration").get<double>();
  s.interaction_profile = j.at("interaction_profile").get<double>();
  s.genre_id = j.at("genre_id").get<int>();
  return s;
}

}  // namespace

Archive stats_to_archive(const FeatureStats& motion, const FeatureStats& music) {
  Archive a;
  a.format = kFormatStats;
  put_vector(a, "motion/mean", motion.mean);
  put_vector(a, "motion/std", motion.std);
  put_vector(a, "music/mean", music.mean);
  put_vector(a, "music/std", music.std);
  return a;
}

void stats_from_archive(const Archive& archive, FeatureStats& motion, FeatureStats& music) {
  motion.mean = get_vector(archive, "motion/mean");
  motion.std = get_vector(archive, "motion/std");
  music.mean = get_vector(archive, "music/mean");
  music.std = get_vector(archive, "music/std");
  if (motion.mean.size() != layout::kWidth || music.mean.size() != kMusicWidth) {
    throw Error("corrupt-archive", "stats dimensions");
  }
}

Archive clip_to_archive(const DuetClip& clip, const MusicFeatures* music) {
  Archive a;
  a.format = kFormatClip;
  const std::vector<double> v(clip.features.data(), clip.features.data() + clip.features.size());
  a.add(ArrayEntry::from_f64("features", {clip.features.rows(), clip.features.cols()}, v));
  if (music) {
    const std::vector<double> m(music->frames.data(), music->frames.data() + music->frames.size());
    a.add(ArrayEntry::from_f64("music", {music->frames.rows(), music->frames.cols()}, m));
  }
  a.metadata["fps"] = clip.fps;
  a.metadata["normalized"] = clip.normalized;
  a.metadata["stats_id"] = clip.stats_id;
  return a;
}

DuetClip clip_from_archive(const Archive& archive, MusicFeatures* music) {
  DuetClip clip;
  clip.features = matrix_from(archive.at("features"));
  if (clip.features.cols() != layout::kWidth) throw Error("shape-mismatch", "clip width must be 536");
  clip.fps = archive.metadata.value("fps", kFps);
  clip.normalized = archive.metadata.value("normalized", false);
  clip.stats_id = archive.metadata.value("stats_id", std::string());
  if (music) {
    if (const auto* e = archive.find("music")) music->frames = matrix_from(*e);
  }
  return clip;
}

void save_dataset(const PreparedDataset& data, const std::filesystem::path& dir) {
  Archive a;
  a.format = kFormatDataset;
  nlohmann::json items = nlohmann::json::array();
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& it : *split) {
      a.add(matrix_entry(it.id + "/motion", it.clip.features));
      a.add(matrix_entry(it.id + "/music", it.music.frames));
      a.add(ArrayEntry::from_f64(it.id + "/beats", {static_cast<int64_t>(it.beat_times.size())}, it.beat_times));
      items.push_back({{"id", it.id},
                       {"split", it.split},
                       {"spec", spec_json(it.spec)},
                       {"window_start", it.window_start},
                       {"mirrored", it.mirrored}});
    }
  }
  const auto& c = data.config;
  a.metadata["items"] = items;
  a.metadata["config"] = {{"seed", c.seed},       {"train_duets", c.train_duets}, {"test_duets", c.test_duets},
                          {"duration", c.duration}, {"window", c.window},         {"stride", c.stride},
                          {"test_stride", c.test_stride}, {"mirror", c.mirror}};
  write_archive(a, dir / "clips");
  write_archive(stats_to_archive(data.motion_stats, data.music_stats), dir / "stats");
}

PreparedDataset load_dataset(const std::filesystem::path& dir) {
  const Archive a = read_archive(dir / "clips", kFormatDataset);
  PreparedDataset data;
  const auto& c = a.metadata.at("config");
  data.config.seed = c.at("seed").get<uint64_t>();
  data.config.train_duets = c.at("train_duets").get<int>();
  data.config.test_duets = c.at("test_duets").get<int>();
  data.config.duration = c.at("duration").get<double>();
  data.config.window = c.at("window").get<int>();
  data.config.stride = c.at("stride").get<int>();
  data.config.test_stride = c.at("test_stride").get<int>();
  data.config.mirror = c.at("mirror").get<bool>();
  for (const auto& j : a.metadata.at("items")) {
    DatasetItem it;
    it.id = j.at("id").get<std::string>();
    it.split = j.at("split").get<std::string>();
    it.spec = spec_from_json(j.at("spec"));
    it.window_start = j.at("window_start").get<int>();
    it.mirrored = j.at("mirrored").get<bool>();
    it.clip.features = matrix_from(a.at(it.id + "/motion"));
    it.music.frames = matrix_from(a.at(it.id + "/music"));
    it.beat_times = a.at(it.id + "/beats").to_f64();
    (it.split == "train" ? data.train : data.test).push_back(std::move(it));
  }
  stats_from_archive(read_archive(dir / "stats", kFormatStats), data.motion_stats, data.music_stats);
  return data;
}

}  // namespace duet
