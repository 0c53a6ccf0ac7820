#pragma once

#include <cstdint>
#include <vector>

#include "duet/duet_repr.hpp"
#include "duet/music.hpp"
#include "duet/skeleton.hpp"

namespace duet {

inline constexpr int kGenreCount = 10;

struct SynthSpec {
  uint64_t seed = 0;
  double bpm = 120.0;
  double duration = 17.0;           // seconds, at least 14
  double interaction_profile = 0.5;  // target contact fraction in [0, 1]
  int genre_id = 0;

  void validate() const;  // Error("bad-spec")
};

struct SynthDuet {
  GlobalDuetMotion motion;
  AudioClip audio;
  std::vector<double> beat_times;
  double contact_fraction = 0.0;  // measured, in [0, 1]
  double beat_alignment = 0.0;    // measured against beat_times
};

struct SynthTolerances {
  double contact_points = 5.0;  // percentage points around the target
  double min_beat_alignment = 0.9;
};

// Seeded two-person hop dance whose limb key poses land on the music beats.
// A hops between planted stances; B mirrors A facing them at a separation that
// alternates between far and "hold" segments where the nearest wrist pair is
// 4 cm apart. Throws Error("synth-out-of-tolerance") if the measured contact
// fraction or beat alignment misses its tolerance.
SynthDuet synth_duet(const SynthSpec& spec, const Skeleton& skel, const SynthTolerances& tol = {});

}  // namespace duet
