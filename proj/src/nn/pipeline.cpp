#include "duet/nn/pipeline.hpp"

#include "duet/error.hpp"
#include "duet/nn/checkpoint.hpp"

namespace duet::nn {

torch::Tensor music_tensor(const MusicFeatures& music, const FeatureStats& stats) {
  if (music.frames.cols() != kMusicWidth) throw Error("shape-mismatch", "music rows must be 92 wide");
  return ((to_tensor(FeatureMatrix(music.frames)) - to_tensor(stats.mean)) / to_tensor(stats.std)).unsqueeze(0);
}

Generated generate(Models& m, const MusicFeatures& music, int frames, const GenConfig& cfg) {
  const auto& vc = m.vq->cfg;
  if (frames < vc.eta_top || frames % vc.eta_top != 0) throw Error("bad-length", "frames must divide by eta_top");
  if (music.rows() != frames) throw Error("bad-length", "music rows must match the requested frames");
  torch::NoGradGuard guard;
  const auto mt = music_tensor(music, m.music);
  Generated g;
  g.top = generate_top(m.top, mt, frames / vc.eta_top, cfg);
  g.bot = generate_bottom(m.bot, mt, g.top, cfg);
  m.vq->eval();
  const auto rec = m.vq->detokenize(torch::tensor(g.top, torch::kLong).unsqueeze(0),
                                    torch::tensor(g.bot, torch::kLong).unsqueeze(0), mt);
  DuetClip norm;
  norm.features = to_matrix(rec[0]);
  norm.normalized = true;
  g.unrefined = denormalize(norm, m.motion);
  g.clip = m.refiner ? refine_clip(m.refiner, g.unrefined) : g.unrefined;
  return g;
}

DuetClip reconstruct(HierVq& vq, const DuetClip& raw, const MusicFeatures& music, const FeatureStats& motion_stats,
                     const FeatureStats& music_stats) {
  if (raw.normalized) throw Error("shape-mismatch", "reconstruct expects a raw clip");
  if (music.rows() != raw.frames()) throw Error("bad-length", "music rows must match the clip");
  torch::NoGradGuard guard;
  vq->eval();
  const auto x = to_tensor(normalize(raw, motion_stats).features).unsqueeze(0);
  const auto out = vq->forward(x, music_tensor(music, music_stats));
  DuetClip norm;
  norm.features = to_matrix(out.recon[0]);
  norm.normalized = true;
  return denormalize(norm, motion_stats);
}

nlohmann::json evaluate_sets(std::span<const EvalClip> gen, std::span<const EvalClip> ref, Extractor& extractor,
                             const Skeleton& skel, bool paired) {
  if (gen.size() < 2 || ref.size() < 2) throw Error("too-few-clips", "need at least two clips per set");
  std::vector<DuetClip> gc, rc;
  for (const auto& c : gen) gc.push_back(c.clip);
  for (const auto& c : ref) rc.push_back(c.clip);
  const auto scores = distribution_scores(extract_latents(extractor, gc), extract_latents(extractor, rc));

  auto set_stats = [&](std::span<const EvalClip> set) {
    double skate = 0.0, cf = 0.0, bas = 0.0;
    int with_beats = 0;
    for (const auto& c : set) {
      const auto motion = decode_features(c.clip, skel);
      skate += foot_skate(motion, skel);
      cf += contact_frequency(motion, skel);
      if (c.beats && !c.beats->empty()) {
        bas += beat_alignment(motion, skel, *c.beats);
        ++with_beats;
      }
    }
    nlohmann::json j = {{"foot_skate", skate / set.size()}, {"cf", cf / set.size()}};
    j["bas"] = with_beats ? nlohmann::json(bas / with_beats) : nlohmann::json(nullptr);
    return j;
  };

  nlohmann::json report = {{"fid", scores.fid}, {"pfid", scores.pfid}, {"div", scores.div},
                           {"generated", set_stats(gen)}, {"reference", set_stats(ref)}};
  report["cf_difference"] = report["generated"]["cf"].get<double>() - report["reference"]["cf"].get<double>();
  if (paired) {
    if (gen.size() != ref.size()) throw Error("shape-mismatch", "paired sets differ in size");
    double mpjpe = 0.0, mpjve = 0.0, rde = 0.0;
    for (size_t i = 0; i < gen.size(); ++i) {
      const auto e = recon_errors(decode_features(ref[i].clip, skel), decode_features(gen[i].clip, skel), skel);
      mpjpe += e.mpjpe_mean();
      mpjve += 0.5 * (e.mpjve_mm[0] + e.mpjve_mm[1]);
      rde += e.rde_mm;
    }
    const double n = static_cast<double>(gen.size());
    report["mpjpe_mm"] = mpjpe / n;
    report["mpjve_mm"] = mpjve / n;
    report["rde_mm"] = rde / n;
  }
  return report;
}

nlohmann::json motion_export(const DuetClip& raw, const Skeleton& skel) {
  const auto motion = decode_features(raw, skel);
  nlohmann::json persons = nlohmann::json::array();
  for (const auto& p : motion.person) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& joints : person_positions(p, skel)) {
      nlohmann::json f = nlohmann::json::array();
      for (const auto& j : joints) f.push_back({j.x(), j.y(), j.z()});
      frames.push_back(std::move(f));
    }
    persons.push_back(std::move(frames));
  }
  return {{"fps", motion.fps}, {"frames", motion.frames()}, {"joints", kJointCount}, {"persons", persons}};
}

}  // namespace duet::nn
