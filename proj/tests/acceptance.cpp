// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// Trained models are cached under --work (keyed by the training settings), so
// a second run only re-evaluates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/dataset.hpp"
#include "duet/error.hpp"
#include "duet/metrics.hpp"
#include "duet/nn/checkpoint.hpp"
#include "duet/nn/extractor.hpp"
#include "duet/nn/kinematics.hpp"
#include "duet/nn/masked.hpp"
#include "duet/nn/pipeline.hpp"
#include "duet/nn/refiner.hpp"
#include "duet/nn/training.hpp"
#include "duet/nn/vqvae.hpp"
#include "duet/rotation.hpp"
#include "duet/synth.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace duet;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  fs::path work = "acceptance_work";
  fs::path duetgen;
  int seeds = 3;
  int vq_epochs = 100;
  int masked_epochs = 100;
  int refiner_epochs = 40;
  int extractor_epochs = 40;
  bool strict = false;
  bool verbose = false;
};

struct Result {
  std::string name;
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Skeleton& skel() {
  static const Skeleton s = Skeleton::smpl22();
  return s;
}

void log(const Options& o, const std::string& msg) {
  if (o.verbose) std::cerr << "[acceptance] " << msg << std::endl;
}

GlobalDuetMotion slice(const GlobalDuetMotion& m, int start, int length) {
  GlobalDuetMotion out;
  out.fps = m.fps;
  for (int p = 0; p < 2; ++p) {
    const auto& src = m.person[p];
    auto& dst = out.person[p];
    dst.root_position.assign(src.root_position.begin() + start, src.root_position.begin() + start + length);
    dst.root_orientation.assign(src.root_orientation.begin() + start,
                                src.root_orientation.begin() + start + length);
    dst.local_rotations.assign(src.local_rotations.begin() + start, src.local_rotations.begin() + start + length);
  }
  return out;
}

double max_joint_error(const GlobalDuetMotion& a, const GlobalDuetMotion& b) {
  double worst = 0.0;
  for (int p = 0; p < 2; ++p) {
    const auto pa = person_positions(a.person[p], skel());
    const auto pb = person_positions(b.person[p], skel());
    for (size_t t = 0; t < pa.size(); ++t)
      for (int j = 0; j < kJointCount; ++j) worst = std::max(worst, (pa[t][j] - pb[t][j]).norm());
  }
  return worst;
}

double max_element_diff(const GlobalDuetMotion& a, const GlobalDuetMotion& b) {
  double worst = 0.0;
  for (int p = 0; p < 2; ++p) {
    const auto& x = a.person[p];
    const auto& y = b.person[p];
    for (size_t t = 0; t < x.root_position.size(); ++t) {
      worst = std::max(worst, (x.root_position[t] - y.root_position[t]).cwiseAbs().maxCoeff());
      worst = std::max(worst, (x.root_orientation[t] - y.root_orientation[t]).cwiseAbs().maxCoeff());
      for (int j = 0; j < kLocalJointCount; ++j)
        worst = std::max(worst, (x.local_rotations[t][j] - y.local_rotations[t][j]).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

// ---------------------------------------------------------------- representation

Result roundtrip() {
  const auto t0 = Clock::now();
  DatasetConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto duet = synth_duet(dataset_spec(cfg, "train", i), skel());
    const auto m = canonicalize(slice(duet.motion, 0, 400));
    const auto back = decode_features(encode_features(m, skel()), skel());
    worst = std::max(worst, max_joint_error(m, back));
  }
  const double secs = seconds_since(t0);
  return {"representation roundtrip (100 duets x 400 frames)", worst < 1e-3 && secs < 30.0,
          fmt("max joint error %.3g m (< 1e-3), %.1f s (< 30 s)", worst, secs)};
}

Result fk_oracle() {
  Rng rng(2024);
  const auto& s = skel();
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    std::array<Eigen::Matrix3d, kLocalJointCount> local;
    for (auto& r : local) {
      const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
      r = axis_angle(axis, rng.uniform(-std::numbers::pi, std::numbers::pi));
    }
    const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Matrix3d root = axis_angle(axis, rng.uniform(-std::numbers::pi, std::numbers::pi));
    const Eigen::Vector3d root_pos(rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(-3, 3));
    const auto fk = forward_kinematics(local, root, root_pos, s);

    // Brute force: multiply the chain from the root for every joint separately.
    for (int j = 0; j < kJointCount; ++j) {
      std::vector<int> chain;
      for (int k = j; k != -1; k = s.parents[k]) chain.push_back(k);
      std::reverse(chain.begin(), chain.end());
      Eigen::Matrix3d g = root;
      Eigen::Vector3d p = root_pos;
      for (size_t c = 1; c < chain.size(); ++c) {
        p = p + g * s.rest_offsets[chain[c]];
        g = g * local[chain[c] - 1];
      }
      worst = std::max(worst, (p - fk[j]).norm());
    }
  }
  return {"FK oracle (1000 random poses)", worst < 1e-6, fmt("max error %.3g m (< 1e-6)", worst)};
}

Result mirror_and_canonical(const PreparedDataset& data) {
  double mirror = 0.0;
  for (const auto& it : data.test) {
    const auto twice = mirror_swap(mirror_swap(it.clip, skel()), skel());
    mirror = std::max(mirror, max_joint_error(decode_features(twice, skel()), decode_features(it.clip, skel())));
  }
  double canon = 0.0;
  int windows = 0;
  for (int i = 0; i < data.config.test_duets; ++i) {
    const auto duet = synth_duet(dataset_spec(data.config, "test", i), skel());
    for (const auto& w : window_split(duet.motion.frames(), data.config.window, data.config.test_stride)) {
      const auto once = canonicalize(slice(duet.motion, w.start, w.length));
      canon = std::max(canon, max_element_diff(once, canonicalize(once)));
      ++windows;
    }
  }
  return {"mirror involution and canonicalize idempotence (test split)", mirror < 1e-3 && canon < 1e-12,
          fmt("mirror twice %.3g m (< 1e-3) on %zu clips; canonicalize twice %.3g (< 1e-12) on %d windows", mirror,
              data.test.size(), canon, windows)};
}

// ---------------------------------------------------------------- schedule

Result schedule() {
  using nn::mask_count;
  using nn::mask_ratio;
  bool ok = mask_ratio(0.0) == 1.0 && mask_ratio(1.0) == 0.0 &&
            std::abs(mask_ratio(0.5) - std::numbers::sqrt2 / 2) <= 1e-12;
  int cases = 0, bad = 0;
  for (int64_t n = 1; n <= 512; n = n < 16 ? n + 1 : n * 2 - 1) {
    for (int k = 0; k <= 40; ++k) {
      const double tau = k / 40.0;
      const long double g = std::cos(std::numbers::pi_v<long double> * tau / 2);
      // Products within 1e-12 of an integer are that integer.
      const long double prod = g * n;
      const long double r = std::round(prod);
      const int64_t oracle = std::abs(prod - r) < 1e-12L ? static_cast<int64_t>(r)
                                                          : static_cast<int64_t>(std::ceil(prod));
      ++cases;
      bad += mask_count(tau, n) != oracle;
    }
  }
  // Training masks select exactly that many positions.
  Rng rng(5);
  for (int64_t n : {7, 50, 100, 333}) {
    std::vector<int64_t> ids(n, 3);
    for (int k = 0; k < 10; ++k) {
      const double tau = rng.uniform();
      const auto m = nn::apply_training_mask(ids, 512, rng, tau);
      ++cases;
      bad += std::count(m.flags.begin(), m.flags.end(), true) != mask_count(tau, n);
    }
  }
  // Generation keeps ceil(gamma(l / L) * n) positions masked after iteration l.
  torch::manual_seed(0);
  nn::MaskedConfig mc;
  mc.codebook_size = 32;
  mc.width = 32;
  mc.layers = 1;
  mc.heads = 2;
  mc.ff_width = 64;
  mc.music_width = 16;
  nn::TokenTransformer model(mc);
  nn::GenConfig g;
  for (int64_t n : {5, 25, 50}) {
    nn::GenerationTrace trace;
    nn::generate_top(model, torch::zeros({1, n * mc.downsample, kMusicWidth}), n, g, &trace);
    for (int l = 1; l <= g.top_iters; ++l) {
      ++cases;
      bad += trace.remask_counts[l - 1] != mask_count(static_cast<double>(l) / g.top_iters, n);
    }
  }
  ok = ok && bad == 0;
  return {"schedule arithmetic", ok,
          fmt("gamma(0)=%g gamma(1)=%g gamma(0.5)-sqrt(2)/2=%.2g; %d/%d count cases match", mask_ratio(0.0),
              mask_ratio(1.0), mask_ratio(0.5) - std::numbers::sqrt2 / 2, cases - bad, cases)};
}

// ---------------------------------------------------------------- gradients

Result gradients() {
  Rng rng(31);
  GlobalDuetMotion m;
  for (int p = 0; p < 2; ++p) {
    Eigen::Vector3d pos(rng.uniform(-1, 1), 0.9, rng.uniform(-1, 1) + 1.5 * p);
    for (int t = 0; t < 2; ++t) {
      std::array<Eigen::Matrix3d, kLocalJointCount> local;
      for (auto& r : local)
        r = axis_angle(Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()), rng.uniform(-0.6, 0.6));
      m.person[p].root_position.push_back(pos + Eigen::Vector3d(0.02 * t, 0, 0));
      m.person[p].root_orientation.push_back(rot_y(rng.uniform(-3, 3)));
      m.person[p].local_rotations.push_back(local);
    }
  }
  const auto clip = encode_features(canonicalize(m), skel());
  const auto gt = torch::from_blob(const_cast<double*>(clip.features.data()),
                                   {1, clip.features.rows(), clip.features.cols()}, torch::kDouble)
                      .clone();
  const auto world = nn::features_to_world(gt, skel());
  torch::manual_seed(3);
  const auto start = gt + 0.05 * torch::randn_like(gt);
  const auto w = nn::joint_weights(2.0, torch::kDouble);

  const auto fk = test::grad_check(
      [&](const torch::Tensor& x) {
        const auto p = nn::features_to_world(x, skel());
        return nn::fk_loss(world.a, world.b, p.a, p.b);
      },
      start, 200, 1);
  const auto rel = test::grad_check(
      [&](const torch::Tensor& x) {
        const auto p = nn::features_to_world(x, skel());
        return nn::relative_loss(world.a, world.b, p.a, p.b, w);
      },
      start, 200, 2);
  const auto zq = torch::randn({1, 2, 16}, torch::kDouble);
  const auto com = test::grad_check([&](const torch::Tensor& z) { return nn::commitment_loss(z, zq, 0.02); },
                                    torch::randn({1, 2, 16}, torch::kDouble), 32, 3);
  const double worst = std::max({fk.rel_error, rel.rel_error, com.rel_error});
  return {"gradient checks (2-frame toy clip, step 1e-4)", worst < 1e-3,
          fmt("rel err L_com %.2g, L_fk %.2g, L_rel %.2g (< 1e-3)", com.rel_error, fk.rel_error, rel.rel_error)};
}

// ---------------------------------------------------------------- metrics

GlobalDuetMotion rigid_motion(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  GlobalDuetMotion m;
  std::array<Eigen::Matrix3d, kLocalJointCount> local;
  local.fill(Eigen::Matrix3d::Identity());
  for (int p = 0; p < 2; ++p)
    for (const auto& r : p == 0 ? a : b) {
      m.person[p].root_position.push_back(r);
      m.person[p].root_orientation.push_back(Eigen::Matrix3d::Identity());
      m.person[p].local_rotations.push_back(local);
    }
  return m;
}

Result metric_oracles(const PreparedDataset& data, nn::Extractor& extractor) {
  std::vector<DuetClip> clips;
  for (const auto& it : data.test) clips.push_back(it.clip);
  const auto lat = nn::extract_latents(extractor, clips);
  const double fid_self = distribution_scores(lat, lat).fid;

  int cf_bad = 0;
  for (const auto& it : data.test) {
    const auto m = decode_features(it.clip, skel());
    const auto pa = person_positions(m.person[0], skel());
    const auto pb = person_positions(m.person[1], skel());
    int hits = 0;
    for (int i = 0; i < m.frames(); ++i) {
      double best = 1e9;
      for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < kJointCount; ++k) best = std::min(best, (pa[i][j] - pb[i][k]).norm());
      hits += best < 0.40;
    }
    cf_bad += contact_frequency(m, skel()) != 100.0 * hits / m.frames();
  }

  // Root speed 1 - cos(2 pi t / 15 frames) stops exactly on every beat.
  const int n = 240, period = 15;
  std::vector<Eigen::Vector3d> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    const double x = i - period / (2 * std::numbers::pi) * std::sin(2 * std::numbers::pi * i / period);
    a[i] = Eigen::Vector3d(0.02 * x, 1, 0);
    b[i] = Eigen::Vector3d(0.02 * x, 1, 3);
  }
  std::vector<double> beats;
  for (int k = 0; k * period < n; ++k) beats.push_back(k * period / kFps);
  const double bas = beat_alignment(rigid_motion(a, b), skel(), beats);

  double frechet_err = 0.0;
  const double cases[][4] = {{0, 1, 0, 1}, {1, 1, 0, 1}, {0, 4, 0, 1}, {2, 9, -1, 4}, {0.5, 0.25, 0.5, 2.25}};
  for (const auto& c : cases) {
    GaussianMoments x{Eigen::VectorXd::Constant(1, c[0]), Eigen::MatrixXd::Constant(1, 1, c[1])};
    GaussianMoments y{Eigen::VectorXd::Constant(1, c[2]), Eigen::MatrixXd::Constant(1, 1, c[3])};
    const double expect = (c[0] - c[2]) * (c[0] - c[2]) + c[1] + c[3] - 2 * std::sqrt(c[1] * c[3]);
    frechet_err = std::max(frechet_err, std::abs(frechet_distance(x, y) - expect));
  }
  const bool ok = std::abs(fid_self) < 1e-6 && cf_bad == 0 && std::abs(bas - 1.0) <= 1e-9 && frechet_err <= 1e-9;
  return {"metric oracles", ok,
          fmt("FID(X,X) %.2g (< 1e-6); contact frequency %zu/%zu clips match; BAS %.12f; 1-D Frechet err %.2g",
              fid_self, data.test.size() - cf_bad, data.test.size(), bas, frechet_err)};
}

// ---------------------------------------------------------------- training cache

struct Cache {
  fs::path dir;
  json stamp;

  bool have(const std::string& name) const {
    const auto s = dir / (name + ".stamp.json");
    if (!fs::exists(s) || !fs::exists(dir / name)) return false;
    std::ifstream in(s);
    return json::parse(in) == stamp;
  }
  void mark(const std::string& name) const { std::ofstream(dir / (name + ".stamp.json")) << stamp.dump(); }
};

PreparedDataset dataset(const Options& o) {
  const auto dir = o.work / "dataset";
  Cache c{o.work, json{{"dataset", "default"}, {"root_channels", "steps+height"}}};
  if (c.have("dataset")) return load_dataset(dir);
  log(o, "building the synthetic dataset");
  auto d = build_synthetic_dataset(DatasetConfig{}, skel());
  save_dataset(d, dir);
  c.mark("dataset");
  return load_dataset(dir);  // stored as f32; use exactly what a later run reloads
}

nn::OptimConfig vq_optim(const Options& o) {
  nn::OptimConfig opt;
  opt.epochs = o.vq_epochs;
  opt.lr = 1e-3;
  return opt;
}

nn::VqConfig vq_config(bool single) {
  nn::VqConfig c;
  if (single) {
    c.single_level = true;
    c.width = nn::matched_single_level_width(nn::VqConfig{});
  }
  return c;
}

nn::HierVq vq_model(const Options& o, const PreparedDataset& data, const nn::TensorSet& train, bool single,
                    uint64_t seed, double* train_secs) {
  const std::string name = fmt("vq_%s_s%llu", single ? "single" : "hier", static_cast<unsigned long long>(seed));
  Cache c{o.work, json{{"vq", vq_config(single)}, {"optim", vq_optim(o)}, {"seed", seed}}};
  if (c.have(name)) return nn::load_vq(read_archive(o.work / name, kFormatVq));
  log(o, "training " + name);
  const auto t0 = Clock::now();
  torch::manual_seed(seed);
  nn::HierVq model(vq_config(single));
  nn::train_vq(model, train, data.motion_stats, skel(), vq_optim(o), seed);
  if (train_secs) *train_secs = seconds_since(t0);
  Archive a;
  nn::save_vq(model, data.motion_stats, data.music_stats, {{"train_seconds", seconds_since(t0)}}, a);
  write_archive(a, o.work / name);
  c.mark(name);
  return model;
}

double test_mpjpe(nn::HierVq& vq, const PreparedDataset& data) {
  double sum = 0.0;
  for (const auto& it : data.test) {
    const auto rec = nn::reconstruct(vq, it.clip, it.music, data.motion_stats, data.music_stats);
    sum += recon_errors(decode_features(it.clip, skel()), decode_features(rec, skel()), skel()).mpjpe_mean();
  }
  return sum / static_cast<double>(data.test.size());
}

Result hierarchy_trend(const Options& o, const PreparedDataset& data, const nn::TensorSet& train) {
  double hier = 0.0, single = 0.0, longest = 0.0;
  std::ostringstream per_seed;
  for (int s = 0; s < o.seeds; ++s) {
    double th = 0.0, ts = 0.0;
    auto h = vq_model(o, data, train, false, s, &th);
    auto g = vq_model(o, data, train, true, s, &ts);
    const double eh = test_mpjpe(h, data), es = test_mpjpe(g, data);
    longest = std::max({longest, th, ts});
    per_seed << (s ? ", " : "") << fmt("%.1f/%.1f", eh, es);
    hier += eh / o.seeds;
    single += es / o.seeds;
  }
  const double ratio = hier / single;
  return {"hierarchical vs single-level reconstruction", ratio <= 0.8,
          fmt("test MPJPE %.1f mm vs %.1f mm, ratio %.3f (<= 0.8); per seed hier/single mm: %s", hier, single,
              ratio, per_seed.str().c_str())};
}

struct Trained {
  nn::Models models;
  nn::Extractor extractor{nullptr};
  double refiner_secs = 0.0;
};

nn::MaskedConfig masked_config(bool bottom) {
  nn::MaskedConfig c;
  nn::VqConfig v;
  c.downsample = bottom ? v.eta_bot : v.eta_top;
  c.top_upsample = bottom ? v.eta_top / v.eta_bot : 0;
  return c;
}

Trained train_pipeline(const Options& o, const PreparedDataset& data, const nn::TensorSet& train) {
  Trained t;
  t.models.motion = data.motion_stats;
  t.models.music = data.music_stats;
  t.models.vq = vq_model(o, data, train, false, 0, nullptr);
  t.models.vq->eval();

  nn::OptimConfig mopt;
  mopt.epochs = o.masked_epochs;
  mopt.lr = 3e-4;
  mopt.crop_frames = 0;
  Cache mc{o.work, json{{"vq", vq_config(false)}, {"vq_optim", vq_optim(o)}, {"optim", mopt},
                        {"top", masked_config(false)}, {"bottom", masked_config(true)}}};
  if (mc.have("masked")) {
    const auto a = read_archive(o.work / "masked", kFormatMasked);
    t.models.top = nn::load_transformer(a, "top/");
    t.models.bot = nn::load_transformer(a, "bottom/");
  } else {
    log(o, "training masked transformers");
    const auto tokens = nn::tokenize_set(t.models.vq, train);
    torch::manual_seed(1);
    t.models.top = nn::TokenTransformer(masked_config(false));
    t.models.bot = nn::TokenTransformer(masked_config(true));
    const double drop = nn::GenConfig{}.cond_dropout;
    nn::train_masked(t.models.top, tokens.top, train.music, {}, mopt, drop, 1);
    nn::train_masked(t.models.bot, tokens.bot, train.music, tokens.top, mopt, drop, 2);
    Archive a;
    a.format = kFormatMasked;
    nn::save_transformer(t.models.top, "top/", a);
    nn::save_transformer(t.models.bot, "bottom/", a);
    write_archive(a, o.work / "masked");
    mc.mark("masked");
  }

  nn::OptimConfig ropt;
  ropt.epochs = o.refiner_epochs;
  ropt.lr = 1e-3;
  ropt.crop_frames = 128;
  Cache rc{o.work, json{{"refiner", nn::RefinerConfig{}}, {"optim", ropt}}};
  if (rc.have("refiner")) {
    t.models.refiner = nn::load_refiner(read_archive(o.work / "refiner", kFormatRefiner));
  } else {
    log(o, "training refiner");
    const auto t0 = Clock::now();
    torch::manual_seed(3);
    t.models.refiner = nn::Refiner(nn::RefinerConfig{});
    nn::train_refiner(t.models.refiner, train, data.motion_stats, ropt, 3);
    t.refiner_secs = seconds_since(t0);
    Archive a;
    nn::save_refiner(t.models.refiner, {{"train_seconds", t.refiner_secs}}, a);
    write_archive(a, o.work / "refiner");
    rc.mark("refiner");
  }

  nn::OptimConfig eopt;
  eopt.epochs = o.extractor_epochs;
  eopt.lr = 1e-3;
  Cache ec{o.work, json{{"extractor", nn::ExtractorConfig{}}, {"optim", eopt}}};
  if (ec.have("extractor")) {
    t.extractor = nn::load_extractor(read_archive(o.work / "extractor", kFormatExtractor));
  } else {
    log(o, "training extractor");
    torch::manual_seed(4);
    t.extractor = nn::Extractor(nn::ExtractorConfig{});
    nn::train_extractor(t.extractor, train, data.motion_stats, eopt, 4);
    Archive a;
    nn::save_extractor(t.extractor, {}, a);
    write_archive(a, o.work / "extractor");
    ec.mark("extractor");
  }
  t.models.vq->eval();
  t.models.top->eval();
  t.models.bot->eval();
  t.models.refiner->eval();
  t.extractor->eval();
  return t;
}

// ---------------------------------------------------------------- generation

nn::GenConfig gen_config(uint64_t seed) {
  nn::GenConfig g;
  g.seed = seed;
  return g;
}

Result completeness(Trained& t, const PreparedDataset& data, std::vector<nn::Generated>& out) {
  const int count = 50;
  const int64_t k = t.models.vq->cfg.codebook_size;
  int incomplete = 0, out_of_range = 0, mismatched = 0;
  for (int i = 0; i < count; ++i) {
    const auto& it = data.test[i % data.test.size()];
    auto g = nn::generate(t.models, it.music, it.clip.frames(), gen_config(1000 + i));
    for (const auto* seq : {&g.top, &g.bot})
      for (int64_t id : *seq) {
        incomplete += id == k;
        out_of_range += id < 0 || id > k;
      }
    const auto again = nn::generate(t.models, it.music, it.clip.frames(), gen_config(1000 + i));
    mismatched += again.top != g.top || again.bot != g.bot;
    out.push_back(std::move(g));
  }
  return {"generation completeness and reproducibility (50 generations)",
          incomplete == 0 && out_of_range == 0 && mismatched == 0,
          fmt("%d MASK left, %d ids out of range, %d/%d seeds not reproduced", incomplete, out_of_range, mismatched,
              count)};
}

Result refiner_effect(Trained& t, const std::vector<nn::Generated>& gens, double gen_secs) {
  const auto t0 = Clock::now();
  int better = 0;
  double before = 0.0, after = 0.0;
  for (const auto& g : gens) {
    const double raw = foot_skate(decode_features(g.unrefined, skel()), skel());
    const double ref = foot_skate(decode_features(g.clip, skel()), skel());
    better += ref <= raw;
    before += raw / gens.size();
    after += ref / gens.size();
  }
  const double secs = seconds_since(t0) + gen_secs + t.refiner_secs;
  const double frac = static_cast<double>(better) / gens.size();
  return {"refiner reduces foot skating", frac >= 0.7 && secs < 600.0,
          fmt("%d/%zu clips not worse (%.0f%%, >= 70%%); mean skate %.4f -> %.4f m/s; %.0f s (< 600 s)", better,
              gens.size(), 100 * frac, before, after, secs)};
}

Result music_sensitivity(Trained& t, const PreparedDataset& data) {
  // Pairs of windows from different duets (each test duet yields consecutive windows).
  const int per_duet = static_cast<int>(data.test.size()) / data.config.test_duets;
  const int pairs = std::min(20, data.config.test_duets - 1);
  double changed = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const auto& x = data.test[i * per_duet];
    const auto& y = data.test[(i + 1) * per_duet];
    const int64_t n = x.clip.frames() / t.models.vq->cfg.eta_top;
    const auto cfg = gen_config(77 + i);
    const auto a = nn::generate_top(t.models.top, nn::music_tensor(x.music, t.models.music), n, cfg);
    const auto b = nn::generate_top(t.models.top, nn::music_tensor(y.music, t.models.music), n, cfg);
    int diff = 0;
    for (int64_t p = 0; p < n; ++p) diff += a[p] != b[p];
    changed += static_cast<double>(diff) / n / pairs;
  }
  return {"music conditioning sensitivity", changed >= 0.3,
          fmt("%.1f%% of top tokens change when the music is swapped (>= 30%%), %d pairs", 100 * changed, pairs)};
}

// ---------------------------------------------------------------- archives

bool same_tree(const fs::path& a, const fs::path& b, int& files, std::string& why) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  if (other != rel.size()) {
    why = "file count differs";
    return false;
  }
  for (const auto& r : rel) {
    if (r.filename() == ".lock" || r.parent_path() == "logs") continue;
    std::ifstream x(a / r, std::ios::binary), y(b / r, std::ios::binary);
    const std::string bx((std::istreambuf_iterator<char>(x)), {}), by((std::istreambuf_iterator<char>(y)), {});
    ++files;
    if (bx != by) {
      why = r.string() + " differs";
      return false;
    }
  }
  return true;
}

Result archive_bits(const Options& o) {
  if (o.duetgen.empty() || !fs::exists(o.duetgen))
    return {"archive bit-exactness across runs", false, "duetgen binary not found"};
  const auto cfg = o.work / "archive_config.json";
  std::ofstream(cfg) << json{{"dataset", {{"train_duets", 3}, {"test_duets", 1}}},
                             {"vq", {{"width", 32}, {"codebook_size", 32}, {"code_dim_top", 16},
                                     {"code_dim_bot", 16}, {"music_width", 8}}},
                             {"masked",
                              {{"top", {{"codebook_size", 32}, {"downsample", 8}, {"top_upsample", 0}}},
                               {"bottom", {{"codebook_size", 32}, {"downsample", 4}, {"top_upsample", 2}}}}},
                             {"optim", {{"vq", {{"epochs", 2}, {"warmup_steps", 2}, {"batch_size", 4}}}}}}
                            .dump(2);
  std::vector<fs::path> runs = {o.work / "archive_run1", o.work / "archive_run2"};
  for (const auto& r : runs) {
    fs::remove_all(r);
    const std::string base = "\"" + o.duetgen.string() + "\" --deterministic --config \"" + cfg.string() +
                             "\" --out \"" + r.string() + "\" ";
    for (const char* stage : {"prepare", "train-vqvae"})
      if (std::system((base + stage + " > /dev/null 2>&1").c_str()) != 0)
        return {"archive bit-exactness across runs", false, std::string("duetgen ") + stage + " failed"};
  }
  int files = 0;
  std::string why;
  const bool same = same_tree(runs[0], runs[1], files, why);
  return {"archive bit-exactness across runs", same,
          same ? fmt("dataset + checkpoint archives: %d files byte-identical across two processes", files)
               : "mismatch: " + why};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Acceptance checks"};
  app.add_option("--work", o.work, "Cache directory for datasets and trained models");
  app.add_option("--duetgen", o.duetgen, "Path to the duetgen binary");
  app.add_option("--seeds", o.seeds, "Seeds for the reconstruction comparison")->check(CLI::PositiveNumber);
  app.add_option("--vq-epochs", o.vq_epochs)->check(CLI::PositiveNumber);
  app.add_option("--masked-epochs", o.masked_epochs)->check(CLI::PositiveNumber);
  app.add_option("--refiner-epochs", o.refiner_epochs)->check(CLI::PositiveNumber);
  app.add_option("--extractor-epochs", o.extractor_epochs)->check(CLI::PositiveNumber);
  app.add_flag("--strict", o.strict, "Exit non-zero when any check fails");
  app.add_flag("-v,--verbose", o.verbose, "Progress on stderr");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(o.work);
  nn::set_deterministic(true);

  std::vector<Result> results;
  auto report = [&](Result r) {
    std::cout << (r.pass ? "PASS  " : "FAIL  ") << r.name << ": " << r.detail << std::endl;
    results.push_back(std::move(r));
  };
  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      report(fn());
    } catch (const std::exception& e) {
      report({name, false, std::string("threw: ") + e.what()});
    }
  };

  try {
    guarded("representation roundtrip", roundtrip);
    guarded("FK oracle", fk_oracle);
    const auto data = dataset(o);
    guarded("mirror involution and canonicalize idempotence", [&] { return mirror_and_canonical(data); });
    guarded("schedule arithmetic", schedule);
    guarded("gradient checks", gradients);

    const auto train = nn::make_tensor_set(data.train, data.motion_stats, data.music_stats);
    guarded("hierarchical vs single-level reconstruction", [&] { return hierarchy_trend(o, data, train); });

    auto trained = train_pipeline(o, data, train);
    std::vector<nn::Generated> gens;
    const auto g0 = Clock::now();
    guarded("generation completeness", [&] { return completeness(trained, data, gens); });
    // Completeness generates every clip twice; charge the refiner check for one pass.
    const double gen_secs = seconds_since(g0) / 2;
    guarded("metric oracles", [&] { return metric_oracles(data, trained.extractor); });
    guarded("refiner reduces foot skating", [&] { return refiner_effect(trained, gens, gen_secs); });
    guarded("music conditioning sensitivity", [&] { return music_sensitivity(trained, data); });
  } catch (const std::exception& e) {
    report({"setup", false, std::string("threw: ") + e.what()});
  }
  guarded("archive bit-exactness across runs", [&] { return archive_bits(o); });

  const auto passed = std::count_if(results.begin(), results.end(), [](const Result& r) { return r.pass; });
  std::cout << passed << "/" << results.size() << " checks passed" << std::endl;
  return o.strict && passed != static_cast<long>(results.size()) ? 1 : 0;
}
