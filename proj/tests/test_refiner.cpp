#include "torch_doctest.hpp"

#include <cmath>

#include "duet/dataset.hpp"
#include "duet/error.hpp"
#include "duet/nn/checkpoint.hpp"
#include "duet/nn/extractor.hpp"
#include "duet/nn/refiner.hpp"
#include "duet/nn/training.hpp"
#include "helpers.hpp"

using namespace duet;
using namespace duet::nn;

namespace {

const Skeleton& skel() {
  static const Skeleton s = Skeleton::smpl22();
  return s;
}

DuetClip toy_clip(int frames, uint64_t seed) {
  return encode_features(canonicalize(test::random_motion(frames, seed)), skel());
}

}  // namespace

TEST_CASE("local/trajectory split") {
  const auto clip = toy_clip(12, 1);
  const auto local = extract_local(clip.features);
  CHECK(local.cols() == 530);
  CHECK(local.rows() == 12);
  // A's root orientation leads the local block.
  CHECK(local.leftCols(6) == clip.features.middleCols(layout::kRootRot, 6));
  const auto traj = extract_traj(clip.features);
  CHECK(traj.cols() == 6);
  CHECK(merge_local_traj(local, traj) == clip.features);
  const auto zeroed = merge_local_traj(local, FeatureMatrix::Zero(12, 6));
  CHECK(extract_local(zeroed) == local);
  CHECK_THROWS_WITH_AS(extract_local(FeatureMatrix::Zero(3, 535)), doctest::Contains("shape-mismatch"), Error);

  const auto t = to_tensor(clip.features);
  CHECK(torch::equal(extract_local(t), to_tensor(local)));
  CHECK(torch::equal(extract_traj(t), to_tensor(traj)));
}

TEST_CASE("refine loss") {
  const auto gt = torch::randn({7, 6}, torch::kDouble);
  CHECK(refine_loss(gt, gt).item<double>() == 0.0);
  const int n = 40;
  const auto b = torch::tensor({0.01, -0.02, 0.005, 0.03, 0.0, -0.01}, torch::kDouble);
  const auto base = torch::randn({n, 6}, torch::kDouble);
  const double bn = b.norm().item<double>();
  const double v = refine_loss(base + b, base).item<double>();
  // Horizontal step errors pile up along the path (k |b_xz| at frame k); height errors do not.
  double path = 0.0;
  for (int k = 1; k <= n; ++k) path += std::hypot(k * 0.01, -0.02, k * 0.005);
  CHECK(v == doctest::Approx(n * bn + path).epsilon(1e-9));
  for (int i = 0; i < 10; ++i) CHECK(refine_loss(torch::randn({5, 6}), torch::randn({5, 6})).item<double>() >= 0.0);
  CHECK_THROWS_AS(refine_loss(torch::zeros({5, 6}), torch::zeros({4, 6})), Error);
}

TEST_CASE("untrained refiner refuses to predict") {
  Refiner r(RefinerConfig{});
  CHECK_THROWS_WITH_AS(predict_traj(r, FeatureMatrix::Zero(8, 530)), doctest::Contains("untrained"), Error);
}

TEST_CASE("refiner training, splice contract and checkpoint") {
  DatasetConfig cfg;
  cfg.train_duets = 10;
  cfg.test_duets = 2;
  const auto data = build_synthetic_dataset(cfg, skel());
  const auto train = make_tensor_set(data.train, data.motion_stats, data.music_stats);
  torch::manual_seed(0);
  RefinerConfig rc;
  rc.width = 64;
  Refiner model(rc);
  OptimConfig opt;
  opt.epochs = 120;
  opt.lr = 1e-3;
  opt.batch_size = 8;
  opt.crop_frames = 128;
  const auto log = train_refiner(model, train, data.motion_stats, opt, 1);
  CHECK(log["epochs"].back()["loss"].get<double>() < log["epochs"].front()["loss"].get<double>());

  // Held-out root-delta error beats predicting zeros.
  double model_err = 0.0, zero_err = 0.0;
  for (const auto& it : data.test) {
    const auto pred = predict_traj(model, extract_local(it.clip.features));
    const auto gt = extract_traj(it.clip.features);
    CHECK(pred.rows() == it.clip.frames());
    model_err += (pred.leftCols(3) - gt.leftCols(3)).bottomRows(gt.rows() - 1).cwiseAbs().mean();
    zero_err += gt.leftCols(3).bottomRows(gt.rows() - 1).cwiseAbs().mean();
  }
  CHECK(model_err < zero_err);

  const auto& clip = data.test[0].clip;
  const auto refined = refine_clip(model, clip);
  CHECK(refined.features.cols() == 536);
  CHECK(extract_local(refined.features) == extract_local(clip.features));
  CHECK(refined.features.row(0).head(3) == clip.features.row(0).head(3));
  CHECK(predict_traj(model, extract_local(clip.features)) == predict_traj(model, extract_local(clip.features)));

  Archive a;
  save_refiner(model, {}, a);
  auto back = load_refiner(a);
  CHECK(refine_clip(back, clip).features == refined.features);
}

TEST_CASE("feature extractor") {
  DatasetConfig cfg;
  cfg.train_duets = 2;
  cfg.test_duets = 1;
  const auto data = build_synthetic_dataset(cfg, skel());
  const auto train = make_tensor_set(data.train, data.motion_stats, data.music_stats);
  torch::manual_seed(0);
  ExtractorConfig ec;
  ec.width = 32;
  Extractor model(ec);
  model->set_stats(data.motion_stats);
  const double before = extractor_loss(model, train, data.motion_stats);
  OptimConfig opt;
  opt.epochs = 15;
  opt.lr = 1e-3;
  opt.batch_size = 4;
  const auto log = train_extractor(model, train, data.motion_stats, opt, 2);
  const double after = log["final_loss"].get<double>();
  CHECK(after < before);
  CHECK(model->final_loss.item<float>() == doctest::Approx(after).epsilon(1e-6));
  CHECK(extractor_loss(model, train, data.motion_stats) <= after * (1 + 1e-5));

  std::vector<DuetClip> clips;
  for (const auto& it : data.test) clips.push_back(it.clip);
  const auto z = extract_latents(model, clips);
  CHECK(z.person_a.rows() == static_cast<int>(clips.size()));
  CHECK(z.person_a.cols() == 64);
  CHECK(z.paired().cols() == 128);
  CHECK(extract_latents(model, clips).person_b == z.person_b);

  Archive a;
  save_extractor(model, {}, a);
  auto back = load_extractor(a);
  CHECK(extract_latents(back, clips).person_a == z.person_a);
  CHECK(archive_hash(a).size() == 16);
}
