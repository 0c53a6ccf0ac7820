// duetgen: data preparation, the training stages, generation and evaluation.
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "duet/dataset.hpp"
#include "duet/error.hpp"
#include "duet/music.hpp"
#include "duet/nn/checkpoint.hpp"
#include "duet/nn/pipeline.hpp"
#include "duet/nn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace duet;

namespace {

struct RunConfig {
  uint64_t seed = 1;
  fs::path output_dir = "run";
  fs::path skeleton;  // empty = built-in 22-joint skeleton
  DatasetConfig dataset;
  nn::VqConfig vq;
  nn::MaskedConfig top;
  nn::MaskedConfig bottom;
  nn::GenConfig gen;
  nn::RefinerConfig refiner;
  nn::ExtractorConfig extractor;
  nn::OptimConfig optim_vq;
  nn::OptimConfig optim_masked;
  nn::OptimConfig optim_refiner;
  nn::OptimConfig optim_extractor;
  json raw = json::object();
};

json dataset_json(const DatasetConfig& c) {
  return {{"seed", c.seed},
          {"train_duets", c.train_duets},
          {"test_duets", c.test_duets},
          {"duration", c.duration},
          {"window", c.window},
          {"stride", c.stride},
          {"test_stride", c.test_stride},
          {"mirror", c.mirror},
          {"min_frames_per_beat", c.min_frames_per_beat},
          {"max_frames_per_beat", c.max_frames_per_beat},
          {"min_profile", c.min_profile},
          {"max_profile", c.max_profile}};
}

DatasetConfig dataset_from(const json& j) {
  DatasetConfig d, c;
  c.seed = j.value("seed", d.seed);
  c.train_duets = j.value("train_duets", d.train_duets);
  c.test_duets = j.value("test_duets", d.test_duets);
  c.duration = j.value("duration", d.duration);
  c.window = j.value("window", d.window);
  c.stride = j.value("stride", d.stride);
  c.test_stride = j.value("test_stride", d.test_stride);
  c.mirror = j.value("mirror", d.mirror);
  c.min_frames_per_beat = j.value("min_frames_per_beat", d.min_frames_per_beat);
  c.max_frames_per_beat = j.value("max_frames_per_beat", d.max_frames_per_beat);
  c.min_profile = j.value("min_profile", d.min_profile);
  c.max_profile = j.value("max_profile", d.max_profile);
  return c;
}

json snapshot(const RunConfig& c) {
  return {{"seed", c.seed},
          {"skeleton", c.skeleton.string()},
          {"dataset", dataset_json(c.dataset)},
          {"vq", c.vq},
          {"masked", {{"top", c.top}, {"bottom", c.bottom}}},
          {"gen", c.gen},
          {"refiner", c.refiner},
          {"extractor", c.extractor},
          {"optim",
           {{"vq", c.optim_vq}, {"masked", c.optim_masked}, {"refiner", c.optim_refiner},
            {"extractor", c.optim_extractor}}}};
}

RunConfig default_config() {
  RunConfig c;
  c.top.top_upsample = 0;
  c.top.downsample = c.vq.eta_top;
  c.bottom.top_upsample = c.vq.eta_top / c.vq.eta_bot;
  c.bottom.downsample = c.vq.eta_bot;
  c.optim_vq.epochs = 100;
  c.optim_vq.lr = 1e-3;
  c.optim_masked = {};
  c.optim_masked.epochs = 150;
  c.optim_masked.lr = 3e-4;
  c.optim_masked.crop_frames = 0;
  c.optim_refiner.epochs = 40;
  c.optim_refiner.lr = 1e-3;
  c.optim_refiner.crop_frames = 128;
  c.optim_extractor.epochs = 40;
  c.optim_extractor.lr = 1e-3;
  return c;
}

RunConfig load_config(const std::string& path) {
  RunConfig c = default_config();
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw Error("missing-config", path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
  c.raw = j;
  try {
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.skeleton = j.value("skeleton", std::string());
    if (j.contains("dataset")) c.dataset = dataset_from(j["dataset"]);
    if (j.contains("vq")) c.vq = j["vq"].get<nn::VqConfig>();
    c.top.downsample = c.vq.eta_top;
    c.bottom.downsample = c.vq.eta_bot;
    c.bottom.top_upsample = c.vq.eta_top / c.vq.eta_bot;
    if (j.contains("masked")) {
      if (j["masked"].contains("top")) c.top = j["masked"]["top"].get<nn::MaskedConfig>();
      if (j["masked"].contains("bottom")) c.bottom = j["masked"]["bottom"].get<nn::MaskedConfig>();
    }
    if (j.contains("gen")) c.gen = j["gen"].get<nn::GenConfig>();
    if (j.contains("refiner")) c.refiner = j["refiner"].get<nn::RefinerConfig>();
    if (j.contains("extractor")) c.extractor = j["extractor"].get<nn::ExtractorConfig>();
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      if (o.contains("vq")) c.optim_vq = o["vq"].get<nn::OptimConfig>();
      if (o.contains("masked")) c.optim_masked = o["masked"].get<nn::OptimConfig>();
      if (o.contains("refiner")) c.optim_refiner = o["refiner"].get<nn::OptimConfig>();
      if (o.contains("extractor")) c.optim_extractor = o["extractor"].get<nn::OptimConfig>();
    }
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  c.vq.validate();
  c.top.validate();
  c.bottom.validate();
  c.gen.validate();
  c.refiner.validate();
  c.extractor.validate();
  if (c.vq.single_level) throw Error("bad-config", "generation needs the two-level tokenizer");
  if (c.top.conditioned_on_top() || !c.bottom.conditioned_on_top())
    throw Error("bad-config", "masked.top must have top_upsample 0 and masked.bottom a positive one");
  if (c.top.downsample != c.vq.eta_top || c.bottom.downsample != c.vq.eta_bot ||
      c.bottom.top_upsample * c.vq.eta_bot != c.vq.eta_top)
    throw Error("bad-config", "masked model strides must match the tokenizer");
  if (c.top.codebook_size != c.vq.codebook_size || c.bottom.codebook_size != c.vq.codebook_size)
    throw Error("bad-config", "masked codebook size must match the tokenizer");
  if (!c.skeleton.empty() && !fs::exists(c.skeleton)) throw Error("missing-config", "skeleton " + c.skeleton.string());
}

std::string config_hash(const json& snap) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : snap.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// One command per output directory at a time.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw Error("locked", "another command holds " + path_.string());
    const std::string pid = std::to_string(::getpid());
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Paths {
  fs::path root;
  fs::path dataset() const { return root / "dataset"; }
  fs::path vq() const { return root / "vq"; }
  fs::path masked() const { return root / "masked"; }
  fs::path refiner() const { return root / "refiner"; }
  fs::path extractor() const { return root / "extractor"; }
};

Archive require(const fs::path& dir, const std::string& format) {
  if (!fs::exists(dir / "manifest.json")) throw Error("missing-stage-input", format);
  return read_archive(dir, format);
}

PreparedDataset require_dataset(const Paths& p) {
  if (!fs::exists(p.dataset() / "clips" / "manifest.json")) throw Error("missing-stage-input", kFormatDataset);
  return load_dataset(p.dataset());
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("io-error", path.string());
}

struct Context {
  RunConfig cfg;
  Paths paths;
  Skeleton skel;
  json snap;
  std::string hash;

  json provenance() const { return {{"config", snap}, {"config_hash", hash}, {"seed", cfg.seed}}; }
};

nn::ProgressFn printer(const std::string& stage) {
  return [stage](const nn::EpochRecord& r) {
    std::cerr << stage << " epoch " << r.epoch << " loss " << r.loss << "\n";
  };
}

void cmd_prepare(Context& c) {
  const auto data = build_synthetic_dataset(c.cfg.dataset, c.skel);
  save_dataset(data, c.paths.dataset());
  c.skel.save(c.paths.dataset() / "skeleton.json");
  json manifest = c.provenance();
  manifest["train"] = json::array();
  manifest["test"] = json::array();
  for (const auto& it : data.train) manifest["train"].push_back(it.id);
  for (const auto& it : data.test) manifest["test"].push_back(it.id);
  write_json(c.paths.dataset() / "manifest.json", manifest);
  std::cout << "prepared " << data.train.size() << " training and " << data.test.size() << " test windows in "
            << c.paths.dataset() << "\n";
}

void cmd_train_vqvae(Context& c, bool resume) {
  const auto data = require_dataset(c.paths);
  const auto train = nn::make_tensor_set(data.train, data.motion_stats, data.music_stats);
  nn::HierVq model = resume ? nn::load_vq(require(c.paths.vq(), kFormatVq)) : nn::HierVq(c.cfg.vq);
  auto log = nn::train_vq(model, train, data.motion_stats, c.skel, c.cfg.optim_vq, c.cfg.seed, printer("vq"));
  log["utilization"] = {{"top", nn::codebook_utilization(model, train, true)},
                        {"bottom", nn::codebook_utilization(model, train, false)}};
  log.update(c.provenance());
  Archive a;
  nn::save_vq(model, data.motion_stats, data.music_stats, c.provenance(), a);
  write_archive(a, c.paths.vq());
  write_json(c.paths.root / "logs" / "vq.json", log);
  std::cout << "vq checkpoint " << nn::archive_hash(a) << " utilization top " << log["utilization"]["top"]
            << " bottom " << log["utilization"]["bottom"] << "\n";
}

void cmd_train_masked(Context& c, bool resume) {
  const Archive vq_archive = require(c.paths.vq(), kFormatVq);
  const auto data = require_dataset(c.paths);
  FeatureStats motion, music;
  auto vq = nn::load_vq(vq_archive, &motion, &music);
  const auto train = nn::make_tensor_set(data.train, motion, music);
  const auto tokens = nn::tokenize_set(vq, train);
  nn::TokenTransformer top(c.cfg.top), bot(c.cfg.bottom);
  if (resume) {
    const Archive prev = require(c.paths.masked(), kFormatMasked);
    top = nn::load_transformer(prev, "top/");
    bot = nn::load_transformer(prev, "bottom/");
  }
  json log = c.provenance();
  log["top"] = nn::train_masked(top, tokens.top, train.music, {}, c.cfg.optim_masked, c.cfg.gen.cond_dropout,
                                c.cfg.seed, printer("top"));
  log["bottom"] = nn::train_masked(bot, tokens.bot, train.music, tokens.top, c.cfg.optim_masked,
                                   c.cfg.gen.cond_dropout, c.cfg.seed + 1, printer("bottom"));
  Archive a;
  a.format = kFormatMasked;
  a.metadata = c.provenance();
  a.metadata["vq_hash"] = nn::archive_hash(vq_archive);
  nn::save_transformer(top, "top/", a);
  nn::save_transformer(bot, "bottom/", a);
  write_archive(a, c.paths.masked());
  write_json(c.paths.root / "logs" / "masked.json", log);
  std::cout << "masked checkpoint " << nn::archive_hash(a) << "\n";
}

void cmd_train_refiner(Context& c, bool resume) {
  const auto data = require_dataset(c.paths);
  const auto train = nn::make_tensor_set(data.train, data.motion_stats, data.music_stats);
  nn::Refiner model = resume ? nn::load_refiner(require(c.paths.refiner(), kFormatRefiner)) : nn::Refiner(c.cfg.refiner);
  auto log = nn::train_refiner(model, train, data.motion_stats, c.cfg.optim_refiner, c.cfg.seed, printer("refiner"));
  log.update(c.provenance());
  Archive a;
  nn::save_refiner(model, c.provenance(), a);
  write_archive(a, c.paths.refiner());
  write_json(c.paths.root / "logs" / "refiner.json", log);
  std::cout << "refiner checkpoint " << nn::archive_hash(a) << "\n";
}

void cmd_train_extractor(Context& c, bool resume) {
  const auto data = require_dataset(c.paths);
  const auto train = nn::make_tensor_set(data.train, data.motion_stats, data.music_stats);
  nn::Extractor model =
      resume ? nn::load_extractor(require(c.paths.extractor(), kFormatExtractor)) : nn::Extractor(c.cfg.extractor);
  auto log =
      nn::train_extractor(model, train, data.motion_stats, c.cfg.optim_extractor, c.cfg.seed, printer("extractor"));
  log.update(c.provenance());
  Archive a;
  nn::save_extractor(model, c.provenance(), a);
  write_archive(a, c.paths.extractor());
  write_json(c.paths.root / "logs" / "extractor.json", log);
  std::cout << "extractor checkpoint " << nn::archive_hash(a) << " final loss " << log["final_loss"] << "\n";
}

nn::Models load_models(const Context& c, bool refine) {
  nn::Models m;
  m.vq = nn::load_vq(require(c.paths.vq(), kFormatVq), &m.motion, &m.music);
  const Archive masked = require(c.paths.masked(), kFormatMasked);
  m.top = nn::load_transformer(masked, "top/");
  m.bot = nn::load_transformer(masked, "bottom/");
  if (refine) m.refiner = nn::load_refiner(require(c.paths.refiner(), kFormatRefiner));
  return m;
}

void write_clip(const fs::path& dir, const DuetClip& clip, const MusicFeatures* music, const json& meta) {
  Archive a = clip_to_archive(clip, music);
  for (auto it = meta.begin(); it != meta.end(); ++it) a.metadata[it.key()] = it.value();
  write_archive(a, dir);
}

struct MusicInput {
  MusicFeatures features;
  std::vector<double> beats;
  std::string source;
};

MusicInput music_input(const std::string& wav, double bpm, int frames, uint64_t seed) {
  AudioClip audio;
  MusicInput out;
  if (!wav.empty()) {
    audio = load_audio(wav);
    out.beats = detect_music_beats(audio);
    out.source = wav;
  } else {
    auto click = synth_click_track(bpm, frames / kFps + 0.5, seed);
    audio = std::move(click.audio);
    out.beats = std::move(click.beat_times);
    out.source = "click:" + std::to_string(bpm);
  }
  out.features = extract_features(audio, frames);
  return out;
}

void cmd_generate(Context& c, const std::string& wav, double bpm, int frames, const std::string& name, bool refine) {
  auto models = load_models(c, refine);
  const auto music = music_input(wav, bpm, frames, c.cfg.seed);
  nn::GenConfig gen = c.cfg.gen;
  gen.seed = c.cfg.seed;
  const auto g = nn::generate(models, music.features, frames, gen);
  json meta = c.provenance();
  meta["music_source"] = music.source;
  meta["beat_times"] = music.beats;
  meta["top_tokens"] = g.top;
  meta["bottom_tokens"] = g.bot;
  meta["refined"] = refine;
  const fs::path dir = c.paths.root / "generated" / name;
  write_clip(dir, g.clip, &music.features, meta);
  auto motion = nn::motion_export(g.clip, c.skel);
  motion["provenance"] = c.provenance();
  write_json(c.paths.root / "generated" / (name + ".motion.json"), motion);
  std::cout << "generated " << frames << " frames (" << g.top.size() << " top, " << g.bot.size()
            << " bottom tokens) -> " << dir << "\n";
}

void cmd_reconstruct(Context& c, const std::string& split) {
  const auto data = require_dataset(c.paths);
  FeatureStats motion, music;
  auto vq = nn::load_vq(require(c.paths.vq(), kFormatVq), &motion, &music);
  const auto& items = split == "train" ? data.train : data.test;
  const fs::path out = c.paths.root / "reconstructed";
  const fs::path ref = c.paths.root / "reference";
  for (const auto& it : items) {
    json meta = c.provenance();
    meta["beat_times"] = it.beat_times;
    meta["source_id"] = it.id;
    write_clip(out / it.id, nn::reconstruct(vq, it.clip, it.music, motion, music), &it.music, meta);
    write_clip(ref / it.id, it.clip, &it.music, meta);
  }
  std::cout << "reconstructed " << items.size() << " " << split << " windows -> " << out << " (references in " << ref
            << ")\n";
}

std::vector<std::pair<std::string, nn::EvalClip>> read_clip_dir(const fs::path& dir) {
  std::vector<std::pair<std::string, nn::EvalClip>> out;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!fs::exists(e.path() / "manifest.json")) continue;
      const Archive a = read_archive(e.path(), kFormatClip);
      nn::EvalClip c{clip_from_archive(a), std::nullopt};
      if (a.metadata.contains("beat_times")) c.beats = a.metadata["beat_times"].get<std::vector<double>>();
      out.emplace_back(e.path().filename().string(), std::move(c));
    }
  }
  if (out.empty()) throw Error("empty-directory", dir.string());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

void cmd_evaluate(Context& c, const fs::path& gen_dir, const fs::path& ref_dir, const fs::path& report_path) {
  const auto gen = read_clip_dir(gen_dir);
  const auto ref = read_clip_dir(ref_dir);
  if (!fs::exists(c.paths.extractor() / "manifest.json")) throw Error("missing-stage-input", "feature-extractor");
  const Archive ea = read_archive(c.paths.extractor(), kFormatExtractor);
  auto extractor = nn::load_extractor(ea);
  bool paired = gen.size() == ref.size();
  for (size_t i = 0; paired && i < gen.size(); ++i) paired = gen[i].first == ref[i].first;
  std::vector<nn::EvalClip> g, r;
  for (const auto& [_, e] : gen) g.push_back(e);
  for (const auto& [_, e] : ref) r.push_back(e);
  json report = nn::evaluate_sets(g, r, extractor, c.skel, paired);
  report["foot_skate_definition"] = "mean horizontal heel/toe speed (m/s) below 0.08 m; stand-in for PFC";
  report["extractor_hash"] = nn::archive_hash(ea);
  report["generated_dir"] = gen_dir.string();
  report["reference_dir"] = ref_dir.string();
  report["clips"] = {{"generated", g.size()}, {"reference", r.size()}};
  report.update(c.provenance());
  const fs::path out = report_path.empty() ? c.paths.root / "reports" / "evaluation.json" : report_path;
  write_json(out, report);
  std::cout << "FID " << report["fid"] << " PFID " << report["pfid"] << " Div " << report["div"] << " -> " << out
            << "\n";
}

void cmd_export(Context& c, const fs::path& clip_dir, const fs::path& output) {
  const Archive a = read_archive(clip_dir, kFormatClip);
  DuetClip clip = clip_from_archive(a);
  if (clip.normalized) throw Error("shape-mismatch", "export expects a raw clip");
  auto motion = nn::motion_export(clip, c.skel);
  motion["provenance"] = c.provenance();
  write_json(output, motion);
  std::cout << "exported " << clip.frames() << " frames -> " << output << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-person dance generation from music"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir;
  bool deterministic = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Overrides the configured seed");
  app.add_option("--out", out_dir, "Overrides the configured output directory");
  app.add_flag("--deterministic", deterministic, "Single-threaded, deterministic kernels");

  bool resume = false;
  auto* prepare = app.add_subcommand("prepare", "Synthesize the duet dataset and normalization statistics");
  auto* train_vq = app.add_subcommand("train-vqvae", "Train the hierarchical motion tokenizer");
  auto* train_masked = app.add_subcommand("train-masked", "Train the top and bottom masked transformers");
  auto* train_refiner = app.add_subcommand("train-refiner", "Train the root-trajectory refiner");
  auto* train_extractor = app.add_subcommand("train-extractor", "Train the evaluation feature extractor");
  for (auto* s : {train_vq, train_masked, train_refiner, train_extractor})
    s->add_flag("--resume", resume, "Continue from the stage's existing checkpoint");

  std::string wav, name = "sample";
  double bpm = 120.0;
  int frames = 400;
  bool no_refine = false;
  auto* generate = app.add_subcommand("generate", "Generate a duet for a music track");
  auto* music_opt = generate->add_option("--music", wav, "WAV file (PCM16 or float32)")->check(CLI::ExistingFile);
  generate->add_option("--bpm", bpm, "Synthesize a click track at this tempo instead")->excludes(music_opt);
  generate->add_option("--frames", frames, "Output length in frames (30 fps)");
  generate->add_option("--name", name, "Output name under <out>/generated");
  generate->add_flag("--no-refine", no_refine, "Skip trajectory refinement");

  std::string split = "test";
  auto* reconstruct = app.add_subcommand("reconstruct", "Tokenize and decode dataset windows");
  reconstruct->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));

  std::string gen_dir, ref_dir, report;
  auto* evaluate = app.add_subcommand("evaluate", "Score generated clips against references");
  evaluate->add_option("gen_dir", gen_dir)->required();
  evaluate->add_option("ref_dir", ref_dir)->required();
  evaluate->add_option("--report", report, "Report path (default <out>/reports/evaluation.json)");

  std::string clip_dir, export_out;
  auto* exporter = app.add_subcommand("export", "Write world joint positions of a clip archive as JSON");
  exporter->add_option("clip", clip_dir)->required();
  exporter->add_option("-o,--output", export_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Context c;
    c.cfg = load_config(config_path);
    if (seed) c.cfg.seed = *seed;
    if (!out_dir.empty()) c.cfg.output_dir = out_dir;
    validate(c.cfg);
    c.paths.root = c.cfg.output_dir;
    c.skel = c.cfg.skeleton.empty() ? Skeleton::smpl22() : Skeleton::load(c.cfg.skeleton);
    c.snap = snapshot(c.cfg);
    c.snap["deterministic"] = deterministic;
    c.hash = config_hash(c.snap);
    torch::manual_seed(c.cfg.seed);
    nn::set_deterministic(deterministic);

    DirLock lock(c.paths.root);
    if (*prepare) cmd_prepare(c);
    if (*train_vq) cmd_train_vqvae(c, resume);
    if (*train_masked) cmd_train_masked(c, resume);
    if (*train_refiner) cmd_train_refiner(c, resume);
    if (*train_extractor) cmd_train_extractor(c, resume);
    if (*generate) cmd_generate(c, wav, bpm, frames, name, !no_refine);
    if (*reconstruct) cmd_reconstruct(c, split);
    if (*evaluate) cmd_evaluate(c, gen_dir, ref_dir, report);
    if (*exporter) cmd_export(c, clip_dir, export_out);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal-error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
