#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "mvd/dataset.hpp"
#include "mvd/pipeline.hpp"
#include "mvd/render.hpp"
#include "mvd/teacher.hpp"
#include "mvd/train.hpp"
#include "mvd/visibility.hpp"

namespace fs = std::filesystem;
using namespace mvd;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool verbose = false;
};

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << "[mvdistill] " << msg << '\n';
}

// Errors caused by bad flags or unusable inputs exit with 1; anything that
// fails while doing valid work exits with 2.
bool is_validation_error(const Error& e) {
  static const std::set<std::string> kinds{"InvalidArgument", "ParseError",       "LabelOutOfRange",
                                           "UnsupportedCount", "RadiusTooSmall",  "BadMagic",
                                           "UnsupportedVersion", "TruncatedFile", "MissingTeacher",
                                           "MissingTeacherField", "ShapeMismatch"};
  return kinds.count(e.kind()) > 0;
}

ViewRig resolve_rig(const std::string& name, double distance) {
  if (auto rig = rig_preset(name, distance)) return *rig;
  if (!fs::exists(name)) throw InvalidArgument("--rig: '" + name + "' is neither a preset nor a rig file");
  return read_rig(name);
}

SplatConfig splat_from(int size, int radius, double fov, const std::string& shading) {
  SplatConfig cfg;
  cfg.image_size = size;
  cfg.splat_radius = radius;
  cfg.field_of_view = fov;
  cfg.shading = shading == "constant" ? Shading::constant : Shading::depth;
  cfg.validate();
  return cfg;
}

std::vector<Primitive> parse_classes(const std::vector<std::string>& names) {
  std::vector<Primitive> out;
  for (const auto& n : names) {
    bool found = false;
    for (auto p : kAllPrimitives) {
      if (n == to_string(p)) {
        out.push_back(p);
        found = true;
      }
    }
    if (!found) throw InvalidArgument("--classes: unknown primitive '" + n + "'");
  }
  return out;
}

fs::path manifest_root(const fs::path& manifest) {
  auto root = manifest.parent_path();
  return root.empty() ? fs::path(".") : root;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t count = 200;
  std::size_t points = 256;
  double jitter = 0.0;
  std::vector<std::string> classes{"sphere", "cube", "cylinder", "cone"};
};

int cmd_gen(const Globals& g, const GenArgs& a) {
  SyntheticSpec spec;
  spec.classes = parse_classes(a.classes);
  spec.count_per_class = a.count;
  spec.points = a.points;
  spec.jitter = a.jitter;
  spec.seed = g.seed;
  const auto m = gen_synthetic(spec, a.out);
  std::cout << "wrote " << m.entries.size() << " clouds to " << a.out << '\n';
  return 0;
}

struct RigArgs {
  std::string preset = "classification";
  double distance = kDefaultDistanceFactor;
  std::string out;
};

int cmd_rig(const Globals&, const RigArgs& a) {
  const auto rig = rig_preset(a.preset, a.distance);
  if (!rig) throw InvalidArgument("--preset: unknown rig '" + a.preset + "'");
  write_rig(*rig, a.out);
  std::cout << "wrote " << rig->size() << " poses to " << a.out << '\n';
  return 0;
}

struct VisibleArgs {
  std::string cloud, rig = "classification", out;
  double distance = kDefaultDistanceFactor;
  double flip = kDefaultFlipFactor;
};

int cmd_visible(const Globals& g, const VisibleArgs& a) {
  const auto rig = resolve_rig(a.rig, a.distance);
  const auto cloud = read_xyz(a.cloud);
  const auto masks = compute_rig_masks(cloud, rig, a.flip);
  write_masks(masks, static_cast<std::uint32_t>(cloud.size()), a.out);
  for (const auto& m : masks) log(g, "view " + std::to_string(m.view_index) + ": " + std::to_string(m.visible.size()) + " visible");
  std::cout << "wrote " << masks.size() << " masks to " << a.out << '\n';
  return 0;
}

struct RenderArgs {
  std::string cloud, out, rig;
  int view = -1;
  double azimuth = 0.0, elevation = std::numbers::pi / 6.0, distance = kDefaultDistanceFactor;
  int size = 224, splat = 2;
  double fov = 1.0, flip = kDefaultFlipFactor;
  std::string shading = "depth";
  bool visible_only = false;
};

int cmd_render(const Globals&, const RenderArgs& a) {
  const SplatConfig cfg = splat_from(a.size, a.splat, a.fov, a.shading);
  CameraPose pose(a.azimuth, a.elevation, a.distance);
  if (!a.rig.empty()) {
    const auto rig = resolve_rig(a.rig, a.distance);
    if (a.view < 0 || static_cast<std::size_t>(a.view) >= rig.size()) {
      throw InvalidArgument("--view must name a pose of the rig (0.." + std::to_string(rig.size() - 1) + ")");
    }
    pose = rig[static_cast<std::size_t>(a.view)];
  }
  const auto cloud = read_xyz(a.cloud);
  ImageBuffer img;
  if (a.visible_only) {
    const auto mask = hpr_visible(cloud, camera_position(pose, bounding_radius(cloud)), a.flip);
    img = render_splat(cloud, pose, cfg, true, &mask);
  } else {
    img = render_splat(cloud, pose, cfg);
  }
  write_ppm(img, a.out);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

struct TeacherArgs {
  std::string manifest, rig = "classification", out, masks, renders;
  double distance = kDefaultDistanceFactor, flip = kDefaultFlipFactor;
  std::size_t ct = 64;
  int size = 224, splat = 2;
  double fov = 1.0;
  bool with_logits = false, no_global = false;
};

int cmd_teacher(const Globals& g, const TeacherArgs& a) {
  const auto manifest = read_manifest(a.manifest);
  const auto root = manifest_root(a.manifest);
  const auto rig = resolve_rig(a.rig, a.distance);
  TeacherExportOptions opt;
  opt.settings.out_dim = a.ct;
  opt.settings.seed = g.seed;
  opt.settings.splat = splat_from(a.size, a.splat, a.fov, "depth");
  opt.settings.flip_factor = a.flip;
  opt.settings.with_global = !a.no_global;
  opt.with_logits = a.with_logits;
  opt.masks_dir = a.masks;
  opt.renders_dir = a.renders;
  opt.threads = g.threads;
  const fs::path out = a.out.empty() ? root / "teacher" : fs::path(a.out);
  log(g, "exporting " + std::to_string(manifest.entries.size()) + " shapes over " + std::to_string(rig.size()) + " views");
  const auto teachers = export_procedural_teacher(manifest, root, rig, out, opt);
  std::cout << "wrote " << teachers.size() << " teacher files to " << out.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string manifest, teacher, masks, out, metrics;
  std::string mode = "vafp", rig = "classification", views = "all", empty_views = "skip";
  double distance = kDefaultDistanceFactor, flip = kDefaultFlipFactor;
  double wt = kDefaultTaskWeight;
  double wd = -1.0;
  bool l2norm = false;
  std::size_t epochs = 30, batch = 16;
  double lr = 1e-3;
};

DistillConfig distill_from(const TrainArgs& a) {
  DistillConfig d;
  const auto mode = parse_distill_mode(a.mode);
  if (!mode) throw InvalidArgument("--mode: expected vafp, feature, logit or none, got '" + a.mode + "'");
  d.mode = *mode;
  d.task_weight = a.wt;
  if (a.wd >= 0.0) d.dist_weight = a.wd;
  d.schedule = a.views == "rand1" ? ViewSchedule::rand1 : ViewSchedule::all;
  d.empty_view_policy = a.empty_views == "fallback" ? EmptyViewPolicy::global_fallback : EmptyViewPolicy::skip_renormalize;
  d.l2_normalize = a.l2norm;
  d.validate();
  return d;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  TrainConfig cfg;
  cfg.distill = distill_from(a);
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.adam.lr = a.lr;
  cfg.seed = g.seed;
  cfg.validate();
  const auto rig = resolve_rig(a.rig, a.distance);
  const auto manifest = read_manifest(a.manifest);
  const auto root = manifest_root(a.manifest);

  LoadOptions lo;
  lo.need_masks = cfg.distill.mode == DistillMode::vafp;
  if (cfg.distill.mode != DistillMode::none) lo.teacher_dir = a.teacher.empty() ? root / "teacher" : fs::path(a.teacher);
  lo.masks_dir = a.masks;
  lo.flip_factor = a.flip;
  lo.threads = g.threads;
  log(g, "loading " + std::to_string(manifest.entries.size()) + " shapes");
  const auto samples = load_samples(manifest, root, rig, lo);

  std::string log_text;
  const auto result = train(samples, rig, manifest.class_names.size(), cfg, [&](const EpochMetrics& m) {
    const auto line = format_metrics_line(m);
    log_text += line;
    std::cout << line << std::flush;
  });
  if (result.empty_views > 0) {
    std::cerr << "warning: " << result.empty_views << " view projections had no visible anchors\n";
  }
  save_checkpoint(result.params, a.out);
  if (!a.metrics.empty()) bin::write_text_atomic(a.metrics, log_text);
  log(g, "checkpoint written to " + a.out);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, manifest, out;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  auto store = load_checkpoint(a.checkpoint);
  const auto manifest = read_manifest(a.manifest);
  const auto cfg = infer_encoder_config(store);
  if (cfg.num_classes != manifest.class_names.size()) {
    throw ShapeMismatch("checkpoint predicts " + std::to_string(cfg.num_classes) + " classes, manifest declares " +
                        std::to_string(manifest.class_names.size()));
  }
  LoadOptions lo;
  lo.threads = g.threads;
  const auto samples = load_samples(manifest, manifest_root(a.manifest), make_classification_rig(), lo);
  const auto r = evaluate(store, samples);
  char line[96];
  std::snprintf(line, sizeof line, "accuracy\t%.6f\t%zu/%zu\n", r.accuracy(), r.correct, r.total);
  std::cout << line;
  if (!a.out.empty()) bin::write_text_atomic(a.out, line);
  return 0;
}

struct GradArgs {
  std::size_t clouds = 4, points = 64, classes = 4, ct = 16;
  int views = 4;
  std::string mode = "vafp", schedule = "all";
  double h = 1e-5, tol = 1e-4;
  std::size_t max_per_tensor = 200;
};

int cmd_gradcheck(const Globals& g, const GradArgs& a) {
  PipelineCheckConfig cfg;
  cfg.clouds = a.clouds;
  cfg.points = a.points;
  cfg.classes = a.classes;
  cfg.views = a.views;
  cfg.teacher_dim = a.ct;
  const auto mode = parse_distill_mode(a.mode);
  if (!mode) throw InvalidArgument("--mode: expected vafp, feature or none, got '" + a.mode + "'");
  if (*mode == DistillMode::logit) {
    throw InvalidArgument("--mode logit holds the head fixed inside the distillation term; finite differences do not apply");
  }
  cfg.train.distill.mode = *mode;
  cfg.train.distill.schedule = a.schedule == "rand1" ? ViewSchedule::rand1 : ViewSchedule::all;
  cfg.train.seed = g.seed;
  cfg.check.h = a.h;
  cfg.check.tolerance = a.tol;
  cfg.check.max_per_tensor = a.max_per_tensor;
  const auto report = pipeline_grad_check(cfg);
  std::cout << report.summary();
  std::cout << (report.passed ? "PASS" : "FAIL") << " max relative error " << report.max_rel_error << '\n';
  return report.passed ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view visual knowledge distillation for point-cloud encoders"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap for per-shape stages")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
      ->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Progress on stderr");

  const std::vector<std::string> primitives{"sphere", "cube", "cylinder", "cone"};

  GenArgs gen;
  auto* sg = app.add_subcommand("gen", "Generate a synthetic primitive dataset");
  sg->add_option("--out", gen.out, "Output directory")->required();
  sg->add_option("--count", gen.count, "Clouds per class")->check(CLI::PositiveNumber)->capture_default_str();
  sg->add_option("--points", gen.points, "Points per cloud")->check(CLI::Range(32, 1 << 20))->capture_default_str();
  sg->add_option("--jitter", gen.jitter, "Gaussian jitter sigma")->check(CLI::NonNegativeNumber)->capture_default_str();
  sg->add_option("--classes", gen.classes, "Primitive classes")->delimiter(',')->check(CLI::IsMember(primitives));

  RigArgs rig;
  auto* sr = app.add_subcommand("rig", "Write a preset camera rig");
  sr->add_option("--preset", rig.preset, "classification, segmentation, redu6 or redu4")
      ->check(CLI::IsMember({"classification", "comp12", "segmentation", "redu6", "redu4"}))
      ->capture_default_str();
  sr->add_option("--distance", rig.distance, "Camera distance in bounding radii")->capture_default_str();
  sr->add_option("--out", rig.out, "Rig file")->required();

  VisibleArgs vis;
  auto* sv = app.add_subcommand("visible", "Hidden point removal masks for every rig view");
  sv->add_option("--cloud", vis.cloud, ".xyz point cloud")->required()->check(CLI::ExistingFile);
  sv->add_option("--rig", vis.rig, "Rig preset or file")->capture_default_str();
  sv->add_option("--distance", vis.distance, "Distance factor for presets")->capture_default_str();
  sv->add_option("--flip", vis.flip, "Flip radius factor")->capture_default_str();
  sv->add_option("--out", vis.out, "Mask file")->required();

  RenderArgs ren;
  auto* sp = app.add_subcommand("render", "Splat-render one view to PPM");
  sp->add_option("--cloud", ren.cloud, ".xyz point cloud")->required()->check(CLI::ExistingFile);
  sp->add_option("--out", ren.out, "PPM file")->required();
  sp->add_option("--azimuth", ren.azimuth, "Radians")->capture_default_str();
  sp->add_option("--elevation", ren.elevation, "Radians")->capture_default_str();
  sp->add_option("--distance", ren.distance, "Camera distance in bounding radii")->capture_default_str();
  auto* rig_opt = sp->add_option("--rig", ren.rig, "Take the pose from this rig preset or file");
  sp->add_option("--view", ren.view, "Pose index within --rig")->needs(rig_opt);
  sp->add_option("--size", ren.size, "Image side in pixels")->capture_default_str();
  sp->add_option("--splat", ren.splat, "Splat radius in pixels")->capture_default_str();
  sp->add_option("--fov", ren.fov, "Vertical field of view, radians")->capture_default_str();
  sp->add_option("--shading", ren.shading, "depth or constant")->check(CLI::IsMember({"depth", "constant"}));
  sp->add_flag("--visible-only", ren.visible_only, "Draw only points that survive hidden point removal");
  sp->add_option("--flip", ren.flip, "Flip radius factor")->capture_default_str();

  TeacherArgs tch;
  auto* st = app.add_subcommand("teacher-proc", "Export procedural teacher knowledge");
  st->add_option("--manifest", tch.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  st->add_option("--rig", tch.rig, "Rig preset or file")->capture_default_str();
  st->add_option("--distance", tch.distance, "Distance factor for presets")->capture_default_str();
  st->add_option("--out", tch.out, "Output directory (default: <manifest dir>/teacher)");
  st->add_option("--ct", tch.ct, "Descriptor width")->check(CLI::PositiveNumber)->capture_default_str();
  st->add_option("--size", tch.size, "Render size")->capture_default_str();
  st->add_option("--splat", tch.splat, "Splat radius")->capture_default_str();
  st->add_option("--fov", tch.fov, "Field of view, radians")->capture_default_str();
  st->add_option("--flip", tch.flip, "Flip radius factor")->capture_default_str();
  st->add_flag("--with-logits", tch.with_logits, "Attach class-centroid logits");
  st->add_flag("--no-global", tch.no_global, "Omit the global feature");
  st->add_option("--masks", tch.masks, "Also write visibility masks here");
  st->add_option("--renders", tch.renders, "Also write the view renders here");

  TrainArgs tr;
  auto* sn = app.add_subcommand("train", "Train a student encoder");
  sn->add_option("--manifest", tr.manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  sn->add_option("--teacher", tr.teacher, "Teacher directory (default: <manifest dir>/teacher)");
  sn->add_option("--masks", tr.masks, "Precomputed mask directory");
  sn->add_option("--mode", tr.mode, "vafp, feature, logit or none")
      ->check(CLI::IsMember({"vafp", "feature", "logit", "none"}))
      ->capture_default_str();
  sn->add_option("--rig", tr.rig, "Rig preset or file")->capture_default_str();
  sn->add_option("--distance", tr.distance, "Distance factor for presets")->capture_default_str();
  sn->add_option("--views", tr.views, "all or rand1")->check(CLI::IsMember({"all", "rand1"}))->capture_default_str();
  sn->add_option("--empty-views", tr.empty_views, "skip or fallback")
      ->check(CLI::IsMember({"skip", "fallback"}))
      ->capture_default_str();
  sn->add_option("--wt", tr.wt, "Task loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  sn->add_option("--wd", tr.wd, "Distillation weight (default 1/K)")->check(CLI::NonNegativeNumber);
  sn->add_flag("--l2norm", tr.l2norm, "L2-normalize descriptors before the L1 loss");
  sn->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  sn->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  sn->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  sn->add_option("--flip", tr.flip, "Flip radius factor for masks")->capture_default_str();
  sn->add_option("--out", tr.out, "Checkpoint file")->required();
  sn->add_option("--metrics", tr.metrics, "Metrics log file");

  EvalArgs ev;
  auto* se = app.add_subcommand("eval", "Overall accuracy of a checkpoint");
  se->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  se->add_option("--manifest", ev.manifest, "Test manifest")->required()->check(CLI::ExistingFile);
  se->add_option("--out", ev.out, "Also write the result line here");

  GradArgs gc;
  auto* sc = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
  sc->add_option("--clouds", gc.clouds, "Clouds in the batch")->capture_default_str();
  sc->add_option("--points", gc.points, "Points per cloud")->capture_default_str();
  sc->add_option("--classes", gc.classes, "Classes")->capture_default_str();
  sc->add_option("--views", gc.views, "Rig size: 4, 6, 12 or 16")->check(CLI::IsMember({4, 6, 12, 16}))->capture_default_str();
  sc->add_option("--ct", gc.ct, "Teacher width")->capture_default_str();
  sc->add_option("--mode", gc.mode, "vafp, feature or none")->check(CLI::IsMember({"vafp", "feature", "none"}))->capture_default_str();
  sc->add_option("--schedule", gc.schedule, "all or rand1")->check(CLI::IsMember({"all", "rand1"}))->capture_default_str();
  sc->add_option("--step", gc.h, "Finite-difference step")->check(CLI::PositiveNumber)->capture_default_str();
  sc->add_option("--tol", gc.tol, "Relative error tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  sc->add_option("--max-per-tensor", gc.max_per_tensor, "Entries sampled per tensor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (sg->parsed()) return cmd_gen(g, gen);
    if (sr->parsed()) return cmd_rig(g, rig);
    if (sv->parsed()) return cmd_visible(g, vis);
    if (sp->parsed()) return cmd_render(g, ren);
    if (st->parsed()) return cmd_teacher(g, tch);
    if (sn->parsed()) return cmd_train(g, tr);
    if (se->parsed()) return cmd_eval(g, ev);
    if (sc->parsed()) return cmd_gradcheck(g, gc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_validation_error(e) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
