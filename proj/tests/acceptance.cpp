// Acceptance suite: one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/dataset.hpp"
#include "mvd/hull.hpp"
#include "mvd/pipeline.hpp"
#include "mvd/teacher.hpp"
#include "mvd/train.hpp"
#include "mvd/visibility.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mvd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  std::string cli;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------

Outcome gradient_check(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineCheckConfig cfg;
  cfg.train.seed = 7;
  cfg.check.h = 1e-5;
  cfg.check.tolerance = 1e-4;
  cfg.check.max_per_tensor = 1000;
  const auto report = pipeline_grad_check(cfg);
  const double t = seconds_since(t0);
  return {report.passed && t < 60.0,
          fmt("%zu entries over %zu tensors, %zu one-sided, %zu skipped, max rel err %.3e, %.1f s", report.checked,
              report.tensors.size(), report.one_sided, report.skipped, report.max_rel_error, t)};
}

// 2 -------------------------------------------------------------------------

Outcome hpr_oracle(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(7);
  PointCloud cloud;
  cloud.points = oracle::random_on_sphere(2048, rng);
  const Vec3 dir{0.36, -0.48, 0.8};
  const auto mask = hpr_visible(cloud, dir * 3.0, 100.0);
  std::vector<char> vis(cloud.size(), 0);
  for (auto i : mask.visible) vis[i] = 1;
  std::size_t considered = 0, agree = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (std::abs(dot(cloud.points[i], dir) - 1.0 / 3.0) < 0.05) continue;
    ++considered;
    agree += (vis[i] != 0) == oracle::sphere_point_visible(cloud.points[i], dir, 3.0);
  }
  const double frac = static_cast<double>(agree) / static_cast<double>(considered);
  const double t = seconds_since(t0);
  return {frac >= 0.98 && t < 5.0, fmt("agreement %.4f on %zu points outside the band, %.2f s", frac, considered, t)};
}

// 3 -------------------------------------------------------------------------

Outcome hull_oracle(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  int equal = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(derive_seed(7, 300 + s));
    const auto pts = oracle::random_in_ball(30, rng);
    const auto hull = convex_hull3(pts);
    const std::set<std::size_t> got(hull.vertex_indices.begin(), hull.vertex_indices.end());
    equal += got == oracle::hull_vertices_bruteforce(pts);
  }
  const double t = seconds_since(t0);
  return {equal == 50 && t < 30.0, fmt("%d/50 vertex sets equal, %.2f s", equal, t)};
}

// 4 -------------------------------------------------------------------------

struct StudentOutputs {
  Tensor2 global, logits, descriptors;
};

StudentOutputs student_outputs(const PointCloud& cloud, const std::vector<VisibilityMask>& masks, ParamStore& store,
                               const EncoderConfig& enc) {
  Tape tape;
  const auto vars = bind_student(tape, store, enc);
  const Var g = encode(tape, vars, tape.constant(points_matrix(cloud)));
  const Var global = global_descriptor(tape, g);
  const Var logits = classify(tape, vars, global);
  const auto out = vafp_project(tape, g, masks, bind_align(tape, store), EmptyViewPolicy::skip_renormalize);
  return {tape.value(global), tape.value(logits), tape.value(*out.descriptors)};
}

Outcome invariances(const Context&) {
  const auto rig = make_classification_rig();
  EncoderConfig enc;
  enc.seed = derive_seed(7, 1);
  ParamStore store;
  init_student(store, enc);
  init_align(store, enc.feature_dim(), 64, derive_seed(7, 2));
  Rng gen_rng(derive_seed(7, 400));
  const auto cloud = generate_primitive(Primitive::cone, 256, 0.01, gen_rng);
  const auto masks = compute_rig_masks(cloud, rig);
  const auto base = student_outputs(cloud, masks, store, enc);

  // (a) recompute visibility on each permuted cloud
  Rng rng(derive_seed(7, 401));
  int identical = 0, masks_equal = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint32_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0u);
    rng.shuffle(perm);
    PointCloud p;
    for (auto i : perm) p.points.push_back(cloud.points[i]);
    const auto pmasks = compute_rig_masks(p, rig);
    bool same_masks = true;
    for (std::size_t k = 0; k < rig.size(); ++k) {
      std::set<std::uint32_t> back;
      for (auto i : pmasks[k].visible) back.insert(perm[i]);
      same_masks = same_masks && back == std::set<std::uint32_t>(masks[k].visible.begin(), masks[k].visible.end());
    }
    masks_equal += same_masks;
    const auto out = student_outputs(p, pmasks, store, enc);
    identical += out.global == base.global && out.logits == base.logits && out.descriptors == base.descriptors;
  }

  // (b) teacher set to the student's own projections
  Tape tape;
  const auto vars = bind_student(tape, store, enc);
  const Var g = encode(tape, vars, tape.constant(points_matrix(cloud)));
  const auto out = vafp_project(tape, g, masks, bind_align(tape, store), EmptyViewPolicy::skip_renormalize);
  const TeacherKnowledge self{"self", base.descriptors, {}, {}};
  const double self_loss = tape.value(vafp_distill_loss(tape, out, self))(0, 0);

  // (c) default weights on a real batch
  PipelineCheckConfig pcfg;
  pcfg.views = 12;
  pcfg.teacher_dim = 64;
  pcfg.train.seed = 7;
  auto pc = make_pipeline_check(pcfg);
  std::vector<std::size_t> batch(pc.samples.size());
  std::iota(batch.begin(), batch.end(), 0);
  Tape t2;
  const auto f = forward_batch(t2, pc.params, pc.train, pc.samples, batch, pc.rig.size());
  const double task = t2.value(f.task)(0, 0), dist = t2.value(f.dist)(0, 0), total = t2.value(f.total)(0, 0);
  const double gap = std::abs(total - (0.1 * task + dist / 12.0));

  const bool pass = identical == 100 && self_loss == 0.0 && gap <= 1e-12;
  return {pass, fmt("(a) %d/100 permutations bit-identical, masks equal %d/100; (b) self loss %.3g; "
                    "(c) |overall - 0.1 task - dist/12| = %.2e",
                    identical, masks_equal, self_loss, gap)};
}

// 5 -------------------------------------------------------------------------

Outcome scoped_gradients(const Context&) {
  const auto rig = make_classification_rig();
  EncoderConfig enc;
  enc.seed = derive_seed(7, 1);
  ParamStore store;
  init_student(store, enc);
  init_align(store, enc.feature_dim(), 64, derive_seed(7, 2));
  Rng gen_rng(derive_seed(7, 500));
  const auto cloud = generate_primitive(Primitive::cylinder, 256, 0.01, gen_rng);
  const auto masks = compute_rig_masks(cloud, rig);
  const Tensor2 projection = teacher_projection(64, 7);
  const auto teacher = procedural_teacher(cloud, rig, projection, {});

  std::size_t outside_rows = 0, nonzero_outside = 0, views_with_signal = 0;
  for (std::size_t k = 0; k < rig.size(); ++k) {
    Tape tape;
    const auto vars = bind_student(tape, store, enc);
    const Var g = encode(tape, vars, tape.constant(points_matrix(cloud)));
    const std::vector<std::size_t> active{k};
    const auto out = vafp_project(tape, g, masks, bind_align(tape, store), EmptyViewPolicy::skip_renormalize, active);
    tape.backward(vafp_distill_loss(tape, out, teacher));
    const Tensor2 grad = tape.grad(g);
    std::vector<char> visible(cloud.size(), 0);
    for (auto i : masks[k].visible) visible[i] = 1;
    double inside = 0.0;
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      double row = 0.0;
      for (double v : grad.row(r)) row += std::abs(v);
      if (visible[r]) {
        inside += row;
      } else {
        ++outside_rows;
        nonzero_outside += row != 0.0;
      }
    }
    views_with_signal += inside > 0.0;
  }
  return {nonzero_outside == 0 && views_with_signal == rig.size(),
          fmt("%zu of %zu rows outside the active mask have nonzero gradient; %zu/%zu views carry gradient",
              nonzero_outside, outside_rows, views_with_signal, rig.size())};
}

// 6, 7 ----------------------------------------------------------------------

struct DeskData {
  std::vector<TrainingSample> train, test;
  std::map<std::string, std::vector<TrainingSample>> by_rig;
};

DeskData& desk(const Context& ctx) {
  static std::optional<DeskData> data;
  if (data) return *data;
  data.emplace();
  SyntheticSpec tr;
  tr.count_per_class = 200;
  tr.points = 256;
  tr.seed = derive_seed(7, 100);
  SyntheticSpec te = tr;
  te.count_per_class = 50;
  te.seed = derive_seed(7, 200);
  const fs::path root = ctx.work / "desk";
  const auto mtr = gen_synthetic(tr, root / "train");
  const auto mte = gen_synthetic(te, root / "test");
  data->test = load_samples(mte, root / "test", make_classification_rig(), {});
  for (const char* name : {"classification", "redu6", "redu4"}) {
    const auto rig = *rig_preset(name);
    TeacherExportOptions opt;
    opt.settings.out_dim = 64;
    opt.settings.seed = 7;
    opt.with_logits = true;
    opt.masks_dir = root / "train" / name / "masks";
    opt.threads = 1;
    export_procedural_teacher(mtr, root / "train", rig, root / "train" / name / "teacher", opt);
    LoadOptions lo;
    lo.need_masks = true;
    lo.teacher_dir = root / "train" / name / "teacher";
    lo.masks_dir = opt.masks_dir;
    lo.threads = 1;
    data->by_rig[name] = load_samples(mtr, root / "train", rig, lo);
  }
  data->train = data->by_rig["classification"];
  return *data;
}

TrainConfig desk_config(DistillMode mode) {
  TrainConfig cfg;
  cfg.distill.mode = mode;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.adam.lr = 1e-3;
  cfg.seed = 7;
  return cfg;
}

Outcome desk_experiment(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  auto& d = desk(ctx);
  const auto rig = make_classification_rig();
  auto vafp = train(d.train, rig, 4, desk_config(DistillMode::vafp));
  const double acc_vafp = evaluate(vafp.params, d.test).accuracy();
  auto none = train(d.train, rig, 4, desk_config(DistillMode::none));
  const double acc_none = evaluate(none.params, d.test).accuracy();
  const double t = seconds_since(t0);
  const double first = vafp.metrics.front().dist_loss, last = vafp.metrics.back().dist_loss;
  const bool a = last <= 0.5 * first;
  const bool b = acc_vafp >= 0.90;
  const bool c = acc_vafp >= acc_none - 0.02;
  return {a && b && c && t < 600.0,
          fmt("(a) dist %.3f -> %.3f %s; (b) vafp accuracy %.1f%% %s; (c) none baseline %.1f%%, gap %.1f points %s; "
              "%.0f s",
              first, last, a ? "ok" : "miss", 100 * acc_vafp, b ? "ok" : "miss", 100 * acc_none,
              100 * (acc_none - acc_vafp), c ? "ok" : "miss", t)};
}

bool metrics_well_formed(const std::string& log, std::size_t epochs) {
  static const std::regex line(R"((\d+)\t-?\d+\.\d{6}\t-?\d+\.\d{6}\t\d\.\d{6})");
  std::istringstream in(log);
  std::string s;
  std::size_t n = 0;
  while (std::getline(in, s)) {
    std::smatch m;
    if (!std::regex_match(s, m, line) || std::stoul(m[1]) != ++n) return false;
  }
  return n == epochs;
}

Outcome ablation_smoke(const Context& ctx) {
  auto& d = desk(ctx);
  struct Run {
    std::string name, rig;
    DistillMode mode;
    ViewSchedule schedule;
    double task_weight;
  };
  const std::vector<Run> runs{
      {"logit", "classification", DistillMode::logit, ViewSchedule::all, 0.1},
      {"feature", "classification", DistillMode::feature, ViewSchedule::all, 0.1},
      {"redu6", "redu6", DistillMode::vafp, ViewSchedule::all, 0.1},
      {"redu4", "redu4", DistillMode::vafp, ViewSchedule::all, 0.1},
      {"rand1", "classification", DistillMode::vafp, ViewSchedule::rand1, 0.1},
      {"wt=0.01", "classification", DistillMode::vafp, ViewSchedule::all, 0.01},
      {"wt=0.1", "classification", DistillMode::vafp, ViewSchedule::all, 0.1},
      {"wt=1.0", "classification", DistillMode::vafp, ViewSchedule::all, 1.0},
  };
  std::string detail;
  bool pass = true;
  for (const auto& r : runs) {
    TrainConfig cfg = desk_config(r.mode);
    cfg.epochs = 2;
    cfg.distill.schedule = r.schedule;
    cfg.distill.task_weight = r.task_weight;
    bool ok = false;
    try {
      const auto res = train(d.by_rig.at(r.rig), *rig_preset(r.rig), 4, cfg);
      ok = metrics_well_formed(format_metrics(res.metrics), cfg.epochs);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s: %s\n", r.name.c_str(), e.what());
    }
    pass = pass && ok;
    detail += (detail.empty() ? "" : ", ") + r.name + (ok ? " ok" : " FAILED");
  }
  return {pass, detail};
}

// 8 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome determinism(const Context& ctx) {
  if (ctx.cli.empty()) return {false, "no CLI binary given"};
  std::vector<std::map<std::string, std::string>> trees;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = ctx.work / ("determinism_" + std::to_string(rep));
    fs::remove_all(dir);
    const std::string base = "\"" + ctx.cli + "\" --seed 7 --threads 1 ";
    const std::string d = "\"" + dir.string() + "\"";
    const std::vector<std::string> steps{
        base + "gen --out " + d + "/data --count 6 --points 128",
        base + "teacher-proc --manifest " + d + "/data/manifest.txt --with-logits --masks " + d + "/data/masks --renders " +
            d + "/data/renders",
        base + "train --manifest " + d + "/data/manifest.txt --masks " + d + "/data/masks --epochs 2 --batch 8 --out " +
            d + "/model.ckpt --metrics " + d + "/metrics.tsv",
        base + "eval --checkpoint " + d + "/model.ckpt --manifest " + d + "/data/manifest.txt --out " + d + "/eval.txt",
    };
    for (const auto& s : steps) {
      if (const int rc = run(s); rc != 0) return {false, fmt("exit %d from: %s", rc, s.c_str())};
    }
    trees.push_back(tree(dir));
  }
  std::map<std::string, int> kinds;
  for (const auto& [name, _] : trees[0]) {
    const auto ext = fs::path(name).extension().string();
    ++kinds[ext.empty() ? name : ext];
  }
  std::string listing;
  for (const auto& [k, n] : kinds) listing += (listing.empty() ? "" : ", ") + std::to_string(n) + " " + k;
  const bool same = trees[0] == trees[1];
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    const auto it = trees[1].find(name);
    differing += it == trees[1].end() || it->second != bytes;
  }
  return {same && !trees[0].empty(), fmt("%zu files compared (%s), %zu differ", trees[0].size(), listing.c_str(),
                                          differing + (trees[1].size() > trees[0].size()))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  Context ctx;
  ctx.work = fs::temp_directory_path() / "mvdistill_acceptance";
  std::vector<int> only, known_gaps;
  app.add_option("--cli", ctx.cli, "mvdistill executable");
  app.add_option("--work", ctx.work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--known-gap", known_gaps, "Criteria whose FAIL does not fail the exit code");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"gradient correctness", gradient_check},
      {"HPR visibility oracle", hpr_oracle},
      {"convex hull oracle", hull_oracle},
      {"exact invariances", invariances},
      {"visibility-scoped gradients", scoped_gradients},
      {"desk-scale distillation", desk_experiment},
      {"ablation machinery", ablation_smoke},
      {"pipeline determinism", determinism},
  };
  int passed = 0, run_count = 0, blocking = 0;
  std::string gaps;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    ++run_count;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool gap = std::find(known_gaps.begin(), known_gaps.end(), id) != known_gaps.end();
    std::printf("criterion %d  %-28s %s  %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    if (o.pass) {
      ++passed;
    } else if (gap) {
      gaps += (gaps.empty() ? "" : ", ") + std::to_string(id);
    } else {
      ++blocking;
    }
  }
  std::printf("%d/%d criteria passed", passed, run_count);
  if (!gaps.empty()) std::printf("; failing known gaps: %s", gaps.c_str());
  std::printf("\n");
  return blocking == 0 ? 0 : 1;
}
