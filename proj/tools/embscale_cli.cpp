// embscale command-line tool. Run `embscale --help` for the subcommands.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include "CLI11.hpp"
#include "embscale/distill.hpp"
#include "embscale/latent.hpp"
#include "embscale/ppo.hpp"
#include "embscale/procgen.hpp"
#include "embscale/scaling.hpp"
#include "embscale/urdf.hpp"

using namespace embscale;
namespace fs = std::filesystem;

namespace {

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& x : split(s, ',')) out.push_back(parse_double(trim(x)));
  return out;
}

std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& x : split(s, ',')) {
    if (!trim(x).empty()) out.push_back(trim(x));
  }
  return out;
}

void make_parent(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
}

// Writes to `path`, or stdout for "-".
template <class F>
void emit(const std::string& path, F&& write) {
  if (path == "-") {
    write(std::cout);
    return;
  }
  make_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write(out);
  if (!out) throw IoError("write failed: " + path);
}

struct Corpus {
  DatasetManifest manifest;
  std::vector<Embodiment> embodiments;

  explicit Corpus(const std::string& path) : manifest(load_manifest(path)), embodiments(build_from_manifest(manifest)) {}

  const Embodiment& by_id(const std::string& id) const {
    for (const auto& e : embodiments) {
      if (e.id == id) return e;
    }
    throw Error("unknown embodiment '" + id + "'");
  }

  std::vector<Embodiment> ids(const std::vector<std::string>& list) const {
    std::vector<Embodiment> out;
    for (const auto& id : list) out.push_back(by_id(id));
    return out;
  }

  std::vector<Embodiment> split_part(bool test) const {
    if (manifest.splits.empty()) throw Error("manifest has no split; run `embscale split` first");
    std::vector<Embodiment> out;
    for (const auto& [cls, s] : manifest.splits) {
      const auto entries = manifest.entries_of(cls);
      for (int i : test ? s.test : s.train) out.push_back(by_id(entries.at(static_cast<std::size_t>(i))->id));
    }
    return out;
  }
};

std::set<MorphologyClass> parse_classes(const std::string& s) {
  std::set<MorphologyClass> out;
  for (const auto& name : parse_list(s)) {
    if (name == "all" || name == "combined") {
      out.insert(kAllClasses.begin(), kAllClasses.end());
    } else {
      out.insert(class_from_string(name));
    }
  }
  if (out.empty()) throw Error("no classes given");
  return out;
}

std::string expert_path(const std::string& dir, const std::string& id) { return (fs::path(dir) / (id + ".ckpt")).string(); }

// --- subcommands ----------------------------------------------------------------

struct GenerateArgs {
  std::uint64_t seed = kReferenceSeed;
  std::string out = "manifest.txt";
};

void cmd_generate(const GenerateArgs& a) {
  const GeneratedDataset d = generate_dataset(a.seed);
  emit(a.out, [&](std::ostream& o) { write_manifest(o, d.manifest); });
  for (auto c : kAllClasses) {
    std::fprintf(stderr, "%-10s %zu embodiments\n", std::string(to_string(c)).c_str(), d.manifest.entries_of(c).size());
  }
}

struct SplitArgs {
  std::string manifest = "manifest.txt";
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_split(const SplitArgs& a) {
  DatasetManifest m = load_manifest(a.manifest);
  m.splits = split_dataset(m, a.seed.value_or(m.seed));
  emit(a.out.empty() ? a.manifest : a.out, [&](std::ostream& o) { write_manifest(o, m); });
  for (const auto& [c, s] : m.splits) {
    std::fprintf(stderr, "%-10s train %zu test %zu\n", std::string(to_string(c)).c_str(), s.train.size(), s.test.size());
  }
}

struct StatsArgs {
  std::string manifest = "manifest.txt";
  std::string out = "-";
};

void cmd_stats(const StatsArgs& a) {
  const Corpus corpus(a.manifest);
  const StatisticsReport r = dataset_statistics(corpus.embodiments);
  emit(a.out, [&](std::ostream& o) { write_statistics_csv(o, r); });
}

struct ExportArgs {
  std::string manifest = "manifest.txt";
  std::string out_dir;
  std::string ids;
};

void cmd_export(const ExportArgs& a) {
  const Corpus corpus(a.manifest);
  const auto list = a.ids.empty() ? corpus.embodiments : corpus.ids(parse_list(a.ids));
  fs::create_directories(a.out_dir);
  for (const auto& e : list) write_text_file((fs::path(a.out_dir) / (e.id + ".urdf")).string(), to_urdf(e));
  std::fprintf(stderr, "wrote %zu URDF files to %s\n", list.size(), a.out_dir.c_str());
}

struct ImportArgs {
  std::string file;
  std::string cls;
  std::string descriptor_out;
};

void cmd_import(const ImportArgs& a) {
  UrdfImportOptions opts;
  if (!a.cls.empty()) opts.cls = class_from_string(a.cls);
  const UrdfImport imp = import_urdf(read_text_file(a.file), opts);
  for (const auto& w : imp.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const Embodiment& e = imp.embodiment;
  const auto problems = validate(e);
  std::printf("id %s\nclass %s\nlinks %zu\nactuated joints %zu\nfeet %zu\ntotal mass %s kg\nnominal height %s m\n",
              e.id.c_str(), std::string(to_string(e.cls)).c_str(), e.links.size(), e.num_actuated(),
              foot_links(e).size(), format_double(e.total_mass).c_str(), format_double(e.nominal_height).c_str());
  for (const auto& p : problems) std::printf("invalid: %s: %s\n", p.subject.c_str(), p.message.c_str());
  if (!a.descriptor_out.empty()) {
    const EmbodimentDescriptor d = descriptor_of(e);
    emit(a.descriptor_out, [&](std::ostream& o) {
      o << "joint";
      for (int c = 0; c < kJointDescriptorDim; ++c) o << ",d" << c;
      o << "\n";
      const auto act = e.actuated_joints();
      for (Eigen::Index j = 0; j < d.joints.rows(); ++j) {
        o << e.joints[act[static_cast<std::size_t>(j)]].name;
        for (int c = 0; c < kJointDescriptorDim; ++c) o << "," << format_double(d.joints(j, c));
        o << "\n";
      }
    });
  }
  if (!problems.empty()) throw InvalidEmbodiment(a.file + ": imported robot failed validation");
}

struct TrainExpertArgs {
  std::string manifest = "manifest.txt";
  std::string id;
  std::string out;
  std::string csv;
  PpoConfig ppo;
  bool reference = false;
};

void cmd_train_expert(TrainExpertArgs a) {
  Embodiment e;
  if (a.reference) {
    const MorphologyClass c = class_from_string(a.id);
    e = build_embodiment(c, reference_variation(c), BaseUnitTable::reference(), std::string(to_string(c)) + "_reference");
  } else {
    e = Corpus(a.manifest).by_id(a.id);
  }
  const std::string out = a.out.empty() ? e.id + ".ckpt" : a.out;
  const TrainResult r = train_expert(e, EnvConfig{}, a.ppo, [](const IterationStats& s) {
    if (!s.evaluated) return;
    std::fprintf(stderr, "iter %4d  reward/step %.5f  tracking %.4f  kl %.4f  lr %.2e  k %.3f  eval %.3f\n", s.iteration,
                 s.mean_reward, s.mean_tracking, s.kl, s.learning_rate, s.curriculum_mean, s.eval.mean_episode_reward);
  });
  make_parent(out);
  r.best.save(out);
  if (!a.csv.empty()) emit(a.csv, [&](std::ostream& o) { write_training_csv(o, r.curve); });
  std::printf("best iteration %d  eval reward %s  tracking %s -> %s\n", r.best_iteration,
              format_double(r.best_eval.mean_episode_reward).c_str(), format_double(r.first_eval.mean_tracking).c_str(),
              format_double(r.best_eval.mean_tracking).c_str());
}

struct CollectArgs {
  std::string manifest = "manifest.txt";
  std::string experts;
  std::string out_dir;
  std::string ids;
  CollectConfig collect;
};

void cmd_collect(const CollectArgs& a) {
  const Corpus corpus(a.manifest);
  std::vector<Embodiment> list;
  if (a.ids.empty()) {
    for (const auto& e : corpus.split_part(false)) {
      if (fs::exists(expert_path(a.experts, e.id))) list.push_back(e);
    }
    if (list.empty()) throw MissingExpert("no expert checkpoints for training embodiments in " + a.experts);
  } else {
    list = corpus.ids(parse_list(a.ids));
  }
  std::map<std::string, ExpertPolicy> experts;
  for (const auto& e : list) {
    const std::string path = expert_path(a.experts, e.id);
    if (!fs::exists(path)) throw MissingExpert("no expert checkpoint " + path);
    experts.emplace(e.id, ExpertPolicy::load(path));
  }
  const SliceDataset d = collect_demonstrations(list, experts, EnvConfig{}, a.collect, a.out_dir);
  long long train = 0, val = 0;
  for (const auto& [id, n] : d.sample_counts(SplitRole::kTrain)) train += n;
  for (const auto& [id, n] : d.sample_counts(SplitRole::kValidation)) val += n;
  std::printf("%zu embodiments, %zu slices, %lld training and %lld validation samples\n", list.size(), d.slices.size(),
              train, val);
}

struct DistillArgs {
  std::string manifest = "manifest.txt";
  std::string data;
  double proportion = 1.0;
  std::string classes = "all";
  std::string out = "student.ckpt";
  std::string csv;
  std::string arch;
  std::uint64_t seed = 0;
  DistillConfig distill;
};

void cmd_distill(const DistillArgs& a) {
  const Corpus corpus(a.manifest);
  const SliceDataset data = load_dataset_manifest(a.data);
  const auto classes = parse_classes(a.classes);
  const auto counts = data.sample_counts(SplitRole::kTrain);
  std::vector<Embodiment> pool;
  for (const auto& e : corpus.embodiments) {
    if (classes.count(e.cls) && counts.count(e.id)) pool.push_back(e);
  }
  if (pool.empty()) throw Error("no collected embodiments of the requested classes in " + a.data);
  const auto ids = make_subset(pool, a.proportion, a.seed);
  const SliceDataset sel = select_slices(data, ids);
  const UrmaNetwork net(a.arch.empty() ? UrmaConfig{} : UrmaConfig::from_text(a.arch));
  std::fprintf(stderr, "training on %zu of %zu embodiments, %zu parameters\n", ids.size(), pool.size(), net.num_params());
  const DistillResult r = train_bc(sel, a.distill, net, a.seed, [](const EpochStats& s) {
    std::fprintf(stderr, "epoch %3d  train %.6f  validation %.6f  lr %.2e\n", s.epoch, s.train_loss, s.validation_loss,
                 s.learning_rate);
  });
  make_parent(a.out);
  net.save(a.out, as_span(r.params));
  if (!a.csv.empty()) emit(a.csv, [&](std::ostream& o) { write_distill_csv(o, r.curve); });
  std::printf("best epoch %d  validation %s  (initial %s)%s\n", r.best_epoch, format_double(r.best_validation).c_str(),
              format_double(r.initial_validation).c_str(), r.aborted ? ("  aborted: " + r.abort_reason).c_str() : "");
}

struct EvalArgs {
  std::string manifest = "manifest.txt";
  std::string student;
  std::string expert;
  bool zero = false;
  bool test_set = false;
  bool ood = false;
  std::string scales = "1.0,0.6,0.2,0.1,0.001";
  std::string ids;
  std::string out = "-";
  EvalConfig eval;
};

std::unique_ptr<Controller> load_controller(const std::string& student, const std::string& expert, bool zero) {
  const int given = (student.empty() ? 0 : 1) + (expert.empty() ? 0 : 1) + (zero ? 1 : 0);
  if (given != 1) throw Error("choose exactly one of --student, --expert, --zero");
  if (zero) return std::make_unique<ZeroController>();
  if (!expert.empty()) return std::make_unique<ExpertController>(ExpertPolicy::load(expert));
  Vector params;
  UrmaNetwork net = UrmaNetwork::load(student, params);
  return std::make_unique<UrmaController>(std::move(net), std::move(params));
}

void cmd_eval(const EvalArgs& a) {
  const Corpus corpus(a.manifest);
  std::vector<Embodiment> set;
  if (!a.ids.empty()) set = corpus.ids(parse_list(a.ids));
  else if (a.test_set || a.ood) set = corpus.split_part(true);
  else throw Error("choose --test-set, --ood or --ids");
  const auto policy = load_controller(a.student, a.expert, a.zero);
  if (a.ood) {
    const OodTable t = ood_eval(*policy, set, parse_doubles(a.scales), EnvConfig{}, a.eval);
    emit(a.out, [&](std::ostream& o) { write_ood_csv(o, t); });
    return;
  }
  const EvalResult r = evaluate_policy(*policy, set, EnvConfig{}, a.eval);
  emit(a.out, [&](std::ostream& o) {
    o << "embodiment,class,mean_reward,mean_length,fall_rate\n";
    for (const auto& row : r.rows) {
      o << row.embodiment_id << "," << to_string(row.cls) << "," << format_double(row.mean_reward) << ","
        << format_double(row.mean_length) << "," << format_double(row.fall_rate) << "\n";
    }
  });
  std::fprintf(stderr, "%zu embodiments  mean %.4f  std %.4f  (%s)\n", r.rows.size(), r.mean, r.std, r.provenance.c_str());
}

struct StudyArgs {
  std::string config;
};

void cmd_study(const StudyArgs& a) {
  const StudyFile f = load_study_file(a.config);
  const StudyResult r = run_scaling_study(f.config, f.inputs, [](const CellResult& c) {
    std::fprintf(stderr, "%-36s %s  embodiments %3d  mean %.4f  std %.4f%s\n", c.cell_id.c_str(),
                 c.failed ? "FAILED" : "ok    ", c.train_embodiments, c.eval.mean, c.eval.std,
                 c.resumed ? "  (resumed)" : "");
  });
  std::printf("%zu cells; results in %s\n", r.cells.size(), (fs::path(f.config.work_dir) / "results.csv").c_str());
}

struct LatentArgs {
  std::string manifest = "manifest.txt";
  std::string student;
  std::string ids;
  bool test_set = false;
  bool descriptions = false;
  int head = 0;
  int steps = 100;
  int components = 2;
  std::string out = "latents.csv";
  std::string pca_out;
};

void cmd_latents(const LatentArgs& a) {
  const Corpus corpus(a.manifest);
  const auto set = a.ids.empty() ? (a.test_set ? corpus.split_part(true) : corpus.embodiments) : corpus.ids(parse_list(a.ids));
  Vector params;
  const UrmaNetwork net = UrmaNetwork::load(a.student, params);
  const LatentMatrix m = a.descriptions ? description_latents(net, as_span(params), set, a.head)
                                        : action_latents(net, as_span(params), set, EnvConfig{}, a.steps);
  emit(a.out, [&](std::ostream& o) { write_latent_csv(o, m); });
  if (!a.pca_out.empty()) {
    const PcaResult p = pca_project(m.values, a.components);
    emit(a.pca_out, [&](std::ostream& o) { write_pca_csv(o, m, p); });
    for (Eigen::Index k = 0; k < p.explained.size(); ++k) std::fprintf(stderr, "pc%ld explains %.4f\n", static_cast<long>(k + 1), p.explained[k]);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Procedural robot embodiments, expert training, distillation and scaling studies"};
  app.set_version_flag("--version", std::string(EMBSCALE_VERSION));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate the embodiment dataset manifest");
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--out", gen.out, "manifest path ('-' for stdout)");

  SplitArgs spl;
  auto* s = app.add_subcommand("split", "Add the train/test split to a manifest");
  s->add_option("--manifest", spl.manifest)->check(CLI::ExistingFile);
  s->add_option("--seed", spl.seed, "split seed (default: the manifest seed)");
  s->add_option("--out", spl.out, "output manifest (default: overwrite)");

  StatsArgs st;
  auto* sc = app.add_subcommand("stats", "Histogram CSV of dataset statistics");
  sc->add_option("--manifest", st.manifest)->check(CLI::ExistingFile);
  sc->add_option("--out", st.out);

  ExportArgs ex;
  auto* e = app.add_subcommand("export-urdf", "Write one URDF file per embodiment");
  e->add_option("--manifest", ex.manifest)->check(CLI::ExistingFile);
  e->add_option("--out-dir", ex.out_dir)->required();
  e->add_option("--ids", ex.ids, "comma-separated subset");

  ImportArgs im;
  auto* i = app.add_subcommand("import-urdf", "Import and validate an external URDF file");
  i->add_option("file", im.file)->required()->check(CLI::ExistingFile);
  i->add_option("--class", im.cls, "humanoid, quadruped or hexapod (default: inferred)");
  i->add_option("--descriptor-out", im.descriptor_out, "write the joint descriptors as CSV");

  TrainExpertArgs te;
  auto* t = app.add_subcommand("train-expert", "Train a PPO expert for one embodiment");
  t->add_option("--manifest", te.manifest);
  t->add_option("--id", te.id, "embodiment id, or a class name with --reference")->required();
  t->add_flag("--reference", te.reference, "train the class's reference robot");
  t->add_option("--out", te.out, "checkpoint path (default: <id>.ckpt)");
  t->add_option("--csv", te.csv, "training curve CSV");
  t->add_option("--iterations", te.ppo.iterations);
  t->add_option("--envs", te.ppo.num_envs);
  t->add_option("--steps", te.ppo.steps_per_env, "steps per environment and iteration");
  t->add_option("--minibatch", te.ppo.minibatch);
  t->add_option("--lr", te.ppo.learning_rate);
  t->add_option("--eval-interval", te.ppo.eval_interval);
  t->add_option("--seed", te.ppo.seed);

  CollectArgs co;
  auto* c = app.add_subcommand("collect", "Roll out experts and write demonstration slices");
  c->add_option("--manifest", co.manifest)->check(CLI::ExistingFile);
  c->add_option("--experts", co.experts, "directory of <id>.ckpt expert checkpoints")->required();
  c->add_option("--out-dir", co.out_dir)->required();
  c->add_option("--ids", co.ids, "comma-separated embodiments (default: every training embodiment with an expert)");
  c->add_option("--steps", co.collect.steps, "training steps per environment");
  c->add_option("--validation-steps", co.collect.validation_steps);
  c->add_option("--envs", co.collect.envs);
  c->add_option("--slice-steps", co.collect.slice_steps);
  c->add_option("--seed", co.collect.seed);

  DistillArgs di;
  auto* d = app.add_subcommand("distill", "Behavior-clone a student on a subset of the collected embodiments");
  d->add_option("--manifest", di.manifest)->check(CLI::ExistingFile);
  d->add_option("--data", di.data, "collected dataset directory")->required();
  d->add_option("--proportion", di.proportion)->check(CLI::Range(0.0, 1.0));
  d->add_option("--classes", di.classes, "comma-separated classes or 'all'");
  d->add_option("--out", di.out);
  d->add_option("--csv", di.csv, "loss curve CSV");
  d->add_option("--arch", di.arch, "architecture, e.g. \"heads=2 latent_dim=16 core_hidden=64,64\"; unset keys keep defaults");
  d->add_option("--epochs", di.distill.epochs);
  d->add_option("--lr", di.distill.learning_rate);
  d->add_option("--batch", di.distill.batch);
  d->add_option("--accumulation", di.distill.accumulation);
  d->add_option("--seed", di.seed);

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Evaluate a policy on the test set or under knee-limit scaling");
  v->add_option("--manifest", ev.manifest)->check(CLI::ExistingFile);
  v->add_option("--student", ev.student, "student checkpoint");
  v->add_option("--expert", ev.expert, "expert checkpoint");
  v->add_flag("--zero", ev.zero, "zero-action baseline");
  v->add_flag("--test-set", ev.test_set, "evaluate on the manifest's test split");
  v->add_flag("--ood", ev.ood, "evaluate at the knee-limit scales");
  v->add_option("--scales", ev.scales, "comma-separated knee-limit scales");
  v->add_option("--ids", ev.ids, "comma-separated embodiments instead of the test split");
  v->add_option("--out", ev.out, "CSV path ('-' for stdout)");
  v->add_option("--episodes", ev.eval.episodes);
  v->add_option("--steps", ev.eval.steps);
  v->add_option("--k", ev.eval.k, "randomization curriculum level")->check(CLI::Range(0.0, 1.0));
  v->add_option("--seed", ev.eval.seed);

  StudyArgs sa;
  auto* y = app.add_subcommand("study", "Run or resume an embodiment-scaling study");
  y->add_option("--config", sa.config)->required()->check(CLI::ExistingFile);

  LatentArgs la;
  auto* l = app.add_subcommand("latents", "Export action or joint-description latents, optionally with PCA");
  l->add_option("--manifest", la.manifest)->check(CLI::ExistingFile);
  l->add_option("--student", la.student)->required()->check(CLI::ExistingFile);
  l->add_option("--ids", la.ids);
  l->add_flag("--test-set", la.test_set);
  l->add_flag("--descriptions", la.descriptions, "joint-description latents instead of action latents");
  l->add_option("--head", la.head);
  l->add_option("--steps", la.steps, "rollout steps averaged per embodiment");
  l->add_option("--out", la.out);
  l->add_option("--pca-out", la.pca_out);
  l->add_option("--components", la.components);

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) cmd_generate(gen);
    else if (s->parsed()) cmd_split(spl);
    else if (sc->parsed()) cmd_stats(st);
    else if (e->parsed()) cmd_export(ex);
    else if (i->parsed()) cmd_import(im);
    else if (t->parsed()) cmd_train_expert(te);
    else if (c->parsed()) cmd_collect(co);
    else if (d->parsed()) cmd_distill(di);
    else if (v->parsed()) cmd_eval(ev);
    else if (y->parsed()) cmd_study(sa);
    else if (l->parsed()) cmd_latents(la);
  } catch (const std::exception& ex_) {
    std::fprintf(stderr, "error: %s\n", ex_.what());
    return 1;
  }
  return 0;
}
