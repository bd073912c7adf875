#include "embscale/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace embscale {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Observation> with_command(std::vector<Observation> obs, const Vec3& c) {
  for (auto& o : obs) o.command = c;
  return obs;
}

}  // namespace

// --- policies -----------------------------------------------------------------

Matrix ZeroController::act(const SurrogateEnv& env, const std::vector<Observation>& obs) const {
  return Matrix::Zero(env.num_joints(), static_cast<Eigen::Index>(obs.size()));
}

Matrix ExpertController::act(const SurrogateEnv& env, const std::vector<Observation>& obs) const {
  Matrix m(env.expert_obs_dim(), static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = env.expert_observation(obs[i]);
  return policy_.act(m);
}

UrmaInput UrmaController::input(const SurrogateEnv& env, const std::vector<Observation>& obs) {
  const int J = env.num_joints();
  UrmaInput in;
  in.descriptors = env.descriptor().joints;
  in.general.resize(kGeneralObservationDim, static_cast<Eigen::Index>(obs.size()));
  in.joint_obs.resize(kJointObservationDim, static_cast<Eigen::Index>(obs.size()) * J);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(i);
    in.general.col(b) = env.general_obs(obs[i]);
    in.joint_obs.middleCols(b * J, J) = env.joint_obs(obs[i]);
  }
  return in;
}

Matrix UrmaController::act(const SurrogateEnv& env, const std::vector<Observation>& obs) const {
  return net_.forward(as_span(params_), input(env, obs)).actions;
}

// --- evaluation ---------------------------------------------------------------

Vec3 CommandSchedule::at(int step) const {
  int period = 0;
  for (const auto& s : segments) period += s.steps;
  if (period <= 0) return Vec3::Zero();
  int t = step % period;
  for (const auto& s : segments) {
    if (t < s.steps) return s.command;
    t -= s.steps;
  }
  return Vec3::Zero();
}

CommandSchedule CommandSchedule::standard() {
  return {{{50, Vec3(0.5, 0.0, 0.0)}, {50, Vec3(-0.5, 0.0, 0.0)}, {50, Vec3(0.0, 0.3, 0.0)}, {50, Vec3(0.0, 0.0, 0.5)}}};
}

CommandSchedule CommandSchedule::zero() { return {{{1, Vec3::Zero()}}}; }

void EvalConfig::validate() const {
  if (episodes < 1 || steps < 1) throw InvalidCurriculum("eval: episodes and steps must be positive");
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("eval: k outside [0, 1]");
}

void EvalResult::aggregate() {
  mean = 0.0;
  std = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) mean += r.mean_reward;
  mean /= static_cast<double>(rows.size());
  for (const auto& r : rows) std += (r.mean_reward - mean) * (r.mean_reward - mean);
  std = std::sqrt(std / static_cast<double>(rows.size()));
}

double EvalResult::class_mean(MorphologyClass c) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.cls != c) continue;
    s += r.mean_reward;
    ++n;
  }
  return n > 0 ? s / n : kNaN;
}

EvalResult evaluate_policy(const Controller& policy, const std::vector<Embodiment>& embodiments,
                           const EnvConfig& env_cfg, const EvalConfig& cfg) {
  cfg.validate();
  EvalResult res;
  for (std::size_t idx = 0; idx < embodiments.size(); ++idx) {
    const SurrogateEnv env(embodiments[idx], env_cfg);
    Rng root = Rng(cfg.seed).fork(idx);
    const int E = cfg.episodes;
    std::vector<EnvState> states;
    std::vector<Observation> obs;
    for (int i = 0; i < E; ++i) {
      states.push_back(env.reset(cfg.k, root.fork(static_cast<std::uint64_t>(i))));
      obs.push_back(env.observe(states.back()));
    }
    std::vector<double> reward(static_cast<std::size_t>(E), 0.0);
    std::vector<int> length(static_cast<std::size_t>(E), cfg.steps);
    std::vector<bool> active(static_cast<std::size_t>(E), true), fell(static_cast<std::size_t>(E), false);
    for (int t = 0; t < cfg.steps; ++t) {
      const Vec3 c = cfg.commands.at(t);
      std::vector<int> ids;
      std::vector<Observation> batch;
      for (int i = 0; i < E; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        ids.push_back(i);
        batch.push_back(obs[static_cast<std::size_t>(i)]);
      }
      if (ids.empty()) break;
      const Matrix a = policy.act(env, with_command(std::move(batch), c));
      for (std::size_t b = 0; b < ids.size(); ++b) {
        const auto i = static_cast<std::size_t>(ids[b]);
        states[i].command = c;
        const StepResult r = env.step(states[i], a.col(static_cast<Eigen::Index>(b)));
        reward[i] += r.reward.total * env_cfg.control_dt;
        obs[i] = r.obs;
        if (r.done) {
          active[i] = false;
          length[i] = t + 1;
          fell[i] = r.fell;
        }
      }
    }
    EvalRow row;
    row.embodiment_id = embodiments[idx].id;
    row.cls = embodiments[idx].cls;
    for (int i = 0; i < E; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      row.mean_reward += reward[ii] / E;
      row.mean_length += static_cast<double>(length[ii]) / E;
      row.fall_rate += fell[ii] ? 1.0 / E : 0.0;
    }
    res.rows.push_back(row);
  }
  res.aggregate();
  std::ostringstream p;
  p << "episodes=" << cfg.episodes << " steps=" << cfg.steps << " k=" << format_double(cfg.k)
    << " seed=" << cfg.seed << " commands=";
  for (std::size_t i = 0; i < cfg.commands.segments.size(); ++i) {
    const auto& s = cfg.commands.segments[i];
    p << (i ? ";" : "") << s.steps << ":" << format_double(s.command.x()) << "/" << format_double(s.command.y()) << "/"
      << format_double(s.command.z());
  }
  res.provenance = p.str();
  return res;
}

// --- subsets ------------------------------------------------------------------

std::map<double, std::vector<std::string>> make_subsets(const std::vector<Embodiment>& pool,
                                                        const std::vector<double>& proportions, std::uint64_t seed) {
  std::map<MorphologyClass, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < pool.size(); ++i) members[pool[i].cls].push_back(i);
  std::map<MorphologyClass, std::vector<std::size_t>> shuffled;
  for (auto& [c, idx] : members) {
    Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(c));
    auto v = idx;
    shuffle(v, rng);
    shuffled[c] = std::move(v);
  }
  std::map<double, std::vector<std::string>> out;
  for (double p : proportions) {
    if (!(p > 0.0 && p <= 1.0)) throw InvalidCurriculum("subset proportion outside (0, 1]");
    std::vector<bool> keep(pool.size(), false);
    for (const auto& [c, v] : shuffled) {
      // The epsilon keeps exact products such as 0.2 * 265 from rounding up.
      const auto n = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()) - 1e-9));
      for (std::size_t k = 0; k < std::min(n, v.size()); ++k) keep[v[k]] = true;
    }
    auto& ids = out[p];
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (keep[i]) ids.push_back(pool[i].id);
    }
  }
  return out;
}

std::vector<std::string> make_subset(const std::vector<Embodiment>& pool, double proportion, std::uint64_t seed) {
  return make_subsets(pool, {proportion}, seed).begin()->second;
}

// --- out-of-distribution knee limits ------------------------------------------

OodTable ood_eval(const Controller& policy, const std::vector<Embodiment>& test_set, const std::vector<double>& scales,
                  const EnvConfig& env_cfg, const EvalConfig& cfg) {
  OodTable t;
  t.scales = scales;
  std::set<MorphologyClass> classes;
  for (const auto& e : test_set) classes.insert(e.cls);
  for (double s : scales) {
    std::vector<Embodiment> scaled;
    scaled.reserve(test_set.size());
    for (const auto& e : test_set) scaled.push_back(apply_knee_limit_scale(e, s));
    t.results.push_back(evaluate_policy(policy, scaled, env_cfg, cfg));
    for (MorphologyClass c : classes) t.class_means[c].push_back(t.results.back().class_mean(c));
  }
  return t;
}

void write_ood_csv(std::ostream& out, const OodTable& t) {
  out << "class";
  for (double s : t.scales) out << ",scale_" << format_double(s);
  out << "\n";
  for (const auto& [c, means] : t.class_means) {
    out << to_string(c);
    for (double m : means) out << "," << format_double(m);
    out << "\n";
  }
}

// --- study --------------------------------------------------------------------

void ScalingConfig::validate() const {
  if (proportions.empty()) throw InvalidCurriculum("study: no proportions");
  for (double p : proportions) {
    if (!(p > 0.0 && p <= 1.0)) throw InvalidCurriculum("study: proportion outside (0, 1]");
  }
  for (const auto& m : class_modes) {
    if (m != "combined") class_from_string(m);
  }
  if (seeds.empty()) throw InvalidCurriculum("study: no seeds");
  if (!data_multipliers.empty()) {
    if (!(data_scaling_proportion > 0.0 && data_scaling_proportion <= 1.0)) {
      throw InvalidCurriculum("study: data-scaling proportion outside (0, 1]");
    }
    for (int m : data_multipliers) {
      if (m < 1) throw InvalidCurriculum("study: data multipliers must be >= 1");
    }
  }
  eval.validate();
  collect.validate();
  distill.validate();
}

void write_cell_record(std::ostream& out, const CellResult& c) {
  out << "cell " << c.cell_id << "\n"
      << "mode " << c.mode << "\n"
      << "proportion " << format_double(c.proportion) << "\n"
      << "multiplier " << c.multiplier << "\n"
      << "seed " << c.seed << "\n"
      << "train_embodiments " << c.train_embodiments << "\n"
      << "train_samples " << c.train_samples << "\n"
      << "best_validation " << format_double(c.best_validation) << "\n"
      << "status " << (c.failed ? "failed " + c.error : std::string("ok")) << "\n"
      << "provenance " << c.eval.provenance << "\n";
  for (const auto& r : c.eval.rows) {
    out << "row " << r.embodiment_id << " " << to_string(r.cls) << " " << format_double(r.mean_reward) << " "
        << format_double(r.mean_length) << " " << format_double(r.fall_rate) << "\n";
  }
}

CellResult read_cell_record(std::istream& in) {
  CellResult c;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "cell") c.cell_id = value;
    else if (key == "mode") c.mode = value;
    else if (key == "proportion") c.proportion = parse_double(value);
    else if (key == "multiplier") c.multiplier = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "train_embodiments") c.train_embodiments = std::stoi(value);
    else if (key == "train_samples") c.train_samples = std::stoll(value);
    else if (key == "best_validation") c.best_validation = parse_double(value);
    else if (key == "status") {
      c.failed = value != "ok";
      if (c.failed) c.error = value.size() > 7 ? value.substr(7) : "";
    } else if (key == "provenance") c.eval.provenance = value;
    else if (key == "row") {
      std::istringstream ls(value);
      EvalRow r;
      std::string cls, a, b, d;
      if (!(ls >> r.embodiment_id >> cls >> a >> b >> d)) throw ParseError("cell record: bad row");
      r.cls = class_from_string(cls);
      r.mean_reward = parse_double(a);
      r.mean_length = parse_double(b);
      r.fall_rate = parse_double(d);
      c.eval.rows.push_back(r);
    } else {
      throw ParseError("cell record: unknown key '" + key + "'");
    }
  }
  if (c.cell_id.empty()) throw ParseError("cell record: missing cell id");
  c.eval.aggregate();
  return c;
}

namespace {

struct CellPlan {
  std::string id;
  std::string mode;
  double proportion = 0.0;
  int multiplier = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
};

std::vector<Embodiment> of_class(const std::vector<Embodiment>& pool, MorphologyClass c) {
  std::vector<Embodiment> out;
  for (const auto& e : pool) {
    if (e.cls == c) out.push_back(e);
  }
  return out;
}

SliceDataset study_dataset(const ScalingConfig& cfg, const StudyInputs& in, const std::set<std::string>& needed,
                           const std::set<std::string>& boosted, int max_multiplier) {
  const std::string dir = (fs::path(cfg.work_dir) / "data").string();
  if (fs::exists(fs::path(dir) / "dataset.txt")) return load_dataset_manifest(dir);
  fs::create_directories(dir);
  SliceDataset d;
  d.directory = dir;
  for (const auto& e : in.train_pool) {
    if (!needed.count(e.id)) continue;
    auto it = in.experts.find(e.id);
    if (it == in.experts.end()) throw MissingExpert("no expert for embodiment " + e.id);
    const int steps = boosted.count(e.id) ? cfg.collect.steps * max_multiplier : cfg.collect.steps;
    for (auto& ref : collect_embodiment(e, it->second, cfg.env, cfg.collect, dir, steps)) d.slices.push_back(std::move(ref));
  }
  // The manifest is written last: its presence marks a complete collection.
  save_dataset_manifest(d);
  return d;
}

CellResult run_cell(const ScalingConfig& cfg, const StudyInputs& in, const SliceDataset& data, const CellPlan& plan) {
  CellResult c;
  c.cell_id = plan.id;
  c.mode = plan.mode;
  c.proportion = plan.proportion;
  c.multiplier = plan.multiplier;
  c.seed = plan.seed;
  c.train_embodiments = static_cast<int>(plan.ids.size());
  const long long base = static_cast<long long>(cfg.collect.steps) * cfg.collect.envs;
  const SliceDataset sel = select_slices(data, plan.ids, base * plan.multiplier);
  for (const auto& [id, n] : sel.sample_counts(SplitRole::kTrain)) c.train_samples += n;

  const fs::path dir = fs::path(cfg.work_dir) / "cells" / plan.id;
  fs::create_directories(dir);
  const UrmaNetwork net(cfg.arch);
  const DistillResult r = train_bc(sel, cfg.distill, net, splitmix64(plan.seed ^ fnv1a(plan.id)));
  {
    std::ofstream csv(dir / "loss.csv");
    write_distill_csv(csv, r.curve);
  }
  net.save((dir / "student.ckpt").string(), as_span(r.params));
  if (r.aborted) {
    c.failed = true;
    c.error = r.abort_reason;
  }
  c.best_validation = r.best_validation;
  c.eval = evaluate_policy(UrmaController(net, r.params), in.test_set, cfg.env, cfg.eval);
  return c;
}

}  // namespace

StudyResult run_scaling_study(const ScalingConfig& cfg, const StudyInputs& in, const CellCallback& on_cell) {
  cfg.validate();
  if (in.train_pool.empty()) throw InvalidCurriculum("study: empty training pool");
  if (in.test_set.empty()) throw InvalidCurriculum("study: empty test set");

  StudyResult res;
  std::vector<CellPlan> plans;
  std::set<std::string> needed, boosted;
  const int max_mult = cfg.data_multipliers.empty()
                           ? 1
                           : *std::max_element(cfg.data_multipliers.begin(), cfg.data_multipliers.end());
  for (std::uint64_t seed : cfg.seeds) {
    res.subsets[seed] = make_subsets(in.train_pool, cfg.proportions, seed);
    for (const auto& mode : cfg.class_modes) {
      const auto subsets = mode == "combined" ? res.subsets[seed]
                                              : make_subsets(of_class(in.train_pool, class_from_string(mode)),
                                                             cfg.proportions, seed);
      for (double p : cfg.proportions) {
        CellPlan plan{mode + "_p" + format_double(p) + "_s" + std::to_string(seed), mode, p, 1, seed, subsets.at(p)};
        needed.insert(plan.ids.begin(), plan.ids.end());
        plans.push_back(std::move(plan));
      }
    }
    if (!cfg.data_multipliers.empty()) {
      const double p = cfg.data_scaling_proportion;
      const auto ids = make_subset(in.train_pool, p, seed);
      for (int m : cfg.data_multipliers) {
        plans.push_back({"data_p" + format_double(p) + "_x" + std::to_string(m) + "_s" + std::to_string(seed), "data", p,
                         m, seed, ids});
      }
      needed.insert(ids.begin(), ids.end());
      if (max_mult > 1) boosted.insert(ids.begin(), ids.end());
    }
  }

  const SliceDataset data = study_dataset(cfg, in, needed, boosted, max_mult);
  for (const auto& plan : plans) {
    const fs::path record = fs::path(cfg.work_dir) / "cells" / plan.id / "result.txt";
    CellResult c;
    if (fs::exists(record)) {
      std::ifstream f(record);
      c = read_cell_record(f);
      c.resumed = true;
    } else {
      try {
        c = run_cell(cfg, in, data, plan);
      } catch (const Error& e) {
        c.cell_id = plan.id;
        c.mode = plan.mode;
        c.proportion = plan.proportion;
        c.multiplier = plan.multiplier;
        c.seed = plan.seed;
        c.train_embodiments = static_cast<int>(plan.ids.size());
        c.failed = true;
        c.error = e.what();
        c.eval.provenance = "none";
      }
      fs::create_directories(record.parent_path());
      const fs::path tmp = record.string() + ".tmp";
      {
        std::ofstream f(tmp);
        write_cell_record(f, c);
        if (!f) throw IoError("cannot write " + tmp.string());
      }
      fs::rename(tmp, record);
    }
    if (on_cell) on_cell(c);
    res.cells.push_back(std::move(c));
  }
  std::ofstream csv(fs::path(cfg.work_dir) / "results.csv");
  write_study_csv(csv, res.cells);
  return res;
}

void write_study_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  out << "cell,mode,proportion,multiplier,seed,train_embodiments,train_samples,best_validation,mean_reward,std,"
         "humanoid,quadruped,hexapod,status\n";
  for (const auto& c : cells) {
    out << c.cell_id << "," << c.mode << "," << format_double(c.proportion) << "," << c.multiplier << "," << c.seed
        << "," << c.train_embodiments << "," << c.train_samples << "," << format_double(c.best_validation) << ","
        << format_double(c.eval.mean) << "," << format_double(c.eval.std);
    for (MorphologyClass k : {MorphologyClass::kHumanoid, MorphologyClass::kQuadruped, MorphologyClass::kHexapod}) {
      const double m = c.eval.class_mean(k);
      out << "," << (std::isnan(m) ? std::string() : format_double(m));
    }
    out << "," << (c.failed ? "failed" : "ok") << "\n";
  }
}

// --- configuration file -------------------------------------------------------

StudyFile load_study_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };

  StudyFile f;
  ScalingConfig& c = f.config;
  std::string manifest_path, train_spec = "split", test_spec = "split";
  std::vector<std::pair<std::string, std::string>> experts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto doubles = [&]() {
      std::vector<double> v;
      for (const auto& s : split(value, ',')) v.push_back(parse_double(trim(s)));
      return v;
    };
    if (key == "manifest") manifest_path = resolve(value);
    else if (key == "train") train_spec = value;
    else if (key == "test") test_spec = value;
    else if (key == "proportions") c.proportions = doubles();
    else if (key == "class_modes") {
      c.class_modes.clear();
      for (const auto& s : split(value, ',')) c.class_modes.push_back(trim(s));
    } else if (key == "seeds") {
      c.seeds.clear();
      for (int s : parse_ints(value)) c.seeds.push_back(static_cast<std::uint64_t>(s));
    } else if (key == "data_scaling_proportion") c.data_scaling_proportion = parse_double(value);
    else if (key == "data_multipliers") c.data_multipliers = value == "none" ? std::vector<int>{} : parse_ints(value);
    else if (key == "work_dir") c.work_dir = resolve(value);
    else if (key == "eval_episodes") c.eval.episodes = std::stoi(value);
    else if (key == "eval_steps") c.eval.steps = std::stoi(value);
    else if (key == "eval_k") c.eval.k = parse_double(value);
    else if (key == "eval_seed") c.eval.seed = std::stoull(value);
    else if (key == "collect_steps") c.collect.steps = std::stoi(value);
    else if (key == "collect_envs") c.collect.envs = std::stoi(value);
    else if (key == "validation_steps") c.collect.validation_steps = std::stoi(value);
    else if (key == "slice_steps") c.collect.slice_steps = std::stoi(value);
    else if (key == "distill_epochs") c.distill.epochs = std::stoi(value);
    else if (key == "distill_lr") c.distill.learning_rate = parse_double(value);
    else if (key == "distill_batch") c.distill.batch = std::stoi(value);
    else if (key == "arch") c.arch = UrmaConfig::from_text(value);
    else if (key.rfind("expert ", 0) == 0) experts.emplace_back(trim(key.substr(7)), resolve(value));
    else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  if (manifest_path.empty()) throw ParseError(path + ": missing 'manifest'");

  const DatasetManifest m = load_manifest(manifest_path);
  const std::vector<Embodiment> all = build_from_manifest(m);
  auto pick = [&](const std::string& spec, bool train) {
    std::vector<Embodiment> out;
    if (spec == "split") {
      if (m.splits.empty()) throw ParseError(path + ": manifest has no split");
      for (const auto& [cls, s] : m.splits) {
        const auto entries = m.entries_of(cls);
        for (int i : train ? s.train : s.test) {
          const auto* entry = entries.at(static_cast<std::size_t>(i));
          for (const auto& e : all) {
            if (e.id == entry->id) out.push_back(e);
          }
        }
      }
      return out;
    }
    for (const auto& id : split(spec, ',')) {
      const std::string t = trim(id);
      auto it = std::find_if(all.begin(), all.end(), [&](const Embodiment& e) { return e.id == t; });
      if (it == all.end()) throw ParseError(path + ": unknown embodiment '" + t + "'");
      out.push_back(*it);
    }
    return out;
  };
  f.inputs.train_pool = pick(train_spec, true);
  f.inputs.test_set = pick(test_spec, false);

  // Experts named by id win over experts named by class; a class expert only
  // covers embodiments whose joint count it fits.
  std::map<std::string, ExpertPolicy> loaded;
  for (const auto& [who, ckpt] : experts) loaded.emplace(who, ExpertPolicy::load(ckpt));
  for (const auto& e : f.inputs.train_pool) {
    if (auto it = loaded.find(e.id); it != loaded.end()) {
      f.inputs.experts.emplace(e.id, it->second);
      continue;
    }
    if (auto it = loaded.find(std::string(to_string(e.cls))); it != loaded.end() &&
        it->second.net.spec().joints == static_cast<int>(e.num_actuated())) {
      ExpertPolicy p = it->second;
      p.embodiment_id = e.id;
      f.inputs.experts.emplace(e.id, std::move(p));
    }
  }
  return f;
}

}  // namespace embscale
