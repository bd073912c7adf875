#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "embscale/distill.hpp"
#include "embscale/latent.hpp"
#include "embscale/ppo.hpp"
#include "embscale/procgen.hpp"
#include "embscale/scaling.hpp"
#include "embscale/urdf.hpp"

namespace py = pybind11;
using namespace embscale;

namespace {

MorphologyClass to_class(const py::object& o) {
  if (py::isinstance<py::str>(o)) return class_from_string(o.cast<std::string>());
  return o.cast<MorphologyClass>();
}

py::dict observation_dict(const SurrogateEnv& env, const Observation& o) {
  py::dict d;
  d["q"] = o.q;
  d["qd"] = o.qd;
  d["prev_action"] = o.prev_action;
  d["ang_vel"] = Vector(o.ang_vel);
  d["gravity"] = Vector(o.gravity);
  d["command"] = Vector(o.command);
  d["lin_vel"] = Vector(o.lin_vel);
  d["height"] = o.height;
  d["contact"] = o.contact;
  d["expert"] = env.expert_observation(o);
  return d;
}

// A single environment with its own state, stepped from Python.
class PyEnv {
 public:
  PyEnv(const Embodiment& e, bool randomize) : env_(e, config(randomize)) {}

  py::dict reset(double k, std::uint64_t seed) {
    state_ = env_.reset(k, Rng(seed));
    return observation_dict(env_, env_.observe(*state_));
  }

  py::tuple step(const Vector& action) {
    if (!state_) throw py::value_error("call reset() first");
    StepResult r = env_.step(*state_, action);
    py::dict info;
    info["fell"] = r.fell;
    info["truncated"] = r.truncated;
    info["terms"] = r.reward.terms;
    info["contributions"] = r.reward.contributions;
    return py::make_tuple(observation_dict(env_, r.obs), r.reward.total * env_.config().control_dt, r.done, info);
  }

  const SurrogateEnv& env() const { return env_; }

 private:
  static EnvConfig config(bool randomize) {
    EnvConfig c;
    c.randomize = randomize;
    return c;
  }

  SurrogateEnv env_;
  std::optional<EnvState> state_;
};

struct PyStudent {
  UrmaNetwork net;
  Vector params;

  static PyStudent load(const std::string& path) {
    Vector p;
    UrmaNetwork n = UrmaNetwork::load(path, p);
    return {std::move(n), std::move(p)};
  }
};

EvalConfig eval_config(int episodes, int steps, double k, std::uint64_t seed) {
  EvalConfig c;
  c.episodes = episodes;
  c.steps = steps;
  c.k = k;
  c.seed = seed;
  c.validate();
  return c;
}

std::unique_ptr<Controller> controller(const py::object& policy) {
  if (policy.is_none()) return std::make_unique<ZeroController>();
  if (py::isinstance<PyStudent>(policy)) {
    const auto& s = policy.cast<const PyStudent&>();
    return std::make_unique<UrmaController>(s.net, s.params);
  }
  return std::make_unique<ExpertController>(policy.cast<ExpertPolicy>());
}

py::dict eval_dict(const EvalResult& r) {
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict d;
    d["embodiment"] = row.embodiment_id;
    d["class"] = std::string(to_string(row.cls));
    d["mean_reward"] = row.mean_reward;
    d["mean_length"] = row.mean_length;
    d["fall_rate"] = row.fall_rate;
    rows.append(d);
  }
  py::dict out;
  out["rows"] = rows;
  out["mean"] = r.mean;
  out["std"] = r.std;
  return out;
}

// Runs f without the GIL; Python objects must be built after it returns.
template <class F>
auto nogil(F&& f) {
  py::gil_scoped_release release;
  return f();
}

std::string describe(const Embodiment& e) {
  std::ostringstream s;
  s << "Embodiment(" << e.id << ", " << to_string(e.cls) << ", " << e.num_actuated() << " joints)";
  return s.str();
}

}  // namespace

PYBIND11_MODULE(_embscale, m) {
  m.doc() = "Procedural legged embodiments, a surrogate locomotion environment and a morphology-agnostic policy.";
  m.attr("__version__") = EMBSCALE_VERSION;

  py::register_exception<Error>(m, "EmbscaleError", PyExc_RuntimeError);

  py::enum_<MorphologyClass>(m, "MorphologyClass")
      .value("humanoid", MorphologyClass::kHumanoid)
      .value("quadruped", MorphologyClass::kQuadruped)
      .value("hexapod", MorphologyClass::kHexapod);

  py::class_<VariationSpec>(m, "VariationSpec")
      .def(py::init<>())
      .def_readwrite("knee_joint_count", &VariationSpec::knee_joint_count)
      .def_readwrite("all_link_scale", &VariationSpec::all_link_scale)
      .def_readwrite("thigh_length_scale", &VariationSpec::thigh_length_scale)
      .def_readwrite("calf_length_scale", &VariationSpec::calf_length_scale)
      .def_readwrite("foot_size_scale", &VariationSpec::foot_size_scale)
      .def_readwrite("torso_size_scale", &VariationSpec::torso_size_scale)
      .def_readwrite("knee_limit_scale", &VariationSpec::knee_limit_scale)
      .def("__eq__", [](const VariationSpec& a, const VariationSpec& b) { return a == b; });

  py::class_<Embodiment>(m, "Embodiment")
      .def_readonly("id", &Embodiment::id)
      .def_readonly("cls", &Embodiment::cls)
      .def_readonly("variation", &Embodiment::variation)
      .def_readonly("total_mass", &Embodiment::total_mass)
      .def_readonly("nominal_height", &Embodiment::nominal_height)
      .def_property_readonly("bounding_dims", [](const Embodiment& e) { return Vector(e.bounding_dims); })
      .def_property_readonly("num_joints", &Embodiment::num_actuated)
      .def_property_readonly("joint_names",
                             [](const Embodiment& e) {
                               std::vector<std::string> names;
                               for (auto i : e.actuated_joints()) names.push_back(e.joints[i].name);
                               return names;
                             })
      .def_property_readonly("link_names",
                             [](const Embodiment& e) {
                               std::vector<std::string> names;
                               for (const auto& l : e.links) names.push_back(l.name);
                               return names;
                             })
      .def("__repr__", &describe);

  m.def("class_size", [](const py::object& c) { return dataset_class_size(to_class(c)); });
  m.def("reference_variation", [](const py::object& c) { return reference_variation(to_class(c)); });
  m.def(
      "build_embodiment",
      [](const py::object& c, const VariationSpec& v, const std::string& id) {
        return build_embodiment(to_class(c), v, BaseUnitTable::reference(), id);
      },
      py::arg("cls"), py::arg("variation"), py::arg("id") = "custom");
  m.def("apply_knee_limit_scale", &apply_knee_limit_scale, py::arg("embodiment"), py::arg("scale"));
  m.def(
      "descriptor",
      [](const Embodiment& e) {
        const auto d = descriptor_of(e);
        return py::make_tuple(d.joints, std::vector<double>(d.general.begin(), d.general.end()));
      },
      "Joint descriptors (J x 18) and the general descriptor.");
  m.def("validate", [](const Embodiment& e) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& v : validate(e)) out.emplace_back(v.subject, v.message);
    return out;
  });

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def_readonly("seed", &DatasetManifest::seed)
      .def_property_readonly("ids",
                             [](const DatasetManifest& d) {
                               std::vector<std::string> ids;
                               for (const auto& e : d.entries) ids.push_back(e.id);
                               return ids;
                             })
      .def_property_readonly("has_split", [](const DatasetManifest& d) { return !d.splits.empty(); })
      .def(
          "split_ids",
          [](const DatasetManifest& d, bool test) {
            std::vector<std::string> ids;
            for (const auto& [cls, s] : d.splits) {
              const auto entries = d.entries_of(cls);
              for (int i : test ? s.test : s.train) ids.push_back(entries.at(static_cast<std::size_t>(i))->id);
            }
            return ids;
          },
          py::arg("test") = false)
      .def("with_split",
           [](DatasetManifest d, std::optional<std::uint64_t> seed) {
             d.splits = split_dataset(d, seed.value_or(d.seed));
             return d;
           },
           py::arg("seed") = py::none())
      .def("embodiments", &build_from_manifest)
      .def("save", [](const DatasetManifest& d, const std::string& path) { save_manifest(path, d); })
      .def_static("load", &load_manifest);

  m.def(
      "generate_dataset",
      [](std::uint64_t seed) {
        auto g = generate_dataset(seed);
        return py::make_tuple(std::move(g.embodiments), std::move(g.manifest));
      },
      py::arg("seed") = kReferenceSeed, "Returns (embodiments, manifest).");

  m.def("to_urdf", &to_urdf);
  m.def(
      "import_urdf",
      [](const std::string& doc, const py::object& cls) {
        UrdfImportOptions opts;
        if (!cls.is_none()) opts.cls = to_class(cls);
        auto imp = import_urdf(doc, opts);
        return py::make_tuple(std::move(imp.embodiment), std::move(imp.warnings));
      },
      py::arg("doc"), py::arg("cls") = py::none(), "Returns (embodiment, warnings).");

  py::class_<PyEnv>(m, "Env")
      .def(py::init<const Embodiment&, bool>(), py::arg("embodiment"), py::arg("randomize") = true)
      .def("reset", &PyEnv::reset, py::arg("k") = 0.0, py::arg("seed") = 0)
      .def("step", &PyEnv::step, py::arg("action"),
           "Returns (observation, reward, done, info); the reward is scaled by the control period.")
      .def_property_readonly("num_joints", [](const PyEnv& e) { return e.env().num_joints(); })
      .def_property_readonly("nominal", [](const PyEnv& e) { return e.env().nominal(); });

  py::class_<ExpertPolicy>(m, "ExpertPolicy")
      .def_readonly("embodiment_id", &ExpertPolicy::embodiment_id)
      .def("act", &ExpertPolicy::act, "Mean actions for observations stored as columns.")
      .def("save", &ExpertPolicy::save)
      .def_static("load", &ExpertPolicy::load);

  m.def(
      "train_expert",
      [](const Embodiment& e, int iterations, int num_envs, int steps_per_env, int minibatch, int eval_interval,
         std::uint64_t seed, const std::function<void(int, double)>& progress) {
        PpoConfig cfg;
        cfg.iterations = iterations;
        cfg.num_envs = num_envs;
        cfg.steps_per_env = steps_per_env;
        cfg.minibatch = minibatch;
        cfg.eval_interval = eval_interval;
        cfg.seed = seed;
        IterationCallback cb;
        if (progress) {
          cb = [&](const IterationStats& s) {
            py::gil_scoped_acquire acquire;
            progress(s.iteration, s.mean_reward);
          };
        }
        return nogil([&] { return train_expert(e, EnvConfig{}, cfg, cb).best; });
      },
      py::arg("embodiment"), py::arg("iterations") = 200, py::arg("num_envs") = 64, py::arg("steps_per_env") = 128,
      py::arg("minibatch") = 2048, py::arg("eval_interval") = 10, py::arg("seed") = 0,
      py::arg("progress") = nullptr, "PPO with the curriculum; returns the best evaluated policy.");

  py::class_<UrmaConfig>(m, "UrmaConfig")
      .def(py::init<>())
      .def_static("from_text", &UrmaConfig::from_text)
      .def("to_text", &UrmaConfig::to_text)
      .def_readwrite("heads", &UrmaConfig::heads)
      .def_readwrite("latent_dim", &UrmaConfig::latent_dim)
      .def_readwrite("core_hidden", &UrmaConfig::core_hidden)
      .def_readwrite("decoder_hidden", &UrmaConfig::decoder_hidden);

  py::class_<PyStudent>(m, "Student")
      .def(py::init([](const UrmaConfig& cfg, std::uint64_t seed) {
             UrmaNetwork net(cfg);
             Vector p = net.init_params(seed);
             return PyStudent{std::move(net), std::move(p)};
           }),
           py::arg("config") = UrmaConfig{}, py::arg("seed") = 0)
      .def_property_readonly("num_params", [](const PyStudent& s) { return s.net.num_params(); })
      .def_property_readonly("config", [](const PyStudent& s) { return s.net.config(); })
      .def_readonly("params", &PyStudent::params)
      .def("save", [](const PyStudent& s, const std::string& path) { s.net.save(path, as_span(s.params)); })
      .def_static("load", &PyStudent::load);

  m.def(
      "collect",
      [](const std::vector<Embodiment>& embodiments, const std::map<std::string, ExpertPolicy>& experts,
         const std::string& out_dir, int steps, int validation_steps, int envs, int slice_steps, std::uint64_t seed) {
        CollectConfig c;
        c.steps = steps;
        c.validation_steps = validation_steps;
        c.envs = envs;
        c.slice_steps = slice_steps;
        c.seed = seed;
        return nogil([&] { return collect_demonstrations(embodiments, experts, EnvConfig{}, c, out_dir).slices.size(); });
      },
      py::arg("embodiments"), py::arg("experts"), py::arg("out_dir"), py::arg("steps") = 600,
      py::arg("validation_steps") = 100, py::arg("envs") = 100, py::arg("slice_steps") = 128, py::arg("seed") = 0,
      "Writes demonstration slices and returns their count; experts are keyed by embodiment id.");

  m.def(
      "distill",
      [](const std::string& data_dir, const std::vector<std::string>& ids, const UrmaConfig& arch, int epochs,
         double lr, int batch, std::uint64_t seed) {
        SliceDataset d = load_dataset_manifest(data_dir);
        if (!ids.empty()) d = select_slices(d, ids);
        DistillConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.batch = batch;
        cfg.validate();
        UrmaNetwork net(arch);
        DistillResult r = nogil([&] { return train_bc(d, cfg, net, seed); });
        std::vector<double> curve;
        for (const auto& e : r.curve) curve.push_back(e.validation_loss);
        return py::make_tuple(PyStudent{std::move(net), std::move(r.params)}, curve);
      },
      py::arg("data_dir"), py::arg("ids") = std::vector<std::string>{}, py::arg("arch") = UrmaConfig{},
      py::arg("epochs") = 80, py::arg("lr") = 3e-4, py::arg("batch") = 64, py::arg("seed") = 0,
      "Behavior cloning; returns (best student, validation loss per epoch).");

  m.def(
      "evaluate",
      [](const py::object& policy, const std::vector<Embodiment>& embodiments, int episodes, int steps, double k,
         std::uint64_t seed) {
        const auto c = controller(policy);
        const auto cfg = eval_config(episodes, steps, k, seed);
        const EvalResult r = nogil([&] { return evaluate_policy(*c, embodiments, EnvConfig{}, cfg); });
        return eval_dict(r);
      },
      py::arg("policy"), py::arg("embodiments"), py::arg("episodes") = 4, py::arg("steps") = 250, py::arg("k") = 1.0,
      py::arg("seed") = 0, "policy: a Student, an ExpertPolicy, or None for zero actions.");

  m.def(
      "ood_eval",
      [](const py::object& policy, const std::vector<Embodiment>& embodiments, const std::vector<double>& scales,
         int episodes, int steps, std::uint64_t seed) {
        const auto c = controller(policy);
        const auto cfg = eval_config(episodes, steps, 1.0, seed);
        const OodTable t = nogil([&] { return ood_eval(*c, embodiments, scales, EnvConfig{}, cfg); });
        std::map<std::string, std::vector<double>> out;
        for (const auto& [cls, means] : t.class_means) out[std::string(to_string(cls))] = means;
        return out;
      },
      py::arg("policy"), py::arg("embodiments"), py::arg("scales") = std::vector<double>{0.1, 0.001},
      py::arg("episodes") = 4, py::arg("steps") = 250, py::arg("seed") = 0,
      "Class mean reward per knee-limit scale.");

  m.def(
      "run_study",
      [](const std::string& config_path) {
        const StudyFile f = load_study_file(config_path);
        const StudyResult r = nogil([&] { return run_scaling_study(f.config, f.inputs); });
        py::list cells;
        for (const auto& c : r.cells) {
          py::dict d;
          d["cell"] = c.cell_id;
          d["mode"] = c.mode;
          d["proportion"] = c.proportion;
          d["multiplier"] = c.multiplier;
          d["seed"] = c.seed;
          d["train_embodiments"] = c.train_embodiments;
          d["mean_reward"] = c.eval.mean;
          d["std"] = c.eval.std;
          d["failed"] = c.failed;
          d["resumed"] = c.resumed;
          cells.append(d);
        }
        return cells;
      },
      py::arg("config_path"), "Runs or resumes a study described by a config file.");

  m.def(
      "action_latents",
      [](const PyStudent& s, const std::vector<Embodiment>& embodiments, int steps) {
        const LatentMatrix l = action_latents(s.net, as_span(s.params), embodiments, EnvConfig{}, steps);
        return l.values;
      },
      py::arg("student"), py::arg("embodiments"), py::arg("steps") = 100, "One row per embodiment.");
  m.def(
      "description_latents",
      [](const PyStudent& s, const std::vector<Embodiment>& embodiments, int head) {
        return description_latents(s.net, as_span(s.params), embodiments, head).values;
      },
      py::arg("student"), py::arg("embodiments"), py::arg("head") = 0, "One row per actuated joint.");
  m.def(
      "pca",
      [](const Matrix& x, int k) {
        const PcaResult p = pca_project(x, k);
        return py::make_tuple(p.coords, p.explained);
      },
      py::arg("x"), py::arg("k") = 2, "Returns (coordinates, explained variance ratios).");
}
