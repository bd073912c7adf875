#ifndef EMBSCALE_SCALING_HPP_
#define EMBSCALE_SCALING_HPP_

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "embscale/distill.hpp"
#include "embscale/procgen.hpp"

namespace embscale {

// --- policies -----------------------------------------------------------------

// Batched controller: one action column per observation.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual Matrix act(const SurrogateEnv& env, const std::vector<Observation>& obs) const = 0;
};

class ZeroController : public Controller {
 public:
  Matrix act(const SurrogateEnv& env, const std::vector<Observation>& obs) const override;
};

class ExpertController : public Controller {
 public:
  explicit ExpertController(ExpertPolicy policy) : policy_(std::move(policy)) {}
  Matrix act(const SurrogateEnv& env, const std::vector<Observation>& obs) const override;

 private:
  ExpertPolicy policy_;
};

class UrmaController : public Controller {
 public:
  UrmaController(UrmaNetwork net, Vector params) : net_(std::move(net)), params_(std::move(params)) {}
  Matrix act(const SurrogateEnv& env, const std::vector<Observation>& obs) const override;
  // Network input for a batch of observations of one embodiment.
  static UrmaInput input(const SurrogateEnv& env, const std::vector<Observation>& obs);

  const UrmaNetwork& net() const { return net_; }
  const Vector& params() const { return params_; }

 private:
  UrmaNetwork net_;
  Vector params_;
};

// --- evaluation ---------------------------------------------------------------

// Piecewise-constant command segments, repeated cyclically over an episode.
struct CommandSchedule {
  struct Segment {
    int steps = 0;
    Vec3 command = Vec3::Zero();
  };
  std::vector<Segment> segments;

  Vec3 at(int step) const;
  // Forward, backward, lateral, turn; 50 steps each.
  static CommandSchedule standard();
  static CommandSchedule zero();
};

struct EvalConfig {
  int episodes = 4;  // parallel environments per embodiment
  int steps = 250;   // episode length cap
  double k = 1.0;    // curriculum coefficient of the randomization
  CommandSchedule commands = CommandSchedule::standard();
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalRow {
  std::string embodiment_id;
  MorphologyClass cls = MorphologyClass::kQuadruped;
  double mean_reward = 0.0;  // cumulative episode reward (term sum times dt)
  double mean_length = 0.0;
  double fall_rate = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mean = 0.0;  // over rows
  double std = 0.0;   // population standard deviation over rows
  std::string provenance;

  // Recomputes mean and std from the rows.
  void aggregate();
  double class_mean(MorphologyClass c) const;  // NaN when the class is absent
};

// Episodes of embodiment i are seeded from (seed, i), so results do not
// depend on embodiment ids.
EvalResult evaluate_policy(const Controller& policy, const std::vector<Embodiment>& embodiments,
                           const EnvConfig& env_cfg, const EvalConfig& cfg);

// --- subsets ------------------------------------------------------------------

// Class-stratified nested subsets: each class is shuffled once per seed and
// proportion p keeps the first ceil(p * n_class) members. Returned in pool
// order.
std::map<double, std::vector<std::string>> make_subsets(const std::vector<Embodiment>& pool,
                                                        const std::vector<double>& proportions, std::uint64_t seed);
std::vector<std::string> make_subset(const std::vector<Embodiment>& pool, double proportion, std::uint64_t seed);

// --- out-of-distribution knee limits ------------------------------------------

struct OodTable {
  std::vector<double> scales;
  std::vector<EvalResult> results;  // one per scale
  // class -> per-scale mean reward
  std::map<MorphologyClass, std::vector<double>> class_means;
};

OodTable ood_eval(const Controller& policy, const std::vector<Embodiment>& test_set, const std::vector<double>& scales,
                  const EnvConfig& env_cfg, const EvalConfig& cfg);

// class,scale_<s>... one row per class present.
void write_ood_csv(std::ostream& out, const OodTable& t);

// --- study --------------------------------------------------------------------

struct ScalingConfig {
  std::vector<double> proportions = {0.05, 0.2, 0.4, 0.6, 0.8, 1.0};
  // "combined" and/or class names; per-class modes draw subsets from that
  // class only and are evaluated on the full test set.
  std::vector<std::string> class_modes = {"combined"};
  std::vector<std::uint64_t> seeds = {0};
  // Data-scaling baseline: a fixed embodiment proportion trained with
  // multiples of the per-embodiment sample count. Empty disables it.
  double data_scaling_proportion = 0.05;
  std::vector<int> data_multipliers = {1, 4};

  EnvConfig env;
  EvalConfig eval;
  CollectConfig collect;
  DistillConfig distill;
  UrmaConfig arch;
  std::string work_dir = "study";

  void validate() const;
};

struct StudyInputs {
  std::vector<Embodiment> train_pool;
  std::vector<Embodiment> test_set;
  std::map<std::string, ExpertPolicy> experts;  // by embodiment id
};

struct CellResult {
  std::string cell_id;
  std::string mode;  // "combined", a class name, or "data"
  double proportion = 0.0;
  int multiplier = 1;
  std::uint64_t seed = 0;
  int train_embodiments = 0;
  long long train_samples = 0;
  double best_validation = 0.0;
  EvalResult eval;
  bool failed = false;
  std::string error;
  bool resumed = false;  // read back from a previous run
};

struct StudyResult {
  std::vector<CellResult> cells;
  std::map<std::uint64_t, std::map<double, std::vector<std::string>>> subsets;  // seed -> proportion -> ids
};

using CellCallback = std::function<void(const CellResult&)>;

// Collects demonstrations once under work_dir/data (reused when present),
// then trains and evaluates one student per cell under work_dir/cells/<id>.
// Completed cells are read back instead of recomputed; a failing cell is
// recorded and the grid continues.
StudyResult run_scaling_study(const ScalingConfig& cfg, const StudyInputs& in, const CellCallback& on_cell = {});

// cell,mode,proportion,multiplier,seed,train_embodiments,train_samples,
// best_validation,mean_reward,std,humanoid,quadruped,hexapod,status
void write_study_csv(std::ostream& out, const std::vector<CellResult>& cells);

// Per-cell record written next to each trained student; exact round trip.
void write_cell_record(std::ostream& out, const CellResult& c);
CellResult read_cell_record(std::istream& in);

// Study configuration file: "key = value" lines and '#' comments.
//   manifest, train, test, proportions, class_modes, seeds,
//   data_scaling_proportion, data_multipliers, work_dir, eval_episodes,
//   eval_steps, eval_k, collect_steps, collect_envs, validation_steps,
//   slice_steps, distill_epochs, distill_lr, distill_batch, arch,
//   expert <id or class> = <checkpoint>
// train/test take comma-separated embodiment ids, or "split" for the
// manifest's train/test split. Relative paths resolve against the file.
struct StudyFile {
  ScalingConfig config;
  StudyInputs inputs;
};
StudyFile load_study_file(const std::string& path);

}  // namespace embscale

#endif  // EMBSCALE_SCALING_HPP_
