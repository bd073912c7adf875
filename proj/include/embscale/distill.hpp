#ifndef EMBSCALE_DISTILL_HPP_
#define EMBSCALE_DISTILL_HPP_

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "embscale/env.hpp"
#include "embscale/ppo.hpp"
#include "embscale/urma.hpp"

namespace embscale {

// --- slices -------------------------------------------------------------------

// Demonstrations of one embodiment: `trajectories` parallel rollouts over
// `steps` control steps. Sample n = t * trajectories + i (time-major).
// Values are stored rounded to float so files round-trip exactly.
struct TrajectorySlice {
  std::string embodiment_id;
  MorphologyClass cls = MorphologyClass::kQuadruped;
  int trajectories = 0;
  int steps = 0;
  Matrix descriptors;  // J x 18
  Matrix general;      // 20 x N
  Matrix joint_obs;    // 3 x (N*J), column n*J + j
  Matrix actions;      // J x N, expert action means

  int joints() const { return static_cast<int>(descriptors.rows()); }
  int samples() const { return trajectories * steps; }

  // Throws ShapeMismatch when the arrays disagree with the counts.
  void check() const;
  UrmaInput input(const std::vector<int>& samples) const;
  Matrix targets(const std::vector<int>& samples) const;
};

// "EMBSSLCE", u32 version, str embodiment id, str class, u32 trajectories,
// u32 steps, u32 J, then f32 descriptors, general, joint_obs, actions, each
// column-major.
void write_slice(std::ostream& out, const TrajectorySlice& s);
TrajectorySlice read_slice(std::istream& in);
void save_slice(const std::string& path, const TrajectorySlice& s);
TrajectorySlice load_slice_file(const std::string& path);

enum class SplitRole { kTrain, kValidation };

struct SliceRef {
  std::string embodiment_id;
  MorphologyClass cls = MorphologyClass::kQuadruped;
  SplitRole role = SplitRole::kTrain;
  int samples = 0;
  std::string file;  // relative to the dataset directory
  std::shared_ptr<const TrajectorySlice> data;  // in-memory slices skip the file
};

// Dataset manifest, one line per slice:
//   slice <train|val> <embodiment id> <class> <samples> <file>
struct SliceDataset {
  std::string directory;
  std::vector<SliceRef> slices;

  std::vector<SliceRef> of_role(SplitRole role) const;
  std::map<std::string, long long> sample_counts(SplitRole role) const;
  std::shared_ptr<const TrajectorySlice> load(const SliceRef& ref) const;
};

void write_dataset_manifest(std::ostream& out, const SliceDataset& d);
SliceDataset read_dataset_manifest(std::istream& in, const std::string& directory);
void save_dataset_manifest(const SliceDataset& d);  // <directory>/dataset.txt
SliceDataset load_dataset_manifest(const std::string& directory);

// Keeps the slices of the listed embodiments; for the training role at most
// `max_train_samples` per embodiment (whole slices, in stored order; <= 0
// keeps all).
SliceDataset select_slices(const SliceDataset& d, const std::vector<std::string>& embodiment_ids,
                           long long max_train_samples = 0);

// --- collection ---------------------------------------------------------------

struct CollectConfig {
  int steps = 600;             // per environment, training split
  int validation_steps = 100;  // per environment, separate rollouts
  int envs = 100;
  int slice_trajectories = 100;
  int slice_steps = 128;
  double k = 1.0;  // curriculum coefficient of the collection environments
  std::uint64_t seed = 0;

  void validate() const;
};

// Rolls out the expert's mean actions in `envs` environments, resetting
// finished episodes, and cuts the record into slices of at most
// slice_trajectories x slice_steps. Every collected step is kept, so the
// sample count is exactly steps x envs.
std::vector<TrajectorySlice> collect_slices(const SurrogateEnv& env, const ExpertPolicy& expert, int steps,
                                            const CollectConfig& cfg, std::uint64_t seed);

// Training and validation slices of one embodiment written into `directory`;
// `steps` overrides cfg.steps when positive.
std::vector<SliceRef> collect_embodiment(const Embodiment& e, const ExpertPolicy& expert, const EnvConfig& env_cfg,
                                         const CollectConfig& cfg, const std::string& directory, int steps = 0);

// Collects training and validation slices for every embodiment into
// `directory` and writes the manifest. Throws MissingExpert when an
// embodiment has no expert or the expert does not fit it.
SliceDataset collect_demonstrations(const std::vector<Embodiment>& embodiments,
                                    const std::map<std::string, ExpertPolicy>& experts, const EnvConfig& env_cfg,
                                    const CollectConfig& cfg, const std::string& directory);

// --- buffer -------------------------------------------------------------------

struct BufferConfig {
  int max_resident = 1024;
  int repeat = 3;
  int batch = 64;

  void validate() const;
};

struct Minibatch {
  std::shared_ptr<const TrajectorySlice> slice;
  std::size_t slice_index = 0;  // position in the buffer's slice list
  std::vector<int> samples;

  UrmaInput input() const { return slice->input(samples); }
  Matrix targets() const { return slice->targets(samples); }
};

// Streams single-embodiment minibatches. Each resident slice is visited in
// `repeat` passes, each a fresh permutation; a batch never crosses a pass
// boundary, so a pass ends with a partial batch when the slice size is not a
// multiple of the batch size. The next batch comes from a resident slice
// chosen with probability proportional to its remaining samples. Exhausted
// slices are evicted and replaced in round-robin order over embodiments.
class SliceBuffer {
 public:
  using Loader = std::function<std::shared_ptr<const TrajectorySlice>(const SliceRef&)>;

  SliceBuffer(std::vector<SliceRef> slices, Loader loader, BufferConfig cfg, std::uint64_t seed);

  // Throws BufferExhausted once every slice has been drained.
  Minibatch next();
  std::optional<Minibatch> try_next();
  // Starts a new epoch over all slices.
  void reset();

  std::size_t resident() const { return resident_.size(); }
  const std::vector<SliceRef>& slices() const { return slices_; }
  const std::vector<std::size_t>& admission_order() const { return order_; }
  // Minibatches one full epoch yields.
  long long batches_per_epoch() const;

 private:
  struct Resident {
    std::size_t index = 0;
    std::shared_ptr<const TrajectorySlice> slice;
    std::vector<int> order;  // current pass
    std::size_t cursor = 0;
    int passes_left = 0;
    long long remaining = 0;
  };
  void admit();
  void start_pass(Resident& r);

  std::vector<SliceRef> slices_;
  Loader loader_;
  BufferConfig cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t next_ = 0;
  std::vector<Resident> resident_;
};

// --- behavior cloning ---------------------------------------------------------

struct DistillConfig {
  int batch = 64;
  int accumulation = 8;
  double grad_clip = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double learning_rate = 3e-4;  // cosine-annealed to 0
  double weight_decay = 3e-4;   // cosine-annealed to 0
  int epochs = 80;
  int max_resident = 1024;
  int repeat = 3;
  int validation_batch = 4096;

  void validate() const;
};

// Mean of the per-minibatch gradients, written into `grad`; returns the mean
// of the minibatch losses, each of which lands in `losses` when given.
double accumulate_gradient(const UrmaNetwork& net, std::span<const double> params,
                           const std::vector<Minibatch>& batches, std::span<double> grad,
                           std::vector<double>* losses = nullptr);

// 0.5 * (1 + cos(pi * step / total)) * start.
double cosine_schedule(double start, long long step, long long total);

// Sample-weighted mean squared error over the validation slices.
double validation_loss(const UrmaNetwork& net, std::span<const double> params, const SliceDataset& d,
                       int chunk = 4096);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;  // sample-weighted, before each step
  double validation_loss = 0.0;
  double learning_rate = 0.0;  // at the last step of the epoch
  double weight_decay = 0.0;
  long long steps = 0;  // optimizer steps so far
};

struct DistillResult {
  Vector params;  // best validation checkpoint
  Vector last_params;
  int best_epoch = 0;  // 0: the initial parameters
  double best_validation = 0.0;
  double initial_validation = 0.0;
  std::vector<EpochStats> curve;
  bool aborted = false;  // non-finite loss; params hold the last good checkpoint
  std::string abort_reason;
};

using EpochCallback = std::function<void(const EpochStats&)>;

DistillResult train_bc(const SliceDataset& d, const DistillConfig& cfg, const UrmaNetwork& net, std::uint64_t seed,
                       const EpochCallback& on_epoch = {});

// epoch,train_loss,validation_loss,lr,weight_decay,steps
void write_distill_csv(std::ostream& out, const std::vector<EpochStats>& curve);

}  // namespace embscale

#endif  // EMBSCALE_DISTILL_HPP_
