#ifndef EMBSCALE_PPO_HPP_
#define EMBSCALE_PPO_HPP_

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "embscale/env.hpp"
#include "embscale/nn.hpp"

namespace embscale {

// --- advantage estimation -----------------------------------------------------

struct GaeResult {
  Vector advantages;
  Vector returns;  // advantages + values
};

// One environment's sequence. dones[t] marks the last step of an episode:
// the value of the following state is not bootstrapped. last_value is the
// value of the state after the final step.
GaeResult gae(const Vector& rewards, const Vector& values, const std::vector<bool>& dones, double last_value,
              double gamma = 0.99, double lambda = 0.95);

// --- policy -------------------------------------------------------------------

struct ExpertSpec {
  int obs_dim = 0;
  int critic_dim = 0;
  int joints = 0;
  std::vector<int> hidden = {512, 256, 128};
  double init_std = 1.0;

  std::string to_text() const;
  static ExpertSpec from_text(const std::string& text);
  bool operator==(const ExpertSpec&) const = default;
};

inline constexpr double kActionMeanClip = 10.0;

// Actor and critic MLPs plus a global log-std vector in one parameter vector.
class ExpertNetwork {
 public:
  explicit ExpertNetwork(ExpertSpec spec);

  const ExpertSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return layout_.size(); }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  std::size_t log_std_offset() const { return log_std_; }

  Vector init_params(std::uint64_t seed) const;

  // obs is obs_dim x B; returns the clipped action mean, J x B.
  Matrix action_mean(std::span<const double> params, const Matrix& obs) const;
  Vector value(std::span<const double> params, const Matrix& critic_obs) const;
  Vector log_std(std::span<const double> params) const;

 private:
  ExpertSpec spec_;
  ParamLayout layout_;
  Mlp actor_;
  Mlp critic_;
  std::size_t log_std_ = 0;
};

struct ExpertPolicy {
  ExpertNetwork net;
  Vector params;
  std::string embodiment_id;

  Matrix act(const Matrix& obs) const { return net.action_mean(as_span(params), obs); }
  void save(const std::string& path) const;
  static ExpertPolicy load(const std::string& path);
};

// --- PPO update ---------------------------------------------------------------

struct PpoConfig {
  int num_envs = 64;
  int steps_per_env = 128;  // batch = num_envs * steps_per_env
  int minibatch = 2048;
  int epochs = 5;
  int iterations = 200;
  double learning_rate = 1e-3;
  bool adaptive_lr = true;
  double target_kl = 0.01;
  double min_lr = 1e-5;
  double max_lr = 1e-2;
  double clip = 0.2;
  double entropy_coef = 0.002;
  double value_coef = 1.0;
  double gamma = 0.99;
  double lambda = 0.95;
  double max_grad_norm = 1.0;
  bool normalize_advantages = true;
  std::vector<int> hidden = {512, 256, 128};
  double init_std = 1.0;
  int eval_interval = 10;  // iterations; the first iteration is always evaluated
  int eval_episodes = 4;
  int eval_steps = 250;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PpoBatch {
  Matrix obs;         // obs_dim x M
  Matrix critic_obs;  // critic_dim x M
  Matrix actions;     // J x M
  Matrix mean_old;    // J x M
  Vector log_std_old;  // J
  Vector log_prob_old;  // M
  Vector advantages;    // M
  Vector returns;       // M

  int size() const { return static_cast<int>(actions.cols()); }
};

struct PpoLossStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;  // mean KL(old || new) over the batch
  double clip_fraction = 0.0;
};

// Clipped surrogate + value_coef * MSE - entropy_coef * entropy. Writes the
// gradient (overwritten) and throws NonFiniteLoss on a non-finite loss.
PpoLossStats ppo_loss_and_grad(const ExpertNetwork& net, std::span<const double> params, const PpoBatch& b,
                               const PpoConfig& cfg, std::span<double> grad);

double gaussian_log_prob(const Vector& action, const Vector& mean, const Vector& log_std);

// Halve above 2x the target KL, double below half of it, clamp to
// [lo, hi]. A zero learning rate stays zero.
double adapt_learning_rate(double lr, double kl, double target, double lo, double hi);

struct UpdateStats {
  PpoLossStats last;
  double mean_kl = 0.0;
  double learning_rate = 0.0;
  int minibatches = 0;
};

// Epochs over shuffled minibatches of `data` with gradient clipping and the
// adaptive learning rate; `lr` is updated in place.
UpdateStats ppo_update(const ExpertNetwork& net, Vector& params, Adam& adam, const PpoBatch& data,
                       const PpoConfig& cfg, double& lr, Rng& rng);

// --- training -----------------------------------------------------------------

// Rewards are accumulated as the weighted term sum times the control period.
struct EvalStats {
  double mean_episode_reward = 0.0;
  double mean_tracking = 0.0;  // per-step T1 + T2 (raw terms)
  double mean_length = 0.0;
  double fall_rate = 0.0;
};

// Deterministic evaluation with mean actions at curriculum 0.
EvalStats evaluate_expert(const ExpertNetwork& net, std::span<const double> params, const SurrogateEnv& env,
                          int episodes, int steps, std::uint64_t seed);

struct IterationStats {
  int iteration = 0;
  double mean_reward = 0.0;        // per step, times the control period
  double mean_tracking = 0.0;      // per step, T1 + T2
  double mean_episode_reward = 0.0;  // completed episodes; NaN when none finished
  double kl = 0.0;
  double learning_rate = 0.0;
  double curriculum_mean = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  bool evaluated = false;
  EvalStats eval;
};

struct TrainResult {
  ExpertPolicy best;
  ExpertPolicy last;
  int best_iteration = 0;
  EvalStats first_eval;  // after iteration 1
  EvalStats best_eval;
  std::vector<IterationStats> curve;
};

using IterationCallback = std::function<void(const IterationStats&)>;

TrainResult train_expert(const Embodiment& e, const EnvConfig& env_cfg, const PpoConfig& cfg,
                         const IterationCallback& on_iteration = {});

// iteration,mean_reward,mean_tracking,mean_episode_reward,kl,lr,curriculum_mean,
// value_loss,entropy,eval_reward,eval_tracking
void write_training_csv(std::ostream& out, const std::vector<IterationStats>& curve);

}  // namespace embscale

#endif  // EMBSCALE_PPO_HPP_
