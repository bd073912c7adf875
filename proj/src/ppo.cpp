#include "embscale/ppo.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace embscale {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

PpoBatch take_columns(const PpoBatch& b, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  const auto m = static_cast<Eigen::Index>(end - begin);
  PpoBatch out;
  out.obs.resize(b.obs.rows(), m);
  out.critic_obs.resize(b.critic_obs.rows(), m);
  out.actions.resize(b.actions.rows(), m);
  out.mean_old.resize(b.mean_old.rows(), m);
  out.log_prob_old.resize(m);
  out.advantages.resize(m);
  out.returns.resize(m);
  out.log_std_old = b.log_std_old;
  for (Eigen::Index c = 0; c < m; ++c) {
    const int s = idx[begin + static_cast<std::size_t>(c)];
    out.obs.col(c) = b.obs.col(s);
    out.critic_obs.col(c) = b.critic_obs.col(s);
    out.actions.col(c) = b.actions.col(s);
    out.mean_old.col(c) = b.mean_old.col(s);
    out.log_prob_old[c] = b.log_prob_old[s];
    out.advantages[c] = b.advantages[s];
    out.returns[c] = b.returns[s];
  }
  return out;
}

}  // namespace

GaeResult gae(const Vector& rewards, const Vector& values, const std::vector<bool>& dones, double last_value,
              double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw ShapeMismatch("gae: rewards, values and dones differ in length");
  }
  GaeResult r;
  r.advantages.resize(n);
  double next_adv = 0.0;
  double next_value = last_value;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[t] = next_adv;
    next_value = values[t];
  }
  r.returns = r.advantages + values;
  return r;
}

// --- policy -------------------------------------------------------------------

std::string ExpertSpec::to_text() const {
  std::ostringstream o;
  o << "obs_dim=" << obs_dim << " critic_dim=" << critic_dim << " joints=" << joints
    << " hidden=" << join_ints(hidden) << " init_std=" << format_double(init_std);
  return o.str();
}

ExpertSpec ExpertSpec::from_text(const std::string& text) {
  ExpertSpec s;
  std::istringstream in(text);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError("bad expert config field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "obs_dim") s.obs_dim = std::stoi(value);
    else if (key == "critic_dim") s.critic_dim = std::stoi(value);
    else if (key == "joints") s.joints = std::stoi(value);
    else if (key == "hidden") s.hidden = parse_ints(value);
    else if (key == "init_std") s.init_std = parse_double(value);
    else throw ParseError("unknown expert config key '" + key + "'");
  }
  return s;
}

ExpertNetwork::ExpertNetwork(ExpertSpec spec) : spec_(std::move(spec)) {
  if (spec_.obs_dim <= 0 || spec_.critic_dim <= 0 || spec_.joints <= 0 || !(spec_.init_std > 0.0)) {
    throw ShapeMismatch("expert spec: dimensions and initial std must be positive");
  }
  std::vector<int> aw{spec_.obs_dim};
  aw.insert(aw.end(), spec_.hidden.begin(), spec_.hidden.end());
  aw.push_back(spec_.joints);
  std::vector<int> cw{spec_.critic_dim};
  cw.insert(cw.end(), spec_.hidden.begin(), spec_.hidden.end());
  cw.push_back(1);
  actor_ = Mlp(layout_, "actor", aw);
  critic_ = Mlp(layout_, "critic", cw);
  log_std_ = layout_.add("log_std", spec_.joints, 1);
}

Vector ExpertNetwork::init_params(std::uint64_t seed) const {
  Vector p = Vector::Zero(static_cast<Eigen::Index>(num_params()));
  Rng rng(seed);
  Rng ra = rng.fork(1);
  Rng rc = rng.fork(2);
  // Small last actor layer: the initial policy acts around the nominal pose.
  actor_.init(as_span(p), ra, 0.01);
  critic_.init(as_span(p), rc, 1.0);
  p.segment(static_cast<Eigen::Index>(log_std_), spec_.joints).setConstant(std::log(spec_.init_std));
  return p;
}

Matrix ExpertNetwork::action_mean(std::span<const double> params, const Matrix& obs) const {
  if (obs.rows() != spec_.obs_dim) throw ShapeMismatch("expert: observation width mismatch");
  return actor_.forward(params, obs).cwiseMax(-kActionMeanClip).cwiseMin(kActionMeanClip);
}

Vector ExpertNetwork::value(std::span<const double> params, const Matrix& critic_obs) const {
  if (critic_obs.rows() != spec_.critic_dim) throw ShapeMismatch("expert: critic observation width mismatch");
  return critic_.forward(params, critic_obs).row(0).transpose();
}

Vector ExpertNetwork::log_std(std::span<const double> params) const {
  return Eigen::Map<const Vector>(params.data() + log_std_, spec_.joints);
}

void ExpertPolicy::save(const std::string& path) const {
  save_checkpoint(path, "expert", net.spec().to_text() + " embodiment=" + embodiment_id, net.layout(),
                  as_span(params));
}

ExpertPolicy ExpertPolicy::load(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "expert") throw IoError(path + ": checkpoint kind '" + ck.kind + "' is not expert");
  std::string config = ck.config;
  std::string id;
  if (const auto pos = config.find(" embodiment="); pos != std::string::npos) {
    id = config.substr(pos + 12);
    config.erase(pos);
  }
  ExpertPolicy p{ExpertNetwork(ExpertSpec::from_text(config)), Vector(), id};
  p.params = Vector::Zero(static_cast<Eigen::Index>(p.net.num_params()));
  assign_checkpoint(ck, p.net.layout(), as_span(p.params));
  return p;
}

// --- PPO ----------------------------------------------------------------------

void PpoConfig::validate() const {
  if (num_envs < 1 || steps_per_env < 1 || minibatch < 1 || epochs < 1 || iterations < 0) {
    throw Error("ppo config: counts must be positive");
  }
  if (learning_rate < 0.0 || clip <= 0.0 || gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) {
    throw Error("ppo config: invalid learning rate, clip range, gamma or lambda");
  }
  if (eval_episodes < 1 || eval_steps < 1 || eval_interval < 1) throw Error("ppo config: invalid evaluation settings");
}

double gaussian_log_prob(const Vector& action, const Vector& mean, const Vector& log_std) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double z = (action[j] - mean[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - 0.5 * kLog2Pi;
  }
  return lp;
}

double adapt_learning_rate(double lr, double kl, double target, double lo, double hi) {
  if (lr == 0.0) return 0.0;
  if (kl > 2.0 * target) lr *= 0.5;
  else if (kl < 0.5 * target) lr *= 2.0;
  return std::clamp(lr, lo, hi);
}

PpoLossStats ppo_loss_and_grad(const ExpertNetwork& net, std::span<const double> params, const PpoBatch& b,
                               const PpoConfig& cfg, std::span<double> grad) {
  const int M = b.size();
  const int J = net.spec().joints;
  if (M == 0) throw ShapeMismatch("ppo: empty batch");
  if (b.actions.rows() != J || b.mean_old.rows() != J || b.mean_old.cols() != M || b.obs.cols() != M ||
      b.critic_obs.cols() != M || b.log_prob_old.size() != M || b.advantages.size() != M ||
      b.returns.size() != M || b.log_std_old.size() != J) {
    throw ShapeMismatch("ppo: batch arrays are inconsistent");
  }
  if (grad.size() != net.num_params()) throw ShapeMismatch("ppo: gradient length mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);

  Mlp::Cache ca, cc;
  const Matrix raw = net.actor().forward(params, b.obs, &ca);
  const Matrix mean = raw.cwiseMax(-kActionMeanClip).cwiseMin(kActionMeanClip);
  const Matrix vout = net.critic().forward(params, b.critic_obs, &cc);
  const Vector ls = net.log_std(params);
  const Vector inv_var = (-2.0 * ls).array().exp();
  const Vector var_old = (2.0 * b.log_std_old).array().exp();

  PpoLossStats st;
  Matrix dmean = Matrix::Zero(J, M);
  Vector dls = Vector::Zero(J);
  double clipped = 0.0;
  const double inv_m = 1.0 / M;
  for (int s = 0; s < M; ++s) {
    double logp = 0.0, kl = 0.0;
    for (int j = 0; j < J; ++j) {
      const double d = b.actions(j, s) - mean(j, s);
      logp += -0.5 * d * d * inv_var[j] - ls[j] - 0.5 * kLog2Pi;
      const double dm = b.mean_old(j, s) - mean(j, s);
      kl += ls[j] - b.log_std_old[j] + (var_old[j] + dm * dm) * 0.5 * inv_var[j] - 0.5;
    }
    st.kl += kl * inv_m;
    const double ratio = std::exp(logp - b.log_prob_old[s]);
    const double a = b.advantages[s];
    const double s1 = ratio * a;
    const double s2 = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
    st.policy_loss -= std::min(s1, s2) * inv_m;
    if (std::abs(ratio - 1.0) > cfg.clip) clipped += 1.0;
    // d(-min(s1, s2))/d ratio is -A on the unclipped branch, 0 on the clipped one.
    const double dratio = s1 <= s2 ? -a : 0.0;
    const double dlogp = dratio * ratio * inv_m;
    if (dlogp == 0.0) continue;
    for (int j = 0; j < J; ++j) {
      const double d = b.actions(j, s) - mean(j, s);
      dmean(j, s) = dlogp * d * inv_var[j];
      dls[j] += dlogp * (d * d * inv_var[j] - 1.0);
    }
  }
  st.clip_fraction = clipped * inv_m;
  for (int s = 0; s < M; ++s) {
    for (int j = 0; j < J; ++j) {
      if (raw(j, s) < -kActionMeanClip || raw(j, s) > kActionMeanClip) dmean(j, s) = 0.0;
    }
  }

  Matrix dv(1, M);
  for (int s = 0; s < M; ++s) {
    const double e = vout(0, s) - b.returns[s];
    st.value_loss += e * e * inv_m;
    dv(0, s) = cfg.value_coef * 2.0 * e * inv_m;
  }
  st.entropy = ls.sum() + 0.5 * J * (kLog2Pi + 1.0);
  dls.array() -= cfg.entropy_coef;
  st.loss = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
  if (!std::isfinite(st.loss)) throw NonFiniteLoss("ppo: non-finite loss");

  net.actor().backward(params, ca, dmean, grad);
  net.critic().backward(params, cc, dv, grad);
  for (int j = 0; j < J; ++j) grad[net.log_std_offset() + static_cast<std::size_t>(j)] += dls[j];
  return st;
}

UpdateStats ppo_update(const ExpertNetwork& net, Vector& params, Adam& adam, const PpoBatch& data,
                       const PpoConfig& cfg, double& lr, Rng& rng) {
  const int n = data.size();
  const int mb = std::min(cfg.minibatch, n);
  const int count = n / mb;
  std::vector<int> idx(static_cast<std::size_t>(n));
  Vector grad(params.size());
  UpdateStats st;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    for (int k = 0; k < count; ++k) {
      const PpoBatch b = take_columns(data, idx, static_cast<std::size_t>(k * mb), static_cast<std::size_t>((k + 1) * mb));
      st.last = ppo_loss_and_grad(net, as_span(params), b, cfg, as_span(grad));
      if (cfg.adaptive_lr) lr = adapt_learning_rate(lr, st.last.kl, cfg.target_kl, cfg.min_lr, cfg.max_lr);
      clip_grad_norm(as_span(grad), cfg.max_grad_norm);
      adam.step(as_span(params), as_span(grad), lr);
      st.mean_kl += st.last.kl;
      ++st.minibatches;
    }
  }
  if (st.minibatches > 0) st.mean_kl /= st.minibatches;
  st.learning_rate = lr;
  return st;
}

// --- training -----------------------------------------------------------------

EvalStats evaluate_expert(const ExpertNetwork& net, std::span<const double> params, const SurrogateEnv& env,
                          int episodes, int steps, std::uint64_t seed) {
  if (episodes < 1 || steps < 1) throw Error("evaluate_expert: episodes and steps must be positive");
  EvalStats out;
  Rng root(seed);
  std::vector<EnvState> states;
  std::vector<Observation> obs;
  for (int ep = 0; ep < episodes; ++ep) {
    states.push_back(env.reset(0.0, root.fork(static_cast<std::uint64_t>(ep))));
    obs.push_back(env.observe(states.back()));
  }
  std::vector<bool> active(static_cast<std::size_t>(episodes), true);
  std::vector<double> ep_reward(static_cast<std::size_t>(episodes), 0.0);
  std::vector<int> ep_len(static_cast<std::size_t>(episodes), 0);
  double tracking = 0.0;
  long tracked_steps = 0;
  int falls = 0;
  Matrix m(env.expert_obs_dim(), episodes);
  for (int t = 0; t < steps; ++t) {
    for (int ep = 0; ep < episodes; ++ep) m.col(ep) = env.expert_observation(obs[static_cast<std::size_t>(ep)]);
    const Matrix act = net.action_mean(params, m);
    bool any = false;
    for (int ep = 0; ep < episodes; ++ep) {
      const auto e = static_cast<std::size_t>(ep);
      if (!active[e]) continue;
      const StepResult r = env.step(states[e], act.col(ep));
      ep_reward[e] += r.reward.total * env.config().control_dt;
      ++ep_len[e];
      tracking += r.reward.terms[0] + r.reward.terms[1];
      ++tracked_steps;
      obs[e] = r.obs;
      if (r.done) {
        active[e] = false;
        falls += r.fell ? 1 : 0;
      }
      any = true;
    }
    if (!any) break;
  }
  for (int ep = 0; ep < episodes; ++ep) {
    out.mean_episode_reward += ep_reward[static_cast<std::size_t>(ep)] / episodes;
    out.mean_length += static_cast<double>(ep_len[static_cast<std::size_t>(ep)]) / episodes;
  }
  out.mean_tracking = tracked_steps > 0 ? tracking / static_cast<double>(tracked_steps) : 0.0;
  out.fall_rate = static_cast<double>(falls) / episodes;
  return out;
}

TrainResult train_expert(const Embodiment& e, const EnvConfig& env_cfg, const PpoConfig& cfg,
                         const IterationCallback& on_iteration) {
  cfg.validate();
  const SurrogateEnv env(e, env_cfg);
  ExpertSpec spec;
  spec.obs_dim = env.expert_obs_dim();
  spec.critic_dim = env.critic_obs_dim();
  spec.joints = env.num_joints();
  spec.hidden = cfg.hidden;
  spec.init_std = cfg.init_std;
  const ExpertNetwork net(spec);
  Vector params = net.init_params(cfg.seed);
  Adam adam(net.num_params());
  double lr = cfg.learning_rate;

  Rng root(cfg.seed);
  Rng action_rng = root.fork(1);
  Rng update_rng = root.fork(2);
  const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0x65766131ULL);

  const int N = cfg.num_envs;
  const int T = cfg.steps_per_env;
  const int J = spec.joints;
  std::vector<EnvState> states;
  std::vector<Observation> obs;
  std::vector<CurriculumState> curriculum(static_cast<std::size_t>(N));
  std::vector<Rng> env_rng;
  std::vector<std::uint64_t> episode(static_cast<std::size_t>(N), 0);
  std::vector<double> running_reward(static_cast<std::size_t>(N), 0.0);
  for (int i = 0; i < N; ++i) {
    env_rng.push_back(root.fork(100 + static_cast<std::uint64_t>(i)));
    states.push_back(env.reset(0.0, env_rng.back().fork(0)));
    obs.push_back(env.observe(states.back()));
  }

  TrainResult result{ExpertPolicy{net, params, e.id}, ExpertPolicy{net, params, e.id}, 0, {}, {}, {}};
  double best_reward = -std::numeric_limits<double>::infinity();

  const int B = N * T;
  PpoBatch data;
  data.obs.resize(spec.obs_dim, B);
  data.critic_obs.resize(spec.critic_dim, B);
  data.actions.resize(J, B);
  data.mean_old.resize(J, B);
  data.log_prob_old.resize(B);
  Vector rewards(B), values(B);
  std::vector<bool> dones(static_cast<std::size_t>(B));
  Matrix om(spec.obs_dim, N), cm(spec.critic_dim, N);

  for (int it = 1; it <= cfg.iterations; ++it) {
    IterationStats st;
    st.iteration = it;
    const Vector ls = net.log_std(as_span(params));
    const Vector sigma = ls.array().exp();
    double reward_sum = 0.0, tracking_sum = 0.0, finished_reward = 0.0;
    int finished = 0;
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < N; ++i) {
        om.col(i) = env.expert_observation(obs[static_cast<std::size_t>(i)]);
        cm.col(i) = env.critic_observation(obs[static_cast<std::size_t>(i)]);
      }
      const Matrix mean = net.action_mean(as_span(params), om);
      const Vector v = net.value(as_span(params), cm);
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const int col = t * N + i;
        Vector a(J);
        for (int j = 0; j < J; ++j) a[j] = mean(j, i) + sigma[j] * action_rng.normal();
        data.obs.col(col) = om.col(i);
        data.critic_obs.col(col) = cm.col(i);
        data.actions.col(col) = a;
        data.mean_old.col(col) = mean.col(i);
        data.log_prob_old[col] = gaussian_log_prob(a, mean.col(i), ls);
        values[col] = v[i];
        const StepResult r = env.step(states[ii], a);
        double reward = r.reward.total * env_cfg.control_dt;
        reward_sum += reward;
        tracking_sum += r.reward.terms[0] + r.reward.terms[1];
        running_reward[ii] += reward;
        if (r.done) {
          if (r.truncated) {
            Matrix c1(spec.critic_dim, 1);
            c1.col(0) = env.critic_observation(r.obs);
            reward += cfg.gamma * net.value(as_span(params), c1)[0];
          }
          curriculum[ii].update(r.fell, states[ii].mean_tracking_error());
          finished_reward += running_reward[ii];
          ++finished;
          running_reward[ii] = 0.0;
          states[ii] = env.reset(curriculum[ii].k(), env_rng[ii].fork(++episode[ii]));
          obs[ii] = env.observe(states[ii]);
        } else {
          obs[ii] = r.obs;
        }
        rewards[col] = reward;
        dones[static_cast<std::size_t>(col)] = r.done;
      }
    }
    for (int i = 0; i < N; ++i) cm.col(i) = env.critic_observation(obs[static_cast<std::size_t>(i)]);
    const Vector last_v = net.value(as_span(params), cm);

    data.advantages.resize(B);
    data.returns.resize(B);
    for (int i = 0; i < N; ++i) {
      Vector r(T), v(T);
      std::vector<bool> d(static_cast<std::size_t>(T));
      for (int t = 0; t < T; ++t) {
        r[t] = rewards[t * N + i];
        v[t] = values[t * N + i];
        d[static_cast<std::size_t>(t)] = dones[static_cast<std::size_t>(t * N + i)];
      }
      const GaeResult g = gae(r, v, d, last_v[i], cfg.gamma, cfg.lambda);
      for (int t = 0; t < T; ++t) {
        data.advantages[t * N + i] = g.advantages[t];
        data.returns[t * N + i] = g.returns[t];
      }
    }
    if (cfg.normalize_advantages && B > 1) {
      const double mu = data.advantages.mean();
      const double sd = std::sqrt((data.advantages.array() - mu).square().sum() / (B - 1));
      data.advantages = (data.advantages.array() - mu) / (sd + 1e-8);
    }
    data.log_std_old = ls;

    const UpdateStats us = ppo_update(net, params, adam, data, cfg, lr, update_rng);

    st.mean_reward = reward_sum / B;
    st.mean_tracking = tracking_sum / B;
    st.mean_episode_reward = finished > 0 ? finished_reward / finished : std::numeric_limits<double>::quiet_NaN();
    st.kl = us.mean_kl;
    st.learning_rate = lr;
    for (const auto& c : curriculum) st.curriculum_mean += c.k() / N;
    st.value_loss = us.last.value_loss;
    st.entropy = us.last.entropy;
    if (it == 1 || it % cfg.eval_interval == 0 || it == cfg.iterations) {
      st.evaluated = true;
      st.eval = evaluate_expert(net, as_span(params), env, cfg.eval_episodes, cfg.eval_steps, eval_seed);
      if (it == 1) result.first_eval = st.eval;
      if (st.eval.mean_episode_reward > best_reward) {
        best_reward = st.eval.mean_episode_reward;
        result.best.params = params;
        result.best_iteration = it;
        result.best_eval = st.eval;
      }
    }
    result.curve.push_back(st);
    if (on_iteration) on_iteration(st);
  }
  result.last.params = params;
  return result;
}

void write_training_csv(std::ostream& out, const std::vector<IterationStats>& curve) {
  out << "iteration,mean_reward,mean_tracking,mean_episode_reward,kl,lr,curriculum_mean,value_loss,entropy,"
         "eval_reward,eval_tracking\n";
  for (const auto& s : curve) {
    out << s.iteration << "," << format_double(s.mean_reward) << "," << format_double(s.mean_tracking) << ","
        << (std::isnan(s.mean_episode_reward) ? std::string() : format_double(s.mean_episode_reward)) << ","
        << format_double(s.kl) << "," << format_double(s.learning_rate) << "," << format_double(s.curriculum_mean)
        << "," << format_double(s.value_loss) << "," << format_double(s.entropy) << ",";
    if (s.evaluated) out << format_double(s.eval.mean_episode_reward) << "," << format_double(s.eval.mean_tracking);
    else out << ",";
    out << "\n";
  }
}

}  // namespace embscale
