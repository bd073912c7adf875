#include "embscale/distill.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace embscale {

namespace {

constexpr char kSliceMagic[] = "EMBSSLCE";
constexpr std::uint32_t kSliceVersion = 1;
constexpr char kManifestHeader[] = "# embscale slice dataset v1";

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_f32(Matrix& m) { m = m.unaryExpr(&to_f32); }

void put_matrix(BinaryWriter& w, const Matrix& m) { w.f32_array({m.data(), static_cast<std::size_t>(m.size())}); }

void get_matrix(BinaryReader& r, Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  m.resize(rows, cols);
  r.f32_array({m.data(), static_cast<std::size_t>(m.size())});
}

std::string_view role_name(SplitRole r) { return r == SplitRole::kTrain ? "train" : "val"; }

SplitRole parse_role(std::string_view s) {
  if (s == "train") return SplitRole::kTrain;
  if (s == "val") return SplitRole::kValidation;
  throw ParseError("dataset manifest: unknown split '" + std::string(s) + "'");
}

}  // namespace

// --- slices -------------------------------------------------------------------

void TrajectorySlice::check() const {
  const Eigen::Index n = samples();
  const Eigen::Index J = joints();
  if (trajectories <= 0 || steps <= 0) throw ShapeMismatch("slice: empty");
  if (descriptors.cols() != kJointDescriptorDim || J == 0) throw ShapeMismatch("slice: descriptor shape");
  if (general.rows() != kGeneralObservationDim || general.cols() != n) throw ShapeMismatch("slice: general shape");
  if (joint_obs.rows() != kJointObservationDim || joint_obs.cols() != n * J) {
    throw ShapeMismatch("slice: joint observation shape");
  }
  if (actions.rows() != J || actions.cols() != n) throw ShapeMismatch("slice: action shape");
}

UrmaInput TrajectorySlice::input(const std::vector<int>& idx) const {
  const int J = joints();
  UrmaInput in;
  in.descriptors = descriptors;
  in.general.resize(kGeneralObservationDim, static_cast<Eigen::Index>(idx.size()));
  in.joint_obs.resize(kJointObservationDim, static_cast<Eigen::Index>(idx.size()) * J);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const int n = idx[b];
    if (n < 0 || n >= samples()) throw ShapeMismatch("slice: sample index out of range");
    in.general.col(static_cast<Eigen::Index>(b)) = general.col(n);
    in.joint_obs.middleCols(static_cast<Eigen::Index>(b) * J, J) = joint_obs.middleCols(static_cast<Eigen::Index>(n) * J, J);
  }
  return in;
}

Matrix TrajectorySlice::targets(const std::vector<int>& idx) const {
  Matrix t(joints(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) t.col(static_cast<Eigen::Index>(b)) = actions.col(idx[b]);
  return t;
}

void write_slice(std::ostream& out, const TrajectorySlice& s) {
  s.check();
  BinaryWriter w(out);
  w.bytes(std::string_view(kSliceMagic, 8));
  w.u32(kSliceVersion);
  w.str(s.embodiment_id);
  w.str(to_string(s.cls));
  w.u32(static_cast<std::uint32_t>(s.trajectories));
  w.u32(static_cast<std::uint32_t>(s.steps));
  w.u32(static_cast<std::uint32_t>(s.joints()));
  put_matrix(w, s.descriptors);
  put_matrix(w, s.general);
  put_matrix(w, s.joint_obs);
  put_matrix(w, s.actions);
}

TrajectorySlice read_slice(std::istream& in) {
  BinaryReader r(in);
  if (r.bytes(8) != std::string_view(kSliceMagic, 8)) throw ParseError("slice: bad magic");
  if (r.u32() != kSliceVersion) throw ParseError("slice: unsupported version");
  TrajectorySlice s;
  s.embodiment_id = r.str();
  s.cls = class_from_string(r.str());
  s.trajectories = static_cast<int>(r.u32());
  s.steps = static_cast<int>(r.u32());
  const Eigen::Index J = r.u32();
  const Eigen::Index n = static_cast<Eigen::Index>(s.trajectories) * s.steps;
  get_matrix(r, s.descriptors, J, kJointDescriptorDim);
  get_matrix(r, s.general, kGeneralObservationDim, n);
  get_matrix(r, s.joint_obs, kJointObservationDim, n * J);
  get_matrix(r, s.actions, J, n);
  s.check();
  return s;
}

void save_slice(const std::string& path, const TrajectorySlice& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_slice(out, s);
  if (!out) throw IoError("write failed: " + path);
}

TrajectorySlice load_slice_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_slice(in);
}

std::vector<SliceRef> SliceDataset::of_role(SplitRole role) const {
  std::vector<SliceRef> out;
  for (const auto& s : slices) {
    if (s.role == role) out.push_back(s);
  }
  return out;
}

std::map<std::string, long long> SliceDataset::sample_counts(SplitRole role) const {
  std::map<std::string, long long> out;
  for (const auto& s : slices) {
    if (s.role == role) out[s.embodiment_id] += s.samples;
  }
  return out;
}

std::shared_ptr<const TrajectorySlice> SliceDataset::load(const SliceRef& ref) const {
  if (ref.data) return ref.data;
  const auto path = (std::filesystem::path(directory) / ref.file).string();
  auto s = std::make_shared<TrajectorySlice>(load_slice_file(path));
  if (s->embodiment_id != ref.embodiment_id || s->samples() != ref.samples) {
    throw ParseError("slice " + path + " does not match its manifest entry");
  }
  return s;
}

void write_dataset_manifest(std::ostream& out, const SliceDataset& d) {
  out << kManifestHeader << "\n";
  for (const auto& s : d.slices) {
    if (s.file.empty()) throw IoError("dataset manifest: slice of " + s.embodiment_id + " has no file");
    out << "slice " << role_name(s.role) << " " << s.embodiment_id << " " << to_string(s.cls) << " " << s.samples
        << " " << s.file << "\n";
  }
}

SliceDataset read_dataset_manifest(std::istream& in, const std::string& directory) {
  SliceDataset d;
  d.directory = directory;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream ls(t);
    std::string kw, role, cls, file;
    SliceRef ref;
    if (!(ls >> kw >> role >> ref.embodiment_id >> cls >> ref.samples >> file) || kw != "slice" || ref.samples <= 0) {
      throw ParseError("dataset manifest line " + std::to_string(lineno) + ": expected 'slice <role> <id> <class> <samples> <file>'");
    }
    ref.role = parse_role(role);
    ref.cls = class_from_string(cls);
    ref.file = file;
    d.slices.push_back(std::move(ref));
  }
  return d;
}

void save_dataset_manifest(const SliceDataset& d) {
  const auto path = (std::filesystem::path(d.directory) / "dataset.txt").string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_dataset_manifest(out, d);
}

SliceDataset load_dataset_manifest(const std::string& directory) {
  const auto path = (std::filesystem::path(directory) / "dataset.txt").string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_dataset_manifest(in, directory);
}

SliceDataset select_slices(const SliceDataset& d, const std::vector<std::string>& ids, long long max_train_samples) {
  SliceDataset out;
  out.directory = d.directory;
  std::map<std::string, long long> taken;
  for (const auto& s : d.slices) {
    if (std::find(ids.begin(), ids.end(), s.embodiment_id) == ids.end()) continue;
    if (s.role == SplitRole::kTrain && max_train_samples > 0) {
      long long& t = taken[s.embodiment_id];
      if (t + s.samples > max_train_samples) continue;
      t += s.samples;
    }
    out.slices.push_back(s);
  }
  return out;
}

// --- collection ---------------------------------------------------------------

void CollectConfig::validate() const {
  if (steps <= 0 || validation_steps < 0 || envs <= 0 || slice_trajectories <= 0 || slice_steps <= 0) {
    throw InvalidCurriculum("collect: counts must be positive");
  }
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("collect: k outside [0, 1]");
}

std::vector<TrajectorySlice> collect_slices(const SurrogateEnv& env, const ExpertPolicy& expert, int steps,
                                            const CollectConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int N = cfg.envs;
  const int J = env.num_joints();
  if (expert.net.spec().joints != J || expert.net.spec().obs_dim != env.expert_obs_dim()) {
    throw MissingExpert("expert for " + expert.embodiment_id + " does not fit " + env.embodiment().id);
  }
  Rng root(seed);
  std::vector<Rng> rngs;
  std::vector<std::uint64_t> episode(static_cast<std::size_t>(N), 0);
  std::vector<EnvState> states;
  std::vector<Observation> obs;
  for (int i = 0; i < N; ++i) {
    rngs.push_back(root.fork(static_cast<std::uint64_t>(i)));
    states.push_back(env.reset(cfg.k, rngs.back().fork(0)));
    obs.push_back(env.observe(states.back()));
  }

  // Recorded time-major per environment: general[t][i], etc.
  Matrix general(kGeneralObservationDim, static_cast<Eigen::Index>(steps) * N);
  Matrix joint(kJointObservationDim, static_cast<Eigen::Index>(steps) * N * J);
  Matrix actions(J, static_cast<Eigen::Index>(steps) * N);
  Matrix om(env.expert_obs_dim(), N);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < N; ++i) om.col(i) = env.expert_observation(obs[static_cast<std::size_t>(i)]);
    const Matrix a = expert.act(om);
    for (int i = 0; i < N; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const Eigen::Index col = static_cast<Eigen::Index>(t) * N + i;
      general.col(col) = env.general_obs(obs[ii]);
      joint.middleCols(col * J, J) = env.joint_obs(obs[ii]);
      actions.col(col) = a.col(i);
      const StepResult r = env.step(states[ii], a.col(i));
      if (r.done) {
        states[ii] = env.reset(cfg.k, rngs[ii].fork(++episode[ii]));
        obs[ii] = env.observe(states[ii]);
      } else {
        obs[ii] = r.obs;
      }
    }
  }

  Matrix desc = env.descriptor().joints;
  round_f32(desc);
  std::vector<TrajectorySlice> out;
  for (int g0 = 0; g0 < N; g0 += cfg.slice_trajectories) {
    const int G = std::min(cfg.slice_trajectories, N - g0);
    for (int t0 = 0; t0 < steps; t0 += cfg.slice_steps) {
      const int T = std::min(cfg.slice_steps, steps - t0);
      TrajectorySlice s;
      s.embodiment_id = env.embodiment().id;
      s.cls = env.embodiment().cls;
      s.trajectories = G;
      s.steps = T;
      s.descriptors = desc;
      s.general.resize(kGeneralObservationDim, G * T);
      s.joint_obs.resize(kJointObservationDim, static_cast<Eigen::Index>(G) * T * J);
      s.actions.resize(J, G * T);
      for (int t = 0; t < T; ++t) {
        for (int i = 0; i < G; ++i) {
          const Eigen::Index src = static_cast<Eigen::Index>(t0 + t) * N + g0 + i;
          const Eigen::Index dst = static_cast<Eigen::Index>(t) * G + i;
          s.general.col(dst) = general.col(src);
          s.joint_obs.middleCols(dst * J, J) = joint.middleCols(src * J, J);
          s.actions.col(dst) = actions.col(src);
        }
      }
      round_f32(s.general);
      round_f32(s.joint_obs);
      round_f32(s.actions);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SliceRef> collect_embodiment(const Embodiment& e, const ExpertPolicy& expert, const EnvConfig& env_cfg,
                                         const CollectConfig& cfg, const std::string& directory, int steps) {
  const SurrogateEnv env(e, env_cfg);
  const std::uint64_t base = splitmix64(cfg.seed ^ fnv1a(e.id));
  std::vector<SliceRef> out;
  for (SplitRole role : {SplitRole::kTrain, SplitRole::kValidation}) {
    const int n = role == SplitRole::kTrain ? (steps > 0 ? steps : cfg.steps) : cfg.validation_steps;
    if (n == 0) continue;
    const auto slices = collect_slices(env, expert, n, cfg, splitmix64(base + (role == SplitRole::kTrain ? 1 : 2)));
    for (std::size_t k = 0; k < slices.size(); ++k) {
      SliceRef ref;
      ref.embodiment_id = e.id;
      ref.cls = e.cls;
      ref.role = role;
      ref.samples = slices[k].samples();
      ref.file = e.id + "_" + std::string(role_name(role)) + "_" + std::to_string(k) + ".slice";
      save_slice((std::filesystem::path(directory) / ref.file).string(), slices[k]);
      out.push_back(std::move(ref));
    }
  }
  return out;
}

SliceDataset collect_demonstrations(const std::vector<Embodiment>& embodiments,
                                    const std::map<std::string, ExpertPolicy>& experts, const EnvConfig& env_cfg,
                                    const CollectConfig& cfg, const std::string& directory) {
  cfg.validate();
  for (const auto& e : embodiments) {
    if (!experts.count(e.id)) throw MissingExpert("no expert for embodiment " + e.id);
  }
  std::filesystem::create_directories(directory);
  SliceDataset d;
  d.directory = directory;
  for (const auto& e : embodiments) {
    for (auto& ref : collect_embodiment(e, experts.at(e.id), env_cfg, cfg, directory)) d.slices.push_back(std::move(ref));
  }
  save_dataset_manifest(d);
  return d;
}

// --- buffer -------------------------------------------------------------------

void BufferConfig::validate() const {
  if (max_resident <= 0 || repeat <= 0 || batch <= 0) throw InvalidCurriculum("buffer: counts must be positive");
}

SliceBuffer::SliceBuffer(std::vector<SliceRef> slices, Loader loader, BufferConfig cfg, std::uint64_t seed)
    : slices_(std::move(slices)), loader_(std::move(loader)), cfg_(cfg), rng_(seed) {
  cfg_.validate();
  // Round robin over embodiments in order of first appearance.
  std::vector<std::string> ids;
  std::map<std::string, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    auto& v = by_id[slices_[i].embodiment_id];
    if (v.empty()) ids.push_back(slices_[i].embodiment_id);
    v.push_back(i);
  }
  for (std::size_t round = 0; order_.size() < slices_.size(); ++round) {
    for (const auto& id : ids) {
      const auto& v = by_id[id];
      if (round < v.size()) order_.push_back(v[round]);
    }
  }
  reset();
}

void SliceBuffer::reset() {
  resident_.clear();
  next_ = 0;
  admit();
}

void SliceBuffer::start_pass(Resident& r) {
  r.order.resize(static_cast<std::size_t>(r.slice->samples()));
  std::iota(r.order.begin(), r.order.end(), 0);
  shuffle(r.order, rng_);
  r.cursor = 0;
  --r.passes_left;
}

void SliceBuffer::admit() {
  while (resident_.size() < static_cast<std::size_t>(cfg_.max_resident) && next_ < order_.size()) {
    Resident r;
    r.index = order_[next_++];
    r.slice = loader_(slices_[r.index]);
    r.slice->check();
    r.passes_left = cfg_.repeat;
    r.remaining = static_cast<long long>(cfg_.repeat) * r.slice->samples();
    start_pass(r);
    resident_.push_back(std::move(r));
  }
}

std::optional<Minibatch> SliceBuffer::try_next() {
  if (resident_.empty()) return std::nullopt;
  long long total = 0;
  for (const auto& r : resident_) total += r.remaining;
  auto pick = static_cast<long long>(rng_.below(static_cast<std::uint64_t>(total)));
  std::size_t k = 0;
  while (pick >= resident_[k].remaining) pick -= resident_[k++].remaining;

  Resident& r = resident_[k];
  if (r.cursor == r.order.size()) start_pass(r);
  const std::size_t n = std::min(static_cast<std::size_t>(cfg_.batch), r.order.size() - r.cursor);
  Minibatch mb;
  mb.slice = r.slice;
  mb.slice_index = r.index;
  mb.samples.assign(r.order.begin() + static_cast<std::ptrdiff_t>(r.cursor),
                    r.order.begin() + static_cast<std::ptrdiff_t>(r.cursor + n));
  r.cursor += n;
  r.remaining -= static_cast<long long>(n);
  if (r.remaining == 0) {
    resident_.erase(resident_.begin() + static_cast<std::ptrdiff_t>(k));
    admit();
  }
  return mb;
}

Minibatch SliceBuffer::next() {
  auto mb = try_next();
  if (!mb) throw BufferExhausted("slice buffer drained");
  return std::move(*mb);
}

long long SliceBuffer::batches_per_epoch() const {
  long long n = 0;
  for (const auto& s : slices_) n += static_cast<long long>(cfg_.repeat) * ((s.samples + cfg_.batch - 1) / cfg_.batch);
  return n;
}

// --- behavior cloning ---------------------------------------------------------

void DistillConfig::validate() const {
  if (batch <= 0 || accumulation <= 0 || epochs < 1 || max_resident <= 0 || repeat <= 0 || validation_batch <= 0) {
    throw InvalidCurriculum("distill: counts must be positive");
  }
  if (!(grad_clip > 0.0) || learning_rate < 0.0 || weight_decay < 0.0 || !(beta1 >= 0.0 && beta1 < 1.0) ||
      !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidCurriculum("distill: invalid optimizer settings");
  }
}

double accumulate_gradient(const UrmaNetwork& net, std::span<const double> params,
                           const std::vector<Minibatch>& batches, std::span<double> grad,
                           std::vector<double>* losses) {
  if (batches.empty()) throw ShapeMismatch("distill: no minibatches to accumulate");
  std::fill(grad.begin(), grad.end(), 0.0);
  Vector g(static_cast<Eigen::Index>(grad.size()));
  Eigen::Map<Vector> acc(grad.data(), static_cast<Eigen::Index>(grad.size()));
  double loss = 0.0;
  if (losses) losses->clear();
  for (const auto& mb : batches) {
    const double l = net.loss_and_grad(params, mb.input(), mb.targets(), as_span(g));
    if (losses) losses->push_back(l);
    loss += l;
    acc += g;
  }
  const double inv = 1.0 / static_cast<double>(batches.size());
  acc *= inv;
  return loss * inv;
}

double cosine_schedule(double start, long long step, long long total) {
  if (total <= 0) return start;
  const double x = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * x)) * start;
}

double validation_loss(const UrmaNetwork& net, std::span<const double> params, const SliceDataset& d, int chunk) {
  double sum = 0.0;
  long long count = 0;
  for (const auto& ref : d.of_role(SplitRole::kValidation)) {
    const auto s = d.load(ref);
    const int n = s->samples();
    for (int b0 = 0; b0 < n; b0 += chunk) {
      std::vector<int> idx(static_cast<std::size_t>(std::min(chunk, n - b0)));
      std::iota(idx.begin(), idx.end(), b0);
      sum += net.bc_loss(params, s->input(idx), s->targets(idx)) * static_cast<double>(idx.size());
      count += static_cast<long long>(idx.size());
    }
  }
  if (count == 0) throw ShapeMismatch("distill: dataset has no validation slices");
  return sum / static_cast<double>(count);
}

DistillResult train_bc(const SliceDataset& d, const DistillConfig& cfg, const UrmaNetwork& net, std::uint64_t seed,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train = d.of_role(SplitRole::kTrain);
  if (train.empty()) throw ShapeMismatch("distill: dataset has no training slices");

  Rng root(seed);
  Vector params = net.init_params(root.fork(1).next_u64());
  SliceBuffer buffer(train, [&d](const SliceRef& r) { return d.load(r); },
                     BufferConfig{cfg.max_resident, cfg.repeat, cfg.batch}, root.fork(2).next_u64());
  const long long per_epoch = (buffer.batches_per_epoch() + cfg.accumulation - 1) / cfg.accumulation;
  const long long total_steps = per_epoch * cfg.epochs;

  Adam adam(net.num_params(), cfg.beta1, cfg.beta2);
  Vector grad(params.size());
  DistillResult res;
  res.initial_validation = validation_loss(net, as_span(params), d, cfg.validation_batch);
  res.best_validation = res.initial_validation;
  res.params = params;
  long long step = 0;
  try {
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      if (epoch > 1) buffer.reset();
      EpochStats st;
      st.epoch = epoch;
      double loss_sum = 0.0;
      long long loss_count = 0;
      std::vector<Minibatch> group;
      std::vector<double> losses;
      bool drained = false;
      while (!drained) {
        group.clear();
        while (static_cast<int>(group.size()) < cfg.accumulation) {
          auto mb = buffer.try_next();
          if (!mb) {
            drained = true;
            break;
          }
          group.push_back(std::move(*mb));
        }
        if (group.empty()) break;
        accumulate_gradient(net, as_span(params), group, as_span(grad), &losses);
        for (std::size_t b = 0; b < group.size(); ++b) {
          const auto m = static_cast<long long>(group[b].samples.size());
          loss_sum += losses[b] * static_cast<double>(m);
          loss_count += m;
        }
        const double lr = cosine_schedule(cfg.learning_rate, step, total_steps);
        const double wd = cosine_schedule(cfg.weight_decay, step, total_steps);
        clip_grad_norm(as_span(grad), cfg.grad_clip);
        adam.step(as_span(params), as_span(grad), lr, wd);
        ++step;
        st.learning_rate = lr;
        st.weight_decay = wd;
      }
      st.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
      st.steps = step;
      st.validation_loss = validation_loss(net, as_span(params), d, cfg.validation_batch);
      if (!std::isfinite(st.validation_loss)) throw NonFiniteLoss("distill: non-finite validation loss");
      res.curve.push_back(st);
      if (st.validation_loss < res.best_validation) {
        res.best_validation = st.validation_loss;
        res.best_epoch = epoch;
        res.params = params;
      }
      if (on_epoch) on_epoch(st);
    }
  } catch (const NonFiniteLoss& e) {
    res.aborted = true;
    res.abort_reason = e.what();
  }
  res.last_params = res.aborted ? res.params : params;
  return res;
}

void write_distill_csv(std::ostream& out, const std::vector<EpochStats>& curve) {
  out << "epoch,train_loss,validation_loss,lr,weight_decay,steps\n";
  for (const auto& s : curve) {
    out << s.epoch << "," << format_double(s.train_loss) << "," << format_double(s.validation_loss) << ","
        << format_double(s.learning_rate) << "," << format_double(s.weight_decay) << "," << s.steps << "\n";
  }
}

}  // namespace embscale
