#include "hvfi/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace hvfi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("train config: " + key + " expects a boolean, got '" + v + "'");
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size()) {
    throw std::invalid_argument("train config: " + key + " expects an integer, got '" + v + "'");
  }
  return static_cast<Int>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size()) {
    throw std::invalid_argument("train config: " + key + " expects a number, got '" + v + "'");
  }
  return x;
}

// Per-epoch schedule root, kept apart from the model initialisation stream.
constexpr std::uint64_t kScheduleSalt = 0x5eed5c4edULL;

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(lr >= 0)) throw std::invalid_argument("train config: lr must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("train config: max_steps must be >= 0");
  if (checkpoint_every < 0) {
    throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  }
  const int divisor = 1 << (model.levels - 1);
  if (crop < divisor || crop % divisor != 0) {
    throw std::invalid_argument("train config: crop " + std::to_string(crop) +
                                " must be a positive multiple of " + std::to_string(divisor));
  }
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::string model_tokens;
  std::istringstream lines(text);
  std::string line;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("train config line " + std::to_string(number) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "lr") cfg.lr = parse_real(key, value);
    else if (key == "epochs") cfg.epochs = parse_int<int>(key, value);
    else if (key == "batch") cfg.batch = parse_int<int>(key, value);
    else if (key == "crop") cfg.crop = parse_int<int>(key, value);
    else if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(key, value);
    else if (key == "max_steps") cfg.max_steps = parse_int<std::int64_t>(key, value);
    else if (key == "augment") cfg.augment = parse_bool(key, value);
    else if (key == "flip") cfg.flip = parse_bool(key, value);
    else if (key == "reverse") cfg.reverse = parse_bool(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int<int>(key, value);
    else if (key == "residual_update") model_tokens += " residual_update=" + std::to_string(parse_bool(key, value));
    else model_tokens += " " + key + "=" + std::to_string(parse_int<int>(key, value));
  }
  cfg.model = ModelConfig::parse(model_tokens);
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot read train config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::str() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lr = " << lr << "\nepochs = " << epochs << "\nbatch = " << batch << "\ncrop = " << crop
     << "\nseed = " << seed << "\nweight_decay = " << weight_decay
     << "\nmax_steps = " << max_steps << "\naugment = " << augment << "\nflip = " << flip
     << "\nreverse = " << reverse << "\ncheckpoint_every = " << checkpoint_every << "\n";
  std::istringstream model_tokens(model.str());
  std::string token;
  while (model_tokens >> token) {
    const auto eq = token.find('=');
    os << token.substr(0, eq) << " = " << token.substr(eq + 1) << "\n";
  }
  return os.str();
}

NonFiniteLossError::NonFiniteLossError(std::int64_t step, double value)
    : std::runtime_error("non-finite loss " + std::to_string(value) + " at step " +
                         std::to_string(step)),
      step_(step) {}

double zero_gradient_fraction(const ParamStore<float>& params) {
  std::int64_t zeros = 0;
  std::int64_t total = 0;
  for (const auto& e : params.entries()) {
    total += e.value.numel();
    if (!e.value.has_grad()) {
      zeros += e.value.numel();
      continue;
    }
    for (float g : e.value.grad()) zeros += g == 0.0f ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

Trainer::Trainer(TrainConfig config, std::vector<FrameTriplet> data)
    : cfg_(std::move(config)),
      data_(std::move(data)),
      model_((cfg_.validate(), cfg_.model), cfg_.seed),
      opt_(model_.params(), AdamWOptions{0.9, 0.999, 1e-8, cfg_.weight_decay}) {
  if (data_.empty()) throw std::invalid_argument("trainer: empty dataset");
  for (const auto& t : data_) {
    t.validate();
    const Shape s = t.target.shape();
    if (s.h < cfg_.crop || s.w < cfg_.crop) {
      throw DimensionError("trainer: sample " + s.str() + " smaller than crop " +
                           std::to_string(cfg_.crop));
    }
  }
}

std::int64_t Trainer::steps_per_epoch() const {
  const auto n = static_cast<std::int64_t>(data_.size());
  return (n + cfg_.batch - 1) / cfg_.batch;
}

std::int64_t Trainer::total_steps() const {
  const std::int64_t scheduled = steps_per_epoch() * cfg_.epochs;
  return cfg_.max_steps > 0 ? std::min(scheduled, cfg_.max_steps) : scheduled;
}

Trainer::Batch Trainer::batch(std::int64_t step) const {
  const std::int64_t per_epoch = steps_per_epoch();
  const std::int64_t epoch = step / per_epoch;
  const std::int64_t slot = step % per_epoch;
  Rng rng = Rng(cfg_.seed ^ kScheduleSalt).fork(static_cast<std::uint64_t>(epoch));

  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  const auto begin = static_cast<std::size_t>(slot * cfg_.batch);
  const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch));
  std::vector<Tensor<float>> a, b, gt;
  for (std::size_t pos = begin; pos < end; ++pos) {
    const FrameTriplet& src = data_[order[pos]];
    FrameTriplet sample;
    if (cfg_.augment) {
      Rng local = rng.fork(pos + 1);
      sample = augment(src, AugmentOptions{cfg_.crop, cfg_.flip, cfg_.reverse}, local);
    } else {
      const Shape s = src.target.shape();
      sample = crop(src, static_cast<int>(s.h - cfg_.crop) / 2, static_cast<int>(s.w - cfg_.crop) / 2,
                    cfg_.crop, cfg_.crop);
    }
    a.push_back(sample.frame_a);
    b.push_back(sample.frame_b);
    gt.push_back(sample.target);
  }
  return Batch{stack_batch(a), stack_batch(b), stack_batch(gt)};
}

StepStats Trainer::step() {
  const std::int64_t index = steps();
  const Batch input = batch(index);
  StepStats stats;
  stats.step = index;
  stats.lr = cosine_lr(cfg_.lr, index, total_steps());

  model_.params().zero_grad();
  {
    Tape<float> tape;
    const auto states = model_.forward(input.frame_a, input.frame_b);
    std::vector<Tensor<float>> outputs;
    for (const auto& st : states) outputs.push_back(st.output);
    const LossBreakdown<float> loss = multiscale_loss(outputs, input.target);
    stats.total = static_cast<double>(loss.total.item());
    stats.l1 = loss.l1;
    stats.census = loss.census;
    if (!std::isfinite(stats.total)) throw NonFiniteLossError(index, stats.total);
    tape.backward(loss.total);
  }
  opt_.step(stats.lr);
  return stats;
}

EpochStats Trainer::epoch() {
  if (done()) throw std::logic_error("trainer: schedule already complete");
  const std::int64_t per_epoch = steps_per_epoch();
  EpochStats out;
  out.epoch = static_cast<int>(steps() / per_epoch) + 1;
  const std::int64_t stop = std::min(total_steps(), static_cast<std::int64_t>(out.epoch) * per_epoch);
  const auto levels = static_cast<std::size_t>(cfg_.model.levels);
  out.l1.assign(levels, 0.0);
  out.census.assign(levels, 0.0);
  std::int64_t count = 0;
  while (steps() < stop) {
    const StepStats s = step();
    out.total += s.total;
    for (std::size_t k = 0; k < levels; ++k) {
      out.l1[k] += s.l1[k];
      out.census[k] += s.census[k];
    }
    out.lr = s.lr;
    ++count;
  }
  const double scale = 1.0 / static_cast<double>(count);
  out.total *= scale;
  for (std::size_t k = 0; k < levels; ++k) {
    out.l1[k] *= scale;
    out.census[k] *= scale;
  }
  out.steps = steps();
  return out;
}

std::string Trainer::log_header(int levels) {
  std::string h = "epoch\tstep\tlr\ttotal";
  for (int s = 1; s <= levels; ++s) h += "\tl1_s" + std::to_string(s);
  for (int s = 1; s <= levels; ++s) h += "\tcensus_s" + std::to_string(s);
  return h;
}

std::string Trainer::log_row(const EpochStats& e) {
  std::ostringstream os;
  os << std::setprecision(9) << e.epoch << '\t' << e.steps << '\t' << e.lr << '\t' << e.total;
  for (double v : e.l1) os << '\t' << v;
  for (double v : e.census) os << '\t' << v;
  return os.str();
}

void Trainer::run(const RunOptions& options) {
  std::ofstream log;
  if (options.log) {
    const bool fresh = steps() == 0 || !std::filesystem::exists(*options.log);
    log.open(*options.log, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("trainer: cannot write log " + options.log->string());
    if (fresh) log << log_header(cfg_.model.levels) << '\n' << std::flush;
  }
  while (!done()) {
    const EpochStats stats = epoch();
    if (log.is_open()) log << log_row(stats) << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(stats);
    if (options.checkpoint && cfg_.checkpoint_every > 0 && stats.epoch % cfg_.checkpoint_every == 0) {
      save_checkpoint(*options.checkpoint, checkpoint());
    }
  }
  if (options.checkpoint) save_checkpoint(*options.checkpoint, checkpoint());
}

void Trainer::resume(const Checkpoint& ck) {
  if (!(ck.model == cfg_.model)) {
    throw CheckpointShapeError("trainer: checkpoint model config '" + ck.model.str() +
                               "' differs from the run's '" + cfg_.model.str() + "'");
  }
  if (!ck.has_optimizer) throw CheckpointError("trainer: checkpoint carries no optimizer state");
  restore_checkpoint(ck, model_, &opt_);
}

}  // namespace hvfi
