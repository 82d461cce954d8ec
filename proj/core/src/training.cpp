#include "phantom/dynamics/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "phantom/nanoformer/forward.hpp"
#include "phantom/ndtensor/ops.hpp"

namespace phantom::dynamics {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("TrainConfig: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw std::invalid_argument("TrainConfig: adam_eps must be > 0");
}

std::uint64_t TrainConfig::epoch_seed(int epoch) const {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::uint32_t out[2];
  s.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
                     {"beta1", c.beta1},                 {"beta2", c.beta2},           {"adam_eps", c.adam_eps},
                     {"seed", c.seed},                   {"eval_dom", c.eval_dom},     {"eval_sub", c.eval_sub}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
  c.eval_dom = j.value("eval_dom", d.eval_dom);
  c.eval_sub = j.value("eval_sub", d.eval_sub);
}

TrainingError::TrainingError(int epoch, std::size_t batch, double lr, const std::string& what)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         ", lr " + std::to_string(lr) + ": " + what),
      epoch_(epoch),
      batch_(batch) {}

template <typename T>
Adam<T>::Adam(const model::Model<T>& model, const TrainConfig& config)
    : lr_(config.learning_rate), b1_(config.beta1), b2_(config.beta2), eps_(config.adam_eps) {
  for (const auto& p : model.params()) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

template <typename T>
void Adam<T>::step(model::Model<T>& model, const std::vector<nd::Tensor<T>>& grads) {
  auto& params = model.params();
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw std::invalid_argument("Adam::step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const T step = static_cast<T>(lr_ / c1);
  const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_), eps = static_cast<T>(eps_);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

template <typename T>
std::vector<model::NamedTensor> Adam<T>::state(const model::Model<T>& model) const {
  std::vector<model::NamedTensor> out;
  for (std::size_t k = 0; k < m_.size(); ++k) out.push_back({"adam.m." + model.param_names()[k], m_[k].template cast<float>()});
  for (std::size_t k = 0; k < v_.size(); ++k) out.push_back({"adam.v." + model.param_names()[k], v_[k].template cast<float>()});
  return out;
}

template <typename T>
void Adam<T>::restore(const model::Model<T>& model, const model::Checkpoint& ckpt, std::int64_t steps) {
  for (std::size_t k = 0; k < m_.size(); ++k) {
    for (auto* buf : {&m_, &v_}) {
      const std::string name = (buf == &m_ ? "adam.m." : "adam.v.") + model.param_names()[k];
      const auto* t = ckpt.find_extra(name);
      if (!t || t->value.shape() != (*buf)[k].shape()) throw std::runtime_error("checkpoint lacks optimizer state " + name);
      (*buf)[k] = t->value.template cast<T>();
    }
  }
  t_ = steps;
}

namespace {

template <typename T>
void fill_batch(const data::Dataset& ds, const std::vector<std::size_t>& records, std::vector<std::int32_t>& in,
                std::vector<std::int32_t>& tg) {
  in.clear();
  tg.clear();
  for (auto r : records) {
    const auto seq = ds.records[r].sequence();
    in.insert(in.end(), seq.begin(), seq.end() - 1);
    tg.insert(tg.end(), seq.begin() + 1, seq.end());
  }
}

}  // namespace

template <typename T>
EpochLedger train_epoch(model::Model<T>& model, Adam<T>& opt, const data::Dataset& ds, const TrainConfig& config,
                        int epoch) {
  config.validate();
  if (model.config().vocab_size < ds.vocab_size) {
    throw std::invalid_argument("train_epoch: model vocab " + std::to_string(model.config().vocab_size) +
                                " smaller than dataset vocab " + std::to_string(ds.vocab_size));
  }
  const std::size_t seq = data::kRecordTokens - 1;
  std::vector<std::size_t> order(ds.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.epoch_seed(epoch));
  std::shuffle(order.begin(), order.end(), rng);

  EpochLedger ledger;
  ledger.entries.reserve(order.size());
  std::vector<std::int32_t> in, tg;
  std::vector<std::size_t> batch;
  double total = 0;
  for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
    batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
    fill_batch<T>(ds, batch, in, tg);
    nd::Tape<T> tape;
    std::vector<nd::Var<T>> pv;
    const auto losses = model::batch_losses(tape, model, in, tg, batch.size(), seq, pv);
    const auto objective = nd::scale(nd::sum(losses), static_cast<T>(1.0 / static_cast<double>(batch.size())));
    const double value = static_cast<double>(objective.value().item());
    if (!std::isfinite(value)) throw TrainingError(epoch, b, config.learning_rate, "non-finite loss");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      double rl = 0;
      for (std::size_t p = 0; p < seq; ++p) rl += static_cast<double>(losses.value()[i * seq + p]);
      ledger.entries.push_back({batch[i], rl, ds.records[batch[i]].kind == data::RecordKind::subordinate});
      total += rl;
    }
    tape.backward(objective);
    std::vector<nd::Tensor<T>> grads;
    grads.reserve(pv.size());
    for (const auto& v : pv) grads.push_back(tape.grad(v));
    opt.step(model, grads);
  }
  ledger.mean_loss = ledger.entries.empty() ? 0.0 : total / static_cast<double>(ledger.entries.size());
  return ledger;
}

template <typename T>
std::vector<double> record_losses(const model::Model<T>& model, const data::Dataset& ds,
                                  const std::vector<std::size_t>& records) {
  if (records.empty()) return {};
  const std::size_t seq = data::kRecordTokens - 1;
  std::vector<std::int32_t> in, tg;
  fill_batch<T>(ds, records, in, tg);
  nd::Tape<T> tape;
  std::vector<nd::Var<T>> pv;
  const auto losses = model::batch_losses(tape, model, in, tg, records.size(), seq, pv);
  std::vector<double> out(records.size(), 0.0);
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t p = 0; p < seq; ++p) out[i] += static_cast<double>(losses.value()[i * seq + p]);
  return out;
}

template class Adam<float>;
template class Adam<double>;
template EpochLedger train_epoch(model::Model<float>&, Adam<float>&, const data::Dataset&, const TrainConfig&, int);
template EpochLedger train_epoch(model::Model<double>&, Adam<double>&, const data::Dataset&, const TrainConfig&, int);
template std::vector<double> record_losses(const model::Model<float>&, const data::Dataset&,
                                           const std::vector<std::size_t>&);
template std::vector<double> record_losses(const model::Model<double>&, const data::Dataset&,
                                           const std::vector<std::size_t>&);

}  // namespace phantom::dynamics
