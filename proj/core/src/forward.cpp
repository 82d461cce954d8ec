#include "phantom/nanoformer/forward.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "phantom/ndtensor/ops.hpp"

namespace phantom::model {

using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

template <typename T>
Var<T> sum_of(Tape<T>& tape, const std::vector<Var<T>>& parts, const nd::Shape& shape) {
  Tensor<T> out(shape);
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != shape) {
      throw nd::ShapeError("slot sum: contribution " + nd::shape_str(p.shape()) + " vs " + nd::shape_str(shape));
    }
    const auto& v = p.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    ids.push_back(p.id());
  }
  return tape.record(std::move(out), ids, [ids](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (auto id : ids) {
      if (!t.requires_grad(id)) continue;
      auto& acc = t.accumulate(id);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  });
}

template <typename T>
void check_tokens(const Model<T>& model, std::span<const std::int32_t> tokens, std::size_t seq) {
  const auto& c = model.config();
  if (seq == 0) throw std::invalid_argument("forward: empty sequence");
  if (seq > static_cast<std::size_t>(c.max_seq_len)) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                                std::to_string(c.max_seq_len));
  }
  for (auto t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw std::out_of_range("forward: token id " + std::to_string(t) + " outside vocab of " +
                              std::to_string(c.vocab_size));
    }
  }
}

/// Builds the model computation on a tape for `batch` sequences of length
/// `seq`, stored as [batch * seq, d] row blocks.
template <typename T>
class Engine {
 public:
  Engine(Tape<T>& tape, const Model<T>& model, std::size_t batch, std::size_t seq, bool grad_params)
      : tape_(tape), model_(model), batch_(batch), seq_(seq), grad_params_(grad_params),
        vars_(model.params().size()) {}

  Var<T> param(std::size_t i) {
    if (!vars_[i]) {
      Tensor<T> v = model_.params()[i];
      v.set_requires_grad(grad_params_);
      vars_[i] = grad_params_ ? tape_.leaf(std::move(v)) : tape_.constant(std::move(v));
    }
    return *vars_[i];
  }

  std::vector<Var<T>> param_vars() {
    std::vector<Var<T>> out;
    for (std::size_t i = 0; i < vars_.size(); ++i) out.push_back(param(i));
    return out;
  }

  Var<T> embed(std::span<const std::int32_t> tokens) {
    const auto& lay = model_.layout();
    std::vector<std::int32_t> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i % seq_);
    return nd::add(nd::embedding(param(lay.tok_emb), tokens), nd::embedding(param(lay.pos_emb), pos));
  }

  Var<T> ln1(int l, const Var<T>& x) {
    const auto& lp = model_.layout().layers[static_cast<std::size_t>(l)];
    return nd::layer_norm(x, param(lp.ln1_g), param(lp.ln1_b));
  }

  /// Head from already-normalised q/k/v inputs; writes the attention
  /// pattern of the first sequence to `attention` when given.
  Var<T> head(int l, int h, const Var<T>& nq, const Var<T>& nk, const Var<T>& nv, Tensor<T>* attention) {
    const auto& hp = model_.layout().layers[static_cast<std::size_t>(l)].heads[static_cast<std::size_t>(h)];
    const std::size_t dh = static_cast<std::size_t>(model_.config().d_head());
    auto proj = [&](const Var<T>& x, std::size_t w, std::size_t b) {
      return nd::reshape(nd::add_bias(nd::matmul(x, param(w)), param(b)), {batch_, seq_, dh});
    };
    const auto q = proj(nq, hp.wq, hp.bq);
    const auto k = proj(nk, hp.wk, hp.bk);
    const auto v = proj(nv, hp.wv, hp.bv);
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const auto att = nd::softmax(nd::causal_mask(nd::scale(nd::bmm(q, nd::transpose(k)), inv)));
    if (attention) *attention = att.value().rows(0, 1).reshaped({seq_, seq_});
    const auto z = nd::reshape(nd::bmm(att, v), {batch_ * seq_, dh});
    return nd::matmul(z, param(hp.wo));
  }

  Var<T> mlp(int l, const Var<T>& x) {
    const auto& lp = model_.layout().layers[static_cast<std::size_t>(l)];
    const auto n = nd::layer_norm(x, param(lp.ln2_g), param(lp.ln2_b));
    const auto hdn = nd::gelu(nd::add_bias(nd::matmul(n, param(lp.w1)), param(lp.b1)));
    return nd::add_bias(nd::matmul(hdn, param(lp.w2)), param(lp.b2));
  }

  Var<T> final_norm(const Var<T>& x) {
    const auto& lay = model_.layout();
    return nd::layer_norm(x, param(lay.lnf_g), param(lay.lnf_b));
  }

  Var<T> unembed(const Var<T>& normed) {
    const auto& lay = model_.layout();
    return nd::add_bias(nd::matmul(normed, param(lay.w_u)), param(lay.b_u));
  }

  /// Full shared-residual pass. Fills `trace` (first sequence) when given.
  Var<T> run_shared(std::span<const std::int32_t> tokens, ActivationTrace<T>* trace, Var<T>* resid_out = nullptr) {
    const auto& cfg = model_.config();
    const auto& topo = model_.topology();
    auto resid = embed(tokens);
    if (trace) {
      trace->outputs[0] = resid.value();
      trace->residual.push_back(resid.value());
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto n = ln1(l, resid);
      std::vector<Var<T>> writes{resid};
      for (int h = 0; h < cfg.n_heads; ++h) {
        const int node = topo.head_node(l, h);
        Tensor<T>* att = trace ? &trace->attention[static_cast<std::size_t>(topo.head_index(node))] : nullptr;
        writes.push_back(head(l, h, n, n, n, att));
        if (trace) trace->outputs[static_cast<std::size_t>(node)] = writes.back().value();
      }
      resid = sum_of(tape_, writes, resid.shape());
      const auto m = mlp(l, resid);
      if (trace) trace->outputs[static_cast<std::size_t>(topo.mlp_node(l))] = m.value();
      resid = nd::add(resid, m);
      if (trace) trace->residual.push_back(resid.value());
    }
    if (resid_out) *resid_out = resid;
    return unembed(final_norm(resid));
  }

 private:
  Tape<T>& tape_;
  const Model<T>& model_;
  std::size_t batch_, seq_;
  bool grad_params_;
  std::vector<std::optional<Var<T>>> vars_;
};

template <typename T>
ActivationTrace<T> empty_trace(const Model<T>& model, std::span<const std::int32_t> tokens) {
  ActivationTrace<T> tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  const auto& topo = model.topology();
  tr.outputs.resize(topo.node_count() - 1);
  tr.attention.resize(static_cast<std::size_t>(topo.n_layers() * topo.n_heads()));
  return tr;
}

/// Per-slot pass. Every child slot reads the sum of its incoming edge
/// sources; `source(edge)` yields the Var carried by that edge given the
/// live parent outputs computed so far.
template <typename T>
struct SlotRun {
  std::vector<Var<T>> outputs;
  std::vector<Var<T>> slot_inputs;
  Var<T> logits;
};

template <typename T, typename SourceFn>
SlotRun<T> run_slots(Tape<T>& tape, Engine<T>& eng, const Model<T>& model, const Var<T>& embed_out,
                               ActivationTrace<T>& trace, SourceFn&& source) {
  const auto& topo = model.topology();
  const auto& cfg = model.config();
  SlotRun<T> run;
  run.outputs.resize(topo.node_count() - 1);
  run.slot_inputs.resize(topo.slot_count());
  run.outputs[0] = embed_out;
  trace.outputs[0] = embed_out.value();
  trace.residual.push_back(embed_out.value());
  const nd::Shape shape = embed_out.shape();

  auto assemble = [&](int child, Slot slot) {
    std::vector<Var<T>> parts;
    for (auto e : topo.incoming(child, slot)) parts.push_back(source(e, run.outputs));
    auto in = sum_of(tape, parts, shape);
    run.slot_inputs[topo.slot_index(child, slot)] = in;
    return in;
  };

  for (int l = 0; l < cfg.n_layers; ++l) {
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int node = topo.head_node(l, h);
      Var<T> nq, nk, nv;
      if (cfg.qkv_slots) {
        nq = eng.ln1(l, assemble(node, Slot::q));
        nk = eng.ln1(l, assemble(node, Slot::k));
        nv = eng.ln1(l, assemble(node, Slot::v));
      } else {
        nq = nk = nv = eng.ln1(l, assemble(node, Slot::in));
      }
      auto* att = &trace.attention[static_cast<std::size_t>(topo.head_index(node))];
      run.outputs[static_cast<std::size_t>(node)] = eng.head(l, h, nq, nk, nv, att);
    }
    const int m = topo.mlp_node(l);
    run.outputs[static_cast<std::size_t>(m)] = eng.mlp(l, assemble(m, Slot::in));
  }
  run.logits = eng.unembed(eng.final_norm(assemble(topo.logits_node(), Slot::in)));

  for (std::size_t i = 1; i < run.outputs.size(); ++i) trace.outputs[i] = run.outputs[i].value();
  Tensor<T> resid = trace.outputs[0];
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto& o = trace.outputs[static_cast<std::size_t>(topo.head_node(l, h))];
      for (std::size_t i = 0; i < resid.size(); ++i) resid[i] += o[i];
    }
    const auto& o = trace.outputs[static_cast<std::size_t>(topo.mlp_node(l))];
    for (std::size_t i = 0; i < resid.size(); ++i) resid[i] += o[i];
    trace.residual.push_back(resid);
  }
  trace.logits = run.logits.value();
  return run;
}

template <typename T>
void check_pair(const Model<T>& model, const ActivationTrace<T>& clean, const ActivationTrace<T>& corrupt) {
  const auto& topo = model.topology();
  if (clean.seq_len() != corrupt.seq_len()) {
    throw std::invalid_argument("patched forward: clean length " + std::to_string(clean.seq_len()) +
                                " != corrupt length " + std::to_string(corrupt.seq_len()));
  }
  const nd::Shape expect{clean.seq_len(), static_cast<std::size_t>(model.config().d_model)};
  for (const auto* tr : {&clean, &corrupt}) {
    if (tr->outputs.size() != topo.node_count() - 1) {
      throw std::invalid_argument("patched forward: trace has " + std::to_string(tr->outputs.size()) +
                                  " node outputs, model has " + std::to_string(topo.node_count() - 1));
    }
    for (const auto& o : tr->outputs) {
      if (o.shape() != expect) {
        throw std::invalid_argument("patched forward: trace output shape " + nd::shape_str(o.shape()) +
                                    " does not match model " + nd::shape_str(expect));
      }
    }
  }
}

template <typename T>
Var<T> metric_var(Tape<T>& tape, const Var<T>& logits, std::size_t seq, std::size_t vocab, LogitDiff metric) {
  for (auto t : {metric.positive, metric.negative}) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("metric: token " + std::to_string(t) + " outside vocab of " + std::to_string(vocab));
    }
  }
  Tensor<T> w({1, vocab});
  w[static_cast<std::size_t>(metric.positive)] += T{1};
  w[static_cast<std::size_t>(metric.negative)] -= T{1};
  return nd::sum(nd::mul(nd::slice(logits, 0, seq - 1, seq), tape.constant(std::move(w))));
}

}  // namespace

template <typename T>
std::vector<T> ActivationTrace<T>::final_logits() const {
  if (logits.empty()) return {};
  const std::size_t v = logits.shape().back();
  const auto d = logits.data();
  return std::vector<T>(d.end() - static_cast<std::ptrdiff_t>(v), d.end());
}

template <typename T>
ActivationTrace<T> forward(const Model<T>& model, std::span<const std::int32_t> tokens) {
  check_tokens(model, tokens, tokens.size());
  Tape<T> tape;
  Engine<T> eng(tape, model, 1, tokens.size(), false);
  auto tr = empty_trace(model, tokens);
  tr.logits = eng.run_shared(tokens, &tr).value();
  return tr;
}

template <typename T>
ActivationTrace<T> forward_patched(const Model<T>& model, const ActivationTrace<T>& clean,
                                   const ActivationTrace<T>& corrupt, const PatchPlan& plan) {
  check_pair(model, clean, corrupt);
  const auto& topo = model.topology();
  if (plan.sources.size() != topo.edge_count()) {
    throw std::invalid_argument("patched forward: plan covers " + std::to_string(plan.sources.size()) +
                                " edges, graph has " + std::to_string(topo.edge_count()));
  }
  check_tokens(model, clean.tokens, clean.seq_len());
  Tape<T> tape;
  Engine<T> eng(tape, model, 1, clean.seq_len(), false);
  auto tr = empty_trace(model, clean.tokens);
  std::vector<std::optional<Var<T>>> corrupt_vars(topo.node_count());
  auto source = [&](std::size_t e, const std::vector<Var<T>>& live) {
    const auto& edge = topo.edges()[e];
    const auto p = static_cast<std::size_t>(edge.parent);
    if (plan.sources[e] == EdgeSource::clean) return live[p];
    if (!corrupt_vars[p]) corrupt_vars[p] = tape.constant(corrupt.outputs[p]);
    return *corrupt_vars[p];
  };
  run_slots(tape, eng, model, eng.embed(clean.tokens), tr, source);
  return tr;
}

template <typename T>
InterpolatedGradient<T> forward_interpolated(const Model<T>& model, const ActivationTrace<T>& clean,
                                             const ActivationTrace<T>& corrupt, T alpha, int node,
                                             LogitDiff metric) {
  if (!(alpha >= T{0} && alpha <= T{1})) {
    throw std::invalid_argument("forward_interpolated: alpha " + std::to_string(static_cast<double>(alpha)) +
                                " outside [0, 1]");
  }
  check_pair(model, clean, corrupt);
  const auto& topo = model.topology();
  if (node < 0 || node >= topo.logits_node()) {
    throw std::out_of_range("forward_interpolated: node " + std::to_string(node) + " has no activation");
  }
  check_tokens(model, clean.tokens, clean.seq_len());
  Tape<T> tape;
  Engine<T> eng(tape, model, 1, clean.seq_len(), false);
  auto tr = empty_trace(model, clean.tokens);

  const auto& a = clean.outputs[static_cast<std::size_t>(node)];
  const auto& b = corrupt.outputs[static_cast<std::size_t>(node)];
  Tensor<T> mixed(a.shape());
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = b[i] + alpha * (a[i] - b[i]);
  mixed.set_requires_grad(true);
  const auto override_var = tape.leaf(std::move(mixed));

  auto source = [&](std::size_t e, const std::vector<Var<T>>& live) {
    const int p = topo.edges()[e].parent;
    return p == node ? override_var : live[static_cast<std::size_t>(p)];
  };
  const auto embed_out = node == topo.embed_node() ? override_var : eng.embed(clean.tokens);
  auto run = run_slots(tape, eng, model, embed_out, tr, source);
  const auto m = metric_var(tape, run.logits, clean.seq_len(), static_cast<std::size_t>(model.config().vocab_size),
                            metric);
  tape.backward(m);

  InterpolatedGradient<T> out;
  out.metric = m.value().item();
  out.node_grad = tape.grad(override_var);
  out.slot_grads.reserve(run.slot_inputs.size());
  for (const auto& s : run.slot_inputs) out.slot_grads.push_back(tape.grad(s));
  return out;
}

template <typename T>
Var<T> batch_losses(Tape<T>& tape, const Model<T>& model, std::span<const std::int32_t> inputs,
                    std::span<const std::int32_t> targets, std::size_t batch, std::size_t seq,
                    std::vector<Var<T>>& param_vars) {
  if (inputs.size() != batch * seq || targets.size() != batch * seq) {
    throw std::invalid_argument("batch_losses: expected " + std::to_string(batch * seq) + " inputs and targets, got " +
                                std::to_string(inputs.size()) + " and " + std::to_string(targets.size()));
  }
  check_tokens(model, inputs, seq);
  Engine<T> eng(tape, model, batch, seq, true);
  param_vars = eng.param_vars();
  const auto logits = eng.run_shared(inputs, nullptr);
  return nd::cross_entropy(logits, targets);
}

template <typename T>
Tensor<T> batch_final_logits(const Model<T>& model, std::span<const std::int32_t> inputs, std::size_t batch,
                             std::size_t seq) {
  if (inputs.size() != batch * seq) {
    throw std::invalid_argument("batch_final_logits: expected " + std::to_string(batch * seq) + " tokens, got " +
                                std::to_string(inputs.size()));
  }
  check_tokens(model, inputs, seq);
  Tape<T> tape;
  Engine<T> eng(tape, model, batch, seq, false);
  Var<T> resid;
  eng.run_shared(inputs, nullptr, &resid);
  const auto d = static_cast<std::size_t>(model.config().d_model);
  const auto last = nd::reshape(nd::slice(nd::reshape(resid, {batch, seq, d}), 1, seq - 1, seq), {batch, d});
  return eng.unembed(eng.final_norm(last)).value();
}

template <typename T>
Tensor<T> project_residual(const Model<T>& model, const Tensor<T>& residual) {
  const auto d = static_cast<std::size_t>(model.config().d_model);
  if (residual.rank() != 2 || residual.dim(1) != d) {
    throw nd::ShapeError("project_residual: expected [n, " + std::to_string(d) + "], got " +
                         nd::shape_str(residual.shape()));
  }
  Tape<T> tape;
  Engine<T> eng(tape, model, 1, residual.dim(0), false);
  return eng.unembed(eng.final_norm(tape.constant(residual))).value();
}

template <typename T>
std::int32_t argmax(std::span<const T> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<std::int32_t>(best);
}

template <typename T>
std::size_t rank_of(std::span<const T> logits, std::int32_t token) {
  if (token < 0 || static_cast<std::size_t>(token) >= logits.size()) {
    throw std::out_of_range("rank_of: token " + std::to_string(token) + " outside " + std::to_string(logits.size()));
  }
  const T v = logits[static_cast<std::size_t>(token)];
  std::size_t r = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] > v || (logits[i] == v && static_cast<std::int32_t>(i) < token)) ++r;
  return r;
}

#define PHANTOM_INSTANTIATE_FORWARD(T)                                                                           \
  template struct ActivationTrace<T>;                                                                            \
  template ActivationTrace<T> forward(const Model<T>&, std::span<const std::int32_t>);                           \
  template ActivationTrace<T> forward_patched(const Model<T>&, const ActivationTrace<T>&,                        \
                                              const ActivationTrace<T>&, const PatchPlan&);                      \
  template InterpolatedGradient<T> forward_interpolated(const Model<T>&, const ActivationTrace<T>&,              \
                                                        const ActivationTrace<T>&, T, int, LogitDiff);           \
  template Var<T> batch_losses(Tape<T>&, const Model<T>&, std::span<const std::int32_t>,                         \
                               std::span<const std::int32_t>, std::size_t, std::size_t, std::vector<Var<T>>&);   \
  template Tensor<T> batch_final_logits(const Model<T>&, std::span<const std::int32_t>, std::size_t, std::size_t); \
  template Tensor<T> project_residual(const Model<T>&, const Tensor<T>&);                                       \
  template std::int32_t argmax(std::span<const T>);                                                              \
  template std::size_t rank_of(std::span<const T>, std::int32_t);

PHANTOM_INSTANTIATE_FORWARD(float)
PHANTOM_INSTANTIATE_FORWARD(double)

#undef PHANTOM_INSTANTIATE_FORWARD

}  // namespace phantom::model
