#include <utility>
#include "softorder/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace softorder {

namespace {

constexpr Scalar kProbEps = Scalar(1e-12);

NodePtr make_op(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

// 3x3 patch layout of one image as rows: (h*w) x (c*9), zero padded.
void im2col3x3(const Tensor& x, Index item, Index c, Index h, Index w, RowMatrixXs& cols) {
  cols.setZero(h * w, c * 9);
  const Index base = item * c * h * w;
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const Index row = i * w + j;
        for (Index di = -1; di <= 1; ++di) {
          const Index ii = i + di;
          if (ii < 0 || ii >= h) continue;
          for (Index dj = -1; dj <= 1; ++dj) {
            const Index jj = j + dj;
            if (jj < 0 || jj >= w) continue;
            cols(row, ch * 9 + (di + 1) * 3 + (dj + 1)) = x[base + (ch * h + ii) * w + jj];
          }
        }
      }
}

void col2im3x3_add(const RowMatrixXs& cols, Index item, Index c, Index h, Index w, Tensor& gx) {
  const Index base = item * c * h * w;
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const Index row = i * w + j;
        for (Index di = -1; di <= 1; ++di) {
          const Index ii = i + di;
          if (ii < 0 || ii >= h) continue;
          for (Index dj = -1; dj <= 1; ++dj) {
            const Index jj = j + dj;
            if (jj < 0 || jj >= w) continue;
            gx[base + (ch * h + ii) * w + jj] += cols(row, ch * 9 + (di + 1) * 3 + (dj + 1));
          }
        }
      }
}

} // namespace

NodePtr leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

NodePtr affine(const NodePtr& x, const NodePtr& W, const NodePtr& b) {
  Tensor y = affine_forward(W->value, b->value, x->value);
  return make_op(std::move(y), {x, W, b}, [](Node& n) {
    const NodePtr &x = n.inputs[0], &W = n.inputs[1], &b = n.inputs[2];
    const Index batch = n.value.dim(0), m_out = n.value.dim(1), m_in = W->value.dim(1);
    ConstMatrixMap gy = std::as_const(n.grad).matrix(batch, m_out);
    if (x->requires_grad) {
      Tensor gx(x->value.shape());
      gx.matrix(batch, m_in).noalias() = gy * W->value.matrix(m_out, m_in);
      x->accumulate(gx);
    }
    if (W->requires_grad) {
      Tensor gW(W->value.shape());
      gW.matrix(m_out, m_in).noalias() = gy.transpose() * x->value.matrix(batch, m_in);
      W->accumulate(gW);
    }
    if (b->requires_grad) {
      Tensor gb(b->value.shape());
      Eigen::Map<VectorXs>(gb.array().data(), m_out) = gy.colwise().sum().transpose();
      b->accumulate(gb);
    }
  });
}

NodePtr conv2d(const NodePtr& x, const NodePtr& K, const NodePtr& b) {
  Tensor y = conv2d_forward(K->value, b->value, x->value);
  return make_op(std::move(y), {x, K, b}, [](Node& n) {
    const NodePtr &x = n.inputs[0], &K = n.inputs[1], &b = n.inputs[2];
    const Index batch = x->value.dim(0), c_in = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3), c_out = K->value.dim(0);
    ConstMatrixMap kmat = std::as_const(K->value).matrix(c_out, c_in * 9);
    Tensor gx(x->value.shape());
    RowMatrixXs gK = RowMatrixXs::Zero(c_out, c_in * 9);
    VectorXs gb = VectorXs::Zero(c_out);
    RowMatrixXs cols, g(h * w, c_out), gcols;
    for (Index item = 0; item < batch; ++item) {
      for (Index f = 0; f < c_out; ++f) {
        const Index base = ((item * c_out) + f) * h * w;
        for (Index p = 0; p < h * w; ++p) g(p, f) = n.grad[base + p];
      }
      im2col3x3(x->value, item, c_in, h, w, cols);
      gK.noalias() += g.transpose() * cols;
      gb += g.colwise().sum().transpose();
      if (x->requires_grad) {
        gcols.noalias() = g * kmat;
        col2im3x3_add(gcols, item, c_in, h, w, gx);
      }
    }
    if (x->requires_grad) x->accumulate(gx);
    if (K->requires_grad) {
      Tensor t(K->value.shape());
      t.matrix(c_out, c_in * 9) = gK;
      K->accumulate(t);
    }
    if (b->requires_grad) {
      Tensor t(b->value.shape());
      Eigen::Map<VectorXs>(t.array().data(), c_out) = gb;
      b->accumulate(t);
    }
  });
}

NodePtr maxpool(const NodePtr& x) {
  auto argmax = std::make_shared<std::vector<Index>>();
  Tensor y = maxpool2x2(x->value, argmax.get());
  return make_op(std::move(y), {x}, [argmax](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    Tensor gx(x->value.shape());
    for (Index o = 0; o < n.value.size(); ++o) gx[(*argmax)[static_cast<size_t>(o)]] += n.grad[o];
    x->accumulate(gx);
  });
}

NodePtr activation(Activation kind, const NodePtr& x) {
  if (kind == Activation::Identity) return x;
  Tensor y = activate(kind, x->value);
  return make_op(std::move(y), {x}, [kind](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    Tensor gx(x->value.shape());
    if (kind == Activation::Relu) {
      gx.array() = (n.value.array() > Scalar(0)).select(n.grad.array(), Scalar(0));
    } else { // sigmoid
      gx.array() = n.grad.array() * n.value.array() * (Scalar(1) - n.value.array());
    }
    x->accumulate(gx);
  });
}

NodePtr sigmoid(const NodePtr& x) { return activation(Activation::Sigmoid, x); }

NodePtr softmax(const NodePtr& x, int axis) {
  Tensor y = softmax_axis(x->value, axis);
  return make_op(std::move(y), {x}, [axis](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= n.value.dim(i);
    const Index len = n.value.dim(axis);
    for (int i = axis + 1; i < n.value.rank(); ++i) inner *= n.value.dim(i);
    Tensor gx(x->value.shape());
    for (Index o = 0; o < outer; ++o)
      for (Index in = 0; in < inner; ++in) {
        Scalar dot = 0;
        for (Index j = 0; j < len; ++j) {
          const Index idx = (o * len + j) * inner + in;
          dot += n.grad[idx] * n.value[idx];
        }
        for (Index j = 0; j < len; ++j) {
          const Index idx = (o * len + j) * inner + in;
          gx[idx] = n.value[idx] * (n.grad[idx] - dot);
        }
      }
    x->accumulate(gx);
  });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y = a->value;
  y.array() += b->value.array();
  return make_op(std::move(y), {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad);
  });
}

NodePtr reshape(const NodePtr& x, std::vector<Index> shape) {
  Tensor y = x->value.reshaped(std::move(shape));
  return make_op(std::move(y), {x}, [](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (x->requires_grad) x->accumulate(n.grad.reshaped(x->value.shape()));
  });
}

NodePtr dropout(const NodePtr& x, Scalar rate, bool train, Rng& rng) {
  if (rate < 0 || rate >= 1) throw ContractError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0) return x;
  auto mask = std::make_shared<Tensor>(x->value.shape());
  const Scalar keep = Scalar(1) / (Scalar(1) - rate);
  for (Index i = 0; i < mask->size(); ++i) (*mask)[i] = rng.uniform() < rate ? Scalar(0) : keep;
  Tensor y = x->value;
  y.array() *= mask->array();
  return make_op(std::move(y), {x}, [mask](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    Tensor gx = n.grad;
    gx.array() *= mask->array();
    x->accumulate(gx);
  });
}

NodePtr scale_entry(const NodePtr& x, const NodePtr& scales, Index flat_index) {
  if (flat_index < 0 || flat_index >= scales->value.size())
    throw ContractError("scale_entry: index out of range");
  Tensor y = x->value;
  y.array() *= scales->value[flat_index];
  return make_op(std::move(y), {x, scales}, [flat_index](Node& n) {
    const NodePtr &x = n.inputs[0], &s = n.inputs[1];
    if (x->requires_grad) {
      Tensor gx = n.grad;
      gx.array() *= s->value[flat_index];
      x->accumulate(gx);
    }
    if (s->requires_grad) {
      Tensor gs(s->value.shape());
      gs[flat_index] = (n.grad.array() * x->value.array()).sum();
      s->accumulate(gs);
    }
  });
}

NodePtr scale_const(const NodePtr& x, Scalar c) {
  Tensor y = x->value;
  y.array() *= c;
  return make_op(std::move(y), {x}, [c](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor gx = n.grad;
    gx.array() *= c;
    n.inputs[0]->accumulate(gx);
  });
}

NodePtr batch_mean_rest(const NodePtr& x) {
  const Index batch = x->value.dim(0);
  const Index rest = x->value.size() / batch;
  Tensor y({batch, 1});
  ConstMatrixMap m = std::as_const(x->value).matrix(batch, rest);
  for (Index b = 0; b < batch; ++b) y[b] = m.row(b).mean();
  return make_op(std::move(y), {x}, [batch, rest](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    Tensor gx(x->value.shape());
    MatrixMap gm = gx.matrix(batch, rest);
    for (Index b = 0; b < batch; ++b) gm.row(b).setConstant(n.grad[b] / Scalar(rest));
    x->accumulate(gx);
  });
}

NodePtr bce_loss(const NodePtr& pred, const Tensor& targets) {
  const Index batch = pred->value.dim(0);
  if (targets.size() != batch || pred->value.size() != batch)
    throw ShapeError("bce_loss: prediction " + pred->value.shape_str() + " vs targets " +
                     targets.shape_str());
  Scalar loss = 0;
  for (Index i = 0; i < batch; ++i) {
    const Scalar y = targets[i];
    if (y != Scalar(0) && y != Scalar(1)) throw ContractError("bce_loss: targets must be 0 or 1");
    const Scalar p = std::clamp(pred->value[i], kProbEps, Scalar(1) - kProbEps);
    loss -= y * std::log(p) + (Scalar(1) - y) * std::log(Scalar(1) - p);
  }
  loss /= Scalar(batch);
  auto t = std::make_shared<Tensor>(targets);
  return make_op(Tensor::scalar(loss), {pred}, [t, batch](Node& n) {
    const NodePtr& pred = n.inputs[0];
    if (!pred->requires_grad) return;
    Tensor gx(pred->value.shape());
    for (Index i = 0; i < batch; ++i) {
      const Scalar raw = pred->value[i];
      if (raw <= kProbEps || raw >= Scalar(1) - kProbEps) continue; // clamped region
      const Scalar y = (*t)[i];
      gx[i] = n.grad[0] * (-y / raw + (Scalar(1) - y) / (Scalar(1) - raw)) / Scalar(batch);
    }
    pred->accumulate(gx);
  });
}

NodePtr ce_loss(const NodePtr& probs, const Tensor& class_indices) {
  const Index batch = probs->value.dim(0);
  const Index classes = probs->value.dim(1);
  if (class_indices.size() != batch)
    throw ShapeError("ce_loss: batch mismatch");
  Scalar loss = 0;
  for (Index i = 0; i < batch; ++i) {
    const Index c = static_cast<Index>(class_indices[i]);
    if (c < 0 || c >= classes) throw ContractError("ce_loss: target class out of range");
    loss -= std::log(std::clamp(probs->value[i * classes + c], kProbEps, Scalar(1) - kProbEps));
  }
  loss /= Scalar(batch);
  auto t = std::make_shared<Tensor>(class_indices);
  return make_op(Tensor::scalar(loss), {probs}, [t, batch, classes](Node& n) {
    const NodePtr& probs = n.inputs[0];
    if (!probs->requires_grad) return;
    Tensor gx(probs->value.shape());
    for (Index i = 0; i < batch; ++i) {
      const Index c = static_cast<Index>((*t)[i]);
      const Scalar p = probs->value[i * classes + c];
      if (p <= kProbEps || p >= Scalar(1) - kProbEps) continue;
      gx[i * classes + c] = -n.grad[0] / (p * Scalar(batch));
    }
    probs->accumulate(gx);
  });
}

NodePtr mse_loss(const NodePtr& pred, const Tensor& targets) {
  require_same_shape(pred->value, targets, "mse_loss");
  const Index n_elems = pred->value.size();
  const Scalar loss = (pred->value.array() - targets.array()).square().mean();
  auto t = std::make_shared<Tensor>(targets);
  return make_op(Tensor::scalar(loss), {pred}, [t, n_elems](Node& n) {
    const NodePtr& pred = n.inputs[0];
    if (!pred->requires_grad) return;
    Tensor gx(pred->value.shape());
    gx.array() = n.grad[0] * Scalar(2) * (pred->value.array() - t->array()) / Scalar(n_elems);
    pred->accumulate(gx);
  });
}

NodePtr total(const std::vector<NodePtr>& scalars) {
  if (scalars.empty()) throw ContractError("total: empty term list");
  Scalar sum = 0;
  for (const auto& s : scalars) {
    if (s->value.size() != 1) throw ShapeError("total: terms must be scalars");
    sum += s->value[0];
  }
  return make_op(Tensor::scalar(sum), scalars, [](Node& n) {
    for (const auto& in : n.inputs)
      if (in->requires_grad) in->accumulate(n.grad);
  });
}

NodePtr sum_all(const NodePtr& x) {
  return make_op(Tensor::scalar(x->value.array().sum()), {x}, [](Node& n) {
    const NodePtr& x = n.inputs[0];
    if (!x->requires_grad) return;
    x->accumulate(Tensor::full(x->value.shape(), n.grad[0]));
  });
}

void backward(const NodePtr& out, const Tensor& seed) {
  require_same_shape(out->value, seed, "backward seed");
  // Iterative postorder DFS; a node seen on the active path twice means a cycle.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state; // 0 unseen, 1 active, 2 done
  std::vector<std::pair<Node*, size_t>> stack{{out.get(), 0}};
  state[out.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      auto it = state.find(child);
      if (it == state.end()) {
        state[child] = 1;
        stack.emplace_back(child, 0);
      } else if (it->second == 1) {
        throw std::logic_error("backward: computation graph contains a cycle");
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  out->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop && n->has_grad) n->backprop(*n);
  }
}

void backward(const NodePtr& out) { backward(out, Tensor::ones(out->value.shape())); }

} // namespace softorder
