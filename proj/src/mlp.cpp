#include "curvewalk/mlp.hpp"

#include <cmath>

namespace curvewalk {

void ParamStore::add(const std::string& name, Tensor* t) {
  CW_CHECK(t != nullptr, "null parameter");
  CW_CHECK(find(name) == nullptr, "duplicate parameter name " << name);
  items_.emplace_back(name, t);
}

int64_t ParamStore::element_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t->size();
  return n;
}

Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  return nullptr;
}

Var Graph::param(Tensor& t) {
  auto it = binding_.find(&t);
  if (it != binding_.end()) return it->second;
  Var v = tape.leaf(t, true);
  binding_.emplace(&t, v);
  return v;
}

Var Graph::var_of(const Tensor& t) const {
  auto it = binding_.find(&t);
  CW_CHECK(it != binding_.end(), "tensor was never bound to this graph");
  return it->second;
}

Tensor Graph::grad_of(const Tensor& t) const {
  auto it = binding_.find(&t);
  CW_CHECK(it != binding_.end(), "tensor was never bound to this graph");
  Var v = it->second;
  if (!tape.has_grad(v)) return Tensor::zeros(t.shape());
  return tape.grad(v);
}

void quantize_f32(Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) t[i] = quantize_f32(t[i]);
}

MlpParams MlpParams::make(const std::string& name, const std::vector<int>& dims,
                          Act act, Norm norm, Rng& rng, Act last_act,
                          Norm last_norm) {
  CW_CHECK(dims.size() >= 2, "mlp needs at least in/out dims");
  MlpParams p;
  p.name = name;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i], out = dims[i + 1];
    const bool last = i + 2 == dims.size();
    MlpLayer layer;
    layer.act = last ? last_act : act;
    layer.norm = last ? last_norm : norm;
    layer.w = Tensor({out, in});
    const double std = std::sqrt(2.0 / in);
    for (int64_t j = 0; j < layer.w.size(); ++j)
      layer.w[j] = quantize_f32(rng.normal() * std);
    if (layer.norm == Norm::kBatch) {
      layer.gamma = Tensor::full({out, 1}, 1.0);
      layer.beta = Tensor::zeros({out, 1});
    } else {
      layer.b = Tensor::zeros({out, 1});
    }
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

void MlpParams::validate() const {
  CW_CHECK(!layers.empty(), "empty mlp");
  for (size_t i = 0; i + 1 < layers.size(); ++i)
    CW_CHECK(layers[i].w.rows() == layers[i + 1].w.cols(),
             "mlp " << name << ": layer " << i << " out "
                    << layers[i].w.rows() << " != layer " << i + 1 << " in "
                    << layers[i + 1].w.cols());
}

void MlpParams::register_params(ParamStore& store) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string base = name + ".l" + std::to_string(i);
    auto& layer = const_cast<MlpLayer&>(layers[i]);
    store.add(base + ".w", &layer.w);
    if (layer.norm == Norm::kBatch) {
      store.add(base + ".gamma", &layer.gamma);
      store.add(base + ".beta", &layer.beta);
    } else {
      store.add(base + ".b", &layer.b);
    }
  }
}

Var shared_mlp(Graph& g, Var x, const MlpParams& params) {
  params.validate();
  CW_CHECK(g.tape.val(x).rows() == params.in_dim(),
           "mlp " << params.name << ": input channels "
                  << g.tape.val(x).rows() << " != " << params.in_dim());
  Var h = x;
  for (const MlpLayer& layer : params.layers) {
    auto& mutable_layer = const_cast<MlpLayer&>(layer);
    h = matmul(g.param(mutable_layer.w), h);
    if (layer.norm == Norm::kBatch) {
      h = batchnorm(h, g.param(mutable_layer.gamma),
                    g.param(mutable_layer.beta));
    } else {
      h = add_colvec(h, g.param(mutable_layer.b));
    }
    switch (layer.act) {
      case Act::kNone:
        break;
      case Act::kRelu:
        h = relu(h);
        break;
      case Act::kLeakyRelu:
        h = leaky_relu(h, kLeakySlope);
        break;
    }
  }
  return h;
}

}  // namespace curvewalk
