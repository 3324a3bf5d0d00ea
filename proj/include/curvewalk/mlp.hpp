#ifndef CURVEWALK_MLP_HPP_
#define CURVEWALK_MLP_HPP_

#include <string>
#include <unordered_map>
#include <vector>

#include "curvewalk/tape.hpp"

namespace curvewalk {

enum class Act { kNone, kRelu, kLeakyRelu };
enum class Norm { kNone, kBatch };

// Negative slope used everywhere LeakyReLU appears.
inline constexpr double kLeakySlope = 0.2;

// Ordered registry of named learnable tensors. Owns nothing; modules own
// their parameter tensors and register pointers here for the optimizer and
// the checkpoint container.
class ParamStore {
 public:
  void add(const std::string& name, Tensor* t);
  int count() const { return static_cast<int>(items_.size()); }
  int64_t element_count() const;
  const std::vector<std::pair<std::string, Tensor*>>& items() const {
    return items_;
  }
  Tensor* find(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor*>> items_;
};

// One recorded computation: a tape plus the binding of parameter tensors to
// leaf vars, so gradients can be read back by parameter identity after
// backward. Also carries per-pass mode flags.
struct Graph {
  Tape tape;
  bool training = false;
  // Replaces hard straight-through selection with its softmax relaxation;
  // used by the finite-difference checker, never by training or inference.
  bool soft_selection = false;
  Rng* rng = nullptr;  // dropout mask source when training

  Var param(Tensor& t);
  Var constant(const Tensor& t) { return tape.leaf(t, false); }
  Var input(Tensor t, bool track = false) { return tape.leaf(std::move(t), track); }

  bool bound(const Tensor& t) const { return binding_.count(&t) > 0; }
  Var var_of(const Tensor& t) const;
  // Gradient of a bound parameter; zeros if the parameter never joined
  // the graph ahead of the loss.
  Tensor grad_of(const Tensor& t) const;

 private:
  std::unordered_map<const Tensor*, Var> binding_;
};

// Shared per-element MLP: the same (weights, bias) applied to every column.
// normalization (when enabled) replaces the bias of that layer.
struct MlpLayer {
  Tensor w;  // out x in
  Tensor b;  // out x 1, absent when norm == kBatch
  Tensor gamma, beta;
  Act act = Act::kNone;
  Norm norm = Norm::kNone;
};

struct MlpParams {
  std::string name;
  std::vector<MlpLayer> layers;

  int in_dim() const { return layers.front().w.cols(); }
  int out_dim() const { return layers.back().w.rows(); }

  // He-initialized stack: dims = {in, h1, ..., out}. The last layer takes
  // `last_act`/`last_norm`; hidden layers take `act`/`norm`.
  static MlpParams make(const std::string& name, const std::vector<int>& dims,
                        Act act, Norm norm, Rng& rng,
                        Act last_act = Act::kNone, Norm last_norm = Norm::kNone);

  void register_params(ParamStore& store) const;
  void validate() const;
};

Var shared_mlp(Graph& g, Var x, const MlpParams& params);

// Rounds through float storage; parameters are kept on the f32 grid so the
// checkpoint container (f32 payload) is lossless.
inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
void quantize_f32(Tensor& t);

}  // namespace curvewalk

#endif  // CURVEWALK_MLP_HPP_
