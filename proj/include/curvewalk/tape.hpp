#ifndef CURVEWALK_TAPE_HPP_
#define CURVEWALK_TAPE_HPP_

#include <functional>
#include <vector>

#include "curvewalk/rng.hpp"
#include "curvewalk/tensor.hpp"

namespace curvewalk {

class Tape;

// Lightweight handle into a tape node. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in topological order (every input
// precedes its consumer); backward visits them exactly once in reverse.
// A tape and its tensors are confined to a single thread.
class Tape {
 public:
  Var leaf(Tensor value, bool track = true);

  const Tensor& val(Var v) const;
  const Tensor& grad(Var v) const;
  bool tracked(Var v) const;
  bool has_grad(Var v) const;

  // Accumulates dLoss/dnode into every tracked node. Loss must be scalar.
  // Running twice without zero_grad() in between is an error.
  void backward(Var loss);
  void zero_grad();

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  friend struct TapeOps;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool track = false;
    std::function<void(Tape&)> backprop;  // empty for leaves
  };

  Var record(Tensor value, bool track, std::function<void(Tape&)> backprop);
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- recorded operations ---------------------------------------------------
// All take rank-2 operands. Gradients accumulate into tracked inputs.

Var matmul(Var a, Var b);     // [m,k]x[k,n] -> [m,n]
Var matmul_tn(Var a, Var b);  // a^T b: [k,m],[k,n] -> [m,n]
Var matmul_nt(Var a, Var b);  // a b^T: [m,k],[n,k] -> [m,n]

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);  // scale*x + shift
Var add_colvec(Var x, Var b);                   // [C,M] + [C,1] broadcast
Var mul_rowvec(Var x, Var s);                   // [C,M] * [1,M] broadcast

Var gather_cols(Var x, const std::vector<int>& idx);
// y[:,j] = sum_i w[j*g+i] * x[:, idx[j*g+i]]; weights are constants.
Var weighted_gather_cols(Var x, const std::vector<int>& idx,
                         const std::vector<double>& w, int group);
Var concat_rows(Var a, Var b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var x, int r0, int r1);

Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);

// Softmax over each contiguous run of `group` columns, per row.
// group == cols gives a plain per-row softmax. Subtract-max stabilized.
Var softmax_groups(Var x, int group);
Var softmax_cols(Var x);  // per-column softmax over rows

// Deterministic straight-through selection: forward emits the one-hot of the
// argmax in each group (ties -> lowest index); backward applies the softmax
// gradient. NaN logits are an error.
Var hard_softmax_st_groups(Var x, int group);

enum class PoolKind { kMax, kAvg, kSum };
// [R, G*g] -> [R, G]; max routes gradient to the first maximal element.
Var pool_groups(Var x, int group, PoolKind kind);

// Inverted dropout: eval is the identity, training zeroes with probability p
// and scales survivors by 1/(1-p).
Var dropout(Var x, double p, bool training, Rng& rng);

// Per-channel normalization over the column axis with affine parameters;
// statistics always come from the current columns, so eval is deterministic.
Var batchnorm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Mean over the batch of -log softmax(logits)[label]. logits: [classes, B].
Var cross_entropy(Var logits, const std::vector<int>& labels);

// Mean over columns of 1 - |cos(pred_col, target_col)|. Zero-norm prediction
// columns contribute cos = 0. Targets are constants.
Var cosine_error(Var pred, const Tensor& target);

Var normalize_cols(Var x, double eps = 1e-12);
// Cosine similarity per column pair: 1xM row, denominator |a||b| + eps.
Var colwise_cosine(Var a, Var b, double eps = 1e-8);
// Crossover suppression multiplier from cosine scores: 1 at or above
// cos_threshold, otherwise clamp(cos + 1, 0, 1).
Var suppression_from_cos(Var cos_scores, double cos_threshold);

Var sum_all(Var x);
Var mean_all(Var x);

}  // namespace curvewalk

#endif  // CURVEWALK_TAPE_HPP_
