#include "curvewalk/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace curvewalk {

namespace {

// C[m,n] (+)= A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
void mm_tn(const double* a, const double* b, double* c, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

bool any_tracked(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->tracked(v)) return true;
  return false;
}

void check_same_tape(std::initializer_list<Var> vs) {
  const Tape* t = vs.begin()->tape;
  for (Var v : vs) CW_CHECK(v.valid() && v.tape == t, "vars from one tape");
}

}  // namespace

Var Tape::leaf(Tensor value, bool track) {
  return record(std::move(value), track, nullptr);
}

Var Tape::record(Tensor value, bool track, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.track = track;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::val(Var v) const {
  CW_CHECK(v.tape == this && v.id >= 0 && v.id < size(), "bad var");
  return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::tracked(Var v) const {
  CW_CHECK(v.tape == this && v.id >= 0 && v.id < size(), "bad var");
  return nodes_[static_cast<size_t>(v.id)].track;
}

bool Tape::has_grad(Var v) const {
  return nodes_[static_cast<size_t>(v.id)].grad.size() > 0;
}

const Tensor& Tape::grad(Var v) const {
  CW_CHECK(v.tape == this && v.id >= 0 && v.id < size(), "bad var");
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  CW_CHECK(n.grad.size() > 0, "no gradient accumulated for this var");
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  CW_CHECK(loss.tape == this, "loss from another tape");
  CW_CHECK(!backward_done_, "backward already ran; call zero_grad() first");
  CW_CHECK(val(loss).size() == 1, "loss must be scalar");
  CW_CHECK(tracked(loss), "loss does not depend on any tracked leaf");
  backward_done_ = true;
  grad_buf(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.track || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

// ---- op helpers -------------------------------------------------------------

namespace {

struct OpCtx {
  Tape* tape;
  bool track;
};

// Accumulate helper: adds src into the grad buffer of node `id` if tracked.
struct Acc {
  Tape& tape;
  // exposed through friend struct below
};

}  // namespace

struct TapeOps {
  static Var record(Tape& t, Tensor value, bool track,
                    std::function<void(Tape&)> backprop) {
    return t.record(std::move(value), track, std::move(backprop));
  }
  static Tensor& grad_buf(Tape& t, int id) { return t.grad_buf(id); }
  static const Tensor& grad_of(Tape& t, int id) {
    return t.nodes_[static_cast<size_t>(id)].grad;
  }
  static bool node_tracked(Tape& t, int id) {
    return t.nodes_[static_cast<size_t>(id)].track;
  }
  static const Tensor& value_of(Tape& t, int id) {
    return t.nodes_[static_cast<size_t>(id)].value;
  }
};

namespace {

const Tensor& V(Var v) { return v.tape->val(v); }

// Shorthands used inside backprop closures.
Tensor& gbuf(Tape& t, int id) { return TapeOps::grad_buf(t, id); }
const Tensor& gout(Tape& t, int id) { return TapeOps::grad_of(t, id); }
bool trk(Tape& t, int id) { return TapeOps::node_tracked(t, id); }
const Tensor& vof(Tape& t, int id) { return TapeOps::value_of(t, id); }

Var make(Var like, Tensor value, bool track,
         std::function<void(Tape&)> backprop) {
  return TapeOps::record(*like.tape, std::move(value), track,
                         track ? std::move(backprop) : nullptr);
}

}  // namespace

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_tape({a, b});
  const Tensor &av = V(a), &bv = V(b);
  CW_CHECK(av.rank() == 2 && bv.rank() == 2, "matmul needs rank-2 tensors");
  CW_CHECK(av.cols() == bv.rows(), "matmul inner dimensions differ: "
                                       << av.cols() << " vs " << bv.rows());
  const int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  mm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai))
      mm_nt(g.data(), vof(t, bi).data(), gbuf(t, ai).data(), m, n, k);
    if (trk(t, bi))
      mm_tn(vof(t, ai).data(), g.data(), gbuf(t, bi).data(), m, k, n);
  });
}

Var matmul_tn(Var a, Var b) {
  check_same_tape({a, b});
  const Tensor &av = V(a), &bv = V(b);
  CW_CHECK(av.rank() == 2 && bv.rank() == 2, "matmul_tn needs rank-2 tensors");
  CW_CHECK(av.rows() == bv.rows(), "matmul_tn shared dimension differs");
  const int k = av.rows(), m = av.cols(), n = bv.cols();
  Tensor out({m, n});
  mm_tn(av.data(), bv.data(), out.data(), k, m, n);
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai))  // da[k,m] += b[k,n] g[m,n]^T
      mm_nt(vof(t, bi).data(), g.data(), gbuf(t, ai).data(), k, n, m);
    if (trk(t, bi))  // db[k,n] += a[k,m] g[m,n]
      mm_nn(vof(t, ai).data(), g.data(), gbuf(t, bi).data(), k, m, n);
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape({a, b});
  const Tensor &av = V(a), &bv = V(b);
  CW_CHECK(av.rank() == 2 && bv.rank() == 2, "matmul_nt needs rank-2 tensors");
  CW_CHECK(av.cols() == bv.cols(), "matmul_nt shared dimension differs");
  const int m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out({m, n});
  mm_nt(av.data(), bv.data(), out.data(), m, k, n);
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai))  // da[m,k] += g[m,n] b[n,k]
      mm_nn(g.data(), vof(t, bi).data(), gbuf(t, ai).data(), m, n, k);
    if (trk(t, bi))  // db[n,k] += g[m,n]^T a[m,k]
      mm_tn(g.data(), vof(t, ai).data(), gbuf(t, bi).data(), m, n, k);
  });
}

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape({a, b});
  CW_CHECK(V(a).same_shape(V(b)), "add shape mismatch");
  Tensor out = V(a);
  const double* pb = V(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    for (int id : {ai, bi}) {
      if (!trk(t, id)) continue;
      Tensor& d = gbuf(t, id);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  check_same_tape({a, b});
  CW_CHECK(V(a).same_shape(V(b)), "sub shape mismatch");
  Tensor out = V(a);
  const double* pb = V(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai)) {
      Tensor& d = gbuf(t, ai);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (trk(t, bi)) {
      Tensor& d = gbuf(t, bi);
      for (int64_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape({a, b});
  CW_CHECK(V(a).same_shape(V(b)), "mul shape mismatch");
  Tensor out = V(a);
  const double* pb = V(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai)) {
      Tensor& d = gbuf(t, ai);
      const Tensor& bv = vof(t, bi);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (trk(t, bi)) {
      Tensor& d = gbuf(t, bi);
      const Tensor& av = vof(t, ai);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var affine(Var x, double scale, double shift) {
  Tensor out = V(x);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    Tensor& d = gbuf(t, xi);
    for (int64_t i = 0; i < g.size(); ++i) d[i] += scale * g[i];
  });
}

Var add_colvec(Var x, Var b) {
  check_same_tape({x, b});
  const Tensor &xv = V(x), &bv = V(b);
  CW_CHECK(xv.rank() == 2 && bv.rank() == 2 && bv.cols() == 1 &&
               bv.rows() == xv.rows(),
           "add_colvec expects [C,M] and [C,1]");
  Tensor out = xv;
  const int C = xv.rows(), M = xv.cols();
  for (int i = 0; i < C; ++i) {
    const double bias = bv[i];
    for (int j = 0; j < M; ++j) out.at(i, j) += bias;
  }
  const int xi = x.id, bi = b.id, oi = x.tape->size();
  return make(x, std::move(out), any_tracked({x, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, xi)) {
      Tensor& d = gbuf(t, xi);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (trk(t, bi)) {
      Tensor& d = gbuf(t, bi);
      for (int i = 0; i < C; ++i) {
        double s = 0.0;
        for (int j = 0; j < M; ++j) s += g.at(i, j);
        d[i] += s;
      }
    }
  });
}

Var mul_rowvec(Var x, Var s) {
  check_same_tape({x, s});
  const Tensor &xv = V(x), &sv = V(s);
  CW_CHECK(xv.rank() == 2 && sv.rank() == 2 && sv.rows() == 1 &&
               sv.cols() == xv.cols(),
           "mul_rowvec expects [C,M] and [1,M]");
  const int C = xv.rows(), M = xv.cols();
  Tensor out = xv;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < M; ++j) out.at(i, j) *= sv[j];
  const int xi = x.id, si = s.id, oi = x.tape->size();
  return make(x, std::move(out), any_tracked({x, s}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, xi)) {
      Tensor& d = gbuf(t, xi);
      const Tensor& sval = vof(t, si);
      for (int i = 0; i < C; ++i)
        for (int j = 0; j < M; ++j) d.at(i, j) += g.at(i, j) * sval[j];
    }
    if (trk(t, si)) {
      Tensor& d = gbuf(t, si);
      const Tensor& xval = vof(t, xi);
      for (int j = 0; j < M; ++j) {
        double acc = 0.0;
        for (int i = 0; i < C; ++i) acc += g.at(i, j) * xval.at(i, j);
        d[j] += acc;
      }
    }
  });
}

// ---- movement ---------------------------------------------------------------

Var gather_cols(Var x, const std::vector<int>& idx) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2, "gather_cols needs rank-2 input");
  const int C = xv.rows(), M = xv.cols(), J = static_cast<int>(idx.size());
  CW_CHECK(J > 0, "gather_cols with empty index set");
  for (int j : idx) CW_CHECK(j >= 0 && j < M, "gather index out of range");
  Tensor out({C, J});
  for (int i = 0; i < C; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * M;
    double* orow = out.data() + static_cast<size_t>(i) * J;
    for (int j = 0; j < J; ++j) orow[j] = row[idx[static_cast<size_t>(j)]];
  }
  const int xi = x.id, oi = x.tape->size();
  auto saved = idx;
  return make(x, std::move(out), x.tape->tracked(x),
              [=, saved = std::move(saved)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                for (int i = 0; i < C; ++i) {
                  double* drow = d.data() + static_cast<size_t>(i) * M;
                  const double* grow = g.data() + static_cast<size_t>(i) * J;
                  for (int j = 0; j < J; ++j)
                    drow[saved[static_cast<size_t>(j)]] += grow[j];
                }
              });
}

Var weighted_gather_cols(Var x, const std::vector<int>& idx,
                         const std::vector<double>& w, int group) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2, "weighted_gather_cols needs rank-2 input");
  CW_CHECK(group > 0 && idx.size() == w.size() && idx.size() % group == 0,
           "weighted_gather_cols index/weight layout");
  const int C = xv.rows(), M = xv.cols();
  const int D = static_cast<int>(idx.size()) / group;
  for (int j : idx) CW_CHECK(j >= 0 && j < M, "gather index out of range");
  Tensor out({C, D});
  for (int i = 0; i < C; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * M;
    double* orow = out.data() + static_cast<size_t>(i) * D;
    for (int d = 0; d < D; ++d) {
      double s = 0.0;
      for (int g = 0; g < group; ++g) {
        const size_t p = static_cast<size_t>(d) * group + g;
        s += w[p] * row[idx[p]];
      }
      orow[d] = s;
    }
  }
  const int xi = x.id, oi = x.tape->size();
  auto sidx = idx;
  auto sw = w;
  return make(x, std::move(out), x.tape->tracked(x),
              [=, sidx = std::move(sidx), sw = std::move(sw)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                for (int i = 0; i < C; ++i) {
                  double* drow = d.data() + static_cast<size_t>(i) * M;
                  const double* grow = g.data() + static_cast<size_t>(i) * D;
                  for (int dd = 0; dd < D; ++dd)
                    for (int gg = 0; gg < group; ++gg) {
                      const size_t p = static_cast<size_t>(dd) * group + gg;
                      drow[sidx[p]] += sw[p] * grow[dd];
                    }
                }
              });
}

Var concat_rows(Var a, Var b) {
  check_same_tape({a, b});
  const Tensor &av = V(a), &bv = V(b);
  CW_CHECK(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(),
           "concat_rows column mismatch");
  const int Ra = av.rows(), Rb = bv.rows(), M = av.cols();
  Tensor out({Ra + Rb, M});
  std::copy(av.data(), av.data() + av.size(), out.data());
  std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    if (trk(t, ai)) {
      Tensor& d = gbuf(t, ai);
      for (int64_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (trk(t, bi)) {
      Tensor& d = gbuf(t, bi);
      const int64_t off = static_cast<int64_t>(Ra) * M;
      for (int64_t i = 0; i < d.size(); ++i) d[i] += g[off + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  CW_CHECK(!parts.empty(), "concat_cols with no parts");
  Tape* tape = parts[0].tape;
  const int R = V(parts[0]).rows();
  int M = 0;
  bool track = false;
  for (Var p : parts) {
    CW_CHECK(p.tape == tape, "vars from one tape");
    CW_CHECK(V(p).rank() == 2 && V(p).rows() == R, "concat_cols row mismatch");
    M += V(p).cols();
    track = track || tape->tracked(p);
  }
  Tensor out({R, M});
  int col = 0;
  for (Var p : parts) {
    const Tensor& pv = V(p);
    for (int i = 0; i < R; ++i)
      std::copy(pv.data() + static_cast<size_t>(i) * pv.cols(),
                pv.data() + static_cast<size_t>(i + 1) * pv.cols(),
                out.data() + static_cast<size_t>(i) * M + col);
    col += pv.cols();
  }
  std::vector<int> ids, widths;
  for (Var p : parts) {
    ids.push_back(p.id);
    widths.push_back(V(p).cols());
  }
  const int oi = tape->size();
  return TapeOps::record(
      *tape, std::move(out), track,
      !track ? std::function<void(Tape&)>()
             : [=, ids = std::move(ids), widths = std::move(widths)](Tape& t) {
                 const Tensor& g = gout(t, oi);
                 int c0 = 0;
                 for (size_t p = 0; p < ids.size(); ++p) {
                   const int w = widths[p];
                   if (trk(t, ids[p])) {
                     Tensor& d = gbuf(t, ids[p]);
                     for (int i = 0; i < R; ++i)
                       for (int j = 0; j < w; ++j)
                         d.at(i, j) += g.at(i, c0 + j);
                   }
                   c0 += w;
                 }
               });
}

Var slice_rows(Var x, int r0, int r1) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= xv.rows(),
           "slice_rows range");
  const int M = xv.cols();
  Tensor out({r1 - r0, M});
  std::copy(xv.data() + static_cast<size_t>(r0) * M,
            xv.data() + static_cast<size_t>(r1) * M, out.data());
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    Tensor& d = gbuf(t, xi);
    for (int64_t i = 0; i < g.size(); ++i)
      d[static_cast<int64_t>(r0) * M + i] += g[i];
  });
}

// ---- nonlinearities ---------------------------------------------------------

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var leaky_relu(Var x, double slope) {
  Tensor out = V(x);
  for (int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] *= slope;
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    const Tensor& xv = vof(t, xi);
    Tensor& d = gbuf(t, xi);
    for (int64_t i = 0; i < g.size(); ++i)
      d[i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
  });
}

Var sigmoid(Var x) {
  Tensor out = V(x);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    const Tensor& y = vof(t, oi);
    Tensor& d = gbuf(t, xi);
    for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// ---- softmax family ---------------------------------------------------------

namespace {

void softmax_segment(const double* x, double* y, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (int i = 0; i < n; ++i) y[i] /= sum;
}

// dx = y .* (g - sum(g .* y)) within a segment
void softmax_segment_grad(const double* y, const double* g, double* dx, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += g[i] * y[i];
  for (int i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
}

}  // namespace

Var softmax_groups(Var x, int group) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2 && group > 0 && xv.cols() % group == 0,
           "softmax_groups: cols must divide by group");
  const int R = xv.rows(), M = xv.cols(), G = M / group;
  Tensor out({R, M});
  for (int i = 0; i < R; ++i)
    for (int s = 0; s < G; ++s)
      softmax_segment(xv.data() + static_cast<size_t>(i) * M + s * group,
                      out.data() + static_cast<size_t>(i) * M + s * group,
                      group);
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    const Tensor& y = vof(t, oi);
    Tensor& d = gbuf(t, xi);
    for (int i = 0; i < R; ++i)
      for (int s = 0; s < G; ++s) {
        const size_t off = static_cast<size_t>(i) * M + s * group;
        softmax_segment_grad(y.data() + off, g.data() + off, d.data() + off,
                             group);
      }
  });
}

Var softmax_cols(Var x) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2, "softmax_cols needs rank-2 input");
  const int R = xv.rows(), M = xv.cols();
  Tensor out({R, M});
  std::vector<double> col(static_cast<size_t>(R)), soft(static_cast<size_t>(R));
  for (int j = 0; j < M; ++j) {
    for (int i = 0; i < R; ++i) col[static_cast<size_t>(i)] = xv.at(i, j);
    softmax_segment(col.data(), soft.data(), R);
    for (int i = 0; i < R; ++i) out.at(i, j) = soft[static_cast<size_t>(i)];
  }
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
    const Tensor& g = gout(t, oi);
    const Tensor& y = vof(t, oi);
    Tensor& d = gbuf(t, xi);
    for (int j = 0; j < M; ++j) {
      double dot = 0.0;
      for (int i = 0; i < R; ++i) dot += g.at(i, j) * y.at(i, j);
      for (int i = 0; i < R; ++i)
        d.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var hard_softmax_st_groups(Var x, int group) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2 && group > 0 && xv.cols() % group == 0,
           "hard_softmax_st_groups: cols must divide by group");
  const int R = xv.rows(), M = xv.cols(), G = M / group;
  Tensor out({R, M});
  Tensor soft({R, M});
  for (int i = 0; i < R; ++i)
    for (int s = 0; s < G; ++s) {
      const size_t off = static_cast<size_t>(i) * M + s * group;
      const double* seg = xv.data() + off;
      int best = 0;
      for (int j = 0; j < group; ++j) {
        CW_CHECK(!std::isnan(seg[j]), "NaN logit in straight-through selection");
        if (seg[j] > seg[best]) best = j;  // ties keep the lowest index
      }
      out.data()[off + best] = 1.0;
      softmax_segment(seg, soft.data() + off, group);
    }
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x),
              [=, soft = std::move(soft)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                for (int i = 0; i < R; ++i)
                  for (int s = 0; s < G; ++s) {
                    const size_t off = static_cast<size_t>(i) * M + s * group;
                    softmax_segment_grad(soft.data() + off, g.data() + off,
                                         d.data() + off, group);
                  }
              });
}

// ---- pooling ----------------------------------------------------------------

Var pool_groups(Var x, int group, PoolKind kind) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2 && group > 0 && xv.cols() % group == 0,
           "pool_groups: cols must divide by group");
  const int R = xv.rows(), M = xv.cols(), G = M / group;
  Tensor out({R, G});
  std::vector<int> argmax;
  if (kind == PoolKind::kMax) argmax.assign(static_cast<size_t>(R) * G, 0);
  for (int i = 0; i < R; ++i)
    for (int s = 0; s < G; ++s) {
      const double* seg = xv.data() + static_cast<size_t>(i) * M + s * group;
      if (kind == PoolKind::kMax) {
        int best = 0;
        for (int j = 1; j < group; ++j)
          if (seg[j] > seg[best]) best = j;
        out.at(i, s) = seg[best];
        argmax[static_cast<size_t>(i) * G + s] = best;
      } else {
        double acc = 0.0;
        for (int j = 0; j < group; ++j) acc += seg[j];
        out.at(i, s) = kind == PoolKind::kAvg ? acc / group : acc;
      }
    }
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x),
              [=, argmax = std::move(argmax)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                const double scale = kind == PoolKind::kAvg ? 1.0 / group : 1.0;
                for (int i = 0; i < R; ++i)
                  for (int s = 0; s < G; ++s) {
                    double* dseg =
                        d.data() + static_cast<size_t>(i) * M + s * group;
                    const double gv = g.at(i, s);
                    if (kind == PoolKind::kMax) {
                      dseg[argmax[static_cast<size_t>(i) * G + s]] += gv;
                    } else {
                      for (int j = 0; j < group; ++j) dseg[j] += gv * scale;
                    }
                  }
              });
}

// ---- regularization ---------------------------------------------------------

Var dropout(Var x, double p, bool training, Rng& rng) {
  CW_CHECK(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1)");
  if (!training || p == 0.0) {
    // Identity in eval mode; recorded as a pass-through node.
    Tensor out = V(x);
    const int xi = x.id, oi = x.tape->size();
    return make(x, std::move(out), x.tape->tracked(x), [=](Tape& t) {
      const Tensor& g = gout(t, oi);
      Tensor& d = gbuf(t, xi);
      for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  const double keep = 1.0 - p;
  Tensor out = V(x);
  std::vector<double> mask(static_cast<size_t>(out.size()));
  for (int64_t i = 0; i < out.size(); ++i) {
    mask[static_cast<size_t>(i)] = rng.uniform() < p ? 0.0 : 1.0 / keep;
    out[i] *= mask[static_cast<size_t>(i)];
  }
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x),
              [=, mask = std::move(mask)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                for (int64_t i = 0; i < g.size(); ++i)
                  d[i] += g[i] * mask[static_cast<size_t>(i)];
              });
}

Var batchnorm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape({x, gamma, beta});
  const Tensor& xv = V(x);
  const int C = xv.rows(), M = xv.cols();
  CW_CHECK(V(gamma).rows() == C && V(gamma).cols() == 1 &&
               V(beta).rows() == C && V(beta).cols() == 1,
           "batchnorm affine parameters must be [C,1]");
  Tensor xhat({C, M});
  Tensor invstd({C, 1});
  Tensor out({C, M});
  for (int i = 0; i < C; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * M;
    double mean = 0.0;
    for (int j = 0; j < M; ++j) mean += row[j];
    mean /= M;
    double var = 0.0;
    for (int j = 0; j < M; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= M;
    const double is = 1.0 / std::sqrt(var + eps);
    invstd[i] = is;
    const double g = V(gamma)[i], b = V(beta)[i];
    for (int j = 0; j < M; ++j) {
      const double h = (row[j] - mean) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = g * h + b;
    }
  }
  const int xi = x.id, gi = gamma.id, bi = beta.id, oi = x.tape->size();
  return make(x, std::move(out), any_tracked({x, gamma, beta}),
              [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t) {
                const Tensor& g = gout(t, oi);
                const Tensor& gam = vof(t, gi);
                for (int i = 0; i < C; ++i) {
                  double sum_g = 0.0, sum_gx = 0.0;
                  for (int j = 0; j < M; ++j) {
                    sum_g += g.at(i, j);
                    sum_gx += g.at(i, j) * xhat.at(i, j);
                  }
                  if (trk(t, gi)) gbuf(t, gi)[i] += sum_gx;
                  if (trk(t, bi)) gbuf(t, bi)[i] += sum_g;
                  if (trk(t, xi)) {
                    Tensor& d = gbuf(t, xi);
                    const double k = gam[i] * invstd[i];
                    for (int j = 0; j < M; ++j)
                      d.at(i, j) += k * (g.at(i, j) - sum_g / M -
                                         xhat.at(i, j) * sum_gx / M);
                  }
                }
              });
}

// ---- losses -----------------------------------------------------------------

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& z = V(logits);
  CW_CHECK(z.rank() == 2, "cross_entropy expects [classes, batch] logits");
  const int K = z.rows(), B = z.cols();
  CW_CHECK(static_cast<int>(labels.size()) == B, "label count != batch");
  for (int y : labels) CW_CHECK(y >= 0 && y < K, "label out of range");
  Tensor soft({K, B});
  std::vector<double> col(static_cast<size_t>(K)), s(static_cast<size_t>(K));
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < K; ++i) mx = std::max(mx, z.at(i, b));
    double sum = 0.0;
    for (int i = 0; i < K; ++i) sum += std::exp(z.at(i, b) - mx);
    const double lse = mx + std::log(sum);
    loss += lse - z.at(labels[static_cast<size_t>(b)], b);
    for (int i = 0; i < K; ++i) soft.at(i, b) = std::exp(z.at(i, b) - lse);
  }
  loss /= B;
  const int zi = logits.id, oi = logits.tape->size();
  auto lab = labels;
  return make(logits, Tensor::scalar(loss), logits.tape->tracked(logits),
              [=, soft = std::move(soft), lab = std::move(lab)](Tape& t) {
                const double g = gout(t, oi)[0];
                Tensor& d = gbuf(t, zi);
                for (int b = 0; b < B; ++b)
                  for (int i = 0; i < K; ++i) {
                    double v = soft.at(i, b);
                    if (i == lab[static_cast<size_t>(b)]) v -= 1.0;
                    d.at(i, b) += g * v / B;
                  }
              });
}

Var cosine_error(Var pred, const Tensor& target) {
  const Tensor& pv = V(pred);
  CW_CHECK(pv.rank() == 2 && target.same_shape(pv), "cosine_error shapes");
  const int C = pv.rows(), P = pv.cols();
  double err = 0.0;
  std::vector<double> cosv(static_cast<size_t>(P)), normp(static_cast<size_t>(P)),
      normt(static_cast<size_t>(P));
  for (int j = 0; j < P; ++j) {
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (int i = 0; i < C; ++i) {
      dot += pv.at(i, j) * target.at(i, j);
      np += pv.at(i, j) * pv.at(i, j);
      nt += target.at(i, j) * target.at(i, j);
    }
    np = std::sqrt(np);
    nt = std::sqrt(nt);
    double c = (np < 1e-12 || nt < 1e-12) ? 0.0 : dot / (np * nt);
    cosv[static_cast<size_t>(j)] = c;
    normp[static_cast<size_t>(j)] = np;
    normt[static_cast<size_t>(j)] = nt;
    err += 1.0 - std::fabs(c);
  }
  err /= P;
  const int pi = pred.id, oi = pred.tape->size();
  Tensor tgt = target;
  return make(pred, Tensor::scalar(err), pred.tape->tracked(pred),
              [=, cosv = std::move(cosv), normp = std::move(normp),
               normt = std::move(normt), tgt = std::move(tgt)](Tape& t) {
                const double g = gout(t, oi)[0];
                const Tensor& p = vof(t, pi);
                Tensor& d = gbuf(t, pi);
                for (int j = 0; j < P; ++j) {
                  const double np = normp[static_cast<size_t>(j)];
                  const double nt = normt[static_cast<size_t>(j)];
                  const double c = cosv[static_cast<size_t>(j)];
                  if (np < 1e-12 || nt < 1e-12 || c == 0.0) continue;
                  const double sgn = c > 0.0 ? 1.0 : -1.0;
                  // d/dp of cos = t/(np*nt) - cos * p/np^2
                  for (int i = 0; i < C; ++i)
                    d.at(i, j) += g * (-sgn / P) *
                                  (tgt.at(i, j) / (np * nt) -
                                   c * p.at(i, j) / (np * np));
                }
              });
}

// ---- geometry helpers on tape -----------------------------------------------

Var normalize_cols(Var x, double eps) {
  const Tensor& xv = V(x);
  CW_CHECK(xv.rank() == 2, "normalize_cols needs rank-2 input");
  const int C = xv.rows(), P = xv.cols();
  Tensor out({C, P});
  std::vector<double> norms(static_cast<size_t>(P));
  for (int j = 0; j < P; ++j) {
    double n = 0.0;
    for (int i = 0; i < C; ++i) n += xv.at(i, j) * xv.at(i, j);
    n = std::sqrt(n);
    norms[static_cast<size_t>(j)] = n;
    const double den = n + eps;
    for (int i = 0; i < C; ++i) out.at(i, j) = xv.at(i, j) / den;
  }
  const int xi = x.id, oi = x.tape->size();
  return make(x, std::move(out), x.tape->tracked(x),
              [=, norms = std::move(norms)](Tape& t) {
                const Tensor& g = gout(t, oi);
                const Tensor& xval = vof(t, xi);
                Tensor& d = gbuf(t, xi);
                for (int j = 0; j < P; ++j) {
                  const double n = norms[static_cast<size_t>(j)];
                  const double den = n + eps;
                  double dot = 0.0;
                  for (int i = 0; i < C; ++i) dot += g.at(i, j) * xval.at(i, j);
                  for (int i = 0; i < C; ++i) {
                    double dv = g.at(i, j) / den;
                    if (n > 1e-300)
                      dv -= xval.at(i, j) * dot / (n * den * den);
                    d.at(i, j) += dv;
                  }
                }
              });
}

Var colwise_cosine(Var a, Var b, double eps) {
  check_same_tape({a, b});
  const Tensor &av = V(a), &bv = V(b);
  CW_CHECK(av.same_shape(bv) && av.rank() == 2, "colwise_cosine shapes");
  const int C = av.rows(), M = av.cols();
  Tensor out({1, M});
  std::vector<double> na(static_cast<size_t>(M)), nb(static_cast<size_t>(M)),
      dots(static_cast<size_t>(M));
  for (int j = 0; j < M; ++j) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (int i = 0; i < C; ++i) {
      dot += av.at(i, j) * bv.at(i, j);
      sa += av.at(i, j) * av.at(i, j);
      sb += bv.at(i, j) * bv.at(i, j);
    }
    na[static_cast<size_t>(j)] = std::sqrt(sa);
    nb[static_cast<size_t>(j)] = std::sqrt(sb);
    dots[static_cast<size_t>(j)] = dot;
    out[j] = dot / (na[static_cast<size_t>(j)] * nb[static_cast<size_t>(j)] + eps);
  }
  const int ai = a.id, bi = b.id, oi = a.tape->size();
  return make(a, std::move(out), any_tracked({a, b}),
              [=, na = std::move(na), nb = std::move(nb),
               dots = std::move(dots)](Tape& t) {
                const Tensor& g = gout(t, oi);
                const Tensor& aval = vof(t, ai);
                const Tensor& bval = vof(t, bi);
                for (int j = 0; j < M; ++j) {
                  const double gq = g[j];
                  if (gq == 0.0) continue;
                  const double nja = na[static_cast<size_t>(j)];
                  const double njb = nb[static_cast<size_t>(j)];
                  const double den = nja * njb + eps;
                  const double s = dots[static_cast<size_t>(j)];
                  if (trk(t, ai)) {
                    Tensor& d = gbuf(t, ai);
                    for (int i = 0; i < C; ++i) {
                      double dv = bval.at(i, j) / den;
                      if (nja > 1e-300)
                        dv -= s * njb * aval.at(i, j) / (den * den * nja);
                      d.at(i, j) += gq * dv;
                    }
                  }
                  if (trk(t, bi)) {
                    Tensor& d = gbuf(t, bi);
                    for (int i = 0; i < C; ++i) {
                      double dv = aval.at(i, j) / den;
                      if (njb > 1e-300)
                        dv -= s * nja * bval.at(i, j) / (den * den * njb);
                      d.at(i, j) += gq * dv;
                    }
                  }
                }
              });
}

Var suppression_from_cos(Var cos_scores, double cos_threshold) {
  const Tensor& cv = V(cos_scores);
  Tensor out = cv;
  std::vector<double> slope(static_cast<size_t>(cv.size()), 0.0);
  for (int64_t i = 0; i < cv.size(); ++i) {
    const double c = cv[i];
    if (c >= cos_threshold) {
      out[i] = 1.0;
    } else {
      const double shifted = c + 1.0;
      if (shifted <= 0.0) {
        out[i] = 0.0;
      } else if (shifted >= 1.0) {
        out[i] = 1.0;
      } else {
        out[i] = shifted;
        slope[static_cast<size_t>(i)] = 1.0;
      }
    }
  }
  const int xi = cos_scores.id, oi = cos_scores.tape->size();
  return make(cos_scores, std::move(out), cos_scores.tape->tracked(cos_scores),
              [=, slope = std::move(slope)](Tape& t) {
                const Tensor& g = gout(t, oi);
                Tensor& d = gbuf(t, xi);
                for (int64_t i = 0; i < g.size(); ++i)
                  d[i] += g[i] * slope[static_cast<size_t>(i)];
              });
}

// ---- reductions -------------------------------------------------------------

Var sum_all(Var x) {
  const Tensor& xv = V(x);
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  const int xi = x.id, oi = x.tape->size();
  return make(x, Tensor::scalar(s), x.tape->tracked(x), [=](Tape& t) {
    const double g = gout(t, oi)[0];
    Tensor& d = gbuf(t, xi);
    for (int64_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

Var mean_all(Var x) {
  const int64_t n = V(x).size();
  return affine(sum_all(x), 1.0 / static_cast<double>(n), 0.0);
}

}  // namespace curvewalk
