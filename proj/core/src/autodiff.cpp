#include "mhad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mhad::ad {

std::string_view to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::leaf: return "leaf";
    case PrimitiveKind::matmul: return "matmul";
    case PrimitiveKind::add: return "add";
    case PrimitiveKind::mul: return "mul";
    case PrimitiveKind::scale: return "scale";
    case PrimitiveKind::concat: return "concat";
    case PrimitiveKind::slice: return "slice";
    case PrimitiveKind::tanh: return "tanh";
    case PrimitiveKind::sigmoid: return "sigmoid";
    case PrimitiveKind::softmax_rows: return "softmax_rows";
    case PrimitiveKind::dropout_mask: return "dropout_mask";
    case PrimitiveKind::sum: return "sum";
    case PrimitiveKind::mean: return "mean";
    case PrimitiveKind::square: return "square";
    case PrimitiveKind::dot: return "dot";
    case PrimitiveKind::bce: return "bce";
    case PrimitiveKind::sum_rows: return "sum_rows";
    case PrimitiveKind::gather_rows: return "gather_rows";
    case PrimitiveKind::transpose: return "transpose";
    case PrimitiveKind::reshape: return "reshape";
    case PrimitiveKind::weighted_rows: return "weighted_rows";
    case PrimitiveKind::custom: return "custom";
  }
  return "unknown";
}

namespace {

template <typename T>
[[noreturn]] void shape_error(PrimitiveKind kind, std::initializer_list<const Tensor<T>*> shapes,
                              std::string_view detail = {}) {
  std::ostringstream os;
  os << to_string(kind) << ": shape mismatch";
  for (const auto* t : shapes) os << ' ' << t->shape_string();
  if (!detail.empty()) os << " (" << detail << ')';
  throw AutodiffError(os.str());
}

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (!a.valid() || a.tape() != b.tape()) throw AutodiffError("operands recorded on different tapes");
  return *a.tape();
}

template <typename T>
[[nodiscard]] bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> Gradients<T>::of(const Var<T>& v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor<T>::zeros_like(v.value());
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (!all_finite(value)) throw AutodiffError("leaf: non-finite value");
  Record r;
  r.kind = PrimitiveKind::leaf;
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  records_.push_back(std::move(r));
  return Var<T>(this, records_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(PrimitiveKind kind, Tensor<T> value, std::vector<std::size_t> inputs,
                       BackwardFn backward) {
  if (!all_finite(value)) {
    throw AutodiffError(std::string(to_string(kind)) + ": non-finite output " + value.shape_string());
  }
  Record r;
  r.kind = kind;
  r.value = std::move(value);
  for (auto id : inputs) {
    if (id >= records_.size()) throw AutodiffError("record input is not on this tape");
    r.requires_grad = r.requires_grad || records_[id].requires_grad;
  }
  r.inputs = std::move(inputs);
  if (r.requires_grad) r.backward = std::move(backward);
  records_.push_back(std::move(r));
  return Var<T>(this, records_.size() - 1);
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& root) const {
  if (root.tape() != this) throw AutodiffError("backward: root is not on this tape");
  const auto& rv = records_.at(root.id()).value;
  if (rv.size() != 1) throw AutodiffError("backward: root must be scalar, got " + rv.shape_string());

  std::vector<Tensor<T>> grads(records_.size());
  grads[root.id()] = Tensor<T>::scalar(T(1));
  std::vector<Tensor<T>*> slots;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Record& r = records_[id];
    if (!r.requires_grad || !r.backward || grads[id].empty()) continue;
    slots.assign(r.inputs.size(), nullptr);
    for (std::size_t k = 0; k < r.inputs.size(); ++k) {
      const auto in = r.inputs[k];
      if (!records_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor<T>::zeros_like(records_[in].value);
      slots[k] = &grads[in];
    }
    r.backward(grads[id], std::span<Tensor<T>* const>(slots));
  }
  return Gradients<T>(this, std::move(grads));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) shape_error<T>(PrimitiveKind::matmul, {&A, &B}, "inner dims differ");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> C(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A(i, p);
      if (av == T(0)) continue;
      const T* bp = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * bp[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  Tape<T>* tp = &tape;
  return tape.record(PrimitiveKind::matmul, std::move(C), {ia, ib},
                     [tp, ia, ib, m, k, n](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       const auto& A = tp->at(ia).value;
                       const auto& B = tp->at(ib).value;
                       if (gin[0]) {
                         auto& dA = *gin[0];
                         for (std::size_t i = 0; i < m; ++i) {
                           const T* g = G.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const T* bp = B.data() + p * n;
                             T acc = 0;
                             for (std::size_t j = 0; j < n; ++j) acc += g[j] * bp[j];
                             dA(i, p) += acc;
                           }
                         }
                       }
                       if (gin[1]) {
                         auto& dB = *gin[1];
                         for (std::size_t i = 0; i < m; ++i) {
                           const T* g = G.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const T av = A(i, p);
                             if (av == T(0)) continue;
                             T* db = dB.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j) db[j] += av * g[j];
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const bool broadcast = !A.same_shape(B);
  if (broadcast && !(B.rows() == 1 && B.cols() == A.cols())) shape_error<T>(PrimitiveKind::add, {&A, &B});
  Tensor<T> out = A;
  const std::size_t n = A.cols();
  if (!broadcast) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  } else {
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) out(r, c) += B[c];
  }
  return tape.record(PrimitiveKind::add, std::move(out), {a.id(), b.id()},
                     [broadcast, n](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       if (gin[0]) {
                         for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += G[i];
                       }
                       if (gin[1]) {
                         if (!broadcast) {
                           for (std::size_t i = 0; i < G.size(); ++i) (*gin[1])[i] += G[i];
                         } else {
                           for (std::size_t r = 0; r < G.rows(); ++r)
                             for (std::size_t c = 0; c < n; ++c) (*gin[1])[c] += G(r, c);
                         }
                       }
                     });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) shape_error<T>(PrimitiveKind::mul, {&A, &B});
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const auto ia = a.id(), ib = b.id();
  Tape<T>* tp = &tape;
  return tape.record(PrimitiveKind::mul, std::move(out), {ia, ib},
                     [tp, ia, ib](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       const auto& A = tp->at(ia).value;
                       const auto& B = tp->at(ib).value;
                       if (gin[0])
                         for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += G[i] * B[i];
                       if (gin[1])
                         for (std::size_t i = 0; i < G.size(); ++i) (*gin[1])[i] += G[i] * A[i];
                     });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape()->record(PrimitiveKind::scale, std::move(out), {a.id()},
                          [factor](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += factor * G[i];
                          });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw AutodiffError("concat: no inputs");
  if (axis != 0 && axis != 1) throw AutodiffError("concat: axis must be 0 or 1");
  Tape<T>& tape = *parts[0].tape();
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    const auto& v = p.value();
    if (axis == 0) {
      if (ids.empty()) cols = v.cols();
      if (v.cols() != cols) shape_error<T>(PrimitiveKind::concat, {&parts[0].value(), &v}, "axis 0");
      rows += v.rows();
      extents.push_back(v.rows());
    } else {
      if (ids.empty()) rows = v.rows();
      if (v.rows() != rows) shape_error<T>(PrimitiveKind::concat, {&parts[0].value(), &v}, "axis 1");
      cols += v.cols();
      extents.push_back(v.cols());
    }
    ids.push_back(p.id());
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (axis == 0) {
      std::copy(v.values().begin(), v.values().end(), out.data() + offset * cols);
      offset += v.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(v.row(r).begin(), v.row(r).end(), out.data() + r * cols + offset);
      offset += v.cols();
    }
  }
  return tape.record(PrimitiveKind::concat, std::move(out), ids,
                     [axis, extents, cols](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < extents.size(); ++k) {
                         if (gin[k]) {
                           auto& d = *gin[k];
                           if (axis == 0) {
                             const T* g = G.data() + off * cols;
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                           } else {
                             for (std::size_t r = 0; r < d.rows(); ++r)
                               for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += G(r, off + c);
                           }
                         }
                         off += extents[k];
                       }
                     });
}

template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  const std::size_t extent = axis == 0 ? A.rows() : A.cols();
  if ((axis != 0 && axis != 1) || begin >= end || end > extent) {
    shape_error<T>(PrimitiveKind::slice, {&A},
                   "axis " + std::to_string(axis) + " range " + std::to_string(begin) + ":" + std::to_string(end));
  }
  Tensor<T> out = axis == 0 ? Tensor<T>(end - begin, A.cols()) : Tensor<T>(A.rows(), end - begin);
  if (axis == 0) {
    std::copy(A.data() + begin * A.cols(), A.data() + end * A.cols(), out.data());
  } else {
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = A(r, c);
  }
  return a.tape()->record(PrimitiveKind::slice, std::move(out), {a.id()},
                          [axis, begin](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            auto& d = *gin[0];
                            if (axis == 0) {
                              T* dst = d.data() + begin * d.cols();
                              for (std::size_t i = 0; i < G.size(); ++i) dst[i] += G[i];
                            } else {
                              for (std::size_t r = 0; r < G.rows(); ++r)
                                for (std::size_t c = 0; c < G.cols(); ++c) d(r, begin + c) += G(r, c);
                            }
                          });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  auto* tp = a.tape();
  const std::size_t self = tp->size();
  return tp->record(PrimitiveKind::tanh, std::move(out), {a.id()},
                    [tp, self](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                      const auto& Y = tp->at(self).value;
                      for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += G[i] * (T(1) - Y[i] * Y[i]);
                    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = stable_sigmoid(v);
  auto* tp = a.tape();
  const std::size_t self = tp->size();
  return tp->record(PrimitiveKind::sigmoid, std::move(out), {a.id()},
                    [tp, self](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                      const auto& Y = tp->at(self).value;
                      for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += G[i] * Y[i] * (T(1) - Y[i]);
                    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a, const std::vector<std::uint8_t>* mask) {
  const auto& A = a.value();
  if (A.rows() == 0 || A.cols() == 0) shape_error<T>(PrimitiveKind::softmax_rows, {&A}, "empty input");
  if (mask && mask->size() != A.size()) shape_error<T>(PrimitiveKind::softmax_rows, {&A}, "mask size differs");
  Tensor<T> out(A.rows(), A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto keep = [&](std::size_t c) { return !mask || (*mask)[r * A.cols() + c] != 0; };
    bool any = false;
    T mx = T(0);
    for (std::size_t c = 0; c < A.cols(); ++c) {
      if (!keep(c)) continue;
      mx = any ? std::max(mx, A(r, c)) : A(r, c);
      any = true;
    }
    if (!any) {
      out(r, 0) = T(1);
      continue;
    }
    T total = 0;
    for (std::size_t c = 0; c < A.cols(); ++c) {
      if (!keep(c)) continue;
      out(r, c) = std::exp(A(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) /= total;
  }
  auto* tp = a.tape();
  const std::size_t self = tp->size();
  return tp->record(PrimitiveKind::softmax_rows, std::move(out), {a.id()},
                    [tp, self](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                      const auto& Y = tp->at(self).value;
                      auto& d = *gin[0];
                      for (std::size_t r = 0; r < Y.rows(); ++r) {
                        T inner = 0;
                        for (std::size_t c = 0; c < Y.cols(); ++c) inner += G(r, c) * Y(r, c);
                        for (std::size_t c = 0; c < Y.cols(); ++c) d(r, c) += Y(r, c) * (G(r, c) - inner);
                      }
                    });
}

template <typename T>
Var<T> apply_dropout_mask(const Var<T>& a, const std::vector<std::uint8_t>& keep, double rate) {
  const auto& A = a.value();
  if (keep.size() != A.size()) shape_error<T>(PrimitiveKind::dropout_mask, {&A}, "mask size differs");
  if (rate < 0.0 || rate >= 1.0) throw AutodiffError("dropout_mask: rate must be in [0, 1)");
  const T factor = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? out[i] * factor : T(0);
  return a.tape()->record(PrimitiveKind::dropout_mask, std::move(out), {a.id()},
                          [keep, factor](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            for (std::size_t i = 0; i < G.size(); ++i)
                              if (keep[i]) (*gin[0])[i] += G[i] * factor;
                          });
}

template <typename T>
Var<T> dropout(const Var<T>& a, double rate, Rng& rng) {
  std::vector<std::uint8_t> keep(a.value().size());
  for (auto& k : keep) k = rng.bernoulli(1.0 - rate) ? 1 : 0;
  return apply_dropout_mask(a, keep, rate);
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return a.tape()->record(PrimitiveKind::sum, Tensor<T>::scalar(total), {a.id()},
                          [](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            const T g = G[0];
                            for (auto& v : gin[0]->values()) v += g;
                          });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw AutodiffError("mean: empty input");
  T total = 0;
  for (T v : a.value().values()) total += v;
  return a.tape()->record(PrimitiveKind::mean, Tensor<T>::scalar(total / static_cast<T>(n)), {a.id()},
                          [n](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            const T g = G[0] / static_cast<T>(n);
                            for (auto& v : gin[0]->values()) v += g;
                          });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= v;
  auto* tp = a.tape();
  const auto ia = a.id();
  return tp->record(PrimitiveKind::square, std::move(out), {ia},
                    [tp, ia](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                      const auto& A = tp->at(ia).value;
                      for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += T(2) * A[i] * G[i];
                    });
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.size() != B.size()) shape_error<T>(PrimitiveKind::dot, {&A, &B});
  T total = 0;
  for (std::size_t i = 0; i < A.size(); ++i) total += A[i] * B[i];
  const auto ia = a.id(), ib = b.id();
  Tape<T>* tp = &tape;
  return tape.record(PrimitiveKind::dot, Tensor<T>::scalar(total), {ia, ib},
                     [tp, ia, ib](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       const auto& A = tp->at(ia).value;
                       const auto& B = tp->at(ib).value;
                       const T g = G[0];
                       if (gin[0])
                         for (std::size_t i = 0; i < A.size(); ++i) (*gin[0])[i] += g * B[i];
                       if (gin[1])
                         for (std::size_t i = 0; i < A.size(); ++i) (*gin[1])[i] += g * A[i];
                     });
}

template <typename T>
Var<T> bce(const Var<T>& prob, std::span<const std::uint8_t> targets) {
  const auto& P = prob.value();
  if (P.size() != targets.size() || P.size() == 0) {
    shape_error<T>(PrimitiveKind::bce, {&P}, std::to_string(targets.size()) + " targets");
  }
  const T lo = static_cast<T>(kProbEpsilon);
  const T hi = T(1) - lo;
  const std::size_t n = P.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = std::clamp(P[i], lo, hi);
    total -= targets[i] ? std::log(p) : std::log(T(1) - p);
  }
  std::vector<std::uint8_t> y(targets.begin(), targets.end());
  auto* tp = prob.tape();
  const auto ip = prob.id();
  return tp->record(PrimitiveKind::bce, Tensor<T>::scalar(total / static_cast<T>(n)), {ip},
                    [tp, ip, y = std::move(y), lo, hi, n](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                      const auto& P = tp->at(ip).value;
                      const T g = G[0] / static_cast<T>(n);
                      for (std::size_t i = 0; i < n; ++i) {
                        const T p = std::clamp(P[i], lo, hi);
                        (*gin[0])[i] += y[i] ? -g / p : g / (T(1) - p);
                      }
                    });
}

template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  const auto& A = a.value();
  Tensor<T> out(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    T total = 0;
    for (T v : A.row(r)) total += v;
    out[r] = total;
  }
  return a.tape()->record(PrimitiveKind::sum_rows, std::move(out), {a.id()},
                          [](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            auto& d = *gin[0];
                            for (std::size_t r = 0; r < d.rows(); ++r)
                              for (auto& v : d.row(r)) v += G[r];
                          });
}

namespace {

template <typename T>
Tensor<T> gather_values(const Tensor<T>& table, std::span<const std::int32_t> indices) {
  const std::size_t cols = table.cols();
  Tensor<T> out(indices.size(), cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto idx = indices[r];
    if (idx < 0 || static_cast<std::size_t>(idx) >= table.rows()) {
      throw AutodiffError("gather_rows: index " + std::to_string(idx) + " out of range for " + table.shape_string());
    }
    std::copy(table.row(idx).begin(), table.row(idx).end(), out.data() + r * cols);
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> indices) {
  Tensor<T> out = gather_values(table.value(), indices);
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return table.tape()->record(PrimitiveKind::gather_rows, std::move(out), {table.id()},
                              [idx = std::move(idx)](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                                auto& d = *gin[0];
                                for (std::size_t r = 0; r < idx.size(); ++r) {
                                  auto dst = d.row(idx[r]);
                                  auto src = G.row(r);
                                  for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                                }
                              });
}

template <typename T>
Var<T> gather_rows(Tape<T>& tape, const Tensor<T>& table, std::span<const std::int32_t> indices) {
  return tape.record(PrimitiveKind::gather_rows, gather_values(table, indices), {}, {});
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const auto& A = a.value();
  Tensor<T> out(A.cols(), A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(c, r) = A(r, c);
  return a.tape()->record(PrimitiveKind::transpose, std::move(out), {a.id()},
                          [](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            auto& d = *gin[0];
                            for (std::size_t r = 0; r < G.rows(); ++r)
                              for (std::size_t c = 0; c < G.cols(); ++c) d(c, r) += G(r, c);
                          });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::size_t rows, std::size_t cols) {
  const auto& A = a.value();
  if (rows * cols != A.size()) {
    shape_error<T>(PrimitiveKind::reshape, {&A}, "to " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Tensor<T> out = A;
  out.reshape(rows, cols);
  return a.tape()->record(PrimitiveKind::reshape, std::move(out), {a.id()},
                          [](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                            for (std::size_t i = 0; i < G.size(); ++i) (*gin[0])[i] += G[i];
                          });
}

template <typename T>
Var<T> weighted_rows(const Var<T>& weights, const Var<T>& states) {
  auto& tape = same_tape(weights, states);
  const auto& W = weights.value();
  const auto& S = states.value();
  const std::size_t batch = W.rows(), steps = W.cols(), width = S.cols();
  if (S.rows() != batch * steps) shape_error<T>(PrimitiveKind::weighted_rows, {&W, &S}, "states must be (L*B) rows");
  Tensor<T> out(batch, width);
  for (std::size_t l = 0; l < steps; ++l) {
    for (std::size_t b = 0; b < batch; ++b) {
      const T w = W(b, l);
      if (w == T(0)) continue;
      const T* s = S.data() + (l * batch + b) * width;
      T* o = out.data() + b * width;
      for (std::size_t c = 0; c < width; ++c) o[c] += w * s[c];
    }
  }
  const auto iw = weights.id(), is = states.id();
  Tape<T>* tp = &tape;
  return tape.record(PrimitiveKind::weighted_rows, std::move(out), {iw, is},
                     [tp, iw, is, batch, steps, width](const Tensor<T>& G, std::span<Tensor<T>* const> gin) {
                       const auto& W = tp->at(iw).value;
                       const auto& S = tp->at(is).value;
                       for (std::size_t l = 0; l < steps; ++l) {
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t row = l * batch + b;
                           const T* g = G.data() + b * width;
                           if (gin[0]) {
                             const T* s = S.data() + row * width;
                             T acc = 0;
                             for (std::size_t c = 0; c < width; ++c) acc += g[c] * s[c];
                             (*gin[0])(b, l) += acc;
                           }
                           if (gin[1]) {
                             const T w = W(b, l);
                             T* ds = gin[1]->data() + row * width;
                             for (std::size_t c = 0; c < width; ++c) ds[c] += w * g[c];
                           }
                         }
                       }
                     });
}

#define MHAD_INSTANTIATE_AD(T)                                                                       \
  template class Tape<T>;                                                                            \
  template class Gradients<T>;                                                                       \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale<T>(const Var<T>&, T);                                                        \
  template Var<T> concat<T>(std::span<const Var<T>>, int);                                           \
  template Var<T> slice<T>(const Var<T>&, int, std::size_t, std::size_t);                            \
  template Var<T> tanh<T>(const Var<T>&);                                                            \
  template Var<T> sigmoid<T>(const Var<T>&);                                                         \
  template Var<T> softmax_rows<T>(const Var<T>&, const std::vector<std::uint8_t>*);                  \
  template Var<T> dropout<T>(const Var<T>&, double, Rng&);                                           \
  template Var<T> apply_dropout_mask<T>(const Var<T>&, const std::vector<std::uint8_t>&, double);    \
  template Var<T> sum<T>(const Var<T>&);                                                             \
  template Var<T> mean<T>(const Var<T>&);                                                            \
  template Var<T> square<T>(const Var<T>&);                                                          \
  template Var<T> dot<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> bce<T>(const Var<T>&, std::span<const std::uint8_t>);                              \
  template Var<T> sum_rows<T>(const Var<T>&);                                                        \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const std::int32_t>);                      \
  template Var<T> gather_rows<T>(Tape<T>&, const Tensor<T>&, std::span<const std::int32_t>);         \
  template Var<T> transpose<T>(const Var<T>&);                                                       \
  template Var<T> reshape<T>(const Var<T>&, std::size_t, std::size_t);                               \
  template Var<T> weighted_rows<T>(const Var<T>&, const Var<T>&);

MHAD_INSTANTIATE_AD(float)
MHAD_INSTANTIATE_AD(double)

#undef MHAD_INSTANTIATE_AD

}  // namespace mhad::ad
