#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace cmmd {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations append nodes in execution order; backward
// replays the tape once in reverse, accumulating gradients in tape order so
// results are bit-reproducible.
class Tape {
public:
    Var leaf(Tensor t) {
        nodes_.push_back(Node{std::move(t), {}, {}, nullptr});
        return Var{int(nodes_.size()) - 1};
    }

    const Tensor& value(Var v) const { return nodes_.at(check(v)).value; }
    const Tensor& grad(Var v) const { return nodes_.at(check(v)).grad; }
    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise and shape ops -------------------------------------

    Var add(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        // broadcast: rank-1 b added to every row of rank-2 a
        bool broadcast = ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.shape[0];
        if (!broadcast) require_same_shape("add", ta, tb);
        Tensor out = ta;
        out.requires_grad = false;
        if (broadcast) {
            for (std::size_t r = 0; r < ta.rows(); ++r)
                for (std::size_t c = 0; c < ta.cols(); ++c)
                    out.at(r, c) += tb[c];
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
        }
        return record(std::move(out), {a, b},
                      [broadcast](Tape& t, const Node& n, const Tensor& g) {
                          t.accum(n.inputs[0], g);
                          if (!broadcast) {
                              t.accum(n.inputs[1], g);
                          } else {
                              Tensor gb = Tensor::zeros({g.cols()});
                              for (std::size_t r = 0; r < g.rows(); ++r)
                                  for (std::size_t c = 0; c < g.cols(); ++c)
                                      gb[c] += g.at(r, c);
                              t.accum(n.inputs[1], gb);
                          }
                      });
    }

    Var sub(Var a, Var b) {
        require_same_shape("sub", value(a), value(b));
        Tensor out = value(a);
        out.requires_grad = false;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
        return record(std::move(out), {a, b},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          t.accum(n.inputs[0], g);
                          Tensor gn = g;
                          for (auto& v : gn.values) v = -v;
                          t.accum(n.inputs[1], gn);
                      });
    }

    Var mul(Var a, Var b) {
        require_same_shape("mul", value(a), value(b));
        Tensor out = value(a);
        out.requires_grad = false;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
        return record(std::move(out), {a, b},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g, gb = g;
                          const Tensor& ta = t.value(n.inputs[0]);
                          const Tensor& tb = t.value(n.inputs[1]);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              ga[i] *= tb[i];
                              gb[i] *= ta[i];
                          }
                          t.accum(n.inputs[0], ga);
                          t.accum(n.inputs[1], gb);
                      });
    }

    Var neg(Var a) { return scale(a, -1.0); }

    Var scale(Var a, double c) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v *= c;
        return record(std::move(out), {a},
                      [c](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          for (auto& v : ga.values) v *= c;
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var add_const(Var a, double c) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v += c;
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) { t.accum(n.inputs[0], g); });
    }

    Var exp_(Var a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v = std::exp(v);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= n.value[i];
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var log_(Var a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) {
            if (v <= 0.0) throw std::domain_error("log: non-positive input");
            v = std::log(v);
        }
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          const Tensor& x = t.value(n.inputs[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] /= x[i];
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var softplus(Var a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v = softplus_scalar(v);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          const Tensor& x = t.value(n.inputs[0]);
                          for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] *= sigmoid_scalar(x[i]);
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var sigmoid(Var a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v = sigmoid_scalar(v);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] *= n.value[i] * (1.0 - n.value[i]);
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var square(Var a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v *= v;
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          const Tensor& x = t.value(n.inputs[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= 2.0 * x[i];
                          t.accum(n.inputs[0], ga);
                      });
    }

    // Pass-through inside [lo, hi], zero gradient outside.
    Var clamp(Var a, double lo, double hi) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (auto& v : out.values) v = v < lo ? lo : (v > hi ? hi : v);
        return record(std::move(out), {a},
                      [lo, hi](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          const Tensor& x = t.value(n.inputs[0]);
                          for (std::size_t i = 0; i < g.size(); ++i)
                              if (x[i] < lo || x[i] > hi) ga[i] = 0.0;
                          t.accum(n.inputs[0], ga);
                      });
    }

    // ---- reductions ----------------------------------------------------

    Var sum_all(Var a) {
        double s = 0.0;
        for (double v : value(a).values) s += v;
        return record(Tensor::scalar(s), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& x = t.value(n.inputs[0]);
                          Tensor ga = Tensor::full(x.shape, g[0]);
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var mean_all(Var a) {
        std::size_t cnt = value(a).size();
        if (cnt == 0) throw std::invalid_argument("mean: empty tensor");
        return scale(sum_all(a), 1.0 / double(cnt));
    }

    // rank-2 (n x m) -> rank-1 (n), summing over the last axis
    Var sum_last(Var a) {
        const Tensor& x = value(a);
        if (x.rank() != 2) throw std::invalid_argument("sum_last: rank-2 required");
        Tensor out = Tensor::zeros({x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) out[r] += x.at(r, c);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& x = t.value(n.inputs[0]);
                          Tensor ga = Tensor::zeros(x.shape);
                          for (std::size_t r = 0; r < x.rows(); ++r)
                              for (std::size_t c = 0; c < x.cols(); ++c)
                                  ga.at(r, c) = g[r];
                          t.accum(n.inputs[0], ga);
                      });
    }

    // ---- linear algebra ------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
            throw std::invalid_argument("matmul: shape mismatch " + ta.shape_str() +
                                        " vs " + tb.shape_str());
        Tensor out = Tensor::zeros({ta.rows(), tb.cols()});
        for (std::size_t i = 0; i < ta.rows(); ++i)
            for (std::size_t k = 0; k < ta.cols(); ++k) {
                double av = ta.at(i, k);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < tb.cols(); ++j)
                    out.at(i, j) += av * tb.at(k, j);
            }
        return record(std::move(out), {a, b},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& ta = t.value(n.inputs[0]);
                          const Tensor& tb = t.value(n.inputs[1]);
                          Tensor ga = Tensor::zeros(ta.shape);
                          Tensor gb = Tensor::zeros(tb.shape);
                          for (std::size_t i = 0; i < ta.rows(); ++i)
                              for (std::size_t j = 0; j < tb.cols(); ++j) {
                                  double gv = g.at(i, j);
                                  if (gv == 0.0) continue;
                                  for (std::size_t k = 0; k < ta.cols(); ++k) {
                                      ga.at(i, k) += gv * tb.at(k, j);
                                      gb.at(k, j) += gv * ta.at(i, k);
                                  }
                              }
                          t.accum(n.inputs[0], ga);
                          t.accum(n.inputs[1], gb);
                      });
    }

    Var transpose(Var a) {
        const Tensor& x = value(a);
        if (x.rank() != 2) throw std::invalid_argument("transpose: rank-2 required");
        Tensor out = Tensor::zeros({x.cols(), x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) out.at(c, r) = x.at(r, c);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = Tensor::zeros(t.value(n.inputs[0]).shape);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < g.cols(); ++c)
                                  ga.at(c, r) = g.at(r, c);
                          t.accum(n.inputs[0], ga);
                      });
    }

    // ---- structure ops (last axis, rank-2) -----------------------------

    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        std::size_t rows = value(parts[0]).rows();
        std::size_t cols = 0;
        for (Var p : parts) {
            const Tensor& x = value(p);
            if (x.rank() != 2 || x.rows() != rows)
                throw std::invalid_argument("concat: row mismatch");
            cols += x.cols();
        }
        Tensor out = Tensor::zeros({rows, cols});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& x = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < x.cols(); ++c)
                    out.at(r, off + c) = x.at(r, c);
            off += x.cols();
        }
        return record(std::move(out), parts,
                      [](Tape& t, const Node& n, const Tensor& g) {
                          std::size_t off = 0;
                          for (Var p : n.inputs) {
                              const Tensor& x = t.value(p);
                              Tensor gp = Tensor::zeros(x.shape);
                              for (std::size_t r = 0; r < x.rows(); ++r)
                                  for (std::size_t c = 0; c < x.cols(); ++c)
                                      gp.at(r, c) = g.at(r, off + c);
                              off += x.cols();
                              t.accum(p, gp);
                          }
                      });
    }

    Var slice_last(Var a, std::size_t start, std::size_t len) {
        const Tensor& x = value(a);
        if (x.rank() != 2 || start + len > x.cols())
            throw std::invalid_argument("slice: out of range");
        Tensor out = Tensor::zeros({x.rows(), len});
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < len; ++c) out.at(r, c) = x.at(r, start + c);
        return record(std::move(out), {a},
                      [start, len](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& x = t.value(n.inputs[0]);
                          Tensor ga = Tensor::zeros(x.shape);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < len; ++c)
                                  ga.at(r, start + c) = g.at(r, c);
                          t.accum(n.inputs[0], ga);
                      });
    }

    // Rows select: out[r] = a[idx[r]] (used by the marginal-posterior resampling)
    Var gather_rows(Var a, std::vector<std::size_t> idx) {
        const Tensor& x = value(a);
        if (x.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 required");
        Tensor out = Tensor::zeros({idx.size(), x.cols()});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= x.rows()) throw std::out_of_range("gather_rows: index");
            for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(idx[r], c);
        }
        auto indices = std::make_shared<std::vector<std::size_t>>(std::move(idx));
        return record(std::move(out), {a},
                      [indices](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& x = t.value(n.inputs[0]);
                          Tensor ga = Tensor::zeros(x.shape);
                          for (std::size_t r = 0; r < indices->size(); ++r)
                              for (std::size_t c = 0; c < g.cols(); ++c)
                                  ga.at((*indices)[r], c) += g.at(r, c);
                          t.accum(n.inputs[0], ga);
                      });
    }

    // Same values, new shape.
    Var reshape(Var a, std::vector<std::size_t> shape) {
        const Tensor& x = value(a);
        if (Tensor::num_elements(shape) != x.size())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor out(std::move(shape), x.values);
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          const Tensor& x = t.value(n.inputs[0]);
                          Tensor ga(x.shape, g.values);
                          t.accum(n.inputs[0], ga);
                      });
    }

    Var dropout(Var a, double rate, bool train, Rng& rng) {
        if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate in [0,1)");
        if (!train || rate == 0.0) return a; // identity in eval mode
        const Tensor& x = value(a);
        auto mask = std::make_shared<Tensor>(Tensor::zeros(x.shape));
        double keep = 1.0 - rate;
        for (std::size_t i = 0; i < x.size(); ++i)
            (*mask)[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        Tensor out = x;
        out.requires_grad = false;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
        return record(std::move(out), {a},
                      [mask](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= (*mask)[i];
                          t.accum(n.inputs[0], ga);
                      });
    }

    // Row-wise log-softmax
    Var log_softmax(Var a) {
        const Tensor& x = value(a);
        if (x.rank() != 2) throw std::invalid_argument("log_softmax: rank-2 required");
        Tensor out = x;
        out.requires_grad = false;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double mx = x.at(r, 0);
            for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
            double lse = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) lse += std::exp(x.at(r, c) - mx);
            lse = mx + std::log(lse);
            for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) - lse;
        }
        return record(std::move(out), {a},
                      [](Tape& t, const Node& n, const Tensor& g) {
                          Tensor ga = g;
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                              double gs = 0.0;
                              for (std::size_t c = 0; c < g.cols(); ++c) gs += g.at(r, c);
                              for (std::size_t c = 0; c < g.cols(); ++c)
                                  ga.at(r, c) = g.at(r, c) - std::exp(n.value.at(r, c)) * gs;
                          }
                          t.accum(n.inputs[0], ga);
                      });
    }

    // ---- backward ------------------------------------------------------

    void backward(Var loss) {
        if (!value(loss).is_scalar())
            throw std::invalid_argument("backward: loss must be a scalar");
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[loss.id].grad = Tensor::scalar(1.0);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backprop || n.grad.values.empty()) continue;
            n.backprop(*this, n, n.grad);
        }
        // leaves that were never touched get explicit zeros
        for (auto& n : nodes_)
            if (n.grad.values.empty()) n.grad = Tensor::zeros(n.value.shape);
    }

private:
    struct Node {
        Tensor value;
        std::vector<Var> inputs;
        Tensor grad;
        std::function<void(Tape&, const Node&, const Tensor&)> backprop;
    };

    std::vector<Node> nodes_;

    int check(Var v) const {
        if (!v.valid() || v.id >= int(nodes_.size()))
            throw std::out_of_range("tape: invalid var");
        return v.id;
    }

    Var record(Tensor out, std::vector<Var> inputs,
               std::function<void(Tape&, const Node&, const Tensor&)> bp) {
        nodes_.push_back(Node{std::move(out), std::move(inputs), {}, std::move(bp)});
        return Var{int(nodes_.size()) - 1};
    }

    void accum(Var v, const Tensor& g) {
        Node& n = nodes_[check(v)];
        if (n.grad.values.empty()) {
            n.grad = g;
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
        }
    }

    static double sigmoid_scalar(double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
    }
    static double softplus_scalar(double x) {
        return x > 30.0 ? x : std::log1p(std::exp(x));
    }
};

// Central-difference gradient check for f: Tensor -> scalar built on a tape.
// Returns the max over coordinates of |analytic - fd| / max(1, |analytic|).
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                         double h = 1e-5) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    Tape tape;
    Tensor p = point;
    p.requires_grad = true;
    Var x = tape.leaf(p);
    Var loss = f(tape, x);
    if (!tape.value(loss).is_scalar())
        throw std::invalid_argument("grad_check: f must return a scalar");
    if (!std::isfinite(tape.value(loss)[0]))
        throw std::domain_error("grad_check: non-finite function value");
    tape.backward(loss);
    Tensor analytic = tape.grad(x);

    auto eval = [&](const Tensor& q) {
        Tape t2;
        Var v = t2.leaf(q);
        double y = t2.value(f(t2, v))[0];
        if (!std::isfinite(y)) throw std::domain_error("grad_check: non-finite value");
        return y;
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        Tensor plus = point, minus = point;
        plus[i] += h;
        minus[i] -= h;
        double fd = (eval(plus) - eval(minus)) / (2.0 * h);
        double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace cmmd
