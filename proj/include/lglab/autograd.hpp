#pragma once

// Reverse-mode differentiation on a dynamic tape of dense tensors. Nodes are
// appended in evaluation order, so the insertion order is already topological
// and one reverse sweep yields exactly one gradient per registered parameter.
// A tape is single-owner: build, call backward once, discard.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lglab/tensor.hpp"

namespace lglab {

using ParamSet = std::map<std::string, Tensor>;

struct GradReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Entry> per_param;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

class Tape {
  public:
    using BackFn = std::function<void(Tape&, int)>;

    int leaf(Tensor v) { return push(std::move(v), nullptr, {}); }

    int param(Tensor v, std::string name) {
        int id = push(std::move(v), nullptr, std::move(name));
        param_ids_.push_back(id);
        return id;
    }

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    size_t node_count() const { return nodes_.size(); }

    // ------------------------------------------------------------- ops

    int add(int a, int b) {
        require(value(a).same_shape(value(b)), "add: shape mismatch");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] += value(b)[i];
        return push(std::move(out), [a, b](Tape& t, int self) {
            accumulate(t.grad(a), t.grad(self), 1.0);
            accumulate(t.grad(b), t.grad(self), 1.0);
        });
    }

    int sub(int a, int b) {
        require(value(a).same_shape(value(b)), "sub: shape mismatch");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
        return push(std::move(out), [a, b](Tape& t, int self) {
            accumulate(t.grad(a), t.grad(self), 1.0);
            accumulate(t.grad(b), t.grad(self), -1.0);
        });
    }

    int mul(int a, int b) {
        require(value(a).same_shape(value(b)), "mul: shape mismatch");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
        return push(std::move(out), [a, b](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& ga = t.grad(a);
            Tensor& gb = t.grad(b);
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * vb[i];
                gb[i] += g[i] * va[i];
            }
        });
    }

    int scale(int a, double c) {
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), [a, c](Tape& t, int self) {
            accumulate(t.grad(a), t.grad(self), c);
        });
    }

    // Multiply every entry by a scalar node (shape {1}).
    int scale_by(int a, int s) {
        require(value(s).size() == 1, "scale_by: scalar node required");
        const double c = value(s)[0];
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), [a, s, c](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            accumulate(t.grad(a), g, c);
            const Tensor& va = t.value(a);
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
            t.grad(s)[0] += acc;
        });
    }

    int matmul(int a, int b) {
        Tensor out = lglab::matmul(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            accumulate(t.grad(a), lglab::matmul_nt(g, t.value(b)), 1.0);
            accumulate(t.grad(b), lglab::matmul_tn(t.value(a), g), 1.0);
        });
    }

    // a * b^T without a materialized transpose.
    int matmul_nt(int a, int b) {
        Tensor out = lglab::matmul_nt(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            accumulate(t.grad(a), lglab::matmul(g, t.value(b)), 1.0);
            accumulate(t.grad(b), lglab::matmul_tn(g, t.value(a)), 1.0);
        });
    }

    int transpose(int a) {
        Tensor out = lglab::transpose(value(a));
        return push(std::move(out), [a](Tape& t, int self) {
            accumulate(t.grad(a), lglab::transpose(t.grad(self)), 1.0);
        });
    }

    int activation(int a, Activation act) {
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] = activate(out[i], act);
        return push(std::move(out), [a, act](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const Tensor& x = t.value(a);
            Tensor& ga = t.grad(a);
            if (act == Activation::ReLU) {
                for (size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
            } else {
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(x[i]);
            }
        });
    }

    int causal_softmax(int s, double tau) {
        Tensor out = causal_tempered_softmax(value(s), tau);
        return push(std::move(out), [s, tau](Tape& t, int self) {
            const Tensor& p = t.value(self);
            const Tensor& g = t.grad(self);
            Tensor& gs = t.grad(s);
            const int n = p.rows();
            for (int i = 0; i < n; ++i) {
                const double* prow = p.row(i);
                const double* grow = g.row(i);
                double inner = 0.0;
                for (int j = 0; j <= i; ++j) inner += grow[j] * prow[j];
                double* out_row = gs.row(i);
                for (int j = 0; j <= i; ++j) out_row[j] += tau * prow[j] * (grow[j] - inner);
            }
        });
    }

    int layer_norm_rows(int x) {
        Tensor out = layer_norm(value(x));
        return push(std::move(out), [x](Tape& t, int self) {
            const Tensor& xin = t.value(x);
            const Tensor& g = t.grad(self);
            Tensor& gx = t.grad(x);
            const bool mat = xin.rank() == 2;
            const int rows = mat ? xin.rows() : 1;
            const int d = mat ? xin.cols() : static_cast<int>(xin.size());
            std::vector<double> c(static_cast<size_t>(d));
            for (int r = 0; r < rows; ++r) {
                const double* xr = xin.data() + static_cast<size_t>(r) * d;
                const double* gr = g.data() + static_cast<size_t>(r) * d;
                double* outr = gx.data() + static_cast<size_t>(r) * d;
                double mu = 0.0;
                for (int k = 0; k < d; ++k) mu += xr[k];
                mu /= d;
                double ms = 0.0;
                for (int k = 0; k < d; ++k) {
                    c[static_cast<size_t>(k)] = xr[k] - mu;
                    ms += c[static_cast<size_t>(k)] * c[static_cast<size_t>(k)];
                }
                ms /= d;
                const double inv = 1.0 / std::sqrt(ms + kLayerNormGuard);
                double gdotc = 0.0, gsum = 0.0;
                for (int k = 0; k < d; ++k) {
                    gdotc += gr[k] * c[static_cast<size_t>(k)];
                    gsum += gr[k];
                }
                // dL/dc = inv*g - inv^3*(g.c)*c/d, then subtract the mean over dc.
                const double a3 = inv * inv * inv * gdotc / d;
                double dcsum = 0.0;
                for (int k = 0; k < d; ++k)
                    dcsum += inv * gr[k] - a3 * c[static_cast<size_t>(k)];
                const double dcmean = dcsum / d;
                for (int k = 0; k < d; ++k)
                    outr[k] += inv * gr[k] - a3 * c[static_cast<size_t>(k)] - dcmean;
            }
        });
    }

    // Gathers rows of the embedding table; duplicated ids accumulate on backward.
    int embedding(int table, std::vector<int> ids) {
        const Tensor& e = value(table);
        require(e.rank() == 2, "embedding: table must be a matrix");
        Tensor out({static_cast<int>(ids.size()), e.cols()});
        for (size_t r = 0; r < ids.size(); ++r) {
            require(ids[r] >= 0 && ids[r] < e.rows(), "embedding: token id out of range");
            std::copy(e.row(ids[r]), e.row(ids[r]) + e.cols(), out.row(static_cast<int>(r)));
        }
        return push(std::move(out), [table, ids = std::move(ids)](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& ge = t.grad(table);
            const int d = g.cols();
            for (size_t r = 0; r < ids.size(); ++r) {
                const double* src = g.row(static_cast<int>(r));
                double* dst = ge.row(ids[r]);
                for (int k = 0; k < d; ++k) dst[k] += src[k];
            }
        });
    }

    // X + b broadcast over rows (b is a vector of length cols).
    int add_row_vector(int x, int b) {
        const Tensor& xv = value(x);
        const Tensor& bv = value(b);
        require(xv.rank() == 2 && static_cast<int>(bv.size()) == xv.cols(),
                "add_row_vector: shape mismatch");
        Tensor out = xv;
        for (int r = 0; r < out.rows(); ++r)
            for (int k = 0; k < out.cols(); ++k) out.at(r, k) += bv[static_cast<size_t>(k)];
        return push(std::move(out), [x, b](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            accumulate(t.grad(x), g, 1.0);
            Tensor& gb = t.grad(b);
            for (int r = 0; r < g.rows(); ++r)
                for (int k = 0; k < g.cols(); ++k) gb[static_cast<size_t>(k)] += g.at(r, k);
        });
    }

    int slice_cols(int x, int c0, int w) {
        const Tensor& xv = value(x);
        require(xv.rank() == 2 && c0 >= 0 && c0 + w <= xv.cols(), "slice_cols: range error");
        Tensor out({xv.rows(), w});
        for (int r = 0; r < xv.rows(); ++r)
            std::copy(xv.row(r) + c0, xv.row(r) + c0 + w, out.row(r));
        return push(std::move(out), [x, c0, w](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& gx = t.grad(x);
            for (int r = 0; r < g.rows(); ++r)
                for (int k = 0; k < w; ++k) gx.at(r, c0 + k) += g.at(r, k);
        });
    }

    // Places x into columns [c0, c0+w) of a zero matrix with `total` columns.
    int pad_cols(int x, int c0, int total) {
        const Tensor& xv = value(x);
        const int w = xv.cols();
        require(c0 >= 0 && c0 + w <= total, "pad_cols: range error");
        Tensor out({xv.rows(), total});
        for (int r = 0; r < xv.rows(); ++r)
            std::copy(xv.row(r), xv.row(r) + w, out.row(r) + c0);
        return push(std::move(out), [x, c0, w](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& gx = t.grad(x);
            for (int r = 0; r < g.rows(); ++r)
                for (int k = 0; k < w; ++k) gx.at(r, k) += g.at(r, c0 + k);
        });
    }

    // Sum of all entries, as a scalar node.
    int sum(int a) {
        Tensor out({1});
        for (size_t i = 0; i < value(a).size(); ++i) out[0] += value(a)[i];
        return push(std::move(out), [a](Tape& t, int self) {
            const double g = t.grad(self)[0];
            Tensor& ga = t.grad(a);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }

    // Mean cross-entropy over positions with mask set; the rest contribute
    // nothing to the value or to any gradient.
    int masked_cross_entropy(int logits, std::vector<int> targets, std::vector<uint8_t> mask) {
        const Tensor& z = value(logits);
        require(z.rank() == 2, "masked_cross_entropy: logits must be a matrix");
        require(targets.size() == static_cast<size_t>(z.rows()) && mask.size() == targets.size(),
                "masked_cross_entropy: row mismatch");
        int count = 0;
        double total = 0.0;
        for (int r = 0; r < z.rows(); ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            require(targets[static_cast<size_t>(r)] >= 0 &&
                        targets[static_cast<size_t>(r)] < z.cols(),
                    "masked_cross_entropy: target out of range");
            total += row_logsumexp(z.row(r), z.cols()) - z.at(r, targets[static_cast<size_t>(r)]);
            ++count;
        }
        require(count > 0, "masked_cross_entropy: empty mask");
        Tensor out({1});
        out[0] = total / count;
        return push(std::move(out),
                    [logits, targets = std::move(targets), mask = std::move(mask), count](
                        Tape& t, int self) {
                        const double gscale = t.grad(self)[0] / count;
                        const Tensor& z = t.value(logits);
                        Tensor& gz = t.grad(logits);
                        std::vector<double> p(static_cast<size_t>(z.cols()));
                        for (int r = 0; r < z.rows(); ++r) {
                            if (!mask[static_cast<size_t>(r)]) continue;
                            softmax_row(z.row(r), z.cols(), p.data());
                            double* grow = gz.row(r);
                            for (int k = 0; k < z.cols(); ++k)
                                grow[k] += gscale * p[static_cast<size_t>(k)];
                            grow[targets[static_cast<size_t>(r)]] -= gscale;
                        }
                    });
    }

    // ------------------------------------------------------- backward

    ParamSet backward(int loss) {
        require(value(loss).size() == 1, "backward: loss must be a scalar node");
        for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
        nodes_[static_cast<size_t>(loss)].grad[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            if (n.back) n.back(*this, id);
        }
        ParamSet grads;
        for (int id : param_ids_)
            grads.emplace(nodes_[static_cast<size_t>(id)].param_name,
                          nodes_[static_cast<size_t>(id)].grad);
        return grads;
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackFn back;
        std::string param_name;
    };

    static void accumulate(Tensor& dst, const Tensor& src, double c) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
    }

    static double row_logsumexp(const double* z, int n) {
        double m = z[0];
        for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
        return m + std::log(s);
    }

    static void softmax_row(const double* z, int n, double* p) {
        double m = z[0];
        for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = std::exp(z[i] - m);
            s += p[i];
        }
        for (int i = 0; i < n; ++i) p[i] /= s;
    }

    int push(Tensor v, BackFn back, std::string param_name = {}) {
        nodes_.push_back(Node{std::move(v), Tensor(), std::move(back), std::move(param_name)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
};

// --------------------------------------------------- finite differences

// Central differences against a supplied analytic gradient. Relative error
// uses max(|a|+|n|, 1) in the denominator so near-zero gradients compare
// absolutely.
template <typename F>
GradReport finite_difference_check(F&& f, ParamSet theta, const ParamSet& analytic,
                                   double h = 1e-5, double tol = 1e-4) {
    GradReport report;
    report.tol = tol;
    for (auto& [name, grad] : analytic) {
        Tensor& p = theta.at(name);
        require(p.same_shape(grad), "finite_difference_check: shape mismatch for " + name);
        GradReport::Entry entry{name, 0.0};
        for (size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + h;
            const double fp = f(static_cast<const ParamSet&>(theta));
            p[i] = orig - h;
            const double fm = f(static_cast<const ParamSet&>(theta));
            p[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = grad[i];
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1.0);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_param.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace lglab
