#include "pvp/autodiff.hpp"

#include <cmath>

#include "pvp/error.hpp"

namespace pvp::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) {
        if (p.tape_ != this) throw ContractError("autodiff: operands live on different tapes");
        needs = needs || nodes_[p.id()].requires_grad;
    }
    Node node{std::move(value), {}, needs, false, {}};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(const Var& v) {
    auto& node = nodes_[v.id()];
    if (!node.has_grad) {
        node.grad = Tensor::zeros_like(node.value);
        node.has_grad = true;
    }
    return node.grad;
}

void Tape::backward(const Var& loss) {
    if (loss.tape_ != this) throw ContractError("backward: loss lives on another tape");
    if (nodes_[loss.id()].value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(nodes_[loss.id()].value.shape()));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.has_grad || !node.backward) continue;
        // Closures only touch grad buffers of earlier nodes; deque references stay valid.
        node.backward(*this, node.grad);
    }
}

Tensor Tape::grad(const Var& v) const {
    const auto& node = nodes_[v.id()];
    return node.has_grad ? node.grad : Tensor::zeros_like(node.value);
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

// out[m×n] += a[m×k]·b[k×n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* br = b + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

// out[m×n] += a[m×k]·b[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            out[i * n + j] += s;
        }
    }
}

// out[k×n] += a[m×k]ᵀ·b[m×n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            double* o = out + p * n;
            const double* br = b + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    const auto m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) {
        throw ShapeError("matmul: inner extents differ " + shape_string(av.shape()) + "·" + shape_string(bv.shape()));
    }
    Tensor out(Shape{m, n});
    gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
        if (a.requires_grad()) gemm_nt(g.data().data(), b.value().data().data(), t.grad_buffer(a).data().data(), m, n, k);
        if (b.requires_grad()) gemm_tn(a.value().data().data(), g.data().data(), t.grad_buffer(b).data().data(), m, k, n);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    const auto m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) {
        throw ShapeError("matmul_nt: inner extents differ " + shape_string(av.shape()) + "·" +
                         shape_string(bv.shape()) + "ᵀ");
    }
    Tensor out(Shape{m, n});
    gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
        // dA = G·B, dB = Gᵀ·A
        if (a.requires_grad()) gemm_nn(g.data().data(), b.value().data().data(), t.grad_buffer(a).data().data(), m, n, k);
        if (b.requires_grad()) gemm_tn(g.data().data(), a.value().data().data(), t.grad_buffer(b).data().data(), m, n, k);
    });
}

Var transpose(const Var& a) {
    const auto& av = a.value();
    require_matrix(av, "transpose");
    const auto m = av.rows(), n = av.cols();
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
    return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        for (const Var* v : {&a, &b}) {
            if (!v->requires_grad()) continue;
            auto& gv = t.grad_buffer(*v);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (a.requires_grad()) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (a.requires_grad()) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
        }
        if (b.requires_grad()) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        const auto& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) ga[i] += g[i];
    });
}

Var linear_combination(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.empty() || terms.size() != weights.size()) {
        throw ContractError("linear_combination: need one weight per term and at least one term");
    }
    Tensor out = Tensor::zeros_like(terms[0].value());
    for (std::size_t k = 0; k < terms.size(); ++k) {
        require_same(out, terms[k].value(), "linear_combination");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * terms[k].value()[i];
    }
    std::vector<Var> ts(terms.begin(), terms.end());
    std::vector<double> ws(weights.begin(), weights.end());
    return terms[0].tape().record(std::move(out), terms, [ts, ws](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ts.size(); ++k) {
            if (!ts[k].requires_grad() || ws[k] == 0.0) continue;
            auto& gk = t.grad_buffer(ts[k]);
            for (std::size_t i = 0; i < g.size(); ++i) gk[i] += ws[k] * g[i];
        }
    });
}

Var add_bias(const Var& a, const Var& b) {
    const auto& av = a.value();
    require_matrix(av, "add_bias");
    const auto m = av.rows(), n = av.cols();
    if (b.value().size() != n) throw ShapeError("add_bias: bias length does not match column count");
    Tensor out = av;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.value()[j];
    return a.tape().record(std::move(out), {a, b}, [a, b, m, n](Tape& t, const Tensor& g) {
        if (a.requires_grad()) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
        }
    });
}

Var normalize_rows(const Var& a) {
    const auto& av = a.value();
    require_matrix(av, "normalize_rows");
    const auto m = av.rows(), n = av.cols();
    Tensor out(Shape{m, n});
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += av.at(i, j) * av.at(i, j);
        norms[i] = std::sqrt(s);
        if (norms[i] > 0.0)
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(i, j) / norms[i];
    }
    Tensor y = out;
    return a.tape().record(std::move(out), {a}, [a, y = std::move(y), norms, m, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
            if (norms[i] == 0.0) continue;
            double yg = 0.0;
            for (std::size_t j = 0; j < n; ++j) yg += y.at(i, j) * g.at(i, j);
            for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += (g.at(i, j) - y.at(i, j) * yg) / norms[i];
        }
    });
}

Var softmax_rows(const Var& a) {
    const auto& av = a.value();
    require_matrix(av, "softmax_rows");
    const auto m = av.rows(), n = av.cols();
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (out.at(i, j) = std::exp(av.at(i, j) - mx));
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    Tensor y = out;
    return a.tape().record(std::move(out), {a}, [a, y = std::move(y), m, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - gy);
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero parts");
    const auto n = parts[0].value().cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != n) throw ShapeError("concat_rows: column counts differ");
        m += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& p : parts) data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts[0].tape().record(Tensor(Shape{m, n}, std::move(data)), parts, [ps](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const auto& p : ps) {
            const auto len = p.value().size();
            if (p.requires_grad()) {
                auto& gp = t.grad_buffer(p);
                for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
            }
            offset += len;
        }
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
    const auto& av = a.value();
    require_matrix(av, "slice_rows");
    if (begin + count > av.rows()) throw ShapeError("slice_rows: range exceeds row count");
    const auto n = av.cols();
    std::vector<double> data(av.storage().begin() + static_cast<std::ptrdiff_t>(begin * n),
                             av.storage().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
    return a.tape().record(Tensor(Shape{count, n}, std::move(data)), {a}, [a, begin, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
}

Var select(const Var& a, std::size_t i) {
    Tensor out = a.value().slice(i);
    const auto n = out.size();
    return a.tape().record(std::move(out), {a}, [a, i, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t k = 0; k < n; ++k) ga[i * n + k] += g[k];
    });
}

Var reshape(const Var& a, Shape shape) {
    return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var patchify(const Var& image, std::size_t patch) {
    const auto& img = image.value();
    if (img.rank() != 3) throw ShapeError("patchify: expected [H,W,C], got " + shape_string(img.shape()));
    const auto h = img.dim(0), w = img.dim(1), c = img.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ShapeError("patchify: extents " + shape_string(img.shape()) + " not divisible by patch size " +
                         std::to_string(patch));
    }
    const auto gh = h / patch, gw = w / patch, pd = patch * patch * c;
    // index[k] = source offset of output element k
    std::vector<std::size_t> index(h * w * c);
    std::size_t k = 0;
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px)
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        index[k++] = ((py * patch + dy) * w + (px * patch + dx)) * c + ch;
    Tensor out(Shape{gh * gw, pd});
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = img[index[i]];
    return image.tape().record(std::move(out), {image}, [image, index = std::move(index)](Tape& t, const Tensor& g) {
        auto& gi = t.grad_buffer(image);
        for (std::size_t i = 0; i < index.size(); ++i) gi[index[i]] += g[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (auto& v : ga.data()) v += g[0];
    });
}

Var mean(const Var& a) {
    const auto n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

}  // namespace pvp::ad
