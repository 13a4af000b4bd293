#include "lnas/tape.hpp"

#include "lnas/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lnas {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_matrix(const Tensor& a, const char* what)
{
    if (a.rank() != 2)
        throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_string(a.shape()));
}

void accumulate(std::vector<Tensor>& grads, NodeId id, const Tensor& value, const Tensor& delta)
{
    Tensor& g = grads[id];
    if (g.size() == 0 && value.size() != 0) {
        g = delta;
        return;
    }
    auto gd = g.data();
    auto dd = delta.data();
    for (std::size_t i = 0; i < gd.size(); ++i)
        gd[i] += dd[i];
}

} // namespace

NodeId Tape::push(Node n, const char* what)
{
    n.value.check_finite(what);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const
{
    if (id >= nodes_.size())
        throw std::out_of_range("tape node " + std::to_string(id) + " does not exist");
    return nodes_[id];
}

NodeId Tape::leaf(Tensor value)
{
    return push({Op::leaf, {}, std::move(value)}, "leaf");
}

NodeId Tape::constant(Tensor value)
{
    return push({Op::constant, {}, std::move(value)}, "constant");
}

NodeId Tape::matmul(NodeId a, NodeId b)
{
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require_matrix(va, "matmul");
    require_matrix(vb, "matmul");
    if (va.cols() != vb.rows())
        throw ShapeError("matmul: inner dimensions differ " + shape_string(va.shape()) + " x " +
                         shape_string(vb.shape()));
    Tensor out({va.rows(), vb.cols()});
    kernels::gemm({va.rows(), vb.cols(), va.cols()}, va.data(), vb.data(), out.data());
    return push({Op::matmul, {a, b}, std::move(out)}, "matmul");
}

NodeId Tape::add(NodeId a, NodeId b)
{
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += vb[i];
    return push({Op::add, {a, b}, std::move(out)}, "add");
}

NodeId Tape::add_bias(NodeId x, NodeId bias)
{
    const Tensor& vx = node(x).value;
    const Tensor& vb = node(bias).value;
    require_matrix(vx, "add_bias");
    if (vb.size() != vx.cols())
        throw ShapeError("add_bias: bias has " + std::to_string(vb.size()) + " entries, input has " +
                         std::to_string(vx.cols()) + " columns");
    Tensor out = vx;
    const std::size_t n = vx.cols();
    for (std::size_t r = 0; r < vx.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c)
            out[r * n + c] += vb[c];
    return push({Op::add_bias, {x, bias}, std::move(out)}, "add_bias");
}

NodeId Tape::scale(NodeId a, double factor)
{
    Tensor out = node(a).value;
    for (double& v : out.data())
        v *= factor;
    Node n{Op::scale, {a}, std::move(out)};
    n.factor = factor;
    return push(std::move(n), "scale");
}

NodeId Tape::sum(std::span<const NodeId> terms)
{
    if (terms.empty())
        throw ShapeError("sum: empty term list");
    Tensor out = node(terms[0]).value;
    for (std::size_t t = 1; t < terms.size(); ++t) {
        const Tensor& v = node(terms[t]).value;
        require_same_shape(out, v, "sum");
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += v[i];
    }
    return push({Op::sum, {terms.begin(), terms.end()}, std::move(out)}, "sum");
}

NodeId Tape::scalar_combine(std::span<const WeightedTerm> terms)
{
    if (terms.empty())
        throw ShapeError("scalar_combine: empty term list");
    const Tensor& first = node(terms[0].tensor).value;
    Tensor out(first.shape());
    std::vector<NodeId> inputs;
    inputs.reserve(2 * terms.size());
    for (const auto& term : terms) {
        const Tensor& w = node(term.weight).value;
        const Tensor& v = node(term.tensor).value;
        if (w.size() != 1)
            throw ShapeError("scalar_combine: weight node is not a scalar");
        require_same_shape(first, v, "scalar_combine");
        const double wv = w[0];
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += wv * v[i];
        inputs.push_back(term.weight);
        inputs.push_back(term.tensor);
    }
    return push({Op::scalar_combine, std::move(inputs), std::move(out)}, "scalar_combine");
}

NodeId Tape::tanh(NodeId a)
{
    Tensor out = node(a).value;
    for (double& v : out.data())
        v = std::tanh(v);
    return push({Op::tanh, {a}, std::move(out)}, "tanh");
}

NodeId Tape::softmax(NodeId a)
{
    Tensor out = node(a).value;
    auto d = out.data();
    if (d.empty())
        throw ShapeError("softmax: empty input");
    const double mx = *std::max_element(d.begin(), d.end());
    double z = 0.0;
    for (double& v : d) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : d)
        v /= z;
    return push({Op::softmax, {a}, std::move(out)}, "softmax");
}

NodeId Tape::element(NodeId a, std::size_t index)
{
    const Tensor& v = node(a).value;
    if (index >= v.size())
        throw ShapeError("element: index " + std::to_string(index) + " out of range");
    Node n{Op::element, {a}, Tensor::scalar(v[index])};
    n.index = index;
    return push(std::move(n), "element");
}

NodeId Tape::inner(NodeId a, NodeId b)
{
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require_same_shape(va, vb, "inner");
    return push({Op::inner, {a, b}, Tensor::scalar(dot(va.data(), vb.data()))}, "inner");
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const int> labels)
{
    const Tensor& z = node(logits).value;
    require_matrix(z, "softmax_cross_entropy");
    const std::size_t batch = z.rows();
    const std::size_t classes = z.cols();
    if (labels.size() != batch)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
    Tensor probs(z.shape());
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");
        const double* row = z.data().data() + r * classes;
        const double mx = *std::max_element(row, row + classes);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(row[c] - mx);
            probs[r * classes + c] = e;
            s += e;
        }
        for (std::size_t c = 0; c < classes; ++c)
            probs[r * classes + c] /= s;
        total += mx + std::log(s) - row[y];
    }
    Node n{Op::softmax_cross_entropy, {logits}, Tensor::scalar(total / static_cast<double>(batch))};
    n.labels.assign(labels.begin(), labels.end());
    n.cache = std::move(probs);
    return push(std::move(n), "softmax_cross_entropy");
}

Gradients Tape::backward(NodeId loss) const
{
    const Node& root = node(loss);
    if (root.value.size() != 1)
        throw ShapeError("backward: root node " + shape_string(root.value.shape()) + " is not a scalar");

    std::vector<Tensor> grads(loss + 1);
    grads[loss] = Tensor::scalar(1.0);

    for (NodeId id = loss + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (grads[id].size() == 0)
            continue;
        const Tensor& up = grads[id];
        switch (n.op) {
        case Op::leaf:
        case Op::constant:
            break;
        case Op::matmul: {
            const Tensor& a = nodes_[n.inputs[0]].value;
            const Tensor& b = nodes_[n.inputs[1]].value;
            const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
            Tensor da({m, k});
            kernels::gemm({m, k, cols, kernels::Layout::normal, kernels::Layout::transposed}, up.data(), b.data(),
                          da.data());
            Tensor db({k, cols});
            kernels::gemm({k, cols, m, kernels::Layout::transposed, kernels::Layout::normal}, a.data(), up.data(),
                          db.data());
            accumulate(grads, n.inputs[0], a, da);
            accumulate(grads, n.inputs[1], b, db);
            break;
        }
        case Op::add:
            accumulate(grads, n.inputs[0], n.value, up);
            accumulate(grads, n.inputs[1], n.value, up);
            break;
        case Op::add_bias: {
            accumulate(grads, n.inputs[0], n.value, up);
            const Tensor& b = nodes_[n.inputs[1]].value;
            Tensor db(b.shape());
            const std::size_t cols = n.value.cols();
            for (std::size_t r = 0; r < n.value.rows(); ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    db[c] += up[r * cols + c];
            accumulate(grads, n.inputs[1], b, db);
            break;
        }
        case Op::scale: {
            Tensor d = up;
            for (double& v : d.data())
                v *= n.factor;
            accumulate(grads, n.inputs[0], n.value, d);
            break;
        }
        case Op::sum:
            for (NodeId in : n.inputs)
                accumulate(grads, in, n.value, up);
            break;
        case Op::scalar_combine:
            for (std::size_t t = 0; t < n.inputs.size(); t += 2) {
                const NodeId w = n.inputs[t];
                const NodeId x = n.inputs[t + 1];
                const Tensor& xv = nodes_[x].value;
                accumulate(grads, w, nodes_[w].value, Tensor::scalar(dot(xv.data(), up.data())));
                Tensor dx = up;
                const double wv = nodes_[w].value[0];
                for (double& v : dx.data())
                    v *= wv;
                accumulate(grads, x, xv, dx);
            }
            break;
        case Op::tanh: {
            Tensor d = up;
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] *= 1.0 - n.value[i] * n.value[i];
            accumulate(grads, n.inputs[0], n.value, d);
            break;
        }
        case Op::softmax: {
            const double s = dot(n.value.data(), up.data());
            Tensor d = up;
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] = n.value[i] * (up[i] - s);
            accumulate(grads, n.inputs[0], n.value, d);
            break;
        }
        case Op::element: {
            const Tensor& src = nodes_[n.inputs[0]].value;
            Tensor d(src.shape());
            d[n.index] = up[0];
            accumulate(grads, n.inputs[0], src, d);
            break;
        }
        case Op::inner: {
            const Tensor& a = nodes_[n.inputs[0]].value;
            const Tensor& b = nodes_[n.inputs[1]].value;
            Tensor da = b;
            Tensor db = a;
            for (double& v : da.data())
                v *= up[0];
            for (double& v : db.data())
                v *= up[0];
            accumulate(grads, n.inputs[0], a, da);
            accumulate(grads, n.inputs[1], b, db);
            break;
        }
        case Op::softmax_cross_entropy: {
            Tensor d = n.cache;
            const std::size_t classes = d.cols();
            const double f = up[0] / static_cast<double>(n.labels.size());
            for (std::size_t r = 0; r < n.labels.size(); ++r)
                d[r * classes + static_cast<std::size_t>(n.labels[r])] -= 1.0;
            for (double& v : d.data())
                v *= f;
            accumulate(grads, n.inputs[0], nodes_[n.inputs[0]].value, d);
            break;
        }
        }
    }

    // Unreached nodes get explicit zeros of their own shape.
    grads.resize(nodes_.size());
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        if (grads[id].size() == 0 && nodes_[id].value.size() != 0)
            grads[id] = Tensor::zeros(nodes_[id].value.shape());
        grads[id].check_finite("backward");
    }
    return Gradients(std::move(grads));
}

} // namespace lnas
