#include "tmr/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace tmr::ad {

namespace {

std::uint64_t g_backward_invocations = 0;

double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::uint64_t backward_invocations() { return g_backward_invocations; }
void reset_backward_invocations() { g_backward_invocations = 0; }

std::size_t Tape::check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::logic_error("Tape: invalid Var handle");
    return static_cast<std::size_t>(v.id);
}

Var Tape::make(Mat value) {
    Node node;
    node.grad = Mat::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_back(Var v, std::function<void(Tape&)> back) {
    nodes_[check(v)].back = std::move(back);
}

Var Tape::leaf(Parameter& p) {
    auto it = leaf_cache_.find(&p);
    if (it != leaf_cache_.end()) return Var{it->second};
    p.reads += 1;
    Var v = make(p.value);
    set_back(v, [v, &p](Tape& t) { p.grad += t.grad(v); });
    leaf_cache_[&p] = v.id;
    return v;
}

Var Tape::constant(Mat value) { return make(std::move(value)); }

void Tape::backward(Var scalar_loss) {
    const std::size_t root = check(scalar_loss);
    if (nodes_[root].value.size() != 1)
        throw std::logic_error("Tape::backward: loss must be a scalar node");
    nodes_[root].grad(0, 0) = 1.0;
    for (std::size_t i = root + 1; i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back(*this);
    }
    ++g_backward_invocations;
}

// ---- ops -------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
    Var out = t.make(t.value(a) * t.value(b));
    t.set_back(out, [out, a, b](Tape& t) {
        const Mat& g = t.grad(out);
        t.grad_mut(a).noalias() += g * t.value(b).transpose();
        t.grad_mut(b).noalias() += t.value(a).transpose() * g;
    });
    return out;
}

Var matmul_nt(Tape& t, Var a, Var b) {
    Var out = t.make(t.value(a) * t.value(b).transpose());
    t.set_back(out, [out, a, b](Tape& t) {
        const Mat& g = t.grad(out);
        t.grad_mut(a).noalias() += g * t.value(b);
        t.grad_mut(b).noalias() += g.transpose() * t.value(a);
    });
    return out;
}

Var add(Tape& t, Var a, Var b) {
    Var out = t.make(t.value(a) + t.value(b));
    t.set_back(out, [out, a, b](Tape& t) {
        const Mat& g = t.grad(out);
        t.grad_mut(a) += g;
        t.grad_mut(b) += g;
    });
    return out;
}

Var add_rowvec(Tape& t, Var a, Var row) {
    Var out = t.make(t.value(a).rowwise() + t.value(row).row(0));
    t.set_back(out, [out, a, row](Tape& t) {
        const Mat& g = t.grad(out);
        t.grad_mut(a) += g;
        t.grad_mut(row) += g.colwise().sum();
    });
    return out;
}

Var scale(Tape& t, Var a, double c) {
    Var out = t.make(t.value(a) * c);
    t.set_back(out, [out, a, c](Tape& t) { t.grad_mut(a) += c * t.grad(out); });
    return out;
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index n) {
    Var out = t.make(t.value(a).middleCols(start, n));
    t.set_back(out, [out, a, start, n](Tape& t) {
        t.grad_mut(a).middleCols(start, n) += t.grad(out);
    });
    return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    Eigen::Index rows = t.value(parts.front()).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) cols += t.value(p).cols();
    Mat value(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        value.middleCols(at, t.value(p).cols()) = t.value(p);
        at += t.value(p).cols();
    }
    Var out = t.make(std::move(value));
    t.set_back(out, [out, parts](Tape& t) {
        const Mat& g = t.grad(out);
        Eigen::Index at = 0;
        for (Var p : parts) {
            const Eigen::Index w = t.value(p).cols();
            t.grad_mut(p) += g.middleCols(at, w);
            at += w;
        }
    });
    return out;
}

Var gather_rows(Tape& t, Var a, std::vector<int> rows) {
    const Mat& src = t.value(a);
    Mat value(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        value.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    Var out = t.make(std::move(value));
    t.set_back(out, [out, a, rows = std::move(rows)](Tape& t) {
        const Mat& g = t.grad(out);
        Mat& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < rows.size(); ++i)
            ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    });
    return out;
}

Var softmax_rows(Tape& t, Var a) {
    Mat y = t.value(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double mx = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - mx).exp();
        y.row(r) /= y.row(r).sum();
    }
    Var out = t.make(std::move(y));
    t.set_back(out, [out, a](Tape& t) {
        const Mat& y = t.value(out);
        const Mat& g = t.grad(out);
        Mat& ga = t.grad_mut(a);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const double dot = g.row(r).dot(y.row(r));
            ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
        }
    });
    return out;
}

Var log_softmax_rows(Tape& t, Var a) {
    Mat y = t.value(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double mx = y.row(r).maxCoeff();
        const double lse = mx + std::log((y.row(r).array() - mx).exp().sum());
        y.row(r).array() -= lse;
    }
    Var out = t.make(std::move(y));
    t.set_back(out, [out, a](Tape& t) {
        const Mat& y = t.value(out);
        const Mat& g = t.grad(out);
        Mat& ga = t.grad_mut(a);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const double gsum = g.row(r).sum();
            ga.row(r) += g.row(r) - gsum * y.row(r).array().exp().matrix();
        }
    });
    return out;
}

Var layer_norm_rows(Tape& t, Var x, Var gain, Var bias) {
    constexpr double eps = 1e-5;
    const Mat& in = t.value(x);
    const Eigen::Index n = in.rows(), c = in.cols();
    Mat xhat(n, c);
    Eigen::VectorXd inv_sigma(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = in.row(r).mean();
        const double var = (in.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (in.row(r).array() - mu) * is;
        inv_sigma(r) = is;
    }
    Mat value = xhat;
    value.array().rowwise() *= t.value(gain).row(0).array();
    value.array().rowwise() += t.value(bias).row(0).array();
    Var out = t.make(std::move(value));
    // xhat and inv_sigma are needed by the backward pass; keep them by value.
    t.set_back(out, [out, x, gain, bias, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)](Tape& t) {
        const Mat& g = t.grad(out);
        t.grad_mut(bias) += g.colwise().sum();
        t.grad_mut(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
        Mat dxhat = g;
        dxhat.array().rowwise() *= t.value(gain).row(0).array();
        Mat& gx = t.grad_mut(x);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            gx.row(r) += (inv_sigma(r) *
                          (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2))
                             .matrix();
        }
    });
    return out;
}

namespace {
double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
}  // namespace

Var gelu(Tape& t, Var a) {
    Mat value = t.value(a).unaryExpr([](double x) { return x * normal_cdf(x); });
    Var out = t.make(std::move(value));
    t.set_back(out, [out, a](Tape& t) {
        const Mat dydx =
            t.value(a).unaryExpr([](double x) { return normal_cdf(x) + x * normal_pdf(x); });
        t.grad_mut(a) += t.grad(out).cwiseProduct(dydx);
    });
    return out;
}

Var dropout(Tape& t, Var a, double rate, std::uint64_t seed) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Mat& x = t.value(a);
    Mat mask(x.rows(), x.cols());
    const double keep = 1.0 - rate;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) mask(r, c) = u(rng) < keep ? 1.0 / keep : 0.0;
    Var out = t.make(x.cwiseProduct(mask));
    t.set_back(out, [out, a, mask = std::move(mask)](Tape& t) {
        t.grad_mut(a) += t.grad(out).cwiseProduct(mask);
    });
    return out;
}

Var nll_mean(Tape& t, Var log_probs, std::vector<int> targets) {
    const Mat& lp = t.value(log_probs);
    if (targets.empty()) throw std::invalid_argument("nll_mean: empty target list");
    double sum = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i)
        sum -= lp(static_cast<Eigen::Index>(i), targets[i]);
    Mat value(1, 1);
    value(0, 0) = sum / static_cast<double>(targets.size());
    Var out = t.make(std::move(value));
    t.set_back(out, [out, log_probs, targets = std::move(targets)](Tape& t) {
        const double g = t.grad(out)(0, 0) / static_cast<double>(targets.size());
        Mat& glp = t.grad_mut(log_probs);
        for (std::size_t i = 0; i < targets.size(); ++i)
            glp(static_cast<Eigen::Index>(i), targets[i]) -= g;
    });
    return out;
}

Var bce_with_logits_mean(Tape& t, Var z, std::vector<double> y) {
    const Mat& zv = t.value(z);
    if (zv.cols() != 1 || static_cast<std::size_t>(zv.rows()) != y.size())
        throw std::invalid_argument("bce_with_logits_mean: z must be n x 1 aligned with labels");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < zv.rows(); ++i)
        sum += softplus(-zv(i, 0)) + (1.0 - y[static_cast<std::size_t>(i)]) * zv(i, 0);
    Mat value(1, 1);
    value(0, 0) = sum / static_cast<double>(zv.rows());
    Var out = t.make(std::move(value));
    t.set_back(out, [out, z, y = std::move(y)](Tape& t) {
        const Mat& zv = t.value(z);
        const double g = t.grad(out)(0, 0) / static_cast<double>(zv.rows());
        Mat& gz = t.grad_mut(z);
        for (Eigen::Index i = 0; i < zv.rows(); ++i)
            gz(i, 0) += g * (sigmoid(zv(i, 0)) - y[static_cast<std::size_t>(i)]);
    });
    return out;
}

Var mean_scalars(Tape& t, const std::vector<Var>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("mean_scalars: empty list");
    double sum = 0.0;
    for (Var s : scalars) sum += t.value(s)(0, 0);
    Mat value(1, 1);
    value(0, 0) = sum / static_cast<double>(scalars.size());
    Var out = t.make(std::move(value));
    t.set_back(out, [out, scalars](Tape& t) {
        const double g = t.grad(out)(0, 0) / static_cast<double>(scalars.size());
        for (Var s : scalars) t.grad_mut(s)(0, 0) += g;
    });
    return out;
}

void check_finite(const Tape& t, Var v, const char* where) {
    if (!t.value(v).allFinite())
        throw std::runtime_error(std::string("non-finite activations in ") + where);
}

}  // namespace tmr::ad
