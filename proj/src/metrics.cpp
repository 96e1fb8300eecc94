#include "vip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "vip/errors.hpp"

namespace vip {

namespace {

// Column-mean centering, double accumulation.
Tensor center_columns(const Tensor& x) {
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor out({n, d});
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            out(i, j) = static_cast<float>(x(i, j) - mean);
    }
    return out;
}

// ||A^T B||_F^2 computed in double without materializing A^T B beyond one
// entry at a time.
double cross_frob_sq(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.extent(0), da = a.extent(1), db = b.extent(1);
    double acc = 0.0;
    for (std::size_t p = 0; p < da; ++p)
        for (std::size_t q = 0; q < db; ++q) {
            double e = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                e += static_cast<double>(a(i, p)) * static_cast<double>(b(i, q));
            acc += e * e;
        }
    return acc;
}

double row_norm(const Tensor& x, std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < x.extent(1); ++j)
        acc += static_cast<double>(x(i, j)) * static_cast<double>(x(i, j));
    return std::sqrt(acc);
}

} // namespace

CkaReport linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
    if (x.data.rank() != 2 || y.data.rank() != 2)
        throw std::invalid_argument("linear_cka: expects 2-D feature matrices");
    if (x.rows() != y.rows())
        throw std::invalid_argument("linear_cka: row counts differ");
    if (x.rows() < 2)
        throw std::invalid_argument("linear_cka: needs at least 2 samples");
    const Tensor xc = center_columns(x.data);
    const Tensor yc = center_columns(y.data);
    const double xx = cross_frob_sq(xc, xc);
    const double yy = cross_frob_sq(yc, yc);
    if (xx == 0.0 || yy == 0.0)
        throw UndefinedResultError("linear_cka: zero (constant) feature matrix");
    const double xy = cross_frob_sq(xc, yc);
    CkaReport r;
    r.value = xy / std::sqrt(xx * yy);
    r.n = x.rows();
    r.label_x = x.label;
    r.label_y = y.label;
    return r;
}

GramDecomposition gram_decompose(const FeatureMatrix& xp, const FeatureMatrix& xr) {
    if (xp.data.shape() != xr.data.shape())
        throw std::invalid_argument("gram_decompose: shape mismatch");
    const std::size_t n = xp.rows(), d = xp.cols();
    auto gram = [&](const Tensor& a, const Tensor& b) {
        Tensor g({n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c)
                    acc += static_cast<double>(a(i, c)) * static_cast<double>(b(j, c));
                g(i, j) = static_cast<float>(acc);
            }
        return g;
    };
    GramDecomposition out;
    out.pp = gram(xp.data, xp.data);
    out.rr = gram(xr.data, xr.data);
    out.pr = gram(xp.data, xr.data);
    out.rp = gram(xr.data, xp.data);
    return out;
}

std::vector<std::optional<double>> layerwise_cls_similarity(
    const std::vector<Tensor>& cls_per_layer) {
    if (cls_per_layer.size() < 2)
        throw std::invalid_argument("layerwise_cls_similarity: needs at least 2 layers");
    const Tensor& last = cls_per_layer.back();
    std::vector<std::optional<double>> out;
    for (const Tensor& v : cls_per_layer) {
        try {
            out.push_back(cosine(v, last));
        } catch (const UndefinedResultError&) {
            out.push_back(std::nullopt);
        }
    }
    return out;
}

PairwiseCosineStats pairwise_cosine_stats(const FeatureMatrix& tokens) {
    const std::size_t n = tokens.rows(), d = tokens.cols();
    if (n < 2) throw std::invalid_argument("pairwise_cosine_stats: needs at least 2 rows");
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = row_norm(tokens.data, i);
        if (norms[i] == 0.0)
            throw UndefinedResultError("pairwise_cosine_stats: row " + std::to_string(i) +
                                       " has zero norm");
    }
    PairwiseCosineStats s;
    s.min = 1.0;
    s.max = -1.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                acc += static_cast<double>(tokens.data(i, c)) *
                       static_cast<double>(tokens.data(j, c));
            const double cos = acc / (norms[i] * norms[j]);
            sum += cos;
            s.min = std::min(s.min, cos);
            s.max = std::max(s.max, cos);
            ++s.pairs;
        }
    s.mean = sum / static_cast<double>(s.pairs);
    return s;
}

ActivationProfile activation_profile(const FeatureMatrix& tokens, std::size_t top_k, float eps) {
    const std::size_t n = tokens.rows(), d = tokens.cols();
    if (top_k > d) throw std::invalid_argument("activation_profile: top_k exceeds feature dim");
    Tensor gain({d}), bias({d});
    for (std::size_t j = 0; j < d; ++j) gain(j) = 1.0f;
    const Tensor normed = layer_norm(tokens.data, gain, bias, eps);

    std::vector<double> pre(d, 0.0), post(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            pre[j] += tokens.data(i, j);
            post[j] += normed(i, j);
        }
    for (std::size_t j = 0; j < d; ++j) {
        pre[j] /= static_cast<double>(n);
        post[j] /= static_cast<double>(n);
    }

    std::vector<std::size_t> order(d);
    for (std::size_t j = 0; j < d; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pre[a] > pre[b]; });

    ActivationProfile p;
    for (std::size_t r = 0; r < top_k; ++r) {
        p.dims.push_back(order[r]);
        p.pre_means.push_back(pre[order[r]]);
        p.post_means.push_back(post[order[r]]);
    }
    return p;
}

double one_shot_probe(const FeatureMatrix& train, const std::vector<int>& train_labels,
                      const FeatureMatrix& test, const std::vector<int>& test_labels,
                      std::size_t k) {
    if (train.rows() != train_labels.size() || test.rows() != test_labels.size())
        throw std::invalid_argument("one_shot_probe: label count mismatch");
    if (train.cols() != test.cols())
        throw std::invalid_argument("one_shot_probe: feature dim mismatch");
    if (k == 0) throw std::invalid_argument("one_shot_probe: k must be >= 1");
    std::map<int, std::size_t> class_row;
    for (std::size_t i = 0; i < train_labels.size(); ++i)
        if (!class_row.emplace(train_labels[i], i).second)
            throw std::invalid_argument("one_shot_probe: class " +
                                        std::to_string(train_labels[i]) +
                                        " has more than one training row");
    for (int label : test_labels)
        if (!class_row.count(label))
            throw std::invalid_argument("one_shot_probe: test class " + std::to_string(label) +
                                        " has no training row");

    std::vector<double> proto_norm(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i) {
        proto_norm[i] = row_norm(train.data, i);
        if (proto_norm[i] == 0.0)
            throw std::invalid_argument("one_shot_probe: zero-norm prototype row " +
                                        std::to_string(i));
    }

    std::size_t hits = 0;
    for (std::size_t t = 0; t < test.rows(); ++t) {
        const double tn = row_norm(test.data, t);
        if (tn == 0.0)
            throw std::invalid_argument("one_shot_probe: zero-norm test row " + std::to_string(t));
        // (score desc, class asc) ranking for a deterministic top-k.
        std::vector<std::pair<double, int>> scored;
        for (const auto& [label, row] : class_row) {
            double acc = 0.0;
            for (std::size_t c = 0; c < train.cols(); ++c)
                acc += static_cast<double>(train.data(row, c)) *
                       static_cast<double>(test.data(t, c));
            scored.emplace_back(acc / (proto_norm[row] * tn), label);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const std::size_t top = std::min(k, scored.size());
        for (std::size_t r = 0; r < top; ++r)
            if (scored[r].second == test_labels[t]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(test.rows());
}

} // namespace vip
