#include "diveup/reference.hpp"

#include <algorithm>
#include <cmath>

namespace diveup::ref {

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

Tensor softmax_last_naive(const Tensor& a) {
    const int k = a.shape.back();
    const long long outer = a.numel() / k;
    Tensor out = Tensor::zeros(a.shape);
    for (long long o = 0; o < outer; ++o) {
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(a.data[o * k + j]);
        for (int j = 0; j < k; ++j) out.data[o * k + j] = std::exp(a.data[o * k + j]) / denom;
    }
    return out;
}

Tensor project_naive(const Tensor& features, const Tensor& phi) {
    const int h = features.shape[0], w = features.shape[1], c = features.shape[2];
    const int d = phi.shape[1];
    Tensor out = Tensor::zeros({h, w, d});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int ci = 0; ci < c; ++ci) {
                    acc += phi.at(ci, j) * features.at(y, x, ci);
                }
                out.at(y, x, j) = acc;
            }
        }
    }
    return out;
}

Tensor affinity_naive(const Tensor& z, int window, double tau) {
    const int h = z.shape[0], w = z.shape[1], d = z.shape[2];
    const int r = window / 2;
    Tensor out = Tensor::zeros({h, w, window, window});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double denom = 0.0;
            for (int oy = -r; oy <= r; ++oy) {
                for (int ox = -r; ox <= r; ++ox) {
                    const int qy = clampi(y + oy, 0, h - 1);
                    const int qx = clampi(x + ox, 0, w - 1);
                    double dot = 0.0;
                    for (int c = 0; c < d; ++c) dot += z.at(y, x, c) * z.at(qy, qx, c);
                    const double e = std::exp(dot / tau);
                    out.at(y, x, oy + r, ox + r) = e;
                    denom += e;
                }
            }
            for (int oy = 0; oy < window; ++oy) {
                for (int ox = 0; ox < window; ++ox) {
                    out.at(y, x, oy, ox) /= denom;
                }
            }
        }
    }
    return out;
}

Tensor entropy_naive(const Tensor& affinity) {
    const int h = affinity.shape[0], w = affinity.shape[1];
    const int window = affinity.shape[2];
    Tensor out = Tensor::zeros({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int oy = 0; oy < window; ++oy) {
                for (int ox = 0; ox < window; ++ox) {
                    const double s = affinity.at(y, x, oy, ox);
                    if (s > 0.0) acc -= s * std::log(s);
                }
            }
            out.at(y, x) = acc;
        }
    }
    return out;
}

Tensor spikiness_naive(const Tensor& z, double eps) {
    const int h = z.shape[0], w = z.shape[1], d = z.shape[2];
    Tensor out = Tensor::zeros({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double linf = 0.0, l2 = 0.0;
            for (int c = 0; c < d; ++c) {
                const double v = z.at(y, x, c);
                linf = std::max(linf, std::fabs(v));
                l2 += v * v;
            }
            out.at(y, x) = linf / (std::sqrt(l2) + eps);
        }
    }
    return out;
}

Tensor com_naive(const Tensor& affinity, int window) {
    const int h = affinity.shape[0], w = affinity.shape[1];
    const int r = window / 2;
    Tensor out = Tensor::zeros({h, w, 2});
    if (r == 0) return out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double mx = 0.0, my = 0.0;
            for (int oy = -r; oy <= r; ++oy) {
                for (int ox = -r; ox <= r; ++ox) {
                    const double s = affinity.at(y, x, oy + r, ox + r);
                    mx += s * ox;
                    my += s * oy;
                }
            }
            out.at(y, x, 0) = std::min(std::max(mx / r, -1.0), 1.0);
            out.at(y, x, 1) = std::min(std::max(my / r, -1.0), 1.0);
        }
    }
    return out;
}

Tensor zscore_naive(const Tensor& m, double std_floor) {
    const long long n = m.numel();
    double mean = 0.0;
    for (double v : m.data) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : m.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double denom = std::max(std::sqrt(var), std_floor);
    Tensor out = Tensor::zeros(m.shape);
    for (long long i = 0; i < n; ++i) out.data[i] = (m.data[i] - mean) / denom;
    return out;
}

Tensor confidence_naive(const Tensor& zscored_entropy, const Tensor& spikiness, double beta,
                        double gamma) {
    Tensor out = Tensor::zeros(zscored_entropy.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double hinge = std::max(0.0, spikiness.data[i] - gamma);
        out.data[i] = -zscored_entropy.data[i] - beta * hinge;
    }
    return out;
}

Tensor select_naive(const Tensor& scores) {
    const int h = scores.shape[0], w = scores.shape[1], n = scores.shape[2];
    Tensor out = Tensor::zeros({h, w, n});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = 0;
            for (int i = 1; i < n; ++i) {
                if (scores.at(y, x, i) > scores.at(y, x, best)) best = i;
            }
            out.at(y, x, best) = 1.0;
        }
    }
    return out;
}

Tensor consensus_naive(const Tensor& fields, const Tensor& alpha) {
    const int h = fields.shape[0], w = fields.shape[1], n = fields.shape[2];
    Tensor out = Tensor::zeros({h, w, 2});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int i = 0; i < n; ++i) {
                const double a = alpha.at(y, x, i);
                out.at(y, x, 0) += a * fields.at(y, x, i, 0);
                out.at(y, x, 1) += a * fields.at(y, x, i, 1);
            }
        }
    }
    return out;
}

Tensor mean_fuse_naive(const Tensor& fields) {
    const int h = fields.shape[0], w = fields.shape[1], n = fields.shape[2];
    Tensor out = Tensor::zeros({h, w, 2});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int comp = 0; comp < 2; ++comp) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) acc += fields.at(y, x, i, comp);
                acc /= n;
                out.at(y, x, comp) = std::min(std::max(acc, -1.0), 1.0);
            }
        }
    }
    return out;
}

Tensor attention_naive(const Tensor& q, const Tensor& k, const Tensor& v, int window, int s) {
    const int hq = q.shape[0], wq = q.shape[1], d = q.shape[2];
    const int hk = k.shape[0], wk = k.shape[1];
    const int c = v.shape[2];
    const int r = window / 2;
    Tensor out = Tensor::zeros({hq, wq, c});
    for (int y = 0; y < hq; ++y) {
        for (int x = 0; x < wq; ++x) {
            const int ay = y / s, ax = x / s;
            double denom = 0.0;
            std::vector<double> weights;
            std::vector<std::pair<int, int>> cells;
            for (int oy = -r; oy <= r; ++oy) {
                for (int ox = -r; ox <= r; ++ox) {
                    const int ky = ay + oy, kx = ax + ox;
                    if (ky < 0 || ky >= hk || kx < 0 || kx >= wk) continue;
                    double dot = 0.0;
                    for (int cd = 0; cd < d; ++cd) dot += q.at(y, x, cd) * k.at(ky, kx, cd);
                    const double e = std::exp(dot / std::sqrt(static_cast<double>(d)));
                    weights.push_back(e);
                    cells.emplace_back(ky, kx);
                    denom += e;
                }
            }
            for (size_t j = 0; j < weights.size(); ++j) {
                const double wgt = weights[j] / denom;
                for (int cc = 0; cc < c; ++cc) {
                    out.at(y, x, cc) += wgt * v.at(cells[j].first, cells[j].second, cc);
                }
            }
        }
    }
    return out;
}

Tensor avgpool_naive(const Tensor& a, int s) {
    const int h = a.shape[0], w = a.shape[1];
    const int c = a.rank() == 3 ? a.shape[2] : 1;
    const int oh = h / s, ow = w / s;
    std::vector<int> shape = a.rank() == 3 ? std::vector<int>{oh, ow, c}
                                           : std::vector<int>{oh, ow};
    Tensor out = Tensor::zeros(shape);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int py = 0; py < s; ++py) {
                    for (int px = 0; px < s; ++px) {
                        acc += a.data[((static_cast<long long>(y * s + py)) * w + x * s + px) * c +
                                      ch];
                    }
                }
                out.data[(static_cast<long long>(y) * ow + x) * c + ch] = acc / (s * s);
            }
        }
    }
    return out;
}

double loss_rec_naive(const Tensor& pred, const Tensor& target) {
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double diff = pred.data[i] - target.data[i];
        acc += diff * diff;
    }
    return acc / static_cast<double>(pred.numel());
}

double loss_guide_naive(const Tensor& pred_field, const Tensor& target_field) {
    const int h = pred_field.shape[0], w = pred_field.shape[1];
    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            acc += std::fabs(pred_field.at(y, x, 0) - target_field.at(y, x, 0)) +
                   std::fabs(pred_field.at(y, x, 1) - target_field.at(y, x, 1));
        }
    }
    return acc / (static_cast<double>(h) * w);
}

std::pair<std::vector<double>, double> miou_naive(const std::vector<int>& pred,
                                                  const std::vector<int>& gt, int n_classes) {
    std::vector<long long> confusion(static_cast<size_t>(n_classes) * n_classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        confusion[static_cast<size_t>(gt[i]) * n_classes + pred[i]]++;
    }
    std::vector<double> iou(n_classes, 0.0);
    double total = 0.0;
    int active = 0;
    for (int c = 0; c < n_classes; ++c) {
        long long tp = confusion[static_cast<size_t>(c) * n_classes + c];
        long long fp = 0, fn = 0;
        for (int o = 0; o < n_classes; ++o) {
            if (o == c) continue;
            fp += confusion[static_cast<size_t>(o) * n_classes + c];
            fn += confusion[static_cast<size_t>(c) * n_classes + o];
        }
        const long long uni = tp + fp + fn;
        if (uni == 0) {
            iou[c] = -1.0;  // absent from both prediction and ground truth
            continue;
        }
        iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
        total += iou[c];
        active++;
    }
    return {iou, active > 0 ? total / active : 0.0};
}

double delta1_naive(const std::vector<double>& pred, const std::vector<double>& gt) {
    long long hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double ratio = std::max(pred[i] / gt[i], gt[i] / pred[i]);
        if (ratio < 1.25) hits++;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace diveup::ref
