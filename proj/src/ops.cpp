#include "attriprompt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attriprompt {

namespace {

constexpr double k_inv_sqrt2 = 0.70710678118654752440;
constexpr double k_inv_sqrt2pi = 0.39894228040143267794;

void check_same_shape(Tensor a, Tensor b, const char* op) {
    if (a.shape() != b.shape()) {
        throw shape_error(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
    }
}


// C[m x n] += A[m x k] * B[k x n]
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) {
                acc += arow[l] * brow[l];
            }
            crow[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// Prepares gradient buffers and returns whether the node must be recorded.
bool prepare(Tensor& out, std::initializer_list<Tensor> inputs) {
    bool any = false;
    for (Tensor t : inputs) {
        any = any || t.requires_grad();
    }
    if (!any) return false;
    out.set_requires_grad(true);
    out.ensure_grad();
    for (Tensor t : inputs) {
        if (t.requires_grad()) t.ensure_grad();
    }
    return true;
}

// Rows/width split for ops that normalize over the last axis.
std::pair<int, int> last_axis_split(Tensor x, const char* op) {
    if (x.rank() == 0) throw shape_error(std::string(op) + ": rank-0 tensor");
    const int width = x.shape().back();
    const int rows = static_cast<int>(x.size()) / width;
    return {rows, width};
}

}  // namespace

Tensor add(Tape& tape, Tensor a, Tensor b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape(), 0.0);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (prepare(out, {a, b})) {
        tape.push([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape& tape, Tensor a, Tensor b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape(), 0.0);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
    if (prepare(out, {a, b})) {
        tape.push([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, Tensor a, Tensor b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape(), 0.0);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (prepare(out, {a, b})) {
        tape.push([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values()[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values()[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, Tensor a, double c) {
    Tensor out(a.shape(), 0.0);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
    if (prepare(out, {a})) {
        tape.push([a, out, c]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor matmul(Tape& tape, Tensor a, Tensor b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw shape_error("matmul: incompatible shapes " + a.shape_string() + " and " +
                          b.shape_string());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n}, 0.0);
    gemm_nn_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
    if (prepare(out, {a, b})) {
        tape.push([a, b, out, m, k, n]() mutable {
            const double* g = out.grad().data();
            if (a.requires_grad()) {
                gemm_nt_acc(g, b.values().data(), a.grad().data(), m, n, k);
            }
            if (b.requires_grad()) {
                gemm_tn_acc(a.values().data(), g, b.grad().data(), m, k, n);
            }
        });
    }
    return out;
}

Tensor transpose(Tape& tape, Tensor a) {
    const int m = a.rows(), n = a.cols();
    Tensor out({n, m}, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out.values()[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
        }
    }
    if (prepare(out, {a})) {
        tape.push([a, out, m, n]() mutable {
            auto& ga = a.grad();
            const auto& g = out.grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
                }
            }
        });
    }
    return out;
}

Tensor softmax_rows(Tape& tape, Tensor x) {
    const int m = x.rows(), n = x.cols();
    Tensor out({m, n}, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
        double* orow = out.values().data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    if (prepare(out, {x})) {
        tape.push([x, out, m, n]() mutable {
            auto& gx = x.grad();
            for (int i = 0; i < m; ++i) {
                const double* s = out.values().data() + static_cast<std::size_t>(i) * n;
                const double* g = out.grad().data() + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += g[j] * s[j];
                double* gr = gx.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gr[j] += s[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor cosine_rows(Tape& tape, Tensor a, Tensor b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw shape_error("cosine_rows: incompatible shapes " + a.shape_string() + " and " +
                          b.shape_string());
    }
    const int m = a.rows(), n = b.rows(), d = a.cols();
    std::vector<double> norm_a(static_cast<std::size_t>(m)), norm_b(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        const double* row = a.values().data() + static_cast<std::size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j] * row[j];
        if (s == 0.0) {
            throw degenerate_input_error("cosine_rows: zero-norm row " + std::to_string(i) +
                                         " in left operand");
        }
        norm_a[static_cast<std::size_t>(i)] = std::sqrt(s);
    }
    for (int i = 0; i < n; ++i) {
        const double* row = b.values().data() + static_cast<std::size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j] * row[j];
        if (s == 0.0) {
            throw degenerate_input_error("cosine_rows: zero-norm row " + std::to_string(i) +
                                         " in right operand");
        }
        norm_b[static_cast<std::size_t>(i)] = std::sqrt(s);
    }
    Tensor out({m, n}, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a.values().data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < n; ++j) {
            const double* brow = b.values().data() + static_cast<std::size_t>(j) * d;
            double dot = 0.0;
            for (int l = 0; l < d; ++l) dot += arow[l] * brow[l];
            out.values()[static_cast<std::size_t>(i) * n + j] =
                dot / (norm_a[static_cast<std::size_t>(i)] * norm_b[static_cast<std::size_t>(j)]);
        }
    }
    if (prepare(out, {a, b})) {
        tape.push([a, b, out, norm_a, norm_b, m, n, d]() mutable {
            // d cos / d a_i = b_j/(|a||b|) - cos * a_i/|a|^2, symmetric for b.
            for (int i = 0; i < m; ++i) {
                const double* arow = a.values().data() + static_cast<std::size_t>(i) * d;
                const double na = norm_a[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) {
                    const double g = out.grad()[static_cast<std::size_t>(i) * n + j];
                    if (g == 0.0) continue;
                    const double* brow = b.values().data() + static_cast<std::size_t>(j) * d;
                    const double nb = norm_b[static_cast<std::size_t>(j)];
                    const double c = out.values()[static_cast<std::size_t>(i) * n + j];
                    if (a.requires_grad()) {
                        double* ga = a.grad().data() + static_cast<std::size_t>(i) * d;
                        for (int l = 0; l < d; ++l) {
                            ga[l] += g * (brow[l] / (na * nb) - c * arow[l] / (na * na));
                        }
                    }
                    if (b.requires_grad()) {
                        double* gb = b.grad().data() + static_cast<std::size_t>(j) * d;
                        for (int l = 0; l < d; ++l) {
                            gb[l] += g * (arow[l] / (na * nb) - c * brow[l] / (nb * nb));
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(Tape& tape, Tensor x, Tensor gamma, Tensor beta,
                  double eps) {
    if (eps <= 0.0) throw contract_error("layer_norm: eps must be positive");
    const auto [rows, d] = last_axis_split(x, "layer_norm");
    if (gamma.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d)) {
        throw shape_error("layer_norm: affine parameters do not match width " + std::to_string(d));
    }
    Tensor out(x.shape(), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    std::vector<double> normalized(x.size());
    for (int r = 0; r < rows; ++r) {
        const double* row = x.values().data() + static_cast<std::size_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = istd;
        double* nrow = normalized.data() + static_cast<std::size_t>(r) * d;
        double* orow = out.values().data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
            nrow[j] = (row[j] - mean) * istd;
            orow[j] = gamma.values()[static_cast<std::size_t>(j)] * nrow[j] +
                      beta.values()[static_cast<std::size_t>(j)];
        }
    }
    if (prepare(out, {x, gamma, beta})) {
        tape.push([x, gamma, beta, out, inv_std, normalized, rows, d]() mutable {
            for (int r = 0; r < rows; ++r) {
                const double* g = out.grad().data() + static_cast<std::size_t>(r) * d;
                const double* nrow = normalized.data() + static_cast<std::size_t>(r) * d;
                if (gamma.requires_grad()) {
                    auto& gg = gamma.grad();
                    for (int j = 0; j < d; ++j) gg[static_cast<std::size_t>(j)] += g[j] * nrow[j];
                }
                if (beta.requires_grad()) {
                    auto& gb = beta.grad();
                    for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[j];
                }
                if (x.requires_grad()) {
                    const double istd = inv_std[static_cast<std::size_t>(r)];
                    double sum_gy = 0.0, sum_gyn = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gy = g[j] * gamma.values()[static_cast<std::size_t>(j)];
                        sum_gy += gy;
                        sum_gyn += gy * nrow[j];
                    }
                    double* gx = x.grad().data() + static_cast<std::size_t>(r) * d;
                    for (int j = 0; j < d; ++j) {
                        const double gy = g[j] * gamma.values()[static_cast<std::size_t>(j)];
                        gx[j] += istd * (gy - sum_gy / d - nrow[j] * sum_gyn / d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(Tape& tape, Tensor x) {
    Tensor out(x.shape(), 0.0);
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.values()[i];
        out.values()[i] = 0.5 * v * (1.0 + std::erf(v * k_inv_sqrt2));
    }
    if (prepare(out, {x})) {
        tape.push([x, out]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = x.values()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * k_inv_sqrt2));
                const double pdf = k_inv_sqrt2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor absolute(Tape& tape, Tensor x) {
    Tensor out(x.shape(), 0.0);
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::fabs(x.values()[i]);
    if (prepare(out, {x})) {
        tape.push([x, out]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = x.values()[i];
                // subgradient 0 at the kink
                gx[i] += g[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
        });
    }
    return out;
}

Tensor slice_rows(Tape& tape, Tensor x, int row_begin, int row_end) {
    const int m = x.rows(), n = x.cols();
    if (row_begin < 0 || row_end > m || row_begin >= row_end) {
        throw shape_error("slice_rows: range [" + std::to_string(row_begin) + ", " +
                          std::to_string(row_end) + ") invalid for " + x.shape_string());
    }
    const int h = row_end - row_begin;
    Tensor out({h, n}, 0.0);
    std::copy_n(x.values().data() + static_cast<std::size_t>(row_begin) * n,
                static_cast<std::size_t>(h) * n, out.values().data());
    if (prepare(out, {x})) {
        tape.push([x, out, row_begin, h, n]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * n; ++i) {
                gx[static_cast<std::size_t>(row_begin) * n + i] += g[i];
            }
        });
    }
    return out;
}

Tensor slice_cols(Tape& tape, Tensor x, int col_begin, int col_end) {
    const int m = x.rows(), n = x.cols();
    if (col_begin < 0 || col_end > n || col_begin >= col_end) {
        throw shape_error("slice_cols: range [" + std::to_string(col_begin) + ", " +
                          std::to_string(col_end) + ") invalid for " + x.shape_string());
    }
    const int w = col_end - col_begin;
    Tensor out({m, w}, 0.0);
    for (int i = 0; i < m; ++i) {
        std::copy_n(x.values().data() + static_cast<std::size_t>(i) * n + col_begin,
                    static_cast<std::size_t>(w),
                    out.values().data() + static_cast<std::size_t>(i) * w);
    }
    if (prepare(out, {x})) {
        tape.push([x, out, col_begin, m, n, w]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < w; ++j) {
                    gx[static_cast<std::size_t>(i) * n + col_begin + j] +=
                        g[static_cast<std::size_t>(i) * w + j];
                }
            }
        });
    }
    return out;
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no operands");
    const int n = parts[0].cols();
    int total = 0;
    for (Tensor p : parts) {
        if (p.cols() != n) {
            throw shape_error("concat_rows: column mismatch " + p.shape_string());
        }
        total += p.rows();
    }
    Tensor out({total, n}, 0.0);
    std::size_t offset = 0;
    bool any_grad = false;
    for (Tensor p : parts) {
        std::copy_n(p.values().data(), p.size(), out.values().data() + offset);
        offset += p.size();
        any_grad = any_grad || p.requires_grad();
    }
    if (any_grad) {
        out.set_requires_grad(true);
        out.ensure_grad();
        for (Tensor p : parts) {
            if (p.requires_grad()) p.ensure_grad();
        }
        std::vector<Tensor> held = parts;
        tape.push([held, out]() mutable {
            const auto& g = out.grad();
            std::size_t offset = 0;
            for (Tensor& p : held) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
                }
                offset += p.size();
            }
        });
    }
    return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no operands");
    const int m = parts[0].rows();
    int total = 0;
    for (Tensor p : parts) {
        if (p.rows() != m) {
            throw shape_error("concat_cols: row mismatch " + p.shape_string());
        }
        total += p.cols();
    }
    Tensor out({m, total}, 0.0);
    int col = 0;
    bool any_grad = false;
    for (Tensor p : parts) {
        const int w = p.cols();
        for (int i = 0; i < m; ++i) {
            std::copy_n(p.values().data() + static_cast<std::size_t>(i) * w,
                        static_cast<std::size_t>(w),
                        out.values().data() + static_cast<std::size_t>(i) * total + col);
        }
        col += w;
        any_grad = any_grad || p.requires_grad();
    }
    if (any_grad) {
        out.set_requires_grad(true);
        out.ensure_grad();
        for (Tensor p : parts) {
            if (p.requires_grad()) p.ensure_grad();
        }
        std::vector<Tensor> held = parts;
        tape.push([held, out, m, total]() mutable {
            const auto& g = out.grad();
            int col = 0;
            for (Tensor& p : held) {
                const int w = p.cols();
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < w; ++j) {
                            gp[static_cast<std::size_t>(i) * w + j] +=
                                g[static_cast<std::size_t>(i) * total + col + j];
                        }
                    }
                }
                col += w;
            }
        });
    }
    return out;
}

Tensor add_row_broadcast(Tape& tape, Tensor x, Tensor b) {
    const int m = x.rows(), n = x.cols();
    if (b.size() != static_cast<std::size_t>(n)) {
        throw shape_error("add_row_broadcast: bias " + b.shape_string() + " vs width " +
                          std::to_string(n));
    }
    Tensor out({m, n}, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
        double* orow = out.values().data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = row[j] + b.values()[static_cast<std::size_t>(j)];
    }
    if (prepare(out, {x, b})) {
        tape.push([x, b, out, m, n]() mutable {
            const auto& g = out.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * n + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor row_affine(Tape& tape, Tensor x, Tensor alpha, Tensor beta) {
    const auto [rows, d] = last_axis_split(x, "row_affine");
    if (alpha.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d)) {
        throw shape_error("row_affine: parameter width mismatch for " + x.shape_string());
    }
    Tensor out(x.shape(), 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* row = x.values().data() + static_cast<std::size_t>(r) * d;
        double* orow = out.values().data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
            orow[j] = alpha.values()[static_cast<std::size_t>(j)] * row[j] +
                      beta.values()[static_cast<std::size_t>(j)];
        }
    }
    if (prepare(out, {x, alpha, beta})) {
        tape.push([x, alpha, beta, out, rows, d]() mutable {
            const auto& g = out.grad();
            for (int r = 0; r < rows; ++r) {
                const double* grow = g.data() + static_cast<std::size_t>(r) * d;
                const double* xrow = x.values().data() + static_cast<std::size_t>(r) * d;
                if (x.requires_grad()) {
                    double* gx = x.grad().data() + static_cast<std::size_t>(r) * d;
                    for (int j = 0; j < d; ++j) {
                        gx[j] += grow[j] * alpha.values()[static_cast<std::size_t>(j)];
                    }
                }
                if (alpha.requires_grad()) {
                    auto& ga = alpha.grad();
                    for (int j = 0; j < d; ++j) ga[static_cast<std::size_t>(j)] += grow[j] * xrow[j];
                }
                if (beta.requires_grad()) {
                    auto& gb = beta.grad();
                    for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += grow[j];
                }
            }
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, Tensor x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (prepare(out, {x})) {
        tape.push([x, out]() mutable {
            const double g = out.grad()[0];
            auto& gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor logsumexp_all(Tape& tape, Tensor x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.values()) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : x.values()) denom += std::exp(v - mx);
    Tensor out = Tensor::scalar(mx + std::log(denom));
    if (prepare(out, {x})) {
        tape.push([x, out, mx, denom]() mutable {
            const double g = out.grad()[0];
            auto& gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += g * std::exp(x.values()[i] - mx) / denom;
            }
        });
    }
    return out;
}

Tensor pick(Tape& tape, Tensor x, int flat_index) {
    if (flat_index < 0 || static_cast<std::size_t>(flat_index) >= x.size()) {
        throw contract_error("pick: index " + std::to_string(flat_index) + " out of range for " +
                             std::to_string(x.size()) + " entries");
    }
    Tensor out = Tensor::scalar(x.values()[static_cast<std::size_t>(flat_index)]);
    if (prepare(out, {x})) {
        tape.push([x, out, flat_index]() mutable {
            x.grad()[static_cast<std::size_t>(flat_index)] += out.grad()[0];
        });
    }
    return out;
}

Tensor reshape(Tape& tape, Tensor x, std::vector<int> new_shape) {
    if (shape_product(new_shape) != x.size()) {
        throw shape_error("reshape: cannot view " + x.shape_string() + " as " +
                          shape_to_string(new_shape));
    }
    Tensor out(std::move(new_shape), x.values());
    if (prepare(out, {x})) {
        tape.push([x, out]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor embedding_rows(Tape& tape, Tensor table, const std::vector<int>& ids) {
    const int vocab = table.rows(), d = table.cols();
    Tensor out({static_cast<int>(ids.size()), d}, 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= vocab) {
            throw contract_error("embedding_rows: token id " + std::to_string(id) +
                                 " outside vocabulary of " + std::to_string(vocab));
        }
        std::copy_n(table.values().data() + static_cast<std::size_t>(id) * d,
                    static_cast<std::size_t>(d), out.values().data() + i * d);
    }
    if (prepare(out, {table})) {
        std::vector<int> held = ids;
        tape.push([table, out, held, d]() mutable {
            auto& gt = table.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < held.size(); ++i) {
                for (int j = 0; j < d; ++j) {
                    gt[static_cast<std::size_t>(held[i]) * d + j] += g[i * d + j];
                }
            }
        });
    }
    return out;
}

FiniteDiffReport finite_diff_check(const Objective& fn,
                                   const std::vector<std::pair<std::string, Tensor>>& params,
                                   double step) {
    if (step <= 0.0) throw contract_error("finite_diff_check: step must be positive");
    const double v1 = fn(false);
    const double v2 = fn(false);
    if (!(v1 == v2)) {
        throw determinism_error("finite_diff_check: repeated evaluations differ (" +
                                std::to_string(v1) + " vs " + std::to_string(v2) + ")");
    }
    for (auto& [name, p] : params) {
        Tensor t = p;
        t.ensure_grad();
        t.zero_grad();
    }
    fn(true);
    std::vector<std::vector<double>> ad_grads;
    ad_grads.reserve(params.size());
    for (const auto& [name, p] : params) {
        ad_grads.push_back(p.grad());
    }

    FiniteDiffReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        auto& vals = p.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double fp = fn(false);
            vals[i] = saved - step;
            const double fm = fn(false);
            vals[i] = saved;
            const double fd = (fp - fm) / (2.0 * step);
            const double ad = ad_grads[pi][i];
            const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-8});
            const double rel = std::fabs(ad - fd) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].first;
                report.worst_entry = i;
                report.worst_ad = ad;
                report.worst_fd = fd;
            }
        }
    }
    return report;
}

}  // namespace attriprompt
