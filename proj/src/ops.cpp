#include "hetsurv/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hetsurv/errors.hpp"
#include "hetsurv/kernels.hpp"

namespace hetsurv::ag {

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    auto node = std::make_shared<Node>(std::move(value), req);
    if (grad_enabled() && req) {
        node->parents = std::move(parents);
        node->backward = std::move(bw);
    }
    return node;
}

void require_rank(const Var& x, int rank, const char* what) {
    if (x->value.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + x->value.shape_str());
    }
}

int grid_channels(const Var& grid) {
    if (grid->value.rank() != 3) {
        throw DimensionError("expected [h x w x c] grid, got shape " + grid->value.shape_str());
    }
    return grid->value.dim(2);
}

void check_grid_mask(const Var& grid, const std::vector<std::uint8_t>& visible) {
    const std::size_t cells = static_cast<std::size_t>(grid->value.dim(0)) *
                              static_cast<std::size_t>(grid->value.dim(1));
    if (visible.size() != cells) {
        throw DimensionError("visibility mask has " + std::to_string(visible.size()) +
                             " cells, grid has " + std::to_string(cells));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const int m = a->value.dim(0), k = a->value.dim(1);
    const int k2 = b->value.dim(0), n = b->value.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + a->value.shape_str() + " vs " +
                             b->value.shape_str());
    }
    Tensor out({m, n});
    kernels::matmul(a->value.data(), b->value.data(), out.data(), m, k, n);
    return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::matmul_nt_acc(self.grad.data(), b->value.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::matmul_tn_acc(a->value.data(), self.grad.data(), b->grad.data(), k, m, n);
        }
    });
}

Var transpose(const Var& x) {
    require_rank(x, 2, "transpose");
    const int m = x->value.dim(0), n = x->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x->value.at(i, j);
    return make_op(std::move(out), {x}, [x, m, n](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) x->grad.at(i, j) += self.grad.at(j, i);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        for (const Var& p : {a, b}) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

Var add_rowvec(const Var& x, const Var& b) {
    require_rank(x, 2, "add_rowvec input");
    const int m = x->value.dim(0), n = x->value.dim(1);
    if (b->value.size() != n) {
        throw DimensionError("add_rowvec: bias shape " + b->value.shape_str() + " does not match columns of " +
                             x->value.shape_str());
    }
    Tensor out = x->value;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += b->value[j];
    return make_op(std::move(out), {x, b}, [x, b, m, n](Node& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) b->grad[j] += self.grad.at(i, j);
        }
    });
}

Var scale(const Var& x, double c) {
    Tensor out = x->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    return make_op(std::move(out), {x}, [x, c](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) x->grad[i] += c * self.grad[i];
    });
}

Var dense_forward(const Var& x, const Var& w, const Var& b) { return add_rowvec(matmul(x, w), b); }

Tensor gcn_normalize_adj(const Tensor& adj) {
    if (adj.rank() != 2 || adj.dim(0) != adj.dim(1)) {
        throw DimensionError("gcn: adjacency must be square, got " + adj.shape_str());
    }
    const int n = adj.dim(0);
    std::vector<double> dinv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double deg = 1.0;  // self-loop
        for (int j = 0; j < n; ++j) {
            const double v = adj.at(i, j);
            if (v < 0.0) throw DimensionError("gcn: adjacency entries must be non-negative");
            deg += v;
        }
        dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    Tensor out({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double aij = adj.at(i, j) + (i == j ? 1.0 : 0.0);
            out.at(i, j) = dinv[static_cast<std::size_t>(i)] * aij * dinv[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

Var gcn_forward_normalized(const Tensor& adj_hat, const Var& x, const Var& w) {
    if (adj_hat.dim(1) != x->value.dim(0)) {
        throw DimensionError("gcn: adjacency " + adj_hat.shape_str() + " does not match features " +
                             x->value.shape_str());
    }
    return matmul(matmul(constant(adj_hat), x), w);
}

Var gcn_forward(const Tensor& adj, const Var& x, const Var& w) {
    return gcn_forward_normalized(gcn_normalize_adj(adj), x, w);
}

// ---------------------------------------------------------------------------
// Pointwise and normalization
// ---------------------------------------------------------------------------

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor saved = out;
    return make_op(std::move(out), {x}, [x, saved](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
        }
    });
}

Var vtanh(const Var& x) {
    Tensor out = x->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Tensor saved = out;
    return make_op(std::move(out), {x}, [x, saved](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += self.grad[i] * (1.0 - saved[i] * saved[i]);
        }
    });
}

Var prelu(const Var& x, const Var& slope) {
    if (slope->value.size() != 1) {
        throw DimensionError("prelu: slope must be a scalar parameter, got " + slope->value.shape_str());
    }
    const double a = slope->value[0];
    Tensor out = x->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.0 ? out[i] : a * out[i];
    return make_op(std::move(out), {x, slope}, [x, slope, a](Node& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.size(); ++i) {
                x->grad[i] += self.grad[i] * (x->value[i] >= 0.0 ? 1.0 : a);
            }
        }
        if (slope->requires_grad) {
            slope->ensure_grad();
            double acc = 0.0;
            for (std::int64_t i = 0; i < self.grad.size(); ++i) {
                if (x->value[i] < 0.0) acc += self.grad[i] * x->value[i];
            }
            slope->grad[0] += acc;
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int c = x->value.dim(x->value.rank() - 1);
    if (gamma->value.size() != c || beta->value.size() != c) {
        throw DimensionError("layer_norm: affine parameters must have length " + std::to_string(c));
    }
    const int rows = static_cast<int>(x->value.size() / c);
    Tensor out(x->value.shape());
    Tensor inv_sigma({rows});
    kernels::layer_norm(x->value.data(), gamma->value.data(), beta->value.data(), out.data(),
                        inv_sigma.data(), rows, c, eps);
    // xhat saved for backward: (x - mean) * inv_sigma per row.
    Tensor xhat(x->value.shape());
    for (int r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x->value[static_cast<std::int64_t>(r) * c + j];
        mean /= c;
        for (int j = 0; j < c; ++j) {
            xhat[static_cast<std::int64_t>(r) * c + j] =
                (x->value[static_cast<std::int64_t>(r) * c + j] - mean) * inv_sigma[r];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_sigma, rows, c](Node& self) {
                       if (gamma->requires_grad) {
                           gamma->ensure_grad();
                           for (int r = 0; r < rows; ++r)
                               for (int j = 0; j < c; ++j) {
                                   const std::int64_t idx = static_cast<std::int64_t>(r) * c + j;
                                   gamma->grad[j] += self.grad[idx] * xhat[idx];
                               }
                       }
                       if (beta->requires_grad) {
                           beta->ensure_grad();
                           for (int r = 0; r < rows; ++r)
                               for (int j = 0; j < c; ++j)
                                   beta->grad[j] += self.grad[static_cast<std::int64_t>(r) * c + j];
                       }
                       if (x->requires_grad) {
                           x->ensure_grad();
                           for (int r = 0; r < rows; ++r) {
                               double sum_g = 0.0, sum_gx = 0.0;
                               for (int j = 0; j < c; ++j) {
                                   const std::int64_t idx = static_cast<std::int64_t>(r) * c + j;
                                   const double gj = self.grad[idx] * gamma->value[j];
                                   sum_g += gj;
                                   sum_gx += gj * xhat[idx];
                               }
                               const double mg = sum_g / c, mgx = sum_gx / c;
                               for (int j = 0; j < c; ++j) {
                                   const std::int64_t idx = static_cast<std::int64_t>(r) * c + j;
                                   const double gj = self.grad[idx] * gamma->value[j];
                                   x->grad[idx] += inv_sigma[r] * (gj - mg - xhat[idx] * mgx);
                               }
                           }
                       }
                   });
}

Var dropout(const Var& x, double rate, bool training, Rng& rng) {
    if (rate >= 1.0 || rate < 0.0) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(x->value.shape());
    Tensor out = x->value;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : keep_scale;
        mask[i] = m;
        out[i] *= m;
    }
    return make_op(std::move(out), {x}, [x, mask](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i] * mask[i];
    });
}

Var softmax_vec(const Var& x) {
    require_rank(x, 1, "softmax_vec");
    const std::int64_t n = x->value.size();
    double mx = x->value[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, x->value[i]);
    Tensor out = x->value;
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = std::exp(out[i] - mx);
        sum += out[i];
    }
    for (std::int64_t i = 0; i < n; ++i) out[i] /= sum;
    Tensor saved = out;
    return make_op(std::move(out), {x}, [x, saved](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        double dot = 0.0;
        for (std::int64_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * saved[i];
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += saved[i] * (self.grad[i] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out(shape, x->value.values());
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: empty input");
    const int c = static_cast<int>(rows[0]->value.size());
    const int m = static_cast<int>(rows.size());
    Tensor out({m, c});
    for (int i = 0; i < m; ++i) {
        if (rows[static_cast<std::size_t>(i)]->value.size() != c) {
            throw DimensionError("stack_rows: inconsistent row lengths");
        }
        for (int j = 0; j < c; ++j) out.at(i, j) = rows[static_cast<std::size_t>(i)]->value[j];
    }
    std::vector<Var> parents = rows;
    return make_op(std::move(out), parents, [rows, m, c](Node& self) {
        for (int i = 0; i < m; ++i) {
            const Var& r = rows[static_cast<std::size_t>(i)];
            if (!r->requires_grad) continue;
            r->ensure_grad();
            for (int j = 0; j < c; ++j) r->grad[j] += self.grad.at(i, j);
        }
    });
}

Var stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("stack_scalars: empty input");
    const int n = static_cast<int>(xs.size());
    Tensor out({n});
    for (int i = 0; i < n; ++i) out[i] = xs[static_cast<std::size_t>(i)]->value.scalar_value();
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents, [xs, n](Node& self) {
        for (int i = 0; i < n; ++i) {
            const Var& s = xs[static_cast<std::size_t>(i)];
            if (!s->requires_grad) continue;
            s->ensure_grad();
            s->grad[0] += self.grad[i];
        }
    });
}

Var take_row(const Var& x, int row) {
    require_rank(x, 2, "take_row");
    const int m = x->value.dim(0), c = x->value.dim(1);
    if (row < 0 || row >= m) throw DimensionError("take_row: row index out of range");
    Tensor out({c});
    for (int j = 0; j < c; ++j) out[j] = x->value.at(row, j);
    return make_op(std::move(out), {x}, [x, row, c](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int j = 0; j < c; ++j) x->grad.at(row, j) += self.grad[j];
    });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return make_op(Tensor::scalar(s), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double g = self.grad[0];
        for (std::int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
}

Var mean_all(const Var& x) {
    const double n = static_cast<double>(x->value.size());
    double s = 0.0;
    for (std::int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return make_op(Tensor::scalar(s / n), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double g = self.grad[0] / n;
        for (std::int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// Grid / submanifold operations
// ---------------------------------------------------------------------------

Var sparse_conv3x3(const Var& x, const std::vector<std::uint8_t>& visible, const Var& kernel,
                   const Var& bias) {
    check_grid_mask(x, visible);
    const int h = x->value.dim(0), w = x->value.dim(1), cin = grid_channels(x);
    if (kernel->value.rank() != 4 || kernel->value.dim(0) != 3 || kernel->value.dim(1) != 3 ||
        kernel->value.dim(2) != cin) {
        throw DimensionError("sparse_conv3x3: kernel must be [3x3x" + std::to_string(cin) +
                             "xCout], got " + kernel->value.shape_str());
    }
    const int cout = kernel->value.dim(3);
    if (bias->value.size() != cout) {
        throw DimensionError("sparse_conv3x3: bias length must equal output channels");
    }
    Tensor out({h, w, cout});
    kernels::conv3x3(x->value.data(), visible.data(), kernel->value.data(), bias->value.data(),
                     out.data(), h, w, cin, cout);
    return make_op(std::move(out), {x, kernel, bias},
                   [x, kernel, bias, visible, h, w, cin, cout](Node& self) {
                       if (x->requires_grad) {
                           x->ensure_grad();
                           kernels::conv3x3_grad_x(self.grad.data(), visible.data(), kernel->value.data(),
                                                   x->grad.data(), h, w, cin, cout);
                       }
                       if (kernel->requires_grad || bias->requires_grad) {
                           if (kernel->requires_grad) kernel->ensure_grad();
                           if (bias->requires_grad) bias->ensure_grad();
                           for (int i = 0; i < h; ++i) {
                               for (int j = 0; j < w; ++j) {
                                   const std::size_t p = static_cast<std::size_t>(i) * w + j;
                                   if (!visible[p]) continue;
                                   const double* g = self.grad.data() + p * static_cast<std::size_t>(cout);
                                   if (bias->requires_grad) {
                                       for (int oc = 0; oc < cout; ++oc) bias->grad[oc] += g[oc];
                                   }
                                   if (!kernel->requires_grad) continue;
                                   for (int di = -1; di <= 1; ++di) {
                                       for (int dj = -1; dj <= 1; ++dj) {
                                           const int ni = i + di, nj = j + dj;
                                           if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                                           const std::size_t q = static_cast<std::size_t>(ni) * w + nj;
                                           if (!visible[q]) continue;
                                           const double* xv = x->value.data() + q * static_cast<std::size_t>(cin);
                                           double* kg = kernel->grad.data() +
                                                        ((static_cast<std::size_t>(di + 1) * 3 +
                                                          static_cast<std::size_t>(dj + 1)) *
                                                         static_cast<std::size_t>(cin)) *
                                                            static_cast<std::size_t>(cout);
                                           for (int ic = 0; ic < cin; ++ic) {
                                               for (int oc = 0; oc < cout; ++oc) {
                                                   kg[static_cast<std::size_t>(ic) * cout + oc] += xv[ic] * g[oc];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Var sparse_dwconv3x3(const Var& x, const std::vector<std::uint8_t>& visible, const Var& kernel,
                     const Var& bias) {
    check_grid_mask(x, visible);
    const int h = x->value.dim(0), w = x->value.dim(1), c = grid_channels(x);
    if (kernel->value.rank() != 3 || kernel->value.dim(0) != 3 || kernel->value.dim(1) != 3 ||
        kernel->value.dim(2) != c) {
        throw DimensionError("sparse_dwconv3x3: kernel must be [3x3x" + std::to_string(c) + "], got " +
                             kernel->value.shape_str());
    }
    if (bias->value.size() != c) throw DimensionError("sparse_dwconv3x3: bias length must equal channels");
    Tensor out({h, w, c});
    kernels::dwconv3x3(x->value.data(), visible.data(), kernel->value.data(), bias->value.data(),
                       out.data(), h, w, c);
    return make_op(std::move(out), {x, kernel, bias}, [x, kernel, bias, visible, h, w, c](Node& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            kernels::dwconv3x3_grad_x(self.grad.data(), visible.data(), kernel->value.data(),
                                      x->grad.data(), h, w, c);
        }
        if (kernel->requires_grad || bias->requires_grad) {
            if (kernel->requires_grad) kernel->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * w + j;
                    if (!visible[p]) continue;
                    const double* g = self.grad.data() + p * static_cast<std::size_t>(c);
                    if (bias->requires_grad) {
                        for (int ch = 0; ch < c; ++ch) bias->grad[ch] += g[ch];
                    }
                    if (!kernel->requires_grad) continue;
                    for (int di = -1; di <= 1; ++di) {
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int ni = i + di, nj = j + dj;
                            if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                            const std::size_t q = static_cast<std::size_t>(ni) * w + nj;
                            if (!visible[q]) continue;
                            const double* xv = x->value.data() + q * static_cast<std::size_t>(c);
                            double* kg = kernel->grad.data() +
                                         (static_cast<std::size_t>(di + 1) * 3 + static_cast<std::size_t>(dj + 1)) *
                                             static_cast<std::size_t>(c);
                            for (int ch = 0; ch < c; ++ch) kg[ch] += xv[ch] * g[ch];
                        }
                    }
                }
            }
        }
    });
}

Var gather_visible(const Var& grid, const std::vector<std::uint8_t>& visible) {
    check_grid_mask(grid, visible);
    const int c = grid_channels(grid);
    std::vector<int> cells;
    for (std::size_t p = 0; p < visible.size(); ++p) {
        if (visible[p]) cells.push_back(static_cast<int>(p));
    }
    const int v = static_cast<int>(cells.size());
    if (v == 0) throw DimensionError("gather_visible: mask has no visible cell");
    Tensor out({v, c});
    for (int r = 0; r < v; ++r) {
        const double* src = grid->value.data() + static_cast<std::size_t>(cells[static_cast<std::size_t>(r)]) * c;
        for (int j = 0; j < c; ++j) out.at(r, j) = src[j];
    }
    return make_op(std::move(out), {grid}, [grid, cells, c](Node& self) {
        if (!grid->requires_grad) return;
        grid->ensure_grad();
        for (std::size_t r = 0; r < cells.size(); ++r) {
            double* dst = grid->grad.data() + static_cast<std::size_t>(cells[r]) * c;
            for (int j = 0; j < c; ++j) dst[j] += self.grad.at(static_cast<int>(r), j);
        }
    });
}

Var scatter_visible(const Var& rows, const std::vector<std::uint8_t>& visible, int h, int w) {
    require_rank(rows, 2, "scatter_visible");
    const int c = rows->value.dim(1);
    std::vector<int> cells;
    for (std::size_t p = 0; p < visible.size(); ++p) {
        if (visible[p]) cells.push_back(static_cast<int>(p));
    }
    if (static_cast<std::size_t>(h) * static_cast<std::size_t>(w) != visible.size() ||
        static_cast<int>(cells.size()) != rows->value.dim(0)) {
        throw DimensionError("scatter_visible: row count does not match visible cells");
    }
    Tensor out({h, w, c});
    for (std::size_t r = 0; r < cells.size(); ++r) {
        double* dst = out.data() + static_cast<std::size_t>(cells[r]) * c;
        for (int j = 0; j < c; ++j) dst[j] = rows->value.at(static_cast<int>(r), j);
    }
    return make_op(std::move(out), {rows}, [rows, cells, c](Node& self) {
        if (!rows->requires_grad) return;
        rows->ensure_grad();
        for (std::size_t r = 0; r < cells.size(); ++r) {
            const double* src = self.grad.data() + static_cast<std::size_t>(cells[r]) * c;
            for (int j = 0; j < c; ++j) rows->grad.at(static_cast<int>(r), j) += src[j];
        }
    });
}

Var fill_masked(const Var& grid, const std::vector<std::uint8_t>& visible, const Var& token) {
    check_grid_mask(grid, visible);
    const int c = grid_channels(grid);
    if (token->value.size() != c) throw DimensionError("fill_masked: token length must equal channels");
    Tensor out = grid->value;
    for (std::size_t p = 0; p < visible.size(); ++p) {
        if (visible[p]) continue;
        double* dst = out.data() + p * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) dst[j] = token->value[j];
    }
    return make_op(std::move(out), {grid, token}, [grid, token, visible, c](Node& self) {
        if (grid->requires_grad) {
            grid->ensure_grad();
            for (std::size_t p = 0; p < visible.size(); ++p) {
                if (!visible[p]) continue;
                const double* src = self.grad.data() + p * static_cast<std::size_t>(c);
                double* dst = grid->grad.data() + p * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) dst[j] += src[j];
            }
        }
        if (token->requires_grad) {
            token->ensure_grad();
            for (std::size_t p = 0; p < visible.size(); ++p) {
                if (visible[p]) continue;
                const double* src = self.grad.data() + p * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) token->grad[j] += src[j];
            }
        }
    });
}

Var grn_aggregate(const Var& rows) {
    require_rank(rows, 2, "grn_aggregate");
    const int v = rows->value.dim(0), c = rows->value.dim(1);
    Tensor out({c});
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int r = 0; r < v; ++r) {
            const double x = rows->value.at(r, j);
            s += x * x;
        }
        out[j] = std::sqrt(s);
    }
    Tensor saved = out;
    return make_op(std::move(out), {rows}, [rows, saved, v, c](Node& self) {
        if (!rows->requires_grad) return;
        rows->ensure_grad();
        for (int j = 0; j < c; ++j) {
            if (saved[j] == 0.0) continue;  // subgradient 0 at the origin
            const double g = self.grad[j] / saved[j];
            for (int r = 0; r < v; ++r) rows->grad.at(r, j) += g * rows->value.at(r, j);
        }
    });
}

Var grn_normalize(const Var& og, double eps) {
    require_rank(og, 1, "grn_normalize");
    const std::int64_t c = og->value.size();
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += og->value[j];
    const double denom = sum + eps;
    Tensor out = og->value;
    for (std::int64_t j = 0; j < c; ++j) out[j] /= denom;
    return make_op(std::move(out), {og}, [og, denom](Node& self) {
        if (!og->requires_grad) return;
        og->ensure_grad();
        double dot = 0.0;
        for (std::int64_t j = 0; j < self.grad.size(); ++j) dot += self.grad[j] * og->value[j];
        for (std::int64_t j = 0; j < self.grad.size(); ++j) {
            og->grad[j] += self.grad[j] / denom - dot / (denom * denom);
        }
    });
}

Var grn_calibrate(const Var& rows, const Var& n, const Var& gamma, const Var& beta, bool literal) {
    require_rank(rows, 2, "grn_calibrate");
    const int v = rows->value.dim(0), c = rows->value.dim(1);
    if (n->value.size() != c || gamma->value.size() != c || beta->value.size() != c) {
        throw DimensionError("grn_calibrate: channel counts disagree");
    }
    Tensor out({v, c});
    if (literal) {
        for (int r = 0; r < v; ++r)
            for (int j = 0; j < c; ++j) out.at(r, j) = rows->value.at(r, j) * n->value[j];
    } else {
        for (int r = 0; r < v; ++r)
            for (int j = 0; j < c; ++j) {
                const double x = rows->value.at(r, j);
                out.at(r, j) = gamma->value[j] * (x * n->value[j] * c) + beta->value[j] + x;
            }
    }
    return make_op(std::move(out), {rows, n, gamma, beta}, [rows, n, gamma, beta, literal, v, c](Node& self) {
        if (literal) {
            if (rows->requires_grad) {
                rows->ensure_grad();
                for (int r = 0; r < v; ++r)
                    for (int j = 0; j < c; ++j) rows->grad.at(r, j) += self.grad.at(r, j) * n->value[j];
            }
            if (n->requires_grad) {
                n->ensure_grad();
                for (int r = 0; r < v; ++r)
                    for (int j = 0; j < c; ++j) n->grad[j] += self.grad.at(r, j) * rows->value.at(r, j);
            }
            return;
        }
        if (rows->requires_grad) {
            rows->ensure_grad();
            for (int r = 0; r < v; ++r)
                for (int j = 0; j < c; ++j) {
                    rows->grad.at(r, j) += self.grad.at(r, j) * (gamma->value[j] * n->value[j] * c + 1.0);
                }
        }
        if (n->requires_grad) {
            n->ensure_grad();
            for (int r = 0; r < v; ++r)
                for (int j = 0; j < c; ++j) {
                    n->grad[j] += self.grad.at(r, j) * gamma->value[j] * rows->value.at(r, j) * c;
                }
        }
        if (gamma->requires_grad) {
            gamma->ensure_grad();
            for (int r = 0; r < v; ++r)
                for (int j = 0; j < c; ++j) {
                    gamma->grad[j] += self.grad.at(r, j) * rows->value.at(r, j) * n->value[j] * c;
                }
        }
        if (beta->requires_grad) {
            beta->ensure_grad();
            for (int r = 0; r < v; ++r)
                for (int j = 0; j < c; ++j) beta->grad[j] += self.grad.at(r, j);
        }
    });
}

Var col_mean(const Var& rows) {
    require_rank(rows, 2, "col_mean");
    const int v = rows->value.dim(0), c = rows->value.dim(1);
    Tensor out({c});
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int r = 0; r < v; ++r) s += rows->value.at(r, j);
        out[j] = s / v;
    }
    return make_op(std::move(out), {rows}, [rows, v, c](Node& self) {
        if (!rows->requires_grad) return;
        rows->ensure_grad();
        for (int j = 0; j < c; ++j) {
            const double g = self.grad[j] / v;
            for (int r = 0; r < v; ++r) rows->grad.at(r, j) += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Var sce_loss(const Tensor& target, const Var& a_prime, double tau) {
    require_same_shape(target, a_prime->value, "sce_loss");
    if (target.rank() != 2) throw DimensionError("sce_loss expects matrices");
    const int n = target.dim(0), m = target.dim(1);

    std::vector<double> tnorm(static_cast<std::size_t>(m), 0.0);
    int included = 0;
    for (int t = 0; t < m; ++t) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += target.at(i, t) * target.at(i, t);
        tnorm[static_cast<std::size_t>(t)] = std::sqrt(s);
        if (s > 0.0) ++included;
    }
    if (included == 0) {
        throw StatError("sce_loss: reconstruction target has no nonzero column (empty meta-path)");
    }

    std::vector<double> pnorm(static_cast<std::size_t>(m), 0.0);
    std::vector<double> dots(static_cast<std::size_t>(m), 0.0);
    std::vector<double> cosv(static_cast<std::size_t>(m), 0.0);
    double loss = 0.0;
    for (int t = 0; t < m; ++t) {
        if (tnorm[static_cast<std::size_t>(t)] == 0.0) continue;
        double pn = 0.0, dot = 0.0;
        for (int i = 0; i < n; ++i) {
            const double p = a_prime->value.at(i, t);
            pn += p * p;
            dot += p * target.at(i, t);
        }
        pn = std::sqrt(pn);
        pnorm[static_cast<std::size_t>(t)] = pn;
        dots[static_cast<std::size_t>(t)] = dot;
        double cos = 0.0;
        if (pn > 0.0) cos = dot / (tnorm[static_cast<std::size_t>(t)] * pn);
        // parallel columns must score exactly 1; rounding noise here would be
        // amplified by fractional exponents
        if (cos > 1.0 - 1e-15) cos = 1.0;
        if (cos < -1.0) cos = -1.0;
        cosv[static_cast<std::size_t>(t)] = cos;
        loss += std::pow(std::max(0.0, 1.0 - cos), tau);
    }
    loss /= included;

    Tensor tgt = target;
    return make_op(Tensor::scalar(loss), {a_prime},
                   [a_prime, tgt, tnorm, pnorm, dots, cosv, tau, included, n, m](Node& self) {
                       if (!a_prime->requires_grad) return;
                       a_prime->ensure_grad();
                       const double g = self.grad[0] / included;
                       for (int t = 0; t < m; ++t) {
                           const std::size_t ts = static_cast<std::size_t>(t);
                           if (tnorm[ts] == 0.0 || pnorm[ts] == 0.0) continue;
                           const double one_minus = std::max(0.0, 1.0 - cosv[ts]);
                           double factor;
                           if (tau == 1.0) {
                               factor = 1.0;
                           } else {
                               if (one_minus == 0.0) continue;  // stationary for tau > 1
                               factor = tau * std::pow(one_minus, tau - 1.0);
                           }
                           // d(cos)/dp = a/(|a||p|) - cos * p /|p|^2, column-wise
                           const double inv_ap = 1.0 / (tnorm[ts] * pnorm[ts]);
                           const double inv_pp = cosv[ts] / (pnorm[ts] * pnorm[ts]);
                           for (int i = 0; i < n; ++i) {
                               const double dcos = tgt.at(i, t) * inv_ap - a_prime->value.at(i, t) * inv_pp;
                               a_prime->grad.at(i, t) += -g * factor * dcos;
                           }
                       }
                   });
}

Var masked_mse(const Var& recon, const Var& target, const std::vector<std::uint8_t>& visible) {
    require_same_shape(recon->value, target->value, "masked_mse");
    check_grid_mask(recon, visible);
    const int c = grid_channels(recon);
    std::int64_t masked = 0;
    double loss = 0.0;
    for (std::size_t p = 0; p < visible.size(); ++p) {
        if (visible[p]) continue;
        ++masked;
        const double* r = recon->value.data() + p * static_cast<std::size_t>(c);
        const double* t = target->value.data() + p * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) {
            const double d = r[j] - t[j];
            loss += d * d;
        }
    }
    const double denom = masked > 0 ? static_cast<double>(masked) * c : 1.0;
    loss /= denom;
    return make_op(Tensor::scalar(loss), {recon, target},
                   [recon, target, visible, c, denom, masked](Node& self) {
                       if (masked == 0) return;
                       const double g = 2.0 * self.grad[0] / denom;
                       if (recon->requires_grad) recon->ensure_grad();
                       if (target->requires_grad) target->ensure_grad();
                       for (std::size_t p = 0; p < visible.size(); ++p) {
                           if (visible[p]) continue;
                           const double* r = recon->value.data() + p * static_cast<std::size_t>(c);
                           const double* t = target->value.data() + p * static_cast<std::size_t>(c);
                           for (int j = 0; j < c; ++j) {
                               const double d = g * (r[j] - t[j]);
                               if (recon->requires_grad) recon->grad.data()[p * static_cast<std::size_t>(c) + j] += d;
                               if (target->requires_grad) target->grad.data()[p * static_cast<std::size_t>(c) + j] -= d;
                           }
                       }
                   });
}

Var cox_loss(const Var& scores, const std::vector<double>& times, const std::vector<int>& events) {
    require_rank(scores, 1, "cox_loss scores");
    const int n = static_cast<int>(scores->value.size());
    if (n == 0) throw ConfigError("cox_loss: empty batch");
    if (times.size() != static_cast<std::size_t>(n) || events.size() != static_cast<std::size_t>(n)) {
        throw DimensionError("cox_loss: label count does not match score count");
    }

    // exp(-H_j - m) with a global max shift keeps every exponent <= 0.
    double m = -scores->value[0];
    for (int j = 1; j < n; ++j) m = std::max(m, -scores->value[j]);
    std::vector<double> e(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) e[static_cast<std::size_t>(j)] = std::exp(-scores->value[j] - m);

    double loss = 0.0;
    std::vector<double> grad(static_cast<std::size_t>(n), 0.0);
    // inv_sum[i] accumulated into every member of i's risk set
    for (int i = 0; i < n; ++i) {
        if (!events[static_cast<std::size_t>(i)]) continue;
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            if (times[static_cast<std::size_t>(j)] >= times[static_cast<std::size_t>(i)]) {
                s += e[static_cast<std::size_t>(j)];
            }
        }
        loss += scores->value[i] + m + std::log(s);
        grad[static_cast<std::size_t>(i)] += 1.0;
        const double inv = 1.0 / s;
        for (int j = 0; j < n; ++j) {
            if (times[static_cast<std::size_t>(j)] >= times[static_cast<std::size_t>(i)]) {
                grad[static_cast<std::size_t>(j)] -= e[static_cast<std::size_t>(j)] * inv;
            }
        }
    }
    return make_op(Tensor::scalar(loss), {scores}, [scores, grad](Node& self) {
        if (!scores->requires_grad) return;
        scores->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < grad.size(); ++i) scores->grad[static_cast<std::int64_t>(i)] += g * grad[i];
    });
}

Var dot_weighted(const Var& weights, const std::vector<Var>& scalars) {
    require_rank(weights, 1, "dot_weighted");
    if (weights->value.size() != static_cast<std::int64_t>(scalars.size())) {
        throw SchemaError("dot_weighted: weight count " + std::to_string(weights->value.size()) +
                          " does not match loss count " + std::to_string(scalars.size()));
    }
    double out = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        out += weights->value[static_cast<std::int64_t>(i)] * scalars[i]->value.scalar_value();
    }
    std::vector<Var> parents = scalars;
    parents.push_back(weights);
    return make_op(Tensor::scalar(out), parents, [weights, scalars](Node& self) {
        const double g = self.grad[0];
        if (weights->requires_grad) {
            weights->ensure_grad();
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                weights->grad[static_cast<std::int64_t>(i)] += g * scalars[i]->value[0];
            }
        }
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            if (!scalars[i]->requires_grad) continue;
            scalars[i]->ensure_grad();
            scalars[i]->grad[0] += g * weights->value[static_cast<std::int64_t>(i)];
        }
    });
}

Var blend_rows(const Var& weights, const std::vector<Var>& mats) {
    require_rank(weights, 1, "blend_rows");
    if (mats.empty() || weights->value.size() != static_cast<std::int64_t>(mats.size())) {
        throw SchemaError("blend_rows: weight/matrix count mismatch");
    }
    Tensor out(mats[0]->value.shape());
    for (std::size_t i = 0; i < mats.size(); ++i) {
        require_same_shape(mats[0]->value, mats[i]->value, "blend_rows");
        const double w = weights->value[static_cast<std::int64_t>(i)];
        for (std::int64_t j = 0; j < out.size(); ++j) out[j] += w * mats[i]->value[j];
    }
    std::vector<Var> parents = mats;
    parents.push_back(weights);
    return make_op(std::move(out), parents, [weights, mats](Node& self) {
        if (weights->requires_grad) {
            weights->ensure_grad();
            for (std::size_t i = 0; i < mats.size(); ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < self.grad.size(); ++j) dot += self.grad[j] * mats[i]->value[j];
                weights->grad[static_cast<std::int64_t>(i)] += dot;
            }
        }
        for (std::size_t i = 0; i < mats.size(); ++i) {
            if (!mats[i]->requires_grad) continue;
            mats[i]->ensure_grad();
            const double w = weights->value[static_cast<std::int64_t>(i)];
            for (std::int64_t j = 0; j < self.grad.size(); ++j) mats[i]->grad[j] += w * self.grad[j];
        }
    });
}

Var affine_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
    if (scalars.size() != coeffs.size()) throw DimensionError("affine_sum: count mismatch");
    double out = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) out += coeffs[i] * scalars[i]->value.scalar_value();
    std::vector<Var> parents = scalars;
    return make_op(Tensor::scalar(out), parents, [scalars, coeffs](Node& self) {
        const double g = self.grad[0];
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            if (!scalars[i]->requires_grad) continue;
            scalars[i]->ensure_grad();
            scalars[i]->grad[0] += g * coeffs[i];
        }
    });
}

}  // namespace hetsurv::ag
