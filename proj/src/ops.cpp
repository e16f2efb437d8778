#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "brio/common.hpp"
#include "brio/tape.hpp"

namespace brio {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw Error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
    throw Error(std::string(op) + ": invalid shape " + shape_str(a));
}

template <class F>
void accumulate(Tape& t, Var v, F&& f) {
    if (t.requires_grad(v)) {
        f(t.grad_buffer(v));
    }
}

struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw Error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                    shape_str(s));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

enum class Broadcast { same, row };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::same;
    if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Broadcast::row;
    shape_error(op, a, b);
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2) shape_error("matmul", av.shape(), bv.shape());
    const std::size_t m = av.dim(0), k = av.dim(1);
    const std::size_t n = transpose_b ? bv.dim(0) : bv.dim(1);
    if ((transpose_b ? bv.dim(1) : bv.dim(0)) != k) shape_error("matmul", av.shape(), bv.shape());
    Tensor out({m, n});
    kernels::gemm(false, transpose_b, m, n, k, av.data(), bv.data(), out.data(), false);
    return a.tape->record(std::move(out), {a, b},
                          [a, b, m, n, k, transpose_b](Tape& t, const Tensor&, const Tensor& g) {
                              const Tensor& A = t.value(a);
                              const Tensor& B = t.value(b);
                              accumulate(t, a, [&](Tensor& ga) {
                                  kernels::gemm(false, !transpose_b, m, k, n, g.data(), B.data(),
                                                ga.data(), true);
                              });
                              accumulate(t, b, [&](Tensor& gb) {
                                  if (transpose_b) {
                                      kernels::gemm(true, false, n, k, m, g.data(), A.data(), gb.data(), true);
                                  } else {
                                      kernels::gemm(true, false, k, n, m, A.data(), g.data(), gb.data(), true);
                                  }
                              });
                          });
}

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind("add", av.shape(), bv.shape());
    Tensor out = av;
    const std::size_t nb = bv.numel();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[kind == Broadcast::same ? i : i % nb];
    return a.tape->record(std::move(out), {a, b}, [a, b, kind, nb](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
        accumulate(t, b, [&](Tensor& gb) {
            for (std::size_t i = 0; i < g.numel(); ++i) gb[kind == Broadcast::same ? i : i % nb] += g[i];
        });
    });
}

Var sub(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_error("sub", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
        accumulate(t, b, [&](Tensor& gb) {
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        });
    });
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind("mul", av.shape(), bv.shape());
    const std::size_t nb = bv.numel();
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[kind == Broadcast::same ? i : i % nb];
    return a.tape->record(std::move(out), {a, b}, [a, b, kind, nb](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[kind == Broadcast::same ? i : i % nb];
        });
        accumulate(t, b, [&](Tensor& gb) {
            for (std::size_t i = 0; i < g.numel(); ++i) gb[kind == Broadcast::same ? i : i % nb] += g[i] * A[i];
        });
    });
}

Var scale(Var a, double c) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= c;
    return a.tape->record(std::move(out), {a}, [a, c](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
        });
    });
}

Var add_scalar(Var a, double c) {
    Tensor out = a.value();
    for (double& v : out.values()) v += c;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) shape_error("transpose", av.shape());
    const std::size_t r = av.dim(0), c = av.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return a.tape->record(std::move(out), {a}, [a, r, c](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        });
    });
}

Var reshape(Var a, Shape shape) {
    const Tensor& av = a.value();
    if (shape_numel(shape) != av.numel()) shape_error("reshape", av.shape(), shape);
    return a.tape->record(av.reshaped(std::move(shape)), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    });
}

Var softmax(Var a, std::size_t axis) {
    const Tensor& av = a.value();
    const AxisView v = axis_view("softmax", av.shape(), axis);
    Tensor out(av.shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.len * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, av[base + i * v.inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < v.len; ++i) {
                const double e = std::exp(av[base + i * v.inner] - mx);
                out[base + i * v.inner] = e;
                s += e;
            }
            for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.inner] /= s;
        }
    }
    return a.tape->record(std::move(out), {a}, [a, v](Tape& t, const Tensor& y, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.len * v.inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < v.len; ++i) dot += y[base + i * v.inner] * g[base + i * v.inner];
                    for (std::size_t i = 0; i < v.len; ++i) {
                        const std::size_t k = base + i * v.inner;
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        });
    });
}

Var log_softmax(Var a, std::size_t axis) {
    const Tensor& av = a.value();
    const AxisView v = axis_view("log_softmax", av.shape(), axis);
    Tensor out(av.shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.len * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, av[base + i * v.inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < v.len; ++i) s += std::exp(av[base + i * v.inner] - mx);
            const double lse = mx + std::log(s);
            for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.inner] = av[base + i * v.inner] - lse;
        }
    }
    return a.tape->record(std::move(out), {a}, [a, v](Tape& t, const Tensor& y, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.len * v.inner + in;
                    double gs = 0.0;
                    for (std::size_t i = 0; i < v.len; ++i) gs += g[base + i * v.inner];
                    for (std::size_t i = 0; i < v.len; ++i) {
                        const std::size_t k = base + i * v.inner;
                        ga[k] += g[k] - std::exp(y[k]) * gs;
                    }
                }
            }
        });
    });
}

Var layer_norm(Var a, std::size_t axis, double eps) {
    const Tensor& av = a.value();
    const AxisView v = axis_view("layer_norm", av.shape(), axis);
    Tensor out(av.shape());
    std::vector<double> inv_std(v.outer * v.inner);
    const double n = static_cast<double>(v.len);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.len * v.inner + in;
            double mean = 0.0;
            for (std::size_t i = 0; i < v.len; ++i) mean += av[base + i * v.inner];
            mean /= n;
            double var = 0.0;
            for (std::size_t i = 0; i < v.len; ++i) {
                const double d = av[base + i * v.inner] - mean;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * v.inner + in] = is;
            for (std::size_t i = 0; i < v.len; ++i) {
                out[base + i * v.inner] = (av[base + i * v.inner] - mean) * is;
            }
        }
    }
    return a.tape->record(std::move(out), {a},
                          [a, v, n, inv_std = std::move(inv_std)](Tape& t, const Tensor& y, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.len * v.inner + in;
                    double mg = 0.0, mgy = 0.0;
                    for (std::size_t i = 0; i < v.len; ++i) {
                        const std::size_t k = base + i * v.inner;
                        mg += g[k];
                        mgy += g[k] * y[k];
                    }
                    mg /= n;
                    mgy /= n;
                    const double is = inv_std[o * v.inner + in];
                    for (std::size_t i = 0; i < v.len; ++i) {
                        const std::size_t k = base + i * v.inner;
                        ga[k] += is * (g[k] - mg - y[k] * mgy);
                    }
                }
            }
        });
    });
}

Var gelu(Var a) {
    Tensor out = a.value();
    for (double& x : out.values()) x = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& x = t.value(a);
        accumulate(t, a, [&](Tensor& ga) {
            const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const double xi = x[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * std::numbers::sqrt2 / 2.0));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
                ga[i] += g[i] * (cdf + xi * pdf);
            }
        });
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (double& x : out.values()) x = x > 0.0 ? x : 0.0;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& x = t.value(a);
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (x[i] > 0.0) ga[i] += g[i];
            }
        });
    });
}

Var embedding_lookup(Var table, std::span<const std::uint32_t> ids) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) shape_error("embedding_lookup", tv.shape());
    const std::size_t rows = tv.dim(0), d = tv.dim(1);
    Tensor out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= rows) {
            throw Error("embedding_lookup: id " + std::to_string(ids[r]) + " outside table of shape " +
                        shape_str(tv.shape()));
        }
        std::copy_n(tv.data() + ids[r] * d, d, out.data() + r * d);
    }
    std::vector<std::uint32_t> saved(ids.begin(), ids.end());
    return table.tape->record(std::move(out), {table},
                              [table, d, saved = std::move(saved)](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, table, [&](Tensor& gt) {
            for (std::size_t r = 0; r < saved.size(); ++r) {
                double* dst = gt.data() + saved[r] * d;
                const double* src = g.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    });
}

Var masked_fill(Var a, const std::vector<bool>& mask, double fill) {
    Tensor out = a.value();
    if (mask.size() != out.numel()) {
        shape_error("masked_fill", out.shape(), Shape{mask.size()});
    }
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (mask[i]) out[i] = fill;
    }
    return a.tape->record(std::move(out), {a}, [a, mask](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (!mask[i]) ga[i] += g[i];
            }
        });
    });
}

Var dropout(Var a, const std::vector<bool>& keep, double rate) {
    Tensor out = a.value();
    if (keep.size() != out.numel()) {
        shape_error("dropout", out.shape(), Shape{keep.size()});
    }
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw Error("dropout: rate must lie in [0, 1)");
    }
    const double s = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = keep[i] ? out[i] * s : 0.0;
    return a.tape->record(std::move(out), {a}, [a, keep, s](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (keep[i]) ga[i] += g[i] * s;
            }
        });
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            const double gv = g[0];
            for (double& v : ga.values()) v += gv;
        });
    });
}

Var weighted_sum(Var a, const Tensor& w) {
    const Tensor& av = a.value();
    if (av.shape() != w.shape()) shape_error("weighted_sum", av.shape(), w.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i] * w[i];
    return a.tape->record(Tensor::scalar(s), {a}, [a, w](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            const double gv = g[0];
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gv * w[i];
        });
    });
}

Var pick(Var a, std::span<const std::uint32_t> index) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || av.dim(0) != index.size()) shape_error("pick", av.shape(), Shape{index.size()});
    const std::size_t cols = av.dim(1);
    Tensor out({index.size()});
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= cols) {
            throw Error("pick: column " + std::to_string(index[r]) + " outside shape " + shape_str(av.shape()));
        }
        out[r] = av[r * cols + index[r]];
    }
    std::vector<std::uint32_t> saved(index.begin(), index.end());
    return a.tape->record(std::move(out), {a}, [a, cols, saved = std::move(saved)](Tape& t, const Tensor&,
                                                                                  const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t r = 0; r < saved.size(); ++r) ga[r * cols + saved[r]] += g[r];
        });
    });
}

Var element(Var a, std::size_t i) {
    const Tensor& av = a.value();
    if (i >= av.numel()) shape_error("element", av.shape(), Shape{i});
    return a.tape->record(Tensor::scalar(av[i]), {a}, [a, i](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) { ga[i] += g[0]; });
    });
}

Var stack(std::span<const Var> scalars) {
    if (scalars.empty()) {
        throw Error("stack: no inputs");
    }
    Tensor out({scalars.size()});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const Tensor& v = scalars[i].value();
        if (v.numel() != 1) shape_error("stack", v.shape());
        out[i] = v[0];
    }
    std::vector<Var> saved(scalars.begin(), scalars.end());
    return scalars[0].tape->record(std::move(out), scalars, [saved](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t i = 0; i < saved.size(); ++i) {
            accumulate(t, saved[i], [&](Tensor& gi) { gi[0] += g[i]; });
        }
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || start + len > av.dim(1)) shape_error("slice_cols", av.shape(), Shape{start, len});
    const std::size_t rows = av.dim(0), cols = av.dim(1);
    Tensor out({rows, len});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * cols + start, len, out.data() + r * len);
    return a.tape->record(std::move(out), {a}, [a, rows, cols, start, len](Tape& t, const Tensor&, const Tensor& g) {
        accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < len; ++j) ga[r * cols + start + j] += g[r * len + j];
        });
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.dim(0) != rows) shape_error("concat_cols", parts[0].shape(), v.shape());
        widths.push_back(v.dim(1));
        total += v.dim(1);
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + off);
        off += widths[p];
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(out), parts,
                                 [saved, widths, rows, total](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < saved.size(); ++p) {
            accumulate(t, saved[p], [&](Tensor& gp) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[p]; ++j) gp[r * widths[p] + j] += g[r * total + off + j];
            });
            off += widths[p];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    const std::size_t cols = parts[0].value().dim(1);
    std::size_t rows = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.dim(1) != cols) shape_error("concat_rows", parts[0].shape(), v.shape());
        rows += v.dim(0);
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        std::copy_n(v.data(), v.numel(), out.data() + off);
        off += v.numel();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(out), parts, [saved](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (const Var& p : saved) {
            const std::size_t n = t.value(p).numel();
            accumulate(t, p, [&](Tensor& gp) {
                for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
            });
            off += n;
        }
    });
}

}  // namespace brio
