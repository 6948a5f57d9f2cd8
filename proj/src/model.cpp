#include "eris/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace eris {

namespace {

constexpr double kFixedInitStddev = 0.05;

double init_stddev(InitScheme scheme, std::size_t fan_in) {
    if (scheme == InitScheme::Fixed) return kFixedInitStddev;
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

Matrix row_matrix(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

// y = x·w + b for a single row x.
void dense_forward(const Dense& layer, std::span<const double> x, std::span<double> y,
                   MacCounter* counter) {
    const std::size_t in = layer.w.rows();
    const std::size_t out = layer.w.cols();
    if (x.size() != in) {
        throw DimensionError("dense layer expects input width " + std::to_string(in) + ", got " +
                             std::to_string(x.size()));
    }
    std::copy(layer.b.data().begin(), layer.b.data().end(), y.begin());
    for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        auto wrow = layer.w.row(i);
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * wrow[j];
    }
    if (counter) counter->dense += in * out;
}

// Adds dW += xᵀ·dy and db += dy; returns dx = dy·wᵀ.
std::vector<double> dense_backward(const Dense& layer, std::span<const double> x,
                                   std::span<const double> dy, Dense& grad) {
    const std::size_t in = layer.w.rows();
    const std::size_t out = layer.w.cols();
    std::vector<double> dx(in, 0.0);
    auto gb = grad.b.data();
    for (std::size_t j = 0; j < out; ++j) gb[j] += dy[j];
    for (std::size_t i = 0; i < in; ++i) {
        auto wrow = layer.w.row(i);
        auto grow = grad.w.row(i);
        const double xi = x[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) {
            grow[j] += xi * dy[j];
            acc += wrow[j] * dy[j];
        }
        dx[i] = acc;
    }
    return dx;
}

// z = h·W for W of shape b × d.
Matrix project(const Matrix& w, std::span<const double> h, MacCounter* counter) {
    if (h.size() != w.rows()) {
        throw DimensionError("projection expects feature width " + std::to_string(w.rows()) +
                             ", got " + std::to_string(h.size()));
    }
    Matrix z(1, w.cols());
    auto out = z.row(0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        auto wrow = w.row(i);
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += h[i] * wrow[j];
    }
    if (counter) counter->dense += w.rows() * w.cols();
    return z;
}

// Adds gW += hᵀ·dz and returns dh = dz·Wᵀ.
std::vector<double> project_backward(const Matrix& w, std::span<const double> h,
                                     std::span<const double> dz, Matrix& gw) {
    std::vector<double> dh(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        auto wrow = w.row(i);
        auto grow = gw.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            grow[j] += h[i] * dz[j];
            acc += wrow[j] * dz[j];
        }
        dh[i] = acc;
    }
    return dh;
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng, InitScheme scheme) {
    return Dense{sample_normal(rng, in, out, init_stddev(scheme, in)), Matrix(1, out)};
}

Mlp make_mlp(const std::vector<std::size_t>& widths, Rng& rng, InitScheme scheme) {
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        mlp.layers.push_back(make_dense(widths[i], widths[i + 1], rng, scheme));
    return mlp;
}

void visit_mlp(const std::string& prefix, Mlp& mlp,
               const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        fn(prefix + ".l" + std::to_string(i) + ".w", mlp.layers[i].w);
        fn(prefix + ".l" + std::to_string(i) + ".b", mlp.layers[i].b);
    }
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("load_params: unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

std::size_t ArchConfig::pooled_channels() const {
    return conv_channels.empty() ? input_channels : conv_channels.back();
}

void ArchConfig::validate() const {
    if (input_channels < 1 || encoding_dim < 1 || projection_dim < 1 || mlp_hidden < 1 ||
        num_classes < 1 || num_domains < 1) {
        throw std::invalid_argument("ArchConfig: counts must be >= 1");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("ArchConfig: kernel must be odd and >= 1, got " +
                                    std::to_string(kernel));
    }
    for (auto c : conv_channels)
        if (c < 1) throw std::invalid_argument("ArchConfig: conv channel counts must be >= 1");
    if (projection_dim > encoding_dim) {
        throw std::invalid_argument("ArchConfig: projection_dim must not exceed encoding_dim");
    }
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t l = 0; l < conv_w.size(); ++l) {
        fn("conv" + std::to_string(l) + ".w", conv_w[l]);
        fn("conv" + std::to_string(l) + ".b", conv_b[l]);
    }
    fn("encoder_out.w", encoder_out.w);
    fn("encoder_out.b", encoder_out.b);
    fn("w_dom", w_dom);
    fn("w_lab", w_lab);
    visit_mlp("dom_energy", dom_energy, fn);
    visit_mlp("lab_energy", lab_energy, fn);
    fn("prototypes", prototypes);
    fn("variance.w", variance.w);
    fn("variance.b", variance.b);
    visit_mlp("discriminator", discriminator, fn);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    z.for_each_tensor([](const std::string&, Matrix& m) {
        std::fill(m.data().begin(), m.data().end(), 0.0);
    });
    return z;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_tensor([&](const std::string&, const Matrix& m) {
        out.insert(out.end(), m.data().begin(), m.data().end());
    });
    return out;
}

void ModelParams::unflatten(std::span<const double> values) {
    if (values.size() != parameter_count()) {
        throw DimensionError("ModelParams::unflatten: expected " +
                             std::to_string(parameter_count()) + " values, got " +
                             std::to_string(values.size()));
    }
    std::size_t pos = 0;
    for_each_tensor([&](const std::string&, Matrix& m) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), m.size(), m.data().begin());
        pos += m.size();
    });
}

ModelParams& ModelParams::operator+=(const ModelParams& o) {
    std::vector<const Matrix*> others;
    o.for_each_tensor([&](const std::string&, const Matrix& m) { others.push_back(&m); });
    std::size_t i = 0;
    for_each_tensor([&](const std::string&, Matrix& m) { m += *others[i++]; });
    return *this;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Matrix& m) { ok = ok && eris::all_finite(m); });
    return ok;
}

ModelParams init_params(const ArchConfig& arch, Rng& rng, InitScheme scheme) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    const std::size_t k = arch.kernel;
    std::size_t in = arch.input_channels;
    for (auto out : arch.conv_channels) {
        p.conv_w.push_back(sample_normal(rng, out, in * k, init_stddev(scheme, in * k)));
        p.conv_b.emplace_back(1, out);
        in = out;
    }
    const std::size_t b = arch.encoding_dim;
    const std::size_t d = arch.projection_dim;
    const std::size_t h = arch.mlp_hidden;
    const auto ny = static_cast<std::size_t>(arch.num_classes);
    const auto nd = static_cast<std::size_t>(arch.num_domains);
    p.encoder_out = make_dense(arch.pooled_channels(), b, rng, scheme);
    p.w_dom = sample_normal(rng, b, d, init_stddev(scheme, b));
    p.w_lab = sample_normal(rng, b, d, init_stddev(scheme, b));
    p.dom_energy = make_mlp({d, h, h, nd}, rng, scheme);
    p.lab_energy = make_mlp({d, h, h, ny}, rng, scheme);
    p.prototypes = Matrix(ny, b);
    p.variance = make_dense(d, nd, rng, scheme);
    p.discriminator = make_mlp({b, h, nd}, rng, scheme);
    return p;
}

EncoderTrace encode_sample(const ModelParams& params, std::span<const double> sample,
                           std::size_t length, MacCounter* counter) {
    const auto& arch = params.arch;
    if (length == 0 || sample.size() != arch.input_channels * length) {
        throw DimensionError("encode: sample has " + std::to_string(sample.size()) +
                             " values, expected " + std::to_string(arch.input_channels) +
                             " channels x " + std::to_string(length));
    }
    const std::size_t k = arch.kernel;
    const std::size_t pad = k / 2;
    const std::size_t padded_len = length + k - 1;

    EncoderTrace tr;
    tr.acts.emplace_back(arch.input_channels, length,
                         std::vector<double>(sample.begin(), sample.end()));

    std::vector<double> padded;
    for (std::size_t l = 0; l < arch.conv_layers(); ++l) {
        const Matrix& in = tr.acts.back();
        const Matrix& w = params.conv_w[l];
        const std::size_t cin = in.rows();
        const std::size_t cout = w.rows();

        padded.assign(cin * padded_len, 0.0);
        for (std::size_t i = 0; i < cin; ++i)
            std::copy_n(in.row(i).begin(), length, padded.begin() + i * padded_len + pad);

        Matrix pre(cout, length);
        for (std::size_t o = 0; o < cout; ++o) {
            auto out = pre.row(o);
            std::fill(out.begin(), out.end(), params.conv_b[l](0, o));
            auto wrow = w.row(o);
            for (std::size_t i = 0; i < cin; ++i) {
                const double* src = padded.data() + i * padded_len;
                for (std::size_t tap = 0; tap < k; ++tap) {
                    const double wv = wrow[i * k + tap];
                    const double* s = src + tap;
                    for (std::size_t t = 0; t < length; ++t) out[t] += wv * s[t];
                }
            }
        }
        if (counter) counter->conv += length * k * cin * cout;
        Matrix act = pre;
        for (auto& v : act.data()) v = v > 0.0 ? v : 0.0;
        tr.pre.push_back(std::move(pre));
        tr.acts.push_back(std::move(act));
    }

    const Matrix& last = tr.acts.back();
    tr.pooled = Matrix(1, last.rows());
    for (std::size_t c = 0; c < last.rows(); ++c) {
        double s = 0.0;
        for (double v : last.row(c)) s += v;
        tr.pooled(0, c) = s / static_cast<double>(length);
    }
    tr.f0 = Matrix(1, arch.encoding_dim);
    dense_forward(params.encoder_out, tr.pooled.row(0), tr.f0.row(0), counter);
    return tr;
}

Matrix encode(const ModelParams& params, const TimeSeriesDataset& batch) {
    if (batch.channels() != params.arch.input_channels) {
        throw DimensionError("encode: batch has " + std::to_string(batch.channels()) +
                             " channels, model expects " +
                             std::to_string(params.arch.input_channels));
    }
    Matrix f0(batch.size(), params.arch.encoding_dim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto tr = encode_sample(params, batch.sample(i), batch.length());
        std::copy(tr.f0.data().begin(), tr.f0.data().end(), f0.row(i).begin());
    }
    return f0;
}

MlpTrace mlp_forward(const Mlp& mlp, std::span<const double> input, MacCounter* counter) {
    MlpTrace tr;
    Matrix x = row_matrix(input);
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        Matrix y(1, mlp.layers[i].w.cols());
        dense_forward(mlp.layers[i], x.row(0), y.row(0), counter);
        tr.inputs.push_back(std::move(x));
        if (i + 1 < mlp.layers.size()) {
            x = y;
            for (auto& v : x.data()) v = v > 0.0 ? v : 0.0;
            tr.pre.push_back(std::move(y));
        } else {
            tr.output = std::move(y);
        }
    }
    return tr;
}

std::vector<double> mlp_backward(const Mlp& mlp, const MlpTrace& trace,
                                 std::span<const double> d_output, Mlp& grads) {
    std::vector<double> d(d_output.begin(), d_output.end());
    for (std::size_t i = mlp.layers.size(); i-- > 0;) {
        d = dense_backward(mlp.layers[i], trace.inputs[i].row(0), d, grads.layers[i]);
        if (i > 0) {
            const auto pre = trace.pre[i - 1].data();
            for (std::size_t j = 0; j < d.size(); ++j)
                if (!(pre[j] > 0.0)) d[j] = 0.0;
        }
    }
    return d;
}

DomainTrace domain_forward(const ModelParams& params, std::span<const double> f0,
                           MacCounter* counter) {
    DomainTrace tr;
    tr.z = project(params.w_dom, f0, counter);
    tr.mlp = mlp_forward(params.dom_energy, tr.z.row(0), counter);
    tr.energies.assign(tr.mlp.output.data().begin(), tr.mlp.output.data().end());
    return tr;
}

LabelTrace label_forward(const ModelParams& params, std::span<const double> f0,
                         MacCounter* counter) {
    LabelTrace tr;
    tr.z = project(params.w_lab, f0, counter);
    tr.mlp = mlp_forward(params.lab_energy, tr.z.row(0), counter);
    tr.energies.assign(tr.mlp.output.data().begin(), tr.mlp.output.data().end());
    tr.consistency.resize(tr.energies.size());
    for (std::size_t k = 0; k < tr.energies.size(); ++k)
        tr.consistency[k] = tr.energies[k] + squared_distance(f0, params.prototypes.row(k));
    if (counter) counter->distance += tr.energies.size() * f0.size();
    return tr;
}

std::vector<double> energy_domain(const ModelParams& params, std::span<const double> f0) {
    return domain_forward(params, f0).energies;
}

std::vector<double> energy_label(const ModelParams& params, std::span<const double> f0) {
    return label_forward(params, f0).energies;
}

std::vector<double> consistency_error(const ModelParams& params, std::span<const double> f0) {
    return label_forward(params, f0).consistency;
}

EnergyScores energy_scores(const ModelParams& params, std::span<const double> f0) {
    auto lab = label_forward(params, f0);
    return {energy_domain(params, f0), std::move(lab.energies), std::move(lab.consistency)};
}

Prediction predict_from_consistency(std::span<const double> consistency) {
    if (consistency.empty()) throw std::invalid_argument("predict: empty consistency vector");
    const auto best = std::min_element(consistency.begin(), consistency.end());
    const double cmin = *best;
    Prediction p;
    p.label = static_cast<int>(best - consistency.begin());
    p.probs.resize(consistency.size());
    double z = 0.0;
    for (std::size_t k = 0; k < consistency.size(); ++k) {
        p.probs[k] = std::exp(cmin - consistency[k]);
        z += p.probs[k];
    }
    for (auto& v : p.probs) v /= z;
    p.confidence = p.probs[static_cast<std::size_t>(p.label)];
    return p;
}

Prediction predict(const ModelParams& params, std::span<const double> f0) {
    return predict_from_consistency(consistency_error(params, f0));
}

std::vector<double> variance_head(const ModelParams& params, std::span<const double> f0) {
    const Matrix z = project(params.w_dom, f0, nullptr);
    std::vector<double> out(params.variance.w.cols());
    dense_forward(params.variance, z.row(0), out, nullptr);
    for (auto& v : out) v = std::exp(v);
    return out;
}

std::vector<double> discriminate_domain(const ModelParams& params, std::span<const double> f0) {
    const auto tr = mlp_forward(params.discriminator, f0);
    return {tr.output.data().begin(), tr.output.data().end()};
}

std::vector<double> label_backward(const ModelParams& params, std::span<const double> f0,
                                   const LabelTrace& trace, std::span<const double> d_energy,
                                   std::span<const double> d_consistency, ModelParams& grads) {
    const std::size_t ny = trace.energies.size();
    const std::size_t b = f0.size();
    std::vector<double> d_e(ny);
    std::vector<double> dh(b, 0.0);
    for (std::size_t k = 0; k < ny; ++k) {
        d_e[k] = d_energy[k] + d_consistency[k];
        const double dc = d_consistency[k];
        if (dc == 0.0) continue;
        auto proto = params.prototypes.row(k);
        auto gproto = grads.prototypes.row(k);
        for (std::size_t j = 0; j < b; ++j) {
            const double g = 2.0 * (f0[j] - proto[j]) * dc;
            dh[j] += g;
            gproto[j] -= g;
        }
    }
    const auto dz = mlp_backward(params.lab_energy, trace.mlp, d_e, grads.lab_energy);
    const auto dh_proj = project_backward(params.w_lab, f0, dz, grads.w_lab);
    for (std::size_t j = 0; j < b; ++j) dh[j] += dh_proj[j];
    return dh;
}

std::vector<double> domain_backward(const ModelParams& params, std::span<const double> f0,
                                    const DomainTrace& trace, std::span<const double> d_energy,
                                    ModelParams& grads) {
    const auto dz = mlp_backward(params.dom_energy, trace.mlp, d_energy, grads.dom_energy);
    return project_backward(params.w_dom, f0, dz, grads.w_dom);
}

void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      std::span<const double> d_f0, ModelParams& grads) {
    const auto& arch = params.arch;
    const std::size_t length = trace.acts.front().cols();
    const std::size_t k = arch.kernel;
    const std::size_t pad = k / 2;
    const std::size_t padded_len = length + k - 1;

    const auto d_pooled =
        dense_backward(params.encoder_out, trace.pooled.row(0), d_f0, grads.encoder_out);

    // Global average pooling spreads the gradient evenly over time.
    Matrix d_act(trace.acts.back().rows(), length);
    for (std::size_t c = 0; c < d_act.rows(); ++c) {
        const double g = d_pooled[c] / static_cast<double>(length);
        for (auto& v : d_act.row(c)) v = g;
    }

    std::vector<double> padded, d_padded;
    for (std::size_t l = arch.conv_layers(); l-- > 0;) {
        const Matrix& in = trace.acts[l];
        const Matrix& pre = trace.pre[l];
        const Matrix& w = params.conv_w[l];
        Matrix& gw = grads.conv_w[l];
        Matrix& gb = grads.conv_b[l];
        const std::size_t cin = in.rows();
        const std::size_t cout = w.rows();

        for (std::size_t o = 0; o < cout; ++o) {
            auto d = d_act.row(o);
            auto p = pre.row(o);
            for (std::size_t t = 0; t < length; ++t)
                if (!(p[t] > 0.0)) d[t] = 0.0;
        }

        padded.assign(cin * padded_len, 0.0);
        for (std::size_t i = 0; i < cin; ++i)
            std::copy_n(in.row(i).begin(), length, padded.begin() + i * padded_len + pad);
        const bool need_input_grad = l > 0;
        if (need_input_grad) d_padded.assign(cin * padded_len, 0.0);

        for (std::size_t o = 0; o < cout; ++o) {
            auto d = d_act.row(o);
            double bsum = 0.0;
            for (double v : d) bsum += v;
            gb(0, o) += bsum;
            auto wrow = w.row(o);
            auto gwrow = gw.row(o);
            for (std::size_t i = 0; i < cin; ++i) {
                const double* src = padded.data() + i * padded_len;
                double* dsrc = need_input_grad ? d_padded.data() + i * padded_len : nullptr;
                for (std::size_t tap = 0; tap < k; ++tap) {
                    const double* s = src + tap;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < length; ++t) acc += d[t] * s[t];
                    gwrow[i * k + tap] += acc;
                    if (dsrc) {
                        const double wv = wrow[i * k + tap];
                        double* ds = dsrc + tap;
                        for (std::size_t t = 0; t < length; ++t) ds[t] += wv * d[t];
                    }
                }
            }
        }
        if (need_input_grad) {
            Matrix d_in(cin, length);
            for (std::size_t i = 0; i < cin; ++i)
                std::copy_n(d_padded.begin() + i * padded_len + pad, length, d_in.row(i).begin());
            d_act = std::move(d_in);
        }
    }
}

std::vector<double> consistency_input_gradient(const ModelParams& params,
                                               std::span<const double> h,
                                               const LabelTrace& trace,
                                               std::span<const double> d_consistency) {
    const std::size_t b = h.size();
    std::vector<double> dh(b, 0.0);
    for (std::size_t k = 0; k < d_consistency.size(); ++k) {
        auto proto = params.prototypes.row(k);
        for (std::size_t j = 0; j < b; ++j) dh[j] += 2.0 * (h[j] - proto[j]) * d_consistency[k];
    }
    // Energy part: back through the label MLP and W_l, input side only.
    const auto& layers = params.lab_energy.layers;
    std::vector<double> d(d_consistency.begin(), d_consistency.end());
    for (std::size_t i = layers.size(); i-- > 0;) {
        const Matrix& w = layers[i].w;
        std::vector<double> dx(w.rows(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r) dx[r] = dot(w.row(r), d);
        if (i > 0) {
            const auto pre = trace.mlp.pre[i - 1].data();
            for (std::size_t j = 0; j < dx.size(); ++j)
                if (!(pre[j] > 0.0)) dx[j] = 0.0;
        }
        d = std::move(dx);
    }
    for (std::size_t r = 0; r < b; ++r) dh[r] += dot(params.w_lab.row(r), d);
    return dh;
}

double relu_margin(const EncoderTrace& trace) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& pre : trace.pre)
        for (double v : pre.data()) m = std::min(m, std::abs(v));
    return m;
}

double relu_margin(const MlpTrace& trace) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& pre : trace.pre)
        for (double v : pre.data()) m = std::min(m, std::abs(v));
    return m;
}

CostEstimate estimate_cost(const ArchConfig& arch, std::size_t length) {
    arch.validate();
    const std::uint64_t n = length;
    const std::uint64_t k = arch.kernel;
    const std::uint64_t b = arch.encoding_dim;
    const std::uint64_t d = arch.projection_dim;
    const std::uint64_t h = arch.mlp_hidden;
    const auto ny = static_cast<std::uint64_t>(arch.num_classes);
    const auto nd = static_cast<std::uint64_t>(arch.num_domains);

    CostEstimate c;
    std::uint64_t prev = arch.input_channels;
    std::uint64_t kernel_params = 0;
    std::uint64_t conv_biases = 0;
    for (auto ch : arch.conv_channels) {
        c.conv_macs += n * k * prev * ch;
        kernel_params += k * prev * ch;
        conv_biases += ch;
        prev = ch;
    }
    const std::uint64_t pooled = arch.pooled_channels();
    const std::uint64_t mlp_nominal = b * h + h * h + h * (ny + nd);

    c.nominal_time_macs = c.conv_macs + mlp_nominal;
    c.time_macs = c.conv_macs + pooled * b  // encoder output layer
                  + 2 * b * d               // W_d and W_l projections
                  + 2 * (d * h + h * h)     // hidden layers of both energy heads
                  + h * (ny + nd)           // output layers of both energy heads
                  + ny * b;                 // prototype distances
    c.nominal_param_count = kernel_params + mlp_nominal;
    c.param_count = kernel_params + conv_biases           // conv stack
                    + pooled * b + b                      // encoder output
                    + 2 * b * d                           // projections
                    + 2 * (d * h + h + h * h + h)         // energy-head hidden layers
                    + h * (ny + nd) + ny + nd             // energy-head outputs
                    + ny * b                              // prototypes
                    + d * nd + nd                         // variance head
                    + b * h + h + h * nd + nd;            // discriminator
    c.activation_count = n * arch.input_channels + b + 2 * ny + 2 * nd;
    return c;
}

MacCounter count_inference_macs(const ModelParams& params, std::span<const double> sample,
                                std::size_t length) {
    MacCounter counter;
    const auto enc = encode_sample(params, sample, length, &counter);
    domain_forward(params, enc.f0.row(0), &counter);
    label_forward(params, enc.f0.row(0), &counter);
    return counter;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path.string());
    const auto& a = params.arch;
    out << "ERIS-PARAMS,1," << a.input_channels << ',' << a.kernel << ',' << a.conv_layers();
    for (auto c : a.conv_channels) out << ',' << c;
    out << ',' << a.encoding_dim << ',' << a.projection_dim << ',' << a.mlp_hidden << ','
        << a.num_classes << ',' << a.num_domains << '\n';
    params.for_each_tensor([&](const std::string& name, const Matrix& m) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, m.rows());
        write_u64(out, m.cols());
        write_u64(out, m.size());
        for (double v : m.data()) write_u64(out, std::bit_cast<std::uint64_t>(v));
    });
    if (!out) throw std::runtime_error("save_params: write failed for " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("load_params: empty file");

    std::vector<std::string> fields;
    {
        std::stringstream ss(header);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
    }
    if (fields.size() < 5 || fields[0] != "ERIS-PARAMS" || fields[1] != "1") {
        throw std::runtime_error("load_params: malformed header, expected 'ERIS-PARAMS,1,...'");
    }
    ArchConfig arch;
    try {
        std::size_t pos = 2;
        arch.input_channels = std::stoul(fields.at(pos++));
        arch.kernel = std::stoul(fields.at(pos++));
        const std::size_t layers = std::stoul(fields.at(pos++));
        arch.conv_channels.clear();
        for (std::size_t l = 0; l < layers; ++l) arch.conv_channels.push_back(std::stoul(fields.at(pos++)));
        arch.encoding_dim = std::stoul(fields.at(pos++));
        arch.projection_dim = std::stoul(fields.at(pos++));
        arch.mlp_hidden = std::stoul(fields.at(pos++));
        arch.num_classes = std::stoi(fields.at(pos++));
        arch.num_domains = std::stoi(fields.at(pos++));
        if (pos != fields.size()) throw std::runtime_error("trailing header fields");
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("load_params: bad architecture header: ") + e.what());
    }
    arch.validate();

    Rng unused(0);
    ModelParams params = init_params(arch, unused);
    params.for_each_tensor([&](const std::string& name, Matrix& m) {
        const auto name_len = read_u64(in);
        if (name_len > 256) throw std::runtime_error("load_params: corrupt tensor name length");
        std::string got(name_len, '\0');
        in.read(got.data(), static_cast<std::streamsize>(name_len));
        if (!in || got != name) {
            throw std::runtime_error("load_params: expected tensor '" + name + "', found '" + got +
                                     "'");
        }
        const auto rows = read_u64(in);
        const auto cols = read_u64(in);
        const auto count = read_u64(in);
        if (rows != m.rows() || cols != m.cols() || count != m.size()) {
            throw std::runtime_error("load_params: tensor '" + name + "' has shape " +
                                     std::to_string(rows) + "x" + std::to_string(cols) +
                                     ", expected " + m.shape_str());
        }
        for (auto& v : m.data()) v = std::bit_cast<double>(read_u64(in));
    });
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error("load_params: trailing data after last tensor");
    }
    return params;
}

}  // namespace eris
