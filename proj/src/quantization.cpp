#include "fusion/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fusion/io.hpp"

namespace fusion {

namespace {

constexpr std::int32_t kActMin = -128;
constexpr std::int32_t kActMax = 127;
constexpr std::int32_t kWeightMax = 127;

std::int32_t clamp_i32(long long v, std::int32_t lo, std::int32_t hi)
{
    return static_cast<std::int32_t>(std::clamp<long long>(v, lo, hi));
}

} // namespace

std::int8_t QuantParams::quantize(double x) const
{
    return static_cast<std::int8_t>(clamp_i32(std::llround(x / scale) + zero_point, kActMin, kActMax));
}

QuantParams activation_params(double min, double max)
{
    if (!(max >= min))
        throw ConfigError("activation range has max < min");
    const double lo = std::min(min, 0.0);
    const double hi = std::max(max, 0.0);
    QuantParams p;
    p.scale = (hi - lo) / 255.0;
    if (p.scale < kMinScale) {
        warn("degenerate activation range [" + std::to_string(min) + ", " + std::to_string(max) +
             "]; using scale floor 1e-8");
        p.scale = kMinScale;
    }
    p.zero_point = clamp_i32(std::llround(static_cast<double>(kActMin) - lo / p.scale), kActMin, kActMax);
    return p;
}

FixedPointMultiplier quantize_multiplier(double real)
{
    if (real < 0.0 || !std::isfinite(real))
        throw ConfigError("requantization multiplier must be finite and non-negative");
    if (real == 0.0)
        return {0, 0};
    int exponent = 0;
    const double q = std::frexp(real, &exponent); // real = q * 2^exponent, q in [0.5, 1)
    long long fixed = std::llround(q * static_cast<double>(1LL << 31));
    if (fixed == (1LL << 31)) {
        fixed /= 2;
        ++exponent;
    }
    if (-exponent > 62 - 31)
        return {0, 0}; // below the representable resolution
    return {static_cast<std::int32_t>(fixed), -exponent};
}

std::int32_t apply_multiplier(std::int32_t acc, const FixedPointMultiplier& m)
{
    const long long prod = static_cast<long long>(acc) * static_cast<long long>(m.multiplier);
    const int shift = 31 + m.right_shift;
    long long result = 0;
    if (shift <= 0) {
        const long long limit = std::numeric_limits<std::int32_t>::max();
        result = std::clamp(prod, -limit, limit) << std::min(-shift, 30);
    } else {
        // round half away from zero
        const long long half = 1LL << (shift - 1);
        result = prod >= 0 ? (prod + half) >> shift : -((-prod + half) >> shift);
    }
    return clamp_i32(result, std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max());
}

// ---------------------------------------------------------------------------
// Folding and calibration

Model fold_batchnorm(const Model& model)
{
    if (!model.has_batchnorm())
        throw ConfigError("model has no batch-norm layers left to fold");
    Model out = model;
    for (auto& block : out.blocks) {
        const auto& bn = *block.bn;
        const Eigen::ArrayXd factor = bn.gamma.array() * (bn.moving_var.array() + bn.epsilon).rsqrt();
        auto k = block.conv.kernel.matrix(); // (taps) x Cout
        k = k * factor.matrix().asDiagonal();
        block.conv.bias.array() = (block.conv.bias.array() - bn.moving_mean.array()) * factor + bn.beta.array();
        block.bn.reset();
    }
    return out;
}

void CalibrationRanges::observe(const Model& model, const TensorD& batch)
{
    const Activations a = forward(model, batch);
    std::array<ActivationRange, kBoundaryCount> seen;
    seen[0] = {batch.array().minCoeff(), batch.array().maxCoeff()};
    for (std::size_t l = 0; l < 3; ++l)
        seen[l + 1] = {std::min(a.blocks[l].array().minCoeff(), 0.0), a.blocks[l].array().maxCoeff()};
    seen[4] = {std::min(a.embedding.array().minCoeff(), 0.0), a.embedding.array().maxCoeff()};
    for (std::size_t i = 0; i < kBoundaryCount; ++i) {
        if (samples == 0) {
            boundaries[i] = seen[i];
        } else {
            boundaries[i].min = std::min(boundaries[i].min, seen[i].min);
            boundaries[i].max = std::max(boundaries[i].max, seen[i].max);
        }
    }
    samples += static_cast<std::size_t>(batch.rank() == 4 ? batch.dim(0) : 1);
}

CalibrationRanges calibrate(const Model& model, const TensorD& calibration_batch)
{
    if (calibration_batch.empty() || (calibration_batch.rank() == 4 && calibration_batch.dim(0) == 0))
        throw ConfigError("calibration set is empty");
    CalibrationRanges r;
    r.observe(model, calibration_batch);
    return r;
}

// ---------------------------------------------------------------------------
// Quantization

namespace {

/// Per-output-channel symmetric quantization of a (rows x Cout) row-major
/// weight matrix.
void quantize_weights(ConstMatrixMap<double> w, QuantizedLayer& layer)
{
    const Index rows = w.rows(), cout = w.cols();
    layer.weights.assign(static_cast<std::size_t>(w.size()), 0);
    layer.weight_scales.assign(static_cast<std::size_t>(cout), 1.0);
    layer.weight_zero_points.assign(static_cast<std::size_t>(cout), 0);
    for (Index c = 0; c < cout; ++c) {
        const double peak = w.col(c).cwiseAbs().maxCoeff();
        const double scale = peak > 0 ? peak / kWeightMax : 1.0;
        layer.weight_scales[static_cast<std::size_t>(c)] = scale;
        for (Index r = 0; r < rows; ++r)
            layer.weights[static_cast<std::size_t>(r * cout + c)] =
                static_cast<std::int8_t>(clamp_i32(std::llround(w(r, c) / scale), -kWeightMax, kWeightMax));
    }
}

void quantize_bias(const TensorD& bias, double input_scale, QuantizedLayer& layer)
{
    layer.bias.resize(static_cast<std::size_t>(bias.size()));
    for (Index c = 0; c < bias.size(); ++c) {
        const double q = bias[c] / (input_scale * layer.weight_scales[static_cast<std::size_t>(c)]);
        layer.bias[static_cast<std::size_t>(c)] = clamp_i32(std::llround(std::clamp(q, -2.1e9, 2.1e9)),
                                                            std::numeric_limits<std::int32_t>::min(),
                                                            std::numeric_limits<std::int32_t>::max());
    }
}

} // namespace

QuantizedModel quantize_model(const Model& folded, const CalibrationRanges& ranges)
{
    if (folded.has_batchnorm())
        throw ConfigError("quantize_model expects a BN-folded model");
    if (ranges.samples == 0)
        throw ConfigError("calibration ranges are empty");
    QuantizedModel qm;
    qm.config = folded.config;
    qm.normalization = folded.normalization;
    for (std::size_t i = 0; i < kBoundaryCount; ++i)
        qm.activations[i] = activation_params(ranges.boundaries[i].min, ranges.boundaries[i].max);

    for (std::size_t l = 0; l < 3; ++l) {
        const auto& conv = folded.blocks[l].conv;
        auto& layer = qm.convs[l];
        layer.kind = LayerKind::conv;
        layer.relu = true;
        layer.in_channels = static_cast<std::int32_t>(conv.in_channels());
        layer.out_channels = static_cast<std::int32_t>(conv.out_channels());
        layer.groups = static_cast<std::int32_t>(conv.groups);
        quantize_weights(conv.kernel.matrix(), layer);
        const double in_scale = qm.activations[l].scale, out_scale = qm.activations[l + 1].scale;
        quantize_bias(conv.bias, in_scale, layer);
        for (double ws : layer.weight_scales)
            layer.requant.push_back(quantize_multiplier(in_scale * ws / out_scale));
    }

    const double positions = static_cast<double>(folded.config.height * folded.config.width);
    qm.pool_multiplier = quantize_multiplier(qm.activations[3].scale / (positions * qm.activations[4].scale));

    auto& d = qm.dense;
    d.kind = LayerKind::dense;
    d.relu = false;
    d.in_channels = static_cast<std::int32_t>(folded.dense_weights.dim(0));
    d.out_channels = static_cast<std::int32_t>(folded.dense_weights.dim(1));
    d.groups = 1;
    quantize_weights(folded.dense_weights.matrix(), d);
    quantize_bias(folded.dense_bias, qm.activations[4].scale, d);
    return qm;
}

std::vector<std::int8_t> quantize_input(const QuantizedModel& qm, const TensorD& input)
{
    const auto& c = qm.config;
    if (input.rank() != 3 || input.dim(0) != c.height || input.dim(1) != c.width || input.dim(2) != c.in_channels)
        throw ShapeError("quantized model expects a " + std::to_string(c.height) + "x" + std::to_string(c.width) + "x" +
                         std::to_string(c.in_channels) + " input, got " + input.shape_string());
    std::vector<std::int8_t> q(static_cast<std::size_t>(input.size()));
    for (Index i = 0; i < input.size(); ++i)
        q[static_cast<std::size_t>(i)] = qm.activations[0].quantize(input[i]);
    return q;
}

namespace {

std::vector<std::int8_t> conv_int8(const QuantizedLayer& layer, std::span<const std::int8_t> in, Index height,
                                   Index width, const QuantParams& in_q, const QuantParams& out_q)
{
    const Index cin = layer.in_channels, cout = layer.out_channels;
    const Index cg_in = cin / layer.groups, cg_out = cout / layer.groups;
    const std::int32_t lo = layer.relu ? std::max(out_q.zero_point, kActMin) : kActMin;
    std::vector<std::int8_t> out(static_cast<std::size_t>(height * width * cout));
    for (Index h = 0; h < height; ++h)
        for (Index w = 0; w < width; ++w)
            for (Index co = 0; co < cout; ++co) {
                const Index g = co / cg_out;
                std::int32_t acc = layer.bias[static_cast<std::size_t>(co)];
                for (Index kh = 0; kh < kKernelSize; ++kh) {
                    const Index ih = h + kh - 1;
                    if (ih < 0 || ih >= height)
                        continue;
                    for (Index kw = 0; kw < kKernelSize; ++kw) {
                        const Index iw = w + kw - 1;
                        if (iw < 0 || iw >= width)
                            continue;
                        const std::int8_t* x = in.data() + (ih * width + iw) * cin + g * cg_in;
                        const std::int8_t* k = layer.weights.data() + ((kh * kKernelSize + kw) * cg_in) * cout + co;
                        for (Index ci = 0; ci < cg_in; ++ci)
                            acc += (static_cast<std::int32_t>(x[ci]) - in_q.zero_point) *
                                   static_cast<std::int32_t>(k[ci * cout]);
                    }
                }
                const std::int32_t v = out_q.zero_point + apply_multiplier(acc, layer.requant[static_cast<std::size_t>(co)]);
                out[static_cast<std::size_t>((h * width + w) * cout + co)] = static_cast<std::int8_t>(std::clamp(v, lo, kActMax));
            }
    return out;
}

} // namespace

Eigen::VectorXd quantized_logits(const QuantizedModel& qm, std::span<const std::int8_t> input)
{
    const Index height = qm.config.height, width = qm.config.width;
    if (static_cast<Index>(input.size()) != height * width * qm.config.in_channels)
        throw ShapeError("quantized input has " + std::to_string(input.size()) + " values");
    std::vector<std::int8_t> x(input.begin(), input.end());
    for (std::size_t l = 0; l < 3; ++l)
        x = conv_int8(qm.convs[l], x, height, width, qm.activations[l], qm.activations[l + 1]);

    const Index channels = qm.convs[2].out_channels;
    const auto& in_q = qm.activations[3];
    const auto& pool_q = qm.activations[4];
    std::vector<std::int32_t> pooled(static_cast<std::size_t>(channels));
    for (Index c = 0; c < channels; ++c) {
        std::int32_t sum = 0;
        for (Index p = 0; p < height * width; ++p)
            sum += static_cast<std::int32_t>(x[static_cast<std::size_t>(p * channels + c)]) - in_q.zero_point;
        pooled[static_cast<std::size_t>(c)] =
            std::clamp(pool_q.zero_point + apply_multiplier(sum, qm.pool_multiplier), kActMin, kActMax) - pool_q.zero_point;
    }

    const auto& d = qm.dense;
    Eigen::VectorXd logits(d.out_channels);
    for (Index k = 0; k < d.out_channels; ++k) {
        std::int32_t acc = d.bias[static_cast<std::size_t>(k)];
        for (Index c = 0; c < d.in_channels; ++c)
            acc += pooled[static_cast<std::size_t>(c)] * d.weights[static_cast<std::size_t>(c * d.out_channels + k)];
        logits[k] = static_cast<double>(acc) * pool_q.scale * d.weight_scales[static_cast<std::size_t>(k)];
    }
    return logits;
}

Eigen::VectorXd quantized_logits(const QuantizedModel& qm, const TensorD& input)
{
    const auto q = quantize_input(qm, input);
    return quantized_logits(qm, q);
}

Eigen::VectorXd quantized_infer(const QuantizedModel& qm, const TensorD& input)
{
    return softmax<double>(quantized_logits(qm, input));
}

QuantizedModel post_training_quantize(const Model& model, const TensorD& calibration_batch)
{
    const Model folded = fold_batchnorm(model);
    return quantize_model(folded, calibrate(folded, calibration_batch));
}

AgreementReport agreement(const Model& model, const QuantizedModel& qm, const Dataset& dataset,
                          std::span<const std::size_t> indices)
{
    AgreementReport r;
    const auto channels = model.config.strategy.input_channels();
    std::vector<double> lf, lq;
    double abs_sum = 0.0;
    for (std::size_t i : indices) {
        const FramePair& frame = dataset.samples.at(i);
        const TensorD x = model_input(frame, model.normalization, channels);
        const TensorD float_logits = forward_logits(model, x);
        const Eigen::VectorXd zf = Eigen::Map<const Eigen::VectorXd>(float_logits.data(), float_logits.size());
        const Eigen::VectorXd zq = quantized_logits(qm, x);
        const Eigen::VectorXd pf = softmax<double>(zf);
        const Eigen::VectorXd pq = softmax<double>(zq);
        Index kf = 0, kq = 0;
        pf.maxCoeff(&kf);
        pq.maxCoeff(&kq);
        ++r.samples;
        r.agreed += kf == kq;
        r.float_correct += kf == frame.label;
        r.int8_correct += kq == frame.label;
        r.max_prob_error = std::max(r.max_prob_error, (pf - pq).cwiseAbs().maxCoeff());
        abs_sum += (pf - pq).cwiseAbs().sum();
        lf.insert(lf.end(), zf.data(), zf.data() + zf.size());
        lq.insert(lq.end(), zq.data(), zq.data() + zq.size());
    }
    if (!lf.empty()) {
        r.mean_prob_error = abs_sum / static_cast<double>(lf.size());
        const Eigen::Map<const Eigen::ArrayXd> a(lf.data(), static_cast<Index>(lf.size()));
        const Eigen::Map<const Eigen::ArrayXd> b(lq.data(), static_cast<Index>(lq.size()));
        const Eigen::ArrayXd da = a - a.mean(), dbv = b - b.mean();
        const double denom = std::sqrt(da.square().sum() * dbv.square().sum());
        r.logit_correlation = denom > 0 ? (da * dbv).sum() / denom : 0.0;
    }
    return r;
}

std::size_t weight_payload_bytes(const QuantizedModel& qm)
{
    std::size_t bytes = qm.dense.weights.size() + 4 * qm.dense.bias.size();
    for (const auto& l : qm.convs)
        bytes += l.weights.size() + 4 * l.bias.size();
    return bytes;
}

// ---------------------------------------------------------------------------
// QFG1

namespace {

constexpr std::string_view kQuantMagic = "QFG1";
constexpr std::uint8_t kQuantVersion = 1;
constexpr std::uint8_t kSignedActivations = 1;

void put_layer(io::ByteWriter& w, const QuantizedLayer& l)
{
    w.put(static_cast<std::uint8_t>(l.kind));
    w.put(static_cast<std::uint8_t>(l.relu));
    w.put(static_cast<std::uint32_t>(l.in_channels));
    w.put(static_cast<std::uint32_t>(l.out_channels));
    w.put(static_cast<std::uint32_t>(l.groups));
    w.put(static_cast<std::uint32_t>(l.weights.size()));
    for (double s : l.weight_scales)
        w.put(s);
    for (std::int8_t z : l.weight_zero_points)
        w.put(z);
    if (l.kind == LayerKind::conv)
        for (const auto& m : l.requant) {
            w.put(m.multiplier);
            w.put(m.right_shift);
        }
    for (std::int8_t q : l.weights)
        w.put(q);
    for (std::int32_t b : l.bias)
        w.put(b);
}

QuantizedLayer get_layer(io::ByteReader& r, LayerKind expected, std::size_t expected_weights)
{
    QuantizedLayer l;
    const auto kind = r.get<std::uint8_t>();
    if (kind != static_cast<std::uint8_t>(expected))
        throw FormatError("QFG1: unexpected layer kind " + std::to_string(kind));
    l.kind = expected;
    l.relu = r.get<std::uint8_t>() != 0;
    l.in_channels = static_cast<std::int32_t>(r.get<std::uint32_t>());
    l.out_channels = static_cast<std::int32_t>(r.get<std::uint32_t>());
    l.groups = static_cast<std::int32_t>(r.get<std::uint32_t>());
    const auto n_weights = r.get<std::uint32_t>();
    if (n_weights != expected_weights)
        throw FormatError("QFG1: layer has " + std::to_string(n_weights) + " weights, config implies " +
                          std::to_string(expected_weights));
    const auto cout = static_cast<std::size_t>(l.out_channels);
    for (std::size_t c = 0; c < cout; ++c)
        l.weight_scales.push_back(r.get<double>());
    for (std::size_t c = 0; c < cout; ++c)
        l.weight_zero_points.push_back(r.get<std::int8_t>());
    if (l.kind == LayerKind::conv)
        for (std::size_t c = 0; c < cout; ++c) {
            FixedPointMultiplier m;
            m.multiplier = r.get<std::int32_t>();
            m.right_shift = r.get<std::int32_t>();
            l.requant.push_back(m);
        }
    r.require(n_weights);
    l.weights.reserve(n_weights);
    for (std::uint32_t i = 0; i < n_weights; ++i)
        l.weights.push_back(r.get<std::int8_t>());
    for (std::size_t c = 0; c < cout; ++c)
        l.bias.push_back(r.get<std::int32_t>());
    return l;
}

} // namespace

std::vector<std::uint8_t> encode_quantized(const QuantizedModel& qm)
{
    const auto& c = qm.config;
    io::ByteWriter w;
    w.put_bytes(kQuantMagic);
    w.put(kQuantVersion);
    w.put(static_cast<std::uint8_t>(c.strategy.kind));
    w.put(static_cast<std::uint8_t>(c.in_channels));
    w.put(static_cast<std::uint8_t>(c.num_classes));
    w.put(static_cast<std::uint8_t>(c.height));
    w.put(static_cast<std::uint8_t>(c.width));
    for (Index f : c.filters)
        w.put(static_cast<std::uint16_t>(f));
    for (Index g : c.strategy.groups)
        w.put(static_cast<std::uint8_t>(g));
    w.put(kSignedActivations);
    for (std::size_t i = 0; i < qm.normalization.mean.size(); ++i) {
        w.put(qm.normalization.mean[i]);
        w.put(qm.normalization.std[i]);
    }
    w.put(static_cast<std::uint8_t>(kBoundaryCount));
    for (const auto& a : qm.activations) {
        w.put(a.scale);
        w.put(a.zero_point);
    }
    w.put(qm.pool_multiplier.multiplier);
    w.put(qm.pool_multiplier.right_shift);
    w.put(static_cast<std::uint8_t>(4));
    for (const auto& l : qm.convs)
        put_layer(w, l);
    put_layer(w, qm.dense);
    return w.take();
}

QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes)
{
    io::ByteReader r(bytes, "QFG1 model");
    if (r.get_bytes(kQuantMagic.size()) != kQuantMagic)
        throw BadMagicError("not a QFG1 quantized model (bad magic)");
    const auto version = r.get<std::uint8_t>();
    if (version != kQuantVersion)
        throw FormatError("QFG1: unsupported version " + std::to_string(version));

    QuantizedModel qm;
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(Strategy::tof_only))
        throw FormatError("QFG1: unknown strategy id " + std::to_string(kind));
    qm.config = ModelConfig::for_strategy(static_cast<Strategy>(kind));
    qm.config.in_channels = r.get<std::uint8_t>();
    qm.config.num_classes = r.get<std::uint8_t>();
    qm.config.height = r.get<std::uint8_t>();
    qm.config.width = r.get<std::uint8_t>();
    for (auto& f : qm.config.filters)
        f = r.get<std::uint16_t>();
    std::array<Index, 3> groups{};
    for (auto& g : groups)
        g = r.get<std::uint8_t>();
    if (groups != qm.config.strategy.groups)
        throw FormatError("QFG1: groups do not match strategy " + qm.config.strategy.name());
    try {
        qm.config.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("QFG1: invalid config: ") + e.what());
    }
    if (r.get<std::uint8_t>() != kSignedActivations)
        throw FormatError("QFG1: only signed int8 activations are supported");
    for (Index i = 0; i < qm.config.in_channels; ++i) {
        qm.normalization.mean.push_back(r.get<double>());
        qm.normalization.std.push_back(r.get<double>());
    }
    if (r.get<std::uint8_t>() != kBoundaryCount)
        throw FormatError("QFG1: unexpected activation boundary count");
    for (auto& a : qm.activations) {
        a.scale = r.get<double>();
        a.zero_point = r.get<std::int32_t>();
        if (!(a.scale > 0) || a.zero_point < kActMin || a.zero_point > kActMax)
            throw FormatError("QFG1: invalid activation quantization parameters");
    }
    qm.pool_multiplier.multiplier = r.get<std::int32_t>();
    qm.pool_multiplier.right_shift = r.get<std::int32_t>();
    if (r.get<std::uint8_t>() != 4)
        throw FormatError("QFG1: expected 4 layers");
    Index cin = qm.config.in_channels;
    for (std::size_t l = 0; l < 3; ++l) {
        const Index cout = qm.config.filters[l];
        const auto expected = static_cast<std::size_t>(kKernelSize * kKernelSize * (cin / qm.config.strategy.groups[l]) * cout);
        qm.convs[l] = get_layer(r, LayerKind::conv, expected);
        if (qm.convs[l].in_channels != cin || qm.convs[l].out_channels != cout ||
            qm.convs[l].groups != qm.config.strategy.groups[l])
            throw FormatError("QFG1: conv layer " + std::to_string(l) + " shape disagrees with config");
        cin = cout;
    }
    qm.dense = get_layer(r, LayerKind::dense, static_cast<std::size_t>(cin * qm.config.num_classes));
    if (qm.dense.in_channels != cin || qm.dense.out_channels != qm.config.num_classes)
        throw FormatError("QFG1: dense layer shape disagrees with config");
    if (r.remaining() != 0)
        throw FormatError("QFG1: " + std::to_string(r.remaining()) + " trailing bytes");
    return qm;
}

void save_quantized(const QuantizedModel& qm, const std::filesystem::path& path)
{
    const auto bytes = encode_quantized(qm);
    io::write_file_atomic(path, bytes);
}

QuantizedModel load_quantized(const std::filesystem::path& path)
{
    const auto bytes = io::read_file(path);
    return decode_quantized(bytes);
}

} // namespace fusion
