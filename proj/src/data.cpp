#include "fusion/data.hpp"

#include <algorithm>
#include <cmath>

#include "fusion/io.hpp"

namespace fusion {

namespace {

struct Rect {
    double x0, y0, x1, y1;
    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Union of `add` rectangles minus the union of `cut` rectangles.
struct Shape {
    std::vector<Rect> add;
    std::vector<Rect> cut;

    bool contains(double x, double y) const
    {
        const auto in = [&](const Rect& r) { return r.contains(x, y); };
        return std::any_of(add.begin(), add.end(), in) && std::none_of(cut.begin(), cut.end(), in);
    }
};

constexpr Rect kFist{2.5, 4.0, 5.5, 7.0};

Shape depth_shape(Gesture g, bool ambiguous)
{
    switch (g) {
    case Gesture::call:
        return {{{2.5, 3.5, 5.5, 6.5}, {1.2, 2.0, 2.4, 3.8}, {5.5, 1.5, 6.5, 3.8}}, {}};
    case Gesture::fist:
        return {{{2.5, 3.0, 5.5, 6.5}}, {}};
    case Gesture::okay:
        return {{{3.0, 4.0, 5.8, 7.0}, {3.2, 1.0, 3.9, 4.0}, {4.1, 0.8, 4.8, 4.0}, {5.0, 1.2, 5.7, 4.0}, {1.2, 2.8, 3.0, 4.6}},
                {{1.8, 3.4, 2.4, 4.0}}};
    case Gesture::one:
        return {{kFist, {3.6, 0.8, 4.4, 4.0}}, {}};
    case Gesture::peace:
        return {{kFist, {2.9, 0.8, 3.7, 4.0}, {4.3, 0.8, 5.1, 4.0}}, {}};
    case Gesture::stop:
        return {{{2.2, 3.2, 5.8, 7.0}, {2.2, 0.6, 2.9, 3.2}, {3.1, 0.3, 3.8, 3.2}, {4.2, 0.3, 4.9, 3.2},
                 {5.1, 0.7, 5.8, 3.2}, {1.0, 3.8, 2.2, 5.2}},
                {}};
    case Gesture::stop_inv:
        if (ambiguous)
            return depth_shape(Gesture::stop, true);
        return {{{2.2, 3.2, 5.8, 7.0}, {2.2, 0.6, 2.9, 3.2}, {3.1, 0.3, 3.8, 3.2}, {4.2, 0.3, 4.9, 3.2},
                 {5.1, 0.7, 5.8, 3.2}, {1.0, 5.0, 2.2, 6.4}},
                {}};
    }
    throw ConfigError("unknown gesture");
}

Shape thermal_shape(Gesture g, bool ambiguous)
{
    // At 8x8 a thermopile blurs one raised finger and two adjacent ones into
    // the same warm strip.
    if (ambiguous && (g == Gesture::one || g == Gesture::peace))
        return {{kFist, {3.3, 1.0, 4.7, 4.0}}, {}};
    return depth_shape(g, ambiguous);
}

/// Palm orientation: +1 warmer toward the wrist (bottom rows), -1 reversed.
double thermal_orientation(Gesture g)
{
    return g == Gesture::stop_inv ? -1.0 : 1.0;
}

struct Placement {
    double dx = 0.0, dy = 0.0, scale = 1.0;
};

constexpr int kSuper = 4;

/// Fractional cell coverage of a shape placed with the given jitter.
Eigen::Matrix<double, kFrameSize, kFrameSize, Eigen::RowMajor> occupancy(const Shape& s, const Placement& p)
{
    constexpr double c = kFrameSize / 2.0;
    Eigen::Matrix<double, kFrameSize, kFrameSize, Eigen::RowMajor> occ;
    for (Index row = 0; row < kFrameSize; ++row)
        for (Index col = 0; col < kFrameSize; ++col) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double x = static_cast<double>(col) + (sx + 0.5) / kSuper;
                    const double y = static_cast<double>(row) + (sy + 0.5) / kSuper;
                    const double tx = c + (x - c - p.dx) / p.scale;
                    const double ty = c + (y - c - p.dy) / p.scale;
                    hits += s.contains(tx, ty);
                }
            occ(row, col) = static_cast<double>(hits) / (kSuper * kSuper);
        }
    return occ;
}

struct RenderParams {
    Placement placement;
    double distance;
    double hand_temp;
};

FramePair render(Gesture g, const GeneratorConfig& cfg, const RenderParams& rp, Rng* noise)
{
    const auto occ_d = occupancy(depth_shape(g, cfg.ambiguity_pairs), rp.placement);
    const auto occ_t = occupancy(thermal_shape(g, cfg.ambiguity_pairs), rp.placement);
    const double orient = thermal_orientation(g);
    FramePair f;
    f.label = static_cast<int>(g);
    for (Index row = 0; row < kFrameSize; ++row) {
        const double v = (static_cast<double>(row) + 0.5 - kFrameSize / 2.0) / (kFrameSize / 2.0);
        const double hand_t = rp.hand_temp + orient * cfg.thermal_gradient * v;
        for (Index col = 0; col < kFrameSize; ++col) {
            double t = occ_t(row, col) * hand_t + (1.0 - occ_t(row, col)) * cfg.ambient_temp;
            double d = occ_d(row, col) * rp.distance + (1.0 - occ_d(row, col)) * cfg.background_depth;
            if (noise) {
                t += noise->normal(0.0, cfg.thermal_noise_std);
                d += noise->normal(0.0, cfg.depth_noise_std);
            }
            f.thermal(row, col) = static_cast<float>(std::clamp(t, kThermalMin, kThermalMax));
            f.depth(row, col) = static_cast<float>(std::clamp(d, kDepthMin, kDepthMax));
        }
    }
    return f;
}

RenderParams nominal(const GeneratorConfig& cfg)
{
    return {{}, 0.5 * (cfg.hand_distance_min + cfg.hand_distance_max), cfg.hand_temp_mean};
}

} // namespace

std::vector<int> Dataset::labels() const
{
    std::vector<int> l;
    l.reserve(samples.size());
    for (const auto& s : samples)
        l.push_back(s.label);
    return l;
}

void GeneratorConfig::validate(int folds) const
{
    if (samples_per_class < folds)
        throw ConfigError("samples_per_class must be at least the fold count (" + std::to_string(folds) + ")");
    if (!(hand_distance_min > 0.0) || hand_distance_max < hand_distance_min)
        throw ConfigError("hand distance range must satisfy 0 < min <= max");
    if (!(background_depth > 0.0))
        throw ConfigError("background depth must be positive");
    if (hand_temp_std < 0.0 || thermal_noise_std < 0.0 || depth_noise_std < 0.0)
        throw ConfigError("standard deviations must be non-negative");
    if (jitter_translation < 0.0 || jitter_scale < 0.0 || jitter_scale >= 1.0)
        throw ConfigError("jitter must satisfy translation >= 0 and 0 <= scale < 1");
    if (ambient_temp < kThermalMin || ambient_temp > kThermalMax || hand_temp_mean < kThermalMin ||
        hand_temp_mean > kThermalMax)
        throw ConfigError("temperatures must lie in the sensor range [0, 80] degC");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c)
{
    j = {{"samples_per_class", c.samples_per_class},
         {"hand_distance_min", c.hand_distance_min},
         {"hand_distance_max", c.hand_distance_max},
         {"hand_temp_mean", c.hand_temp_mean},
         {"hand_temp_std", c.hand_temp_std},
         {"ambient_temp", c.ambient_temp},
         {"thermal_gradient", c.thermal_gradient},
         {"thermal_noise_std", c.thermal_noise_std},
         {"depth_noise_std", c.depth_noise_std},
         {"background_depth", c.background_depth},
         {"jitter_translation", c.jitter_translation},
         {"jitter_scale", c.jitter_scale},
         {"ambiguity_pairs", c.ambiguity_pairs},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c)
{
    const GeneratorConfig d;
    c.samples_per_class = j.value("samples_per_class", d.samples_per_class);
    c.hand_distance_min = j.value("hand_distance_min", d.hand_distance_min);
    c.hand_distance_max = j.value("hand_distance_max", d.hand_distance_max);
    c.hand_temp_mean = j.value("hand_temp_mean", d.hand_temp_mean);
    c.hand_temp_std = j.value("hand_temp_std", d.hand_temp_std);
    c.ambient_temp = j.value("ambient_temp", d.ambient_temp);
    c.thermal_gradient = j.value("thermal_gradient", d.thermal_gradient);
    c.thermal_noise_std = j.value("thermal_noise_std", d.thermal_noise_std);
    c.depth_noise_std = j.value("depth_noise_std", d.depth_noise_std);
    c.background_depth = j.value("background_depth", d.background_depth);
    c.jitter_translation = j.value("jitter_translation", d.jitter_translation);
    c.jitter_scale = j.value("jitter_scale", d.jitter_scale);
    c.ambiguity_pairs = j.value("ambiguity_pairs", d.ambiguity_pairs);
    c.seed = j.value("seed", d.seed);
}

FramePair generate_sample(const GeneratorConfig& cfg, std::size_t index)
{
    Rng rng(derive_seed(cfg.seed, index, 0x64617461ULL));
    const auto g = static_cast<Gesture>(static_cast<int>(index % kNumClasses));
    RenderParams rp;
    rp.placement.dx = rng.uniform(-cfg.jitter_translation, cfg.jitter_translation);
    rp.placement.dy = rng.uniform(-cfg.jitter_translation, cfg.jitter_translation);
    rp.placement.scale = 1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale);
    rp.distance = rng.uniform(cfg.hand_distance_min, cfg.hand_distance_max);
    rp.hand_temp = rng.normal(cfg.hand_temp_mean, cfg.hand_temp_std);
    return render(g, cfg, rp, &rng);
}

Dataset generate_dataset(const GeneratorConfig& cfg)
{
    cfg.validate();
    Dataset d;
    const std::size_t n = static_cast<std::size_t>(cfg.samples_per_class) * kNumClasses;
    d.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        d.samples.push_back(generate_sample(cfg, i));
    return d;
}

Frame thermal_template(Gesture g, const GeneratorConfig& cfg)
{
    return render(g, cfg, nominal(cfg), nullptr).thermal;
}

Frame depth_template(Gesture g, const GeneratorConfig& cfg)
{
    return render(g, cfg, nominal(cfg), nullptr).depth;
}

// ---------------------------------------------------------------------------
// FGD1

namespace {
constexpr std::string_view kDatasetMagic = "FGD1";
constexpr std::size_t kFramePixels = kFrameSize * kFrameSize;
constexpr std::size_t kRecordBytes = 1 + 2 * kFramePixels * sizeof(float);
} // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset)
{
    io::ByteWriter w;
    w.put_bytes(kDatasetMagic);
    w.put(static_cast<std::uint32_t>(dataset.size()));
    for (const auto& s : dataset.samples) {
        if (s.label < 0 || s.label >= kNumClasses)
            throw LabelRangeError("label " + std::to_string(s.label) + " outside [0, 6]");
        w.put(static_cast<std::uint8_t>(s.label));
        for (std::size_t i = 0; i < kFramePixels; ++i)
            w.put(s.thermal.data()[i]);
        for (std::size_t i = 0; i < kFramePixels; ++i)
            w.put(s.depth.data()[i]);
    }
    return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes)
{
    io::ByteReader r(bytes, "FGD1 dataset");
    if (r.get_bytes(kDatasetMagic.size()) != kDatasetMagic)
        throw BadMagicError("not an FGD1 dataset (bad magic)");
    const auto count = r.get<std::uint32_t>();
    r.require(static_cast<std::size_t>(count) * kRecordBytes);
    Dataset d;
    d.samples.resize(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        auto& s = d.samples[n];
        s.label = r.get<std::uint8_t>();
        if (s.label >= kNumClasses)
            throw LabelRangeError("sample " + std::to_string(n) + " has label " + std::to_string(s.label) +
                                  " outside [0, 6]");
        for (std::size_t i = 0; i < kFramePixels; ++i)
            s.thermal.data()[i] = r.get<float>();
        for (std::size_t i = 0; i < kFramePixels; ++i)
            s.depth.data()[i] = r.get<float>();
    }
    if (r.remaining() != 0)
        throw FormatError("FGD1 dataset has " + std::to_string(r.remaining()) + " trailing bytes");
    return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path)
{
    const auto bytes = encode_dataset(dataset);
    io::write_file_atomic(path, bytes);
}

Dataset load_dataset(const std::filesystem::path& path)
{
    const auto bytes = io::read_file(path);
    return decode_dataset(bytes);
}

// ---------------------------------------------------------------------------
// Normalization

NormalizationStats compute_normalization(const Dataset& dataset, std::span<const std::size_t> indices)
{
    if (indices.empty())
        throw ConfigError("cannot compute normalization over an empty subset");
    std::array<double, 2> sum{}, sq{};
    for (std::size_t idx : indices) {
        const auto& s = dataset.samples.at(idx);
        sum[0] += s.thermal.cast<double>().sum();
        sum[1] += s.depth.cast<double>().sum();
    }
    const double count = static_cast<double>(indices.size() * kFramePixels);
    const std::array<double, 2> mean{sum[0] / count, sum[1] / count};
    for (std::size_t idx : indices) {
        const auto& s = dataset.samples[idx];
        sq[0] += (s.thermal.cast<double>().array() - mean[0]).square().sum();
        sq[1] += (s.depth.cast<double>().array() - mean[1]).square().sum();
    }
    NormalizationStats st;
    for (std::size_t c = 0; c < 2; ++c) {
        st.mean.push_back(mean[c]);
        st.std.push_back(std::max(std::sqrt(sq[c] / count), 1e-6));
    }
    return st;
}

NormalizationStats compute_normalization(const Dataset& dataset)
{
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = i;
    return compute_normalization(dataset, all);
}

NormalizationStats select_channels(const NormalizationStats& stats, std::span<const Index> channels)
{
    NormalizationStats out;
    for (Index c : channels) {
        out.mean.push_back(stats.mean.at(static_cast<std::size_t>(c)));
        out.std.push_back(stats.std.at(static_cast<std::size_t>(c)));
    }
    return out;
}

namespace {
void fill_input(const FramePair& frame, const NormalizationStats& stats, std::span<const Index> channels, double* dst)
{
    const Index cin = static_cast<Index>(channels.size());
    if (stats.mean.size() != channels.size() || stats.std.size() != channels.size())
        throw ShapeError("normalization stats cover " + std::to_string(stats.mean.size()) + " channels, need " +
                         std::to_string(channels.size()));
    for (Index k = 0; k < cin; ++k) {
        const Index ch = channels[static_cast<std::size_t>(k)];
        const Frame& f = ch == 0 ? frame.thermal : frame.depth;
        const double m = stats.mean[static_cast<std::size_t>(k)], sd = stats.std[static_cast<std::size_t>(k)];
        for (std::size_t p = 0; p < kFramePixels; ++p)
            dst[static_cast<Index>(p) * cin + k] = (static_cast<double>(f.data()[p]) - m) / sd;
    }
}
} // namespace

TensorD model_input(const FramePair& frame, const NormalizationStats& stats, std::span<const Index> channels)
{
    TensorD t({kFrameSize, kFrameSize, static_cast<Index>(channels.size())});
    fill_input(frame, stats, channels, t.data());
    return t;
}

TensorD apply_normalization(const FramePair& frame, const NormalizationStats& stats)
{
    static constexpr std::array<Index, 2> both{0, 1};
    return model_input(frame, stats, both);
}

TensorD make_batch(const Dataset& dataset, std::span<const std::size_t> indices, const NormalizationStats& stats,
                   std::span<const Index> channels)
{
    const Index cin = static_cast<Index>(channels.size());
    TensorD t({static_cast<Index>(indices.size()), kFrameSize, kFrameSize, cin});
    const Index stride = kFrameSize * kFrameSize * cin;
    for (std::size_t i = 0; i < indices.size(); ++i)
        fill_input(dataset.samples.at(indices[i]), stats, channels, t.data() + static_cast<Index>(i) * stride);
    return t;
}

FramePair hflip(const FramePair& frame)
{
    FramePair out;
    out.label = frame.label;
    out.thermal = frame.thermal.rowwise().reverse();
    out.depth = frame.depth.rowwise().reverse();
    return out;
}

FramePair augment_hflip(const FramePair& frame, Rng& rng, double probability)
{
    return rng.bernoulli(probability) ? hflip(frame) : frame;
}

} // namespace fusion
