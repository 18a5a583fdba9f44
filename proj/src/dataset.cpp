#include "transporter/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <thread>

#include "transporter/error.hpp"
#include "transporter/oracle.hpp"
#include "transporter/ring_encoder.hpp"
#include "transporter/rng.hpp"

namespace transporter::dataset {

std::string to_string(EncoderPath p)
{
    return p == EncoderPath::oracle ? "oracle" : "ring";
}

EncoderPath parse_encoder_path(const std::string& s)
{
    if (s == "oracle")
        return EncoderPath::oracle;
    if (s == "ring")
        return EncoderPath::ring;
    throw ConfigError("encoder path must be 'oracle' or 'ring', got '" + s + "'");
}

std::string to_string(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        break;
    }
    return "test";
}

void DatasetSpec::validate() const
{
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("dataset split sizes must be > 0");
    if (photons_per_sample < 0)
        throw ConfigError("photons_per_sample must be >= 0");
    if (!(background_fraction >= 0.0 && background_fraction <= 1.0))
        throw ConfigError("background_fraction must lie in [0, 1]");
    if (!(lifetime_min_ns > 0.0) || !(lifetime_min_ns < lifetime_max_ns) || !std::isfinite(lifetime_max_ns))
        throw ConfigError("lifetime range must satisfy 0 < low < high");
    if (n_bins < 2)
        throw ConfigError("n_bins must be >= 2");
    if (!(laser_period_ns > 0.0) || !std::isfinite(laser_period_ns))
        throw ConfigError("laser period must be > 0 ns");
    if (detector) {
        photon::SpadModel{detector->pdp, detector->dead_time_ns}.validate();
        if (!(detector->photons_per_period > 0.0) || !std::isfinite(detector->photons_per_period))
            throw ConfigError("detector photons_per_period must be > 0");
        if (photons_per_sample > 0 && detector->pdp <= 0.0)
            throw ConfigError("detector pdp = 0 can never reach photons_per_sample detections");
    }
}

namespace {

template <class T>
T get_field(const nlohmann::json& j, const char* key)
{
    try {
        return j.at(key).get<T>();
    }
    catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace

DatasetSpec spec_from_json(const nlohmann::json& j)
{
    if (j.is_null())
        return {};
    if (!j.is_object())
        throw ConfigError("dataset config must be a JSON object");
    static const char* const kKeys[] = {"n_train",        "n_val",         "n_test",   "photons_per_sample",
                                        "background_fraction", "background_convention", "lifetime_range",
                                        "encoder_path",   "seed",          "n_bins",   "laser_period_ns",
                                        "detector"};
    for (const auto& [key, _] : j.items())
        if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; })
            == std::end(kKeys))
            throw ConfigError("unknown dataset config key '" + key + "'");

    DatasetSpec s;
    if (j.contains("n_train"))
        s.n_train = get_field<int>(j, "n_train");
    if (j.contains("n_val"))
        s.n_val = get_field<int>(j, "n_val");
    if (j.contains("n_test"))
        s.n_test = get_field<int>(j, "n_test");
    if (j.contains("photons_per_sample"))
        s.photons_per_sample = get_field<int>(j, "photons_per_sample");
    if (j.contains("background_fraction"))
        s.background_fraction = get_field<double>(j, "background_fraction");
    if (j.contains("background_convention") && get_field<std::string>(j, "background_convention") != "photon_fraction")
        throw ConfigError("background_convention: only 'photon_fraction' is implemented");
    if (j.contains("lifetime_range")) {
        const auto r = get_field<std::vector<double>>(j, "lifetime_range");
        if (r.size() != 2)
            throw ConfigError("lifetime_range must be [low, high]");
        s.lifetime_min_ns = r[0];
        s.lifetime_max_ns = r[1];
    }
    if (j.contains("encoder_path"))
        s.encoder_path = parse_encoder_path(get_field<std::string>(j, "encoder_path"));
    if (j.contains("seed"))
        s.seed = get_field<std::uint64_t>(j, "seed");
    if (j.contains("n_bins"))
        s.n_bins = get_field<int>(j, "n_bins");
    if (j.contains("laser_period_ns"))
        s.laser_period_ns = get_field<double>(j, "laser_period_ns");
    if (j.contains("detector") && !j.at("detector").is_null()) {
        const auto& d = j.at("detector");
        if (!d.is_object())
            throw ConfigError("detector must be an object");
        DetectorStage det;
        for (const auto& [key, _] : d.items()) {
            if (key == "pdp")
                det.pdp = get_field<double>(d, "pdp");
            else if (key == "dead_time_ns")
                det.dead_time_ns = get_field<double>(d, "dead_time_ns");
            else if (key == "photons_per_period")
                det.photons_per_period = get_field<double>(d, "photons_per_period");
            else
                throw ConfigError("unknown detector config key '" + key + "'");
        }
        s.detector = det;
    }
    s.validate();
    return s;
}

nlohmann::ordered_json spec_to_json(const DatasetSpec& s)
{
    nlohmann::ordered_json j;
    j["n_train"] = s.n_train;
    j["n_val"] = s.n_val;
    j["n_test"] = s.n_test;
    j["photons_per_sample"] = s.photons_per_sample;
    j["background_fraction"] = s.background_fraction;
    j["background_convention"] = "photon_fraction";
    j["lifetime_range"] = {s.lifetime_min_ns, s.lifetime_max_ns};
    j["encoder_path"] = to_string(s.encoder_path);
    j["seed"] = s.seed;
    j["n_bins"] = s.n_bins;
    j["laser_period_ns"] = s.laser_period_ns;
    if (s.detector) {
        j["detector"] = {{"pdp", s.detector->pdp},
                         {"dead_time_ns", s.detector->dead_time_ns},
                         {"photons_per_period", s.detector->photons_per_period}};
    }
    else {
        j["detector"] = nullptr;
    }
    return j;
}

std::uint64_t sample_seed(const DatasetSpec& spec, Split split, std::size_t index)
{
    return derive_seed(spec.seed, "dataset/" + to_string(split), index);
}

namespace {

SampleDraw draw_direct(const DatasetSpec& spec, SampleDraw d, Rng& rng)
{
    const double period = spec.laser_period_ns;
    const auto n = static_cast<std::size_t>(spec.photons_per_sample);
    d.n_periods = std::max<std::int64_t>(1, spec.photons_per_sample);
    const double end = period * static_cast<double>(d.n_periods);
    d.detections.reserve(n);
    // One detected photon per laser period.
    for (std::size_t i = 0; i < n; ++i) {
        const bool background = rng.uniform() < spec.background_fraction;
        const double ph = background ? rng.uniform() * period
                                     : photon::truncated_exponential_phase(d.lifetime_ns, period, rng);
        double t = static_cast<double>(i) * period + ph;
        if (t >= end)
            t = std::nextafter(end, 0.0);
        d.detections.push_back({t, ph});
    }
    return d;
}

SampleDraw draw_detected(const DatasetSpec& spec, SampleDraw d)
{
    const DetectorStage& det = *spec.detector;
    const auto target = static_cast<std::size_t>(spec.photons_per_sample);
    if (target == 0)
        return d;
    const double rate = det.photons_per_period * det.pdp;
    auto periods = static_cast<std::int64_t>(std::ceil(2.0 * static_cast<double>(target) / rate)) + 16;
    for (std::uint64_t attempt = 0; attempt < 24; ++attempt, periods *= 2) {
        const photon::LaserConfig laser{spec.laser_period_ns, periods};
        const photon::DecaySource src{d.lifetime_ns, spec.background_fraction, det.photons_per_period};
        const auto arrivals = photon::gen_arrivals(laser, src, derive_seed(d.seed, "arrivals", attempt));
        auto found = photon::detect(arrivals, {det.pdp, det.dead_time_ns}, laser,
                                    derive_seed(d.seed, "detect", attempt));
        if (found.size() >= target) {
            found.resize(target);
            d.detections = std::move(found);
            d.n_periods = static_cast<std::int64_t>(std::floor(d.detections.back().t_abs / spec.laser_period_ns)) + 1;
            d.n_periods = std::min(d.n_periods, periods);
            return d;
        }
    }
    throw ConfigError("detector stage cannot reach photons_per_sample detections");
}

}  // namespace

SampleDraw draw_sample(const DatasetSpec& spec, Split split, std::size_t index)
{
    SampleDraw d;
    d.seed = sample_seed(spec, split, index);
    Rng rng(d.seed);
    d.lifetime_ns = rng.uniform(spec.lifetime_min_ns, spec.lifetime_max_ns);
    if (spec.detector)
        return draw_detected(spec, std::move(d));
    return draw_direct(spec, std::move(d), rng);
}

SpikeTrain encode_draw(const DatasetSpec& spec, const SampleDraw& draw, EncoderPath path,
                       std::optional<double> ring_clock_hz)
{
    if (path == EncoderPath::oracle)
        return oracle::encode_reference(draw.detections, spec.n_bins, spec.laser_period_ns);

    ring::EncoderConfig cfg;
    cfg.n_stages = spec.n_bins;
    cfg.laser = {spec.laser_period_ns, draw.n_periods};
    cfg.ring_clock_hz = ring_clock_hz.value_or(ring::EncoderConfig::ideal_clock_hz(spec.n_bins, spec.laser_period_ns));
    cfg.stopper = ring::Stopper::disabled;
    const ring::RingState state = ring::encode(draw.detections, cfg);
    return ring::aligned_readout(state, cfg);
}

FlimSample make_sample(const DatasetSpec& spec, Split split, std::size_t index)
{
    const SampleDraw draw = draw_sample(spec, split, index);
    FlimSample s;
    s.spikes = encode_draw(spec, draw, spec.encoder_path);
    s.lifetime_ns = draw.lifetime_ns;
    s.meta = {static_cast<std::uint32_t>(spec.photons_per_sample), spec.background_fraction, draw.seed};
    return s;
}

std::vector<FlimSample> generate_split(const DatasetSpec& spec, Split split, int threads)
{
    spec.validate();
    const int n = split == Split::train ? spec.n_train : split == Split::val ? spec.n_val : spec.n_test;
    std::vector<FlimSample> out(static_cast<std::size_t>(n));
    const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, std::max(1, n)));
    auto work = [&](std::size_t w) {
        for (std::size_t i = w; i < out.size(); i += workers)
            out[i] = make_sample(spec, split, i);
    };
    if (workers == 1) {
        work(0);
    }
    else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < workers; ++w)
            pool.emplace_back(work, w);
        work(0);
    }
    return out;
}

GenerateResult generate(const DatasetSpec& spec, int threads)
{
    spec.validate();
    GenerateResult r;
    if (spec.photons_per_sample == 0)
        r.warnings.push_back("photons_per_sample = 0: every spike train is all-zero");
    r.data.spec = spec;
    r.data.train = generate_split(spec, Split::train, threads);
    r.data.val = generate_split(spec, Split::val, threads);
    r.data.test = generate_split(spec, Split::test, threads);
    return r;
}

namespace {

constexpr const char* kFormat = "transporter-flim-dataset";

std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

}  // namespace

void save(const Dataset& d, std::ostream& out)
{
    nlohmann::ordered_json h;
    h["format"] = kFormat;
    h["version"] = 1;
    h["spec"] = spec_to_json(d.spec);
    h["counts"] = {{"train", d.train.size()}, {"val", d.val.size()}, {"test", d.test.size()}};
    h["n_bits"] = d.spec.n_bins;
    h["record"] = "lifetime_ns<TAB>bits";
    out << h.dump() << '\n';
    std::string line;
    for (const auto* split : {&d.train, &d.val, &d.test}) {
        for (const FlimSample& s : *split) {
            line = format_double(s.lifetime_ns);
            line += '\t';
            line += s.spikes.to_string();
            line += '\n';
            out << line;
        }
    }
}

void save(const Dataset& d, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    save(d, out);
    if (!out)
        throw std::runtime_error("write to " + path.string() + " failed");
}

Dataset load(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("dataset: empty file (missing header)");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: bad header: ") + e.what());
    }
    if (!h.is_object() || h.value("format", "") != kFormat)
        throw FormatError("dataset: not a transporter dataset file");
    if (h.value("version", 0) != 1)
        throw FormatError("dataset: unsupported version " + h.value("version", nlohmann::json()).dump());

    Dataset d;
    std::size_t counts[3];
    int n_bits = 0;
    try {
        d.spec = spec_from_json(h.at("spec"));
        counts[0] = h.at("counts").at("train").get<std::size_t>();
        counts[1] = h.at("counts").at("val").get<std::size_t>();
        counts[2] = h.at("counts").at("test").get<std::size_t>();
        n_bits = h.at("n_bits").get<int>();
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: bad header field: ") + e.what());
    }
    catch (const ConfigError& e) {
        throw FormatError(std::string("dataset: header spec invalid: ") + e.what());
    }
    if (n_bits != d.spec.n_bins)
        throw FormatError("dataset: n_bits disagrees with spec n_bins");

    const Split splits[3] = {Split::train, Split::val, Split::test};
    std::vector<FlimSample>* targets[3] = {&d.train, &d.val, &d.test};
    std::size_t record = 0;
    const std::size_t total = counts[0] + counts[1] + counts[2];
    for (int k = 0; k < 3; ++k) {
        targets[k]->reserve(counts[k]);
        for (std::size_t i = 0; i < counts[k]; ++i, ++record) {
            if (!std::getline(in, line))
                throw FormatError("dataset: truncated, expected " + std::to_string(total) + " records", record);
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw FormatError("dataset: missing tab separator", record);
            FlimSample s;
            const char* first = line.data();
            const auto r = std::from_chars(first, first + tab, s.lifetime_ns);
            if (r.ec != std::errc{} || r.ptr != first + tab)
                throw FormatError("dataset: bad lifetime field", record);
            try {
                s.spikes = SpikeTrain::from_string(std::string_view(line).substr(tab + 1));
            }
            catch (const FormatError& e) {
                throw FormatError(std::string("dataset: ") + e.what(), record);
            }
            if (static_cast<int>(s.spikes.size()) != n_bits)
                throw FormatError("dataset: bit string has " + std::to_string(s.spikes.size()) + " bits, expected "
                                      + std::to_string(n_bits),
                                  record);
            s.meta = {static_cast<std::uint32_t>(d.spec.photons_per_sample), d.spec.background_fraction,
                      sample_seed(d.spec, splits[k], i)};
            targets[k]->push_back(std::move(s));
        }
    }
    while (std::getline(in, line)) {
        if (!line.empty())
            throw FormatError("dataset: unexpected trailing record", record);
        ++record;
    }
    return d;
}

Dataset load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open dataset " + path.string());
    return load(in);
}

}  // namespace transporter::dataset
