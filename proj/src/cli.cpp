#include "transporter/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "transporter/error.hpp"
#include "transporter/oracle.hpp"
#include "transporter/photon_sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace transporter::cli {

std::string sha256_bytes(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i)
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return hex.str();
}

std::string sha256_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_bytes(buf.str());
}

std::string fmt(double x)
{
    // shortest round-trip form, positional notation for everyday magnitudes
    char buf[512];
    const double a = std::abs(x);
    const bool positional = a == 0.0 || (a >= 1e-4 && a < 1e16);
    const auto r = positional ? std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed)
                              : std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

// ---------------------------------------------------------------- helpers

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what)
{
    if (j.is_null())
        return;
    if (!j.is_object())
        throw ConfigError(what + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return key == k; }))
            throw ConfigError("unknown " + what + " key '" + key + "'");
}

template <class T>
void read_field(const json& j, const char* key, T& out)
{
    if (j.is_null() || !j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    }
    catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); }))
        return json::object();
    try {
        return json::parse(text);
    }
    catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out)
        throw std::runtime_error("write to " + path.string() + " failed");
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string absolute_path(const std::string& p)
{
    if (p.empty())
        return p;
    return fs::absolute(fs::path(p)).lexically_normal().string();
}

struct RunRecord {
    std::string command;
    ordered_json config;
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<std::string> inputs;  // absolute paths
    std::vector<std::string> outputs;  // names relative to out_dir
};

void write_manifest(const fs::path& out_dir, const RunRecord& r, double seconds, const std::string& started)
{
    ordered_json m;
    m["tool"] = "transporter";
    m["tool_version"] = kToolVersion;
    m["command"] = r.command;
    m["config"] = r.config;
    m["master_seed"] = r.seed;
    m["threads"] = r.threads;
    m["reduction_order"] = "per-sample results combined in sample index order";
    ordered_json inputs = ordered_json::object();
    for (const auto& p : r.inputs)
        inputs[p] = sha256_file(p);
    m["inputs"] = inputs;
    ordered_json outputs = ordered_json::object();
    for (const auto& name : r.outputs)
        outputs[name] = sha256_file(out_dir / name);
    m["outputs"] = outputs;
    m["started_utc"] = started;
    m["wall_clock_s"] = seconds;
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

template <class Body>
std::vector<std::string> execute(const fs::path& out_dir, Body&& body)
{
    fs::create_directories(out_dir);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec = body();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, rec, secs, started);
    return rec.outputs;
}

std::optional<std::uint64_t> env_seed()
{
    const char* s = std::getenv("TRANSPORTER_SEED");
    if (!s || !*s)
        return std::nullopt;
    std::uint64_t v = 0;
    const char* end = s + std::strlen(s);
    const auto r = std::from_chars(s, end, v);
    if (r.ec != std::errc{} || r.ptr != end)
        throw ConfigError(std::string("TRANSPORTER_SEED is not an unsigned integer: '") + s + "'");
    return v;
}

// --seed beats TRANSPORTER_SEED beats the config file.
void apply_seed(std::uint64_t& seed, const std::optional<std::uint64_t>& flag)
{
    if (flag)
        seed = *flag;
    else if (auto e = env_seed())
        seed = *e;
}

ordered_json lif_to_json(const snn::LifParams& p)
{
    return {{"beta", p.beta}, {"v_thre", p.v_thre}, {"reset", snn::to_string(p.reset)}};
}

}  // namespace

// ---------------------------------------------------------------- options <-> json

ordered_json to_json(const GenDatasetOptions& o)
{
    return {{"spec", dataset::spec_to_json(o.spec)}, {"threads", o.threads}};
}

GenDatasetOptions gen_dataset_from_json(const json& j)
{
    check_keys(j, {"spec", "threads"}, "gen-dataset");
    GenDatasetOptions o;
    o.spec = dataset::spec_from_json(j.value("spec", json::object()));
    read_field(j, "threads", o.threads);
    return o;
}

ordered_json to_json(const RingDemoOptions& o)
{
    return {{"source_period_ns", o.source_period_ns}, {"laser_period_ns", o.laser_period_ns},
            {"ring_clock_hz", o.ring_clock_hz},       {"duration_ns", o.duration_ns},
            {"n_stages", o.n_stages},                 {"stopper", ring::to_string(o.stopper)},
            {"readout_clock_hz", o.readout_clock_hz}};
}

RingDemoOptions ring_demo_from_json(const json& j)
{
    check_keys(j,
               {"source_period_ns", "laser_period_ns", "ring_clock_hz", "duration_ns", "n_stages", "stopper",
                "readout_clock_hz"},
               "ring-demo");
    RingDemoOptions o;
    read_field(j, "source_period_ns", o.source_period_ns);
    read_field(j, "laser_period_ns", o.laser_period_ns);
    read_field(j, "ring_clock_hz", o.ring_clock_hz);
    read_field(j, "duration_ns", o.duration_ns);
    read_field(j, "n_stages", o.n_stages);
    std::string stopper = ring::to_string(o.stopper);
    read_field(j, "stopper", stopper);
    o.stopper = ring::parse_stopper(stopper);
    read_field(j, "readout_clock_hz", o.readout_clock_hz);
    return o;
}

ordered_json to_json(const EncodeOptions& o)
{
    ordered_json j{{"lifetime_ns", o.lifetime_ns},
                   {"background_fraction", o.background_fraction},
                   {"mean_photons_per_period", o.mean_photons_per_period},
                   {"n_periods", o.n_periods},
                   {"pdp", o.pdp},
                   {"dead_time_ns", o.dead_time_ns},
                   {"n_stages", o.n_stages},
                   {"laser_period_ns", o.laser_period_ns}};
    j["ring_clock_hz"] = o.ring_clock_hz ? json(*o.ring_clock_hz) : json(nullptr);
    j["stopper"] = ring::to_string(o.stopper);
    j["readout_clock_hz"] = o.readout_clock_hz;
    j["seed"] = o.seed;
    j["oracle"] = o.oracle;
    return j;
}

EncodeOptions encode_from_json(const json& j)
{
    check_keys(j,
               {"lifetime_ns", "background_fraction", "mean_photons_per_period", "n_periods", "pdp", "dead_time_ns",
                "n_stages", "laser_period_ns", "ring_clock_hz", "stopper", "readout_clock_hz", "seed", "oracle"},
               "encode");
    EncodeOptions o;
    read_field(j, "lifetime_ns", o.lifetime_ns);
    read_field(j, "background_fraction", o.background_fraction);
    read_field(j, "mean_photons_per_period", o.mean_photons_per_period);
    read_field(j, "n_periods", o.n_periods);
    read_field(j, "pdp", o.pdp);
    read_field(j, "dead_time_ns", o.dead_time_ns);
    read_field(j, "n_stages", o.n_stages);
    read_field(j, "laser_period_ns", o.laser_period_ns);
    if (j.contains("ring_clock_hz") && !j.at("ring_clock_hz").is_null()) {
        double hz = 0.0;
        read_field(j, "ring_clock_hz", hz);
        o.ring_clock_hz = hz;
    }
    std::string stopper = ring::to_string(o.stopper);
    read_field(j, "stopper", stopper);
    o.stopper = ring::parse_stopper(stopper);
    read_field(j, "readout_clock_hz", o.readout_clock_hz);
    read_field(j, "seed", o.seed);
    read_field(j, "oracle", o.oracle);
    return o;
}

snn::TrainConfig train_config_from_json(const json& j)
{
    check_keys(j,
               {"learning_rate", "batch_size", "epochs", "patience", "surrogate_slope", "seed", "loss", "threads",
                "n_hidden", "lif", "beta_out"},
               "train");
    snn::TrainConfig c;
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "epochs", c.epochs);
    read_field(j, "patience", c.patience);
    read_field(j, "surrogate_slope", c.surrogate_slope);
    read_field(j, "seed", c.seed);
    std::string loss = "mse_normalized";
    read_field(j, "loss", loss);
    if (loss != "mse_normalized")
        throw ConfigError("loss must be 'mse_normalized', got '" + loss + "'");
    read_field(j, "threads", c.threads);
    read_field(j, "n_hidden", c.n_hidden);
    if (j.contains("lif")) {
        const json& l = j.at("lif");
        check_keys(l, {"beta", "v_thre", "reset"}, "lif");
        read_field(l, "beta", c.lif.beta);
        read_field(l, "v_thre", c.lif.v_thre);
        std::string reset = snn::to_string(c.lif.reset);
        read_field(l, "reset", reset);
        c.lif.reset = snn::parse_reset(reset);
    }
    read_field(j, "beta_out", c.beta_out);
    c.validate();
    return c;
}

ordered_json to_json(const TrainOptions& o)
{
    const snn::TrainConfig& c = o.train;
    return {{"dataset", o.dataset_path},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"patience", c.patience},
            {"surrogate_slope", c.surrogate_slope},
            {"seed", c.seed},
            {"loss", "mse_normalized"},
            {"threads", c.threads},
            {"n_hidden", c.n_hidden},
            {"lif", lif_to_json(c.lif)},
            {"beta_out", c.beta_out}};
}

TrainOptions train_from_json(const json& j)
{
    if (!j.is_object())
        throw ConfigError("train config must be a JSON object");
    TrainOptions o;
    json rest = j;
    if (rest.contains("dataset")) {
        read_field(j, "dataset", o.dataset_path);
        rest.erase("dataset");
    }
    o.train = train_config_from_json(rest);
    return o;
}

ordered_json to_json(const EvalOptions& o)
{
    return {{"model", o.model_path}, {"dataset", o.dataset_path}, {"split", o.split}};
}

EvalOptions eval_from_json(const json& j)
{
    check_keys(j, {"model", "dataset", "split"}, "eval");
    EvalOptions o;
    read_field(j, "model", o.model_path);
    read_field(j, "dataset", o.dataset_path);
    read_field(j, "split", o.split);
    return o;
}

ordered_json to_json(const CornersOptions& o)
{
    ordered_json j{{"freqs_hz", o.freqs_hz},
                   {"laser_period_ns", o.laser_period_ns},
                   {"n_periods", o.n_periods},
                   {"n_stages", o.n_stages},
                   {"model", o.model_path}};
    j["dataset"] = o.dataset ? ordered_json(dataset::spec_to_json(*o.dataset)) : ordered_json(nullptr);
    return j;
}

CornersOptions corners_from_json(const json& j)
{
    check_keys(j, {"freqs_hz", "laser_period_ns", "n_periods", "n_stages", "model", "dataset"}, "corners");
    CornersOptions o;
    read_field(j, "freqs_hz", o.freqs_hz);
    read_field(j, "laser_period_ns", o.laser_period_ns);
    read_field(j, "n_periods", o.n_periods);
    read_field(j, "n_stages", o.n_stages);
    read_field(j, "model", o.model_path);
    if (j.contains("dataset") && !j.at("dataset").is_null())
        o.dataset = dataset::spec_from_json(j.at("dataset"));
    return o;
}

// ---------------------------------------------------------------- commands

std::vector<std::string> cmd_gen_dataset(const GenDatasetOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        const auto r = dataset::generate(o.spec, o.threads);
        for (const auto& w : r.warnings)
            log << "warning: " << w << '\n';
        dataset::save(r.data, out_dir / "dataset.tsv");
        log << "wrote " << r.data.train.size() << " train / " << r.data.val.size() << " val / "
            << r.data.test.size() << " test samples to " << (out_dir / "dataset.tsv").string() << '\n';
        return RunRecord{"gen-dataset", to_json(o), o.spec.seed, o.threads, {}, {"dataset.tsv"}};
    });
}

std::vector<std::string> cmd_ring_demo(const RingDemoOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        ring::EncoderConfig cfg;
        cfg.n_stages = o.n_stages;
        cfg.ring_clock_hz = o.ring_clock_hz;
        cfg.stopper = o.stopper;
        if (!(o.laser_period_ns > 0.0) || !(o.duration_ns > 0.0))
            throw ConfigError("laser period and duration must be > 0");
        cfg.laser = {o.laser_period_ns,
                     std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(o.duration_ns / o.laser_period_ns)))};
        cfg.validate();

        const auto arrivals = photon::gen_periodic_arrivals(o.source_period_ns, cfg.laser, o.duration_ns);
        const auto det = photon::detect(arrivals, {1.0, 0.0}, cfg.laser, 0);
        std::vector<ring::TickTrace> trace;
        ring::EncodeStats stats;
        const ring::RingState state = ring::encode_traced(det, cfg, trace, &stats);

        std::ostringstream csv;
        csv << "tick,time_ns,period,tick_in_period,detections,accepted,injected,set_bits,photon_count,"
               "injection_enabled,stages\n";
        for (const auto& t : trace)
            csv << t.tick << ',' << fmt(t.time_ns) << ',' << t.period << ',' << t.tick_in_period << ','
                << t.detections << ',' << t.accepted << ',' << (t.injected ? 1 : 0) << ',' << t.set_bits << ','
                << t.photon_count << ',' << (t.injection_enabled ? 1 : 0) << ',' << t.stages << '\n';
        write_text(out_dir / "ring_trace.csv", csv.str());

        const ring::Readout r = ring::readout(state, o.readout_clock_hz);
        ring::SpikeTrainRecord rec;
        rec.train = r.train;
        rec.n_stages = cfg.n_stages;
        rec.laser_period_ns = cfg.laser.period_ns;
        rec.ring_clock_hz = cfg.ring_clock_hz;
        rec.stopper = cfg.stopper;
        rec.photon_count = state.photon_count;
        rec.phase_offset = ring::phase_offset(state, cfg);
        rec.readout_start_stage = r.start_stage;
        write_text(out_dir / "readout.txt", ring::serialize(rec));

        std::vector<int> pos;
        for (std::size_t i = 0; i < r.train.size(); ++i)
            if (r.train[i])
                pos.push_back(static_cast<int>(i));
        log << "photons " << arrivals.size() << ", injected " << stats.detections_accepted << ", blocked by stopper "
            << stats.detections_blocked << ", lost to gating " << stats.detections_lost << '\n';
        log << "readout " << r.train.to_string() << " (" << fmt(r.duration_ns) << " ns at "
            << fmt(o.readout_clock_hz) << " Hz)\n";
        log << "set positions:";
        for (int p : pos)
            log << ' ' << p;
        log << '\n';
        return RunRecord{"ring-demo", to_json(o), 0, 1, {}, {"ring_trace.csv", "readout.txt"}};
    });
}

std::vector<std::string> cmd_encode(const EncodeOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        ring::EncoderConfig cfg;
        cfg.n_stages = o.n_stages;
        cfg.laser = {o.laser_period_ns, o.n_periods};
        cfg.ring_clock_hz = o.ring_clock_hz.value_or(ring::EncoderConfig::ideal_clock_hz(o.n_stages, o.laser_period_ns));
        cfg.stopper = o.stopper;
        cfg.validate();

        const auto arrivals = photon::gen_arrivals(
            cfg.laser, {o.lifetime_ns, o.background_fraction, o.mean_photons_per_period}, derive_seed(o.seed, "arrivals"));
        const auto det = photon::detect(arrivals, {o.pdp, o.dead_time_ns}, cfg.laser, derive_seed(o.seed, "detect"));
        const ring::RingState state = ring::encode(det, cfg);
        const ring::Readout r = ring::readout(state, o.readout_clock_hz);

        ring::SpikeTrainRecord rec;
        rec.train = r.train;
        rec.n_stages = cfg.n_stages;
        rec.laser_period_ns = cfg.laser.period_ns;
        rec.ring_clock_hz = cfg.ring_clock_hz;
        rec.stopper = cfg.stopper;
        rec.photon_count = state.photon_count;
        rec.phase_offset = ring::phase_offset(state, cfg);
        rec.readout_start_stage = r.start_stage;
        write_text(out_dir / "spikes.txt", ring::serialize(rec));
        std::vector<std::string> outputs{"spikes.txt"};

        log << "arrivals " << arrivals.size() << ", detections " << det.size() << ", photon_count "
            << state.photon_count << ", phase_offset " << rec.phase_offset << '\n';
        log << "ring    " << ring::aligned_readout(state, cfg).to_string() << '\n';
        if (o.oracle) {
            ring::SpikeTrainRecord ref = rec;
            ref.train = oracle::encode_reference(det, cfg.n_stages, cfg.laser.period_ns);
            ref.phase_offset = 0;
            ref.aligned = true;
            ref.photon_count = static_cast<std::uint32_t>(det.size());
            write_text(out_dir / "oracle.txt", ring::serialize(ref));
            outputs.push_back("oracle.txt");
            const bool same = ring::aligned_readout(state, cfg) == ref.train;
            log << "oracle  " << ref.train.to_string() << '\n';
            log << "oracle match: " << (same ? "yes" : "no") << '\n';
        }
        return RunRecord{"encode", to_json(o), o.seed, 1, {}, outputs};
    });
}

std::vector<std::string> cmd_train(const TrainOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        if (o.dataset_path.empty())
            throw ConfigError("train: no dataset given (config key 'dataset' or --dataset)");
        if (!fs::exists(o.dataset_path))
            throw ConfigError("train: dataset not found: " + o.dataset_path);
        const dataset::Dataset d = dataset::load(fs::path(o.dataset_path));
        log << "training on " << d.train.size() << " samples, validating on " << d.val.size() << '\n';

        std::ostringstream curve;
        curve << "epoch,train_loss,val_loss,val_mape\n";
        const snn::TrainResult r = snn::train_bptt(d.train, d.val, o.train, [&](const snn::EpochRecord& e) {
            curve << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_loss) << ',' << fmt(e.val_mape) << '\n';
            log << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "  val MAPE "
                << e.val_mape << "%  (" << e.seconds << " s)" << std::endl;
        });
        std::ofstream model(out_dir / "model.txt", std::ios::binary);
        snn::save_model(r.model, model);
        model.close();
        write_text(out_dir / "training_curve.csv", curve.str());
        log << "best epoch " << r.best_epoch << ", validation MAPE " << r.history[r.best_epoch - 1].val_mape << "%\n";
        return RunRecord{"train", to_json(o), o.train.seed, o.train.threads, {o.dataset_path},
                         {"model.txt", "training_curve.csv"}};
    });
}

std::vector<std::string> cmd_eval(const EvalOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        std::ifstream mf(o.model_path);
        if (!mf)
            throw ConfigError("eval: cannot open model " + o.model_path);
        const snn::SnnModel model = snn::load_model(mf);
        if (!fs::exists(o.dataset_path))
            throw ConfigError("eval: dataset not found: " + o.dataset_path);
        const dataset::Dataset d = dataset::load(fs::path(o.dataset_path));
        const std::vector<FlimSample>* set = o.split == "test" ? &d.test
                                             : o.split == "val" ? &d.val
                                             : o.split == "train" ? &d.train
                                                                  : nullptr;
        if (!set)
            throw ConfigError("eval: split must be train, val or test");
        if (!set->empty() && static_cast<int>(set->front().spikes.size()) != model.n_steps)
            throw ConfigError("eval: dataset spike trains have " + std::to_string(set->front().spikes.size())
                              + " steps, model expects " + std::to_string(model.n_steps));

        std::ostringstream csv;
        csv << "index,true_ns,predicted_ns,abs_pct_error\n";
        std::vector<double> pred, truth;
        for (std::size_t i = 0; i < set->size(); ++i) {
            const double p = snn::forward(model, (*set)[i].spikes);
            const double t = (*set)[i].lifetime_ns;
            pred.push_back(p);
            truth.push_back(t);
            csv << i << ',' << fmt(t) << ',' << fmt(p) << ',' << fmt(std::abs(p - t) / t * 100.0) << '\n';
        }
        const double m = snn::mape(pred, truth);
        write_text(out_dir / "predictions.csv", csv.str());
        ordered_json metrics{{"split", o.split}, {"n", set->size()}, {"mape_percent", m}};
        write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
        log << "MAPE " << fmt(m) << "% over " << set->size() << " " << o.split << " samples\n";
        return RunRecord{"eval", to_json(o), 0, 1, {o.model_path, o.dataset_path},
                         {"predictions.csv", "metrics.json"}};
    });
}

std::vector<std::string> cmd_corners(const CornersOptions& o, const fs::path& out_dir, std::ostream& log)
{
    return execute(out_dir, [&] {
        if (o.freqs_hz.empty())
            throw ConfigError("corners: no frequencies given");
        std::optional<snn::SnnModel> model;
        if (!o.model_path.empty()) {
            if (!o.dataset)
                throw ConfigError("corners: --model needs a dataset config (--config) to regenerate test samples");
            std::ifstream mf(o.model_path);
            if (!mf)
                throw ConfigError("corners: cannot open model " + o.model_path);
            model = snn::load_model(mf);
        }

        // The test split is re-encoded at the same relative clock mismatch:
        // dataset clock = (f / ideal_f_at_this_period) * ideal_f_for_dataset.
        const double ideal_here = ring::EncoderConfig::ideal_clock_hz(o.n_stages, o.laser_period_ns);
        auto mape_at = [&](double ratio) {
            const dataset::DatasetSpec& spec = *o.dataset;
            const double hz = ratio * ring::EncoderConfig::ideal_clock_hz(spec.n_bins, spec.laser_period_ns);
            std::vector<double> pred, truth;
            for (std::size_t i = 0; i < static_cast<std::size_t>(spec.n_test); ++i) {
                const auto draw = dataset::draw_sample(spec, dataset::Split::test, i);
                pred.push_back(snn::forward(*model, dataset::encode_draw(spec, draw, dataset::EncoderPath::ring, hz)));
                truth.push_back(draw.lifetime_ns);
            }
            return snn::mape(pred, truth);
        };
        const double baseline = model ? mape_at(1.0) : 0.0;

        std::ostringstream csv;
        csv << "freq_hz,ticks_per_period,deficient,suppressed_ns_per_period,min_ticks,max_ticks,total_ticks,mape,"
               "mape_delta\n";
        for (double f : o.freqs_hz) {
            ring::EncoderConfig cfg;
            cfg.n_stages = o.n_stages;
            cfg.laser = {o.laser_period_ns, o.n_periods};
            cfg.ring_clock_hz = f;
            const ring::TickSchedule s = ring::gated_clock(cfg);
            const auto [lo, hi] = std::minmax_element(s.per_period_counts.begin(), s.per_period_counts.end());
            const bool deficient = std::any_of(s.deficient.begin(), s.deficient.end(), [](auto d) { return d != 0; });
            csv << fmt(f) << ',' << s.per_period_counts.front() << ',' << (deficient ? 1 : 0) << ','
                << fmt(s.suppressed_ns_per_period) << ',' << *lo << ',' << *hi << ',' << s.tick_times.size() << ',';
            log << fmt(f / 1e9) << " GHz: " << s.per_period_counts.front() << " ticks/period"
                << (deficient ? " (deficient)" : "") << ", gated " << fmt(s.suppressed_ns_per_period) << " ns";
            if (model) {
                const double m = mape_at(f / ideal_here);
                csv << fmt(m) << ',' << fmt(m - baseline);
                log << ", MAPE " << fmt(m) << "% (delta " << fmt(m - baseline) << ")";
            }
            else {
                csv << ',';
            }
            csv << '\n';
            log << '\n';
        }
        write_text(out_dir / "corners.csv", csv.str());
        std::vector<std::string> inputs;
        if (!o.model_path.empty())
            inputs.push_back(o.model_path);
        return RunRecord{"corners", to_json(o), o.dataset ? o.dataset->seed : 0, 1, inputs, {"corners.csv"}};
    });
}

bool replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream& log)
{
    const json m = read_json_file(manifest_path);
    if (m.value("tool", "") != "transporter")
        throw ConfigError("not a transporter manifest: " + manifest_path.string());
    const std::string command = m.at("command").get<std::string>();
    const json& cfg = m.at("config");

    bool ok = true;
    const json inputs = m.value("inputs", json::object());
    for (const auto& [path, hash] : inputs.items()) {
        const std::string now = sha256_file(path);
        if (now != hash.get<std::string>()) {
            log << "input changed since the recorded run: " << path << '\n';
            ok = false;
        }
    }

    std::ostringstream sink;
    std::vector<std::string> outputs;
    if (command == "gen-dataset")
        outputs = cmd_gen_dataset(gen_dataset_from_json(cfg), out_dir, sink);
    else if (command == "ring-demo")
        outputs = cmd_ring_demo(ring_demo_from_json(cfg), out_dir, sink);
    else if (command == "encode")
        outputs = cmd_encode(encode_from_json(cfg), out_dir, sink);
    else if (command == "train")
        outputs = cmd_train(train_from_json(cfg), out_dir, sink);
    else if (command == "eval")
        outputs = cmd_eval(eval_from_json(cfg), out_dir, sink);
    else if (command == "corners")
        outputs = cmd_corners(corners_from_json(cfg), out_dir, sink);
    else
        throw ConfigError("manifest names unknown command '" + command + "'");

    for (const auto& [name, hash] : m.at("outputs").items()) {
        const fs::path p = out_dir / name;
        const std::string now = fs::exists(p) ? sha256_file(p) : std::string("<missing>");
        const bool same = now == hash.get<std::string>();
        log << (same ? "identical " : "DIFFERS   ") << name << "  " << now << '\n';
        ok = ok && same;
    }
    return ok;
}

// ---------------------------------------------------------------- argv front end

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Transporter: SPAD ring spike encoder and SNN lifetime estimator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string out_dir = "out";
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int threads = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--out-dir", out_dir, "Directory for outputs and manifest.json");
    };

    auto* gen = app.add_subcommand("gen-dataset", "Generate a FLIM dataset");
    common(gen);
    gen->add_option("--config", config_path, "Dataset config (JSON)");
    gen->add_option("--seed", seed, "Master seed (overrides config and TRANSPORTER_SEED)");
    gen->add_option("--threads", threads, "Worker threads");
    std::string encoder;
    gen->add_option("--encoder", encoder, "Encoder path")->check(CLI::IsMember({"ring", "oracle"}));

    RingDemoOptions demo;
    std::string demo_stopper = "off";
    auto* ringd = app.add_subcommand("ring-demo", "Periodic-source ring scenario with per-tick trace");
    common(ringd);
    ringd->add_option("--source-period", demo.source_period_ns, "Photon source period (ns)");
    ringd->add_option("--laser-period", demo.laser_period_ns, "Laser period (ns)");
    ringd->add_option("--freq", demo.ring_clock_hz, "Ring clock (Hz)");
    ringd->add_option("--duration", demo.duration_ns, "Photon collection time (ns)");
    ringd->add_option("--n-stages", demo.n_stages, "Ring length");
    ringd->add_option("--stopper", demo_stopper, "Stopper threshold")->check(CLI::IsMember({"128", "256", "off"}));
    ringd->add_option("--readout-clock", demo.readout_clock_hz, "Readout clock (Hz)");

    std::optional<double> enc_lifetime, enc_bg, enc_ppp, enc_pdp, enc_dead, enc_period, enc_freq;
    std::optional<std::int64_t> enc_periods;
    std::optional<int> enc_stages;
    std::string enc_stopper;
    bool enc_oracle = false;
    auto* enc = app.add_subcommand("encode", "Simulate one pixel exposure through the ring");
    common(enc);
    enc->add_option("--config", config_path, "Encode config (JSON)");
    enc->add_option("--seed", seed, "Seed");
    enc->add_option("--lifetime", enc_lifetime, "Fluorescence lifetime (ns)");
    enc->add_option("--background", enc_bg, "Background photon fraction");
    enc->add_option("--photons-per-period", enc_ppp, "Mean photons per laser period");
    enc->add_option("--periods", enc_periods, "Laser periods in the exposure");
    enc->add_option("--pdp", enc_pdp, "Photon detection probability");
    enc->add_option("--dead-time", enc_dead, "SPAD dead time (ns)");
    enc->add_option("--laser-period", enc_period, "Laser period (ns)");
    enc->add_option("--n-stages", enc_stages, "Ring length");
    enc->add_option("--freq", enc_freq, "Ring clock (Hz); default is the ideal N/period");
    enc->add_option("--stopper", enc_stopper, "Stopper threshold")->check(CLI::IsMember({"128", "256", "off"}));
    enc->add_flag("--oracle", enc_oracle, "Also write the histogram-binarize reference and compare");

    std::string train_dataset;
    auto* train = app.add_subcommand("train", "Train the SNN with BPTT");
    common(train);
    train->add_option("--config", config_path, "Training config (JSON)");
    train->add_option("--dataset", train_dataset, "Dataset file (overrides config)");
    train->add_option("--seed", seed, "Seed");
    train->add_option("--threads", threads, "Worker threads for batch gradients");

    EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "Evaluate a model: MAPE plus per-sample CSV");
    common(eval);
    eval->add_option("--model", ev.model_path, "Model file")->required();
    eval->add_option("--dataset", ev.dataset_path, "Dataset file")->required();
    eval->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));

    std::vector<double> corner_freqs;
    CornersOptions corners;
    auto* corn = app.add_subcommand("corners", "Clock gating statistics per ring frequency");
    common(corn);
    corn->add_option("--freq", corner_freqs, "Ring clock frequencies (Hz)");
    corn->add_option("--laser-period", corners.laser_period_ns, "Laser period (ns)");
    corn->add_option("--periods", corners.n_periods, "Laser periods to simulate");
    corn->add_option("--n-stages", corners.n_stages, "Ring length");
    corn->add_option("--model", corners.model_path, "Trained model for the MAPE columns");
    corn->add_option("--config", config_path, "Dataset config used to regenerate the test split");

    std::string manifest_path;
    auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare output hashes");
    common(rep);
    rep->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (gen->parsed()) {
            GenDatasetOptions o;
            if (!config_path.empty())
                o.spec = dataset::spec_from_json(read_json_file(config_path));
            apply_seed(o.spec.seed, seed);
            if (!encoder.empty())
                o.spec.encoder_path = dataset::parse_encoder_path(encoder);
            if (threads > 0)
                o.threads = threads;
            cmd_gen_dataset(o, out_dir, out);
        }
        else if (ringd->parsed()) {
            demo.stopper = ring::parse_stopper(demo_stopper);
            cmd_ring_demo(demo, out_dir, out);
        }
        else if (enc->parsed()) {
            EncodeOptions o = config_path.empty() ? EncodeOptions{} : encode_from_json(read_json_file(config_path));
            apply_seed(o.seed, seed);
            if (enc_lifetime)
                o.lifetime_ns = *enc_lifetime;
            if (enc_bg)
                o.background_fraction = *enc_bg;
            if (enc_ppp)
                o.mean_photons_per_period = *enc_ppp;
            if (enc_periods)
                o.n_periods = *enc_periods;
            if (enc_pdp)
                o.pdp = *enc_pdp;
            if (enc_dead)
                o.dead_time_ns = *enc_dead;
            if (enc_period)
                o.laser_period_ns = *enc_period;
            if (enc_stages)
                o.n_stages = *enc_stages;
            if (enc_freq)
                o.ring_clock_hz = *enc_freq;
            if (!enc_stopper.empty())
                o.stopper = ring::parse_stopper(enc_stopper);
            if (enc_oracle)
                o.oracle = true;
            cmd_encode(o, out_dir, out);
        }
        else if (train->parsed()) {
            if (config_path.empty())
                throw ConfigError("train: --config is required");
            TrainOptions o = train_from_json(read_json_file(config_path));
            if (!train_dataset.empty())
                o.dataset_path = train_dataset;
            o.dataset_path = absolute_path(o.dataset_path);
            apply_seed(o.train.seed, seed);
            if (threads > 0)
                o.train.threads = threads;
            cmd_train(o, out_dir, out);
        }
        else if (eval->parsed()) {
            ev.model_path = absolute_path(ev.model_path);
            ev.dataset_path = absolute_path(ev.dataset_path);
            cmd_eval(ev, out_dir, out);
        }
        else if (corn->parsed()) {
            if (!corner_freqs.empty())
                corners.freqs_hz = corner_freqs;
            if (!config_path.empty()) {
                corners.dataset = dataset::spec_from_json(read_json_file(config_path));
                apply_seed(corners.dataset->seed, std::nullopt);
            }
            corners.model_path = absolute_path(corners.model_path);
            cmd_corners(corners, out_dir, out);
        }
        else if (rep->parsed()) {
            const bool same = replay(manifest_path, out_dir, out);
            out << (same ? "replay: all outputs identical\n" : "replay: outputs differ\n");
            return same ? kOk : kFailure;
        }
    }
    catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    }
    catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    catch (const FormatError& e) {
        err << "input error: " << e.what() << '\n';
        return kConfigError;
    }
    catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}

}  // namespace transporter::cli
