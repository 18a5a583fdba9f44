#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "transporter/cli.hpp"
#include "transporter/dataset.hpp"
#include "transporter/ring_encoder.hpp"
#include "transporter/snn.hpp"

namespace fs = std::filesystem;
using namespace transporter;
using namespace transporter::cli;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / ("transporter-cli-" + std::to_string(::getpid()) + "-"
                                            + std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter()
    {
        static int n = 0;
        return n;
    }
    fs::path operator/(const std::string& s) const { return path / s; }
};

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "transporter");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

nlohmann::json manifest(const fs::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    return nlohmann::json::parse(in);
}

std::vector<int> set_positions(const fs::path& readout_file)
{
    std::ifstream in(readout_file);
    std::ostringstream text;
    text << in.rdbuf();
    const auto rec = ring::parse_spike_train(text.str());
    std::vector<int> pos;
    for (std::size_t i = 0; i < rec.train.size(); ++i)
        if (rec.train[i])
            pos.push_back(static_cast<int>(i));
    return pos;
}

}  // namespace

TEST_CASE("sha256 of known vectors")
{
    CHECK(sha256_bytes("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_bytes("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("empty config gives documented defaults")
{
    TempDir t;
    write(t / "empty.json", "");
    const auto r = invoke({"gen-dataset", "--config", (t / "empty.json").string(), "--out-dir", (t / "d").string()});
    REQUIRE(r.code == kOk);
    const auto m = manifest(t / "d");
    const auto spec = dataset::spec_from_json(m["config"]["spec"]);
    CHECK(spec == dataset::DatasetSpec{});

    CHECK(encode_from_json(nlohmann::json::object()).n_periods == EncodeOptions{}.n_periods);
    const snn::TrainConfig c = train_config_from_json(nlohmann::json::object());
    CHECK(c.learning_rate == snn::TrainConfig{}.learning_rate);
    CHECK(c.n_hidden == snn::TrainConfig{}.n_hidden);
}

TEST_CASE("unknown config key and bad values exit with code 2")
{
    TempDir t;
    write(t / "bad.json", R"({"n_train": 10, "n_trian": 5})");
    auto r = invoke({"gen-dataset", "--config", (t / "bad.json").string(), "--out-dir", (t / "d").string()});
    CHECK(r.code == kConfigError);
    CHECK(r.err.find("n_trian") != std::string::npos);

    write(t / "neg.json", R"({"n_train": -1})");
    r = invoke({"gen-dataset", "--config", (t / "neg.json").string(), "--out-dir", (t / "d").string()});
    CHECK(r.code == kConfigError);

    write(t / "train.json", R"({"learning_rate": 0.01, "lif": {"beta": 0.9, "tau": 3}})");
    r = invoke({"train", "--config", (t / "train.json").string(), "--out-dir", (t / "m").string()});
    CHECK(r.code == kConfigError);

    r = invoke({"ring-demo", "--stopper", "64", "--out-dir", (t / "x").string()});
    CHECK(r.code == kConfigError);
    r = invoke({"no-such-command"});
    CHECK(r.code == kConfigError);
}

TEST_CASE("same config and seed twice gives byte-identical outputs")
{
    TempDir t;
    write(t / "ds.json", R"({"n_train": 40, "n_val": 10, "n_test": 10, "background_fraction": 0.1})");
    for (const char* dir : {"a", "b"})
        REQUIRE(invoke({"gen-dataset", "--config", (t / "ds.json").string(), "--seed", "7", "--out-dir",
                        (t / dir).string()})
                    .code
                == kOk);
    CHECK(sha256_file(t / "a" / "dataset.tsv") == sha256_file(t / "b" / "dataset.tsv"));
    CHECK(manifest(t / "a")["outputs"] == manifest(t / "b")["outputs"]);
    CHECK(manifest(t / "a")["master_seed"] == 7);

    // thread count is not part of the result
    REQUIRE(invoke({"gen-dataset", "--config", (t / "ds.json").string(), "--seed", "7", "--threads", "3",
                    "--out-dir", (t / "c").string()})
                .code
            == kOk);
    CHECK(sha256_file(t / "a" / "dataset.tsv") == sha256_file(t / "c" / "dataset.tsv"));
}

TEST_CASE("seed precedence: flag over environment over config")
{
    TempDir t;
    write(t / "ds.json", R"({"n_train": 5, "n_val": 1, "n_test": 1, "seed": 3})");
    const std::string cfg = (t / "ds.json").string();
    REQUIRE(invoke({"gen-dataset", "--config", cfg, "--out-dir", (t / "a").string()}).code == kOk);
    CHECK(manifest(t / "a")["master_seed"] == 3);
    ::setenv("TRANSPORTER_SEED", "11", 1);
    REQUIRE(invoke({"gen-dataset", "--config", cfg, "--out-dir", (t / "b").string()}).code == kOk);
    REQUIRE(invoke({"gen-dataset", "--config", cfg, "--seed", "12", "--out-dir", (t / "c").string()}).code == kOk);
    ::setenv("TRANSPORTER_SEED", "x1", 1);
    const auto bad = invoke({"gen-dataset", "--config", cfg, "--out-dir", (t / "d").string()});
    ::unsetenv("TRANSPORTER_SEED");
    CHECK(manifest(t / "b")["master_seed"] == 11);
    CHECK(manifest(t / "c")["master_seed"] == 12);
    CHECK(bad.code == kConfigError);
}

TEST_CASE("ring-demo: 130 ns source against 128 ns laser spaces bits by two")
{
    TempDir t;
    const auto r = invoke({"ring-demo", "--source-period", "130", "--out-dir", t.path.string()});
    REQUIRE(r.code == kOk);
    const auto pos = set_positions(t / "readout.txt");
    REQUIRE(pos.size() == 16);
    for (std::size_t i = 1; i < pos.size(); ++i)
        CHECK(pos[i] - pos[i - 1] == 2);

    std::ifstream csv(t / "ring_trace.csv");
    std::string header, line;
    std::getline(csv, header);
    CHECK(header.rfind("tick,time_ns,", 0) == 0);
    int rows = 0;
    while (std::getline(csv, line))
        ++rows;
    CHECK(rows == 16 * 128);
}

TEST_CASE("ring-demo: source period equal to laser period gives one bit")
{
    TempDir t;
    REQUIRE(invoke({"ring-demo", "--source-period", "128", "--out-dir", t.path.string()}).code == kOk);
    CHECK(set_positions(t / "readout.txt").size() == 1);
}

TEST_CASE("ring-demo: stopper halt is visible in the trace")
{
    TempDir t;
    const auto r = invoke({"ring-demo", "--source-period", "1", "--stopper", "128", "--out-dir", t.path.string()});
    REQUIRE(r.code == kOk);
    std::ifstream csv(t / "ring_trace.csv");
    std::string line;
    std::getline(csv, line);
    long accepted = 0;
    bool halted = false;
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');)
            f.push_back(x);
        accepted += std::stol(f[5]);
        if (halted)
            CHECK(f[6] == "0");
        if (f[9] == "0")
            halted = true;
    }
    CHECK(halted);
    CHECK(accepted == 129);
}

TEST_CASE("encode: ring output matches the reference with --oracle")
{
    TempDir t;
    const auto r = invoke({"encode", "--lifetime", "8", "--background", "0.1", "--seed", "5", "--oracle", "--out-dir",
                           t.path.string()});
    REQUIRE(r.code == kOk);
    CHECK(r.out.find("oracle match: yes") != std::string::npos);
    CHECK(fs::exists(t / "spikes.txt"));
    CHECK(fs::exists(t / "oracle.txt"));
}

TEST_CASE("eval: a model that predicts the label exactly scores 0% MAPE")
{
    TempDir t;
    // every sample has the same label and the model outputs a constant equal to it
    dataset::Dataset d;
    d.spec.n_train = 1;
    d.spec.n_val = 1;
    d.spec.n_test = 4;
    d.train.push_back({SpikeTrain(std::vector<std::uint8_t>(128, 0)), 7.0, {}});
    d.val.push_back({SpikeTrain(std::vector<std::uint8_t>(128, 0)), 9.0, {}});
    for (int i = 0; i < 4; ++i)
        d.test.push_back({SpikeTrain(std::vector<std::uint8_t>(128, static_cast<std::uint8_t>(i % 2))), 12.5, {}});
    dataset::save(d, t / "d.tsv");

    snn::SnnModel m = snn::SnnModel::initialize(4, 128, {}, 0.98, 1);
    std::fill(m.w_in.begin(), m.w_in.end(), 0.0);
    std::fill(m.w_out.begin(), m.w_out.end(), 0.0);
    m.b_out = 0.0;  // sigmoid(0) = 0.5 maps to the centre of 5..20 ns
    std::ofstream(t / "m.txt") << [&] {
        std::ostringstream s;
        snn::save_model(m, s);
        return s.str();
    }();

    const auto r = invoke({"eval", "--model", (t / "m.txt").string(), "--dataset", (t / "d.tsv").string(),
                           "--out-dir", (t / "e").string()});
    INFO(r.err);
    REQUIRE(r.code == kOk);
    std::ifstream mf(t / "e" / "metrics.json");
    const auto metrics = nlohmann::json::parse(mf);
    CHECK(metrics["mape_percent"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(metrics["n"] == 4);
}

TEST_CASE("corners: gating table per frequency")
{
    TempDir t;
    const auto r = invoke({"corners", "--freq", "0.77e9", "--freq", "1.28e9", "--out-dir", t.path.string()});
    REQUIRE(r.code == kOk);
    std::ifstream csv(t / "corners.csv");
    std::string header, a, b;
    std::getline(csv, header);
    std::getline(csv, a);
    std::getline(csv, b);
    CHECK(a.rfind("770000000,77,1,", 0) == 0);
    CHECK(b.rfind("1280000000,128,0,", 0) == 0);
}

TEST_CASE("replay reproduces recorded hashes and detects tampering")
{
    TempDir t;
    REQUIRE(invoke({"encode", "--lifetime", "15", "--seed", "9", "--out-dir", (t / "run").string()}).code == kOk);
    auto r = invoke({"replay", (t / "run" / "manifest.json").string(), "--out-dir", (t / "again").string()});
    CHECK(r.code == kOk);
    CHECK(r.out.find("all outputs identical") != std::string::npos);

    auto m = manifest(t / "run");
    m["outputs"]["spikes.txt"] = std::string(64, '0');
    write(t / "run" / "manifest.json", m.dump());
    r = invoke({"replay", (t / "run" / "manifest.json").string(), "--out-dir", (t / "third").string()});
    CHECK(r.code == kFailure);
}
