#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdm/cli.hpp"
#include "mdm/render.hpp"

using namespace mdm;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# tiny smoke experiment
[system]
J = 2
K = 2
M = 2
P = 1.0
pnl_level = 3
F = dense
[network]
model = mu
enc_width = 6
enc_layers = 2
dec_width = 12
dec_layers = 2
[training]
T1 = 60
T2 = 20
T3 = 20
eta1 = 0.02
eta2 = 0.002
batch_size = 4
corruption_db = -6
loss = proposed
delta = 0.05
seed = 7
val_interval = 10
)";

fs::path test_dir() {
    auto dir = fs::temp_directory_path() / "mdm_cli_tests";
    fs::create_directories(dir);
    return dir;
}

std::string write_tiny_config(const std::string& name) {
    auto path = test_dir() / name;
    std::ofstream f(path);
    f << kTinyConfig;
    return path.string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("key-value config: sections, comments, diagnostics") {
    auto kv = KeyValueConfig::parse("[a]\nx = 1 # trailing\n y = hello\n[b]\nx = 2.5\n");
    REQUIRE(kv.get_int("a.x") == 1);
    REQUIRE(kv.get("a.y") == "hello");
    REQUIRE(kv.get_double("b.x") == 2.5);
    REQUIRE(kv.get("missing", "dflt") == "dflt");
    REQUIRE_THROWS_AS(kv.get("a.z"), ConfigError);
    REQUIRE_THROWS_AS(kv.get_int("a.y"), ConfigError);
    REQUIRE_THROWS_AS(KeyValueConfig::parse("nokey\n"), ConfigError);
    REQUIRE_THROWS_AS(KeyValueConfig::parse("[bad\n"), ConfigError);
}

TEST_CASE("experiment parsing: defaults and field diagnostics") {
    auto ec = parse_experiment(KeyValueConfig::parse(kTinyConfig));
    REQUIRE(ec.system.J == 2);
    REQUIRE(ec.system.N == 2);  // inferred from the dense mapping
    REQUIRE(ec.loss.kind == LossSpec::Kind::Proposed);
    REQUIRE(ec.loss.delta == 0.05);
    REQUIRE(ec.schedule.T1 == 60);

    auto bad = KeyValueConfig::parse("[system]\nJ = 2\nK = 2\nM = 3\n");
    REQUIRE_THROWS_AS(parse_experiment(bad), ConfigError);
    auto missing = KeyValueConfig::parse("[system]\nJ = 2\n");
    REQUIRE_THROWS_AS(parse_experiment(missing), ConfigError);
}

TEST_CASE("resource mapping: dense, standard sparse pattern, file path") {
    REQUIRE(resolve_mapping("dense", 2, 3) == dense_mapping(2, 3));
    REQUIRE(resolve_mapping("sparse", 4, 6) == sparse_mapping_6x4());
    REQUIRE_THROWS_AS(resolve_mapping("sparse", 2, 3), ConfigError);
    auto path = test_dir() / "fmap.txt";
    {
        std::ofstream f(path);
        f << "1 0\n0 1\n";
    }
    auto F = resolve_mapping(path.string(), 2, 2);
    REQUIRE(F == std::vector<std::vector<int>>{{1, 0}, {0, 1}});
    REQUIRE_THROWS_AS(resolve_mapping("/does/not/exist", 2, 2), ConfigError);
}

TEST_CASE("config rewriting for sweep cells") {
    std::string text = "[system]\npnl_level = 3\n[training]\ndelta = 0.05\n";
    auto t1 = set_config_value(text, "system", "pnl_level", "1");
    REQUIRE(parse_experiment(KeyValueConfig::parse(
                "[system]\nJ=2\nK=2\nM=2\n" + t1.substr(t1.find("pnl_level"))))
                .system.pnl_level == 1);
    auto t2 = set_config_value(text, "training", "loss", "l2");
    auto kv = KeyValueConfig::parse(t2);
    REQUIRE(kv.get("training.loss") == "l2");
    REQUIRE(kv.get("training.delta") == "0.05");

    auto cells_delta = make_sweep_cells("delta", text, {0.0, 0.01, 0.05, 0.1});
    REQUIRE(cells_delta.size() == 4);
    REQUIRE(KeyValueConfig::parse(cells_delta[0].config_text).get("training.loss") == "l2");
    REQUIRE(KeyValueConfig::parse(cells_delta[2].config_text).get("training.delta") == "0.050000000000000003");
    auto cells_pnl = make_sweep_cells("pnl", text, {});
    REQUIRE(cells_pnl.size() == 3);
    auto cells_cmp = make_sweep_cells("mu_vs_su", text, {});
    REQUIRE(cells_cmp.size() == 2);
    REQUIRE_THROWS_AS(make_sweep_cells("nope", text, {}), ConfigError);
}

TEST_CASE("cmd_train: outputs exist, reruns are byte-identical") {
    auto cfg = write_tiny_config("train.ini");
    auto out1 = (test_dir() / "run1").string();
    auto out2 = (test_dir() / "run2").string();
    auto r1 = cmd_train(cfg, std::nullopt, out1);
    auto r2 = cmd_train(cfg, std::nullopt, out2);
    REQUIRE(fs::exists(r1.codebook_path));
    REQUIRE(fs::exists(r1.encoder_path));
    REQUIRE(fs::exists(r1.decoder_path));
    REQUIRE(fs::exists(r1.report_path));
    REQUIRE(slurp(r1.codebook_path) == slurp(r2.codebook_path));
    REQUIRE(slurp(r1.report_path) == slurp(r2.report_path));

    // seed override changes the artifact
    auto r3 = cmd_train(cfg, 1234, (test_dir() / "run3").string());
    REQUIRE(slurp(r1.codebook_path) != slurp(r3.codebook_path));

    // provenance stamp present
    REQUIRE(slurp(r1.codebook_path).find("config_hash=") != std::string::npos);
}

TEST_CASE("cmd_evaluate: csv columns, read-only models, detector rules") {
    auto cfg = write_tiny_config("eval.ini");
    auto run = (test_dir() / "eval_run").string();
    auto tr = cmd_train(cfg, std::nullopt, run);
    std::string model_before = slurp(tr.codebook_path);

    EvaluateOptions opts;
    opts.ebn0_grid = {0, 4};
    opts.mc.max_bits = 200000;
    opts.mc.min_errors = 50;
    auto ev = cmd_evaluate(tr.codebook_path, opts, (test_dir() / "eval_out").string());
    auto csv = slurp(ev.ber_path);
    REQUIRE(csv.find("ebn0_db,bits,errors,ber,ci95\n") != std::string::npos);
    REQUIRE(ev.curve.size() == 2);
    REQUIRE(slurp(tr.codebook_path) == model_before);

    // nn detector runs from a model directory, not from a bare codebook
    REQUIRE_THROWS_AS(cmd_evaluate(tr.codebook_path, [] {
                          EvaluateOptions o;
                          o.detector = "nn";
                          return o;
                      }(), (test_dir() / "eval_out2").string()),
                      ConfigError);
    EvaluateOptions nn_opts;
    nn_opts.detector = "nn";
    nn_opts.ebn0_grid = {4};
    nn_opts.mc.max_bits = 100000;
    nn_opts.mc.min_errors = 50;
    auto ev_nn = cmd_evaluate(run, nn_opts, (test_dir() / "eval_out3").string());
    REQUIRE(ev_nn.curve.size() == 1);
}

TEST_CASE("imported codebook evaluates without training") {
    auto cfg = make_config(6, 4, 2, 4, 1.0, 1, sparse_mapping_6x4());
    auto books = conventional_qpsk_codebooks(cfg);
    auto path = (test_dir() / "imported.txt").string();
    save_codebooks(path, cfg, books, "imported fixture");
    EvaluateOptions opts;
    opts.ebn0_grid = {8};
    opts.mc.max_bits = 100000;
    opts.mc.min_errors = 20;
    auto ev = cmd_evaluate(path, opts, (test_dir() / "imported_out").string());
    REQUIRE(ev.curve[0].bits > 0);
    auto metrics = slurp(ev.metrics_path);
    REQUIRE(metrics.find("resource_users 3 3 3 3") != std::string::npos);
}

TEST_CASE("single-user model: train and evaluate") {
    auto text = std::string(kTinyConfig);
    text = set_config_value(text, "network", "model", "su");
    text = set_config_value(text, "network", "enc_width", "12");
    auto path = test_dir() / "su.ini";
    {
        std::ofstream f(path);
        f << text;
    }
    auto run = (test_dir() / "su_run").string();
    auto tr = cmd_train(path.string(), std::nullopt, run);
    REQUIRE(tr.codebook_path.empty());
    REQUIRE(fs::exists(tr.encoder_path));
    EvaluateOptions opts;
    opts.ebn0_grid = {4};
    opts.mc.max_bits = 100000;
    opts.mc.min_errors = 20;
    auto ev = cmd_evaluate(run, opts, (test_dir() / "su_out").string());
    REQUIRE(ev.curve[0].bits > 0);
}

TEST_CASE("sweep: cells run, aggregate csv written, failures recorded") {
    auto cfg = write_tiny_config("sweep.ini");
    SweepOptions opts;
    opts.kind = "pnl";
    opts.ebn0_grid = {4};
    opts.mc.max_bits = 60000;
    opts.mc.min_errors = 20;
    opts.workers = 2;
    auto out = (test_dir() / "sweep_out").string();
    auto results = cmd_sweep(cfg, opts, out);
    REQUIRE(results.size() == 3);
    for (const auto& r : results) REQUIRE(r.ok);
    auto agg = slurp((fs::path(out) / "sweep_pnl.csv").string());
    REQUIRE(agg.find("cell,status,ebn0_db,bits,errors,ber,ci95\n") != std::string::npos);
    REQUIRE(agg.find("pnl_1,ok,") != std::string::npos);
    REQUIRE(agg.find("pnl_3,ok,") != std::string::npos);
}

TEST_CASE("svg renders produce well-formed documents") {
    auto cfg = make_config(2, 2, 2, 2, 1.0, 2, dense_mapping(2, 2));
    auto enc = init_mu_encoder(cfg, 4, 1, 3);
    auto [books, sc] = extract_codebooks(enc);
    std::ostringstream c;
    write_constellation_svg(c, books, sc);
    REQUIRE(c.str().rfind("<svg", 0) == 0);
    REQUIRE(c.str().find("</svg>") != std::string::npos);
    BerCurve curve{{0, 1000, 100, 0.1, 0.01}, {4, 1000, 10, 0.01, 0.003}};
    std::ostringstream b;
    write_ber_svg(b, {{"mld", curve}});
    REQUIRE(b.str().rfind("<svg", 0) == 0);
    REQUIRE(b.str().find("polyline") != std::string::npos);
}

#ifdef MDM_CLI_PATH
TEST_CASE("cli binary: exit codes") {
    auto cfg = write_tiny_config("bin.ini");
    auto out = (test_dir() / "bin_run").string();
    std::string base = std::string(MDM_CLI_PATH);
    REQUIRE(std::system((base + " train --config " + cfg + " --out " + out + " >/dev/null 2>&1").c_str()) == 0);
    int rc_bad = std::system((base + " evaluate /does/not/exist --out /tmp/x >/dev/null 2>&1").c_str());
    REQUIRE(WEXITSTATUS(rc_bad) == 2);
    int rc_badcfg = std::system((base + " train --config /does/not/exist --out /tmp/x >/dev/null 2>&1").c_str());
    REQUIRE(WEXITSTATUS(rc_badcfg) != 0);
    REQUIRE(std::system((base + " --help >/dev/null 2>&1").c_str()) == 0);
}
#endif
