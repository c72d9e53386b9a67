// Operator surface behind the command-line tool: experiment config files,
// the train/evaluate/sweep/inspect commands and their output layout. One
// config file fully determines an experiment; every output embeds the config
// hash and seed.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "codebook.hpp"
#include "common.hpp"
#include "evaluation.hpp"
#include "modem.hpp"
#include "training.hpp"

namespace mdm {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- flat key = value config files with [sections] -----------------------------

class KeyValueConfig {
  public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>") {
        KeyValueConfig c;
        c.text_ = text;
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
                section = line.substr(1, line.size() - 2);
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            c.values_[section.empty() ? key : section + "." + key] = value;
        }
        return c;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config field: " + key);
        return it->second;
    }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, std::optional<double> fallback = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (fallback) return *fallback;
            throw ConfigError("missing config field: " + key);
        }
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config field " + key + ": not a number: " + it->second);
        }
    }

    long long get_int(const std::string& key, std::optional<long long> fallback = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (fallback) return *fallback;
            throw ConfigError("missing config field: " + key);
        }
        try {
            size_t pos = 0;
            long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config field " + key + ": not an integer: " + it->second);
        }
    }

    const std::string& text() const { return text_; }
    std::uint64_t hash() const { return fnv1a_hash(text_); }

  private:
    std::string text_;
    std::map<std::string, std::string> values_;
};

// --- experiment configuration ---------------------------------------------------

struct ExperimentConfig {
    SystemConfig system;
    bool su_model = false;
    size_t enc_width = 32;
    size_t enc_layers = 6;
    size_t dec_width = 512;
    size_t dec_layers = 4;
    TrainingSchedule schedule;
    LossSpec loss;
    std::uint64_t seed = 1;
    int workers = 1;
    std::string raw_text;

    std::string hash_hex_str() const { return hash_hex(fnv1a_hash(raw_text)); }
};

inline std::vector<std::vector<int>> resolve_mapping(const std::string& spec, int K, int J) {
    if (spec == "dense") return dense_mapping(K, J);
    if (spec == "sparse") {
        if (K != 4 || J != 6)
            throw ConfigError("F = sparse refers to the standard 6-user/4-resource pattern; use a file for other sizes");
        return sparse_mapping_6x4();
    }
    std::ifstream f(spec);
    if (!f) throw ConfigError("cannot open resource mapping file: " + spec);
    std::vector<std::vector<int>> F(K, std::vector<int>(J, 0));
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < J; ++j)
            if (!(f >> F[k][j])) throw ConfigError("resource mapping file " + spec + ": expected K*J 0/1 entries");
    return F;
}

inline ExperimentConfig parse_experiment(const KeyValueConfig& kv) {
    ExperimentConfig ec;
    ec.raw_text = kv.text();
    try {
        SystemConfig& sys = ec.system;
        sys.J = static_cast<int>(kv.get_int("system.J"));
        sys.K = static_cast<int>(kv.get_int("system.K"));
        sys.M = static_cast<int>(kv.get_int("system.M"));
        sys.P = kv.get_double("system.P", 1.0);
        sys.pnl_level = static_cast<int>(kv.get_int("system.pnl_level", 3));
        std::string fspec = kv.get("system.F", "dense");
        sys.F = resolve_mapping(fspec, sys.K, sys.J);
        int ones = 0;
        for (int k = 0; k < sys.K; ++k) ones += sys.F[k][0];
        sys.N = static_cast<int>(kv.get_int("system.N", ones));
        sys.validate();

        std::string model = kv.get("network.model", "mu");
        if (model != "mu" && model != "su") throw ConfigError("network.model must be mu or su");
        ec.su_model = model == "su";
        ec.enc_width = static_cast<size_t>(kv.get_int("network.enc_width", ec.su_model ? 256 : 32));
        ec.enc_layers = static_cast<size_t>(kv.get_int("network.enc_layers", 6));
        ec.dec_width = static_cast<size_t>(kv.get_int("network.dec_width", 512));
        ec.dec_layers = static_cast<size_t>(kv.get_int("network.dec_layers", 4));

        TrainingSchedule& s = ec.schedule;
        s.eta1 = kv.get_double("training.eta1", 0.001);
        s.eta2 = kv.get_double("training.eta2", 0.0001);
        s.T1 = static_cast<int>(kv.get_int("training.T1", 8000));
        s.T2 = static_cast<int>(kv.get_int("training.T2", 2000));
        s.T3 = static_cast<int>(kv.get_int("training.T3", 1000));
        s.batch_size = static_cast<int>(kv.get_int("training.batch_size", 400));
        s.corruption_db = kv.get_double("training.corruption_db", sys.N == sys.K ? -6.0 : -8.0);
        s.val_interval = static_cast<int>(kv.get_int("training.val_interval", 1));
        s.plateau_enabled = kv.get_int("training.plateau", 0) != 0;
        s.plateau_window = static_cast<int>(kv.get_int("training.plateau_window", 200));
        s.plateau_rel_change = kv.get_double("training.plateau_rel_change", 1e-4);
        s.validate();

        std::string loss = kv.get("training.loss", "proposed");
        if (loss == "proposed")
            ec.loss = LossSpec::proposed(kv.get_double("training.mu", 1.0), kv.get_double("training.delta", 0.05));
        else if (loss == "l2")
            ec.loss = LossSpec::l2();
        else
            throw ConfigError("training.loss must be proposed or l2");
        ec.loss.validate();

        ec.seed = static_cast<std::uint64_t>(kv.get_int("training.seed", 1));
        ec.workers = static_cast<int>(kv.get_int("training.workers", 1));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& ex) {
        throw ConfigError(ex.what());
    }
    return ec;
}

inline ExperimentConfig load_experiment(const std::string& path) { return parse_experiment(KeyValueConfig::load(path)); }

// --- manifest -------------------------------------------------------------------

struct ExperimentManifest {
    std::string id;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string command;
};

inline void append_manifest(const ExperimentManifest& m) {
    namespace fs = std::filesystem;
    fs::create_directories(m.out_dir);
    std::ofstream f(fs::path(m.out_dir) / "manifest.txt", std::ios::app);
    f << m.command << " id=" << m.id << " config=" << m.config_path << " seed=" << m.seed << "\n";
}

// --- commands -------------------------------------------------------------------

struct TrainOutputs {
    std::string codebook_path;   // multi-user models only
    std::string encoder_path;
    std::string decoder_path;
    std::string report_path;
};

// Runs the configured two-step training and writes the serialized networks,
// the extracted codebook (multi-user) and the per-epoch report. Deterministic
// per (config, seed): reruns produce byte-identical files.
inline TrainOutputs cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
                              const std::string& out_dir, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    ExperimentConfig ec = load_experiment(config_path);
    if (seed_override) ec.seed = *seed_override;
    fs::create_directories(out_dir);
    const std::string provenance = "config_hash=" + ec.hash_hex_str() + " seed=" + std::to_string(ec.seed);

    auto progress_cb = [&](int phase, const TrainingReport::Row& row) {
        (void)phase;
        if (progress == nullptr) return;
        const int total = ec.schedule.T1 + ec.schedule.T2 + ec.schedule.T3;
        const int step = std::max(1, total / 50);
        if (row.epoch % step == 0 || row.epoch + 1 == total)
            (*progress) << "epoch " << row.epoch << " phase " << row.phase << " train_loss "
                        << format_double(row.train_loss) << "\n";
    };

    TrainOutputs out;
    out.report_path = (fs::path(out_dir) / "report.csv").string();
    out.encoder_path = (fs::path(out_dir) / "encoder.txt").string();
    out.decoder_path = (fs::path(out_dir) / "decoder.txt").string();
    TrainingReport report;

    if (!ec.su_model) {
        auto enc = init_mu_encoder(ec.system, ec.enc_width, ec.enc_layers, ec.seed);
        auto dec = make_mlp(2 * static_cast<size_t>(ec.system.K), ec.dec_width, ec.dec_layers,
                            static_cast<size_t>(ec.system.M) * ec.system.J, RngStream(ec.seed, 0x99));
        MuTrainer trainer(std::move(enc), std::move(dec), generate_dataset(ec.system), ec.seed, ec.workers);
        report = trainer.run_two_step(ec.schedule, ec.loss, progress_cb);
        auto [books, sc] = extract_codebooks(trainer.encoder());
        out.codebook_path = (fs::path(out_dir) / "codebook.txt").string();
        save_codebooks(out.codebook_path, ec.system, books, provenance);
        std::ofstream ef(out.encoder_path);
        ef << "# " << provenance << "\n";
        write_mu_encoder(ef, trainer.encoder());
        std::ofstream df(out.decoder_path);
        df << "# " << provenance << "\n";
        write_network(df, trainer.decoder());
        report.codebook_ref = out.codebook_path;
    } else {
        auto enc = init_su_encoder(ec.system, ec.enc_width, ec.enc_layers, ec.seed);
        auto dec = make_mlp(2 * static_cast<size_t>(ec.system.K), ec.dec_width, ec.dec_layers,
                            static_cast<size_t>(ec.system.M) * ec.system.J, RngStream(ec.seed, 0x99));
        SuTrainer trainer(std::move(enc), std::move(dec), generate_dataset(ec.system), ec.seed, ec.workers);
        report = trainer.run_two_step(ec.schedule, ec.loss, progress_cb);
        trainer.encoder().scale = su_exhaustive_scale(trainer.encoder());
        std::ofstream ef(out.encoder_path);
        ef << "# " << provenance << "\n";
        write_su_encoder(ef, trainer.encoder());
        std::ofstream df(out.decoder_path);
        df << "# " << provenance << "\n";
        write_network(df, trainer.decoder());
        report.codebook_ref = out.encoder_path;
    }

    std::ofstream rf(out.report_path);
    report.write_csv(rf, provenance);
    append_manifest({ec.hash_hex_str(), config_path, ec.seed, out_dir, "train"});
    return out;
}

// A model directory or codebook file resolved into everything evaluation
// needs: the constellation, per-user books when present, and a decoder when
// present.
struct LoadedSystem {
    SuperposedConstellation sc;
    std::vector<Codebook> books;
    std::optional<DenseNetwork> decoder;
    int J = 0;
    int M = 0;
    double eb = 0.0;
};

inline std::istream& skip_comment_lines(std::istream& is) {
    while (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
    }
    return is;
}

inline LoadedSystem load_system(const std::string& path) {
    namespace fs = std::filesystem;
    LoadedSystem sys;
    if (fs::is_directory(path)) {
        const auto enc_path = fs::path(path) / "encoder.txt";
        std::ifstream ef(enc_path);
        if (!ef) throw ConfigError("model directory has no encoder.txt: " + path);
        skip_comment_lines(ef);
        std::string tag;
        ef >> tag;
        ef.seekg(0);
        skip_comment_lines(ef);
        if (tag == "mdm-mu-encoder") {
            MuEncoder enc = read_mu_encoder(ef);
            auto [books, sc] = extract_codebooks(enc);
            sys.books = std::move(books);
            sys.sc = std::move(sc);
            sys.J = enc.cfg.J;
            sys.M = enc.cfg.M;
            sys.eb = eb_per_bit(sys.books);
        } else if (tag == "mdm-su-encoder") {
            SuEncoder enc = read_su_encoder(ef);
            sys.sc = su_constellation(enc);
            sys.J = enc.cfg.J;
            sys.M = enc.cfg.M;
            sys.eb = eb_per_bit(sys.sc);
        } else {
            throw ConfigError("unrecognized encoder file in " + path);
        }
        std::ifstream df(fs::path(path) / "decoder.txt");
        if (df) {
            skip_comment_lines(df);
            sys.decoder = read_network(df);
        }
    } else {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open codebook file: " + path);
        auto cf = read_codebooks(f);
        sys.books = std::move(cf.books);
        sys.sc = build_superposed(sys.books);
        sys.J = cf.cfg.J;
        sys.M = cf.cfg.M;
        sys.eb = eb_per_bit(sys.books);
    }
    return sys;
}

struct EvaluateOptions {
    std::string detector = "mld";  // mld | nn
    std::vector<double> ebn0_grid{0, 2, 4, 6, 8, 10, 12};
    McOptions mc;
};

struct EvaluateOutputs {
    std::string ber_path;
    std::string metrics_path;
    BerCurve curve;
};

// Read-only on models: measures BER over the grid and writes geometry
// metrics. No training happens here.
inline EvaluateOutputs cmd_evaluate(const std::string& system_path, const EvaluateOptions& opts,
                                    const std::string& out_dir) {
    namespace fs = std::filesystem;
    LoadedSystem sys = load_system(system_path);
    BatchDetector detector;
    if (opts.detector == "mld") {
        detector = make_mld_detector(sys.sc);
    } else if (opts.detector == "nn") {
        if (!sys.decoder) throw ConfigError("nn detector requires a model directory with decoder.txt");
        std::vector<std::vector<std::uint64_t>> maps;
        for (const auto& b : sys.books) maps.push_back(b.labels);
        detector = make_nn_detector(*sys.decoder, sys.J, sys.M, std::move(maps));
    } else {
        throw ConfigError("detector must be mld or nn");
    }

    fs::create_directories(out_dir);
    EvaluateOutputs out;
    out.curve = monte_carlo_ber(sys.sc, sys.eb, detector, opts.ebn0_grid, opts.mc);
    const std::string provenance = "system=" + system_path + " detector=" + opts.detector +
                                   " seed=" + std::to_string(opts.mc.seed);
    out.ber_path = (fs::path(out_dir) / ("ber_" + opts.detector + ".csv")).string();
    std::ofstream bf(out.ber_path);
    write_ber_csv(bf, out.curve, provenance);
    out.metrics_path = (fs::path(out_dir) / "metrics.txt").string();
    std::ofstream mf(out.metrics_path);
    write_metrics(mf, codebook_metrics(sys.books, sys.sc), provenance);
    append_manifest({hash_hex(fnv1a_hash(system_path)), system_path, opts.mc.seed, out_dir, "evaluate"});
    return out;
}

inline void cmd_inspect(const std::string& system_path, std::ostream& os) {
    LoadedSystem sys = load_system(system_path);
    write_metrics(os, codebook_metrics(sys.books, sys.sc), "system=" + system_path);
}

// --- sweeps ---------------------------------------------------------------------

struct SweepCell {
    std::string name;
    std::string config_text;  // full config for this cell
};

inline std::string set_config_value(const std::string& text, const std::string& section, const std::string& key,
                                    const std::string& value) {
    // rewrite (or append) one key inside a section of the flat config text
    std::istringstream is(text);
    std::ostringstream os;
    std::string line, current;
    bool done = false, in_section = false;
    while (std::getline(is, line)) {
        std::string stripped = line.substr(0, line.find('#'));
        auto a = stripped.find_first_not_of(" \t\r");
        if (a != std::string::npos && stripped[a] == '[') {
            if (in_section && !done) {
                os << key << " = " << value << "\n";
                done = true;
            }
            auto b = stripped.find(']');
            current = stripped.substr(a + 1, b - a - 1);
            in_section = current == section;
            os << line << "\n";
            continue;
        }
        if (in_section && !done) {
            auto eq = stripped.find('=');
            if (eq != std::string::npos) {
                std::string k = stripped.substr(0, eq);
                auto ka = k.find_first_not_of(" \t");
                auto kb = k.find_last_not_of(" \t");
                if (ka != std::string::npos && k.substr(ka, kb - ka + 1) == key) {
                    os << key << " = " << value << "\n";
                    done = true;
                    continue;
                }
            }
        }
        os << line << "\n";
    }
    if (!done) {
        if (!in_section) os << "[" << section << "]\n";
        os << key << " = " << value << "\n";
    }
    return os.str();
}

struct SweepOptions {
    std::string kind;  // delta | pnl | mu_vs_su
    std::vector<double> deltas{0.0, 0.01, 0.05, 0.1};
    std::vector<double> ebn0_grid{0, 2, 4, 6, 8, 10, 12};
    std::string detector = "mld";
    McOptions mc;
    int workers = 1;  // concurrent cells
};

struct SweepCellResult {
    std::string name;
    bool ok = false;
    std::string error;
    BerCurve curve;
};

inline std::vector<SweepCell> make_sweep_cells(const std::string& kind, const std::string& base_text,
                                               const std::vector<double>& deltas) {
    std::vector<SweepCell> cells;
    if (kind == "delta") {
        for (double d : deltas) {
            std::string text = set_config_value(base_text, "training", "loss", d > 0.0 ? "proposed" : "l2");
            text = set_config_value(text, "training", "delta", format_double(d));
            std::ostringstream name;
            name << "delta_" << d;
            cells.push_back({name.str(), text});
        }
    } else if (kind == "pnl") {
        for (int level : {1, 2, 3}) {
            std::string text = set_config_value(base_text, "system", "pnl_level", std::to_string(level));
            cells.push_back({"pnl_" + std::to_string(level), text});
        }
    } else if (kind == "mu_vs_su") {
        cells.push_back({"mu", set_config_value(base_text, "network", "model", "mu")});
        cells.push_back({"su", set_config_value(base_text, "network", "model", "su")});
    } else {
        throw ConfigError("sweep kind must be delta, pnl or mu_vs_su");
    }
    return cells;
}

// Runs the grid of experiments cell by cell (optionally concurrent), then
// aggregates the final BER curves into one CSV. Cell failures are recorded
// and the sweep continues.
inline std::vector<SweepCellResult> cmd_sweep(const std::string& base_config_path, const SweepOptions& opts,
                                              const std::string& out_dir, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    KeyValueConfig base = KeyValueConfig::load(base_config_path);
    auto cells = make_sweep_cells(opts.kind, base.text(), opts.deltas);
    fs::create_directories(out_dir);

    std::vector<SweepCellResult> results(cells.size());
    detail::parallel_chunks(cells.size(), opts.workers, [&](size_t c) {
        SweepCellResult& res = results[c];
        res.name = cells[c].name;
        const std::string cell_dir = (fs::path(out_dir) / cells[c].name).string();
        try {
            fs::create_directories(cell_dir);
            const std::string cfg_path = (fs::path(cell_dir) / "config.ini").string();
            {
                std::ofstream f(cfg_path);
                f << cells[c].config_text;
            }
            cmd_train(cfg_path, std::nullopt, cell_dir, progress);
            EvaluateOptions eo;
            eo.detector = opts.detector;
            eo.ebn0_grid = opts.ebn0_grid;
            eo.mc = opts.mc;
            const std::string model = opts.kind == "mu_vs_su" && cells[c].name == "su"
                                          ? cell_dir
                                          : (fs::exists(fs::path(cell_dir) / "codebook.txt")
                                                 ? (fs::path(cell_dir) / "codebook.txt").string()
                                                 : cell_dir);
            auto eval = cmd_evaluate(opts.detector == "nn" ? cell_dir : model, eo, cell_dir);
            res.curve = eval.curve;
            res.ok = true;
        } catch (const std::exception& ex) {
            res.error = ex.what();
        }
    });

    std::ofstream agg(fs::path(out_dir) / ("sweep_" + opts.kind + ".csv"));
    agg << "# sweep=" << opts.kind << " base=" << base_config_path << " detector=" << opts.detector
        << " config_hash=" << hash_hex(base.hash()) << "\n";
    agg << "cell,status,ebn0_db,bits,errors,ber,ci95\n";
    for (const auto& res : results) {
        if (!res.ok) {
            agg << res.name << ",failed(" << res.error << "),,,,,\n";
            continue;
        }
        for (const auto& p : res.curve)
            agg << res.name << ",ok," << format_double(p.ebn0_db) << "," << p.bits << "," << p.errors << ","
                << format_double(p.ber) << "," << format_double(p.ci95) << "\n";
    }
    return results;
}

}  // namespace mdm
