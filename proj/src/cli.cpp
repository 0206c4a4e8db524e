#include "anyir/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "anyir/degradations.hpp"
#include "anyir/efficiency.hpp"
#include "anyir/gradcheck.hpp"
#include "anyir/image_io.hpp"
#include "anyir/selftest.hpp"
#include "anyir/training.hpp"
#include "json.hpp"

namespace anyir {

using nlohmann::json;

namespace {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    int train_count = 64;  // per task
    int val_count = 16;    // per task
    std::int64_t crop = 32;
    std::uint64_t seed = 0;
    std::string source;  // PNG directory; empty means procedural
};

struct Settings {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::vector<DegradationSpec> tasks{DegradationSpec::gaussian(25.0)};

    json to_json() const {
        json tasks_j = json::array();
        for (const auto& t : tasks) tasks_j.push_back(anyir::to_json(t));
        return {{"model", anyir::to_json(model)},
                {"train", anyir::to_json(train)},
                {"data",
                 {{"train_count", data.train_count},
                  {"val_count", data.val_count},
                  {"crop", data.crop},
                  {"seed", data.seed},
                  {"source", data.source}}},
                {"tasks", tasks_j}};
    }
};

// Raw flag values shared by the subcommands.
struct Flags {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> size;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// "gaussian[:sigma]", "haze[:t[:airlight]]", "rain[:streaks]" or inline JSON.
DegradationSpec parse_degradation(const std::string& text) {
    if (!text.empty() && text.front() == '{') {
        try {
            return degradation_from_json(json::parse(text));
        } catch (const json::parse_error& e) {
            throw ConfigError("degradation: " + std::string(e.what()));
        }
    }
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.empty()) throw ConfigError("degradation: empty");
    auto num = [&](std::size_t i) {
        try {
            std::size_t used = 0;
            const double v = std::stod(parts[i], &used);
            if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("degradation '" + text + "': '" + parts[i] + "' is not a number");
        }
    };
    DegradationSpec spec;
    const std::string& kind = parts[0];
    if (kind == "gaussian" && parts.size() <= 2) {
        spec = DegradationSpec::gaussian(parts.size() > 1 ? num(1) : 25.0);
    } else if (kind == "haze" && parts.size() <= 3) {
        Haze h;
        if (parts.size() > 1) h.t = num(1);
        if (parts.size() > 2) h.airlight = num(2);
        spec = DegradationSpec{{h}};
    } else if (kind == "rain" && parts.size() <= 2) {
        Rain r;
        if (parts.size() > 1) r.streaks = static_cast<int>(num(1));
        spec = DegradationSpec::rain(r);
    } else {
        throw ConfigError("degradation '" + text + "': expected gaussian[:sigma], haze[:t[:A]] or rain[:streaks]");
    }
    spec.validate();
    return spec;
}

Settings resolve(const Flags& f) {
    Settings s;
    json file;
    if (!f.config.empty()) {
        file = read_json_file(f.config);
        if (!file.is_object()) throw ConfigError(f.config + ": expected a JSON object");
        for (const auto& [key, v] : file.items()) {
            if (key != "model" && key != "train" && key != "data" && key != "tasks")
                throw ConfigError(f.config + ": unknown key '" + key + "'");
        }
    }
    if (!f.preset.empty() && file.contains("model")) {
        throw ConfigError("--preset and a config file model section are mutually exclusive");
    }
    if (!f.preset.empty()) s.model = ModelConfig::preset(f.preset);
    if (file.contains("model")) s.model = model_config_from_json(file["model"]);
    if (file.contains("train")) s.train = train_config_from_json(file["train"]);
    if (file.contains("data")) {
        const json& d = file["data"];
        try {
            for (const auto& [key, v] : d.items()) {
                if (key == "train_count") s.data.train_count = v.get<int>();
                else if (key == "val_count") s.data.val_count = v.get<int>();
                else if (key == "crop") s.data.crop = v.get<std::int64_t>();
                else if (key == "seed") s.data.seed = v.get<std::uint64_t>();
                else if (key == "source") s.data.source = v.get<std::string>();
                else throw ConfigError("data config: unknown key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw ConfigError(std::string("data config: ") + e.what());
        }
    }
    if (file.contains("tasks")) {
        s.tasks.clear();
        if (!file["tasks"].is_array() || file["tasks"].empty()) throw ConfigError("tasks: expected a non-empty array");
        for (const auto& t : file["tasks"]) s.tasks.push_back(degradation_from_json(t));
    }
    if (f.seed) {
        s.model.seed = *f.seed;
        s.train.seed = *f.seed;
        s.data.seed = *f.seed;
    }
    if (f.size) {
        s.data.crop = *f.size;
        s.train.crop = *f.size;
    }
    s.model.validate();
    s.train.validate();
    if (s.data.train_count < 1 || s.data.val_count < 1) throw ConfigError("data config: counts must be >= 1");
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream o(path);
    o << text;
    if (!o) throw IoError("cannot write " + path.string());
}

void echo_settings(const Settings& s, const std::string& out_dir) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    write_text(std::filesystem::path(out_dir) / "effective_config.json", s.to_json().dump(2) + "\n");
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

// Reflect-pads bottom and right up to the next multiple of 8.
Tensor pad_to_multiple(const Tensor& img, std::int64_t multiple) {
    const std::int64_t h = img.dim(2), w = img.dim(3);
    const std::int64_t ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
    if (ph == h && pw == w) return img;
    Tensor out({1, 3, ph, pw});
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < ph; ++y)
            for (std::int64_t x = 0; x < pw; ++x) out.at(0, c, y, x) = img.at(0, c, reflect(y, h), reflect(x, w));
    return out;
}

Tensor crop_top_left(const Tensor& img, std::int64_t h, std::int64_t w) {
    if (img.dim(2) == h && img.dim(3) == w) return img;
    Tensor out({1, 3, h, w});
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) out.at(0, c, y, x) = img.at(0, c, y, x);
    return out;
}

void append(PairSet& into, const PairSet& from) {
    for (const auto& p : from.pairs) into.pairs.push_back(p);
}

std::uint64_t derived_seed(std::uint64_t seed, const char* purpose, std::uint64_t index) {
    return Rng(seed).stream(purpose, index).next_u64();
}

std::string eval_table(const std::vector<std::pair<std::string, EvalResult>>& rows, const std::vector<int>& counts) {
    std::ostringstream os;
    os << std::left << std::setw(28) << "set" << std::right << std::setw(7) << "pairs" << std::setw(12) << "in_psnr"
       << std::setw(10) << "in_ssim" << std::setw(12) << "out_psnr" << std::setw(10) << "out_ssim" << std::setw(10)
       << "gain_db" << "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& e = rows[i].second;
        os << std::left << std::setw(28) << rows[i].first << std::right << std::setw(7) << counts[i] << std::setw(12)
           << fixed(e.baseline_psnr, 3) << std::setw(10) << fixed(e.baseline_ssim, 4) << std::setw(12)
           << fixed(e.psnr, 3) << std::setw(10) << fixed(e.ssim, 4) << std::setw(10)
           << fixed(e.psnr - e.baseline_psnr, 3) << "\n";
    }
    return os.str();
}

json eval_json(const std::vector<std::pair<std::string, EvalResult>>& rows, const std::vector<int>& counts) {
    json arr = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& e = rows[i].second;
        arr.push_back({{"set", rows[i].first},
                       {"pairs", counts[i]},
                       {"baseline_psnr", e.baseline_psnr},
                       {"baseline_ssim", e.baseline_ssim},
                       {"psnr", e.psnr},
                       {"ssim", e.ssim}});
    }
    return arr;
}

void add_common(CLI::App* cmd, Flags& f, bool with_out, bool with_size) {
    cmd->add_option("--config", f.config, "JSON file with model/train/data/tasks sections");
    cmd->add_option("--preset", f.preset, "Model preset: tiny, small or toy");
    cmd->add_option("--seed", f.seed, "Seed for model init, data and training");
    if (with_out) cmd->add_option("--out", f.out, "Output directory");
    if (with_size) cmd->add_option("--size", f.size, "Crop / image size (multiple of 8)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"anyir: all-in-one image restoration toolkit"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 2 usage, 3 config, 4 numeric failure, 5 I/O.");

    Flags f;
    int count = 0;
    std::string split = "train", source;
    std::optional<std::string> degradation;
    std::vector<std::string> data_dirs, val_dirs, tasks;
    std::optional<int> steps, batch, eval_interval;
    std::optional<double> lr;
    std::string checkpoint, input, output;
    bool as_json = false;
    double h = 1e-3, tol = 1e-4;

    auto* make_data = app.add_subcommand("make-data", "Generate a (clean, degraded) PairSet on disk");
    add_common(make_data, f, true, true);
    make_data->add_option("--count", count, "Number of pairs (default: data.train_count)");
    make_data->add_option("--split", split, "Split tag stored in the manifest")->check(CLI::IsMember({"train", "val"}));
    make_data->add_option("--source", source, "Directory of clean PNGs (default: procedural images)");
    make_data->add_option("--degradation", degradation, "gaussian[:sigma] | haze[:t[:A]] | rain[:n] | JSON spec (default gaussian:25)");
    make_data->get_option("--out")->required();

    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.bin and metrics.jsonl");
    add_common(train_cmd, f, true, true);
    auto* data_opt = train_cmd->add_option("--data", data_dirs, "PairSet directories to train on (default: procedural)");
    train_cmd->add_option("--val", val_dirs, "Held-out PairSet directories")->needs(data_opt);
    data_opt->needs("--val");
    train_cmd->add_option("--task", tasks, "Degradation per procedural task, repeatable (default gaussian:25)")
        ->excludes(data_opt);
    train_cmd->add_option("--steps", steps, "Optimizer steps");
    train_cmd->add_option("--batch", batch, "Batch size");
    train_cmd->add_option("--lr", lr, "Initial learning rate (lr_min stays at its configured ratio)");
    train_cmd->add_option("--eval-interval", eval_interval, "Steps between evaluations (0: final only)");
    train_cmd->get_option("--out")->required();

    auto* restore = app.add_subcommand("restore", "Restore one PNG with a checkpoint");
    restore->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    restore->add_option("--input", input, "Degraded PNG")->required();
    restore->add_option("--output", output, "Restored PNG")->required();

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint over PairSets");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", data_dirs, "PairSet directories")->required();
    eval->add_option("--out", f.out, "Directory for eval.json");
    eval->add_flag("--json", as_json, "Print JSON instead of a table");

    auto* params = app.add_subcommand("params", "Learnable parameter count by module");
    add_common(params, f, false, false);
    params->add_flag("--json", as_json, "Print JSON instead of a table");

    auto* flops = app.add_subcommand("flops", "Analytic MAC/FLOP count at a square input size");
    add_common(flops, f, false, true);
    flops->add_flag("--json", as_json, "Print JSON instead of a table");

    auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference check of every differentiable op");
    gradcheck->add_option("--seed", f.seed, "Seed for inputs and projections");
    gradcheck->add_option("--step", h, "Finite-difference step");
    gradcheck->add_option("--tol", tol, "Relative error tolerance per op");

    auto* selftest = app.add_subcommand("selftest", "Run the invariant checks of every module");
    selftest->add_option("--seed", f.seed, "Seed for random inputs");

    std::vector<const char*> argv{"anyir"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (make_data->parsed()) {
            Settings s = resolve(f);
            if (degradation) s.tasks = {parse_degradation(*degradation)};
            if (s.tasks.size() != 1) {
                throw ConfigError("make-data writes one degradation per PairSet; the config lists " +
                                  std::to_string(s.tasks.size()) + " tasks");
            }
            if (count > 0) s.data.train_count = count;
            if (!source.empty()) s.data.source = source;
            if (s.data.crop % 8 != 0 || s.data.crop < 8) throw ConfigError("--size must be a positive multiple of 8");
            echo_settings(s, f.out);
            const PairSet set = make_pairs({s.data.source}, s.tasks.front(), s.data.train_count, s.data.crop,
                                           s.data.seed, split);
            save_pairs(set, f.out);
            double mean = 0;
            for (const auto& p : set.pairs) mean += psnr(p.clean, p.degraded, 1.0);
            out << "wrote " << set.pairs.size() << " pairs (" << s.tasks.front().describe() << ", " << s.data.crop
                << "x" << s.data.crop << ") to " << f.out << "; mean degraded PSNR "
                << fixed(mean / static_cast<double>(set.pairs.size()), 3) << " dB\n";
            return kExitOk;
        }

        if (train_cmd->parsed()) {
            Settings s = resolve(f);
            if (!tasks.empty()) {
                s.tasks.clear();
                for (const auto& t : tasks) s.tasks.push_back(parse_degradation(t));
            }
            if (steps) s.train.steps = *steps;
            if (batch) s.train.batch = *batch;
            if (lr) {
                const double ratio = s.train.lr0 > 0 ? s.train.lr_min / s.train.lr0 : 0.0;
                s.train.lr0 = *lr;
                s.train.lr_min = *lr * ratio;
            }
            if (eval_interval) s.train.eval_interval = *eval_interval;
            s.train.validate();

            PairSet train_set, val_set;
            std::vector<std::pair<std::string, PairSet>> val_parts;
            if (!data_dirs.empty()) {
                for (const auto& d : data_dirs) append(train_set, load_pairs(d));
                for (const auto& d : val_dirs) val_parts.emplace_back(d, load_pairs(d));
            } else {
                for (std::size_t k = 0; k < s.tasks.size(); ++k) {
                    append(train_set, make_pairs({s.data.source}, s.tasks[k], s.data.train_count, s.data.crop,
                                                 derived_seed(s.data.seed, "train-set", k), "train"));
                    val_parts.emplace_back(s.tasks[k].describe(),
                                           make_pairs({s.data.source}, s.tasks[k], s.data.val_count, s.data.crop,
                                                      derived_seed(s.data.seed, "val-set", k), "val"));
                }
            }
            for (const auto& [name, set] : val_parts) append(val_set, set);
            echo_settings(s, f.out);

            ModelF model = ModelF::build(s.model);
            out << "training " << count_params(model) << " parameters on " << train_set.pairs.size() << " pairs for "
                << s.train.steps << " steps\n";
            TrainOutputs outputs{f.out, [&](const json& rec) {
                                     if (rec.contains("psnr")) {
                                         out << "step " << rec["step"].get<int>() << ": val psnr "
                                             << fixed(rec["psnr"].get<double>(), 3) << " ssim "
                                             << fixed(rec["ssim"].get<double>(), 4) << "\n";
                                     }
                                 }};
            train(model, train_set, val_set, s.train, outputs);

            std::vector<std::pair<std::string, EvalResult>> rows;
            std::vector<int> counts;
            for (const auto& [name, set] : val_parts) {
                rows.emplace_back(name, evaluate(model, set));
                counts.push_back(static_cast<int>(set.pairs.size()));
            }
            out << eval_table(rows, counts);
            write_text(std::filesystem::path(f.out) / "final_eval.json", eval_json(rows, counts).dump(2) + "\n");
            return kExitOk;
        }

        if (restore->parsed()) {
            const auto loaded = load_checkpoint(checkpoint);
            const Tensor img = read_png(input);
            const std::int64_t ih = img.dim(2), iw = img.dim(3);
            Tensor restored = crop_top_left(loaded.model.infer(pad_to_multiple(img, 8)), ih, iw);
            write_png(output, restored);
            out << "restored " << ih << "x" << iw << " -> " << output << "\n";
            return kExitOk;
        }

        if (eval->parsed()) {
            const auto loaded = load_checkpoint(checkpoint);
            std::vector<std::pair<std::string, EvalResult>> rows;
            std::vector<int> counts;
            for (const auto& d : data_dirs) {
                const PairSet set = load_pairs(d);
                rows.emplace_back(d, evaluate(loaded.model, set));
                counts.push_back(static_cast<int>(set.pairs.size()));
            }
            const json j = eval_json(rows, counts);
            out << (as_json ? j.dump(2) + "\n" : eval_table(rows, counts));
            if (!f.out.empty()) {
                std::filesystem::create_directories(f.out);
                write_text(std::filesystem::path(f.out) / "eval.json", j.dump(2) + "\n");
            }
            return kExitOk;
        }

        if (params->parsed()) {
            const Settings s = resolve(f);
            const ModelF model = ModelF::build(s.model);
            const auto total = count_params(model);
            if (as_json) {
                json modules = json::object();
                for (const auto& [name, n] : param_breakdown(model)) modules[name] = n;
                out << json{{"total", total}, {"modules", modules}, {"config", to_json(s.model)}}.dump(2) << "\n";
            } else {
                for (const auto& [name, n] : param_breakdown(model))
                    out << std::left << std::setw(14) << name << std::right << std::setw(12) << n << "\n";
                out << std::left << std::setw(14) << "total" << std::right << std::setw(12) << total << "  ("
                    << fixed(static_cast<double>(total) / 1e6, 3) << "M)\n";
            }
            return kExitOk;
        }

        if (flops->parsed()) {
            const Settings s = resolve(f);
            const int size = f.size.value_or(224);
            const CostReport r = count_flops(s.model, size, size);
            out << (as_json ? r.to_json().dump(2) + "\n" : r.to_table());
            return kExitOk;
        }

        if (gradcheck->parsed()) {
            const std::uint64_t seed = f.seed.value_or(2024);
            bool ok = true;
            for (const auto& l : run_registered_grad_checks(h, tol, seed)) {
                out << (l.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << l.op << " trial " << l.trial
                    << "  " << std::setw(34) << l.shapes << " rel_err " << l.max_rel_error << "\n";
                ok = ok && l.passed;
            }
            const double e2e = end_to_end_grad_error(seed);
            const bool e2e_ok = e2e <= 1e-3;
            out << (e2e_ok ? "PASS " : "FAIL ") << std::left << std::setw(22) << "end_to_end_minimal"
                << " rel_err " << e2e << " (tolerance 1e-3)\n";
            ok = ok && e2e_ok;
            out << (ok ? "all gradient checks passed\n" : "gradient check failures\n");
            return ok ? kExitOk : kExitNumeric;
        }

        if (selftest->parsed()) {
            int failed = 0;
            run_selftest(f.seed.value_or(0), [&](const CheckOutcome& o) {
                out << (o.passed ? "PASS " : "FAIL ") << o.module << ": " << o.name;
                if (!o.detail.empty()) out << " (" << o.detail << ")";
                out << "\n" << std::flush;
                failed += o.passed ? 0 : 1;
            });
            out << (failed == 0 ? "selftest passed\n" : std::to_string(failed) + " selftest checks failed\n");
            return failed == 0 ? kExitOk : kExitNumeric;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DegradationError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ImageIoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CheckpointError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}

}  // namespace anyir
