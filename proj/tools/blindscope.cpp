// blindscope: blind OFDM modulation detection from raw I/Q.
//
// generate  synthesize a labeled constellation dataset (and optional captures)
// train     fit the residual classifier on a generated dataset
// eval      accuracy sweep over SNR or subcarrier count
// classify  blind per-symbol modulation decisions on a single capture

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blindscope/classifier.hpp"
#include "blindscope/config.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/evalpipe.hpp"
#include "blindscope/featurize.hpp"
#include "blindscope/io.hpp"

namespace fs = std::filesystem;
using namespace blindscope;

namespace {

// BLINDSCOPE_LOG: quiet | info | debug (default info). Logs go to stderr so
// stdout stays parseable.
int log_level() {
    static const int level = [] {
        const char* env = std::getenv("BLINDSCOPE_LOG");
        if (!env) return 1;
        const std::string v(env);
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[blindscope] " << msg << '\n';
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[blindscope:debug] " << msg << '\n';
}

struct Options {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::string model_path;
    std::string capture_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned jobs = 1;
    std::size_t captures = 0;
};

RunConfig resolve_config(const Options& opt) {
    RunConfig rc = opt.config_path.empty() ? RunConfig{} : load_run_config(opt.config_path);
    if (opt.seed_set) rc.seed = opt.seed;
    if (!opt.out_dir.empty()) rc.output_dir = opt.out_dir;
    rc.validate();
    return rc;
}

// Record substreams are keyed by index, so any partition over workers yields
// the same bytes; blocks are written back in index order.
void generate_records(const DatasetSpec& spec, const Rng& base, unsigned jobs, io::DatasetWriter& writer) {
    const std::size_t block = std::max<std::size_t>(jobs, 1) * 16;
    std::vector<ConstellationImage> slot(block);
    for (std::size_t at = 0; at < spec.num_records; at += block) {
        const std::size_t take = std::min(block, spec.num_records - at);
        if (jobs <= 1) {
            for (std::size_t i = 0; i < take; ++i) slot[i] = make_record(spec, at + i, base);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(jobs);
            for (unsigned w = 0; w < jobs; ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t i = w; i < take; i += jobs) slot[i] = make_record(spec, at + i, base);
                });
            for (auto& t : pool) t.join();
        }
        for (std::size_t i = 0; i < take; ++i) writer.append(slot[i]);
    }
}

int cmd_generate(const Options& opt) {
    const RunConfig rc = resolve_config(opt);
    const fs::path out(rc.output_dir);
    const Rng base(rc.seed, 0xDA7A);

    log_info("generating " + std::to_string(rc.dataset.num_records) + " records into " +
             (out / "dataset").string());
    io::DatasetWriter writer(out / "dataset", rc.dataset.resolution, rc.dataset.axis_range);
    generate_records(rc.dataset, base, opt.jobs, writer);
    nlohmann::json extra;
    extra["seed"] = rc.seed;
    extra["version"] = kVersionString;
    writer.finalize(std::move(extra));

    if (opt.captures > 0) {
        const fs::path cap_dir = out / "captures";
        fs::create_directories(cap_dir);
        const Rng cap_base(rc.seed, 0xCAB);
        for (std::size_t i = 0; i < opt.captures; ++i) {
            Rng rng = cap_base.split(i);
            const StreamDraw draw = draw_stream_params(rc.dataset, rng);
            const TxStream tx = generate_stream(draw.cfg, rng);
            const ImpairedStream rx = impair(tx, draw.imp, rng);
            const fs::path p = cap_dir / ("capture_" + std::to_string(i) + ".bsiq");
            io::write_capture(p, rx);
            log_debug("wrote " + p.string());
        }
        log_info("wrote " + std::to_string(opt.captures) + " captures into " + cap_dir.string());
    }
    return 0;
}

int cmd_train(const Options& opt) {
    const RunConfig rc = resolve_config(opt);
    const fs::path out(rc.output_dir);
    const fs::path data = opt.data_dir.empty() ? out / "dataset" : fs::path(opt.data_dir);

    const io::Dataset ds = io::read_dataset(data);
    if (ds.resolution != rc.model.input_resolution)
        throw ConfigError("model.input_resolution", "dataset at " + data.string() + " has resolution " +
                                                        std::to_string(ds.resolution));
    Hyper hp = rc.train;
    hp.seed = rc.seed;
    log_info("training on " + std::to_string(ds.count()) + " records for " + std::to_string(hp.epochs) +
             " epochs");
    auto [model, report] = train<float>(ds, rc.model, hp);

    fs::create_directories(out);
    save_model(model, out / "model.bscp");
    nlohmann::json rj;
    rj["train_loss"] = report.train_loss;
    rj["val_accuracy"] = report.val_accuracy;
    rj["best_epoch"] = report.best_epoch;
    rj["wall_seconds"] = report.wall_seconds;
    rj["epochs"] = hp.epochs;
    rj["seed"] = rc.seed;
    {
        auto f = io::detail::open_out(out / "train_report.json");
        f << rj.dump(2) << '\n';
    }
    log_info("best epoch " + std::to_string(report.best_epoch) + ", final val accuracy " +
             (report.val_accuracy.empty() ? std::string("n/a") : std::to_string(report.val_accuracy.back())));
    return 0;
}

int cmd_eval(const Options& opt) {
    const RunConfig rc = resolve_config(opt);
    const fs::path out(rc.output_dir);
    const fs::path model_path = opt.model_path.empty() ? out / "model.bscp" : fs::path(opt.model_path);

    const Model<float> model = load_model<float>(model_path);
    DatasetSpec base = rc.dataset;
    base.num_records = rc.eval.records_per_point;
    const SweepAxis axis = rc.eval.axis == "snr_db" ? SweepAxis::SnrDb : SweepAxis::NumSubcarriers;

    log_info("sweeping " + rc.eval.axis + " over " + std::to_string(rc.eval.values.size()) + " points, " +
             std::to_string(base.num_records) + " records each");
    const Rng rng(rc.seed, 0xE7A1);
    const std::vector<SweepPoint> points = sweep(axis, rc.eval.values, base, model, rng);

    fs::create_directories(out);
    const fs::path csv = out / ("eval_" + rc.eval.axis + ".csv");
    write_sweep_csv(csv, axis, points);
    nlohmann::json cj;
    cj["axis"] = rc.eval.axis;
    auto& arr = cj["points"] = nlohmann::json::array();
    for (const auto& pt : points) {
        nlohmann::json p = confusion_to_json(pt.confusion);
        p["axis_value"] = pt.axis_value;
        p["mean_accuracy"] = pt.mean_accuracy;
        p["mean_modulation_accuracy"] = pt.mean_modulation_accuracy;
        arr.push_back(std::move(p));
    }
    const fs::path cjson = out / ("confusion_" + rc.eval.axis + ".json");
    {
        auto f = io::detail::open_out(cjson);
        f << cj.dump(2) << '\n';
    }
    log_info("wrote " + csv.string() + " and " + cjson.string());
    return 0;
}

int cmd_classify(const Options& opt) {
    const RunConfig rc = resolve_config(opt);
    const Model<float> model = load_model<float>(opt.model_path);
    const io::Capture cap = io::read_capture(opt.capture_path);

    PipelineConfig pc;
    pc.bandwidth_hz = cap.sample_rate_hz;
    const PipelineResult res = run_blind_pipeline(cap.samples, model, pc);

    std::cout << "sync: N=" << res.sync.n_hat << " Ncp=" << res.sync.ncp_hat << " shift=" << res.sync.shift_hat
              << " f_frac=" << res.sync.f_frac_hat << " Hz peak_score=" << res.sync.peak_score << "\n";
    std::cout << "symbol  start     label        confidence\n";
    for (const auto& d : res.decisions) {
        std::string name = label_name(d.label);
        if (!d.resolved) name += "?";
        std::cout << d.symbol_index;
        for (std::size_t pad = std::to_string(d.symbol_index).size(); pad < 8; ++pad) std::cout << ' ';
        std::cout << d.frame_start;
        for (std::size_t pad = std::to_string(d.frame_start).size(); pad < 10; ++pad) std::cout << ' ';
        std::cout << name;
        for (std::size_t pad = name.size(); pad < 13; ++pad) std::cout << ' ';
        std::cout << d.confidence << "\n";
    }

    nlohmann::json j;
    j["capture"] = opt.capture_path;
    j["sync"] = {{"n_hat", res.sync.n_hat},          {"ncp_hat", res.sync.ncp_hat},
                 {"shift_hat", res.sync.shift_hat},  {"f_ss_hat", res.sync.f_ss_hat},
                 {"f_frac_hat", res.sync.f_frac_hat}, {"peak_score", res.sync.peak_score}};
    auto& arr = j["decisions"] = nlohmann::json::array();
    for (const auto& d : res.decisions)
        arr.push_back({{"symbol_index", d.symbol_index},
                       {"frame_start", d.frame_start},
                       {"label", d.label},
                       {"label_name", label_name(d.label)},
                       {"confidence", d.confidence},
                       {"resolved", d.resolved}});
    const fs::path out(rc.output_dir);
    fs::create_directories(out);
    {
        auto f = io::detail::open_out(out / "decisions.json");
        f << j.dump(2) << '\n';
    }
    log_info("wrote " + (out / "decisions.json").string());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind OFDM modulation detection toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersionString));

    Options opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON run configuration");
        sub->add_option("--seed", opt.seed, "master seed (overrides config)")->each([&](const std::string&) {
            opt.seed_set = true;
        });
        sub->add_option("--jobs", opt.jobs, "worker threads; output bytes do not depend on it")
            ->check(CLI::Range(1u, 256u));
        sub->add_option("--out", opt.out_dir, "output directory (overrides config)");
    };

    CLI::App* gen = app.add_subcommand("generate", "synthesize a labeled dataset");
    add_common(gen);
    gen->add_option("--captures", opt.captures, "also write this many impaired I/Q captures");

    CLI::App* tr = app.add_subcommand("train", "train the classifier on a dataset");
    add_common(tr);
    tr->add_option("--data", opt.data_dir, "dataset directory (default <out>/dataset)");

    CLI::App* ev = app.add_subcommand("eval", "accuracy sweep with a trained model");
    add_common(ev);
    ev->add_option("--model", opt.model_path, "checkpoint path (default <out>/model.bscp)");

    CLI::App* cl = app.add_subcommand("classify", "blindly classify one capture");
    add_common(cl);
    cl->add_option("--model", opt.model_path, "checkpoint path")->required();
    cl->add_option("--capture", opt.capture_path, "capture file to classify")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(opt);
        if (tr->parsed()) return cmd_train(opt);
        if (ev->parsed()) return cmd_eval(opt);
        return cmd_classify(opt);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const NoOfdmDetectedError& e) {
        std::cout << "no OFDM detected: " << e.what() << '\n';
        return 4;
    } catch (const InsufficientDataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << '\n';
        return 1;
    }
}
