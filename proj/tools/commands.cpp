#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "json.hpp"
#include "stgait/checkpoint.hpp"
#include "stgait/hpo.hpp"
#include "stgait/synthetic.hpp"
#include "stgait/trainer.hpp"

namespace stgait::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string dataset;
    std::string checkpoint = "stgait.ckpt";
    std::string format;
    std::string output;
    std::string report;
    std::string split = "test";
    std::string history = "hpo_history.jsonl";
    bool resume = false;
    bool quiet = false;
    bool affective_only = false;
    int budget = 20;
    Index n_per_class = 16;
    Index frames = 48;
    double noise = kDefaultNoiseStd;
};

TrainConfig resolve_config(const Options& o) {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed_given) cfg.seed = o.seed;
    cfg.validate();
    return cfg;
}

Dataset read_data(const Options& o) {
    if (o.dataset.empty()) throw ValidationError("--dataset is required");
    return o.format.empty() ? load_dataset(o.dataset) : load_dataset(o.dataset, parse_format(o.format));
}

std::vector<Index> all_indices(Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    return idx;
}

std::vector<Index> select_split(const DatasetSplit& s, const std::string& name, Index n) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") return all_indices(n);
    throw ValidationError("unknown split '" + name + "' (train, val, test, all)");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    f << text;
}

void check_joints(const GaitClassifier& model) {
    if (model.graph.num_joints != joint::kCount) {
        throw ValidationError("checkpoint skeleton has " + std::to_string(model.graph.num_joints) +
                              " joints, datasets carry 16");
    }
}

int cmd_train(const Options& o, std::ostream& out) {
    const TrainConfig cfg = resolve_config(o);
    const SkeletonGraph graph = cfg.load_skeleton();
    const Dataset data = read_data(o);
    const DatasetSplit split = stgait::split(static_cast<Index>(data.size()), cfg.seed, cfg.split_ratios);
    split.check_disjoint_cover(static_cast<Index>(data.size()));
    const PreparedDataset prepared = prepare(data, cfg, graph);

    auto result = train(cfg, prepared, split, graph, [&](const EpochMetrics& m) {
        if (o.quiet) return;
        out << "epoch " << std::setw(4) << m.epoch << std::fixed << std::setprecision(4) << "  lr " << m.lr
            << "  train loss " << m.train_loss << " acc " << m.train_accuracy << "  val loss " << m.val_loss
            << " acc " << m.val_accuracy << std::defaultfloat << '\n';
    });
    if (!split.test.empty()) {
        result.report.timing = result.model.time_inference(prepared, split.test, cfg.timing_warmup, cfg.timing_passes);
    }
    save_checkpoint(o.checkpoint, result.model);
    write_text(o.checkpoint + ".manifest.json", run_manifest(result.model.config, split, data, o.dataset));
    if (!o.report.empty()) write_text(o.report, report_json(result.report));
    out << format_report(result.report) << "checkpoint: " << o.checkpoint << '\n';
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    GaitClassifier model = load_checkpoint(o.checkpoint);
    check_joints(model);
    const std::uint64_t seed = o.seed_given ? o.seed : model.config.seed;
    const Dataset data = read_data(o);
    const PreparedDataset prepared = prepare(data, model.config, model.graph);
    const Index n = static_cast<Index>(data.size());
    const std::vector<Index> idx =
        o.split == "all" ? all_indices(n) : select_split(stgait::split(n, seed, model.config.split_ratios), o.split, n);
    if (idx.empty()) throw ValidationError("split '" + o.split + "' is empty");
    MetricsReport report;
    report.split_name = o.split;
    report.test = model.evaluate(prepared, idx);
    report.timing = model.time_inference(prepared, idx, model.config.timing_warmup, model.config.timing_passes);
    if (!o.report.empty()) write_text(o.report, report_json(report));
    out << format_report(report);
    return kOk;
}

int cmd_infer(const Options& o, std::ostream& out) {
    GaitClassifier model = load_checkpoint(o.checkpoint);
    check_joints(model);
    const Dataset data = read_data(o);
    const PreparedDataset prepared = prepare(data, model.config, model.graph);
    const Tensor<float> probs = model.probabilities(prepared, all_indices(static_cast<Index>(data.size())));
    std::ofstream file;
    if (!o.output.empty()) {
        file.open(o.output);
        if (!file) throw ValidationError("cannot write '" + o.output + "'");
    }
    std::ostream& dst = o.output.empty() ? out : file;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<double> p(kNumEmotions);
        for (int c = 0; c < kNumEmotions; ++c) p[c] = probs.data()[static_cast<Index>(i) * kNumEmotions + c];
        const int label = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        nlohmann::json rec{{"id", data[i].sample_id}, {"label", to_string(static_cast<EmotionLabel>(label))}, {"probs", p}};
        dst << rec.dump() << '\n';
    }
    return kOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
    if (o.dataset.empty()) throw ValidationError("--dataset (output path) is required");
    SynthOptions so;
    so.noise_std = o.noise;
    const Dataset d = make_dataset(o.n_per_class, o.frames, o.seed, so);
    const DataFormat fmt = o.format.empty() ? format_from_path(o.dataset) : parse_format(o.format);
    save_dataset(o.dataset, d, fmt);
    out << "wrote " << d.size() << " sequences to " << o.dataset << '\n';
    return kOk;
}

int cmd_hpo(const Options& o, std::ostream& out) {
    const TrainConfig base = resolve_config(o);
    const SkeletonGraph graph = base.load_skeleton();
    const Dataset data = read_data(o);
    const DatasetSplit split = stgait::split(static_cast<Index>(data.size()), base.seed, base.split_ratios);
    const SearchSpace space;

    std::vector<TrialRecord> prior;
    if (o.resume && fs::exists(o.history)) prior = load_history(o.history, space);
    std::ofstream log(o.history, o.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw ValidationError("cannot write history '" + o.history + "'");

    // affective features do not depend on the searched hyperparameters
    const PreparedDataset prepared = prepare(data, base, graph);
    const Objective objective = [&](const HyperParams& h) {
        TrainConfig cfg = base;
        cfg.basic_lr = h.basic_lr;
        cfg.gcn_initializer = h.gcn_initializer;
        cfg.optimizer = h.optimizer;
        cfg.weight_decay = h.weight_decay;
        const auto r = train(cfg, prepared, split, graph);
        const auto& best = r.report.epochs.at(static_cast<std::size_t>(r.report.best_epoch));
        return TrialOutcome{split.val.empty() ? best.train_accuracy : best.val_accuracy,
                            static_cast<int>(r.report.epochs.size())};
    };
    const auto res = run_search(o.budget, objective, space, base.seed, prior, TpeOptions{}, [&](const TrialRecord& r) {
        log << format_trial(r, space) << '\n' << std::flush;
        if (!o.quiet) out << format_trial(r, space) << '\n';
    });
    if (!res.best) throw NumericError("every trial failed");
    const HyperParams h = space.decode(res.best->point);
    out << "best: basic_lr = " << h.basic_lr << ", gcn_initializer = " << to_string(h.gcn_initializer)
        << ", optimizer = " << to_string(h.optimizer) << ", weight_decay = " << h.weight_decay
        << ", objective = " << res.best->objective << " (" << res.history.size() << " trials)\n";
    return kOk;
}

int cmd_export_features(const Options& o, std::ostream& out) {
    std::ofstream file;
    if (!o.output.empty()) {
        file.open(o.output);
        if (!file) throw ValidationError("cannot write '" + o.output + "'");
    }
    std::ostream& dst = o.output.empty() ? out : file;
    if (o.affective_only) {
        const TrainConfig cfg = resolve_config(o);
        const SkeletonGraph graph = cfg.load_skeleton();
        const Dataset data = read_data(o);
        std::vector<AffectiveVector> feats;
        for (const auto& s : data) feats.push_back(extract(normalize(s, cfg.normalization), graph, cfg.frame_rate));
        write_features_csv(dst, data, feats);
        return kOk;
    }
    GaitClassifier model = load_checkpoint(o.checkpoint);
    check_joints(model);
    const Dataset data = read_data(o);
    const PreparedDataset prepared = prepare(data, model.config, model.graph);
    const auto idx = all_indices(static_cast<Index>(data.size()));
    const Tensor<float> feats = model.features(prepared, idx);
    const Tensor<float> probs = model.probabilities(prepared, idx);
    const Index width = feats.dim(1);
    dst << "id,label,prediction";
    for (Index k = 0; k < width; ++k) dst << ",f" << k;
    dst << '\n' << std::setprecision(9);
    for (Index i = 0; i < feats.dim(0); ++i) {
        Index pred = 0;
        probs.data().segment(i * kNumEmotions, kNumEmotions).maxCoeff(&pred);
        dst << data[i].sample_id << ',' << to_string(data[i].label) << ','
            << to_string(static_cast<EmotionLabel>(pred));
        for (Index k = 0; k < width; ++k) dst << ',' << feats.data()[i * width + k];
        dst << '\n';
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Emotion recognition from 3D skeleton gait with spatio-temporal graph convolutions", "stgait"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "key = value configuration file");
        sub->add_option("--set", o.overrides, "override one configuration key (key=value), repeatable");
        sub->add_option("--seed", o.seed, "random seed (overrides the configuration)")
            ->each([&](const std::string&) { o.seed_given = true; });
        sub->add_option("--dataset", o.dataset, "dataset path (.jsonl or .csv)");
        sub->add_option("--format", o.format, "dataset format: jsonl or csv (default: from extension)");
        sub->add_flag("--quiet", o.quiet, "suppress per-epoch / per-trial output");
    };

    auto* train_cmd = app.add_subcommand("train", "train a model and save a checkpoint");
    common(train_cmd);
    train_cmd->add_option("--checkpoint", o.checkpoint, "output checkpoint path");
    train_cmd->add_option("--report", o.report, "write the metrics report as JSON");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    common(eval_cmd);
    eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    eval_cmd->add_option("--split", o.split, "train, val, test or all");
    eval_cmd->add_option("--report", o.report, "write the metrics report as JSON");

    auto* infer_cmd = app.add_subcommand("infer", "write per-sample labels and probabilities as JsonLines");
    common(infer_cmd);
    infer_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    infer_cmd->add_option("--output", o.output, "output file (default: stdout)");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled gait dataset");
    common(synth_cmd);
    synth_cmd->add_option("--n-per-class", o.n_per_class, "sequences per emotion")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--frames", o.frames, "frames per sequence")->check(CLI::Range(2, 100000));
    synth_cmd->add_option("--noise", o.noise, "coordinate noise standard deviation")->check(CLI::NonNegativeNumber);

    auto* hpo_cmd = app.add_subcommand("hpo", "hyperparameter search over learning rate, initializer, optimizer, decay");
    common(hpo_cmd);
    hpo_cmd->add_option("--budget", o.budget, "total number of trials")->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--history", o.history, "JsonLines trial history");
    hpo_cmd->add_flag("--resume", o.resume, "continue from an existing history");

    auto* export_cmd = app.add_subcommand("export-features", "export penultimate features as CSV");
    common(export_cmd);
    export_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path");
    export_cmd->add_option("--output", o.output, "output file (default: stdout)");
    export_cmd->add_flag("--affective", o.affective_only, "export hand-crafted affective descriptors instead");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*train_cmd) return cmd_train(o, out);
        if (*eval_cmd) return cmd_eval(o, out);
        if (*infer_cmd) return cmd_infer(o, out);
        if (*synth_cmd) return cmd_synth(o, out);
        if (*hpo_cmd) return cmd_hpo(o, out);
        if (*export_cmd) return cmd_export_features(o, out);
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kValidation;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const DimensionError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}

}  // namespace stgait::cli
