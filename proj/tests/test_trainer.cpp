#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stgait/checkpoint.hpp"
#include "stgait/synthetic.hpp"
#include "stgait/trainer.hpp"

using namespace stgait;

namespace {

TrainConfig small_config(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.window = 24;
    cfg.timing_passes = 4;
    cfg.timing_warmup = 1;
    return cfg;
}

}  // namespace

TEST_CASE("convergence epoch: hand-worked histories") {
    const std::vector<double> falling{5, 4, 3, 2, 1};
    CHECK(convergence_epoch(falling, 2, 1e-4) == -1);

    // best 2.0 at epoch 1, then two epochs without improvement
    const std::vector<double> plateau{3, 2, 2.5, 2.1, 1.0};
    CHECK(convergence_epoch(plateau, 2, 1e-4) == 1);

    // improvement smaller than epsilon does not count
    const std::vector<double> tiny{1.0, 0.99995, 0.9999, 0.5};
    CHECK(convergence_epoch(tiny, 2, 1e-3) == 0);
    CHECK(convergence_epoch(tiny, 2, 1e-5) == -1);

    const std::vector<double> flat(10, 1.0);
    CHECK(convergence_epoch(flat, 3, 1e-4) == 0);
    CHECK(convergence_epoch(flat, 10, 1e-4) == -1);
}

TEST_CASE("confusion matrix: perfect and constant classifiers") {
    const std::vector<int> truth{0, 1, 2, 3, 0, 1, 2, 3, 3, 3};
    const auto perfect = confusion_matrix(truth, truth);
    for (int g = 0; g < 4; ++g)
        for (int c = 0; c < 4; ++c) CHECK(perfect[g][c] == (g == c ? (g == 3 ? 4 : 2) : 0));
    CHECK(accuracy(perfect) == 1.0);

    const std::vector<int> constant(truth.size(), 3);
    const auto m = confusion_matrix(truth, constant);
    for (int g = 0; g < 4; ++g) {
        for (int c = 0; c < 3; ++c) CHECK(m[g][c] == 0);
    }
    CHECK(total(m) == 10);
    CHECK(accuracy(m) == doctest::Approx(0.4));
    CHECK(accuracy(ConfusionMatrix{}) == 0.0);

    const std::vector<int> bad{0, 4};
    CHECK_THROWS(confusion_matrix(std::vector<int>{0, 1}, bad));
}

TEST_CASE("config: text round trip and errors") {
    TrainConfig cfg;
    cfg.epochs = 17;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.gcn_initializer = TopologyMode::Importance;
    cfg.lr_milestones = {5, 10};
    cfg.split_ratios = {6, 3, 1};
    cfg.class_weighting = ClassWeighting::Explicit;
    cfg.class_weights = {1, 2, 3, 4};
    cfg.fusion_point = FusionPoint::Input;
    cfg.temporal_branches = "conv3d1,pw";
    cfg.seed = 12345678901234ULL;
    cfg.basic_lr = 0.0123456789;

    std::istringstream in(format_train_config(cfg));
    const TrainConfig back = parse_train_config(in);
    CHECK(format_train_config(back) == format_train_config(cfg));
    CHECK(back.seed == cfg.seed);
    CHECK(back.basic_lr == cfg.basic_lr);
    CHECK(back.lr_milestones == cfg.lr_milestones);

    std::istringstream comments("# comment\n\nepochs = 3   # trailing\noptimizer = sgd\n");
    const TrainConfig c = parse_train_config(comments);
    CHECK(c.epochs == 3);
    CHECK(c.optimizer == OptimizerKind::SGD);

    std::istringstream unknown("epochs = 3\nlearning_speed = 2\n");
    try {
        parse_train_config(unknown);
        FAIL("unknown key accepted");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    std::istringstream bad_value("epochs = many\n");
    CHECK_THROWS_AS(parse_train_config(bad_value), ParseError);

    TrainConfig invalid;
    invalid.batch_size = 0;
    CHECK_THROWS_AS(invalid.validate(), ValidationError);
}

TEST_CASE("split arithmetic on 2177 samples sums and stays disjoint") {
    const DatasetSplit s = split(2177, 0, {7, 2, 1});
    CHECK(s.train.size() + s.val.size() + s.test.size() == 2177);
    CHECK_NOTHROW(s.check_disjoint_cover(2177));
}

TEST_CASE("training: fixed seed gives bitwise identical runs") {
    const Dataset data = make_dataset(4, 30, 7);
    TrainConfig cfg = small_config(2);
    const SkeletonGraph graph = cfg.load_skeleton();
    const PreparedDataset prepared = prepare(data, cfg, graph);
    const DatasetSplit sp = split(prepared.size(), cfg.seed, cfg.split_ratios);

    const auto a = train(cfg, prepared, sp, graph);
    const auto b = train(cfg, prepared, sp, graph);
    REQUIRE(a.report.epochs.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
        CHECK(a.report.epochs[e].val_loss == b.report.epochs[e].val_loss);
    }
    cfg.seed = 1;
    const auto c = train(cfg, prepared, sp, graph);
    CHECK(c.report.epochs[0].train_loss != a.report.epochs[0].train_loss);
}

TEST_CASE("training: non-finite input aborts with epoch and sample ids") {
    Dataset data = make_dataset(4, 30, 3);
    TrainConfig cfg = small_config(1);
    cfg.affective_fusion = false;
    const SkeletonGraph graph = cfg.load_skeleton();
    const DatasetSplit sp = split(static_cast<Index>(data.size()), cfg.seed, cfg.split_ratios);
    // finite in double, infinite once cast to the float network
    data[static_cast<std::size_t>(sp.train[0])].frames.setConstant(1e300);
    const PreparedDataset prepared = prepare(data, cfg, graph);
    try {
        train(cfg, prepared, sp, graph);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find(data[static_cast<std::size_t>(sp.train[0])].sample_id) != std::string::npos);
    }
}

TEST_CASE("checkpoint: round trip reproduces predictions exactly") {
    const Dataset data = make_dataset(6, 30, 11);
    TrainConfig cfg = small_config(3);
    cfg.class_weighting = ClassWeighting::InverseFrequency;
    const SkeletonGraph graph = cfg.load_skeleton();
    const PreparedDataset prepared = prepare(data, cfg, graph);
    const DatasetSplit sp = split(prepared.size(), cfg.seed, cfg.split_ratios);
    auto result = train(cfg, prepared, sp, graph);

    std::stringstream buf;
    write_checkpoint(buf, result.model);
    GaitClassifier loaded = read_checkpoint(buf);
    CHECK(format_train_config(loaded.config) == format_train_config(result.model.config));
    CHECK(loaded.config.class_weighting == ClassWeighting::Explicit);

    const PreparedDataset again = prepare(data, loaded.config, loaded.graph);
    const auto before = result.model.evaluate(prepared, sp.test);
    const auto after = loaded.evaluate(again, sp.test);
    CHECK(before.accuracy == after.accuracy);
    CHECK(before.loss == after.loss);
    CHECK(before.predictions == after.predictions);

    std::vector<Index> all(static_cast<std::size_t>(prepared.size()));
    std::iota(all.begin(), all.end(), Index{0});
    const auto p = result.model.probabilities(prepared, all);
    const auto q = loaded.probabilities(again, all);
    CHECK((p.data().array() == q.data().array()).all());
}

TEST_CASE("checkpoint: corrupt input is rejected") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_checkpoint(empty), ValidationError);
    std::istringstream wrong("NOTACKPTxxxxxxxxxxxx");
    CHECK_THROWS_AS(read_checkpoint(wrong), ValidationError);

    const TrainConfig cfg = small_config(1);
    GaitClassifier model(cfg, cfg.load_skeleton(), 1);
    std::stringstream buf;
    write_checkpoint(buf, model);
    std::string bytes = buf.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(read_checkpoint(truncated), ValidationError);
    bytes[8] = 2;  // version
    std::istringstream versioned(bytes);
    CHECK_THROWS_AS(read_checkpoint(versioned), ValidationError);
}

TEST_CASE("report and manifest") {
    const Dataset data = make_dataset(3, 30, 5);
    const TrainConfig cfg = small_config(2);
    const SkeletonGraph graph = cfg.load_skeleton();
    const PreparedDataset prepared = prepare(data, cfg, graph);
    const DatasetSplit sp = split(prepared.size(), cfg.seed, cfg.split_ratios);
    auto r = train(cfg, prepared, sp, graph);
    r.report.timing = r.model.time_inference(prepared, sp.test, 1, 3);

    const std::string text = format_report(r.report);
    CHECK(text.find("confusion matrix") != std::string::npos);
    CHECK(text.find("inference per sample") != std::string::npos);

    const auto j = nlohmann::json::parse(report_json(r.report));
    CHECK(j.at("epochs").size() == 2);
    CHECK(j.at("split").get<std::string>() == "test");
    CHECK(j.contains("timing_ms"));

    const auto m = nlohmann::json::parse(run_manifest(r.model.config, sp, data, "synthetic.jsonl"));
    CHECK(m.at("samples").get<int>() == 12);
    CHECK(m.at("split").at("train").size() == sp.train.size());
    CHECK(m.at("version").get<std::string>() == library_version());
}
