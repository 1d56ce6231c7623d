#include "stgait/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stgait {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

double to_real(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

long long to_int(const std::string& s) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

std::uint64_t to_uint(const std::string& s) {
    if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer");
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("expected a boolean");
}

// shortest text that parses back to the same double
std::string real(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string item(double v) { return real(v); }
std::string item(int v) { return std::to_string(v); }

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + item(v[i]);
    return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = static_cast<int>(to_int(v)); }},
        {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = to_int(v); }},
        {"optimizer", [](TrainConfig& c, const std::string& v) { c.optimizer = parse_optimizer(v); }},
        {"basic_lr", [](TrainConfig& c, const std::string& v) { c.basic_lr = to_real(v); }},
        {"momentum", [](TrainConfig& c, const std::string& v) { c.momentum = to_real(v); }},
        {"weight_decay", [](TrainConfig& c, const std::string& v) { c.weight_decay = to_real(v); }},
        {"gcn_initializer", [](TrainConfig& c, const std::string& v) { c.gcn_initializer = parse_topology_mode(v); }},
        {"lr_milestones",
         [](TrainConfig& c, const std::string& v) {
             c.lr_milestones.clear();
             for (const auto& t : split_list(v)) c.lr_milestones.push_back(static_cast<int>(to_int(t)));
         }},
        {"lr_decay", [](TrainConfig& c, const std::string& v) { c.lr_decay = to_real(v); }},
        {"split_ratios",
         [](TrainConfig& c, const std::string& v) {
             const auto parts = split_list(v);
             if (parts.size() != 3) throw std::invalid_argument("expected three ratios");
             for (std::size_t i = 0; i < 3; ++i) c.split_ratios[i] = to_real(parts[i]);
         }},
        {"window", [](TrainConfig& c, const std::string& v) { c.window = to_int(v); }},
        {"seed", [](TrainConfig& c, const std::string& v) { c.seed = to_uint(v); }},
        {"normalization", [](TrainConfig& c, const std::string& v) { c.normalization = parse_normalization(v); }},
        {"skeleton", [](TrainConfig& c, const std::string& v) { c.skeleton = v; }},
        {"frame_rate", [](TrainConfig& c, const std::string& v) { c.frame_rate = to_real(v); }},
        {"affective_fusion", [](TrainConfig& c, const std::string& v) { c.affective_fusion = to_bool(v); }},
        {"fusion_point", [](TrainConfig& c, const std::string& v) { c.fusion_point = parse_fusion_point(v); }},
        {"class_weights",
         [](TrainConfig& c, const std::string& v) {
             c.class_weights.clear();
             if (v == "uniform") {
                 c.class_weighting = ClassWeighting::Uniform;
             } else if (v == "inverse_frequency") {
                 c.class_weighting = ClassWeighting::InverseFrequency;
             } else {
                 c.class_weighting = ClassWeighting::Explicit;
                 for (const auto& t : split_list(v)) c.class_weights.push_back(to_real(t));
             }
         }},
        {"temporal_branches",
         [](TrainConfig& c, const std::string& v) {
             parse_branches(v);
             c.temporal_branches = v;
         }},
        {"batch_norm", [](TrainConfig& c, const std::string& v) { c.batch_norm = to_bool(v); }},
        {"learn_topology", [](TrainConfig& c, const std::string& v) { c.learn_topology = to_bool(v); }},
        {"convergence_patience", [](TrainConfig& c, const std::string& v) { c.convergence_patience = static_cast<int>(to_int(v)); }},
        {"convergence_epsilon", [](TrainConfig& c, const std::string& v) { c.convergence_epsilon = to_real(v); }},
        {"timing_warmup", [](TrainConfig& c, const std::string& v) { c.timing_warmup = static_cast<int>(to_int(v)); }},
        {"timing_passes", [](TrainConfig& c, const std::string& v) { c.timing_passes = static_cast<int>(to_int(v)); }},
    };
    return table;
}

}  // namespace

std::string to_string(ClassWeighting w) {
    switch (w) {
        case ClassWeighting::Uniform: return "uniform";
        case ClassWeighting::InverseFrequency: return "inverse_frequency";
        case ClassWeighting::Explicit: return "explicit";
    }
    return "uniform";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (window < 1) throw ValidationError("window must be positive");
    for (double r : split_ratios)
        if (!(r >= 0)) throw ValidationError("split ratios must be non-negative");
    if (!(split_ratios[0] > 0)) throw ValidationError("train ratio must be positive");
    if (!(frame_rate > 0)) throw ValidationError("frame_rate must be positive");
    if (convergence_patience < 1 || !(convergence_epsilon >= 0)) throw ValidationError("bad convergence settings");
    if (timing_warmup < 0 || timing_passes < 0) throw ValidationError("timing counts must be non-negative");
    if (class_weighting == ClassWeighting::Explicit) CrossEntropyConfig{class_weights}.validate(kNumEmotions);
    if (!(lr_decay > 0)) throw ValidationError("lr_decay must be positive");
    optimizer_config().validate();
    model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.topology = gcn_initializer;
    m.learn_topology = learn_topology;
    m.branches = parse_branches(temporal_branches);
    m.batch_norm = batch_norm;
    m.num_classes = kNumEmotions;
    m.affective_width = affective_fusion ? kAffectiveWidth : 0;
    m.fusion = affective_fusion ? fusion_point : FusionPoint::None;
    return m;
}

OptimizerConfig TrainConfig::optimizer_config() const {
    OptimizerConfig o;
    o.kind = optimizer;
    o.lr = basic_lr;
    o.momentum = momentum;
    o.weight_decay = weight_decay;
    return o;
}

SkeletonGraph TrainConfig::load_skeleton() const {
    return skeleton == "default" ? build_default_skeleton() : load_skeleton_file(skeleton);
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value, long line) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ParseError("unknown config key '" + key + "'", line);
    try {
        it->second(cfg, value);
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError("bad value '" + value + "' for '" + key + "': " + e.what(), line);
    }
}

TrainConfig parse_train_config(std::istream& in, TrainConfig base) {
    std::string text;
    long line = 0;
    while (std::getline(in, text)) {
        ++line;
        const auto hash = text.find('#');
        if (hash != std::string::npos) text.resize(hash);
        text = trim(text);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
        set_config_value(base, trim(text.substr(0, eq)), trim(text.substr(eq + 1)), line);
    }
    base.validate();
    return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
    return parse_train_config(in, std::move(base));
}

std::string format_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "epochs = " << c.epochs << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "optimizer = " << to_string(c.optimizer) << '\n'
        << "basic_lr = " << real(c.basic_lr) << '\n'
        << "momentum = " << real(c.momentum) << '\n'
        << "weight_decay = " << real(c.weight_decay) << '\n'
        << "gcn_initializer = " << to_string(c.gcn_initializer) << '\n'
        << "lr_milestones = " << join(c.lr_milestones) << '\n'
        << "lr_decay = " << real(c.lr_decay) << '\n'
        << "split_ratios = " << join(std::vector<double>(c.split_ratios.begin(), c.split_ratios.end())) << '\n'
        << "window = " << c.window << '\n'
        << "seed = " << c.seed << '\n'
        << "normalization = " << to_string(c.normalization) << '\n'
        << "skeleton = " << c.skeleton << '\n'
        << "frame_rate = " << real(c.frame_rate) << '\n'
        << "affective_fusion = " << (c.affective_fusion ? "true" : "false") << '\n'
        << "fusion_point = " << to_string(c.fusion_point) << '\n'
        << "class_weights = "
        << (c.class_weighting == ClassWeighting::Explicit ? join(c.class_weights) : to_string(c.class_weighting)) << '\n'
        << "temporal_branches = " << c.temporal_branches << '\n'
        << "batch_norm = " << (c.batch_norm ? "true" : "false") << '\n'
        << "learn_topology = " << (c.learn_topology ? "true" : "false") << '\n'
        << "convergence_patience = " << c.convergence_patience << '\n'
        << "convergence_epsilon = " << real(c.convergence_epsilon) << '\n'
        << "timing_warmup = " << c.timing_warmup << '\n'
        << "timing_passes = " << c.timing_passes << '\n';
    return out.str();
}

}  // namespace stgait
