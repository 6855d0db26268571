#include "fcos/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fcos/report.hpp"

namespace fcos {

namespace {

struct Field {
    const char* key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& s) {
    const auto t = trim(s);
    T v{};
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size()) throw ConfigError("'" + t + "' is not a valid number");
    return v;
}

bool parse_bool(const std::string& s) {
    const auto t = trim(s);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw ConfigError("'" + t + "' is not a boolean");
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
    return out;
}

std::string num(double v) { return format_number(v); }

Sections fields(ExperimentConfig& c) {
    auto& d = c.dataset;
    auto& m = c.model;
    auto& t = c.train;
    auto& f = c.fcos;
    auto& b = c.baseline;
    Sections s;
    s.push_back({"dataset",
                 {
                     {"classes",
                      [&](const std::string& v) {
                          d.spec.classes.clear();
                          for (const auto& n : split_list(v)) d.spec.classes.push_back(modulation_from_string(n));
                      },
                      [&] { return join<Modulation>(d.spec.classes, [](const Modulation& x) { return to_string(x); }); }},
                     {"snr_db",
                      [&](const std::string& v) {
                          d.spec.snr_db.clear();
                          for (const auto& n : split_list(v)) d.spec.snr_db.push_back(parse_number<double>(n));
                      },
                      [&] { return join<double>(d.spec.snr_db, [](const double& x) { return num(x); }); }},
                     {"per_cell", [&](const std::string& v) { d.spec.per_cell = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(d.spec.per_cell); }},
                     {"length", [&](const std::string& v) { d.spec.length = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(d.spec.length); }},
                     {"seed", [&](const std::string& v) { d.spec.seed = parse_number<std::uint64_t>(v); },
                      [&] { return std::to_string(d.spec.seed); }},
                     {"noise", [&](const std::string& v) { d.spec.waveform.noise = parse_bool(v); },
                      [&] { return std::string(d.spec.waveform.noise ? "true" : "false"); }},
                     {"path", [&](const std::string& v) { d.path = trim(v); }, [&] { return d.path.string(); }},
                 }});
    s.push_back({"model",
                 {
                     {"arch",
                      [&](const std::string& v) {
                          const auto def = default_architecture(trim(v));
                          m.name = def.name;
                          m.widths = def.widths;
                          m.kernel = def.kernel;
                      },
                      [&] { return m.name; }},
                     {"widths",
                      [&](const std::string& v) {
                          m.widths.clear();
                          for (const auto& n : split_list(v)) m.widths.push_back(parse_number<std::size_t>(n));
                      },
                      [&] { return join<std::size_t>(m.widths, [](const std::size_t& x) { return std::to_string(x); }); }},
                     {"kernel", [&](const std::string& v) { m.kernel = parse_number<std::size_t>(v); }, [&] { return std::to_string(m.kernel); }},
                     {"blocks_per_stage", [&](const std::string& v) { m.blocks_per_stage = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(m.blocks_per_stage); }},
                     {"batchnorm", [&](const std::string& v) { m.batchnorm = parse_bool(v); },
                      [&] { return std::string(m.batchnorm ? "true" : "false"); }},
                 }});
    s.push_back({"train",
                 {
                     {"lr", [&](const std::string& v) { t.lr = parse_number<double>(v); }, [&] { return num(t.lr); }},
                     {"batch", [&](const std::string& v) { t.batch = parse_number<std::size_t>(v); }, [&] { return std::to_string(t.batch); }},
                     {"epochs", [&](const std::string& v) { t.epochs = parse_number<std::size_t>(v); }, [&] { return std::to_string(t.epochs); }},
                     {"optimizer", [&](const std::string& v) { t.optimizer = optimizer_method_from_string(trim(v)); },
                      [&] { return to_string(t.optimizer); }},
                     {"seed", [&](const std::string& v) { t.seed = parse_number<std::uint64_t>(v); }, [&] { return std::to_string(t.seed); }},
                 }});
    s.push_back({"fcos",
                 {
                     {"keep_ratio", [&](const std::string& v) { f.fusion.keep_ratio = parse_number<double>(v); },
                      [&] { return num(f.fusion.keep_ratio); }},
                     {"similarity", [&](const std::string& v) { f.fusion.metric = similarity_metric_from_string(trim(v)); },
                      [&] { return to_string(f.fusion.metric); }},
                     {"fusion", [&](const std::string& v) { f.fusion.scheme = fusion_scheme_from_string(trim(v)); },
                      [&] { return to_string(f.fusion.scheme); }},
                     {"order", [&](const std::string& v) { f.fusion.order = fusion_order_from_string(trim(v)); },
                      [&] { return to_string(f.fusion.order); }},
                     {"input_channels", [&](const std::string& v) { f.fusion.input_mode = input_channel_mode_from_string(trim(v)); },
                      [&] { return to_string(f.fusion.input_mode); }},
                     {"beta", [&](const std::string& v) { f.beta = parse_number<double>(v); }, [&] { return num(f.beta); }},
                     {"warm_epochs", [&](const std::string& v) { f.warm_epochs = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(f.warm_epochs); }},
                     {"probe_epochs", [&](const std::string& v) { f.probe_epochs = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(f.probe_epochs); }},
                     {"final_epochs", [&](const std::string& v) { f.final_epochs = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(f.final_epochs); }},
                     {"features", [&](const std::string& v) { f.features = feature_reduction_from_string(trim(v)); },
                      [&] { return to_string(f.features); }},
                 }});
    s.push_back({"baseline",
                 {
                     {"method",
                      [&](const std::string& v) {
                          const auto tv = trim(v);
                          if (tv == "none" || tv.empty()) {
                              b.method.reset();
                          } else {
                              b.method = baseline_method_from_string(tv);
                          }
                      },
                      [&] { return b.method ? to_string(*b.method) : std::string("none"); }},
                     {"keep_ratio", [&](const std::string& v) { b.keep_ratio = parse_number<double>(v); }, [&] { return num(b.keep_ratio); }},
                     {"count", [&](const std::string& v) { b.count = parse_number<std::size_t>(v); }, [&] { return std::to_string(b.count); }},
                     {"seed", [&](const std::string& v) { b.seed = parse_number<std::uint64_t>(v); }, [&] { return std::to_string(b.seed); }},
                     {"finetune_epochs", [&](const std::string& v) { b.finetune_epochs = parse_number<std::size_t>(v); },
                      [&] { return std::to_string(b.finetune_epochs); }},
                 }});
    s.push_back({"output", {{"dir", [&](const std::string& v) { c.output_dir = trim(v); }, [&] { return c.output_dir.string(); }}}});
    return s;
}

void check_ranges(const ExperimentConfig& c, std::vector<std::string>& errors) {
    auto need = [&](bool ok, const std::string& field, const std::string& what) {
        if (!ok) errors.push_back(field + ": " + what);
    };
    if (c.dataset.path.empty()) {
        need(c.dataset.spec.classes.size() >= 2, "dataset.classes", "needs at least two classes");
        need(!c.dataset.spec.snr_db.empty(), "dataset.snr_db", "must not be empty");
        need(c.dataset.spec.per_cell >= 5, "dataset.per_cell", "must be at least 5");
        need(c.dataset.spec.length >= 64, "dataset.length", "must be at least 64");
    }
    need(!c.model.widths.empty(), "model.widths", "must not be empty");
    for (auto w : c.model.widths) need(w > 0, "model.widths", "widths must be positive");
    need(c.model.blocks_per_stage > 0, "model.blocks_per_stage", "must be positive");
    need(c.train.lr > 0, "train.lr", "must be positive");
    need(c.train.batch > 0, "train.batch", "must be positive");
    need(c.fcos.fusion.keep_ratio > 0 && c.fcos.fusion.keep_ratio <= 1, "fcos.keep_ratio", "must lie in (0, 1]");
    need(c.fcos.beta > 0 && c.fcos.beta < 1, "fcos.beta", "must lie in (0, 1)");
    need(c.baseline.keep_ratio > 0 && c.baseline.keep_ratio <= 1, "baseline.keep_ratio", "must lie in (0, 1]");
}

}  // namespace

ExperimentConfig::ExperimentConfig() : model(default_architecture("plain-cnn1d")) {}

void ExperimentConfig::override_seed(std::uint64_t seed) {
    dataset.spec.seed = seed;
    model.seed = seed;
    train.seed = seed;
    baseline.seed = seed;
}

TrainOptions ExperimentConfig::train_options(const std::string& phase, std::size_t epochs) const {
    TrainOptions o;
    o.epochs = epochs;
    o.batch = train.batch;
    o.optimizer.method = train.optimizer;
    o.optimizer.lr = train.lr;
    o.seed = train.seed;
    o.phase = phase;
    return o;
}

ProbeOptions ExperimentConfig::probe_options(unsigned workers) const {
    ProbeOptions o;
    o.epochs = fcos.probe_epochs;
    o.batch = train.batch;
    o.lr = train.lr;
    o.seed = train.seed;
    o.reduction = fcos.features;
    o.workers = workers;
    return o;
}

LacdOptions ExperimentConfig::lacd_options(unsigned workers) const {
    LacdOptions o;
    o.beta = fcos.beta;
    o.warm_epochs = fcos.warm_epochs;
    o.final_epochs = fcos.final_epochs;
    o.train = train_options("warm", fcos.warm_epochs);
    o.probe = probe_options(workers);
    o.rewire.euclidean = fcos.fusion.metric == SimilarityMetric::Euclidean;
    o.rewire.l1_weighted = fcos.fusion.scheme == FusionScheme::L1Weighted;
    return o;
}

ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }

    ExperimentConfig cfg;
    auto table = fields(cfg);
    std::vector<std::string> errors;
    for (const auto& [section, body] : tree) {
        auto sec = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.first == section; });
        if (sec == table.end()) {
            errors.push_back(section + ": unknown section");
            continue;
        }
        if (!body.data().empty()) errors.push_back(section + ": expected a [section] header");
        for (const auto& [key, _] : body) {
            if (std::none_of(sec->second.begin(), sec->second.end(), [&](const Field& f) { return key == f.key; }))
                errors.push_back(section + "." + key + ": unknown key");
        }
        // Table order, so that model.arch is applied before model.widths.
        for (const auto& f : sec->second) {
            auto v = body.get_child_optional(pt::ptree::path_type(f.key, '\0'));
            if (!v) continue;
            try {
                f.set(v->data());
            } catch (const Error& e) {
                errors.push_back(section + "." + f.key + ": " + e.what());
            }
        }
    }
    check_ranges(cfg, errors);
    cfg.model.num_classes = cfg.dataset.spec.classes.size();
    cfg.model.in_length = cfg.dataset.spec.length;
    cfg.model.seed = cfg.train.seed;
    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string normalized_section(const ExperimentConfig& cfg, const std::string& section) {
    ExperimentConfig copy = cfg;
    for (const auto& [name, body] : fields(copy)) {
        if (name != section) continue;
        std::string out = "[" + name + "]\n";
        for (const auto& f : body) out += std::string(f.key) + " = " + f.get() + "\n";
        return out;
    }
    throw UsageError("unknown config section '" + section + "'");
}

std::string to_ini(const ExperimentConfig& cfg) {
    std::string out;
    for (const char* s : {"dataset", "model", "train", "fcos", "baseline", "output"}) out += normalized_section(cfg, s) + "\n";
    return out;
}

}  // namespace fcos
