#include "fcos/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "channel_rewrite.hpp"
#include "fcos/container.hpp"

namespace fcos {

std::string to_string(SimilarityMetric v) { return v == SimilarityMetric::Cosine ? "cosine" : "euclidean"; }
std::string to_string(FusionScheme v) { return v == FusionScheme::Mean ? "mean" : "l1"; }
std::string to_string(FusionOrder v) { return v == FusionOrder::OutputFirst ? "output-first" : "input-first"; }
std::string to_string(InputChannelMode v) { return v == InputChannelMode::ProducerTied ? "producer-tied" : "independent"; }

SimilarityMetric similarity_metric_from_string(const std::string& s) {
    if (s == "cosine") return SimilarityMetric::Cosine;
    if (s == "euclidean") return SimilarityMetric::Euclidean;
    throw ConfigError("unknown similarity '" + s + "' (expected cosine or euclidean)");
}

FusionScheme fusion_scheme_from_string(const std::string& s) {
    if (s == "mean") return FusionScheme::Mean;
    if (s == "l1" || s == "l1-weighted") return FusionScheme::L1Weighted;
    throw ConfigError("unknown fusion scheme '" + s + "' (expected mean or l1)");
}

FusionOrder fusion_order_from_string(const std::string& s) {
    if (s == "output-first") return FusionOrder::OutputFirst;
    if (s == "input-first") return FusionOrder::InputFirst;
    throw ConfigError("unknown fusion order '" + s + "' (expected output-first or input-first)");
}

InputChannelMode input_channel_mode_from_string(const std::string& s) {
    if (s == "producer-tied") return InputChannelMode::ProducerTied;
    if (s == "independent") return InputChannelMode::Independent;
    throw ConfigError("unknown input channel mode '" + s + "' (expected producer-tied or independent)");
}

double channel_similarity(std::span<const double> x, std::span<const double> y, SimilarityMetric metric) {
    if (x.size() != y.size()) throw ShapeError(-1, "channel vectors differ in length");
    if (metric == SimilarityMetric::Euclidean) {
        double d2 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
        return 1.0 / (1.0 + std::sqrt(d2));
    }
    double xy = 0, xx = 0, yy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    if (xx == 0 && yy == 0) return 1.0;
    if (xx == 0 || yy == 0) return 0.0;
    return std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
}

DistanceMatrix distance_matrix(const std::vector<std::vector<double>>& vectors, SimilarityMetric metric) {
    DistanceMatrix d;
    d.size = vectors.size();
    d.metric = metric;
    d.values.assign(d.size * d.size, 0.0);
    for (std::size_t i = 0; i < d.size; ++i) {
        for (std::size_t j = i + 1; j < d.size; ++j) {
            const double v = 1.0 - channel_similarity(vectors[i], vectors[j], metric);
            d.values[i * d.size + j] = d.values[j * d.size + i] = v;
        }
    }
    return d;
}

std::vector<std::vector<double>> channel_vectors(const Tensor& weight, ChannelAxis axis) {
    if (weight.rank() != 2 && weight.rank() != 3) throw ShapeError(-1, "channel vectors need a rank-2 or rank-3 weight");
    const std::size_t co = weight.dim(0), ci = weight.dim(1), k = weight.rank() == 3 ? weight.dim(2) : 1;
    const auto w = weight.to_doubles();
    std::vector<std::vector<double>> out;
    if (axis == ChannelAxis::Out) {
        for (std::size_t r = 0; r < co; ++r) out.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(r * ci * k), w.begin() + static_cast<std::ptrdiff_t>((r + 1) * ci * k));
    } else {
        out.assign(ci, {});
        for (std::size_t j = 0; j < ci; ++j) {
            out[j].reserve(co * k);
            for (std::size_t r = 0; r < co; ++r)
                for (std::size_t t = 0; t < k; ++t) out[j].push_back(w[(r * ci + j) * k + t]);
        }
    }
    return out;
}

DistanceMatrix channel_similarity_matrix(const Tensor& weight, ChannelAxis axis, SimilarityMetric metric) {
    return distance_matrix(channel_vectors(weight, axis), metric);
}

std::vector<std::vector<std::size_t>> ClusterAssignment::groups() const {
    std::vector<std::vector<std::size_t>> g(clusters);
    for (std::size_t i = 0; i < members.size(); ++i) g.at(members[i]).push_back(i);
    return g;
}

ClusterAssignment average_linkage_cluster(const DistanceMatrix& d, std::size_t n) {
    if (n == 0) throw UsageError("cannot cluster into zero clusters");
    const std::size_t m = d.size;
    if (n > m) throw ConfigError("cannot cluster " + std::to_string(m) + " channels into " + std::to_string(n) + " clusters");
    // active[i] holds the sorted members of the cluster whose smallest member is i.
    std::vector<std::vector<std::size_t>> active(m);
    for (std::size_t i = 0; i < m; ++i) active[i] = {i};
    std::size_t live = m;

    auto linkage = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (auto i : active[a])
            for (auto j : active[b]) s += d(i, j);
        return s / static_cast<double>(active[a].size() * active[b].size());
    };

    ClusterAssignment out;
    while (live > n) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        for (std::size_t a = 0; a < m; ++a) {
            if (active[a].empty()) continue;
            for (std::size_t b = a + 1; b < m; ++b) {
                if (active[b].empty()) continue;
                const double l = linkage(a, b);
                if (l < best) {
                    best = l;
                    ba = a;
                    bb = b;
                }
            }
        }
        out.trace.push_back({ba, bb, best});
        auto& dst = active[ba];
        dst.insert(dst.end(), active[bb].begin(), active[bb].end());
        std::sort(dst.begin(), dst.end());
        active[bb].clear();
        --live;
    }

    out.members.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
        if (active[i].empty()) continue;
        for (auto j : active[i]) out.members[j] = out.clusters;
        ++out.clusters;
    }
    return out;
}

std::vector<std::vector<double>> fuse_cluster_weights(const std::vector<std::vector<double>>& members,
                                                      const ClusterAssignment& assignment, FusionScheme scheme) {
    if (members.size() != assignment.members.size()) throw ShapeError(-1, "assignment does not cover every channel");
    const auto mix = detail::make_mix(members, assignment, scheme);
    const std::size_t len = members.empty() ? 0 : members.front().size();
    std::vector<std::vector<double>> out(mix.size());
    for (std::size_t c = 0; c < mix.size(); ++c) {
        const auto& base = members[mix[c].front().first];
        out[c] = base;
        for (const auto& [j, w] : mix[c])
            for (std::size_t t = 0; t < len; ++t) out[c][t] += w * (members[j][t] - base[t]);
    }
    return out;
}

std::size_t kept_channels(std::size_t channels, double keep_ratio) {
    if (!(keep_ratio > 0 && keep_ratio <= 1)) throw ConfigError("keep ratio must be in (0, 1]");
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * keep_ratio));
    return std::max<std::size_t>(1, n);
}

std::pair<ModelGraph, PrunePlan> prune_model_channels(const ModelGraph& model, const FusionConfig& cfg) {
    kept_channels(1, cfg.keep_ratio);  // validates the ratio
    ModelGraph g = model;
    PrunePlan plan;
    plan.config = cfg;

    // BN companions are fused with the weights of the conv that feeds them.
    std::map<int, std::vector<int>> companions_of;
    for (const auto& n : g.nodes)
        if (n.kind == LayerKind::BatchNorm) companions_of[detail::upstream_producer(g, n.inputs.at(0))].push_back(n.id);

    std::vector<std::pair<int, ClusterAssignment>> deferred;

    auto fuse_inputs = [&](int consumer, const ClusterAssignment& a) {
        auto& c = g.node(consumer);
        const auto mix = detail::make_mix(channel_vectors(c.params.at("weight"), ChannelAxis::In), a, cfg.scheme);
        detail::apply_in_mix(c, mix);
    };

    for (const auto& dim : channel_dims(model)) {
        if (!dim.prunable(model)) continue;
        DimensionPlan dp;
        dp.producers = dim.producers;
        dp.consumers = dim.consumers;
        dp.channels_before = dim.channels;
        dp.channels_after = kept_channels(dim.channels, cfg.keep_ratio);

        std::vector<std::vector<double>> joint(dim.channels);
        for (int p : dim.producers) {
            const auto rows = channel_vectors(g.node(p).params.at("weight"), ChannelAxis::Out);
            for (std::size_t j = 0; j < dim.channels; ++j) joint[j].insert(joint[j].end(), rows[j].begin(), rows[j].end());
        }
        dp.assignment = average_linkage_cluster(distance_matrix(joint, cfg.metric), dp.channels_after);

        for (int p : dim.producers) {
            auto& node = g.node(p);
            const auto mix = detail::make_mix(channel_vectors(node.params.at("weight"), ChannelAxis::Out), dp.assignment, cfg.scheme);
            detail::apply_out_mix(node, mix);
            for (int bn : companions_of[p]) detail::apply_companion_mix(g.node(bn), mix);
        }

        for (int c : dim.consumers) {
            ClusterAssignment a = dp.assignment;
            if (cfg.input_mode == InputChannelMode::Independent) {
                a = average_linkage_cluster(channel_similarity_matrix(g.node(c).params.at("weight"), ChannelAxis::In, cfg.metric),
                                            dp.channels_after);
                dp.consumer_assignments[c] = a;
            }
            if (cfg.order == FusionOrder::InputFirst) {
                fuse_inputs(c, a);
            } else {
                deferred.emplace_back(c, std::move(a));
            }
        }
        plan.dims.push_back(std::move(dp));
    }
    for (const auto& [c, a] : deferred) fuse_inputs(c, a);

    if (plan.dims.empty()) spdlog::warn("model has no prunable conv channels; channel fusion is a no-op");
    detail::sync_channel_counts(g);
    refresh_coupled_groups(g);
    validate(g);
    return {std::move(g), std::move(plan)};
}

namespace {

nlohmann::json assignment_json(const ClusterAssignment& a) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& m : a.trace) trace.push_back({m.a, m.b, m.distance});
    return {{"members", a.members}, {"clusters", a.clusters}, {"trace", trace}};
}

ClusterAssignment assignment_from_json(const nlohmann::json& j) {
    ClusterAssignment a;
    a.members = j.at("members").get<std::vector<std::size_t>>();
    a.clusters = j.at("clusters").get<std::size_t>();
    for (const auto& m : j.at("trace")) a.trace.push_back({m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>(), m.at(2).get<double>()});
    return a;
}

}  // namespace

nlohmann::json to_json(const PrunePlan& plan) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : plan.dims) {
        nlohmann::json consumers = nlohmann::json::object();
        for (const auto& [id, a] : d.consumer_assignments) consumers[std::to_string(id)] = assignment_json(a);
        dims.push_back({{"producers", d.producers},
                        {"consumers", d.consumers},
                        {"channels_before", d.channels_before},
                        {"channels_after", d.channels_after},
                        {"assignment", assignment_json(d.assignment)},
                        {"consumer_assignments", consumers}});
    }
    return {{"keep_ratio", plan.config.keep_ratio},
            {"similarity", to_string(plan.config.metric)},
            {"fusion", to_string(plan.config.scheme)},
            {"order", to_string(plan.config.order)},
            {"input_channels", to_string(plan.config.input_mode)},
            {"dims", dims}};
}

PrunePlan prune_plan_from_json(const nlohmann::json& j) {
    try {
        PrunePlan p;
        p.config.keep_ratio = j.at("keep_ratio").get<double>();
        p.config.metric = similarity_metric_from_string(j.at("similarity").get<std::string>());
        p.config.scheme = fusion_scheme_from_string(j.at("fusion").get<std::string>());
        p.config.order = fusion_order_from_string(j.at("order").get<std::string>());
        p.config.input_mode = input_channel_mode_from_string(j.at("input_channels").get<std::string>());
        for (const auto& d : j.at("dims")) {
            DimensionPlan dp;
            dp.producers = d.at("producers").get<std::vector<int>>();
            dp.consumers = d.at("consumers").get<std::vector<int>>();
            dp.channels_before = d.at("channels_before").get<std::size_t>();
            dp.channels_after = d.at("channels_after").get<std::size_t>();
            dp.assignment = assignment_from_json(d.at("assignment"));
            for (const auto& [id, a] : d.at("consumer_assignments").items()) dp.consumer_assignments[std::stoi(id)] = assignment_from_json(a);
            p.dims.push_back(std::move(dp));
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Malformed, std::string("malformed prune plan: ") + e.what());
    }
}

void save_prune_plan(const PrunePlan& plan, const std::filesystem::path& path) {
    Container c;
    c.descriptor = {{"kind", "prune_plan"}, {"plan", to_json(plan)}};
    write_container(c, path);
}

PrunePlan load_prune_plan(const std::filesystem::path& path) {
    const auto c = read_container(path);
    if (c.descriptor.value("kind", "") != "prune_plan") throw FormatError(FormatErrorKind::Malformed, path.string() + " is not a prune plan");
    return prune_plan_from_json(c.descriptor.at("plan"));
}

}  // namespace fcos
