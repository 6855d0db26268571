#include "fcos/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "fcos/container.hpp"
#include "fcos/hash.hpp"
#include "parallel.hpp"

namespace fcos {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

const std::array<const char*, 6> kModulationNames = {"BPSK", "QPSK", "8PSK", "16QAM", "4ASK", "GFSK"};

cd draw_symbol(Modulation m, std::mt19937_64& rng) {
    auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
    switch (m) {
        case Modulation::BPSK: return {pick(2) ? 1.0 : -1.0, 0.0};
        case Modulation::QPSK: return std::polar(1.0, kPi / 4 + kPi / 2 * pick(4));
        case Modulation::PSK8: return std::polar(1.0, kPi / 4 * pick(8));
        case Modulation::QAM16: {
            const double lv[4] = {-3, -1, 1, 3};
            return cd(lv[pick(4)], lv[pick(4)]) / std::sqrt(10.0);
        }
        case Modulation::ASK4: {
            const double lv[4] = {-3, -1, 1, 3};
            return {lv[pick(4)] / std::sqrt(5.0), 0.0};
        }
        case Modulation::GFSK: break;
    }
    throw UsageError("GFSK has no symbol constellation");
}

std::vector<cd> linear_burst(Modulation m, std::size_t length, std::size_t tau, std::mt19937_64& rng) {
    static const auto taps = rrc_taps(kRolloff, kSamplesPerSymbol, kFilterSpan);
    const std::size_t sps = kSamplesPerSymbol, delay = kFilterSpan * sps / 2;
    const std::size_t nsym = length / sps + 2 * kFilterSpan + 2;
    std::vector<cd> sym(nsym);
    for (auto& s : sym) s = draw_symbol(m, rng);

    // Filter output index n sees symbol k through tap n - k*sps; window starts one span in.
    const std::size_t n0 = kFilterSpan * sps + delay + tau;
    std::vector<cd> out(length);
    for (std::size_t i = 0; i < length; ++i) {
        const std::size_t n = n0 + i;
        cd acc = 0;
        const std::size_t k_lo = n >= 2 * delay ? (n - 2 * delay + sps - 1) / sps : 0;
        for (std::size_t k = k_lo; k * sps <= n && k < nsym; ++k) acc += taps[n - k * sps] * sym[k];
        out[i] = acc;
    }
    return out;
}

std::vector<cd> gfsk_burst(std::size_t length, std::size_t tau, std::mt19937_64& rng) {
    const std::size_t sps = kSamplesPerSymbol;
    constexpr double bt = 0.35, h = 0.5;
    constexpr std::size_t gspan = 4;
    const double sigma = std::sqrt(std::log(2.0)) / (2 * kPi * bt);
    std::vector<double> g(gspan * sps + 1);
    double gsum = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(gspan * sps) / 2) / static_cast<double>(sps);
        gsum += g[i] = std::exp(-t * t / (2 * sigma * sigma));
    }
    for (auto& v : g) v /= gsum;

    const std::size_t nsym = length / sps + gspan + 2;
    std::vector<double> nrz(nsym * sps);
    for (std::size_t k = 0; k < nsym; ++k) {
        const double b = (rng() & 1) ? 1.0 : -1.0;
        for (std::size_t j = 0; j < sps; ++j) nrz[k * sps + j] = b;
    }
    const std::size_t start = gspan * sps + tau;
    std::vector<cd> out(length);
    double phase = 0;
    for (std::size_t n = gspan * sps / 2; n < start + length; ++n) {
        double f = 0;
        for (std::size_t t = 0; t < g.size() && t <= n; ++t) f += g[t] * nrz[n - t];
        phase += kPi * h * f / static_cast<double>(sps);
        if (n >= start) out[n - start] = std::polar(1.0, phase);
    }
    return out;
}

std::mt19937_64 cell_engine(std::uint64_t seed, std::size_t cls, std::size_t snr_idx, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(cls),
                      static_cast<std::uint32_t>(snr_idx), stream};
    return std::mt19937_64(seq);
}

FormatError malformed(const std::string& what) { return FormatError(FormatErrorKind::Malformed, "dataset: " + what); }

Container to_container(const SignalDataset& ds) {
    Container c;
    c.descriptor = {{"kind", "dataset"}, {"seed", ds.seed}, {"classes", ds.class_names}, {"length", ds.length()}};
    c.records.push_back(Record::from_tensor("samples", ds.samples));
    c.records.push_back(Record::from_i32("labels", {ds.size()}, ds.labels));
    c.records.push_back(Record::from_tensor("snr_db", Tensor::from_values<float>({ds.size()}, ds.snr_db)));
    std::vector<std::uint8_t> sp(ds.split.size());
    std::transform(ds.split.begin(), ds.split.end(), sp.begin(), [](Split s) { return static_cast<std::uint8_t>(s); });
    c.records.push_back(Record::from_u8("split", {ds.size()}, sp));
    return c;
}

}  // namespace

std::string to_string(Modulation m) { return kModulationNames.at(static_cast<std::size_t>(m)); }

Modulation modulation_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kModulationNames.size(); ++i)
        if (name == kModulationNames[i]) return static_cast<Modulation>(i);
    throw ConfigError("unknown modulation '" + name + "' (expected BPSK, QPSK, 8PSK, 16QAM, 4ASK or GFSK)");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<double> rrc_taps(double rolloff, std::size_t sps, std::size_t span) {
    const std::size_t n = span * sps + 1;
    const double b = rolloff;
    std::vector<double> h(n);
    double energy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(span * sps) / 2) / static_cast<double>(sps);
        double v;
        if (t == 0) {
            v = 1 - b + 4 * b / kPi;
        } else if (b > 0 && std::abs(std::abs(t) - 1 / (4 * b)) < 1e-12) {
            v = b / std::sqrt(2.0) * ((1 + 2 / kPi) * std::sin(kPi / (4 * b)) + (1 - 2 / kPi) * std::cos(kPi / (4 * b)));
        } else {
            v = (std::sin(kPi * t * (1 - b)) + 4 * b * t * std::cos(kPi * t * (1 + b))) / (kPi * t * (1 - 16 * b * b * t * t));
        }
        h[i] = v;
        energy += v * v;
    }
    for (auto& v : h) v /= std::sqrt(energy);
    return h;
}

std::vector<cd> synthesize_signal(Modulation m, std::size_t length, std::mt19937_64& rng, const WaveformOptions& opts) {
    const double theta = opts.random_phase ? std::uniform_real_distribution<double>(0, 2 * kPi)(rng) : 0.0;
    const std::size_t tau = opts.random_timing ? static_cast<std::size_t>(rng() % kSamplesPerSymbol) : 0;
    auto x = m == Modulation::GFSK ? gfsk_burst(length, tau, rng) : linear_burst(m, length, tau, rng);
    double p = 0;
    for (const auto& v : x) p += std::norm(v);
    p /= static_cast<double>(length);
    const cd scale = std::polar(p > 0 ? 1.0 / std::sqrt(p) : 1.0, theta);
    for (auto& v : x) v *= scale;
    return x;
}

void add_awgn(std::vector<cd>& x, double snr_db, std::mt19937_64& rng) {
    const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0) / 2.0);
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& v : x) {
        const double re = n(rng);
        const double im = n(rng);
        v += cd(re, im);
    }
}

std::array<std::size_t, 3> split_counts(std::size_t n) {
    const std::size_t v = n / 5;
    return {n - 2 * v, v, v};
}

SignalDataset generate_dataset(const DatasetSpec& spec, unsigned workers) {
    if (spec.classes.empty()) throw ConfigError("dataset.classes must not be empty");
    if (spec.snr_db.empty()) throw ConfigError("dataset.snr_db must not be empty");
    if (spec.per_cell < 5) throw ConfigError("dataset.per_cell must be at least 5");
    if (spec.length < 64) throw ConfigError("dataset.length must be at least 64");
    {
        auto sorted = spec.classes;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("dataset.classes has duplicates");
    }

    const std::size_t n_snr = spec.snr_db.size(), cells = spec.classes.size() * n_snr, L = spec.length;
    const std::size_t N = cells * spec.per_cell;
    SignalDataset ds;
    ds.seed = spec.seed;
    for (auto m : spec.classes) ds.class_names.push_back(to_string(m));
    ds.samples = Tensor({N, 2, L});
    ds.labels.resize(N);
    ds.snr_db.resize(N);
    ds.split.resize(N);
    const auto counts = split_counts(spec.per_cell);

    auto data = ds.samples.values<float>();
    detail::parallel_for(cells, workers, [&](std::size_t cell) {
        const std::size_t c = cell / n_snr, s = cell % n_snr;
        const auto mod = spec.classes[c];
        auto sig_rng = cell_engine(spec.seed, static_cast<std::size_t>(mod), s, 0);
        auto noise_rng = cell_engine(spec.seed, static_cast<std::size_t>(mod), s, 1);
        for (std::size_t k = 0; k < spec.per_cell; ++k) {
            const std::size_t idx = cell * spec.per_cell + k;
            auto x = synthesize_signal(mod, L, sig_rng, spec.waveform);
            if (spec.waveform.noise) add_awgn(x, spec.snr_db[s], noise_rng);
            for (std::size_t t = 0; t < L; ++t) {
                data[(idx * 2) * L + t] = static_cast<float>(x[t].real());
                data[(idx * 2 + 1) * L + t] = static_cast<float>(x[t].imag());
            }
            ds.labels[idx] = static_cast<std::int32_t>(c);
            ds.snr_db[idx] = static_cast<float>(spec.snr_db[s]);
            ds.split[idx] = k < counts[0] ? Split::Train : k < counts[0] + counts[1] ? Split::Val : Split::Test;
        }
    });
    return ds;
}

const std::vector<std::size_t>& SplitIndices::operator[](Split s) const {
    switch (s) {
        case Split::Train: return train;
        case Split::Val: return val;
        case Split::Test: return test;
    }
    throw UsageError("bad split");
}

SplitIndices split_dataset(const SignalDataset& ds) {
    SplitIndices out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        switch (ds.split[i]) {
            case Split::Train: out.train.push_back(i); break;
            case Split::Val: out.val.push_back(i); break;
            case Split::Test: out.test.push_back(i); break;
        }
    }
    return out;
}

void check_dataset(const SignalDataset& ds) {
    const std::size_t N = ds.labels.size();
    if (ds.samples.rank() != 3 || ds.samples.dim(1) != 2) throw malformed("samples must have shape [N, 2, L]");
    if (ds.samples.dtype() != DType::F32) throw malformed("samples must be fp32");
    if (ds.samples.dim(0) != N) throw malformed("label vector length " + std::to_string(N) + " does not match " + std::to_string(ds.samples.dim(0)) + " samples");
    if (ds.snr_db.size() != N) throw malformed("snr vector length does not match sample count");
    if (ds.split.size() != N) throw malformed("split vector length does not match sample count");
    if (ds.class_names.size() < 2) throw malformed("need at least two classes");
    if (N == 0) throw malformed("dataset is empty");

    std::map<std::pair<std::int32_t, float>, std::array<std::size_t, 3>> cells;
    for (std::size_t i = 0; i < N; ++i) {
        if (ds.labels[i] < 0 || static_cast<std::size_t>(ds.labels[i]) >= ds.class_names.size())
            throw malformed("label " + std::to_string(ds.labels[i]) + " out of range");
        const auto sp = static_cast<std::size_t>(ds.split[i]);
        if (sp > 2) throw malformed("bad split marker");
        cells[{ds.labels[i], ds.snr_db[i]}][sp]++;
    }
    std::size_t cell_size = 0;
    std::map<std::int32_t, std::size_t> per_class;
    for (const auto& [key, c] : cells) {
        const std::size_t n = c[0] + c[1] + c[2];
        if (cell_size == 0) cell_size = n;
        if (n != cell_size) throw malformed("unequal sample counts across (class, SNR) cells");
        if (c != split_counts(n)) throw malformed("cell split is not 6:2:2");
        per_class[key.first] += n;
    }
    if (per_class.size() != ds.class_names.size()) throw malformed("some classes have no samples");
    for (const auto& [_, n] : per_class)
        if (n != per_class.begin()->second) throw malformed("classes are not balanced");
}

void save_dataset(const SignalDataset& ds, const std::filesystem::path& path) {
    check_dataset(ds);
    write_container(to_container(ds), path);
}

SignalDataset ingest_external(const std::filesystem::path& path) {
    const auto c = read_container(path);
    if (c.descriptor.value("kind", "") != "dataset") throw malformed(path.string() + " is not a dataset container");
    SignalDataset ds;
    try {
        ds.seed = c.descriptor.value("seed", std::uint64_t{0});
        ds.class_names = c.descriptor.at("classes").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw malformed(std::string("bad descriptor: ") + e.what());
    }
    ds.samples = c.record("samples").to_tensor();
    ds.labels = c.record("labels").to_i32();
    const auto snr = c.record("snr_db").to_tensor();
    if (snr.dtype() != DType::F32) throw malformed("snr_db must be fp32");
    auto sv = snr.values<float>();
    ds.snr_db.assign(sv.begin(), sv.end());
    for (auto v : c.record("split").to_u8()) {
        if (v > 2) throw malformed("bad split marker " + std::to_string(v));
        ds.split.push_back(static_cast<Split>(v));
    }
    check_dataset(ds);
    return ds;
}

SignalDataset subsample(const SignalDataset& ds, std::size_t per_cell) {
    if (per_cell < 5) throw ConfigError("subsample needs at least 5 samples per cell");
    std::map<std::pair<std::int32_t, float>, std::size_t> seen;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (seen[{ds.labels[i], ds.snr_db[i]}]++ < per_cell) keep.push_back(i);
    for (const auto& [_, n] : seen)
        if (n < per_cell) throw ConfigError("cell smaller than requested subsample size");

    SignalDataset out;
    out.seed = ds.seed;
    out.class_names = ds.class_names;
    out.samples = gather_samples(ds, keep);
    out.labels = gather_labels(ds, keep);
    const auto counts = split_counts(per_cell);
    std::map<std::pair<std::int32_t, float>, std::size_t> rank;
    for (auto i : keep) {
        out.snr_db.push_back(ds.snr_db[i]);
        const std::size_t k = rank[{ds.labels[i], ds.snr_db[i]}]++;
        out.split.push_back(k < counts[0] ? Split::Train : k < counts[0] + counts[1] ? Split::Val : Split::Test);
    }
    return out;
}

std::string dataset_fingerprint(const SignalDataset& ds) { return sha256_hex(encode_container(to_container(ds))); }

Tensor gather_samples(const SignalDataset& ds, const std::vector<std::size_t>& idx) { return take_rows(ds.samples, idx); }

std::vector<std::int32_t> gather_labels(const SignalDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<std::int32_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.labels.at(i));
    return out;
}

}  // namespace fcos
