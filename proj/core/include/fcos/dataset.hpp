#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fcos/tensor.hpp"

namespace fcos {

enum class Modulation : std::uint8_t { BPSK, QPSK, PSK8, QAM16, ASK4, GFSK };

std::string to_string(Modulation m);
Modulation modulation_from_string(const std::string& name);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

/// Test hooks; production data keeps all three on.
struct WaveformOptions {
    bool noise = true;
    bool random_phase = true;
    bool random_timing = true;
};

inline constexpr double kRolloff = 0.35;
inline constexpr std::size_t kSamplesPerSymbol = 8;
inline constexpr std::size_t kFilterSpan = 8;  // symbols

/// Unit-energy root-raised-cosine taps, span*sps + 1 long.
std::vector<double> rrc_taps(double rolloff, std::size_t sps, std::size_t span);

/// One complex baseband burst of `length` samples with unit average power.
std::vector<std::complex<double>> synthesize_signal(Modulation m, std::size_t length, std::mt19937_64& rng,
                                                    const WaveformOptions& opts = {});

/// Adds circular complex Gaussian noise of total variance 10^(-snr_db/10).
void add_awgn(std::vector<std::complex<double>>& x, double snr_db, std::mt19937_64& rng);

struct DatasetSpec {
    std::vector<Modulation> classes = {Modulation::BPSK, Modulation::QPSK, Modulation::QAM16, Modulation::GFSK};
    std::vector<double> snr_db = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18};
    std::size_t per_cell = 200;
    std::size_t length = 128;
    std::uint64_t seed = 0;
    WaveformOptions waveform;
};

/// Samples are ordered by (class, SNR, index) and every (class, SNR) cell is split 6:2:2.
struct SignalDataset {
    Tensor samples;  // [N, 2, L] fp32, rows I and Q
    std::vector<std::int32_t> labels;
    std::vector<float> snr_db;
    std::vector<Split> split;
    std::uint64_t seed = 0;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return class_names.size(); }
    std::size_t length() const { return samples.rank() == 3 ? samples.dim(2) : 0; }

    friend bool operator==(const SignalDataset&, const SignalDataset&) = default;
};

/// Throws ConfigError for an empty class set or SNR grid, per_cell < 5 or length < 64.
SignalDataset generate_dataset(const DatasetSpec& spec, unsigned workers = 1);

/// (train, val, test) sizes for a cell of n samples: val = test = floor(n/5), rest to train.
std::array<std::size_t, 3> split_counts(std::size_t n);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
    const std::vector<std::size_t>& operator[](Split s) const;
};

SplitIndices split_dataset(const SignalDataset& ds);

/// Enforces shape, label range, class balance and split invariants. Throws FormatError(Malformed).
void check_dataset(const SignalDataset& ds);

void save_dataset(const SignalDataset& ds, const std::filesystem::path& path);
/// Loads a dataset container written by save_dataset (or produced externally in the same layout).
SignalDataset ingest_external(const std::filesystem::path& path);

/// First `per_cell` samples of every (class, SNR) cell, re-split 6:2:2.
SignalDataset subsample(const SignalDataset& ds, std::size_t per_cell);

/// Content hash of the dataset (hex SHA-256 over its serialized form).
std::string dataset_fingerprint(const SignalDataset& ds);

/// Rows `idx` of the sample tensor and matching labels.
Tensor gather_samples(const SignalDataset& ds, const std::vector<std::size_t>& idx);
std::vector<std::int32_t> gather_labels(const SignalDataset& ds, const std::vector<std::size_t>& idx);

}  // namespace fcos
