#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace eris {

/// Multichannel sequences with per-sample class and domain labels.
/// Sample s occupies values()[s*channels*length, (s+1)*channels*length) in
/// channel-major order.
class TimeSeriesDataset {
public:
    TimeSeriesDataset() = default;
    TimeSeriesDataset(std::size_t channels, std::size_t length, int num_classes, int num_domains);

    std::size_t size() const { return classes_.size(); }
    bool empty() const { return classes_.empty(); }
    std::size_t channels() const { return channels_; }
    std::size_t length() const { return length_; }
    std::size_t sample_width() const { return channels_ * length_; }
    int num_classes() const { return num_classes_; }
    int num_domains() const { return num_domains_; }

    std::span<const double> sample(std::size_t i) const;
    int class_label(std::size_t i) const { return classes_[i]; }
    int domain_label(std::size_t i) const { return domains_[i]; }
    const std::vector<int>& class_labels() const { return classes_; }
    const std::vector<int>& domain_labels() const { return domains_; }
    std::span<const double> values() const { return values_; }

    /// Appends a sample; throws if the width or either label is out of range.
    void push_back(std::span<const double> values, int class_label, int domain_label);

    /// Copy of the listed samples, in the listed order.
    TimeSeriesDataset subset(std::span<const std::size_t> indices) const;

    bool operator==(const TimeSeriesDataset&) const = default;

private:
    std::size_t channels_ = 1;
    std::size_t length_ = 1;
    int num_classes_ = 1;
    int num_domains_ = 1;
    std::vector<double> values_;
    std::vector<int> classes_;
    std::vector<int> domains_;
};

struct SyntheticConfig {
    int num_classes = 4;
    int num_domains = 4;
    std::size_t channels = 2;
    std::size_t length = 32;
    std::size_t samples_per_domain_class = 20;
    std::pair<double, double> domain_scale_range{0.5, 2.0};
    std::pair<double, double> domain_offset_range{-1.0, 1.0};
    double noise_stddev = 0.3;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Class k is a sinusoid with k+1 cycles over the sequence; domain d applies
/// its own amplitude scale and additive offset (one per channel for offsets).
/// Domain factors come from a stream split off the seed, so they do not
/// depend on the number of samples generated.
TimeSeriesDataset gen_synthetic(const SyntheticConfig& config);

/// Amplitude scale and per-channel offsets used for each domain by gen_synthetic.
struct DomainEffect {
    double scale;
    std::vector<double> offsets;
};
std::vector<DomainEffect> synthetic_domain_effects(const SyntheticConfig& config);

/// Leave-one-domain-out split: (train, test), each preserving input order.
std::pair<TimeSeriesDataset, TimeSeriesDataset> lodo_split(const TimeSeriesDataset& ds,
                                                           int target_domain);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& path);
TimeSeriesDataset load_dataset(const std::filesystem::path& path);

}  // namespace eris
