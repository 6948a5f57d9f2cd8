#include "eris/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "eris/linalg.hpp"

namespace eris {

namespace {

// Stream ids for Rng::split so the domain draws and per-sample noise never
// share a stream.
constexpr std::uint64_t kDomainStream = 1;
constexpr std::uint64_t kNoiseStreamBase = 1000;

void format_double(std::string& out, double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    out.append(buf, static_cast<std::size_t>(n));
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view field, const char* what, std::size_t line) {
    T value{};
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("invalid " + std::string(what) + " '" + std::string(field) + "'", line);
    }
    return value;
}

}  // namespace

TimeSeriesDataset::TimeSeriesDataset(std::size_t channels, std::size_t length, int num_classes,
                                     int num_domains)
    : channels_(channels), length_(length), num_classes_(num_classes), num_domains_(num_domains) {
    if (channels == 0 || length == 0) {
        throw std::invalid_argument("TimeSeriesDataset: channels and length must be >= 1");
    }
    if (num_classes < 1 || num_domains < 1) {
        throw std::invalid_argument("TimeSeriesDataset: class and domain counts must be >= 1");
    }
}

std::span<const double> TimeSeriesDataset::sample(std::size_t i) const {
    return {values_.data() + i * sample_width(), sample_width()};
}

void TimeSeriesDataset::push_back(std::span<const double> values, int class_label,
                                  int domain_label) {
    if (values.size() != sample_width()) {
        throw std::invalid_argument("TimeSeriesDataset: sample has " +
                                    std::to_string(values.size()) + " values, expected " +
                                    std::to_string(sample_width()));
    }
    if (class_label < 0 || class_label >= num_classes_) {
        throw std::out_of_range("TimeSeriesDataset: class label " + std::to_string(class_label) +
                                " outside [0, " + std::to_string(num_classes_) + ")");
    }
    if (domain_label < 0 || domain_label >= num_domains_) {
        throw std::out_of_range("TimeSeriesDataset: domain label " +
                                std::to_string(domain_label) + " outside [0, " +
                                std::to_string(num_domains_) + ")");
    }
    values_.insert(values_.end(), values.begin(), values.end());
    classes_.push_back(class_label);
    domains_.push_back(domain_label);
}

TimeSeriesDataset TimeSeriesDataset::subset(std::span<const std::size_t> indices) const {
    TimeSeriesDataset out(channels_, length_, num_classes_, num_domains_);
    out.values_.reserve(indices.size() * sample_width());
    for (auto i : indices) {
        if (i >= size()) throw std::out_of_range("TimeSeriesDataset::subset: index out of range");
        out.push_back(sample(i), classes_[i], domains_[i]);
    }
    return out;
}

void SyntheticConfig::validate() const {
    if (num_classes < 1 || num_domains < 1 || channels < 1 || length < 1 ||
        samples_per_domain_class < 1) {
        throw std::invalid_argument("SyntheticConfig: all counts must be >= 1");
    }
    if (domain_scale_range.first > domain_scale_range.second ||
        domain_offset_range.first > domain_offset_range.second) {
        throw std::invalid_argument("SyntheticConfig: ranges must be ordered (lo <= hi)");
    }
    if (!(noise_stddev >= 0.0)) {
        throw std::invalid_argument("SyntheticConfig: noise_stddev must be >= 0");
    }
}

std::vector<DomainEffect> synthetic_domain_effects(const SyntheticConfig& config) {
    config.validate();
    Rng rng = Rng(config.seed).split(kDomainStream);
    std::vector<DomainEffect> effects;
    effects.reserve(static_cast<std::size_t>(config.num_domains));
    for (int d = 0; d < config.num_domains; ++d) {
        DomainEffect e;
        e.scale = rng.uniform(config.domain_scale_range.first, config.domain_scale_range.second);
        e.offsets.resize(config.channels);
        for (auto& o : e.offsets)
            o = rng.uniform(config.domain_offset_range.first, config.domain_offset_range.second);
        effects.push_back(std::move(e));
    }
    return effects;
}

TimeSeriesDataset gen_synthetic(const SyntheticConfig& config) {
    const auto effects = synthetic_domain_effects(config);
    const Rng base(config.seed);
    const std::size_t width = config.channels * config.length;
    const double n = static_cast<double>(config.length);

    TimeSeriesDataset ds(config.channels, config.length, config.num_classes, config.num_domains);
    std::vector<double> x(width);
    std::uint64_t index = 0;
    for (int d = 0; d < config.num_domains; ++d) {
        const auto& effect = effects[static_cast<std::size_t>(d)];
        for (int k = 0; k < config.num_classes; ++k) {
            const double freq = 2.0 * std::numbers::pi * static_cast<double>(k + 1) / n;
            for (std::size_t s = 0; s < config.samples_per_domain_class; ++s, ++index) {
                Rng noise = base.split(kNoiseStreamBase + index);
                for (std::size_t c = 0; c < config.channels; ++c) {
                    const double phase = 0.5 * static_cast<double>(c);
                    for (std::size_t t = 0; t < config.length; ++t) {
                        double v = effect.scale * std::sin(freq * static_cast<double>(t) + phase) +
                                   effect.offsets[c];
                        if (config.noise_stddev > 0.0) v += config.noise_stddev * noise.normal();
                        x[c * config.length + t] = v;
                    }
                }
                ds.push_back(x, k, d);
            }
        }
    }
    return ds;
}

std::pair<TimeSeriesDataset, TimeSeriesDataset> lodo_split(const TimeSeriesDataset& ds,
                                                           int target_domain) {
    if (target_domain < 0 || target_domain >= ds.num_domains()) {
        throw std::out_of_range("lodo_split: target domain " + std::to_string(target_domain) +
                                " outside [0, " + std::to_string(ds.num_domains()) + ")");
    }
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (ds.domain_label(i) == target_domain ? test_idx : train_idx).push_back(i);
    return {ds.subset(train_idx), ds.subset(test_idx)};
}

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
    out << "ERIS-CSV,1," << ds.size() << ',' << ds.channels() << ',' << ds.length() << ','
        << ds.num_classes() << ',' << ds.num_domains() << '\n';
    std::string line;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        line.clear();
        line += std::to_string(ds.class_label(i));
        line += ',';
        line += std::to_string(ds.domain_label(i));
        for (double v : ds.sample(i)) {
            line += ',';
            format_double(line, v);
        }
        line += '\n';
        out << line;
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path.string());
}

TimeSeriesDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file, expected ERIS-CSV header", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    if (header.size() != 7 || header[0] != "ERIS-CSV") {
        throw ParseError(
            "malformed header, expected "
            "'ERIS-CSV,1,<num_samples>,<channels>,<length>,<N_y>,<N_d>'",
            1);
    }
    if (header[1] != "1") {
        throw ParseError("unsupported format version '" + std::string(header[1]) + "'", 1);
    }
    const auto num_samples = parse_number<std::size_t>(header[2], "num_samples", 1);
    const auto channels = parse_number<std::size_t>(header[3], "channels", 1);
    const auto length = parse_number<std::size_t>(header[4], "length", 1);
    const auto num_classes = parse_number<int>(header[5], "N_y", 1);
    const auto num_domains = parse_number<int>(header[6], "N_d", 1);
    if (channels == 0 || length == 0 || num_classes < 1 || num_domains < 1) {
        throw ParseError("header counts must all be >= 1", 1);
    }

    TimeSeriesDataset ds(channels, length, num_classes, num_domains);
    const std::size_t width = channels * length;
    std::vector<double> values(width);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() == width + 1) {
            throw ParseError("missing 'domain' column: expected class,domain followed by " +
                                 std::to_string(width) + " values",
                             line_no);
        }
        if (fields.size() != width + 2) {
            throw ParseError("row has " + std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(width + 2),
                             line_no);
        }
        const int cls = parse_number<int>(fields[0], "class", line_no);
        const int dom = parse_number<int>(fields[1], "domain", line_no);
        if (cls < 0 || cls >= num_classes) {
            throw ParseError("class label " + std::to_string(cls) + " outside [0, " +
                                 std::to_string(num_classes) + ")",
                             line_no);
        }
        if (dom < 0 || dom >= num_domains) {
            throw ParseError("domain label " + std::to_string(dom) + " outside [0, " +
                                 std::to_string(num_domains) + ")",
                             line_no);
        }
        for (std::size_t j = 0; j < width; ++j) {
            values[j] = parse_number<double>(fields[j + 2], "value", line_no);
            if (!std::isfinite(values[j])) throw ParseError("non-finite value", line_no);
        }
        ds.push_back(values, cls, dom);
    }
    if (ds.size() != num_samples) {
        throw ParseError("header declares " + std::to_string(num_samples) + " samples but " +
                             std::to_string(ds.size()) + " rows were read",
                         line_no);
    }
    return ds;
}

}  // namespace eris
