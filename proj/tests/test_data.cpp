#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "eris/data.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "eris_test_data";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("gen_synthetic counts and balance") {
    eris::SyntheticConfig cfg;
    cfg.samples_per_domain_class = 50;
    const auto ds = eris::gen_synthetic(cfg);
    CHECK(ds.size() == 800);
    std::map<int, int> hist;
    for (int y : ds.class_labels()) ++hist[y];
    CHECK(hist.size() == 4);
    for (auto [k, n] : hist) CHECK(n == 200);
    CHECK(ds.sample_width() == cfg.channels * cfg.length);
}

TEST_CASE("gen_synthetic is a pure function of its config") {
    eris::SyntheticConfig cfg;
    CHECK(eris::gen_synthetic(cfg) == eris::gen_synthetic(cfg));
    eris::SyntheticConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK_FALSE(eris::gen_synthetic(cfg) == eris::gen_synthetic(other));
}

TEST_CASE("zero noise makes same-cell samples identical") {
    eris::SyntheticConfig cfg;
    cfg.noise_stddev = 0.0;
    const auto ds = eris::gen_synthetic(cfg);
    // Samples 0 and 1 share domain 0 and class 0.
    REQUIRE(ds.class_label(0) == ds.class_label(1));
    REQUIRE(ds.domain_label(0) == ds.domain_label(1));
    auto a = ds.sample(0), b = ds.sample(1);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST_CASE("per-domain channel means follow the offsets") {
    // With zero noise every class sinusoid averages to zero over whole cycles,
    // so the channel mean of a domain is exactly its offset.
    eris::SyntheticConfig cfg;
    cfg.noise_stddev = 0.0;
    cfg.domain_offset_range = {2.0, 3.0};
    const auto ds = eris::gen_synthetic(cfg);
    const auto effects = eris::synthetic_domain_effects(cfg);
    for (int d = 0; d < cfg.num_domains; ++d) {
        for (std::size_t c = 0; c < cfg.channels; ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (ds.domain_label(i) != d) continue;
                auto s = ds.sample(i);
                for (std::size_t t = 0; t < cfg.length; ++t) sum += s[c * cfg.length + t];
                n += cfg.length;
            }
            CHECK(sum / static_cast<double>(n) ==
                  doctest::Approx(effects[static_cast<std::size_t>(d)].offsets[c]).epsilon(1e-9));
        }
    }
    // Disjoint offset ranges: [2,3] vs the default [-1,1] differ by at least 1.
    eris::SyntheticConfig base = cfg;
    base.domain_offset_range = {-1.0, 1.0};
    const auto lo = eris::synthetic_domain_effects(base);
    for (std::size_t d = 0; d < lo.size(); ++d)
        for (std::size_t c = 0; c < cfg.channels; ++c)
            CHECK(effects[d].offsets[c] - lo[d].offsets[c] >= 1.0);
}

TEST_CASE("lodo_split partitions by domain") {
    eris::SyntheticConfig cfg;
    cfg.samples_per_domain_class = 25;
    const auto ds = eris::gen_synthetic(cfg);
    const auto [train, test] = eris::lodo_split(ds, 2);
    CHECK(train.size() == 300);
    CHECK(test.size() == 100);
    for (int d : test.domain_labels()) CHECK(d == 2);
    for (int d : train.domain_labels()) CHECK(d != 2);

    std::size_t ti = 0, si = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& part = ds.domain_label(i) == 2 ? test : train;
        std::size_t& j = ds.domain_label(i) == 2 ? si : ti;
        auto a = ds.sample(i), b = part.sample(j);
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
        CHECK(part.class_label(j) == ds.class_label(i));
        ++j;
    }
    CHECK_THROWS_AS(eris::lodo_split(ds, 4), std::out_of_range);
    CHECK_THROWS_AS(eris::lodo_split(ds, -1), std::out_of_range);
}

TEST_CASE("push_back validates") {
    eris::TimeSeriesDataset ds(2, 3, 2, 2);
    const std::vector<double> ok(6, 1.0);
    ds.push_back(ok, 1, 0);
    CHECK(ds.size() == 1);
    CHECK_THROWS(ds.push_back(std::vector<double>(5, 1.0), 0, 0));
    CHECK_THROWS(ds.push_back(ok, 2, 0));
    CHECK_THROWS(ds.push_back(ok, 0, -1));
}

TEST_CASE("dataset CSV round trip is exact") {
    eris::SyntheticConfig cfg;
    cfg.samples_per_domain_class = 50;
    const auto ds = eris::gen_synthetic(cfg);
    const auto p = temp_file("rt.csv");
    eris::save_dataset(ds, p);
    const auto back = eris::load_dataset(p);
    CHECK(back == ds);
    CHECK(back.size() == 800);
    const auto p2 = temp_file("rt2.csv");
    eris::save_dataset(back, p2);
    CHECK(read_all(p) == read_all(p2));
}

TEST_CASE("missing domain column is reported by name") {
    const auto p = temp_file("nodomain.csv");
    {
        std::ofstream out(p);
        out << "ERIS-CSV,1,1,1,2,2,2\n";
        out << "0,0.5,0.25\n";
    }
    try {
        (void)eris::load_dataset(p);
        FAIL("expected a parse error");
    } catch (const eris::ParseError& e) {
        CHECK(std::string(e.what()).find("domain") != std::string::npos);
        CHECK(e.line() == 2);
    }
}

TEST_CASE("malformed files are rejected") {
    const auto write = [](const fs::path& p, const std::string& body) {
        std::ofstream out(p);
        out << body;
    };
    const auto p = temp_file("bad.csv");
    write(p, "ERIS-CSV,2,1,1,2,2,2\n0,0,1,2\n");
    CHECK_THROWS_AS(eris::load_dataset(p), eris::ParseError);
    write(p, "ERIS-CSV,1,2,1,2,2,2\n0,0,1,2\n");
    CHECK_THROWS_AS(eris::load_dataset(p), eris::ParseError);
    write(p, "ERIS-CSV,1,1,1,2,2,2\n0,5,1,2\n");
    CHECK_THROWS_AS(eris::load_dataset(p), eris::ParseError);
    write(p, "ERIS-CSV,1,1,1,2,2,2\n0,0,1,nan\n");
    CHECK_THROWS_AS(eris::load_dataset(p), eris::ParseError);
    write(p, "ERIS-CSV,1,1,1,2,2,2\n0,0,1,2,3\n");
    CHECK_THROWS_AS(eris::load_dataset(p), eris::ParseError);
    CHECK_THROWS(eris::load_dataset(temp_file("does_not_exist.csv")));
}
