#include "triage/synthetic.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

namespace triage {

namespace {

constexpr std::size_t kNumeric = 40;
constexpr std::size_t kInformative = 8;

void append_number(std::string& out, double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) {
        throw std::runtime_error("number formatting failed");
    }
    out.append(buf.data(), ptr);
}

std::vector<std::string> numeric_names() {
    std::vector<std::string> names = {"src_dev", "dst_dev", "sbytes", "dur",
                                      "sgn_a",   "sgn_b",   "swin",   "ct_srv"};
    for (std::size_t j = kInformative; j < kNumeric; ++j) {
        names.push_back("stat_" + std::to_string(j));
    }
    return names;
}

}  // namespace

std::string synthetic_csv(const SyntheticOptions& options) {
    if (options.rows == 0) {
        throw std::invalid_argument("synthetic_csv: rows must be positive");
    }
    std::mt19937_64 rng(options.seed);
    std::bernoulli_distribution malicious(options.malicious_rate);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const std::array<const char*, 3> protos = {"tcp", "udp", "icmp"};
    const std::array<const char*, 4> families = {"Exploits", "Fuzzers", "DoS", "Reconnaissance"};

    std::string out = "id,proto";
    for (const auto& n : numeric_names()) {
        out += "," + n;
    }
    out += ",attack_cat,label\n";

    std::array<double, kNumeric> x{};
    for (std::size_t r = 0; r < options.rows; ++r) {
        const bool y = malicious(rng);
        const double m = y ? 1.0 : 0.0;
        if (y) {
            x[0] = 1.3 + 0.6 * unit(rng);
            x[1] = 1.0 + 0.6 * unit(rng);
        } else {
            x[0] = 1.6 * unit(rng);
            x[1] = 1.6 * unit(rng);
        }
        x[2] = std::exp(5.0 + 1.5 * unit(rng) + 0.9 * m);
        x[3] = std::exponential_distribution<double>(1.0)(rng) * (1.0 + 1.5 * m);
        const double a = unit(rng);
        double b = unit(rng);
        if (y && uni(rng) < 0.8) {
            b = std::copysign(std::abs(b), a);
        }
        x[4] = a;
        x[5] = b;
        x[6] = 3.0;
        x[7] = static_cast<double>(std::poisson_distribution<int>(2.0 + 2.0 * m)(rng));
        for (std::size_t j = kInformative; j < kNumeric; ++j) {
            x[j] = unit(rng) + 0.05 * m;
        }
        const auto proto = protos[static_cast<std::size_t>(uni(rng) * 3.0) % 3];
        const auto family = y ? families[static_cast<std::size_t>(uni(rng) * 4.0) % 4] : "Normal";

        out += options.id_prefix + std::to_string(r + 1);
        out += ',';
        out += proto;
        for (double v : x) {
            out += ',';
            append_number(out, v);
        }
        out += ',';
        out += family;
        out += y ? ",1\n" : ",0\n";
    }
    return out;
}

void write_synthetic_csv(const std::filesystem::path& path, const SyntheticOptions& options) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
    f << synthetic_csv(options);
}

}  // namespace triage
