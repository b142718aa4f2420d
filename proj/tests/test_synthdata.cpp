// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// HRF kernel, synthetic triplet generation and the dataset container.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include <Eigen/Dense>
#include <boost/crc.hpp>

#include "catch_amalgamated.hpp"
#include "test_support.hpp"

using namespace hemalign;
using hemalign::testing::TempPath;
using Catch::Matchers::WithinAbs;

namespace {

// Canonical double-gamma written out directly from the closed form.
double oracle_hrf(double t) {
    if (t <= 0.0) return 0.0;
    const double peak = std::pow(t, 5.0) * std::exp(-t) / std::tgamma(6.0);
    const double under = std::pow(t, 15.0) * std::exp(-t) / std::tgamma(16.0);
    return peak - under / 6.0;
}

std::vector<double> oracle_taps(double tr, std::size_t length) {
    std::vector<double> taps(length);
    double s = 0.0;
    for (std::size_t i = 0; i < length; ++i) s += (taps[i] = oracle_hrf(double(i) * tr));
    for (auto& v : taps) v /= s;
    return taps;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Recomputes the trailing CRC so that only the edited field is wrong.
void restamp(std::vector<std::uint8_t>& bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data() + 8, bytes.size() - 12);
    const std::uint32_t v = crc.checksum();
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

SynthConfig small_synth() {
    SynthConfig c;
    c.n_train = 6;
    c.n_test = 4;
    c.latent_dim = 3;
    c.video_dim = 5;
    c.fmri_dim = 4;
    c.caption_dim = 2;
    c.t_video = 5;
    c.t_fmri = 5;
    return c;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// HRF-convolved latent at fMRI volume t, using the trace's pre-window history.
std::vector<double> convolved_latent(const LatentTrace& tr, const std::vector<double>& taps, long t, long delay) {
    const std::size_t d = tr.values.cols();
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < taps.size(); ++j) {
        auto l = tr.at(t - delay - long(j));
        for (std::size_t c = 0; c < d; ++c) out[c] += taps[j] * l[c];
    }
    return out;
}

} // namespace

TEST_CASE("hrf kernel invariants over the tr and length grid") {
    for (double tr : {0.5, 1.0, 2.0})
        for (std::size_t len : {16u, 32u, 64u}) {
            INFO("tr " << tr << " length " << len);
            HrfKernel k = hrf_kernel(tr, len);
            REQUIRE(k.length == len);
            CHECK(k.taps[0] == 0.0);
            double s = 0.0;
            for (double v : k.taps.values()) s += v;
            CHECK_THAT(s, WithinAbs(1.0, 1e-12));
            const auto it = std::max_element(k.taps.values().begin(), k.taps.values().end());
            const double peak_t = double(it - k.taps.values().begin()) * tr;
            CHECK(peak_t > 3.0);
            CHECK(peak_t < 8.0);
            CHECK(std::count(k.taps.values().begin(), k.taps.values().end(), *it) == 1);
            CHECK(k.truncated == (double(len) * tr < 10.0));
            const auto oracle = oracle_taps(tr, len);
            for (std::size_t i = 0; i < len; ++i) CHECK_THAT(k.taps[i], WithinAbs(oracle[i], 1e-14));
        }
}

TEST_CASE("hrf argmax agrees with a dense sampling of the analytic form") {
    double best_t = 0.0, best = -1.0;
    for (int i = 1; i <= 3200; ++i) {
        const double t = i * 0.01;
        if (const double v = oracle_hrf(t); v > best) best = v, best_t = t;
    }
    CHECK_THAT(best_t, WithinAbs(5.0, 0.5));
    // the peak tap is whichever neighbouring grid point of the dense maximum is higher
    const std::size_t lo = std::size_t(std::floor(best_t)), hi = lo + 1;
    const std::size_t expect = oracle_hrf(double(lo)) >= oracle_hrf(double(hi)) ? lo : hi;
    HrfKernel k = hrf_kernel(1.0, 32);
    const auto it = std::max_element(k.taps.values().begin(), k.taps.values().end());
    CHECK(std::size_t(it - k.taps.values().begin()) == expect);
    CHECK(expect == 5);
}

TEST_CASE("hrf kernel rejects bad arguments and flags truncation") {
    CHECK_THROWS_AS(hrf_kernel(0.0, 16), ConfigError);
    CHECK_THROWS_AS(hrf_kernel(-1.0, 16), ConfigError);
    CHECK_THROWS_AS(hrf_kernel(1.0, 1), ConfigError);
    CHECK(hrf_kernel(1.0, 8).truncated);
    CHECK_FALSE(hrf_kernel(1.0, 10).truncated);
}

TEST_CASE("generation is deterministic and seed dependent") {
    SynthConfig c = small_synth();
    auto a = generate_dataset(c);
    auto b = generate_dataset(c);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pair_id == b[i].pair_id);
        CHECK(a[i].fmri == b[i].fmri);
        CHECK(a[i].video == b[i].video);
        CHECK(a[i].caption == b[i].caption);
    }
    for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
        c.seed = seed;
        auto other = generate_dataset(c);
        std::size_t same = 0;
        for (std::size_t i = 0; i < a.size(); ++i) same += other[i].fmri == a[i].fmri;
        CHECK(same == 0);
    }
}

TEST_CASE("samples have unique ids, the right shapes and finite values") {
    SynthConfig c = small_synth();
    auto data = generate_dataset(c);
    std::set<std::uint64_t> ids;
    for (const auto& s : data) {
        ids.insert(s.pair_id);
        CHECK(s.fmri.shape() == Shape{c.t_fmri, c.fmri_dim});
        CHECK(s.video.shape() == Shape{c.t_video, c.video_dim});
        CHECK(s.caption.shape() == Shape{c.caption_dim});
        CHECK(s.fmri.all_finite());
        CHECK(s.video.all_finite());
        CHECK(s.caption.all_finite());
        CHECK(s.split == (s.pair_id < c.n_train ? Split::train : Split::test));
    }
    CHECK(ids.size() == data.size());
    CHECK(select_split(data, Split::test).size() == c.n_test);
    CHECK(select_split(data, Split::train).size() == c.n_train);
}

TEST_CASE("invalid synth configs are rejected") {
    SynthConfig c = small_synth();
    c.delay_seconds = -1.0;
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
    c = small_synth();
    c.noise_sigma = -0.1;
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
    c = small_synth();
    c.latent_dim = 0;
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
    c = small_synth();
    c.n_train = c.n_test = 0;
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
}

TEST_CASE("noise-free identity projection gives the convolved latent") {
    SynthConfig c = small_synth();
    c.noise_sigma = 0.0;
    c.delay_seconds = 0.0;
    c.fmri_dim = c.latent_dim;
    Projections p = make_projections(c);
    p.fmri = Tensor::identity(c.latent_dim);
    auto data = generate_dataset(c, p);
    const auto taps = oracle_taps(c.tr_seconds, c.hrf_length());
    for (const auto& s : data) {
        LatentTrace tr = latent_trace(c, s.pair_id);
        for (std::size_t t = 0; t < c.t_fmri; ++t) {
            auto expect = convolved_latent(tr, taps, long(t), 0);
            for (std::size_t ch = 0; ch < c.latent_dim; ++ch) {
                // stored features are single precision; the bound is half an f32 ulp plus 1e-12
                const double bound = 0.5 * std::ldexp(1.0, std::ilogb(expect[ch]) - 23) + 1e-12;
                CHECK(std::abs(s.fmri(t, ch) - expect[ch]) <= bound);
            }
        }
    }
}

TEST_CASE("fmri channels correlate with the delayed convolved latent projection") {
    SynthConfig c;  // defaults
    Projections p = make_projections(c);
    auto data = generate_dataset(c, p);
    const auto taps = oracle_taps(c.tr_seconds, c.hrf_length());
    const long delay = long(c.delay_steps());
    std::vector<std::vector<double>> actual(c.fmri_dim), predicted(c.fmri_dim);
    for (const auto& s : data) {
        LatentTrace tr = latent_trace(c, s.pair_id);
        for (std::size_t t = 0; t < c.t_fmri; ++t) {
            auto conv = convolved_latent(tr, taps, long(t), delay);
            for (std::size_t ch = 0; ch < c.fmri_dim; ++ch) {
                double v = 0.0;
                for (std::size_t k = 0; k < c.latent_dim; ++k) v += p.fmri(ch, k) * conv[k];
                predicted[ch].push_back(v);
                actual[ch].push_back(s.fmri(t, ch));
            }
        }
    }
    double mean_r = 0.0;
    for (std::size_t ch = 0; ch < c.fmri_dim; ++ch) mean_r += pearson(actual[ch], predicted[ch]) / double(c.fmri_dim);
    CHECK(mean_r > 0.5);
}

TEST_CASE("pre-shifted generation removes the delay") {
    SynthConfig raw = small_synth();
    raw.noise_sigma = 0.0;
    raw.delay_seconds = 2.0;
    SynthConfig shifted = raw;
    shifted.pre_shift = true;
    CHECK(raw.applied_delay_steps() == 2);
    CHECK(shifted.applied_delay_steps() == 0);
    auto a = generate_dataset(raw);
    auto b = generate_dataset(shifted);
    // the raw volume at t equals the pre-shifted volume at t - delay when the latent history is shared
    // (both traces are drawn with the same history length)
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t t = 2; t < raw.t_fmri; ++t)
            for (std::size_t ch = 0; ch < raw.fmri_dim; ++ch) CHECK(a[i].fmri(t, ch) == b[i].fmri(t - 2, ch));
}

TEST_CASE("noise-free data identifies every pair by deconvolved correlation") {
    SynthConfig c;
    c.n_train = 0;
    c.n_test = 50;
    c.noise_sigma = 0.0;
    Projections p = make_projections(c);
    auto data = generate_dataset(c, p);
    const auto taps = oracle_taps(c.tr_seconds, c.hrf_length());
    const long delay = long(c.delay_steps());

    using Mat = Eigen::MatrixXd;
    auto to_mat = [](const Tensor& t) {
        Mat m(t.rows(), t.cols());
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t k = 0; k < t.cols(); ++k) m(r, k) = t(r, k);
        return m;
    };
    const Mat pinv_v = to_mat(p.video).completeOrthogonalDecomposition().pseudoInverse();
    const Mat pinv_f = to_mat(p.fmri).completeOrthogonalDecomposition().pseudoInverse();

    // latent implied by each fMRI volume (the projection is undone, the HRF stays)
    std::vector<Eigen::VectorXd> from_fmri, from_video;
    for (const auto& s : data) {
        Mat f = to_mat(s.fmri) * pinv_f.transpose();  // T x latent
        Mat l = to_mat(s.video) * pinv_v.transpose();  // T x latent
        Eigen::VectorXd pf(f.size()), pv(f.size());
        std::size_t k = 0;
        for (long t = 0; t < long(c.t_fmri); ++t)
            for (long d = 0; d < long(c.latent_dim); ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < taps.size(); ++j) {
                    const long src = std::max(0L, t - delay - long(j));  // hold the first frame backwards
                    acc += taps[j] * l(src, d);
                }
                pf[k] = f(t, d);
                pv[k] = acc;
                ++k;
            }
        from_fmri.push_back(pf.array() - pf.mean());
        from_video.push_back(pv.array() - pv.mean());
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t best = 0;
        double best_r = -2.0;
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double r = from_fmri[i].dot(from_video[j]) / (from_fmri[i].norm() * from_video[j].norm());
            if (r > best_r) best_r = r, best = j;
        }
        hits += data[best].pair_id == data[i].pair_id;
    }
    CHECK(hits == data.size());
}

TEST_CASE("crc32 matches the standard check value") {
    const std::string check = "123456789";
    CHECK(crc32(reinterpret_cast<const std::uint8_t*>(check.data()), check.size()) == 0xCBF43926u);
}

TEST_CASE("dataset round trip is bit exact") {
    SynthConfig c = small_synth();
    auto data = generate_dataset(c);
    TempPath path("roundtrip");
    write_dataset(data, path.str(), c);
    auto back = read_dataset(path.str());
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].pair_id == data[i].pair_id);
        CHECK(back[i].split == data[i].split);
        CHECK(back[i].fmri == data[i].fmri);
        CHECK(back[i].video == data[i].video);
        CHECK(back[i].caption == data[i].caption);
    }
    SynthConfig again;
    again.read(KeyValues::load(path.str() + ".manifest"));
    KeyValues x, y;
    c.write(x);
    again.write(y);
    CHECK(x.to_string() == y.to_string());
}

TEST_CASE("empty dataset round trips") {
    TempPath path("empty");
    write_dataset({}, path.str());
    CHECK(read_dataset(path.str()).empty());
}

TEST_CASE("corrupted dataset files raise format errors with offsets") {
    auto data = generate_dataset(small_synth());
    TempPath path("corrupt");
    write_dataset(data, path.str());
    const auto good = slurp(path.str());

    SECTION("truncated mid-record") {
        for (std::size_t cut : {good.size() - 1, good.size() / 2, std::size_t{30}, std::size_t{10}, std::size_t{3}}) {
            spit(path.str(), std::vector<std::uint8_t>(good.begin(), good.begin() + long(cut)));
            CHECK_THROWS_AS(read_dataset(path.str()), FormatError);
        }
    }
    SECTION("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        spit(path.str(), bytes);
        try {
            read_dataset(path.str());
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
            CHECK(e.category() == "format");
        }
    }
    SECTION("flipped payload byte") {
        auto bytes = good;
        bytes[bytes.size() / 2] ^= 0x40;
        spit(path.str(), bytes);
        try {
            read_dataset(path.str());
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == bytes.size() - 4);
        }
    }
    SECTION("unsupported version") {
        auto bytes = good;
        bytes[8] = 7;
        restamp(bytes);
        spit(path.str(), bytes);
        try {
            read_dataset(path.str());
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 8);
        }
    }
    SECTION("sample count larger than the payload") {
        auto bytes = good;
        bytes[12] += 1;
        restamp(bytes);
        spit(path.str(), bytes);
        CHECK_THROWS_AS(read_dataset(path.str()), FormatError);
    }
    SECTION("missing file is an io error") {
        CHECK_THROWS_AS(read_dataset(path.str() + ".nope"), IoError);
    }
}
