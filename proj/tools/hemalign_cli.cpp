// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// hemalign command-line entry point.
//
//   hemalign generate-data --out data.bin [--config desk.cfg] [--seed N] [--pre-shift-hrf]
//   hemalign train --out model.ckpt [--data data.bin] [--checkpoint resume.ckpt] [--metrics log.csv]
//   hemalign eval --checkpoint model.ckpt [--data data.bin] [--out report.txt]
//   hemalign export-embeddings --checkpoint model.ckpt --out emb.csv
//   hemalign ablate [--seeds 1,2,3] [--out table.csv]
//
// Failures print a single "error: <category>: <message>" line and exit with status 2.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hemalign/hemalign.hpp"

namespace {

using namespace hemalign;

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    bool pre_shift = false;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string metrics;
    std::string space = "quantized";
    std::string seeds = "1,2,3";
};

Config load_config(const Options& o) {
    KeyValues kv = o.config_path.empty() ? KeyValues{} : KeyValues::load(o.config_path);
    for (const auto& s : o.overrides) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
        kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed) {
        kv.set("train.seed", *o.seed);
        kv.set("synth.seed", *o.seed);
    }
    if (o.pre_shift) kv.set("synth.pre_shift", true);
    return Config::from_kv(kv);
}

std::vector<TripletSample> load_or_generate(const Options& o, const SynthConfig& synth) {
    if (!o.data.empty()) return read_dataset(o.data);
    return generate_dataset(synth);
}

std::vector<TripletSample> require_split(const std::vector<TripletSample>& all, Split split) {
    auto out = select_split(all, split);
    if (out.empty())
        throw ConfigError(std::string("dataset has no ") + (split == Split::train ? "training" : "test") + " samples");
    return out;
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out || !(out << text)) throw IoError("cannot write '" + path + "'");
}

int generate_data(const Options& o) {
    if (o.out.empty()) throw ConfigError("generate-data needs --out");
    const Config cfg = load_config(o);
    const auto samples = generate_dataset(cfg.synth);
    write_dataset(samples, o.out, cfg.synth);
    std::cerr << "wrote " << samples.size() << " samples to " << o.out << '\n';
    return 0;
}

int train_cmd(const Options& o) {
    Config cfg;
    TrainState state;
    if (!o.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(o.checkpoint);
        cfg = ck.config;
        state = std::move(ck.state);
    } else {
        cfg = load_config(o);
        state = init_train_state(cfg);
    }
    const std::string out = o.out.empty() ? cfg.train.checkpoint_path : o.out;
    if (out.empty()) throw ConfigError("train needs --out or train.checkpoint_path");

    const auto all = load_or_generate(o, cfg.synth);
    const auto train_set = require_split(all, Split::train);
    const auto test_set = select_split(all, Split::test);
    std::optional<MetricsLog> log;
    if (!o.metrics.empty()) log.emplace(o.metrics);

    const std::size_t remaining = state.step < cfg.train.total_steps ? cfg.train.total_steps - state.step : 0;
    train(state, train_set, cfg, remaining, [&](const StepMetrics& m) {
        if (log) log->write(m);
        const std::uint64_t done = m.step + 1;
        if (cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0 && !test_set.empty()) {
            const auto r = full_report(state, test_set, cfg);
            std::cerr << "step " << done << " loss " << m.loss.total << " f2v_r5 "
                      << r.get(Modality::fmri, Modality::video).r5 << '\n';
        }
    });
    save_checkpoint(state, cfg, out);
    std::cerr << "trained to step " << state.step << ", checkpoint " << out << '\n';
    return 0;
}

int eval_cmd(const Options& o) {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    Checkpoint ck = load_checkpoint(o.checkpoint);
    const auto test = require_split(load_or_generate(o, ck.config.synth), Split::test);
    const RetrievalReport r = full_report(ck.state, test, ck.config, parse_embedding_space(o.space));
    emit(r.to_text(), o.out);
    return 0;
}

int export_cmd(const Options& o) {
    if (o.checkpoint.empty()) throw ConfigError("export-embeddings needs --checkpoint");
    if (o.out.empty()) throw ConfigError("export-embeddings needs --out");
    Checkpoint ck = load_checkpoint(o.checkpoint);
    const auto test = require_split(load_or_generate(o, ck.config.synth), Split::test);
    export_embeddings(embed_test_set(ck.state, test, ck.config, parse_embedding_space(o.space)), o.out);
    return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("--seeds: '" + item + "' is not a seed");
        }
    }
    if (out.empty()) throw ConfigError("--seeds: no seeds given");
    return out;
}

int ablate_cmd(const Options& o) {
    const Config base = load_config(o);
    const auto seeds = parse_seeds(o.seeds);
    const auto all = load_or_generate(o, base.synth);
    const auto train_set = require_split(all, Split::train);
    const auto test_set = require_split(all, Split::test);
    const EmbeddingSpace space = parse_embedding_space(o.space);
    std::vector<VariantRun> runs;
    for (Variant v : kVariants)
        for (std::uint64_t seed : seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            const Config cfg = variant_config(base, v, seed);
            RetrievalReport r = train_and_evaluate(cfg, train_set, test_set, space);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cerr << variant_name(v) << " seed " << seed << ": f2v_r5 " << r.get(Modality::fmri, Modality::video).r5
                      << " mean_r5 " << r.mean_r5() << " (" << secs << " s)\n";
            runs.push_back({v, seed, std::move(r), secs});
        }
    emit(ablation_table(runs), o.out);
    return 0;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config_path, "key = value configuration file");
    cmd->add_option("--set", o.overrides, "override one configuration key (key=value)");
    cmd->add_option("--seed", o.seed, "seed for data generation and training");
    cmd->add_flag("--pre-shift-hrf", o.pre_shift, "generate fMRI without the hemodynamic delay");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic fMRI-video-text alignment"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
    add_common(gen, o);
    gen->add_option("--out", o.out, "dataset path")->required();

    auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(tr, o);
    tr->add_option("--out", o.out, "checkpoint path");
    tr->add_option("--data", o.data, "dataset written by generate-data");
    tr->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
    tr->add_option("--metrics", o.metrics, "per-step CSV log");

    auto* ev = app.add_subcommand("eval", "retrieval report for a checkpoint");
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    ev->add_option("--data", o.data, "dataset written by generate-data");
    ev->add_option("--out", o.out, "report path (stdout if omitted)");
    ev->add_option("--embedding-space", o.space, "quantized or continuous");

    auto* ex = app.add_subcommand("export-embeddings", "write test-set embeddings as CSV");
    ex->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    ex->add_option("--data", o.data, "dataset written by generate-data");
    ex->add_option("--out", o.out, "CSV path")->required();
    ex->add_option("--embedding-space", o.space, "quantized or continuous");

    auto* ab = app.add_subcommand("ablate", "train and compare the full model with single-component ablations");
    add_common(ab, o);
    ab->add_option("--data", o.data, "dataset written by generate-data");
    ab->add_option("--seeds", o.seeds, "comma-separated training seeds");
    ab->add_option("--out", o.out, "table path (stdout if omitted)");
    ab->add_option("--embedding-space", o.space, "quantized or continuous");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) return generate_data(o);
        if (tr->parsed()) return train_cmd(o);
        if (ev->parsed()) return eval_cmd(o);
        if (ex->parsed()) return export_cmd(o);
        if (ab->parsed()) return ablate_cmd(o);
    } catch (const hemalign::Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
