#include "icr/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include <CLI11.hpp>

#include "icr/dump.hpp"
#include "icr/harness.hpp"
#include "icr/icr_score.hpp"
#include "icr/metrics.hpp"
#include "icr/probe.hpp"
#include "icr/report.hpp"
#include "icr/synth.hpp"

namespace fs = std::filesystem;

namespace icr {

namespace {

/// Bad flag combination detected after parsing; maps to exit status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string format = "json,csv";
};

struct ScoreFlags {
    std::size_t k = kDefaultTopK;
    std::string setting = "full";
    std::string pool = "answer";

    IcrSetting icr_setting() const { return {icr_mode_from_string(setting), k}; }
    PoolScope scope() const { return pool == "all" ? PoolScope::all : PoolScope::answer; }
    nlohmann::json to_json() const { return {{"k", k}, {"setting", setting}, {"pool", pool}}; }
};

struct ProbeFlags {
    std::size_t runs = 5;
    std::size_t epochs = 50;
    bool logistic = false;
    double test_fraction = 0.2;

    ProbeConfig probe(std::size_t input_dim) const {
        ProbeConfig pc = logistic ? ProbeConfig::logistic_regression(input_dim) : ProbeConfig{};
        pc.input_dim = input_dim;
        pc.epochs = epochs;
        return pc;
    }

    HarnessConfig harness(std::uint64_t seed) const {
        HarnessConfig hc;
        hc.probe = probe(0);
        hc.seeds.clear();
        for (std::size_t r = 0; r < runs; ++r) hc.seeds.push_back(seed + r);
        hc.split_seed = seed;
        hc.test_fraction = test_fraction;
        return hc;
    }
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
    app->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
    auto* out = app->add_option("--out", c.out, "Output directory");
    if (needs_out) out->required();
    app->add_option("--format", c.format, "Report formats: json, csv or both")->capture_default_str();
}

void add_score_flags(CLI::App* app, ScoreFlags& s) {
    app->add_option("--k", s.k, "Top-k attention tokens")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--setting", s.setting, "full | hs-only | none")
        ->capture_default_str()
        ->check(CLI::IsMember({"full", "hs-only", "none"}));
    app->add_option("--pool", s.pool, "answer | all")->capture_default_str()->check(CLI::IsMember({"answer", "all"}));
}

CLI::Option* add_probe_flags(CLI::App* app, ProbeFlags& p) {
    auto* runs = app->add_option("--runs", p.runs, "Training seeds (seed, seed+1, ...)")
                     ->capture_default_str()
                     ->check(CLI::PositiveNumber);
    app->add_option("--epochs", p.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_flag("--logistic", p.logistic, "Logistic regression instead of the MLP");
    app->add_option("--test-fraction", p.test_fraction, "Held-out test fraction")
        ->capture_default_str()
        ->check(CLI::Range(0.01, 0.99));
    return runs;
}

std::string layer_name(std::size_t l) { return "layer_" + std::to_string(l + 1); }

std::vector<std::string> layer_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < n; ++l) out.push_back(layer_name(l));
    return out;
}

void finish(const Report& report, const Common& c, std::ostream& out) {
    fs::create_directories(c.out);
    for (const auto& p : emit_report(report, c.out, parse_formats(c.format))) out << "wrote " << p.string() << '\n';
}

std::vector<ActivationRecord> load_records(const fs::path& dir) {
    const auto files = list_dumps(dir);
    if (files.empty()) throw DumpError("no .icrd files in " + dir.string());
    std::vector<ActivationRecord> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        try {
            out.push_back(read_dump(f));
        } catch (const DumpError& e) {
            throw DumpError(f.filename().string() + ": " + e.what());
        }
    }
    return out;
}

struct FeatureSet {
    Matrix features;
    std::vector<int> labels;
    std::vector<std::string> ids;
};

FeatureSet features_from_records(std::span<const ActivationRecord> records, const ScoreFlags& s) {
    FeatureSet fs_;
    const std::size_t width = records.front().n_layers;
    std::vector<double> rows;
    for (const auto& r : records) {
        if (r.n_layers != width) throw DumpError(r.example_id + ": layer count differs from the first dump");
        const auto f = record_features(r, s.icr_setting(), s.scope());
        rows.insert(rows.end(), f.begin(), f.end());
        fs_.labels.push_back(r.label);
        fs_.ids.push_back(r.example_id);
    }
    fs_.features = Matrix(records.size(), width, std::move(rows));
    return fs_;
}

FeatureSet load_features(const std::string& features_path, const std::string& labels_path) {
    FeatureSet fs_;
    fs_.features = read_features_csv(features_path);
    fs_.labels = read_labels_csv(labels_path, &fs_.ids);
    if (fs_.features.rows() != fs_.labels.size()) {
        throw MetricsError("feature rows (" + std::to_string(fs_.features.rows()) + ") and labels (" +
                           std::to_string(fs_.labels.size()) + ") differ");
    }
    return fs_;
}

Table layerwise_table(const LayerwiseAuroc& lw) {
    Table t{"layerwise_auroc", layer_names(lw.auroc.size()), {"auroc", "flipped"}, Matrix(lw.auroc.size(), 2)};
    for (std::size_t l = 0; l < lw.auroc.size(); ++l) {
        t.values(l, 0) = lw.auroc[l];
        t.values(l, 1) = lw.flipped[l] ? 1.0 : 0.0;
    }
    return t;
}

Table layer_means_table(const Matrix& features, std::span<const int> labels) {
    return {"layer_means", {"faithful", "hallucinated"}, layer_names(features.cols()),
            class_layer_means(features, labels)};
}

Table histogram_table(std::span<const double> scores, std::span<const int> labels) {
    constexpr std::size_t bins = 20;
    std::vector<double> by_class[2];
    for (std::size_t i = 0; i < scores.size(); ++i) by_class[labels[i] == 1].push_back(scores[i]);
    const auto h0 = histogram(by_class[0], bins, 0.0, 1.0);
    const auto h1 = histogram(by_class[1], bins, 0.0, 1.0);
    Table t{"score_histogram", {}, {"lo", "hi", "faithful", "hallucinated"}, Matrix(bins, 4)};
    for (std::size_t b = 0; b < bins; ++b) {
        t.rows.push_back("bin_" + std::to_string(b));
        t.values(b, 0) = h0.edges[b];
        t.values(b, 1) = h0.edges[b + 1];
        t.values(b, 2) = static_cast<double>(h0.counts[b]);
        t.values(b, 3) = static_cast<double>(h1.counts[b]);
    }
    return t;
}

Table scores_table(std::span<const double> scores, std::span<const int> labels) {
    Table t{"test_scores", {}, {"score", "label"}, Matrix(scores.size(), 2)};
    for (std::size_t i = 0; i < scores.size(); ++i) {
        t.rows.push_back("example_" + std::to_string(i));
        t.values(i, 0) = scores[i];
        t.values(i, 1) = labels[i];
    }
    return t;
}

std::string run_id(const std::string& command, std::uint64_t seed) {
    return command + "-" + std::to_string(seed);
}

LayerGroups::Range parse_range(const std::string& text) {
    // "a-b", "a-" (open end) or "a".
    const auto dash = text.find('-');
    auto number = [&](std::string_view s) {
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw UsageError("bad layer range '" + text + "'");
        return v;
    };
    const std::string_view all(text);
    if (dash == std::string::npos) {
        const auto v = number(all);
        return {v, v};
    }
    const auto first = number(all.substr(0, dash));
    const auto rest = all.substr(dash + 1);
    return {first, rest.empty() ? std::size_t{1000000} : number(rest)};
}

// --- subcommands --------------------------------------------------------------

struct SynthFlags {
    std::size_t n = 100;
    std::string dataset = "synth";
    bool planted = false;
    SynthSpec spec;
    std::vector<double> decoupling{0.0, 0.0};
};

int run_synth(const Common& c, SynthFlags f, std::ostream& out) {
    if (f.decoupling.size() != 2) throw UsageError("--decouple takes two values: faithful hallucinated");
    f.spec.seed = c.seed;
    f.spec.attn_decoupling = {f.decoupling[0], f.decoupling[1]};
    with_default_profiles(f.spec).validate();
    fs::create_directories(c.out);
    const fs::path dir = c.out;
    if (f.planted) {
        const auto planted = gen_planted_dataset(f.spec, f.n);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < f.n; ++i) ids.push_back(std::to_string(i));
        write_features_csv(dir / "features.csv", Matrix(f.n, planted.n_layers, planted.features));
        write_labels_csv(dir / "labels.csv", ids, planted.labels);
        out << "wrote " << f.n << " planted examples to " << dir.string() << '\n';
        return 0;
    }
    const auto records = gen_record_dataset(f.spec, f.n, f.dataset);
    for (const auto& r : records) write_dump(r, dir / (r.dataset + "_" + r.example_id + ".icrd"));
    out << "wrote " << records.size() << " dumps to " << dir.string() << '\n';
    return 0;
}

int run_validate(const std::string& dumps, const std::optional<std::string>& out_dir, const Common& c,
                 std::ostream& out) {
    const auto files = list_dumps(dumps);
    if (files.empty()) throw DumpError("no .icrd files in " + dumps);
    Table t{"validation", {}, {"violations"}, Matrix(files.size(), 1)};
    std::size_t bad = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto name = files[i].filename().string();
        t.rows.push_back(name);
        std::vector<std::string> problems;
        try {
            for (const auto& v : validate_dump(read_dump(files[i])).violations)
                problems.push_back(v.location.empty() ? v.message : v.message + " at " + v.location);
        } catch (const DumpError& e) {
            problems.push_back(e.what());
        }
        t.values(i, 0) = static_cast<double>(problems.size());
        if (problems.empty()) {
            out << name << ": ok\n";
        } else {
            ++bad;
            for (const auto& p : problems) out << name << ": " << p << '\n';
        }
    }
    if (out_dir) {
        Report report;
        report.run_id = run_id("validate", c.seed);
        report.add(std::move(t));
        Common where = c;
        where.out = *out_dir;
        finish(report, where, out);
    }
    if (bad > 0) throw DumpError(std::to_string(bad) + " of " + std::to_string(files.size()) + " dumps invalid");
    return 0;
}

int run_compute(const Common& c, const std::string& dumps, const ScoreFlags& s, std::ostream& out) {
    const auto records = load_records(dumps);
    const auto fs_ = features_from_records(records, s);
    fs::path features_path, labels_path;
    const fs::path target = c.out;
    if (target.extension() == ".csv") {
        features_path = target;
        labels_path = target.parent_path() / (target.stem().string() + "_labels.csv");
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
    } else {
        fs::create_directories(target);
        features_path = target / "features.csv";
        labels_path = target / "labels.csv";
    }
    write_features_csv(features_path, fs_.features);
    write_labels_csv(labels_path, fs_.ids, fs_.labels);
    out << "wrote " << features_path.string() << " (" << fs_.features.rows() << " x " << fs_.features.cols()
        << ")\nwrote " << labels_path.string() << '\n';
    return 0;
}

void write_history_csv(const fs::path& path, const TrainHistory& history) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "epoch,train_loss,val_loss,learning_rate\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
        os << e + 1 << ',' << format_number(history[e].train_loss) << ',' << format_number(history[e].val_loss)
           << ',' << format_number(history[e].learning_rate) << '\n';
    }
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

int run_train(const Common& c, const std::string& features, const std::string& labels, const ProbeFlags& p,
              std::ostream& out) {
    const auto data = load_features(features, labels);
    const fs::path dir = c.out;
    fs::create_directories(dir);
    Report report;
    report.run_id = run_id("train", c.seed);
    ProbeConfig base = p.probe(data.features.cols());
    report.config = {{"probe", to_json(base)}, {"runs", p.runs}, {"seed", c.seed}};
    Table t{"training", {}, {"seed", "final_train_loss", "final_val_loss", "final_lr", "train_auroc"},
            Matrix(p.runs, 5)};
    for (std::size_t r = 0; r < p.runs; ++r) {
        ProbeConfig pc = base;
        pc.seed = c.seed + r;
        const auto result = train_probe(data.features, data.labels, pc);
        const auto ckpt = dir / ("probe_run" + std::to_string(r) + ".ckpt");
        save_checkpoint(result.model, ckpt);
        if (r == 0) save_checkpoint(result.model, dir / "probe.ckpt");
        write_history_csv(dir / ("history_run" + std::to_string(r) + ".csv"), result.history);
        out << "wrote " << ckpt.string() << '\n';
        t.rows.push_back("run_" + std::to_string(r));
        const auto& last = result.history.back();
        t.values(r, 0) = static_cast<double>(pc.seed);
        t.values(r, 1) = last.train_loss;
        t.values(r, 2) = last.val_loss;
        t.values(r, 3) = last.learning_rate;
        t.values(r, 4) = auroc(forward(result.model, data.features, Mode::eval), data.labels);
    }
    report.add(std::move(t));
    finish(report, c, out);
    return 0;
}

int run_eval(const Common& c, const std::string& features, const std::string& labels,
             const std::optional<std::string>& checkpoint, const ProbeFlags& p, std::ostream& out) {
    const auto data = load_features(features, labels);
    Report report;
    report.run_id = run_id("eval", c.seed);
    std::vector<double> scores;
    std::vector<int> score_labels;
    if (checkpoint) {
        const auto model = load_checkpoint(*checkpoint);
        if (model.config.input_dim != data.features.cols()) {
            throw ProbeError("checkpoint expects " + std::to_string(model.config.input_dim) + " features, got " +
                             std::to_string(data.features.cols()));
        }
        scores = forward(model, data.features, Mode::eval);
        score_labels = data.labels;
        const double a = auroc(scores, score_labels);
        report.config = {{"checkpoint", true}, {"probe", to_json(model.config)}};
        report.add({"eval", {"checkpoint"}, {"auroc"}, Matrix(1, 1, a)});
        out << "auroc " << format_number(a) << '\n';
    } else {
        const auto hc = p.harness(c.seed);
        const auto ev = evaluate_features(data.features, data.labels, hc);
        report.config = hc.to_json();
        Table t{"eval", {"mean"}, {"auroc"}, Matrix(1 + ev.seed_auroc.size(), 1)};
        t.values(0, 0) = ev.auroc;
        for (std::size_t s = 0; s < ev.seed_auroc.size(); ++s) {
            t.rows.push_back("seed_" + std::to_string(ev.seeds[s]));
            t.values(s + 1, 0) = ev.seed_auroc[s];
        }
        report.add(std::move(t));
        scores = ev.test_scores;
        score_labels = ev.test_labels;
        out << "auroc " << format_number(ev.auroc) << '\n';
    }
    report.add(layerwise_table(layerwise_auroc(data.features, data.labels)));
    report.add(layer_means_table(data.features, data.labels));
    report.add(histogram_table(scores, score_labels));
    report.add(scores_table(scores, score_labels));
    finish(report, c, out);
    return 0;
}

int run_layerwise(const Common& c, const std::optional<std::string>& features,
                  const std::optional<std::string>& labels, const std::optional<std::string>& dumps,
                  const ScoreFlags& s, std::ostream& out) {
    Report report;
    report.run_id = run_id("layerwise", c.seed);
    FeatureSet data;
    LayerwiseAuroc lw;
    if (dumps) {
        const auto records = load_records(*dumps);
        std::vector<IcrMatrix> matrices;
        std::vector<AnswerSpan> spans;
        for (const auto& r : records) {
            matrices.push_back(icr_matrix(r, s.icr_setting()));
            spans.push_back(s.scope() == PoolScope::all ? AnswerSpan{0, r.n_tokens} : r.answer_span);
            data.labels.push_back(r.label);
        }
        lw = layerwise_auroc(matrices, spans, data.labels);
        std::vector<double> rows;
        for (std::size_t i = 0; i < matrices.size(); ++i) {
            const auto f = pool_features(matrices[i], spans[i]);
            rows.insert(rows.end(), f.begin(), f.end());
        }
        data.features = Matrix(matrices.size(), records.front().n_layers, std::move(rows));
        report.config = s.to_json();
    } else {
        data = load_features(*features, *labels);
        lw = layerwise_auroc(data.features, data.labels);
    }
    report.add(layerwise_table(lw));
    report.add(layer_means_table(data.features, data.labels));
    const auto best = std::max_element(lw.auroc.begin(), lw.auroc.end()) - lw.auroc.begin();
    out << "best layer " << best + 1 << " auroc " << format_number(lw.auroc[best]) << '\n';
    finish(report, c, out);
    return 0;
}

std::pair<std::string, std::string> split_named(const std::string& text, char sep) {
    const auto pos = text.find(sep);
    if (pos == std::string::npos || pos == 0 || pos + 1 == text.size()) {
        throw UsageError("expected name" + std::string(1, sep) + "value, got '" + text + "'");
    }
    return {text.substr(0, pos), text.substr(pos + 1)};
}

int run_ablate_components(const Common& c, const std::vector<std::string>& dumps, const ScoreFlags& s,
                          const ProbeFlags& p, std::ostream& out) {
    std::vector<ComponentFeatures> sets;
    for (const auto& entry : dumps) {
        std::string name, dir;
        if (entry.find('=') != std::string::npos) {
            std::tie(name, dir) = split_named(entry, '=');
        } else {
            dir = entry;
            name = fs::path(entry).lexically_normal().filename().string();
            if (name.empty()) name = fs::path(entry).lexically_normal().parent_path().filename().string();
        }
        ComponentFeatureBuilder builder(name, s.k, s.scope());
        const auto files = list_dumps(dir);
        if (files.empty()) throw DumpError("no .icrd files in " + dir);
        for (const auto& f : files) builder.add(read_dump(f));
        sets.push_back(builder.finish());
    }
    const auto hc = p.harness(c.seed);
    Report report;
    report.run_id = run_id("ablate-components", c.seed);
    report.config = hc.to_json();
    report.config["k"] = s.k;
    report.config["pool"] = s.pool;
    auto table = run_component_ablation(sets, hc);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        out << table.rows[r];
        for (std::size_t col = 0; col < table.cols.size(); ++col) out << ' ' << format_number(table.values(r, col));
        out << '\n';
    }
    report.add(std::move(table));
    finish(report, c, out);
    return 0;
}

int run_ablate_layers(const Common& c, const std::string& features, const std::string& labels,
                      const std::string& early, const std::string& middle, const std::string& deep,
                      const ProbeFlags& p, std::ostream& out) {
    const auto data = load_features(features, labels);
    LayerGroups groups{parse_range(early), parse_range(middle), parse_range(deep)};
    const auto hc = p.harness(c.seed);
    Report report;
    report.run_id = run_id("ablate-layers", c.seed);
    report.config = hc.to_json();
    report.config["groups"] = {{"early", early}, {"middle", middle}, {"deep", deep}};
    auto table = run_layer_ablation(data.features, data.labels, groups, hc);
    for (std::size_t r = 0; r < table.rows.size(); ++r)
        out << table.rows[r] << ' ' << format_number(table.values(r, 0)) << '\n';
    report.add(std::move(table));
    finish(report, c, out);
    return 0;
}

int run_gen_matrix(const Common& c, const std::vector<std::string>& specs, const ProbeFlags& p,
                   std::ostream& out) {
    std::vector<Dataset> datasets;
    for (const auto& entry : specs) {
        const auto [name, paths] = split_named(entry, '=');
        const auto [feat, lab] = split_named(paths, ':');
        auto data = load_features(feat, lab);
        datasets.push_back({name, std::move(data.features), std::move(data.labels)});
    }
    const auto hc = p.harness(c.seed);
    const auto gm = generalization_matrix(datasets, hc);
    Report report;
    report.run_id = run_id("gen-matrix", c.seed);
    report.config = hc.to_json();
    report.add({"generalization", gm.datasets, gm.datasets, gm.auroc});
    report.add({"generalization_summary",
                {"in_domain", "cross_domain", "drop_percent"},
                {"value"},
                Matrix(3, 1, {gm.in_domain, gm.cross_domain, gm.drop_percent})});
    out << "in-domain " << format_number(gm.in_domain) << " cross-domain " << format_number(gm.cross_domain)
        << " drop " << format_number(gm.drop_percent) << "%\n";
    finish(report, c, out);
    return 0;
}

int run_token_detect(const Common& c, const std::string& dumps, const std::string& checkpoint,
                     const ScoreFlags& s, std::ostream& out) {
    const auto model = load_checkpoint(checkpoint);
    const auto records = load_records(dumps);
    fs::create_directories(c.out);
    const fs::path csv = fs::path(c.out) / "token_scores.csv";
    std::ofstream os(csv, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    os << "example_id,token,in_answer,probability\n";
    Table t{"token_detect", {}, {"answer_mean", "answer_max", "label"}, Matrix(records.size(), 3)};
    for (std::size_t n = 0; n < records.size(); ++n) {
        const auto& r = records[n];
        if (r.n_layers != model.config.input_dim) {
            throw ProbeError(r.example_id + ": probe expects " + std::to_string(model.config.input_dim) +
                             " layers, dump has " + std::to_string(r.n_layers));
        }
        const auto probs = token_level_detect(model, icr_matrix(r, s.icr_setting()));
        double sum = 0.0, peak = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const bool in_answer = i >= r.answer_span.begin && i < r.answer_span.end;
            if (in_answer) {
                sum += probs[i];
                peak = std::max(peak, probs[i]);
            }
            os << r.example_id << ',' << i << ',' << (in_answer ? 1 : 0) << ',' << format_number(probs[i]) << '\n';
        }
        t.rows.push_back(r.example_id);
        t.values(n, 0) = sum / static_cast<double>(r.answer_span.size());
        t.values(n, 1) = peak;
        t.values(n, 2) = r.label;
    }
    os.close();
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    out << "wrote " << csv.string() << '\n';
    Report report;
    report.run_id = run_id("token-detect", c.seed);
    report.config = s.to_json();
    report.add(std::move(t));
    finish(report, c, out);
    return 0;
}

int run_baselines(const Common& c, const std::string& dumps, std::ostream& out) {
    const auto records = load_records(dumps);
    const bool have_ppl = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.logprob.has_value(); });
    const bool have_heads = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.n_heads > 0; });
    if (!have_ppl && !have_heads) throw MetricsError("dumps carry neither logprobs nor per-head attention");

    std::vector<std::string> names;
    std::vector<std::vector<double>> scores;
    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(r.label);
    if (have_ppl) {
        names.push_back("perplexity");
        scores.emplace_back();
        for (const auto& r : records) scores.back().push_back(baseline_ppl(r));
    }
    if (have_heads) {
        names.push_back("attn_logdet");
        scores.emplace_back();
        for (const auto& r : records) scores.back().push_back(baseline_attn_logdet(r));
    }
    Report report;
    report.run_id = run_id("baselines", c.seed);
    Table summary{"baselines", names, {"auroc"}, Matrix(names.size(), 1)};
    Table per_example{"baseline_scores", {}, names, Matrix(records.size(), names.size())};
    per_example.cols.push_back("label");
    per_example.values = Matrix(records.size(), names.size() + 1);
    for (std::size_t b = 0; b < names.size(); ++b) {
        summary.values(b, 0) = auroc(scores[b], labels);
        out << names[b] << " auroc " << format_number(summary.values(b, 0)) << '\n';
    }
    for (std::size_t n = 0; n < records.size(); ++n) {
        per_example.rows.push_back(records[n].example_id);
        for (std::size_t b = 0; b < names.size(); ++b) per_example.values(n, b) = scores[b][n];
        per_example.values(n, names.size()) = labels[n];
    }
    report.add(std::move(summary));
    report.add(std::move(per_example));
    finish(report, c, out);
    return 0;
}

}  // namespace

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ICR score pipeline: activation dumps to hallucination probes", "icr"};
    app.require_subcommand(1);

    Common common;
    ScoreFlags score;
    ProbeFlags probe;

    auto* synth = app.add_subcommand("synth", "Write synthetic ICRD dumps (or planted feature CSVs)");
    add_common(synth, common);
    SynthFlags sf;
    synth->add_option("--n", sf.n, "Number of examples")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--dataset", sf.dataset, "Dataset name")->capture_default_str();
    synth->add_flag("--planted", sf.planted, "Write features.csv/labels.csv from the planted profiles");
    synth->add_option("--tokens", sf.spec.n_tokens, "Tokens per example")->capture_default_str();
    synth->add_option("--layers", sf.spec.n_layers, "Decoder layers")->capture_default_str();
    synth->add_option("--dim", sf.spec.hidden_dim, "Hidden size")->capture_default_str();
    synth->add_option("--answer-len", sf.spec.answer_len, "Answer tokens at the end")->capture_default_str();
    synth->add_option("--sigma", sf.spec.noise_sigma, "Profile noise")->capture_default_str();
    synth->add_option("--ffn-weight", sf.spec.ffn_weight, "Injection weight multiplier")->capture_default_str();
    synth->add_option("--temperature", sf.spec.attn_temperature, "Attention logit scale")->capture_default_str();
    synth->add_option("--scale", sf.spec.mixture_scale, "Update length scale")->capture_default_str();
    synth->add_option("--decouple", sf.decoupling, "Attention decoupling for faithful and hallucinated")
        ->expected(2);
    synth->add_flag("--orthonormal", sf.spec.orthonormal_context, "Unit-basis last-layer states");
    synth->add_option("--heads", sf.spec.n_heads, "Per-head scores to store (0 = none)")->capture_default_str();
    bool no_logprobs = false;
    synth->add_flag("--no-logprobs", no_logprobs, "Omit token log-probabilities");

    auto* validate = app.add_subcommand("validate", "Check dumps against the format invariants");
    std::string validate_dir;
    std::optional<std::string> validate_out;
    validate->add_option("--dumps", validate_dir, "Dump directory")->required()->check(CLI::ExistingDirectory);
    validate->add_option("--seed", common.seed, "Seed (recorded in the report id)");
    validate->add_option("--out", validate_out, "Optional report directory");
    validate->add_option("--format", common.format, "Report formats")->capture_default_str();

    auto* compute = app.add_subcommand("compute", "Pooled ICR features from a dump directory");
    add_common(compute, common);
    std::string compute_dumps;
    compute->add_option("--dumps", compute_dumps, "Dump directory")->required()->check(CLI::ExistingDirectory);
    add_score_flags(compute, score);

    auto* train = app.add_subcommand("train", "Train probes on a feature CSV");
    add_common(train, common);
    std::string features, labels;
    train->add_option("--features", features, "Feature CSV")->required()->check(CLI::ExistingFile);
    train->add_option("--labels", labels, "Label CSV")->required()->check(CLI::ExistingFile);
    add_probe_flags(train, probe);

    auto* eval = app.add_subcommand("eval", "80/20 multi-seed evaluation, or score a checkpoint");
    add_common(eval, common);
    std::optional<std::string> checkpoint;
    eval->add_option("--features", features, "Feature CSV")->required()->check(CLI::ExistingFile);
    eval->add_option("--labels", labels, "Label CSV")->required()->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", checkpoint, "Score with a trained probe instead")->check(CLI::ExistingFile);
    auto* eval_runs = add_probe_flags(eval, probe);

    auto* layerwise = app.add_subcommand("layerwise", "Per-layer AUROC of pooled ICR features");
    add_common(layerwise, common);
    std::optional<std::string> lw_features, lw_labels, lw_dumps;
    layerwise->add_option("--features", lw_features, "Feature CSV")->check(CLI::ExistingFile);
    layerwise->add_option("--labels", lw_labels, "Label CSV")->check(CLI::ExistingFile);
    layerwise->add_option("--dumps", lw_dumps, "Dump directory")->check(CLI::ExistingDirectory);
    add_score_flags(layerwise, score);

    auto* ablate_c = app.add_subcommand("ablate-components", "AUROC under none / hs-only / full");
    add_common(ablate_c, common);
    std::vector<std::string> ablate_dumps;
    ablate_c->add_option("--dumps", ablate_dumps, "Dump directory, optionally name=dir (repeatable)")->required();
    add_score_flags(ablate_c, score);
    add_probe_flags(ablate_c, probe);

    auto* ablate_l = app.add_subcommand("ablate-layers", "Retrain without each layer group");
    add_common(ablate_l, common);
    std::string early = "1-14", middle = "15-28", deep = "29-";
    ablate_l->add_option("--features", features, "Feature CSV")->required()->check(CLI::ExistingFile);
    ablate_l->add_option("--labels", labels, "Label CSV")->required()->check(CLI::ExistingFile);
    ablate_l->add_option("--early", early, "Early layers, 1-based inclusive")->capture_default_str();
    ablate_l->add_option("--middle", middle, "Middle layers")->capture_default_str();
    ablate_l->add_option("--deep", deep, "Deep layers")->capture_default_str();
    add_probe_flags(ablate_l, probe);

    auto* gen = app.add_subcommand("gen-matrix", "Train on each dataset, test on every dataset");
    add_common(gen, common);
    std::vector<std::string> gen_specs;
    gen->add_option("--dataset", gen_specs, "name=features.csv:labels.csv (repeatable)")->required();
    add_probe_flags(gen, probe);

    auto* token = app.add_subcommand("token-detect", "Per-token probe scores");
    add_common(token, common);
    std::string token_dumps, token_ckpt;
    token->add_option("--dumps", token_dumps, "Dump directory")->required()->check(CLI::ExistingDirectory);
    token->add_option("--checkpoint", token_ckpt, "Probe checkpoint")->required()->check(CLI::ExistingFile);
    add_score_flags(token, score);

    auto* baselines = app.add_subcommand("baselines", "Perplexity and attention log-determinant scores");
    add_common(baselines, common);
    std::string baseline_dumps;
    baselines->add_option("--dumps", baseline_dumps, "Dump directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        try {
            parse_formats(common.format);
        } catch (const std::exception& e) {
            throw UsageError(e.what());
        }
        if (synth->parsed()) {
            sf.spec.logprobs = !no_logprobs;
            return run_synth(common, sf, out);
        }
        if (validate->parsed()) return run_validate(validate_dir, validate_out, common, out);
        if (compute->parsed()) return run_compute(common, compute_dumps, score, out);
        if (train->parsed()) return run_train(common, features, labels, probe, out);
        if (eval->parsed()) {
            if (checkpoint && eval_runs->count() > 0) throw UsageError("--checkpoint and --runs are exclusive");
            return run_eval(common, features, labels, checkpoint, probe, out);
        }
        if (layerwise->parsed()) {
            const bool from_csv = lw_features || lw_labels;
            if (from_csv == lw_dumps.has_value()) throw UsageError("give either --dumps or --features/--labels");
            if (from_csv && !(lw_features && lw_labels)) throw UsageError("--features and --labels go together");
            return run_layerwise(common, lw_features, lw_labels, lw_dumps, score, out);
        }
        if (ablate_c->parsed()) return run_ablate_components(common, ablate_dumps, score, probe, out);
        if (ablate_l->parsed()) return run_ablate_layers(common, features, labels, early, middle, deep, probe, out);
        if (gen->parsed()) return run_gen_matrix(common, gen_specs, probe, out);
        if (token->parsed()) return run_token_detect(common, token_dumps, token_ckpt, score, out);
        if (baselines->parsed()) return run_baselines(common, baseline_dumps, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace icr
