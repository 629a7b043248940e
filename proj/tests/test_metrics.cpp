#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "icr/harness.hpp"
#include "icr/metrics.hpp"
#include "icr/oracle.hpp"
#include "icr/report.hpp"
#include "icr/synth.hpp"

using namespace icr;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

Dataset planted(const std::string& name, std::uint64_t seed, std::size_t n, double sigma = 0.05) {
    SynthSpec spec;
    spec.seed = seed;
    spec.n_layers = 12;
    spec.noise_sigma = sigma;
    const auto p = gen_planted_dataset(spec, n);
    return {name, Matrix(n, p.n_layers, p.features), p.labels};
}

HarnessConfig quick_harness() {
    HarnessConfig hc;
    hc.probe.epochs = 8;
    hc.seeds = {0, 1};
    return hc;
}

}  // namespace

TEST_CASE("auroc basics") {
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(auroc(std::vector<double>{0.1, 0.2, 0.3, 0.4}, y) == 1.0);
    CHECK(auroc(std::vector<double>{0.4, 0.3, 0.2, 0.1}, y) == 0.0);
    CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
    CHECK(auroc(std::vector<double>{0.1, 0.3, 0.3, 0.4}, y) == 0.875);
    CHECK_THROWS_WITH_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}),
                         "auroc: single-class input", MetricsError);
    CHECK_THROWS_AS(auroc(std::vector<double>{0.1, std::nan("")}, std::vector<int>{0, 1}), MetricsError);
    CHECK_THROWS_AS(auroc(std::vector<double>{0.1}, std::vector<int>{0, 1}), MetricsError);
}

TEST_CASE("auroc equals the pairwise count exactly") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng() % 120;
        const int levels = 1 + static_cast<int>(rng() % 12);  // few levels force ties
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % static_cast<std::uint64_t>(levels)) / levels;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        CHECK(auroc(s, y) == oracle_auroc(s, y));
    }
}

TEST_CASE("layerwise auroc orients each column") {
    Matrix f(4, 2, std::vector<double>{0.1, 0.9, 0.2, 0.8, 0.3, 0.2, 0.4, 0.1});
    const std::vector<int> y{0, 0, 1, 1};
    const auto lw = layerwise_auroc(f, y);
    CHECK(lw.auroc == std::vector<double>{1.0, 1.0});
    CHECK(lw.flipped == std::vector<bool>{false, true});

    std::vector<IcrMatrix> ms;
    std::vector<AnswerSpan> spans;
    for (std::size_t r = 0; r < 4; ++r) {
        ms.push_back({Matrix(3, 2, std::vector<double>{9, 9, f(r, 0), f(r, 1), f(r, 0), f(r, 1)})});
        spans.push_back({1, 3});
    }
    const auto lw2 = layerwise_auroc(ms, spans, y);
    CHECK(lw2.auroc == lw.auroc);
    CHECK(lw2.flipped == lw.flipped);
}

TEST_CASE("class means and histogram") {
    Matrix f(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
    const auto m = class_layer_means(f, std::vector<int>{0, 1, 0});
    CHECK(m(0, 0) == 3.0);
    CHECK(m(0, 1) == 4.0);
    CHECK(m(1, 0) == 3.0);
    CHECK(m(1, 1) == 4.0);

    const auto h = histogram(std::vector<double>{0.0, 0.1, 0.5, 0.99, 1.0, 1.5, -0.1}, 4, 0.0, 1.0);
    CHECK(h.edges == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(h.counts == std::vector<std::size_t>{2, 0, 1, 2});
    CHECK_THROWS_AS(histogram(std::vector<double>{}, 0, 0.0, 1.0), MetricsError);
}

TEST_CASE("layer groups and column removal") {
    const LayerGroups g;
    CHECK(LayerGroups::columns(g.early, 32).size() == 14);
    CHECK(LayerGroups::columns(g.middle, 32).front() == 14);
    CHECK(LayerGroups::columns(g.middle, 32).back() == 27);
    CHECK(LayerGroups::columns(g.deep, 32).size() == 4);
    CHECK(LayerGroups::columns(g.deep, 12).empty());
    CHECK(LayerGroups::columns(g.early, 12).size() == 12);
    CHECK_NOTHROW(g.validate(42));
    LayerGroups overlap;
    overlap.middle = {14, 28};
    CHECK_THROWS_AS(overlap.validate(42), MetricsError);

    Matrix f(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
    const std::vector<std::size_t> drop{0, 2};
    CHECK(delete_columns(f, drop) == Matrix(2, 1, std::vector<double>{2, 5}));
    const std::vector<std::size_t> all{0, 1, 2};
    CHECK_THROWS_WITH_AS(delete_columns(f, all), "layer removal leaves an empty feature", MetricsError);
}

TEST_CASE("baselines") {
    CHECK(baseline_ppl(std::vector<double>{-1.0, -3.0}) == doctest::Approx(std::exp(2.0)));
    CHECK_THROWS_AS(baseline_ppl(std::vector<double>{}), MetricsError);

    auto r = icr::test::small_record(4, 6, 2, 5);
    r.logprob = std::vector<float>{-9, -9, -9, -1, -2, -3};
    CHECK(baseline_ppl(r) == doctest::Approx(std::exp(2.0)));

    const std::vector<double> k{2, 0, 0.5, 3};
    CHECK(kernel_logdet(k, 2) == doctest::Approx(std::log(6.0)));
    CHECK_THROWS_AS(kernel_logdet(std::vector<double>{1, 0, 0, 0}, 2), MetricsError);

    SynthSpec spec;
    spec.seed = 6;
    spec.n_tokens = 5;
    spec.n_layers = 2;
    spec.hidden_dim = 5;
    spec.answer_len = 2;
    spec.n_heads = 3;
    const auto rec = gen_synthetic_record(spec, 0);
    // log det of a causal attention map = sum of log self-attention weights
    double want = 0.0;
    for (std::size_t l = 1; l <= 2; ++l) {
        for (std::size_t h = 0; h < 3; ++h) {
            for (std::size_t i = 0; i < 5; ++i) {
                const auto row = rec.attn_head_row(l, h, i);
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) z += std::exp(static_cast<double>(row[j]));
                want += std::log(std::exp(static_cast<double>(row[i])) / z);
            }
        }
    }
    want /= 6.0;
    CHECK(baseline_attn_logdet(rec) == doctest::Approx(want).epsilon(1e-12));
    CHECK_THROWS_AS(baseline_attn_logdet(icr::test::small_record(1)), MetricsError);
}

TEST_CASE("token-level detection applies the probe per token") {
    ProbeConfig c;
    c.input_dim = 3;
    const auto model = init_probe(c);
    IcrMatrix m{Matrix(4, 3, std::vector<double>{0, 0, 0, 0.1, 0.2, 0.3, 0.5, 0.5, 0.5, 1, 0, 1})};
    const auto p = token_level_detect(model, m);
    REQUIRE(p.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == predict(model, m.scores.row(i)));
    CHECK_THROWS_AS(token_level_detect(model, IcrMatrix{Matrix(2, 2)}), MetricsError);
}

TEST_CASE("harness split and evaluation") {
    const auto ds = planted("a", 1, 200);
    const auto hc = quick_harness();
    const auto split = train_test_split(ds.labels, hc);
    CHECK(split.train.size() == 160);
    CHECK(split.test.size() == 40);
    const auto ev = evaluate_features(ds.features, ds.labels, hc);
    CHECK(ev.seed_auroc.size() == 2);
    CHECK(ev.auroc == doctest::Approx((ev.seed_auroc[0] + ev.seed_auroc[1]) / 2));
    CHECK(ev.auroc > 0.85);
    CHECK(ev.test_scores.size() == 40);
    CHECK(ev.per_layer_auroc.size() == 12);
    const auto again = evaluate_features(ds.features, ds.labels, hc);
    CHECK(again.seed_auroc == ev.seed_auroc);

    HarnessConfig empty = hc;
    empty.seeds.clear();
    CHECK_THROWS_AS(evaluate_features(ds.features, ds.labels, empty), MetricsError);
}

TEST_CASE("generalization matrix") {
    const std::vector<Dataset> sets{planted("a", 1, 120), planted("b", 2, 120), planted("c", 3, 120, 0.1)};
    const auto hc = quick_harness();
    const auto gm = generalization_matrix(sets, hc);
    REQUIRE(gm.auroc.rows() == 3);
    for (std::size_t d = 0; d < 3; ++d)
        CHECK(gm.auroc(d, d) == evaluate_features(sets[d].features, sets[d].labels, hc).auroc);
    double in = 0, cross = 0;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) (r == c ? in : cross) += gm.auroc(r, c);
    CHECK(gm.in_domain == doctest::Approx(in / 3));
    CHECK(gm.cross_domain == doctest::Approx(cross / 6));
    CHECK(gm.drop_percent == doctest::Approx(100.0 * (gm.in_domain - gm.cross_domain) / gm.in_domain));
    CHECK(relative_drop_percent(0.8, 0.6) == doctest::Approx(25.0));
    CHECK_THROWS_AS(generalization_matrix(std::span(sets).first(1), hc), MetricsError);
}

TEST_CASE("ablation tables") {
    SynthSpec spec;
    spec.n_layers = 4;
    spec.n_tokens = 10;
    spec.hidden_dim = 12;
    spec.answer_len = 4;
    const auto records = gen_record_dataset(spec, 60, "toy");
    const auto cf = component_features("toy", records, 20);
    for (double v : cf.features[0].data()) CHECK(v == 0.0);
    const auto hc = quick_harness();
    const std::vector<ComponentFeatures> sets{cf};
    const auto t = run_component_ablation(sets, hc);
    CHECK(t.rows == std::vector<std::string>{"none", "hs-only", "full"});
    CHECK(t.cols == std::vector<std::string>{"toy"});
    CHECK(t.values(0, 0) == 0.5);

    const auto ds = planted("a", 4, 120);
    LayerGroups groups;
    groups.early = {1, 4};
    groups.middle = {5, 8};
    groups.deep = {9, 12};
    const auto lt = run_layer_ablation(ds.features, ds.labels, groups, hc);
    CHECK(lt.rows.size() == 4);
    CHECK(lt.values(0, 0) == evaluate_features(ds.features, ds.labels, hc).auroc);
    groups.deep = {1, 12};
    CHECK_THROWS_AS(run_layer_ablation(ds.features, ds.labels, groups, hc), MetricsError);
}

TEST_CASE("report JSON and CSV") {
    Report r;
    r.run_id = "x-1";
    r.config = {{"k", 20}};
    r.add({"t", {"a", "b"}, {"c1", "c2", "c3"}, Matrix(2, 3, std::vector<double>{0.1, 1.0 / 3, 2, -1e-300, 5, 6})});
    r.add({"empty", {}, {"auroc"}, Matrix()});
    CHECK(r.tables.at("empty").values.cols() == 1);
    CHECK_THROWS(r.add({"bad", {"a"}, {"x", "y"}, Matrix(1, 1)}));
    CHECK(report_from_json(to_json(r)) == r);
    CHECK(report_from_json(nlohmann::json::parse(to_json(r).dump(2))) == r);

    const auto csv = table_csv(r.tables.at("t"));
    CHECK(line_count(csv) == 3);
    CHECK(csv.rfind("row,c1,c2,c3\n", 0) == 0);
    CHECK(table_csv(r.tables.at("empty")) == "row,auroc\n");

    icr::test::ScratchDir dir("report");
    const auto files = emit_report(r, dir.path(), parse_formats("json,csv"));
    CHECK(files.size() == 3);
    const auto first = slurp(dir / "report.json");
    emit_report(r, dir.path(), parse_formats("json"));
    CHECK(slurp(dir / "report.json") == first);
    CHECK(parse_formats("csv").json == false);
    CHECK_THROWS(parse_formats("xml"));
    CHECK(format_number(0.1) == "0.1");
    CHECK(std::stod(format_number(1.0 / 3)) == 1.0 / 3);
}

TEST_CASE("feature and label CSV round trip") {
    icr::test::ScratchDir dir("csv");
    Matrix f(3, 2, std::vector<double>{0.1, 1.0 / 3, 1e-17, 0.0, 0.999999999999, 0.5});
    write_features_csv(dir / "f.csv", f);
    CHECK(read_features_csv(dir / "f.csv") == f);
    CHECK(slurp(dir / "f.csv").rfind("layer_1,layer_2\n", 0) == 0);

    const std::vector<std::string> ids{"a", "b", "c"};
    const std::vector<int> y{0, 1, 1};
    write_labels_csv(dir / "l.csv", ids, y);
    std::vector<std::string> back_ids;
    CHECK(read_labels_csv(dir / "l.csv", &back_ids) == y);
    CHECK(back_ids == ids);

    std::ofstream(dir / "bad.csv") << "layer_1\nabc\n";
    CHECK_THROWS(read_features_csv(dir / "bad.csv"));
}
