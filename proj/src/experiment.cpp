#include "ultr/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "ultr/eval_metrics.hpp"
#include "ultr/simulator.hpp"
#include "ultr/verification.hpp"

namespace ultr {

namespace fs = std::filesystem;

const std::map<std::string, std::string>& Config::known_keys() {
    static const std::map<std::string, std::string> keys = {
        {"seed", "7"},
        {"threads", "0"},
        {"top_n", "10"},
        {"dataset.source", "synthetic"},
        {"dataset.path", ""},
        {"dataset.n_queries", "700"},
        {"dataset.docs_per_query", "10"},
        {"dataset.feature_dim", "16"},
        {"dataset.y_max", "4"},
        {"split.train", "0.6"},
        {"split.valid", "0.2"},
        {"split.test", "0.2"},
        {"logger.label_fraction", "0.01"},
        {"click.model", "cascade"},
        {"click.epsilon", "0.1"},
        {"click.eta", "1.0"},
        {"click.sessions_per_query", "100"},
        {"sim.hidden", "64"},
        {"sim.steps", "2000"},
        {"sim.batch", "64"},
        {"sim.lr", "0.05"},
        {"sim.l2", "1e-5"},
        {"sim.clamp", "1e-6"},
        {"dla.steps", "1500"},
        {"dla.batch", "64"},
        {"dla.lr", "0.1"},
        {"dla.clip", "10"},
        {"prop.source", "learned"},
        {"prop.floor", "0.01"},
        {"train.objective", "dr"},
        {"train.variant", ""},
        {"train.name", ""},
        {"train.batch", "64"},
        {"train.steps", "2000"},
        {"train.lr", "0.05"},
        {"train.k", "8"},
        {"train.l2", "0"},
        {"train.hidden", "64,32"},
        {"train.dropout", "0.1"},
        {"train.eval_every", "200"},
        {"eval.ks", "1,3,5,10"},
        {"fisher.iterations", "10000"},
        {"verify.instances", "100"},
        {"verify.tolerance", "1e-9"},
        {"report.methods", ""},
        {"report.baseline", "naive"},
    };
    return keys;
}

Config::Config() : values_(known_keys()) {}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        std::string key = line.substr(0, eq == std::string::npos ? line.size() : eq);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        key = trim(key);
        if (key.empty()) continue;
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        cfg.set(key, trim(line.substr(eq + 1)));
    }
    return cfg;
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

void Config::set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key))
        throw std::runtime_error("unknown config key: " + key);
    values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::out_of_range("unknown config key: " + key);
    return it->second;
}

int Config::get_int(const std::string& key) const {
    return static_cast<int>(get_i64(key));
}

long long Config::get_i64(const std::string& key) const {
    const std::string& v = get(key);
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config " + key + ": bad integer " + v);
    return r;
}

uint64_t Config::get_u64(const std::string& key) const {
    return static_cast<uint64_t>(get_i64(key));
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config " + key + ": bad number " + v);
    return r;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream in(get(key));
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

std::string Config::resolved_text() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
    return out.str();
}

namespace {

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void echo_config(const Config& cfg, const std::string& out_dir) {
    std::ofstream out(out_dir + "/config_resolved.txt");
    if (!out) throw std::runtime_error("cannot write config echo in " + out_dir);
    out << cfg.resolved_text();
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw std::runtime_error("missing artifact " + path + "; run the '" +
                                 producer + "' stage first");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

Dataset materialize_dataset(const Config& cfg) {
    if (cfg.get("dataset.source") == "synthetic")
        return generate_synthetic(cfg.get_int("dataset.n_queries"),
                                  cfg.get_int("dataset.docs_per_query"),
                                  cfg.get_int("dataset.feature_dim"),
                                  cfg.get_int("dataset.y_max"), cfg.get_u64("seed"));
    if (cfg.get("dataset.source") == "letor")
        return parse_letor_file(cfg.get("dataset.path"), cfg.get_int("dataset.y_max"));
    throw std::runtime_error("dataset.source must be synthetic or letor");
}

}  // namespace

PipelineContext build_context(const Config& cfg) {
    PipelineContext ctx;
    ctx.top_n = cfg.get_int("top_n");
    ctx.threads = cfg.get_int("threads");

    Dataset full = materialize_dataset(cfg);
    SplitResult parts =
        split(full, cfg.get_double("split.train"), cfg.get_double("split.valid"),
              cfg.get_double("split.test"), cfg.get_u64("seed"));
    ctx.train = std::move(parts.train);
    ctx.valid = std::move(parts.valid);
    ctx.test = std::move(parts.test);

    ctx.logger = train_initial_ranker(ctx.train, cfg.get_double("logger.label_fraction"),
                                      cfg.get_u64("seed"));
    ctx.logged = logged_rankings(ctx.train, ctx.logger, ctx.top_n);

    ctx.click.epsilon = cfg.get_double("click.epsilon");
    ctx.click.y_max = cfg.get_int("dataset.y_max");
    const std::string model = cfg.get("click.model");
    if (model == "cascade") {
        ctx.click.kind = ClickModelKind::cascade;
    } else if (model == "position_based") {
        ctx.click.kind = ClickModelKind::position_based;
        const double eta = cfg.get_double("click.eta");
        for (int r = 1; r <= ctx.top_n; ++r)
            ctx.click.exam_probs.push_back(position_based_examination(r, eta));
    } else {
        throw std::runtime_error("click.model must be cascade or position_based");
    }
    return ctx;
}

void cmd_simulate(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    PipelineContext ctx = build_context(cfg);
    const auto sessions =
        simulate_sessions(ctx.train, ctx.logged, ctx.click,
                          cfg.get_int("click.sessions_per_query"), cfg.get_u64("seed"),
                          ctx.threads);
    write_click_log_file(sessions, out_dir + "/clicks.log");
    {
        std::ofstream out(out_dir + "/clicks_oracle.log");
        write_examination_log(sessions, out);
    }
    {
        SplitResult s;
        s.train = ctx.train;
        s.valid = ctx.valid;
        s.test = ctx.test;
        std::ofstream out(out_dir + "/split_manifest.txt");
        write_split_manifest(s, out);
    }
    echo_config(cfg, out_dir);
    std::cout << "sessions " << sessions.size() << "\n";
}

void cmd_train_simulator(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    require_artifact(out_dir + "/clicks.log", "simulate");
    PipelineContext ctx = build_context(cfg);
    auto log = read_click_log_file(out_dir + "/clicks.log");
    for (auto& s : log) s.seal();

    SimTrainConfig scfg;
    scfg.hidden = cfg.get_int("sim.hidden");
    scfg.steps = cfg.get_int("sim.steps");
    scfg.batch = cfg.get_int("sim.batch");
    scfg.lr = cfg.get_double("sim.lr");
    scfg.l2 = cfg.get_double("sim.l2");
    scfg.clamp = cfg.get_double("sim.clamp");
    scfg.seed = cfg.get_u64("seed");

    FeatureIndex feats(ctx.train);
    std::vector<std::pair<int, double>> trace;
    const auto model = train_simulator<float>(log, feats, ctx.train.feature_dim, scfg,
                                              &trace);
    model.save(out_dir + "/simulator.ckpt");
    std::ofstream out(out_dir + "/sim_train.csv");
    out << "step,loss\n";
    for (const auto& [step, loss] : trace) out << step << ',' << fmt(loss) << '\n';
    echo_config(cfg, out_dir);
    std::cout << "simulator trained, final loss "
              << (trace.empty() ? 0.0 : trace.back().second) << "\n";
}

std::string method_label(const Config& cfg) {
    if (!cfg.get("train.name").empty()) return cfg.get("train.name");
    if (!cfg.get("train.variant").empty()) return cfg.get("train.variant");
    return cfg.get("train.objective");
}

void cmd_train_ranker(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    PipelineContext ctx = build_context(cfg);
    const std::string label = method_label(cfg);

    TrainConfig tcfg;
    tcfg.batch = cfg.get_int("train.batch");
    tcfg.steps = cfg.get_int("train.steps");
    tcfg.lr = cfg.get_double("train.lr");
    tcfg.pseudo_samples = cfg.get_int("train.k");
    tcfg.l2 = cfg.get_double("train.l2");
    tcfg.hidden = cfg.get_int_list("train.hidden");
    tcfg.dropout = cfg.get_double("train.dropout");
    tcfg.top_n = ctx.top_n;
    tcfg.seed = cfg.get_u64("seed");
    tcfg.eval_every = cfg.get_int("train.eval_every");
    tcfg.threads = ctx.threads;

    const std::string variant = cfg.get("train.variant");
    const Objective objective = variant.empty()
                                    ? objective_from_string(cfg.get("train.objective"))
                                    : Objective::dr;
    tcfg.objective = objective;

    const bool needs_sim =
        !variant.empty() || objective == Objective::eib || objective == Objective::dr;
    const bool needs_prop = variant.empty()
                                ? (objective == Objective::ipw || objective == Objective::dr)
                                : variant != "eib-multr";

    Simulator<float> sim;
    bool have_sim = false;
    if (needs_sim && variant != "rand-multr") {
        require_artifact(out_dir + "/simulator.ckpt", "train-simulator");
        sim = Simulator<float>::load(out_dir + "/simulator.ckpt");
        have_sim = true;
    }

    PropensityEstimate prop;
    bool have_prop = false;
    if (needs_prop) {
        const std::string source = cfg.get("prop.source");
        if (source == "uniform") {
            prop.p.assign(ctx.top_n, 1.0);
            prop.source = "uniform";
        } else if (source == "oracle") {
            prop = oracle_propensity(ctx.train, ctx.logged, ctx.click, ctx.top_n);
        } else if (source == "learned") {
            require_artifact(out_dir + "/clicks.log", "simulate");
            auto log = read_click_log_file(out_dir + "/clicks.log");
            for (auto& s : log) s.seal();
            DlaConfig dcfg;
            dcfg.steps = cfg.get_int("dla.steps");
            dcfg.batch = cfg.get_int("dla.batch");
            dcfg.lr = cfg.get_double("dla.lr");
            dcfg.weight_clip = cfg.get_double("dla.clip");
            dcfg.floor = cfg.get_double("prop.floor");
            prop = estimate_propensity_dla(ctx.train, log, dcfg, cfg.get_u64("seed"));
        } else {
            throw std::runtime_error("prop.source must be oracle, learned or uniform");
        }
        prop = clip_propensity(std::move(prop), cfg.get_double("prop.floor"));
        have_prop = true;
        std::ofstream out(out_dir + "/propensity_" + label + ".csv");
        out << "rank,propensity\n";
        for (size_t r = 0; r < prop.p.size(); ++r)
            out << (r + 1) << ',' << fmt(prop.p[r]) << '\n';
    }

    TrainResult result =
        variant.empty()
            ? train_ranker(ctx.train, ctx.valid, ctx.logged, ctx.click,
                           have_sim ? &sim : nullptr, have_prop ? &prop : nullptr, tcfg)
            : run_variant(variant_from_string(variant), ctx.train, ctx.valid,
                          ctx.logged, ctx.click, have_sim ? &sim : nullptr,
                          have_prop ? &prop : nullptr, tcfg);

    result.ranker.save(out_dir + "/ranker_" + label + ".ckpt");
    std::ofstream out(out_dir + "/train_" + label + ".csv");
    out << "step,loss,valid_ndcg10\n";
    for (const auto& row : result.trace)
        out << row.step << ',' << fmt(row.loss) << ',' << fmt(row.valid_ndcg10) << '\n';
    echo_config(cfg, out_dir);
    std::cout << "trained " << label << ", final valid nDCG@10 "
              << (result.trace.empty() ? 0.0 : result.trace.back().valid_ndcg10)
              << "\n";
}

void cmd_evaluate(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    PipelineContext ctx = build_context(cfg);
    const std::string label = method_label(cfg);
    const std::string ckpt = out_dir + "/ranker_" + label + ".ckpt";
    require_artifact(ckpt, "train-ranker");
    const auto ranker = Ranker<float>::load(ckpt);

    const auto ks = cfg.get_int_list("eval.ks");
    const auto rankings = rank_dataset(ranker, ctx.test, ctx.top_n);
    const auto rep = evaluate_rankings(ctx.test, rankings, ks, ctx.threads);

    std::ofstream out(out_dir + "/eval_" + label + ".csv");
    out << "qid";
    for (int k : ks) out << ",ndcg@" << k;
    for (int k : ks) out << ",err@" << k;
    out << '\n';
    for (size_t qi = 0; qi < rep.query_ids.size(); ++qi) {
        out << rep.query_ids[qi];
        for (size_t ki = 0; ki < ks.size(); ++ki) out << ',' << fmt(rep.ndcg[qi][ki]);
        for (size_t ki = 0; ki < ks.size(); ++ki) out << ',' << fmt(rep.err[qi][ki]);
        out << '\n';
    }
    echo_config(cfg, out_dir);
    std::cout << "evaluated " << label;
    for (size_t ki = 0; ki < ks.size(); ++ki)
        std::cout << " ndcg@" << ks[ki] << "=" << fmt(rep.mean_ndcg[ki]);
    std::cout << "\n";
}

int cmd_verify_theorems(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const auto res = run_theorem_suite(cfg.get_int("verify.instances"),
                                       cfg.get_u64("seed"),
                                       cfg.get_double("verify.tolerance"),
                                       cfg.get_int("threads"));
    std::ofstream out(out_dir + "/theorems.csv");
    out << "theorem,instance,analytic,oracle,abs_error,pass\n";
    for (size_t i = 0; i < res.checks.size(); ++i) {
        const auto& c = res.checks[i];
        out << c.theorem << ',' << (i / 4) << ',' << fmt(c.analytic) << ','
            << fmt(c.oracle) << ',' << fmt(c.abs_error) << ','
            << (c.pass ? 1 : 0) << '\n';
    }
    echo_config(cfg, out_dir);
    std::cout << (res.all_pass ? "theorem checks passed" : "theorem checks FAILED")
              << " (" << res.checks.size() << " checks)\n";
    return res.all_pass ? 0 : 1;
}

namespace {

struct EvalTable {
    std::vector<std::string> columns;                  // metric@k labels
    std::vector<std::string> qids;
    std::vector<std::vector<double>> values;           // [query][column]
};

EvalTable read_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    EvalTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty eval file " + path);
    std::istringstream hs(line);
    std::string tok;
    std::getline(hs, tok, ',');  // qid
    while (std::getline(hs, tok, ',')) t.columns.push_back(tok);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::getline(ls, tok, ',');
        t.qids.push_back(tok);
        std::vector<double> row;
        while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
        if (row.size() != t.columns.size())
            throw std::runtime_error("ragged eval row in " + path);
        t.values.push_back(std::move(row));
    }
    return t;
}

}  // namespace

void cmd_report(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    std::vector<std::string> methods;
    {
        std::istringstream in(cfg.get("report.methods"));
        std::string tok;
        while (std::getline(in, tok, ','))
            if (!tok.empty()) methods.push_back(tok);
    }
    if (methods.empty()) throw std::runtime_error("report.methods is empty");
    const std::string baseline = cfg.get("report.baseline");

    std::map<std::string, EvalTable> tables;
    for (const auto& m : methods) {
        const std::string path = out_dir + "/eval_" + m + ".csv";
        require_artifact(path, "evaluate (train.name = " + m + ")");
        tables.emplace(m, read_eval_csv(path));
    }
    const bool have_baseline = tables.count(baseline) > 0 && methods.size() > 1;

    std::ofstream out(out_dir + "/report.csv");
    out << "method,metric,mean,p_vs_" << baseline << '\n';
    for (const auto& m : methods) {
        const auto& t = tables.at(m);
        for (size_t col = 0; col < t.columns.size(); ++col) {
            double mean = 0;
            std::vector<double> vals(t.values.size());
            for (size_t qi = 0; qi < t.values.size(); ++qi) {
                vals[qi] = t.values[qi][col];
                mean += vals[qi];
            }
            if (!vals.empty()) mean /= static_cast<double>(vals.size());
            out << m << ',' << t.columns[col] << ',' << fmt(mean) << ',';
            if (have_baseline && m != baseline) {
                const auto& bt = tables.at(baseline);
                std::vector<double> bvals(bt.values.size());
                for (size_t qi = 0; qi < bt.values.size(); ++qi)
                    bvals[qi] = bt.values[qi][col];
                const double p = fisher_randomization_test(
                    vals, bvals, cfg.get_int("fisher.iterations"), cfg.get_u64("seed"));
                out << fmt(p);
            }
            out << '\n';
        }
    }
    echo_config(cfg, out_dir);
    std::cout << "report written for " << methods.size() << " methods\n";
}

}  // namespace ultr
