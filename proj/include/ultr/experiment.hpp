#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ultr/click_models.hpp"
#include "ultr/dataset.hpp"
#include "ultr/estimators.hpp"
#include "ultr/trainer.hpp"

// Config-driven pipeline stages behind the CLI. Every stage is a pure
// function of (config, input artifacts): re-running writes identical bytes.

namespace ultr {

// Flat key=value config with '#' comments. Unknown keys are rejected; every
// key has a registered default and the resolved set is echoed verbatim into
// each stage's output directory.
class Config {
  public:
    Config();  // defaults only
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);  // must be known

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    long long get_i64(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    std::string resolved_text() const;  // sorted key = value lines

    static const std::map<std::string, std::string>& known_keys();

  private:
    std::map<std::string, std::string> values_;
};

// Deterministic context shared by the stages: dataset, splits, logging
// policy, observed rankings over the training split, click model.
struct PipelineContext {
    Dataset train, valid, test;
    LinearRanker logger;
    std::vector<RankedList> logged;  // per training query
    ClickModelConfig click;
    int top_n = 10;
    int threads = 0;
};

PipelineContext build_context(const Config& cfg);

// Stage entry points; each writes its artifacts under out_dir and echoes the
// resolved config. They throw std::runtime_error with an actionable message
// when an upstream artifact is missing.
void cmd_simulate(const Config& cfg, const std::string& out_dir);
void cmd_train_simulator(const Config& cfg, const std::string& out_dir);
void cmd_train_ranker(const Config& cfg, const std::string& out_dir);
void cmd_evaluate(const Config& cfg, const std::string& out_dir);
int cmd_verify_theorems(const Config& cfg, const std::string& out_dir);  // exit code
void cmd_report(const Config& cfg, const std::string& out_dir);

// Label used for per-method artifact names (train.name, or the variant /
// objective when unset).
std::string method_label(const Config& cfg);

}  // namespace ultr
