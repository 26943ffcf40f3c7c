#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ultr/dataset.hpp"
#include "ultr/rng.hpp"

namespace ultr {

enum class ClickModelKind { cascade, position_based };

struct ClickModelConfig {
    ClickModelKind kind = ClickModelKind::cascade;
    double epsilon = 0.1;  // click-noise level in [0, 1)
    int y_max = 4;
    // position_based only: P(e=1) per rank, (1/rank)^eta by default
    std::vector<double> exam_probs;
};

// One simulated session. The examination trace is oracle-only: the capability
// flag gates access, and estimator/trainer code paths receive sealed sessions.
class ClickSession {
  public:
    std::string query_id;
    RankedList displayed;
    std::vector<uint8_t> clicks;
    bool pseudo = false;

    bool oracle_enabled() const { return oracle_enabled_; }
    // Throws std::logic_error unless this session carries an unsealed trace.
    const std::vector<uint8_t>& examinations() const;
    void set_examinations(std::vector<uint8_t> exam);
    // Drops the trace and the capability; called on anything handed to
    // estimators or training loops.
    void seal();

  private:
    std::vector<uint8_t> exam_;
    bool oracle_enabled_ = false;
};

// epsilon + (1 - epsilon) * (2^y - 1) / (2^y_max - 1)
double relevance_probability(int y, int y_max, double epsilon);

// (1/rank)^eta, rank >= 1
double position_based_examination(int rank, double eta);

// Cascade user: rank 1 always examined, click with rel_prob when examined,
// stop after the first click. At most one click per session.
ClickSession cascade_simulate(const RankedList& displayed,
                              const std::vector<double>& rel_probs, Rng& rng);

// Position-based user: independent examination per rank, click = exam * rel.
ClickSession position_based_simulate(const RankedList& displayed,
                                     const std::vector<double>& rel_probs,
                                     const std::vector<double>& exam_probs,
                                     Rng& rng);

struct CascadeMarginals {
    std::vector<double> exam_probs;   // exact P(e_i = 1)
    std::vector<double> click_probs;  // exact P(c_i = 1)
};

CascadeMarginals cascade_marginals(const std::vector<double>& rel_probs);

// rel_probs for a displayed list from document grades.
std::vector<double> list_relevance_probs(const Query& q, const RankedList& list,
                                         int y_max, double epsilon);

// Simulates sessions_per_query sessions for every ranking. Each session uses
// an independent stream derived from (seed, query_id, session index), so the
// result is identical for any thread count. threads == 1 is the serial
// reference path.
std::vector<ClickSession> simulate_sessions(const Dataset& d,
                                            const std::vector<RankedList>& rankings,
                                            const ClickModelConfig& cfg,
                                            int sessions_per_query, uint64_t seed,
                                            int threads);

// Click-log file: qid<TAB>doc_id,doc_id,...<TAB>click_bitmap[<TAB>pseudo=1]
void write_click_log(const std::vector<ClickSession>& sessions, std::ostream& out);
void write_click_log_file(const std::vector<ClickSession>& sessions,
                          const std::string& path);
// Sessions read back from a click log are sealed (no examination trace).
std::vector<ClickSession> read_click_log(std::istream& in);
std::vector<ClickSession> read_click_log_file(const std::string& path);

// Oracle examination file, same key order as the click log.
void write_examination_log(const std::vector<ClickSession>& sessions,
                           std::ostream& out);

}  // namespace ultr
