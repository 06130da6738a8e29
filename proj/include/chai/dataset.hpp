#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chai/candidates.hpp"
#include "chai/dialogue.hpp"

namespace chai {

struct Dialogue {
  std::string scenario_id;
  std::vector<Turn> turns;
  EpisodeOutcome outcome = EpisodeOutcome::rejected();
};

struct Corpus {
  std::map<std::string, ScenarioPtr> scenarios;
  std::vector<Dialogue> dialogues;

  const Scenario& scenario(const std::string& id) const;
  std::vector<ScenarioPtr> scenario_list() const;
};

bool operator==(const Corpus& a, const Corpus& b);

/// Parses and validates a corpus document. Message prices are masked on the way in.
Corpus parse_corpus(std::string_view text);
Corpus load_corpus(const std::string& path);
nlohmann::json corpus_to_json(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::string& path);

/// Replays a dialogue; throws Validation naming the dialogue/turn on illegal sequences.
DialogueState replay(const Corpus& corpus, std::size_t dialogue_index);

struct Transition {
  std::string id;  // "<dialogue-index>:<seller-turn-index>"
  DialogueState state;
  Turn action;
  double reward = 0.0;
  DialogueState next_state;
  bool terminal = false;
};

std::vector<Transition> extract_transitions(const Corpus& corpus, RewardVariant variant,
                                            const RewardParams& params = {});

/// Transition id -> k templates proposed at that transition's state.
struct CandidateCache {
  std::size_t k = 0;
  std::map<std::string, std::vector<std::string>> entries;

  const std::vector<std::string>* find(const std::string& id) const;
  friend bool operator==(const CandidateCache&, const CandidateCache&) = default;
};

CandidateCache build_candidate_cache(std::span<const Transition> transitions,
                                     const CandidateGenerator& generator, std::size_t k,
                                     std::uint64_t seed);
void validate_cache(const CandidateCache& cache, std::span<const Transition> transitions);
std::string cache_to_jsonl(const CandidateCache& cache);
CandidateCache cache_from_jsonl(std::string_view text);
void save_cache(const CandidateCache& cache, const std::string& path);
CandidateCache load_cache(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace chai
