#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "engage/core.hpp"
#include "engage/gateway.hpp"

namespace engage::questions {

enum class Mode { pie_benchmark, macaroon_training };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct PromptAssets {
  std::string generation;
  std::string selection;
  std::string lhp;

  static PromptAssets defaults();
};

struct GenerationJob {
  Mode mode = Mode::pie_benchmark;
  PromptAssets prompts = PromptAssets::defaults();
  gateway::Decoding decoding;

  void validate() const;
};

/// Stable pair id: "<image id>/<type code in lower case>".
std::string pair_id_for(std::string_view image_id, QuestionType t);

/// Tab-separated lines of `id<TAB>path[<TAB>source]`; blank lines and lines
/// starting with '#' are skipped. Duplicate ids are a ValidationError.
std::vector<ImageRecord> read_image_manifest(const std::filesystem::path& path);

// Generation -----------------------------------------------------------------

gateway::CompletionRequest generation_request(const ImageRecord& image, const GenerationJob& job,
                                              bool strict);

/// Expects numbered items 1..5 in generator order (SA, UUB, SI, UQ, FP).
/// A leading category label and surrounding quotes are stripped. Throws
/// MalformedGeneration.
CandidateQuestionSet parse_candidates(std::string_view output, const std::string& image_id);

/// One reparse attempt with a stricter format instruction before failing.
CandidateQuestionSet generate_candidates(const ImageRecord& image, gateway::Gateway& gw,
                                         const GenerationJob& job);

// Selection ------------------------------------------------------------------

/// Not-applicable candidates are left out of the prompt.
gateway::CompletionRequest selection_request(const ImageRecord& image,
                                             const CandidateQuestionSet& candidates,
                                             const GenerationJob& job);

/// Maps a selector reply onto exactly one candidate, comparing after
/// whitespace and case folding. Throws SelectionMismatch.
QuestionType match_selection(std::string_view reply, const CandidateQuestionSet& candidates);

ImageQuestionPair select_best(const ImageRecord& image, const CandidateQuestionSet& candidates,
                              gateway::Gateway& gw, const GenerationJob& job);

// Latent human preference questions -----------------------------------------

gateway::CompletionRequest lhp_request(const ImageRecord& image, const GenerationJob& job);

ImageQuestionPair generate_lhp(const ImageRecord& image, gateway::Gateway& gw,
                               const GenerationJob& job);

// Batch drivers --------------------------------------------------------------

struct GenerationRun {
  std::vector<CandidateQuestionSet> candidates;   // sorted by image id
  std::vector<ImageQuestionPair> lhp_pairs;       // macaroon_training only
  std::vector<ItemFailure> failures;
};

GenerationRun run_generation(const std::vector<ImageRecord>& images, gateway::Gateway& gw,
                             const GenerationJob& job);

struct SelectionRun {
  std::vector<ImageQuestionPair> pairs;  // sorted by pair id, one per image
  std::vector<ItemFailure> failures;
};

/// Images are looked up by id; candidates for unknown images are selected
/// against a bare record carrying only the id.
SelectionRun run_selection(const std::vector<ImageRecord>& images,
                           const std::vector<CandidateQuestionSet>& candidates,
                           gateway::Gateway& gw, const GenerationJob& job);

}  // namespace engage::questions
