#include "engage/imagination.hpp"

#include <array>

#include "engage/assets.hpp"
#include "engage/text.hpp"

namespace engage::imagination {

namespace {

std::string lower_code(QuestionType t) { return text::to_lower(code(t)); }

std::array<CriteriaSet, 12> load_builtin() {
  std::array<CriteriaSet, 12> out;
  std::size_t i = 0;
  for (auto t : kAllQuestionTypes) {
    for (auto p : {Polarity::desirable, Polarity::undesirable}) {
      out[i] = CriteriaSet{t, p, assets::get(std::string(to_string(p)) + "_" + lower_code(t))};
      out[i].validate();
      ++i;
    }
  }
  return out;
}

void check_precondition(const ImageQuestionPair& pair, const ImaginationConfig& cfg) {
  pair.validate();
  if (pair.status != PairStatus::accepted && cfg.mode != questions::Mode::macaroon_training) {
    throw Error(ErrorKind::ValidationError,
                "pair " + pair.id + " is not accepted and mode is " + std::string(to_string(cfg.mode)));
  }
}

// Validates one (r_d, r_u) outcome; returns true when it is only degenerate.
bool degenerate(const gateway::CompletionOutcome& d, const gateway::CompletionOutcome& u,
                const std::string& id) {
  for (const auto* o : {&d, &u}) {
    if (!o->ok()) throw Error(*o->error, o->error_message);
    if (text::trim(o->text).empty()) throw Error(ErrorKind::EmptyResponse, "empty response for " + id);
  }
  return text::trim(d.text) == text::trim(u.text);
}

ContrastivePair assemble(const ImageQuestionPair& pair, const std::string& r_d, const std::string& r_u) {
  return ContrastivePair{pair.id, pair.qtype, pair.question, pair.image_id, text::trim(r_d), text::trim(r_u)};
}

}  // namespace

std::string_view to_string(Polarity p) { return p == Polarity::desirable ? "desirable" : "undesirable"; }

void CriteriaSet::validate() const {
  if (text::count_placeholder(prompt_template, "Question") != 1) {
    throw Error(ErrorKind::ValidationError, std::string(to_string(polarity)) + " criteria for " +
                                                std::string(code(qtype)) + " must hold one {Question}");
  }
}

std::span<const CriteriaSet> builtin_criteria() {
  static const auto sets = load_builtin();
  return sets;
}

const CriteriaSet& criteria_set(QuestionType t, Polarity p) {
  for (const auto& c : builtin_criteria()) {
    if (c.qtype == t && c.polarity == p) return c;
  }
  throw Error(ErrorKind::ValidationError, "no criteria for " + std::string(code(t)));
}

const std::string& type_description(QuestionType t) { return assets::get("description_" + lower_code(t)); }

void ContrastivePair::validate() const {
  if (pair_id.empty()) throw Error(ErrorKind::ValidationError, "contrastive pair without id");
  if (text::trim(question).empty()) throw Error(ErrorKind::ValidationError, pair_id + ": empty question");
  if (text::trim(r_d).empty() || text::trim(r_u).empty()) {
    throw Error(ErrorKind::EmptyResponse, pair_id + ": empty response");
  }
  if (text::trim(r_d) == text::trim(r_u)) throw Error(ErrorKind::DegeneratePair, pair_id + ": r_d equals r_u");
}

void to_json(json& j, const ContrastivePair& p) {
  j = json{{"pair_id", p.pair_id},   {"qtype", std::string(code(p.qtype))},
           {"question", p.question}, {"image_id", p.image_id},
           {"r_d", p.r_d},           {"r_u", p.r_u}};
}

void from_json(const json& j, ContrastivePair& p) {
  check_schema_version(j);
  p.pair_id = require_string(j, "pair_id");
  p.qtype = parse_question_type(require_string(j, "qtype"));
  p.question = require_string(j, "question");
  p.image_id = j.value("image_id", "");
  p.r_d = require_string(j, "r_d");
  p.r_u = require_string(j, "r_u");
  p.validate();
}

gateway::CompletionRequest imagination_request(const ImageQuestionPair& pair, Polarity polarity,
                                               const ImageIndex& images,
                                               const gateway::Decoding& decoding) {
  gateway::CompletionRequest req;
  req.system_prompt = type_description(pair.qtype);
  req.user_prompt = text::fill_template(criteria_set(pair.qtype, polarity).prompt_template,
                                        {{"Question", pair.question}});
  auto it = images.find(pair.image_id);
  req.image = it != images.end() ? it->second : ImageRecord{pair.image_id, "", ""};
  req.decoding = decoding;
  return req;
}

ContrastivePair imagine_pair(const ImageQuestionPair& pair, gateway::Gateway& gw, const ImageIndex& images,
                             const ImaginationConfig& cfg) {
  check_precondition(pair, cfg);
  const std::vector<gateway::CompletionRequest> reqs = {
      imagination_request(pair, Polarity::desirable, images, cfg.decoding),
      imagination_request(pair, Polarity::undesirable, images, cfg.decoding)};
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto out = gw.batch_complete(reqs);
    if (!degenerate(out[0], out[1], pair.id)) return assemble(pair, out[0].text, out[1].text);
  }
  throw Error(ErrorKind::DegeneratePair, pair.id + ": identical responses after retry");
}

ImaginationRun build_preference_dataset(const std::vector<ImageQuestionPair>& pairs, gateway::Gateway& gw,
                                        const ImageIndex& images, const ImaginationConfig& cfg) {
  ImaginationRun run;
  if (pairs.empty()) return run;

  // First pass batches every request; degenerate pairs get one more round.
  std::vector<gateway::CompletionRequest> reqs;
  std::vector<std::size_t> valid;
  std::vector<std::optional<ContrastivePair>> done(pairs.size());
  std::vector<std::optional<ItemFailure>> failed(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      check_precondition(pairs[i], cfg);
      reqs.push_back(imagination_request(pairs[i], Polarity::desirable, images, cfg.decoding));
      reqs.push_back(imagination_request(pairs[i], Polarity::undesirable, images, cfg.decoding));
      valid.push_back(i);
    } catch (const Error& e) {
      failed[i] = ItemFailure{pairs[i].id, e.kind(), e.detail()};
    }
  }

  std::vector<std::size_t> retry;
  for (int attempt = 0; attempt < 2 && !valid.empty(); ++attempt) {
    const auto out = gw.batch_complete(reqs);
    std::vector<gateway::CompletionRequest> next_reqs;
    std::vector<std::size_t> next_valid;
    for (std::size_t k = 0; k < valid.size(); ++k) {
      const auto i = valid[k];
      try {
        if (!degenerate(out[2 * k], out[2 * k + 1], pairs[i].id)) {
          done[i] = assemble(pairs[i], out[2 * k].text, out[2 * k + 1].text);
        } else if (attempt == 0) {
          next_reqs.push_back(reqs[2 * k]);
          next_reqs.push_back(reqs[2 * k + 1]);
          next_valid.push_back(i);
        } else {
          failed[i] = ItemFailure{pairs[i].id, ErrorKind::DegeneratePair, "identical responses after retry"};
        }
      } catch (const Error& e) {
        failed[i] = ItemFailure{pairs[i].id, e.kind(), e.detail()};
      }
    }
    reqs = std::move(next_reqs);
    valid = std::move(next_valid);
  }

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (done[i]) run.pairs.push_back(std::move(*done[i]));
    if (failed[i]) run.failures.push_back(std::move(*failed[i]));
  }
  const double rate = static_cast<double>(run.failures.size()) / static_cast<double>(pairs.size());
  if (rate > cfg.max_failure_rate) {
    throw Error(ErrorKind::FailureRateExceeded,
                std::to_string(run.failures.size()) + " of " + std::to_string(pairs.size()) +
                    " pairs failed; first: " + run.failures.front().item_id + " " +
                    run.failures.front().message);
  }
  return run;
}

}  // namespace engage::imagination
