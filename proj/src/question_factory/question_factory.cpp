#include "engage/question_factory.hpp"

#include <algorithm>
#include <optional>
#include <regex>
#include <set>

#include "engage/assets.hpp"
#include "engage/json_io.hpp"
#include "engage/parallel.hpp"
#include "engage/text.hpp"

namespace engage::questions {

namespace {

struct NumberedItem {
  int number;
  std::string body;
};

std::optional<NumberedItem> parse_numbered(const std::string& line) {
  static const std::regex kItem(R"(^\s*(?:[*#]+\s*)?(?:question\s*)?(\d+)\s*[.):\]]\s*(.*)$)",
                                std::regex::icase);
  std::smatch m;
  if (!std::regex_match(line, m, kItem)) return std::nullopt;
  return NumberedItem{std::stoi(m[1].str()), text::trim(m[2].str())};
}

std::string strip_markup(std::string s) {
  s = text::trim(s);
  while (s.size() >= 2 && s.rfind("**", 0) == 0) s = text::trim(s.substr(2));
  while (s.size() >= 2 && s.size() >= 2 && s.compare(s.size() - 2, 2, "**") == 0) {
    s = text::trim(s.substr(0, s.size() - 2));
  }
  auto is_quote = [](char c) { return c == '"' || c == '\'' || c == '`'; };
  while (s.size() >= 2 && is_quote(s.front()) && is_quote(s.back())) {
    s = text::trim(s.substr(1, s.size() - 2));
  }
  return s;
}

// "Subject Ambiguity: Is the man ..." -> "Is the man ..."
std::string strip_category_label(std::string body, QuestionType t) {
  body = strip_markup(body);
  const std::string lower = text::to_lower(body);
  std::vector<std::string> labels{text::to_lower(display_name(t)), text::to_lower(code(t))};
  // Singular forms used as headings.
  if (t == QuestionType::UQ) labels.push_back("unanswerable question");
  if (t == QuestionType::SI) labels.push_back("subjective interpretation");
  for (const auto& label : labels) {
    if (lower.rfind(label, 0) == 0 && lower.size() > label.size()) {
      std::size_t i = label.size();
      while (i < body.size() && (body[i] == '*' || body[i] == ' ')) ++i;
      if (i < body.size() && (body[i] == ':' || body[i] == '-')) {
        return strip_markup(body.substr(i + 1));
      }
    }
  }
  return body;
}

bool is_not_applicable(const std::string& body) {
  const auto n = text::normalize(body);
  return n == "n/a" || n == "na" || n == "n.a." || n == "n/a." || n == "not applicable";
}

const ImageRecord& lookup(const std::map<std::string, ImageRecord>& by_id, const std::string& id,
                          ImageRecord& scratch) {
  if (auto it = by_id.find(id); it != by_id.end()) return it->second;
  scratch = ImageRecord{id, "", ""};
  return scratch;
}

}  // namespace

std::string_view to_string(Mode m) {
  return m == Mode::pie_benchmark ? "pie_benchmark" : "macaroon_training";
}

Mode parse_mode(std::string_view s) {
  if (s == "pie_benchmark") return Mode::pie_benchmark;
  if (s == "macaroon_training") return Mode::macaroon_training;
  throw Error(ErrorKind::ConfigInvalid, "unknown mode '" + std::string(s) + "'");
}

PromptAssets PromptAssets::defaults() {
  return PromptAssets{assets::get("generation"), assets::get("selection"),
                      assets::get("lhp_generation")};
}

void GenerationJob::validate() const {
  if (text::trim(prompts.generation).empty() || text::trim(prompts.selection).empty() ||
      text::trim(prompts.lhp).empty()) {
    throw Error(ErrorKind::ConfigInvalid, "prompt assets must be non-empty");
  }
  if (text::count_placeholder(prompts.selection, "Questions") != 1) {
    throw Error(ErrorKind::ConfigInvalid, "selection prompt needs one {Questions} placeholder");
  }
}

std::string pair_id_for(std::string_view image_id, QuestionType t) {
  return std::string(image_id) + "/" + text::to_lower(code(t));
}

std::vector<ImageRecord> read_image_manifest(const std::filesystem::path& path) {
  const auto content = io::read_text(path);
  std::vector<ImageRecord> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(text::trim(line.substr(start, tab == std::string::npos ? tab : tab - start)));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
      throw Error(ErrorKind::ValidationError, path.filename().string() + " line " +
                                                  std::to_string(line_no) +
                                                  ": expected id<TAB>path[<TAB>source]");
    }
    if (!seen.insert(fields[0]).second) {
      throw Error(ErrorKind::ValidationError, path.filename().string() + " line " +
                                                  std::to_string(line_no) + ": duplicate id " +
                                                  fields[0]);
    }
    out.push_back(ImageRecord{fields[0], fields[1], fields.size() == 3 ? fields[2] : ""});
  }
  return out;
}

gateway::CompletionRequest generation_request(const ImageRecord& image, const GenerationJob& job,
                                              bool strict) {
  gateway::CompletionRequest req;
  req.user_prompt = job.prompts.generation + "\n" +
                    assets::get(strict ? "generation_format_strict" : "generation_format");
  req.image = image;
  req.decoding = job.decoding;
  return req;
}

CandidateQuestionSet parse_candidates(std::string_view output, const std::string& image_id) {
  std::vector<NumberedItem> items;
  for (const auto& line : text::split_lines(output)) {
    if (auto item = parse_numbered(line)) items.push_back(std::move(*item));
  }
  if (items.size() != kGeneratorOrder.size()) {
    throw Error(ErrorKind::MalformedGeneration,
                "expected 5 numbered questions for " + image_id + ", found " +
                    std::to_string(items.size()));
  }
  CandidateQuestionSet set;
  set.image_id = image_id;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].number != static_cast<int>(i + 1)) {
      throw Error(ErrorKind::MalformedGeneration,
                  "item " + std::to_string(i + 1) + " is numbered " +
                      std::to_string(items[i].number) + " for " + image_id);
    }
    const auto t = kGeneratorOrder[i];
    const auto body = strip_category_label(items[i].body, t);
    if (is_not_applicable(body)) {
      if (t != QuestionType::SA) {
        throw Error(ErrorKind::MalformedGeneration,
                    std::string(code(t)) + " marked N/A for " + image_id);
      }
      set.candidates[t] = std::nullopt;
    } else if (body.empty()) {
      throw Error(ErrorKind::MalformedGeneration,
                  "empty " + std::string(code(t)) + " question for " + image_id);
    } else {
      set.candidates[t] = body;
    }
  }
  return set;
}

CandidateQuestionSet generate_candidates(const ImageRecord& image, gateway::Gateway& gw,
                                         const GenerationJob& job) {
  job.validate();
  const auto first = gw.complete(generation_request(image, job, false));
  try {
    return parse_candidates(first, image.id);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::MalformedGeneration) throw;
  }
  const auto second = gw.complete(generation_request(image, job, true));
  return parse_candidates(second, image.id);
}

gateway::CompletionRequest selection_request(const ImageRecord& image,
                                             const CandidateQuestionSet& candidates,
                                             const GenerationJob& job) {
  std::string listing;
  int n = 0;
  for (auto t : kGeneratorOrder) {
    auto it = candidates.candidates.find(t);
    if (it == candidates.candidates.end() || !it->second) continue;
    listing += "\n" + std::to_string(++n) + ". " + *it->second;
  }
  if (n == 0) {
    throw Error(ErrorKind::NoValidCandidates, "no applicable candidates for " + image.id);
  }
  gateway::CompletionRequest req;
  req.user_prompt = text::fill_template(job.prompts.selection, {{"Questions", listing}}) + "\n" +
                    assets::get("selection_format");
  req.image = image;
  req.decoding = job.decoding;
  return req;
}

QuestionType match_selection(std::string_view reply, const CandidateQuestionSet& candidates) {
  std::string body = text::trim(reply);
  if (auto item = parse_numbered(body)) body = item->body;
  const auto wanted = text::normalize(strip_markup(body));

  std::vector<QuestionType> contained;
  for (auto t : kGeneratorOrder) {
    auto it = candidates.candidates.find(t);
    if (it == candidates.candidates.end() || !it->second) continue;
    const auto candidate = text::normalize(*it->second);
    if (candidate == wanted) return t;
    if (!candidate.empty() && wanted.find(candidate) != std::string::npos) contained.push_back(t);
  }
  if (contained.size() == 1) return contained.front();
  throw Error(ErrorKind::SelectionMismatch,
              "selector reply matches no candidate for " + candidates.image_id + ": '" +
                  std::string(reply.substr(0, 120)) + "'");
}

ImageQuestionPair select_best(const ImageRecord& image, const CandidateQuestionSet& candidates,
                              gateway::Gateway& gw, const GenerationJob& job) {
  job.validate();
  const auto reply = gw.complete(selection_request(image, candidates, job));
  const auto t = match_selection(reply, candidates);
  ImageQuestionPair pair;
  pair.id = pair_id_for(image.id, t);
  pair.image_id = image.id;
  pair.question = *candidates.candidates.at(t);
  pair.qtype = t;
  pair.provenance = Provenance::model_generated;
  pair.status = PairStatus::candidate;
  return pair;
}

gateway::CompletionRequest lhp_request(const ImageRecord& image, const GenerationJob& job) {
  gateway::CompletionRequest req;
  req.user_prompt = job.prompts.lhp;
  req.image = image;
  req.decoding = job.decoding;
  return req;
}

ImageQuestionPair generate_lhp(const ImageRecord& image, gateway::Gateway& gw,
                               const GenerationJob& job) {
  if (job.mode != Mode::macaroon_training) {
    throw Error(ErrorKind::ModeViolation,
                "latent-preference questions are human-written in benchmark mode");
  }
  job.validate();
  const auto output = gw.complete(lhp_request(image, job));
  std::string question;
  for (const auto& line : text::split_lines(output)) {
    std::string body = text::trim(line);
    if (body.empty()) continue;
    if (auto item = parse_numbered(body)) body = item->body;
    question = strip_category_label(body, QuestionType::LHP);
    break;
  }
  if (question.empty()) {
    throw Error(ErrorKind::MalformedGeneration, "empty latent-preference question for " + image.id);
  }
  ImageQuestionPair pair;
  pair.id = pair_id_for(image.id, QuestionType::LHP);
  pair.image_id = image.id;
  pair.question = question;
  pair.qtype = QuestionType::LHP;
  pair.provenance = Provenance::model_generated;
  pair.status = PairStatus::candidate;
  return pair;
}

GenerationRun run_generation(const std::vector<ImageRecord>& images, gateway::Gateway& gw,
                             const GenerationJob& job) {
  job.validate();
  std::vector<ImageRecord> ordered = images;
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });

  struct Outcome {
    std::optional<CandidateQuestionSet> candidates;
    std::optional<ImageQuestionPair> lhp;
    std::vector<ItemFailure> failures;
  };
  auto outcomes = parallel_map(ordered.size(), gw.concurrency_limit(), [&](std::size_t i) {
    Outcome o;
    const auto& image = ordered[i];
    try {
      o.candidates = generate_candidates(image, gw, job);
    } catch (const Error& e) {
      o.failures.push_back({image.id, e.kind(), e.what()});
    }
    if (job.mode == Mode::macaroon_training) {
      try {
        o.lhp = generate_lhp(image, gw, job);
      } catch (const Error& e) {
        o.failures.push_back({pair_id_for(image.id, QuestionType::LHP), e.kind(), e.what()});
      }
    }
    return o;
  });

  GenerationRun run;
  for (auto& o : outcomes) {
    if (o.candidates) run.candidates.push_back(std::move(*o.candidates));
    if (o.lhp) run.lhp_pairs.push_back(std::move(*o.lhp));
    for (auto& f : o.failures) run.failures.push_back(std::move(f));
  }
  return run;
}

SelectionRun run_selection(const std::vector<ImageRecord>& images,
                           const std::vector<CandidateQuestionSet>& candidates,
                           gateway::Gateway& gw, const GenerationJob& job) {
  job.validate();
  std::map<std::string, ImageRecord> by_id;
  for (const auto& im : images) by_id.emplace(im.id, im);

  std::vector<const CandidateQuestionSet*> ordered;
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(c.image_id).second) {
      throw Error(ErrorKind::ValidationError, "duplicate candidate set for image " + c.image_id);
    }
    ordered.push_back(&c);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->image_id < b->image_id; });

  struct Outcome {
    std::optional<ImageQuestionPair> pair;
    std::optional<ItemFailure> failure;
  };
  auto outcomes = parallel_map(ordered.size(), gw.concurrency_limit(), [&](std::size_t i) {
    Outcome o;
    ImageRecord scratch;
    const auto& image = lookup(by_id, ordered[i]->image_id, scratch);
    try {
      o.pair = select_best(image, *ordered[i], gw, job);
    } catch (const Error& e) {
      o.failure = ItemFailure{ordered[i]->image_id, e.kind(), e.what()};
    }
    return o;
  });

  SelectionRun run;
  for (auto& o : outcomes) {
    if (o.pair) run.pairs.push_back(std::move(*o.pair));
    if (o.failure) run.failures.push_back(std::move(*o.failure));
  }
  std::sort(run.pairs.begin(), run.pairs.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return run;
}

}  // namespace engage::questions
