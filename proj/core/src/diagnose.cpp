#include "ted/diagnose.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "ted/metrics.hpp"
#include "ted/prompts.hpp"

namespace ted {

using json = nlohmann::json;

std::vector<ErrorCandidate> build_candidates(
    const std::string& sample_id, int trial_index,
    const std::vector<GradingNote>& notes,
    const std::vector<SubgoalAssessment>& assessments) {
  std::map<std::string, const GradingNote*> by_id;
  for (const auto& note : notes) {
    by_id[note.id] = &note;
  }
  std::vector<ErrorCandidate> candidates;
  for (const auto& assessment : assessments) {
    if (assessment.z >= 1.0) continue;
    ErrorCandidate candidate;
    candidate.id = sample_id + "/" + std::to_string(trial_index) + "/" +
                   assessment.grading_note_id;
    candidate.sample_id = sample_id;
    candidate.trial_index = trial_index;
    auto it = by_id.find(assessment.grading_note_id);
    if (it == by_id.end()) {
      throw DiagnoseError("assessment references unknown grading note " +
                          assessment.grading_note_id);
    }
    candidate.note = *it->second;
    for (const auto& verdict : assessment.verdicts) {
      candidate.explanations.push_back(verdict.explanation);
    }
    candidate.z = assessment.z;
    candidates.push_back(std::move(candidate));
  }
  return candidates;
}

namespace {

ChatRequest diagnose_request(const DiagnoseConfig& config, std::string body,
                             std::string tag) {
  ChatRequest request;
  request.model = config.model;
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  request.request_tag = std::move(tag);
  request.messages.push_back({Role::user, std::move(body), {}});
  return request;
}

/// Parses a strict-JSON reply, tolerating markdown code fences around it.
std::optional<json> parse_strict_json(const std::string& reply) {
  std::string text = reply;
  const auto fence = text.find("```");
  if (fence != std::string::npos) {
    auto start = text.find('\n', fence);
    if (start == std::string::npos) return std::nullopt;
    ++start;
    const auto end = text.find("```", start);
    if (end == std::string::npos) return std::nullopt;
    text = text.substr(start, end - start);
  }
  const auto brace = text.find('{');
  if (brace == std::string::npos) return std::nullopt;
  text = text.substr(brace);
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) return std::nullopt;
  return parsed;
}

std::optional<json> call_for_json(Provider& gateway,
                                  const DiagnoseConfig& config,
                                  const std::string& body,
                                  const std::string& tag) {
  for (int attempt = 0; attempt <= config.json_retries; ++attempt) {
    const ChatResult result =
        gateway.complete(diagnose_request(config, body, tag));
    if (auto parsed = parse_strict_json(result.content)) {
      return parsed;
    }
  }
  return std::nullopt;
}

std::string identify_one(Provider& gateway, const DiagnoseConfig& config,
                         const std::string& subgoal,
                         const std::string& explanation,
                         std::string* out_explanation) {
  const std::string body =
      fill_template(prompts::identify_error(),
                    {{"subgoals", subgoal}, {"explanation", explanation}});
  const auto parsed = call_for_json(gateway, config, body, "identify");
  if (!parsed || !parsed->contains("error_type")) {
    return {};
  }
  if (out_explanation && parsed->contains("explanation")) {
    *out_explanation = (*parsed)["explanation"].get<std::string>();
  }
  return (*parsed)["error_type"].get<std::string>();
}

}  // namespace

LowLevelError identify_error(Provider& gateway, const ErrorCandidate& candidate,
                             const DiagnoseConfig& config) {
  LowLevelError error;
  error.candidate_id = candidate.id;
  if (candidate.explanations.empty()) {
    throw DiagnoseError("candidate " + candidate.id + " has no explanations");
  }

  if (candidate.z == 0.0) {
    // Consistent failure: the first explanation speaks for all runs.
    std::string explanation;
    const std::string type = identify_one(
        gateway, config, candidate.note.text, candidate.explanations.front(),
        &explanation);
    if (type.empty()) {
      error.unidentified = true;
      error.error_type = "(unidentified)";
      return error;
    }
    error.error_type = type;
    error.explanation = explanation;
    return error;
  }

  // Disagreement: identify every explanation, then one selective vote.
  std::vector<std::pair<std::string, std::string>> identified;  // type, expl
  for (const auto& explanation : candidate.explanations) {
    std::string detail;
    const std::string type = identify_one(gateway, config, candidate.note.text,
                                          explanation, &detail);
    if (!type.empty()) {
      identified.emplace_back(type, detail);
    }
  }
  if (identified.empty()) {
    error.unidentified = true;
    error.error_type = "(unidentified)";
    return error;
  }

  json type_list = json::array();
  for (const auto& [type, detail] : identified) {
    type_list.push_back(type);
  }
  const std::string body = fill_template(
      prompts::select_error(), {{"error_type_list", type_list.dump()}});
  const auto parsed = call_for_json(gateway, config, body, "selective");
  if (!parsed || !parsed->contains("most_probable_error_type")) {
    error.unidentified = true;
    error.error_type = "(unidentified)";
    return error;
  }
  error.error_type = (*parsed)["most_probable_error_type"].get<std::string>();
  for (const auto& [type, detail] : identified) {
    if (type == error.error_type) {
      error.explanation = detail;
      break;
    }
  }
  if (error.explanation.empty()) {
    error.explanation = identified.front().second;
  }
  return error;
}

std::vector<std::string> derive_tool_lexicon(
    const std::vector<LowLevelError>& errors) {
  std::set<std::string> names;
  for (const auto& error : errors) {
    const std::string& text = error.error_type;
    std::size_t i = 0;
    while (i < text.size()) {
      if (std::isalpha(static_cast<unsigned char>(text[i])) ||
          text[i] == '_') {
        std::size_t j = i;
        bool has_underscore = false;
        while (j < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[j])) ||
                text[j] == '_')) {
          if (text[j] == '_') has_underscore = true;
          ++j;
        }
        // snake_case words are how tool names appear in error types
        if (has_underscore && j - i > 2) {
          names.insert(text.substr(i, j - i));
        }
        i = j;
      } else {
        ++i;
      }
    }
  }
  return {names.begin(), names.end()};
}

std::vector<std::string> validate_clusters(
    const std::vector<ErrorCluster>& clusters,
    const std::vector<LowLevelError>& errors,
    const std::vector<std::string>& tool_lexicon) {
  std::vector<std::string> violations;

  std::set<std::string> expected_ids;
  for (const auto& error : errors) {
    expected_ids.insert(error.candidate_id);
  }
  std::set<std::string> seen_ids;
  for (const auto& cluster : clusters) {
    for (const auto& id : cluster.error_ids) {
      if (!expected_ids.count(id)) {
        violations.push_back("unknown error_id '" + id + "' in cluster '" +
                             cluster.label + "'");
      } else if (!seen_ids.insert(id).second) {
        violations.push_back("error_id '" + id + "' appears in more than one cluster");
      }
    }
  }
  for (const auto& id : expected_ids) {
    if (!seen_ids.count(id)) {
      violations.push_back("error_id '" + id + "' missing from every cluster");
    }
  }

  for (const auto& cluster : clusters) {
    std::set<std::string> tools_in_cluster;
    for (const auto& type : cluster.error_types) {
      for (const auto& tool : tool_lexicon) {
        if (type.find(tool) != std::string::npos) {
          tools_in_cluster.insert(tool);
        }
      }
    }
    if (tools_in_cluster.size() > 1) {
      std::string merged;
      for (const auto& tool : tools_in_cluster) {
        if (!merged.empty()) merged += ", ";
        merged += tool;
      }
      violations.push_back("cluster '" + cluster.label +
                           "' merges error types referring to different tools (" +
                           merged + ")");
    }
  }
  return violations;
}

namespace {

std::vector<ErrorCluster> parse_clusters(const json& parsed) {
  std::vector<ErrorCluster> clusters;
  for (const auto& cj : parsed.at("clusters")) {
    ErrorCluster cluster;
    cluster.label = cj.at("cluster_label").get<std::string>();
    cluster.error_types = cj.at("error_types").get<std::vector<std::string>>();
    cluster.error_ids = cj.at("error_ids").get<std::vector<std::string>>();
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

}  // namespace

std::vector<ErrorCluster> cluster_errors(
    Provider& gateway, const std::vector<LowLevelError>& errors,
    const std::vector<GradingNote>& notes, const DiagnoseConfig& config,
    const std::vector<std::string>& tool_lexicon) {
  if (errors.empty()) {
    throw DiagnoseError("cluster_errors requires at least one error");
  }
  const std::vector<std::string> lexicon =
      tool_lexicon.empty() ? derive_tool_lexicon(errors) : tool_lexicon;

  json subgoals = json::array();
  for (const auto& note : notes) {
    subgoals.push_back(note.text);
  }
  json types = json::array();
  for (const auto& error : errors) {
    types.push_back(json{{"error_id", error.candidate_id},
                         {"error_type", error.error_type}});
  }
  const std::string body = fill_template(
      prompts::cluster_errors(),
      {{"subgoals", subgoals.dump()}, {"error_types", types.dump()}});

  std::string request_body = body;
  std::vector<std::string> last_violations;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto parsed = call_for_json(gateway, config, request_body, "cluster");
    if (parsed && parsed->contains("clusters")) {
      std::vector<ErrorCluster> clusters;
      try {
        clusters = parse_clusters(*parsed);
      } catch (const json::exception&) {
        last_violations = {"reply did not match the cluster schema"};
        continue;
      }
      last_violations = validate_clusters(clusters, errors, lexicon);
      if (last_violations.empty()) {
        return clusters;
      }
    } else {
      last_violations = {"reply was not strict JSON with a clusters field"};
    }
    std::string repair = body;
    repair += "\n\nYour previous output was invalid:\n";
    for (const auto& violation : last_violations) {
      repair += "- " + violation + "\n";
    }
    repair +=
        "Every error_id must appear in exactly one cluster, and error types "
        "referring to different tools must stay in separate clusters. Return "
        "the corrected strict JSON.";
    request_body = std::move(repair);
  }

  std::string detail;
  for (const auto& violation : last_violations) {
    detail += "\n  " + violation;
  }
  throw DiagnoseError("cluster output invalid after repair retry:" + detail);
}

std::vector<ScatterPoint> scatter_data(
    const std::vector<TrialJudgeArtifact>& artifacts) {
  std::vector<ScatterPoint> points;
  points.reserve(artifacts.size());
  for (const auto& artifact : artifacts) {
    std::vector<double> z_values;
    z_values.reserve(artifact.assessments.size());
    for (const auto& assessment : artifact.assessments) {
      z_values.push_back(assessment.z);
    }
    const auto [expectation, variance] =
        trial_moments(z_values, static_cast<int>(z_values.size()));
    points.push_back(ScatterPoint{artifact.trial_index, expectation, variance});
  }
  return points;
}

namespace {
constexpr std::string_view kInsertBegin = "[Known failure modes]";
constexpr std::string_view kInsertEnd = "[End known failure modes]";
}  // namespace

std::string error_insertion(const std::string& agent_instruction,
                            const std::vector<ErrorCluster>& clusters) {
  if (clusters.empty()) {
    return agent_instruction;
  }
  std::string base = agent_instruction;
  const auto begin = base.find(kInsertBegin);
  if (begin != std::string::npos) {
    auto end = base.find(kInsertEnd, begin);
    if (end != std::string::npos) {
      end += kInsertEnd.size();
      while (end < base.size() && base[end] == '\n') ++end;
      std::size_t start = begin;
      while (start > 0 && base[start - 1] == '\n') --start;
      base.erase(start, end - start);
    }
  }
  std::string section;
  section += "\n\n";
  section += kInsertBegin;
  section += "\nThese failure modes were observed for this task; avoid them:\n";
  for (const auto& cluster : clusters) {
    section += "- " + cluster.label + "\n";
  }
  section += kInsertEnd;
  section += "\n";
  return base + section;
}

// ---------------------------------------------------------------------------
// Persistence

std::string serialize(const DiagnosisReport& report) {
  json candidates = json::array();
  for (const auto& candidate : report.candidates) {
    candidates.push_back(json{{"id", candidate.id},
                              {"sample_id", candidate.sample_id},
                              {"trial_index", candidate.trial_index},
                              {"note",
                               json{{"id", candidate.note.id},
                                    {"text", candidate.note.text}}},
                              {"explanations", candidate.explanations},
                              {"z", candidate.z}});
  }
  json errors = json::array();
  for (const auto& error : report.low_level_errors) {
    errors.push_back(json{{"candidate_id", error.candidate_id},
                          {"error_type", error.error_type},
                          {"explanation", error.explanation},
                          {"unidentified", error.unidentified}});
  }
  json clusters = json::array();
  for (const auto& cluster : report.clusters) {
    clusters.push_back(json{{"cluster_label", cluster.label},
                            {"error_types", cluster.error_types},
                            {"error_ids", cluster.error_ids}});
  }
  return json{{"candidates", std::move(candidates)},
              {"low_level_errors", std::move(errors)},
              {"clusters", std::move(clusters)}}
      .dump(2);
}

DiagnosisReport deserialize_diagnosis(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DiagnoseError(std::string("diagnosis parse error: ") + e.what());
  }
  DiagnosisReport report;
  for (const auto& cj : j.at("candidates")) {
    ErrorCandidate candidate;
    candidate.id = cj.at("id").get<std::string>();
    candidate.sample_id = cj.at("sample_id").get<std::string>();
    candidate.trial_index = cj.at("trial_index").get<int>();
    candidate.note.id = cj.at("note").at("id").get<std::string>();
    candidate.note.text = cj.at("note").at("text").get<std::string>();
    candidate.explanations =
        cj.at("explanations").get<std::vector<std::string>>();
    candidate.z = cj.at("z").get<double>();
    report.candidates.push_back(std::move(candidate));
  }
  for (const auto& ej : j.at("low_level_errors")) {
    LowLevelError error;
    error.candidate_id = ej.at("candidate_id").get<std::string>();
    error.error_type = ej.at("error_type").get<std::string>();
    error.explanation = ej.value("explanation", std::string{});
    error.unidentified = ej.value("unidentified", false);
    report.low_level_errors.push_back(std::move(error));
  }
  for (const auto& cj : j.at("clusters")) {
    ErrorCluster cluster;
    cluster.label = cj.at("cluster_label").get<std::string>();
    cluster.error_types = cj.at("error_types").get<std::vector<std::string>>();
    cluster.error_ids = cj.at("error_ids").get<std::vector<std::string>>();
    report.clusters.push_back(std::move(cluster));
  }
  return report;
}

}  // namespace ted
