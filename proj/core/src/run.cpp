#include "ted/run.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "ted/dataset.hpp"
#include "ted/diagnose.hpp"
#include "ted/prompts.hpp"
#include "ted/talk.hpp"

namespace ted {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string interpolate_env(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto dollar = text.find("${", pos);
    if (dollar == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, dollar - pos);
    const auto close = text.find('}', dollar + 2);
    if (close == std::string::npos) {
      throw ConfigError("unterminated ${...} in config");
    }
    const std::string name = text.substr(dollar + 2, close - dollar - 2);
    const char* value = std::getenv(name.c_str());
    if (!value) {
      throw ConfigError("environment variable " + name + " is not set");
    }
    out += value;
    pos = close + 1;
  }
  return out;
}

std::string read_file_or_throw(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) {
      throw Error("cannot write " + tmp.string());
    }
    out << content;
  }
  fs::rename(tmp, path);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(interpolate_env(json_text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig config;
  if (j.contains("dataset")) config.dataset = j["dataset"].get<std::string>();
  if (j.contains("personas")) {
    config.personas.clear();
    for (const auto& pj : j["personas"]) {
      config.personas.push_back(persona_from_string(pj.get<std::string>()));
    }
  }
  if (j.contains("provider")) config.provider = j["provider"].get<std::string>();
  if (j.contains("base_url")) config.base_url = j["base_url"].get<std::string>();
  if (j.contains("api_key_env")) config.api_key_env = j["api_key_env"].get<std::string>();
  if (j.contains("user_model")) config.user_model = j["user_model"].get<std::string>();
  if (j.contains("user_temperature")) config.user_temperature = j["user_temperature"].get<double>();
  if (j.contains("agent_model")) config.agent_model = j["agent_model"].get<std::string>();
  if (j.contains("agent_temperature")) config.agent_temperature = j["agent_temperature"].get<double>();
  if (j.contains("judge_model")) config.judge_model = j["judge_model"].get<std::string>();
  if (j.contains("judge_temperature")) config.judge_temperature = j["judge_temperature"].get<double>();
  if (j.contains("diagnose_model")) config.diagnose_model = j["diagnose_model"].get<std::string>();
  if (j.contains("diagnose_temperature")) config.diagnose_temperature = j["diagnose_temperature"].get<double>();
  if (j.contains("max_output_tokens")) config.max_output_tokens = j["max_output_tokens"].get<int>();
  if (j.contains("agent")) config.agent = j["agent"].get<std::string>();
  if (j.contains("agent_desc")) config.agent_desc = j["agent_desc"].get<std::string>();
  if (j.contains("agent_system_prompt")) config.agent_system_prompt = j["agent_system_prompt"].get<std::string>();
  if (j.contains("tool_budget")) config.tool_budget = j["tool_budget"].get<int>();
  if (j.contains("error_insertion_from")) config.error_insertion_from = fs::path(j["error_insertion_from"].get<std::string>());
  if (j.contains("n_trials")) config.n_trials = j["n_trials"].get<int>();
  if (j.contains("max_turns")) config.max_turns = j["max_turns"].get<int>();
  if (j.contains("k")) {
    config.k_values.clear();
    if (j["k"].is_array()) {
      for (const auto& kj : j["k"]) {
        config.k_values.push_back(kj.get<int>());
      }
    } else {
      config.k_values.push_back(j["k"].get<int>());
    }
  }
  if (j.contains("q")) config.q = j["q"].get<int>();
  if (j.contains("threshold")) config.threshold = j["threshold"].get<double>();
  if (j.contains("auc_axis")) {
    const auto axis = j["auc_axis"].get<std::string>();
    if (axis == "turn") {
      config.auc_axis = AucAxis::turn_anchored;
    } else if (axis == "zero") {
      config.auc_axis = AucAxis::zero_anchored;
    } else {
      throw ConfigError("auc_axis must be 'turn' or 'zero'");
    }
  }
  if (j.contains("curve_mode")) {
    const auto mode = j["curve_mode"].get<std::string>();
    if (mode == "bisect") {
      config.curve_mode = CurveMode::bisect;
    } else if (mode == "exhaustive") {
      config.curve_mode = CurveMode::exhaustive;
    } else {
      throw ConfigError("curve_mode must be 'bisect' or 'exhaustive'");
    }
  }
  if (j.contains("termination_token")) config.termination_token = j["termination_token"].get<std::string>();
  if (j.contains("diagnose_scope")) config.diagnose_scope = j["diagnose_scope"].get<std::string>();
  if (j.contains("out")) config.out = j["out"].get<std::string>();
  if (j.contains("run_id")) config.run_id = j["run_id"].get<std::string>();
  if (j.contains("workers")) config.workers = j["workers"].get<int>();
  if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
  validate_config(config);
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_file_or_throw(path));
}

void validate_config(const RunConfig& config) {
  if (config.q < 1 || config.q % 2 == 0) {
    throw ConfigError("q must be odd and >= 1");
  }
  for (int k : config.k_values) {
    if (k < 1) {
      throw ConfigError("k must be >= 1");
    }
    if (config.n_trials && k > *config.n_trials) {
      throw ConfigError("k must be <= n_trials");
    }
  }
  if (config.n_trials && *config.n_trials < 1) {
    throw ConfigError("n_trials must be >= 1");
  }
  if (config.max_turns && *config.max_turns < 1) {
    throw ConfigError("max_turns must be >= 1");
  }
  if (config.threshold < 0.0 || config.threshold > 1.0) {
    throw ConfigError("threshold must be in [0, 1]");
  }
  if (config.workers < 1) {
    throw ConfigError("workers must be >= 1");
  }
  if (config.diagnose_scope != "per_trial" && config.diagnose_scope != "pooled") {
    throw ConfigError("diagnose_scope must be per_trial or pooled");
  }
  if (config.personas.empty()) {
    throw ConfigError("at least one persona is required");
  }
  if (config.termination_token.empty()) {
    throw ConfigError("termination_token must be non-empty");
  }
}

fs::path run_directory(const RunConfig& config) {
  return config.out / config.run_id;
}

// ---------------------------------------------------------------------------
// Pipeline plumbing

namespace {

struct PipelineContext {
  explicit PipelineContext(const RunConfig& run_config) : config(run_config) {}

  const RunConfig& config;
  std::unique_ptr<Provider> owned_provider;
  Provider* provider = nullptr;
  std::vector<TaskSample> samples;
  fs::path run_dir;
  bool deterministic = false;  // fixed clock for scripted/replay providers
  std::string agent_prompt;    // system prompt after optional error insertion

  std::mutex failures_mutex;
  std::vector<StageFailure> failures;

  void fail(std::string sample_id, PersonaKind persona, int trial,
            std::string stage, std::string message) {
    std::lock_guard lock(failures_mutex);
    failures.push_back(StageFailure{std::move(sample_id), to_string(persona),
                                    trial, std::move(stage),
                                    std::move(message)});
  }

  int effective_n(const TaskSample& sample) const {
    return config.n_trials.value_or(sample.n_trials);
  }

  std::vector<int> effective_ks(const TaskSample& sample) const {
    if (config.k_values.empty()) {
      return {effective_n(sample)};
    }
    return config.k_values;
  }
};

void init_context(PipelineContext& context, Provider* provider_override) {
  const RunConfig& config = context.config;
  validate_config(config);
  context.samples = load_dataset(config.dataset);

  // Reject bad k/n combinations before issuing any provider call.
  for (const auto& sample : context.samples) {
    const int n = context.effective_n(sample);
    for (const int k : context.effective_ks(sample)) {
      if (k > n || k < 1) {
        throw ConfigError("k=" + std::to_string(k) + " invalid for sample '" +
                          sample.id + "' with n=" + std::to_string(n));
      }
    }
  }

  if (provider_override) {
    context.provider = provider_override;
  } else {
    HttpProviderConfig http;
    http.base_url = config.base_url;
    if (config.provider == "live" || config.provider.rfind("record:", 0) == 0) {
      const char* key = std::getenv(config.api_key_env.c_str());
      http.api_key = key ? key : "";
    }
    context.owned_provider = make_provider(config.provider, http);
    context.provider = context.owned_provider.get();
  }

  context.deterministic = config.provider.rfind("scripted:", 0) == 0 ||
                          config.provider.rfind("replay:", 0) == 0 ||
                          provider_override != nullptr;
  context.run_dir = run_directory(config);
  fs::create_directories(context.run_dir);

  context.agent_prompt = config.agent_system_prompt;
  if (config.error_insertion_from) {
    std::string text = read_file_or_throw(*config.error_insertion_from);
    // Accept either a bare report or the {input_fingerprint, payload}
    // wrapper the pipeline persists.
    const json parsed = json::parse(text);
    if (parsed.contains("payload")) {
      text = parsed["payload"].dump();
    }
    const DiagnosisReport report = deserialize_diagnosis(text);
    context.agent_prompt = error_insertion(context.agent_prompt, report.clusters);
  }
}

fs::path trial_path(const PipelineContext& context, const TaskSample& sample,
                    PersonaKind persona, int trial) {
  return context.run_dir / sample.id / to_string(persona) /
         ("trial_" + std::to_string(trial) + ".json");
}

fs::path judge_path(const PipelineContext& context, const TaskSample& sample,
                    PersonaKind persona, int trial) {
  return context.run_dir / sample.id / to_string(persona) /
         ("trial_" + std::to_string(trial) + ".judge.json");
}

fs::path diagnosis_path(const PipelineContext& context, const TaskSample& sample,
                        PersonaKind persona) {
  return context.run_dir / sample.id / to_string(persona) / "diagnosis.json";
}

// Stage artifacts carry the fingerprint of their inputs; a matching
// fingerprint on disk means the stage can be skipped.
struct CachedFile {
  bool hit = false;
  std::string payload;
};

CachedFile load_if_fresh(const fs::path& path, const std::string& fingerprint) {
  if (!fs::exists(path)) return {};
  json j;
  try {
    j = json::parse(read_file_or_throw(path));
  } catch (...) {
    return {};
  }
  if (j.value("input_fingerprint", std::string{}) != fingerprint) return {};
  return CachedFile{true, j.at("payload").dump()};
}

void store_artifact(const fs::path& path, const std::string& fingerprint,
                    const std::string& payload_json) {
  json j{{"input_fingerprint", fingerprint}, {"payload", json::parse(payload_json)}};
  atomic_write(path, j.dump(2) + "\n");
}

std::string talk_fingerprint(const PipelineContext& context,
                             const TaskSample& sample, PersonaKind persona,
                             int trial) {
  const RunConfig& config = context.config;
  std::string canon = serialize(sample);
  canon += '\x1f';
  canon += to_string(persona);
  canon += '\x1f';
  canon += std::to_string(trial);
  canon += '\x1f';
  canon += config.user_model + '\x1e' + format_full(config.user_temperature);
  canon += '\x1f';
  canon += config.agent + '\x1e' + config.agent_model + '\x1e' +
           format_full(config.agent_temperature) + '\x1e' + context.agent_prompt +
           '\x1e' + config.agent_desc + '\x1e' + std::to_string(config.tool_budget);
  canon += '\x1f';
  canon += config.termination_token;
  canon += '\x1f';
  canon += std::to_string(config.max_turns.value_or(sample.max_turns));
  return fnv1a_hex(canon);
}

std::string judge_fingerprint(const PipelineContext& context,
                              const TaskSample& sample,
                              const std::string& trajectory_json) {
  const RunConfig& config = context.config;
  std::string canon = trajectory_json;
  canon += '\x1f';
  canon += config.judge_model + '\x1e' + format_full(config.judge_temperature);
  canon += '\x1f';
  canon += std::to_string(config.q);
  canon += '\x1f';
  canon += config.curve_mode == CurveMode::bisect ? "bisect" : "exhaustive";
  canon += '\x1f';
  // the turn cap sets the stored curve axis
  canon += std::to_string(config.max_turns.value_or(sample.max_turns));
  return fnv1a_hex(canon);
}

std::string diagnose_fingerprint(const PipelineContext& context,
                                 const std::vector<std::string>& judge_jsons) {
  const RunConfig& config = context.config;
  std::string canon;
  for (const auto& artifact : judge_jsons) {
    canon += fnv1a_hex(artifact);
    canon += '\x1e';
  }
  canon += '\x1f';
  canon += config.diagnose_model + '\x1e' +
           format_full(config.diagnose_temperature) + '\x1e' +
           config.diagnose_scope;
  return fnv1a_hex(canon);
}

std::unique_ptr<AgentConnector> make_agent(PipelineContext& context) {
  const RunConfig& config = context.config;
  if (config.agent == "reference") {
    auto state = std::make_shared<DeviceState>();
    ReferenceAgentOptions options;
    options.model = config.agent_model;
    options.temperature = config.agent_temperature;
    options.max_output_tokens = config.max_output_tokens;
    options.tool_budget = config.tool_budget;
    options.system_prompt = context.agent_prompt;
    return std::make_unique<ReferenceAgent>(*context.provider,
                                            demo_tool_registry(state), options);
  }
  if (config.agent.rfind("scripted:", 0) == 0) {
    const fs::path path = config.agent.substr(std::string("scripted:").size());
    json j = json::parse(read_file_or_throw(path));
    std::vector<std::vector<AgentEvent>> per_turn;
    for (const auto& turn : j) {
      std::vector<AgentEvent> events;
      for (const auto& ej : turn) {
        if (ej.contains("text")) {
          events.push_back(AgentMessage{ej["text"].get<std::string>()});
        } else {
          events.push_back(ToolInvocation{ej.at("name").get<std::string>(),
                                          ej.at("arguments").get<std::string>(),
                                          ej.at("result").get<std::string>()});
        }
      }
      per_turn.push_back(std::move(events));
    }
    return std::make_unique<ScriptedAgent>(std::move(per_turn));
  }
  throw ConfigError("unknown agent spec: " + config.agent);
}

void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int thread_count = std::min(workers, count);
  pool.reserve(static_cast<std::size_t>(thread_count));
  for (int t = 0; t < thread_count; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        body(i);
      }
    });
  }
  for (auto& thread : pool) thread.join();
}

// --- stages ---------------------------------------------------------------

void stage_talk(PipelineContext& context) {
  const RunConfig& config = context.config;
  struct Job {
    const TaskSample* sample;
    PersonaKind persona;
    int trial;
  };
  std::vector<Job> jobs;
  for (const auto& sample : context.samples) {
    for (PersonaKind persona : config.personas) {
      const int n = context.effective_n(sample);
      for (int trial = 1; trial <= n; ++trial) {
        jobs.push_back(Job{&sample, persona, trial});
      }
    }
  }

  parallel_for(static_cast<int>(jobs.size()), config.workers, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    const fs::path path = trial_path(context, *job.sample, job.persona, job.trial);
    const std::string fp =
        talk_fingerprint(context, *job.sample, job.persona, job.trial);
    if (const CachedFile cached = load_if_fresh(path, fp); cached.hit) {
      // resumed failures stay failures in this run's report
      const Trajectory trajectory = deserialize_trajectory(cached.payload);
      if (trajectory.termination == Termination::agent_error) {
        context.fail(job.sample->id, job.persona, job.trial, "talk",
                     trajectory.error_note.value_or("agent error"));
      }
      return;
    }
    try {
      TalkOptions options;
      options.agent_desc = config.agent_desc;
      options.termination_token = config.termination_token;
      options.user_model = config.user_model;
      options.user_temperature = config.user_temperature;
      options.max_output_tokens = config.max_output_tokens;
      options.max_turns_override = config.max_turns;
      if (context.deterministic) {
        options.clock = [] { return std::int64_t{0}; };
      }
      auto agent = make_agent(context);
      const Trajectory trajectory =
          run_trial(*context.provider, *job.sample, builtin_persona(job.persona),
                    *agent, job.trial, options);
      store_artifact(path, fp, serialize(trajectory));
      if (trajectory.termination == Termination::agent_error) {
        context.fail(job.sample->id, job.persona, job.trial, "talk",
                     trajectory.error_note.value_or("agent error"));
      }
    } catch (const std::exception& e) {
      context.fail(job.sample->id, job.persona, job.trial, "talk", e.what());
    }
  });
}

void stage_judge(PipelineContext& context) {
  const RunConfig& config = context.config;
  struct Job {
    const TaskSample* sample;
    PersonaKind persona;
    int trial;
  };
  std::vector<Job> jobs;
  for (const auto& sample : context.samples) {
    for (PersonaKind persona : config.personas) {
      const int n = context.effective_n(sample);
      for (int trial = 1; trial <= n; ++trial) {
        jobs.push_back(Job{&sample, persona, trial});
      }
    }
  }

  JudgeConfig judge_config;
  judge_config.model = config.judge_model;
  judge_config.temperature = config.judge_temperature;
  judge_config.max_output_tokens = config.max_output_tokens;
  judge_config.q = config.q;

  parallel_for(static_cast<int>(jobs.size()), config.workers, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    const fs::path source = trial_path(context, *job.sample, job.persona, job.trial);
    const fs::path target = judge_path(context, *job.sample, job.persona, job.trial);
    try {
      if (!fs::exists(source)) {
        throw Error("missing trajectory artifact " + source.string());
      }
      const json stored = json::parse(read_file_or_throw(source));
      const std::string trajectory_json = stored.at("payload").dump();
      const std::string fp =
          judge_fingerprint(context, *job.sample, trajectory_json);
      if (load_if_fresh(target, fp).hit) return;

      const Trajectory trajectory = deserialize_trajectory(trajectory_json);
      TaskSample sample = *job.sample;
      if (config.max_turns) {
        sample.max_turns = *config.max_turns;  // curve axis follows the cap
      }
      TrialJudgeArtifact artifact;
      artifact.sample_id = job.sample->id;
      artifact.persona = job.persona;
      artifact.trial_index = job.trial;
      if (trajectory.turns.empty()) {
        // Nothing to judge; every note scores incomplete with certainty.
        for (const auto& note : job.sample->grading_notes) {
          SubgoalAssessment assessment;
          assessment.grading_note_id = note.id;
          assessment.z = 0.0;
          assessment.majority = Grade::incomplete;
          SubgoalVerdict verdict;
          verdict.run_index = 1;
          verdict.grade = Grade::incomplete;
          verdict.explanation = "trajectory has no turns";
          assessment.verdicts.push_back(std::move(verdict));
          artifact.assessments.push_back(std::move(assessment));
          artifact.curve.achieved_turn[note.id] = std::nullopt;
        }
        artifact.curve.sample_id = job.sample->id;
        artifact.curve.trial_index = job.trial;
        artifact.curve.values.assign(
            static_cast<std::size_t>(
                config.max_turns.value_or(job.sample->max_turns)),
            0.0);
        artifact.final_progress = 0.0;
      } else {
        CurveResult curve_result =
            progress_curve(*context.provider, sample, trajectory,
                           config.curve_mode, judge_config);
        artifact.assessments = std::move(curve_result.final_assessments);
        artifact.curve = std::move(curve_result.curve);
        artifact.final_progress = artifact.curve.value_at(trajectory.turn_count());
      }
      store_artifact(target, fp, serialize(artifact));
    } catch (const std::exception& e) {
      context.fail(job.sample->id, job.persona, job.trial, "judge", e.what());
    }
  });
}

std::string scatter_csv(const std::vector<ScatterPoint>& points) {
  std::string csv = "trial_index,expectation,variance\n";
  for (const auto& point : points) {
    csv += std::to_string(point.trial_index) + "," +
           format_full(point.expectation) + "," + format_full(point.variance) +
           "\n";
  }
  return csv;
}

void stage_diagnose(PipelineContext& context) {
  const RunConfig& config = context.config;
  DiagnoseConfig diagnose_config;
  diagnose_config.model = config.diagnose_model;
  diagnose_config.temperature = config.diagnose_temperature;
  diagnose_config.max_output_tokens = config.max_output_tokens;

  struct Job {
    const TaskSample* sample;
    PersonaKind persona;
  };
  std::vector<Job> jobs;
  for (const auto& sample : context.samples) {
    for (PersonaKind persona : config.personas) {
      jobs.push_back(Job{&sample, persona});
    }
  }

  parallel_for(static_cast<int>(jobs.size()), config.workers, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    try {
      const int n = context.effective_n(*job.sample);
      std::vector<std::string> judge_jsons;
      std::vector<TrialJudgeArtifact> artifacts;
      for (int trial = 1; trial <= n; ++trial) {
        const fs::path path = judge_path(context, *job.sample, job.persona, trial);
        if (!fs::exists(path)) {
          throw Error("missing judge artifact " + path.string());
        }
        const json stored = json::parse(read_file_or_throw(path));
        judge_jsons.push_back(stored.at("payload").dump());
        artifacts.push_back(deserialize_judge_artifact(judge_jsons.back()));
      }

      const fs::path target = diagnosis_path(context, *job.sample, job.persona);
      const std::string fp = diagnose_fingerprint(context, judge_jsons);

      atomic_write(target.parent_path() / "scatter.csv",
                   scatter_csv(scatter_data(artifacts)));

      if (load_if_fresh(target, fp).hit) return;

      DiagnosisReport report;
      std::map<int, std::vector<LowLevelError>> errors_by_trial;
      std::map<int, std::vector<GradingNote>> notes_by_trial;
      auto add_note = [](std::vector<GradingNote>& notes, const GradingNote& note) {
        for (const auto& existing : notes) {
          if (existing.id == note.id) return;
        }
        notes.push_back(note);
      };
      for (const auto& artifact : artifacts) {
        auto candidates =
            build_candidates(job.sample->id, artifact.trial_index,
                             job.sample->grading_notes, artifact.assessments);
        for (auto& candidate : candidates) {
          LowLevelError error =
              identify_error(*context.provider, candidate, diagnose_config);
          errors_by_trial[artifact.trial_index].push_back(error);
          add_note(notes_by_trial[artifact.trial_index], candidate.note);
          report.low_level_errors.push_back(std::move(error));
          report.candidates.push_back(std::move(candidate));
        }
      }

      // clustering is grounded in the candidates' subgoals only
      if (!report.low_level_errors.empty()) {
        if (config.diagnose_scope == "pooled") {
          std::vector<GradingNote> candidate_notes;
          for (const auto& candidate : report.candidates) {
            add_note(candidate_notes, candidate.note);
          }
          report.clusters =
              cluster_errors(*context.provider, report.low_level_errors,
                             candidate_notes, diagnose_config);
        } else {
          // per_trial: cluster each trial's errors separately
          for (const auto& [trial, errors] : errors_by_trial) {
            auto clusters = cluster_errors(*context.provider, errors,
                                           notes_by_trial[trial],
                                           diagnose_config);
            for (auto& cluster : clusters) {
              report.clusters.push_back(std::move(cluster));
            }
          }
        }
      }
      store_artifact(target, fp, serialize(report));
    } catch (const std::exception& e) {
      context.fail(job.sample->id, job.persona, 0, "diagnose", e.what());
    }
  });
}

void write_failures(PipelineContext& context) {
  json j = json::array();
  for (const auto& failure : context.failures) {
    j.push_back(json{{"sample_id", failure.sample_id},
                     {"persona", failure.persona},
                     {"trial_index", failure.trial_index},
                     {"stage", failure.stage},
                     {"message", failure.message}});
  }
  atomic_write(context.run_dir / "failures.json", j.dump(2) + "\n");
}

RunSummary finish(PipelineContext& context) {
  write_failures(context);
  RunSummary summary;
  summary.run_dir = context.run_dir;
  summary.failures = context.failures;
  return summary;
}

}  // namespace

// ---------------------------------------------------------------------------
// Report emission

namespace {

std::map<std::string, std::map<PersonaKind, std::vector<TrialJudgeArtifact>>>
load_all_judgments(const RunConfig& config, const std::vector<TaskSample>& samples) {
  std::map<std::string, std::map<PersonaKind, std::vector<TrialJudgeArtifact>>> all;
  const fs::path run_dir = run_directory(config);
  for (const auto& sample : samples) {
    for (PersonaKind persona : config.personas) {
      const int n = config.n_trials.value_or(sample.n_trials);
      std::vector<TrialJudgeArtifact> artifacts;
      bool complete = true;
      for (int trial = 1; trial <= n; ++trial) {
        const fs::path path = run_dir / sample.id / to_string(persona) /
                              ("trial_" + std::to_string(trial) + ".judge.json");
        if (!fs::exists(path)) {
          complete = false;
          break;
        }
        const json stored = json::parse(read_file_or_throw(path));
        artifacts.push_back(
            deserialize_judge_artifact(stored.at("payload").dump()));
      }
      if (complete && !artifacts.empty()) {
        all[sample.id][persona] = std::move(artifacts);
      }
    }
  }
  return all;
}

std::vector<TrialOutcome> to_outcomes(
    const std::vector<TrialJudgeArtifact>& artifacts) {
  std::vector<TrialOutcome> outcomes;
  outcomes.reserve(artifacts.size());
  for (const auto& artifact : artifacts) {
    TrialOutcome outcome;
    outcome.sample_id = artifact.sample_id;
    outcome.trial_index = artifact.trial_index;
    outcome.final_progress = artifact.final_progress;
    outcome.curve = artifact.curve;
    outcome.assessments = artifact.assessments;
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

constexpr const char* kMetricNames[] = {"MeanProg@k", "MaxProg@k", "MaxAUC@k",
                                        "MaxPPT@k",   "pass@k",    "pass^k"};

double metric_value(const SampleMetrics& metrics, const std::string& name) {
  if (name == "MeanProg@k") return metrics.mean_prog;
  if (name == "MaxProg@k") return metrics.max_prog;
  if (name == "MaxAUC@k") return metrics.max_auc;
  if (name == "MaxPPT@k") return metrics.max_ppt;
  if (name == "pass@k") return metrics.pass_at;
  if (name == "pass^k") return metrics.pass_hat;
  throw Error("unknown metric " + name);
}

}  // namespace

bool emit_report(const RunConfig& config) {
  const fs::path run_dir = run_directory(config);
  const fs::path report_dir = run_dir / "report";
  fs::create_directories(report_dir);

  std::vector<TaskSample> samples = load_dataset(config.dataset);
  for (const auto& sample : samples) {
    const int n = config.n_trials.value_or(sample.n_trials);
    for (const int k : config.k_values) {
      if (k < 1 || k > n) {
        throw ConfigError("k=" + std::to_string(k) + " invalid for sample '" +
                          sample.id + "' with n=" + std::to_string(n));
      }
    }
  }
  const auto all = load_all_judgments(config, samples);

  if (all.empty()) {
    atomic_write(report_dir / "summary.md",
                 "# Evaluation summary\n\nNo results: the run produced no "
                 "judged trials.\n");
    return false;
  }

  // Per-sample metric rows, one row per sample x persona x metric (x k).
  std::string metrics_csv =
      "sample_id,dataset_tag,persona,metric,k,threshold,value\n";
  std::string curves_csv = "sample_id,persona,trial_index,turn,progress\n";

  // dataset_tag -> k -> persona -> rows; the first k is the headline one
  std::map<std::string, std::map<int, std::map<PersonaKind, std::vector<SampleMetrics>>>>
      by_tag;

  for (const auto& sample : samples) {
    auto sample_it = all.find(sample.id);
    if (sample_it == all.end()) continue;
    for (PersonaKind persona : config.personas) {
      auto persona_it = sample_it->second.find(persona);
      if (persona_it == sample_it->second.end()) continue;
      const auto& artifacts = persona_it->second;
      const int n = static_cast<int>(artifacts.size());
      const std::vector<int> ks =
          config.k_values.empty() ? std::vector<int>{n} : config.k_values;
      for (const int k : ks) {
        const SampleMetrics metrics = compute_sample_metrics(
            to_outcomes(artifacts), persona, sample.dataset_tag, std::min(k, n),
            config.threshold, config.auc_axis);
        by_tag[sample.dataset_tag][k][persona].push_back(metrics);
        for (const char* name : kMetricNames) {
          metrics_csv += sample.id + "," + sample.dataset_tag + "," +
                         to_string(persona) + "," + name + "," +
                         std::to_string(k) + "," + format_full(config.threshold) +
                         "," + format_full(metric_value(metrics, name)) + "\n";
        }
      }
      for (const auto& artifact : artifacts) {
        for (int t = 1; t <= artifact.curve.t_max(); ++t) {
          curves_csv += sample.id + "," + to_string(persona) + "," +
                        std::to_string(artifact.trial_index) + "," +
                        std::to_string(t) + "," +
                        format_full(artifact.curve.value_at(t)) + "\n";
        }
      }
    }
  }

  atomic_write(report_dir / "metrics.csv", metrics_csv);
  atomic_write(report_dir / "curves.csv", curves_csv);

  // Dataset-level aggregates with normal-approximation 95% CIs.
  std::string aggregates_csv =
      "dataset_tag,persona,metric,k,mean,ci95,samples\n";
  for (const auto& [tag, by_k] : by_tag) {
    for (const auto& [k, personas] : by_k) {
      for (const auto& [persona, rows] : personas) {
        for (const char* name : kMetricNames) {
          std::vector<double> values;
          values.reserve(rows.size());
          for (const auto& row : rows) {
            values.push_back(metric_value(row, name));
          }
          const MeanWithCi stats = mean_with_ci(values);
          aggregates_csv += tag + "," + to_string(persona) + "," + name + "," +
                            std::to_string(k) + "," + format_full(stats.mean) +
                            "," + format_full(stats.ci95) + "," +
                            std::to_string(stats.count) + "\n";
        }
      }
    }
  }
  atomic_write(report_dir / "aggregates.csv", aggregates_csv);

  // Markdown summary in the expert | non-expert column layout, at the
  // headline k.
  std::string summary = "# Evaluation summary\n";
  summary += "\nAgent model: " + config.agent_model +
             ". Cells show expert | non-expert persona means";
  summary += "; metrics use k=" +
             (config.k_values.empty() ? std::string("n")
                                      : std::to_string(config.k_values.front())) +
             ", threshold=" + format_two(config.threshold) + ".\n";
  const std::vector<std::string> table_metrics = {
      "MeanProg@k", "MaxProg@k", "MaxAUC@k", "MaxPPT@k", "pass@k"};
  for (const auto& [tag, by_k] : by_tag) {
    // default-k runs score each sample at its own n, so rows for one tag can
    // sit under several k keys; merge them for the headline table
    std::map<PersonaKind, std::vector<SampleMetrics>> personas;
    if (config.k_values.empty()) {
      for (const auto& [k, rows_by_persona] : by_k) {
        for (const auto& [persona, rows] : rows_by_persona) {
          auto& bucket = personas[persona];
          bucket.insert(bucket.end(), rows.begin(), rows.end());
        }
      }
    } else {
      personas = by_k.at(config.k_values.front());
    }
    summary += "\n## " + (tag.empty() ? std::string("(untagged)") : tag) + "\n\n";
    summary += "| Agent Model |";
    for (const auto& name : table_metrics) {
      summary += " " + name + " |";
    }
    summary += "\n|---|";
    for (std::size_t i = 0; i < table_metrics.size(); ++i) {
      summary += "---|";
    }
    summary += "\n| " + config.agent_model + " |";
    for (const auto& name : table_metrics) {
      std::string cell;
      for (PersonaKind persona :
           {PersonaKind::expert, PersonaKind::non_expert}) {
        auto persona_it = personas.find(persona);
        std::string rendered = "-";
        if (persona_it != personas.end()) {
          std::vector<double> values;
          for (const auto& row : persona_it->second) {
            values.push_back(metric_value(row, name));
          }
          rendered = format_two(mean_with_ci(values).mean);
        }
        if (!cell.empty()) cell += " \\| ";
        cell += rendered;
      }
      summary += " " + cell + " |";
    }
    summary += "\n";
  }
  atomic_write(report_dir / "summary.md", summary);
  return true;
}

// ---------------------------------------------------------------------------
// Entry points

RunSummary run_talk(const RunConfig& config, Provider* provider_override) {
  PipelineContext context(config);
  init_context(context, provider_override);
  stage_talk(context);
  return finish(context);
}

RunSummary run_judge(const RunConfig& config, Provider* provider_override) {
  PipelineContext context(config);
  init_context(context, provider_override);
  stage_judge(context);
  return finish(context);
}

RunSummary run_diagnose(const RunConfig& config, Provider* provider_override) {
  PipelineContext context(config);
  init_context(context, provider_override);
  stage_diagnose(context);
  return finish(context);
}

RunSummary run_metrics(const RunConfig& config) {
  RunSummary summary;
  summary.run_dir = run_directory(config);
  if (!emit_report(config)) {
    summary.failures.push_back(
        StageFailure{"", "", 0, "report", "no judged trials found"});
  }
  return summary;
}

RunSummary run_eval(const RunConfig& config, Provider* provider_override) {
  PipelineContext context(config);
  init_context(context, provider_override);
  stage_talk(context);
  stage_judge(context);
  stage_diagnose(context);
  write_failures(context);
  if (!emit_report(config)) {
    context.fail("", PersonaKind::expert, 0, "report", "no judged trials found");
    write_failures(context);
  }
  RunSummary summary;
  summary.run_dir = context.run_dir;
  summary.failures = context.failures;
  return summary;
}

}  // namespace ted
