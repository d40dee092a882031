#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ted/trajectory.hpp"

namespace ted {

/// Substitutes {key} markers. Every provided key must occur at least once in
/// the template, otherwise a TemplateError is thrown; all occurrences are
/// replaced. Braces that are not provided keys pass through untouched.
std::string fill_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& values);

/// Number of occurrences of the {key} marker in a template.
int count_placeholder(std::string_view tmpl, std::string_view key);

namespace prompts {

// User-proxy templates. Placeholders: {user_task_summary}, {agent_desc} in
// the persona system texts; {chat_history}, {termination_msg},
// {reflection_history} in the two-step templates.
const std::string& expert_persona();
const std::string& non_expert_persona();
const std::string& reflection_step();
const std::string& response_step();

// Grader template. Placeholders: {user_task_summary}, {grading_note},
// {trajectory}, {agent_responses}, {dynamicDialogue}.
const std::string& judge();

// Error-analysis templates. Placeholders: {subgoals}, {explanation} /
// {error_type_list} / {subgoals}, {error_types}.
const std::string& identify_error();
const std::string& select_error();
const std::string& cluster_errors();

// Milestone-to-grading-note conversion. Placeholders: {scenario_name},
// {scenario_description}, {total_milestones}, {milestone_edge_list},
// {dependency_analysis}, {milestones}, {json_schema}.
const std::string& milestone_conversion();

}  // namespace prompts

/// The built-in persona for a kind, with placeholders unfilled.
PersonaTemplate builtin_persona(PersonaKind kind);

}  // namespace ted
