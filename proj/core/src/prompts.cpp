#include "ted/prompts.hpp"

#include "ted/common.hpp"

namespace ted {

std::string fill_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& values) {
  for (const auto& [key, value] : values) {
    if (tmpl.find("{" + key + "}") == std::string_view::npos) {
      throw TemplateError("missing placeholder {" + key + "}");
    }
  }
  // Single pass over the template; substituted values are never rescanned,
  // so marker-like text inside a value passes through literally.
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    if (tmpl[pos] == '{') {
      bool matched = false;
      for (const auto& [key, value] : values) {
        const std::string marker = "{" + key + "}";
        if (tmpl.compare(pos, marker.size(), marker) == 0) {
          out += value;
          pos += marker.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out += tmpl[pos++];
  }
  return out;
}

int count_placeholder(std::string_view tmpl, std::string_view key) {
  const std::string marker = "{" + std::string(key) + "}";
  int count = 0;
  std::size_t pos = 0;
  while ((pos = tmpl.find(marker, pos)) != std::string_view::npos) {
    ++count;
    pos += marker.size();
  }
  return count;
}

PersonaTemplate builtin_persona(PersonaKind kind) {
  return PersonaTemplate{kind, kind == PersonaKind::expert
                                   ? prompts::expert_persona()
                                   : prompts::non_expert_persona()};
}

namespace prompts {

const std::string& expert_persona() {
  static const std::string text = R"PROMPT(You are acting as an expert LLM-simulated user who fully understands the AI assistant system and goal. Always respond naturally in clear, concise language that fits the expert user role and goal. Provide complete and precise information in your responses. Generate one line at a time. Do not give away all the instructions at once. Only provide the information that is necessary for the current step.

You are provided with the following user task summary:

[user_task_summary]

{user_task_summary}

You understand the system well and will provide thorough, accurate responses using only the information provided in the [user_task_summary] section.

If the AI assistant returns output in JSON format, respond only to the content inside the JSON as if the format does not matter.

---
The following provides an overview of the AI assistant if available.

[AI Assistant Description] :
{agent_desc}

---
When you as an expert LLM-simulated user is analysing the real-time chat history, carry out a two-step process as the user:
first, a Reflection Phase, followed by a Response Generation Phase.
)PROMPT";
  return text;
}

const std::string& non_expert_persona() {
  static const std::string text = R"PROMPT(You are simulating a clueless, casual NON-expert user who is interacting with an AI assistant. You don't fully understand how the AI system works, and you tend to give vague or incomplete instructions - often leaving out key steps or context.

When you respond:

Speak naturally, casually, like someone who's unsure how to talk to an AI.

Be brief and only provide part of the needed information.

Do not give a full picture unless the assistant directly asks for it.

Only share details that are directly related to what was just asked or prompted - not more.

Never proactively explain your reasoning or provide background info unless the assistant digs into it.

You are working toward the following general task:

[User Task Summary]
{user_task_summary}

But since you're not an expert, you'll just sort of "feel your way through it" and leave lots of gaps in your instructions. NEVER provide COMPLETE instructions. ALWAYS OMIT some variables and missing key context.
If the assistant returns something in structured formats like JSON, you can just react casually to the content. Treat the format like it doesn't matter.

---
The following provides an overview of the AI assistant if available.

[AI Assistant Description]:
{agent_desc}

---
When you as a clueless, casual NON-expert user is analysing the real-time chat history, carry out a two-step process as the user:
first, a Reflection Phase, followed by a Response Generation Phase.

When simulating your process during the conversation:
You go through two internal steps each time:

1. Reflection Phase (internal thought):
Take a quick look at the current chat history. Think to yourself:
"Okay, what did the assistant just say or ask? What should I probably say next without overexplaining?"
Remember: you're not confident in how this system works, so don't try to be precise.

2. Response Generation Phase (your reply):
Now write a short, casual message that gives only partial information based on what the assistant asked. Leave things unclear unless the assistant is persistent.
)PROMPT";
  return text;
}

const std::string& reflection_step() {
  static const std::string text = R"PROMPT(---
The following [Chat History] (if available) provides context and indicates the CURRENT stage of your conversation as a LLM-simulated user with the AI assistant.

[Chat History]
{chat_history}
---

Step 1: Reflection Phase

Given the [Chat History] REFLECT carefully on the AI assistant's last response and what the LLM-simulated user is trying to accomplish based on the [user_task_summary].

Briefly address:
- Your role as the LLM-simulated user.
- The current stage of the conversation. You SHOULD NOT skip any user instructions as mentioned in the [user_task_summary].
- The assistant's last reply in the [Chat History].

IMPORTANT CLARIFICATION:
- Review the entire [Chat History] and the [user_task_summary] and see what should be your next response as a LLM-simulated user.
- At times, the AI assistant's last message may overlap with or anticipate a future user turn. In such cases, treat it strictly as the AI assistant response, not a replacement of the user message

Do NOT generate the LLM-simulated user response yet. RESPOND only with a REFLECTION.
**IMPORTANT** remember your user persona as written in the system prompt (eg: expert user or non-expert) and respond with appropriate reflection.

TERMINATE ONLY IF the conversation is at its FINAL STAGE where the agent has completed all the tasks wanted by the user as shown in the [user_task_summary].
If the conversation has concluded, prepare to respond with {termination_msg} in the next response generation phase.
Otherwise, DO NOT consider termination if the current conversation is not at its final stage.
)PROMPT";
  return text;
}

const std::string& response_step() {
  static const std::string text = R"PROMPT(---
The following [Chat History] (if available) provides context and indicates the CURRENT stage of your conversation as a LLM-simulated user with the AI assistant.

[Chat History]
{chat_history}
---

The following is the LLM-simulated user reflection.

[Reflection]
{reflection_history}

---
Step 2: Response Generation Phase

Given the [Chat History] and [Reflection], GENERATE the LLM-simulated user NEXT RESPONSE that:

i) Naturally continues the conversation WITHOUT ADDING NEW TASK that is NOT found in the [user_task_summary]. You SHOULD NOT skip any tasks for the LLM-simulated user.
ii) Avoids revealing or repeating the AI assistant's answers.
iv) Responds appropriately to the assistant's actual reply, even if vague or off-track. If the AI assistant's last message echoes or resembles any part of a user message, it's the AI assistant response, NOT a new user turn. Note that suggestions or recommendations by the AI assistant should NEVER be MISTAKEN for actual actions taken.

GENERATE the LLM-simulated USER RESPONSE based on the [Reflection]. Return ONLY the LLM-simulated user response.

**IMPORTANT** remember your user persona as written in the system prompt (eg: expert user or non-expert) and respond with appropriate response.

TERMINATE ONLY IF the conversation is at its FINAL STAGE where the agent has completed all the tasks wanted by the user as shown in the [user_task_summary].
If the conversation has concluded, prepare to respond with {termination_msg} in the next response generation phase.
Otherwise, DO NOT consider termination if the current conversation is not at its final stage.
)PROMPT";
  return text;
}

const std::string& judge() {
  static const std::string text = R"PROMPT(You are provided with a sample that contains several key components centered around an interaction between an agent and a simulated user, referred to as the user proxy. The user proxy represents a human-in-the-loop, engaging with the agent by posing questions and guiding the conversation throughout the dialogue.

The [User Summary Instructions] section outlines the user's goals, expectations, and the overall task the agent is expected to complete. The [Agent Responses Submission] section captures the agent's actual responses to the user proxy at each turn of the interaction. The [Agent Intermediate Trajectories] section provides a detailed step-by-step reasoning and actions taken by the agent. Finally, the [Dynamic Dialogue] section presents the full conversation between the agent and the user proxy.

As a judge, your task is to determine whether the subgoal specified in the [Ground Truth Subgoal] has been achieved. To make this assessment, evaluate the [Agent Intermediate Trajectories] and [Agent Responses Submission] to ascertain whether the subgoal has been successfully completed.

When the completion of a subgoal depends on the availability of a specific tool, and that TOOL is ABSENT, the subgoal must be marked as INCOMPLETE, REGARDLESS of the correctness of the agent's responses in [Agent Responses Submission]. Tool availability is a hard constraint - no amount of valid reasoning can compensate for its absence. Suggesting or recommending a tool is acceptable only if the subgoal does not require the tool to be used. However, CONCEPTUALIZING or HALLUCINATING a tool call - i.e., falsely implying the tool was invoked - is NOT acceptable, and the subgoal must be marked as INCOMPLETE.

Additionally if the agent intermediate trajectory are left BLANK or DOES NOT contain relevant tools to the subgoal, it means that the ground truth subgoal is NOT MET and the subgoal is considered as INCOMPLETE, REGARDLESS of the correctness of the agent's responses in [Agent Responses Submission]. The thought in [Agent Intermediate Trajectories] CANNOT be considered as a substitute for a tool call and the ground truth subgoal is considered to be INCOMPLETE.

[BEGIN DATA]
************
[User Summary Instructions]:
{user_task_summary}

************
[Ground Truth Subgoal]:
{grading_note}

************
[Agent Intermediate Trajectories]:
{trajectory}

************
[Agent Responses Submission]:
{agent_responses}

************
{dynamicDialogue}
[END DATA]

During assessment focus solely on the factual content and the goal completion while disregarding any differences in style, grammar, punctuation, or syntax.

Begin by presenting a concise argument to confirm the validity of your conclusion. Avoid simply stating the correct answers at the outset. Decide what type of tools is required and then end with your answer formatted as 'GRADE: $LETTER' (without quotes) where LETTER is one of C or I. Reply with 'GRADE: C' (without quotes) to indicate COMPLETE if the agent has successfully achieved the subgoal. Otherwise, reply with 'GRADE: I' (without quotes) to indicate INCOMPLETE if the agent did not achieved the subgoal.
)PROMPT";
  return text;
}

const std::string& identify_error() {
  static const std::string text = R"PROMPT(You are tasked with summarizing the error type in a concise and abstract manner based on the provided explanation. This explanation is generated by a judge model, which evaluates whether the agent's response satisfies the specified subgoals. In the explanation, a grade of "C" (Complete) indicates success, while "I" (Incomplete) indicates failure.

Your goal is to produce an error type that:
- Clearly captures the core failure or issue at an abstract level.
- Avoids restating the explanation verbatim.
- Is short, specific, and phrased like a category label rather than a long sentence.
- Does not include sensitive details or unnecessary context.
- If the error type involves tool usage, explicitly include the tool name in the error type.

You will be provided with:
- Ground truth subgoals
- Judge model's explanation of the agent's response

[BEGIN DATA]
***
[Ground Truth Subgoals]: {subgoals}
***
[Explanation]: {explanation}
***
[END DATA]

Please return your output in the following **strict JSON format**:
{
    "error_type": "<error_type>",
    "explanation": "<explanation>"
}
)PROMPT";
  return text;
}

const std::string& select_error() {
  static const std::string text = R"PROMPT(You are given multiple independent predictions of the same data row.
Each prediction includes an error type assigned by a model.
Your task is to determine the **most probable true error type** using a majority voting approach.

Instructions:
1. Review all provided error types carefully.
2. Group similar or semantically equivalent error types together, even if their wording differs.
3. Count how many times each grouped error type appears.
4. Select the error type with the highest count as the final result.
5. If there is a tie:
   - Prefer the error type that is more specific and informative.
   - If still tied, choose the one most consistent with the majority wording.
6. Output ONLY the most probable error type, without extra commentary.

[BEGIN DATA]

[Error Types]: {error_type_list}

[END DATA]

Please return your output in the following **strict JSON format**:
{
    "most_probable_error_type": "<most_probable_error_type>"
}
)PROMPT";
  return text;
}

const std::string& cluster_errors() {
  static const std::string text = R"PROMPT(You are tasked with clustering the following error types based on their semantic similarity. The goal is to group related error types under broader, more abstract categories to reduce redundancy and improve generalization.

Important:
- The cluster_label should be primarily grounded in the <subgoals> provided.
- Only if you are very certain that an error type is entirely unrelated to the subgoals should you create a new cluster label not derived from them.
- Always aim to preserve the subgoal's intent when naming clusters.

Guidelines:
- Error types are not mutually exclusive and may overlap in meaning.
- Each cluster should reflect the most abstract and inclusive label that unifies all error types within it.
- Do not merge error types referring to different tools into a single cluster.
- Clusters involving tool usage must be separated by tool name.
- The cluster_label for each tool-related cluster must explicitly include that tool's name.
- Minimize the number of clusters while maintaining clear and meaningful distinctions.
- Avoid overly specific wording - cluster labels should be reusable in other contexts where the same subgoal applies.

[BEGIN DATA]
***

[Subgoals]: {subgoals}

***

[Error Types]: {error_types}

***

[END DATA]

Please return your output in the following strict JSON format:
{
  "clusters": [
    {
      "cluster_label": "<generalized_error_type>",
      "error_types": ["<error_type_1>", "<error_type_2>", ...],
      "error_ids": ["<error_id_1>", "<error_id_2>", ...]
    },
    ...
  ]
}
)PROMPT";
  return text;
}

const std::string& milestone_conversion() {
  static const std::string text = R"PROMPT(You are creating grading notes for agent evaluation that include dependency relationships. Convert these milestones into concise statements about what the agent should accomplish, including any sequence requirements.

SCENARIO: {scenario_name}

DESCRIPTION: {scenario_description}

TOTAL MILESTONES: {total_milestones}

MILESTONE DEPENDENCIES (DAG edges): {milestone_edge_list}

DEPENDENCY ANALYSIS: {dependency_analysis}

MILESTONES:

{milestones}

RULES:

1. Create one or MORE natural language subgoals per milestones as needed to capture all required actions
2. Mention specific tool names when relevant: "Agent should call tool_name"
3. Use natural language to describe the purpose: "Agent should call search_contacts to find Homer's information"
4. Include sequence requirements when dependencies exist: "before", "after", "then", "first"
5. Break down complex milestones into multiple subgoals if needed
6. Use format: "Agent should [natural action description]"
7. Focus on what needs to be accomplished, be specific and actionable

EXAMPLES OF GOOD NATURAL LANGUAGE GRADING NOTES:

- "Agent should call set_wifi_status to turn off wifi"
- "Agent should inform the user that wifi is turned off"
- "Agent should enable cellular service before sending message"
- "Agent should enable cellular service before sending message"
- "Agent should update contact phone number after finding the contact"

SPECIAL HANDLING FOR COMMUNICATION MILESTONES:

- If target_data has sender=AGENT and recipient=USER with content, the grading note should be: "Agent should inform/tell the user [content]"
- If target_data has sender=EXECUTION_ENVIRONMENT and recipient=AGENT with tool_trace, focus on the tool call requirement
- Focus on what the agent needs to DO or COMMUNICATE, not technical database states

CONSTRAINT TYPES:

- snapshot_similarity: Agent should achieve the target state
- addition_similarity: Agent should add/create the target data
- removal_similarity: Agent should remove/delete the target data
- update_similarity: Agent should modify/update the target data

RESPONSE FORMAT:

Return a JSON array where each element can be either a single string or an array of strings for that milestone:
{json_schema}

Each milestone can have one or multiple grading notes as subgoals. Include dependency relationships when they exist.
)PROMPT";
  return text;
}

}  // namespace prompts
}  // namespace ted
