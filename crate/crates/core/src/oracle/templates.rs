//! Named prompt templates with `{placeholder}` substitution.
//!
//! A placeholder is `{` + identifier + `}`; any other brace is literal, which
//! keeps the JSON examples inside the prompts intact. Substitution is a
//! single pass, so values are never re-scanned for placeholders.

use std::collections::BTreeMap;

use super::OracleError;

pub const SYSTEM_CIVILIAN: &str = "system_civilian";
pub const SYSTEM_MURDERER: &str = "system_murderer";
pub const INTRO_CIVILIAN: &str = "introduction_civilian";
pub const INTRO_MURDERER: &str = "introduction_murderer";
pub const SENSOR_CIVILIAN: &str = "sensor_civilian";
pub const SENSOR_MURDERER: &str = "sensor_murderer";
pub const QUESTION_CIVILIAN: &str = "search_by_questioning_civilian";
pub const QUESTION_MURDERER: &str = "search_by_questioning_murderer";
pub const REFINEMENT: &str = "action_space_refinement";
pub const REPLY_CIVILIAN: &str = "question_reply_civilian";
pub const REPLY_MURDERER: &str = "question_reply_murderer";
pub const EVAL_SINGLE: &str = "evaluation_single";
pub const EVAL_MULTI: &str = "evaluation_multi";
pub const OP_SINGLE: &str = "op_single";
pub const OP_MULTI: &str = "op_multi";
pub const INFO_GAIN_PROBE: &str = "information_gain_probe";
pub const JSON_RETRY: &str = "json_retry";

const RULES_BODY: &str = r#"You are playing a game called "Murder Mystery" with other players, which is based on textual interaction. Here are the game rules:

Rule 1: The total number of players participating in the game depends on the script. There may be one or more players who are the murderer(s), while the rest are civilians.
Rule 2: The goal of the game is for civilian players to collaborate and face a meticulously planned murder case together, collecting evidence and reasoning to identify the real murderer among the suspects, all the while ensuring they are not mistaken for the murderer; murderer players must concoct lies to hide their identity and avoid detection, while also achieving other objectives in the game.
Rule 3 Throughout the game, only murderer players are allowed to lie. To conceal their identity, murderers may choose to frame others to absolve themselves of guilt; non-murderer players (civilians) must answer questions from other players and the host honestly and provide as much information as they know about the case to help uncover the truth.
Rule 4: At the start of the game, each player receives their character script from the host, which contains information about their role and identity.
Rule 5: Other players cannot see the content of each player's character script, so players must and can only collect information about other players through interaction after the game starts.
Rule 6: In the voting phase, each player needs to cast their vote for who they think is the murderer in each case. If the player with the most votes is the murderer, the civilian players win. Otherwise, the murderer players win.


Gameplay:
The game has one or more acts. At the beginning of the game, players introduce themselves according to the script, and in each act, you will receive more plot information. In each act, you can ask questions, share your observations, or make deductions to help solve the murder case.
The goal is to identify the true murderer and explain their motive. If you are the true murderer, you must hide your identity and avoid detection.

Now, you are playing the role of {character_name}, and the other players are {character_name_list}.
"#;

fn builtin_texts() -> Vec<(&'static str, String)> {
    vec![
        (
            SYSTEM_CIVILIAN,
            format!("{RULES_BODY}You are not the murderer. Please collaborate with the other civilian players to achieve your personal objective while finding the true culprit!"),
        ),
        (
            SYSTEM_MURDERER,
            format!("{RULES_BODY}You are the murderer who kills {{victims}}, and you haven't killed anyone else. Please hide the fact that you committed the murder by fabricating lies and other information, and accomplish your personal objective!"),
        ),
        (
            INTRO_CIVILIAN,
            "Your Script is {current_script}.
Your goal is {goal}.
You are not a murderer, so tell more details to help find the murderer.
If you have something to hide, then be sure not to divulge the relevant information! Don't reveal your goals.
Please introduce yourself."
                .into(),
        ),
        (
            INTRO_MURDERER,
            "Your Script is {current_script}.
Your goal is {goal}.
If you have something to hide, then be sure not to divulge the relevant information!
Please introduce yourself.
You are a murderer, so You can lie to cover yourself!"
                .into(),
        ),
        (
            SENSOR_CIVILIAN,
            "{victim} was murdered, you are not the murderer, you need to try to find the murderer.
Your Script is about {character} is {current_script}.
The dialog history about {character} is {dialog_history}.
Be warned, if it's a murderer's word it might deceive you.
Based on the information above, {sensor}
Please answer {choices} and explain your reasoning in one or two sentences."
                .into(),
        ),
        (
            SENSOR_MURDERER,
            "{victim} was murdered, you are the murderer, but you need to hide yourself, and pretend you're not the murderer.
Your Script is about {character} is {current_script}.
The dialog history about {character} is {dialog_history}.
Based on the information above, {sensor}
Please answer {choices} and explain your reasoning in one or two sentences."
                .into(),
        ),
        (
            QUESTION_CIVILIAN,
            "{victim} was murdered, you are not the murderer, you need to try to find the murderer.
Your Script is about {character} is {current_script}.
The dialog history about {character} is {dialog_history}.
{summary}
You can ask {character} {question_number} questions. What would you ask? Please include the victim's name in your question when asking,
Since the murderer will lie, you can ask questions based on the loopholes and contradictions in what they have previously said.
Please respond in the JSON format without any additional comments.
For example,
{
  'Question1': 'Your question',
  'Question2': 'Your question'
}"
            .into(),
        ),
        (
            QUESTION_MURDERER,
            "{victim} was murdered, you are the murderer, But you need to hide yourself, pretend you're not a murderer, and ask questions of other people pretending you suspect the other person is a murderer.
Your Script is about {character} is {current_script}.
The dialog history about {character} is {dialog_history}.
{summary}
You can ask {character} {question_number} questions. What would you ask? Please include the victim's name in your question when asking.
Please respond in the JSON format without any additional comments.
For example,
{
  'Question1': 'Your question',
  'Question2': 'Your question'
}"
            .into(),
        ),
        (
            REFINEMENT,
            "{victim} was murdered.
You think {character_suspect} are suspected of killing {victim}, and your reasons for suspecting them are respectively:
{summary}
Please select several people you think are the most suspicious. You can choose one or more, Please try to reduce the number of suspects.
Please respond in the JSON format without any additional comments.
For example,
{
  'suspicion': [\"character_name1\", \"character_name2\"]
}"
            .into(),
        ),
        (
            REPLY_CIVILIAN,
            "{character} ask you a question: {question}
Your Script relative to the question is {current_script}.
The dialog history relative to the question is {dialog_history}.
What you need to pay attention to is {goal}.
Be warned, in the dialog history, if it's a murderer's word it might deceive you.
Please answer the question: \"{question}\" based on the information above.
You are not the murderer, and you need to work hard to find the murderer. Therefore, provide as much information as possible, such as clues related to the timeline, emotional information, etc.
Please answer the questions from a first-person perspective, rather than saying what someone else said."
                .into(),
        ),
        (
            REPLY_MURDERER,
            "{character} ask you a question : {question}
Your Script relative to the question is {current_script}.
The dialog history relative to the question is {dialog_history}.
What you need to pay attention to is {goal}.
Be warned, in the dialog history, if it's a murderer's word it might deceive you.
Please answer the questions: \"{question}\" based on the information above.
You are the murderer. Please hide the fact that you killed {victim}. You can fabricate lies.
Please answer the question from a first-person perspective, rather than saying what someone else said."
                .into(),
        ),
        (
            EVAL_SINGLE,
            "Please answer the questions based on the information in your script and the content of the dialog
Your Script relative to the question is {current_script}.
The dialog history relative to the question is {dialog_history}.
The question is {question}, the choices is {choices}
Let's think about this problem step by step, please provide your reasoning and your choice (only the option number, e.g., 'a')
You must choose one from the options.
Please respond in the JSON format without any additional comments.
For example,
{
    \"reason\": \"Your reason\",
    \"answer\": \"a\"
}"
            .into(),
        ),
        (
            EVAL_MULTI,
            "Please answer the questions based on the information in your script and the content of the dialog
Your Script relative to the question is {current_script}.
The dialog history relative to the question is {dialog_history}.
The question is {question}, the choices is {choices}
That is a multiple-choice question.
Let's think about this problem step by step, please provide your reasoning and your choice (only the option number)
You must make a choice from the options.
Please respond in the JSON format without any additional comments.
For example,
{
  \"reason\": \"Your reason\",
  \"answer\": \"a,b\"
}"
            .into(),
        ),
        (
            OP_SINGLE,
            "Please answer the questions based on the information in each character's script:
{current_script}
The question is {question}, the choices is {choices}
Let's think about this problem step by step, please provide your reasoning and your choice (only the option number)
You must choose one from the options.
Please respond in the JSON format without any additional comments.
For example,
{
  \"reason\": \"Your reason\",
  \"answer\": \"a,b\"
}"
            .into(),
        ),
        (
            OP_MULTI,
            "Please answer the questions based on the information in each character's script:
{current_script}
The question is {question}, the choices is {choices}
That is a multiple-choice question.
Let's think about this problem step by step, please provide your reasoning and your choice (only the option number)
You must make a choice from the options.
Please respond in the JSON format without any additional comments.
For example,
{
  \"reason\": \"Your reason\",
  \"answer\": \"a,b\"
}"
            .into(),
        ),
        (
            INFO_GAIN_PROBE,
            "{victim} was murdered. {stance}
Your Script is about {character} is {current_script}.
The dialog history about {character} is {dialog_history}.
Would continuing to question {character} yield valuable information about who killed {victim}?
Answer with a single word: yes or no."
                .into(),
        ),
        (
            JSON_RETRY,
            "{previous_prompt}

Your previous reply could not be parsed. Respond with the JSON object only, without any additional comments."
                .into(),
        ),
    ]
}

/// Byte offsets of each placeholder `{name}` in `text`.
fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            let ident_ok = j > start && !bytes[start].is_ascii_digit();
            if ident_ok && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &text[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every placeholder in `text`; unbound names are an error.
pub fn render_str(
    template_id: &str,
    text: &str,
    vars: &BTreeMap<String, String>,
) -> Result<String, OracleError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, name) in placeholders(text) {
        let value = vars.get(name).ok_or_else(|| OracleError::UnboundPlaceholder {
            template: template_id.to_string(),
            placeholder: name.to_string(),
        })?;
        out.push_str(&text[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self {
            templates: builtin_texts()
                .into_iter()
                .map(|(id, text)| (id.to_string(), text))
                .collect(),
        }
    }
}

impl TemplateRegistry {
    /// Replaces (or adds) a template by id.
    pub fn set(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Names of the placeholders a template expects, in order of appearance.
    pub fn placeholders(&self, id: &str) -> Result<Vec<String>, OracleError> {
        let text = self
            .get(id)
            .ok_or_else(|| OracleError::UnknownTemplate(id.to_string()))?;
        Ok(placeholders(text).into_iter().map(|(_, _, n)| n.to_string()).collect())
    }

    pub fn render(&self, id: &str, vars: &BTreeMap<String, String>) -> Result<String, OracleError> {
        let text = self
            .get(id)
            .ok_or_else(|| OracleError::UnknownTemplate(id.to_string()))?;
        render_str(id, text, vars)
    }
}

/// Builds a variable map from string pairs.
pub fn vars<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_template_contains_question() {
        let reg = TemplateRegistry::default();
        let v = vars([
            ("character", "Inspector Howard"),
            ("question", "Where were you at nine?"),
            ("current_script", "script"),
            ("dialog_history", "none"),
            ("goal", "stay calm"),
        ]);
        let out = reg.render(REPLY_CIVILIAN, &v).unwrap();
        assert!(out.contains("Where were you at nine?"));
        assert!(out.starts_with("Inspector Howard ask you a question"));
    }

    #[test]
    fn missing_victim_is_unbound() {
        let reg = TemplateRegistry::default();
        let v = vars([
            ("character", "B"),
            ("current_script", "s"),
            ("dialog_history", "d"),
            ("sensor", "q"),
            ("choices", "c"),
        ]);
        match reg.render(SENSOR_CIVILIAN, &v) {
            Err(OracleError::UnboundPlaceholder { placeholder, .. }) => assert_eq!(placeholder, "victim"),
            other => panic!("expected unbound placeholder, got {other:?}"),
        }
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let reg = TemplateRegistry::default();
        let v = vars([("victim", "V"), ("character_suspect", "A, B"), ("summary", "x")]);
        assert_eq!(reg.render(REFINEMENT, &v).unwrap(), reg.render(REFINEMENT, &v).unwrap());
    }

    #[test]
    fn json_examples_stay_literal() {
        let reg = TemplateRegistry::default();
        let names = reg.placeholders(EVAL_SINGLE).unwrap();
        assert_eq!(names, vec!["current_script", "dialog_history", "question", "choices"]);
        let v = vars([("victim", "V"), ("character_suspect", "A"), ("summary", "s")]);
        let out = reg.render(REFINEMENT, &v).unwrap();
        assert!(out.contains("'suspicion': [\"character_name1\", \"character_name2\"]"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let out = render_str("t", "say {a}", &vars([("a", "{b}")])).unwrap();
        assert_eq!(out, "say {b}");
    }

    #[test]
    fn unknown_template() {
        let reg = TemplateRegistry::default();
        assert!(matches!(reg.render("nope", &BTreeMap::new()), Err(OracleError::UnknownTemplate(_))));
    }

    #[test]
    fn every_builtin_id_is_registered() {
        let reg = TemplateRegistry::default();
        for id in [
            SYSTEM_CIVILIAN, SYSTEM_MURDERER, INTRO_CIVILIAN, INTRO_MURDERER, SENSOR_CIVILIAN,
            SENSOR_MURDERER, QUESTION_CIVILIAN, QUESTION_MURDERER, REFINEMENT, REPLY_CIVILIAN,
            REPLY_MURDERER, EVAL_SINGLE, EVAL_MULTI, OP_SINGLE, OP_MULTI, INFO_GAIN_PROBE, JSON_RETRY,
        ] {
            assert!(reg.get(id).is_some(), "{id}");
        }
        assert_eq!(reg.placeholders(SYSTEM_MURDERER).unwrap(), vec!["character_name", "character_name_list", "victims"]);
    }
}
