//! Field-marker prompt layout and completion parsing.

use std::collections::BTreeMap;

use thiserror::Error;

pub const REASONING: &str = "reasoning";
pub const COMPLETED: &str = "completed";

pub type FieldMap = BTreeMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("missing input fields: {}", .0.join(", "))]
    MissingInputs(Vec<String>),
    #[error("incomplete completion")]
    Incomplete,
    #[error("completion lacks output field `{0}`")]
    MissingOutput(String),
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub description: String,
}

impl Field {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
        }
    }
}

/// A chain-of-thought signature: a task description plus ordered input
/// and output fields. A `reasoning` output is always rendered first.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub task_description: String,
    pub inputs: Vec<Field>,
    pub outputs: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

pub fn marker(name: &str) -> String {
    format!("[[ ## {name} ## ]]")
}

fn field_list(fields: &[&Field], start: usize) -> String {
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.description.is_empty() {
                format!("{}. `{}` (str)", start + i, f.name)
            } else {
                format!("{}. `{}` (str): {}", start + i, f.name, f.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptTemplate {
    pub fn new(task_description: &str, inputs: Vec<Field>, outputs: Vec<Field>) -> Self {
        Self {
            task_description: task_description.to_string(),
            inputs,
            outputs,
        }
    }

    /// Checks that all field names (including `reasoning`) are distinct.
    pub fn validate(&self) -> Result<(), PromptError> {
        let mut seen = vec![REASONING];
        for f in self.inputs.iter().chain(&self.outputs) {
            if seen.contains(&f.name.as_str()) {
                return Err(PromptError::DuplicateField(f.name.clone()));
            }
            seen.push(&f.name);
        }
        Ok(())
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|f| f.name.as_str()).collect()
    }
}

/// Renders the system and user messages for `values`.
pub fn render_prompt(t: &PromptTemplate, values: &FieldMap) -> Result<RenderedPrompt, PromptError> {
    t.validate()?;
    let missing: Vec<String> = t
        .inputs
        .iter()
        .filter(|f| !values.contains_key(&f.name))
        .map(|f| f.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PromptError::MissingInputs(missing));
    }

    let inputs: Vec<&Field> = t.inputs.iter().collect();
    let reasoning = Field::new(REASONING, "");
    let outputs: Vec<&Field> = t.outputs.iter().collect();

    let mut system = String::new();
    system.push_str("Your input fields are:\n");
    system.push_str(&field_list(&inputs, 1));
    system.push_str("\n\nYour output fields are:\n");
    system.push_str(&field_list(&[&reasoning], 1));
    if !outputs.is_empty() {
        system.push('\n');
        system.push_str(&field_list(&outputs, 2));
    }
    system.push_str(
        "\n\nAll interactions will be structured in the following way, with the appropriate values filled in.\n\n",
    );
    for f in &inputs {
        system.push_str(&format!("{}\n{{{}}}\n\n", marker(&f.name), f.name));
    }
    system.push('\n');
    system.push_str(&marker(COMPLETED));
    system.push_str("\n\nIn adhering to this structure, your objective is: \n");
    system.push_str(&t.task_description);

    let mut user = String::new();
    for f in &inputs {
        user.push_str(&format!("{}\n{}\n\n", marker(&f.name), values[&f.name]));
    }
    user.push_str(&format!(
        "Respond with the corresponding output fields, starting with the field `{}`",
        marker(REASONING)
    ));
    for f in &outputs {
        user.push_str(&format!(", then `{}`", marker(&f.name)));
    }
    user.push_str(&format!(
        ", and then ending with the marker for `{}`.",
        marker(COMPLETED)
    ));
    Ok(RenderedPrompt { system, user })
}

/// Locates every `[[ ## name ## ]]` marker as `(name, start, end)`.
fn find_markers(text: &str) -> Vec<(&str, usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("[[ ## ") {
        let start = pos + rel;
        let name_start = start + "[[ ## ".len();
        let Some(close) = text[name_start..].find(" ## ]]") else {
            break;
        };
        let name = &text[name_start..name_start + close];
        let end = name_start + close + " ## ]]".len();
        if name.contains('\n') || name.contains("[[") {
            pos = name_start;
            continue;
        }
        out.push((name, start, end));
        pos = end;
    }
    out
}

/// Extracts the text following each field marker up to the next marker.
/// The completed marker is required; every name in `expected` must be
/// present. Later duplicates of a field are ignored.
pub fn parse_fields(text: &str, expected: &[&str]) -> Result<FieldMap, PromptError> {
    let markers = find_markers(text);
    if !markers.iter().any(|(n, _, _)| *n == COMPLETED) {
        return Err(PromptError::Incomplete);
    }
    let mut fields = FieldMap::new();
    for (i, (name, _, end)) in markers.iter().enumerate() {
        if *name == COMPLETED {
            continue;
        }
        let stop = markers.get(i + 1).map(|m| m.1).unwrap_or(text.len());
        fields
            .entry(name.to_string())
            .or_insert_with(|| text[*end..stop].trim().to_string());
    }
    for name in expected {
        if !fields.contains_key(*name) {
            return Err(PromptError::MissingOutput(name.to_string()));
        }
    }
    Ok(fields)
}

/// A well-formed completion carrying `values`, in the given order.
pub fn format_completion(values: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (name, value) in values {
        out.push_str(&format!("{}\n{}\n\n", marker(name), value));
    }
    out.push_str(&marker(COMPLETED));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> PromptTemplate {
        PromptTemplate::new(
            "Summarize.",
            vec![Field::new("alpha", "First."), Field::new("beta", "Second.")],
            vec![Field::new("summary", "The summary.")],
        )
    }

    fn values() -> FieldMap {
        [("alpha", "one"), ("beta", "two")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn exact_layout() {
        let p = render_prompt(&template(), &values()).unwrap();
        let system = "Your input fields are:\n\
1. `alpha` (str): First.\n\
2. `beta` (str): Second.\n\
\n\
Your output fields are:\n\
1. `reasoning` (str)\n\
2. `summary` (str): The summary.\n\
\n\
All interactions will be structured in the following way, with the appropriate values filled in.\n\
\n\
[[ ## alpha ## ]]\n\
{alpha}\n\
\n\
[[ ## beta ## ]]\n\
{beta}\n\
\n\
\n\
[[ ## completed ## ]]\n\
\n\
In adhering to this structure, your objective is: \n\
Summarize.";
        assert_eq!(p.system, system);
        let user = "[[ ## alpha ## ]]\none\n\n[[ ## beta ## ]]\ntwo\n\n\
Respond with the corresponding output fields, starting with the field `[[ ## reasoning ## ]]`, then `[[ ## summary ## ]]`, and then ending with the marker for `[[ ## completed ## ]]`.";
        assert_eq!(p.user, user);
        assert_eq!(p.system.matches("[[ ## completed ## ]]").count(), 1);
    }

    #[test]
    fn missing_inputs_listed() {
        let err = render_prompt(&template(), &FieldMap::new()).unwrap_err();
        assert_eq!(
            err,
            PromptError::MissingInputs(vec!["alpha".into(), "beta".into()])
        );
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = PromptTemplate::new("x", vec![Field::new("reasoning", "")], vec![]);
        assert!(matches!(t.validate(), Err(PromptError::DuplicateField(_))));
    }

    #[test]
    fn parse_round_trip_and_order() {
        let text = format_completion(&[("summary", "all good  "), ("reasoning", "because")]);
        let f = parse_fields(&text, &["summary"]).unwrap();
        assert_eq!(f["summary"], "all good");
        assert_eq!(f["reasoning"], "because");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_fields("[[ ## summary ## ]]\ntrunc", &["summary"]),
            Err(PromptError::Incomplete)
        );
        assert_eq!(
            parse_fields("[[ ## reasoning ## ]]\nx\n[[ ## completed ## ]]", &["summary"]),
            Err(PromptError::MissingOutput("summary".into()))
        );
    }
}
