//! Versioned prompt templates and the placeholder renderer.
//!
//! Templates live as plain-text assets compiled into the binary; dynamic
//! content is injected through `{{ name }}` placeholders. Rendering is
//! strict: every placeholder in the template must be supplied and every
//! supplied value must be consumed, so a renamed placeholder fails loudly
//! instead of silently shipping a half-rendered prompt.

/// Summarizes one day of raw behavioral logs into intent memories.
/// Placeholder: `logs`.
pub const SUMMARIZE: &str = include_str!("../assets/prompts/summarize.txt");

/// Induces a persona set from a window of intent memories.
/// Placeholder: `memories`.
pub const INDUCE: &str = include_str!("../assets/prompts/induce.txt");

/// Labels a single memory cluster with exactly one persona.
/// Placeholder: `memories`.
pub const INDUCE_SINGLE: &str = include_str!("../assets/prompts/induce_single.txt");

/// Judges persona–evidence alignment. Placeholder: `input`.
pub const JUDGE_ALIGNMENT: &str = include_str!("../assets/prompts/judge_alignment.txt");

/// Judges persona truthfulness. Placeholder: `input`.
pub const JUDGE_TRUTHFULNESS: &str = include_str!("../assets/prompts/judge_truthfulness.txt");

/// Chooses between two candidate activities from a profile.
/// Placeholders: `profile`, `item_a`, `item_b`.
pub const REFLECT_CHOOSE: &str = include_str!("../assets/prompts/reflect_choose.txt");

/// Updates a profile after an incorrect choice.
/// Placeholders: `profile`, `item_a`, `item_b`, `response`.
pub const REFLECT_UPDATE: &str = include_str!("../assets/prompts/reflect_update.txt");

/// Rendering failure: a placeholder/value mismatch.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("template placeholder '{{{{ {name} }}}}' was not supplied a value")]
    MissingValue { name: String },
    #[error("supplied value '{name}' matches no template placeholder")]
    UnusedValue { name: String },
    #[error("unterminated placeholder starting at byte {at}")]
    Unterminated { at: usize },
}

/// Substitutes `{{ name }}` placeholders (inner whitespace optional) with
/// the paired values. Every placeholder must be supplied, every value used.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len());
    let mut used = vec![false; values.len()];
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(RenderError::Unterminated { at: offset + start });
        };
        let name = after[..end].trim();
        let Some(position) = values.iter().position(|(key, _)| *key == name) else {
            return Err(RenderError::MissingValue { name: name.to_string() });
        };
        out.push_str(values[position].1);
        used[position] = true;
        offset += start + 2 + end + 2;
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if let Some(unused) = used.iter().position(|u| !u) {
        return Err(RenderError::UnusedValue { name: values[unused].0.to_string() });
    }
    Ok(out)
}
