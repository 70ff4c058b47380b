use crate::{Error, Result};

pub const PLACEHOLDER: &str = "[subject to be rephrased]";

/// The rephrasing instruction. The sentence replaces the placeholder as-is,
/// so its own final punctuation ends the prompt.
pub const PROMPT_TEMPLATE: &str = "Rewrite the following sentence that describes someone's style of speaking in a different way, keeping the meaning of the original description. Original Description: [subject to be rephrased]";

pub fn build_prompt(original: &str) -> Result<String> {
    let original = original.trim();
    if original.is_empty() {
        return Err(Error::Precondition("cannot rephrase an empty caption".into()));
    }
    Ok(PROMPT_TEMPLATE.replace(PLACEHOLDER, original))
}
