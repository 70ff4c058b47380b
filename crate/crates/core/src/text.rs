//! Text tokenization shared by the caption vocabulary and the metrics.
//!
//! Text is lowercased, then split on whitespace. Runs of alphanumeric
//! characters form words; every other non-space character becomes a
//! single-character token, so `"speaker's pitch."` yields
//! `["speaker", "'", "s", "pitch", "."]`.

/// Identifier recorded next to every token sequence produced by [`tokenize`].
pub const TOKENIZER_ID: &str = "lower-wordpunct-v1";

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Joins tokens back into display text, attaching punctuation to the
/// preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let is_punct = tok.chars().count() == 1 && !tok.chars().all(char::is_alphanumeric);
        if !out.is_empty() && !(is_punct && tok != "(") {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            tokenize("The Speaker's pitch is LOW."),
            vec!["the", "speaker", "'", "s", "pitch", "is", "low", "."]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn detokenize_attaches_punctuation() {
        let toks = tokenize("slow, quiet and low.");
        assert_eq!(detokenize(&toks), "slow, quiet and low.");
    }
}
