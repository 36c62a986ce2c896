//! The shared word tokenizer used by corpus statistics, diversity metrics,
//! the overlap analyzer and the mock embedder.

use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

fn edge_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{P}+|\p{P}+$").expect("static regex"))
}

/// NFC-normalize, lowercase, split on Unicode whitespace, strip leading and
/// trailing punctuation from each token and drop tokens left empty.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split_whitespace()
        .filter_map(|raw| {
            let stripped = edge_punct().replace_all(raw, "");
            if stripped.is_empty() {
                None
            } else {
                Some(stripped.into_owned())
            }
        })
        .collect()
}
