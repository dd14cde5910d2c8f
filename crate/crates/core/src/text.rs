//! Text utilities shared by the embedder, the composer, chunking and verification.

use sha2::{Digest, Sha256};

/// Lowercased alphanumeric tokens. Anything that is not alphanumeric separates tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Function words ignored by the mock embedder and by question/sentence overlap scoring.
const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more",
    "most", "my", "nor", "of", "off", "on", "once", "or", "other", "our", "ours", "out", "over",
    "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs",
    "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
    "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// [`tokens`] without function words.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Trim, collapse internal whitespace and lowercase. Used for entity aliases and cache keys.
pub fn normalize_name(name: &str) -> String {
    normalize_whitespace(name).to_lowercase()
}

/// Splits on `.`, `!` or `?` when followed by whitespace or end of input.
/// The delimiter stays with its sentence; abbreviations get no special treatment.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match iter.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                let piece = text[start..end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Lowercase hex SHA-256 of the parts joined by a unit separator, truncated to `len` chars.
pub fn digest_hex(parts: &[&str], len: usize) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest.iter() {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex.truncate(len);
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_fold_case_and_punctuation() {
        assert_eq!(
            tokens("ASPIRIN, reduces-headache!"),
            vec!["aspirin", "reduces", "headache"]
        );
        assert!(tokens("  ,;  ").is_empty());
    }

    #[test]
    fn sentences_keep_delimiters() {
        let s = split_sentences("One. Two! Three? e.g. four.5 stays");
        assert_eq!(s, vec!["One.", "Two!", "Three?", "e.g.", "four.5 stays"]);
        assert_eq!(split_sentences("Really?! Yes."), vec!["Really?!", "Yes."]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest_hex(&["a", "b"], 12), digest_hex(&["a", "b"], 12));
        assert_ne!(digest_hex(&["ab"], 12), digest_hex(&["a", "b"], 12));
        assert_eq!(digest_hex(&["x"], 12).len(), 12);
    }
}
