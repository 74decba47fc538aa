//! Lowercasing word tokenizer: splits on whitespace and punctuation
//! boundaries, dropping the punctuation itself. Digits count as word
//! characters, so "50" survives as a token.

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn headline_splits_and_drops_punctuation() {
        assert_eq!(
            tokenize("50 Worst Habits For Belly Fat..."),
            vec!["50", "worst", "habits", "for", "belly", "fat"]
        );
    }

    #[test]
    fn empty_input_yields_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn apostrophes_split_words() {
        assert_eq!(tokenize("Ford's Australia"), vec!["ford", "s", "australia"]);
    }
}
