//! Word and sentence counting used for corpus statistics.

/// Whitespace-delimited token count of the trimmed text.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits text into sentences.
///
/// A sentence ends at `.`, `!` or `?` when the terminator is followed by
/// whitespace or the end of the text. Abbreviations get no special treatment,
/// so "Dr. Smith" counts as a boundary. Runs of terminators ("?!", "...")
/// stay attached to the sentence they close. Empty segments are dropped.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((idx, ch)) = chars.next() {
        if !matches!(ch, '.' | '!' | '?') {
            continue;
        }
        let end = idx + ch.len_utf8();
        let boundary = match chars.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if boundary {
            push_segment(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_segment(&mut out, &text[start..]);
    out
}

fn push_segment<'a>(out: &mut Vec<&'a str>, segment: &'a str) {
    let trimmed = segment.trim();
    if trimmed.chars().any(|c| c.is_alphanumeric()) {
        out.push(trimmed);
    }
}

pub fn sentence_count(text: &str) -> usize {
    sentences(text).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_countable_article() {
        assert_eq!(word_count("A b. C d e."), 5);
        assert_eq!(sentence_count("A b. C d e."), 2);
    }

    #[test]
    fn trailing_text_without_terminator_is_a_sentence() {
        assert_eq!(sentences("One. two three"), vec!["One.", "two three"]);
    }

    #[test]
    fn terminator_inside_token_is_not_a_boundary() {
        // "3.5" and "U.S." (before the final dot) do not split.
        assert_eq!(sentence_count("Rates rose 3.5 percent in the U.S. today."), 2);
        assert_eq!(sentence_count("Version 3.5 shipped"), 1);
    }

    #[test]
    fn runs_of_terminators() {
        assert_eq!(sentences("Wait... what?! Yes."), vec!["Wait...", "what?!", "Yes."]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert_eq!(word_count("   "), 0);
        assert_eq!(sentence_count(""), 0);
        assert_eq!(sentence_count(" . ! "), 0);
    }
}
