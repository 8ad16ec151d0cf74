use crate::encoder::{END_TOKEN, START_TOKEN};
use crate::error::{Error, Result};

/// Fixed vocabulary. Ids 0 and 1 are the sentence markers.
pub const WORDS: &[&str] = &[
    "<s>", "</s>", "the", "to", "left", "right", "of", "above", "below", "leftmost", "rightmost",
    "topmost", "bottommost", "object", "square", "circle", "triangle", "red", "green", "blue",
    "yellow", "purple", "orange", "cyan", "white",
];

pub fn vocab_size() -> usize {
    WORDS.len()
}

pub fn word_id(word: &str) -> Result<usize> {
    WORDS
        .iter()
        .position(|w| *w == word)
        .filter(|&i| i != START_TOKEN && i != END_TOKEN)
        .ok_or_else(|| Error::Input(format!("`{word}` is not in the vocabulary")))
}

pub fn encode(text: &str) -> Result<Vec<usize>> {
    text.split_whitespace().map(word_id).collect()
}

pub fn decode(ids: &[usize]) -> Result<String> {
    let words = ids
        .iter()
        .map(|&i| {
            WORDS
                .get(i)
                .copied()
                .ok_or_else(|| Error::Input(format!("token id {i} is out of vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_markers() {
        let ids = encode("the red square").unwrap();
        assert_eq!(decode(&ids).unwrap(), "the red square");
        assert!(encode("the mauve square").is_err());
        assert!(word_id("<s>").is_err());
        assert_eq!(WORDS[START_TOKEN], "<s>");
        assert_eq!(WORDS[END_TOKEN], "</s>");
    }
}
