use std::collections::HashMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::CatalogError;

const VARIATION_SELECTOR: char = '\u{FE0F}';
const BUILTIN: &str = include_str!("../../data/emoji.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    #[default]
    Neutral,
    Negative,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Neutral => "neutral",
            Sentiment::Negative => "negative",
        }
    }
}

/// Code point to polarity map, loaded from a versioned data file.
#[derive(Debug, Clone)]
pub struct EmojiLexicon {
    pub version: u32,
    polarity: HashMap<char, i8>,
}

#[derive(Deserialize)]
struct LexiconFile {
    version: u32,
    polarity: HashMap<String, i8>,
}

static DEFAULT_LEXICON: LazyLock<EmojiLexicon> =
    LazyLock::new(|| EmojiLexicon::from_toml(BUILTIN).expect("shipped emoji lexicon parses"));

impl EmojiLexicon {
    pub fn builtin() -> &'static EmojiLexicon {
        &DEFAULT_LEXICON
    }

    pub fn from_toml(src: &str) -> Result<Self, CatalogError> {
        let file: LexiconFile = toml::from_str(src).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let mut polarity = HashMap::with_capacity(file.polarity.len());
        for (key, value) in file.polarity {
            let mut chars = key.chars().filter(|c| *c != VARIATION_SELECTOR);
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(CatalogError::Invalid(format!("emoji key {key:?} is not a single code point")));
            };
            if !(-1..=1).contains(&value) {
                return Err(CatalogError::Invalid(format!("emoji {key:?} has polarity {value}, expected -1, 0 or 1")));
            }
            polarity.insert(c, value);
        }
        Ok(Self {
            version: file.version,
            polarity,
        })
    }

    /// Number of lexicon emojis present in `text`.
    pub fn count(&self, text: &str) -> usize {
        text.chars().filter(|c| self.polarity.contains_key(c)).count()
    }

    /// Sums polarities of every lexicon emoji in `text`; the sign decides.
    pub fn sentiment(&self, text: &str) -> Sentiment {
        let total: i64 = text
            .chars()
            .filter_map(|c| self.polarity.get(&c))
            .map(|p| i64::from(*p))
            .sum();
        match total.signum() {
            1 => Sentiment::Positive,
            -1 => Sentiment::Negative,
            _ => Sentiment::Neutral,
        }
    }
}

pub fn emoji_sentiment(text: &str) -> Sentiment {
    EmojiLexicon::builtin().sentiment(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_emoji_is_neutral() {
        assert_eq!(emoji_sentiment("thanks"), Sentiment::Neutral);
    }

    #[test]
    fn single_emojis() {
        assert_eq!(emoji_sentiment("great 😊"), Sentiment::Positive);
        assert_eq!(emoji_sentiment("😠"), Sentiment::Negative);
        assert_eq!(emoji_sentiment("❤️"), Sentiment::Positive);
    }

    #[test]
    fn opposite_emojis_cancel() {
        assert_eq!(emoji_sentiment("😊 but 😠"), Sentiment::Neutral);
        assert_eq!(emoji_sentiment("😊😊😠"), Sentiment::Positive);
    }

    #[test]
    fn shipped_lexicon_entries_match_their_file_polarity() {
        let file: LexiconFile = toml::from_str(BUILTIN).unwrap();
        for (key, polarity) in file.polarity {
            let expected = match polarity {
                1 => Sentiment::Positive,
                -1 => Sentiment::Negative,
                _ => Sentiment::Neutral,
            };
            assert_eq!(emoji_sentiment(&key), expected, "{key}");
        }
    }

    #[test]
    fn bad_lexicon_rejected() {
        assert!(EmojiLexicon::from_toml("version = 1\n[polarity]\n\"ab\" = 1\n").is_err());
        assert!(EmojiLexicon::from_toml("version = 1\n[polarity]\n\"😀\" = 5\n").is_err());
    }
}
