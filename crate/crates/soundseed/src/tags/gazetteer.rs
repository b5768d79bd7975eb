//! Phrase-to-tag dictionary backing the deterministic caption converter.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use super::canonicalize_tag;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagCategory {
    Instrument,
    Genre,
    Mood,
    Tempo,
    Other,
}

impl TagCategory {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "instrument" => Some(Self::Instrument),
            "genre" => Some(Self::Genre),
            "mood" => Some(Self::Mood),
            "tempo" => Some(Self::Tempo),
            "other" => Some(Self::Other),
        _ => None,
        }
    }
}

/// Maps lower-case surface phrases to canonical tags. Multi-word phrases are
/// matched greedily before their sub-words by the caption converter.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, String>,
    categories: HashMap<String, TagCategory>,
    max_phrase_words: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts one phrase -> canonical mapping. The phrase is normalized to
    /// lower-case single-space word form.
    pub fn insert(&mut self, phrase: &str, canonical: &str, category: TagCategory) {
        let words: Vec<String> = phrase
            .to_lowercase()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if words.is_empty() {
            return;
        }
        self.max_phrase_words = self.max_phrase_words.max(words.len());
        let tag = canonicalize_tag(canonical);
        self.categories.insert(tag.clone(), category);
        self.entries.insert(words.join(" "), tag);
    }

    pub fn lookup(&self, phrase: &str) -> Option<&String> {
        self.entries.get(phrase)
    }

    pub fn category(&self, canonical: &str) -> Option<TagCategory> {
        self.categories.get(canonical).copied()
    }

    pub fn max_phrase_words(&self) -> usize {
        self.max_phrase_words
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Parses the TSV format: `phrase<TAB>canonical tag<TAB>category`, one
    /// entry per line, UTF-8. Blank lines and lines starting with `#` are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, GazetteerError> {
        let mut gaz = Self::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(GazetteerError::Parse {
                    line: lineno,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let phrase = fields[0].trim();
            let canonical = fields[1].trim();
            if phrase.is_empty() || canonical.is_empty() {
                return Err(GazetteerError::Parse {
                    line: lineno,
                    reason: "empty phrase or canonical tag".into(),
                });
            }
            let category = TagCategory::parse(fields[2]).ok_or_else(|| GazetteerError::Parse {
                line: lineno,
                reason: format!("unknown category {:?}", fields[2].trim()),
            })?;
            gaz.insert(phrase, canonical, category);
        }
        Ok(gaz)
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let gaz = Gazetteer::parse("piano\tPiano\tinstrument\nelectric guitar\tElectric Guitar\tinstrument\n").unwrap();
        assert_eq!(gaz.len(), 2);
        assert_eq!(gaz.lookup("piano").unwrap(), "Piano");
        assert_eq!(gaz.lookup("electric guitar").unwrap(), "Electric Guitar");
        assert_eq!(gaz.max_phrase_words(), 2);
        assert_eq!(gaz.category("Piano"), Some(TagCategory::Instrument));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = Gazetteer::parse("piano\tPiano\tinstrument\nbroken line\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn rejects_unknown_category() {
        let err = Gazetteer::parse("piano\tPiano\tcolor\n").unwrap_err();
        assert!(err.to_string().contains("unknown category"), "{err}");
    }

    #[test]
    fn skips_comments_and_blanks() {
        let gaz = Gazetteer::parse("# instruments\n\npiano\tPiano\tinstrument\n").unwrap();
        assert_eq!(gaz.len(), 1);
    }
}
