//! Tag curation: canonical tag sets, the gazetteer-based caption-to-tag
//! pipeline, misleading-tag cleaning, tag-count normalization, and the
//! corpus metadata store.

pub mod gazetteer;
pub mod metadata;
pub mod pipeline;

pub use gazetteer::{Gazetteer, TagCategory};
pub use metadata::{read_metadata, write_metadata, TrackMetadata};
pub use pipeline::{caption_to_tags, clean_tags, default_stoplist, parse_stoplist, sample_tags};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Hard cap on tags per set; inserts beyond it are ignored.
pub const MAX_TAGS: usize = 64;

/// Ordered, deduplicated list of canonical tags (Title Case, single spaces).
/// Deduplication is case-insensitive; order is first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
}

/// Canonical form: single-space separated words, each word capitalized
/// (hyphenated parts individually), with the tempo unit kept as "BPM".
pub fn canonicalize_tag(raw: &str) -> String {
    let words: Vec<String> = raw
        .split_whitespace()
        .map(|w| {
            if w.eq_ignore_ascii_case("bpm") {
                "BPM".to_string()
            } else {
                w.split('-')
                    .map(capitalize)
                    .collect::<Vec<_>>()
                    .join("-")
            }
        })
        .collect();
    words.join(" ")
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => {
            first.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase()
        }
        None => String::new(),
    }
}

impl TagSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_raw<I, S>(iter: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for raw in iter {
            set.push_raw(raw.as_ref());
        }
        set
    }

    /// Canonicalizes and appends; returns false when the tag is empty, a
    /// case-insensitive duplicate, or the set is full.
    pub fn push_raw(&mut self, raw: &str) -> bool {
        let tag = canonicalize_tag(raw);
        if tag.is_empty() || self.tags.len() >= MAX_TAGS || self.contains_ci(&tag) {
            return false;
        }
        self.tags.push(tag);
        true
    }

    pub fn contains_ci(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tags.iter()
    }

    /// Union with `other`, with `other`'s new tags appended after self's.
    pub fn union(&self, other: &TagSet) -> TagSet {
        let mut out = self.clone();
        for t in other.iter() {
            out.push_raw(t);
        }
        out
    }

    /// Parses a comma-separated tag list (the CLI flag format).
    pub fn from_comma_list(s: &str) -> Self {
        Self::from_raw(s.split(',').map(str::trim).filter(|t| !t.is_empty()))
    }
}

impl std::fmt::Display for TagSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tags.join(", "))
    }
}

impl Serialize for TagSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tags.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TagSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: Vec<String> = Vec::deserialize(deserializer)?;
        Ok(TagSet::from_raw(raw))
    }
}
