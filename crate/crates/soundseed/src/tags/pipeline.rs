//! Caption-to-tag conversion, misleading-tag cleaning, and tag-count
//! normalization.

use std::collections::HashSet;
use std::path::Path;

use super::gazetteer::Gazetteer;
use super::TagSet;
use crate::rng::SeededRng;

/// Misleading tags removed by default during cleaning.
pub fn default_stoplist() -> HashSet<String> {
    [
        "low quality",
        "poor quality",
        "noisy",
        "bad recording",
        "amateur recording",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Stoplist file: one lower-case phrase per line; blanks and `#` comments
/// skipped.
pub fn parse_stoplist(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

pub fn load_stoplist(path: &Path) -> std::io::Result<HashSet<String>> {
    Ok(parse_stoplist(&std::fs::read_to_string(path)?))
}

/// Lower-cases and splits a caption into alphanumeric tokens. Hyphens and
/// punctuation act as separators, so "click-track" matches the two-word
/// phrase "click track".
fn tokenize(caption: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in caption.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if ch == '#' {
            // Keep sharps so note names like "C#4" survive tokenization.
            cur.push('#');
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Parses a token or token pair as a tempo mention: `<integer> bpm`
/// (case-insensitive, optional space). Returns the integer.
fn bpm_at(tokens: &[String], pos: usize) -> Option<(u32, usize)> {
    let tok = &tokens[pos];
    if let Some(rest) = tok.strip_suffix("bpm") {
        if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
            if let Ok(n) = rest.parse::<u32>() {
                return Some((n, 1));
            }
        }
    }
    if pos + 1 < tokens.len()
        && tokens[pos + 1] == "bpm"
        && !tok.is_empty()
        && tok.chars().all(|c| c.is_ascii_digit())
    {
        if let Ok(n) = tok.parse::<u32>() {
            return Some((n, 2));
        }
    }
    None
}

/// Converts free text into tags by greedy longest-match over the gazetteer,
/// plus the tempo pattern `<n> bpm` -> "<n> BPM". Output order is first
/// occurrence; duplicates collapse.
pub fn caption_to_tags(caption: &str, gazetteer: &Gazetteer) -> TagSet {
    let tokens = tokenize(caption);
    let mut out = TagSet::new();
    let max_words = gazetteer.max_phrase_words().max(1);
    let mut pos = 0;
    while pos < tokens.len() {
        let mut matched = 0;
        let upper = max_words.min(tokens.len() - pos);
        for width in (1..=upper).rev() {
            let phrase = tokens[pos..pos + width].join(" ");
            if let Some(canonical) = gazetteer.lookup(&phrase) {
                out.push_raw(canonical);
                matched = width;
                break;
            }
        }
        if matched == 0 {
            if let Some((n, consumed)) = bpm_at(&tokens, pos) {
                out.push_raw(&format!("{n} BPM"));
                matched = consumed;
            }
        }
        pos += matched.max(1);
    }
    out
}

/// Removes tags whose lower-cased form appears in the stoplist, preserving
/// the order of survivors.
pub fn clean_tags(tags: &TagSet, stoplist: &HashSet<String>) -> TagSet {
    TagSet::from_raw(
        tags.iter()
            .filter(|t| !stoplist.contains(&t.to_lowercase()))
            .map(String::as_str),
    )
}

/// Keeps at most `max_n` tags: a uniformly random subset in original relative
/// order when over the cap, the input unchanged otherwise.
pub fn sample_tags(tags: &TagSet, max_n: usize, rng: &mut SeededRng) -> TagSet {
    assert!(max_n >= 1, "max_n must be at least 1");
    if tags.len() <= max_n {
        return tags.clone();
    }
    let mut picked = rng.choose_indices(tags.len(), max_n);
    picked.sort_unstable();
    TagSet::from_raw(picked.iter().map(|&i| tags.tags()[i].as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_gazetteer() -> Gazetteer {
        let mut g = Gazetteer::new();
        for (p, c) in [
            ("upbeat", "Upbeat"),
            ("electronic", "Electronic"),
            ("synthesizer", "Synthesizer"),
            ("piano", "Piano"),
            ("jazz", "Jazz"),
            ("electric guitar", "Electric Guitar"),
            ("guitar", "Guitar"),
        ] {
            g.insert(p, c, super::super::TagCategory::Other);
        }
        g
    }

    #[test]
    fn caption_example_with_tempo() {
        let tags = caption_to_tags(
            "This upbeat electronic track features a synthesizer melody at 120 bpm",
            &test_gazetteer(),
        );
        assert_eq!(tags.tags(), &["Upbeat", "Electronic", "Synthesizer", "120 BPM"]);
    }

    #[test]
    fn empty_caption_empty_tags() {
        assert!(caption_to_tags("", &test_gazetteer()).is_empty());
    }

    #[test]
    fn dedup_idempotence() {
        let tags = caption_to_tags("piano piano PIANO", &test_gazetteer());
        assert_eq!(tags.tags(), &["Piano"]);
    }

    #[test]
    fn longest_match_wins_over_subword() {
        let tags = caption_to_tags("an electric guitar riff", &test_gazetteer());
        assert_eq!(tags.tags(), &["Electric Guitar"]);
    }

    #[test]
    fn bpm_without_space() {
        let tags = caption_to_tags("a fast 140bpm groove", &test_gazetteer());
        assert_eq!(tags.tags(), &["140 BPM"]);
    }

    #[test]
    fn retokenizing_emitted_tags_is_stable() {
        let gaz = test_gazetteer();
        let tags = caption_to_tags("upbeat jazz piano at 90 bpm", &gaz);
        let again = caption_to_tags(&tags.tags().join(" "), &gaz);
        assert_eq!(tags, again);
    }

    #[test]
    fn clean_removes_stoplisted_case_insensitively() {
        let stop = default_stoplist();
        let tags = TagSet::from_raw(["Jazz", "Low Quality"]);
        assert_eq!(clean_tags(&tags, &stop).tags(), &["Jazz"]);
        let lower = TagSet::from_raw(["low quality"]);
        assert!(clean_tags(&lower, &stop).is_empty());
        let untouched = TagSet::from_raw(["Rock", "Guitar"]);
        assert_eq!(clean_tags(&untouched, &stop).tags(), &["Rock", "Guitar"]);
    }

    #[test]
    fn clean_is_idempotent() {
        let stop = default_stoplist();
        let tags = TagSet::from_raw(["Jazz", "Noisy", "Calm"]);
        let once = clean_tags(&tags, &stop);
        let twice = clean_tags(&once, &stop);
        assert_eq!(once, twice);
    }

    #[test]
    fn sample_respects_cap_and_order() {
        let tags = TagSet::from_raw((0..12).map(|i| format!("Tag{i}")).collect::<Vec<_>>());
        let mut rng = SeededRng::from_seed(5);
        let sampled = sample_tags(&tags, 8, &mut rng);
        assert_eq!(sampled.len(), 8);
        // Original relative order: positions of sampled tags are increasing.
        let positions: Vec<usize> = sampled
            .iter()
            .map(|t| tags.iter().position(|u| u == t).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sample_under_cap_is_identity() {
        let tags = TagSet::from_raw(["A", "B", "C", "D", "E"]);
        let mut rng = SeededRng::from_seed(1);
        assert_eq!(sample_tags(&tags, 8, &mut rng), tags);
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let tags = TagSet::from_raw((0..20).map(|i| format!("T{i}")).collect::<Vec<_>>());
        let a = sample_tags(&tags, 8, &mut SeededRng::from_seed(9));
        let b = sample_tags(&tags, 8, &mut SeededRng::from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequency_is_uniform() {
        // 10 tags, cap 8: each tag should appear with frequency 0.8.
        let tags = TagSet::from_raw((0..10).map(|i| format!("T{i}")).collect::<Vec<_>>());
        let mut rng = SeededRng::from_seed(0);
        let mut counts = vec![0u32; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let s = sample_tags(&tags, 8, &mut rng);
            for t in s.iter() {
                let idx: usize = t[1..].parse().unwrap();
                counts[idx] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.8).abs() < 0.03,
                "tag {i} frequency {freq} off binomial bound"
            );
        }
    }
}
