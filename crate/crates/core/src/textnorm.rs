//! Tweet text normalization and offset-tracked tokenization.
//!
//! Normalization applies, in order: emoji replacement, username masking,
//! hashtag splitting and whitespace collapsing. Every rule is written against
//! a small [`Rewriter`] that records where each source codepoint boundary
//! lands in the output, so character spans annotated on raw text can be
//! carried through normalization (see [`normalize_aligned`]).
//!
//! All offsets in this module are Unicode scalar (codepoint) offsets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_MAP: &str = include_str!("../data/emoji_default.tsv");

/// Literal every `@name` mention is replaced with.
pub const USER_PLACEHOLDER: &str = "@user";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmojiMapError {
    #[error("line {line}: expected `<emoji>\\t<description>`")]
    MissingTab { line: usize },
    #[error("line {line}: empty emoji key")]
    EmptyKey { line: usize },
    #[error("line {line}: key {key:?} contains no emoji codepoint")]
    NoEmojiInKey { line: usize, key: String },
    #[error("line {line}: description for {key:?} is empty")]
    EmptyDescription { line: usize, key: String },
    #[error("line {line}: description for {key:?} contains emoji or control characters")]
    BadDescription { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
}

/// Pictographic codepoints that can start an emoji sequence.
pub fn is_emoji_codepoint(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B05..=0x2B55
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

/// Codepoints that only modify or join a preceding emoji: ZWJ, variation
/// selectors, the combining keycap and tag characters.
pub fn is_emoji_component(c: char) -> bool {
    matches!(
        c as u32,
        0x200D | 0xFE0E | 0xFE0F | 0x20E3 | 0xE0020..=0xE007F
    )
}

/// Unicode alphanumeric or underscore.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Emoji sequence to description lookup with longest-match semantics.
///
/// Keys must contain at least one pictographic codepoint and descriptions
/// must contain none, which makes [`replace_emojis`] idempotent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmojiMap {
    entries: BTreeMap<String, String>,
    // first char -> (key chars, description), longest key first
    by_first: HashMap<char, Vec<(Vec<char>, String)>>,
}

impl EmojiMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// The map shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse_tsv(BUNDLED_MAP).expect("bundled emoji map is well-formed")
    }

    /// Parses `<emoji sequence>\t<description>` lines. Blank lines and lines
    /// starting with `#` are skipped. Descriptions are trimmed and lowercased.
    pub fn parse_tsv(src: &str) -> Result<Self, EmojiMapError> {
        let mut map = Self::new();
        for (idx, raw) in src.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let (key, desc) = raw
                .split_once('\t')
                .ok_or(EmojiMapError::MissingTab { line })?;
            map.insert_at(key, desc, line)?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, key: &str, description: &str) -> Result<(), EmojiMapError> {
        self.insert_at(key, description, 0)
    }

    fn insert_at(
        &mut self,
        key: &str,
        description: &str,
        line: usize,
    ) -> Result<(), EmojiMapError> {
        if key.is_empty() {
            return Err(EmojiMapError::EmptyKey { line });
        }
        if !key.chars().any(is_emoji_codepoint) {
            return Err(EmojiMapError::NoEmojiInKey {
                line,
                key: key.to_string(),
            });
        }
        let desc = description.trim().to_lowercase();
        if desc.is_empty() {
            return Err(EmojiMapError::EmptyDescription {
                line,
                key: key.to_string(),
            });
        }
        if desc
            .chars()
            .any(|c| is_emoji_codepoint(c) || is_emoji_component(c) || c.is_control())
        {
            return Err(EmojiMapError::BadDescription {
                line,
                key: key.to_string(),
            });
        }
        if self.entries.contains_key(key) {
            return Err(EmojiMapError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        let chars: Vec<char> = key.chars().collect();
        let bucket = self.by_first.entry(chars[0]).or_default();
        bucket.push((chars, desc.clone()));
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        self.entries.insert(key.to_string(), desc);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Longest key matching `chars[at..]`, as (key length in chars, description).
    fn longest_match(&self, chars: &[char], at: usize) -> Option<(usize, &str)> {
        let bucket = self.by_first.get(&chars[at])?;
        let rest = &chars[at..];
        bucket
            .iter()
            .find(|(key, _)| rest.starts_with(key))
            .map(|(key, desc)| (key.len(), desc.as_str()))
    }
}

/// Maps codepoint boundaries of a source text to boundaries of a rewritten
/// text. A span `[s, e)` of the source corresponds to
/// `[start_of(s), end_of(e))` of the output. Boundaries that fall inside a
/// rewritten segment snap outward to that segment's output range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    start_map: Vec<usize>,
    end_map: Vec<usize>,
}

impl Alignment {
    pub fn identity(len: usize) -> Self {
        let v: Vec<usize> = (0..=len).collect();
        Self {
            start_map: v.clone(),
            end_map: v,
        }
    }

    /// Number of codepoints in the source text.
    pub fn source_len(&self) -> usize {
        self.start_map.len() - 1
    }

    pub fn start_of(&self, source_offset: usize) -> Option<usize> {
        self.start_map.get(source_offset).copied()
    }

    pub fn end_of(&self, source_offset: usize) -> Option<usize> {
        self.end_map.get(source_offset).copied()
    }

    /// Maps a source span, or `None` when it is out of range or becomes empty.
    pub fn map_span(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        if start >= end {
            return None;
        }
        let (s, e) = (self.start_of(start)?, self.end_of(end)?);
        (s < e).then_some((s, e))
    }

    /// Alignment of applying `self` and then `next`.
    pub fn then(&self, next: &Alignment) -> Alignment {
        Alignment {
            start_map: self.start_map.iter().map(|&p| next.start_map[p]).collect(),
            end_map: self.end_map.iter().map(|&p| next.end_map[p]).collect(),
        }
    }
}

/// Output of [`normalize_aligned`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub alignment: Alignment,
}

struct Rewriter {
    out: String,
    out_len: usize,
    start_map: Vec<usize>,
    end_map: Vec<usize>,
}

impl Rewriter {
    fn with_capacity(n: usize) -> Self {
        let mut end_map = Vec::with_capacity(n + 1);
        end_map.push(0);
        Self {
            out: String::with_capacity(n),
            out_len: 0,
            start_map: Vec::with_capacity(n + 1),
            end_map,
        }
    }

    fn keep(&mut self, c: char) {
        self.start_map.push(self.out_len);
        self.out.push(c);
        self.out_len += 1;
        self.end_map.push(self.out_len);
    }

    /// Replaces the next `consumed` source chars with `replacement`.
    fn replace(&mut self, consumed: usize, replacement: &str) {
        let start = self.out_len;
        self.out.push_str(replacement);
        self.out_len += replacement.chars().count();
        for _ in 0..consumed {
            self.start_map.push(start);
            self.end_map.push(self.out_len);
        }
    }

    fn finish(mut self) -> (String, Alignment) {
        self.start_map.push(self.out_len);
        (
            self.out,
            Alignment {
                start_map: self.start_map,
                end_map: self.end_map,
            },
        )
    }
}

fn emojis_pass(chars: &[char], map: &EmojiMap) -> (String, Alignment) {
    let mut rw = Rewriter::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if let Some((len, desc)) = map.longest_match(chars, i) {
            rw.replace(len, &format!(" {desc} "));
            i += len;
        } else if is_emoji_codepoint(chars[i]) {
            // unknown sequence: the pictograph, its modifiers and ZWJ-joined parts
            let mut j = i + 1;
            while j < chars.len() {
                let skin_tone = (0x1F3FB..=0x1F3FF).contains(&(chars[j] as u32));
                if is_emoji_component(chars[j])
                    || skin_tone
                    || (chars[j - 1] == '\u{200D}' && is_emoji_codepoint(chars[j]))
                {
                    j += 1;
                } else {
                    break;
                }
            }
            rw.replace(j - i, "");
            i = j;
        } else {
            rw.keep(chars[i]);
            i += 1;
        }
    }
    rw.finish()
}

fn usernames_pass(chars: &[char]) -> (String, Alignment) {
    let mut rw = Rewriter::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '@' {
            let run = chars[i + 1..]
                .iter()
                .take_while(|&&c| is_word_char(c))
                .count();
            if run > 0 {
                rw.replace(run + 1, USER_PLACEHOLDER);
                i += run + 1;
                continue;
            }
        }
        rw.keep(chars[i]);
        i += 1;
    }
    rw.finish()
}

fn hashtags_pass(chars: &[char]) -> (String, Alignment) {
    let mut rw = Rewriter::with_capacity(chars.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if c == '#' && chars.get(i + 1).is_some_and(|&n| is_word_char(n)) {
            rw.replace(1, "# ");
        } else {
            rw.keep(c);
        }
    }
    rw.finish()
}

fn whitespace_pass(chars: &[char]) -> (String, Alignment) {
    let mut rw = Rewriter::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            let run = chars[i..].iter().take_while(|c| c.is_whitespace()).count();
            let at_edge = i == 0 || i + run == chars.len();
            rw.replace(run, if at_edge { "" } else { " " });
            i += run;
        } else {
            rw.keep(chars[i]);
            i += 1;
        }
    }
    rw.finish()
}

fn chars_of(text: &str) -> Vec<char> {
    text.chars().collect()
}

/// Replaces each `@` followed by one or more word characters with `@user`.
pub fn replace_usernames(text: &str) -> String {
    usernames_pass(&chars_of(text)).0
}

/// Inserts a space between `#` and an immediately following word character.
pub fn split_hashtags(text: &str) -> String {
    hashtags_pass(&chars_of(text)).0
}

/// Replaces known emoji sequences (longest match first) with their
/// space-padded description and deletes unknown emoji sequences.
pub fn replace_emojis(text: &str, map: &EmojiMap) -> String {
    emojis_pass(&chars_of(text), map).0
}

/// Collapses whitespace runs to a single space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    whitespace_pass(&chars_of(text)).0
}

/// Full normalization: emojis, usernames, hashtags, then whitespace.
pub fn normalize(text: &str, map: &EmojiMap) -> String {
    normalize_aligned(text, map).text
}

/// [`normalize`] plus the source-to-output offset alignment.
pub fn normalize_aligned(text: &str, map: &EmojiMap) -> Normalized {
    let (t1, a1) = emojis_pass(&chars_of(text), map);
    let (t2, a2) = usernames_pass(&chars_of(&t1));
    let (t3, a3) = hashtags_pass(&chars_of(&t2));
    let (t4, a4) = whitespace_pass(&chars_of(&t3));
    Normalized {
        text: t4,
        alignment: a1.then(&a2).then(&a3).then(&a4),
    }
}

/// A token with codepoint offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{})", self.surface, self.start, self.end)
    }
}

/// Splits on whitespace, then peels leading and trailing punctuation
/// (any non-word character) off each chunk as single-character tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars = chars_of(text);
    let mut tokens = Vec::new();
    let push = |s: usize, e: usize, tokens: &mut Vec<Token>| {
        tokens.push(Token {
            surface: chars[s..e].iter().collect(),
            start: s,
            end: e,
        });
    };
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lo = start;
        while lo < end && !is_word_char(chars[lo]) {
            lo += 1;
        }
        let mut hi = end;
        while hi > lo && !is_word_char(chars[hi - 1]) {
            hi -= 1;
        }
        for p in start..lo {
            push(p, p + 1, &mut tokens);
        }
        if lo < hi {
            push(lo, hi, &mut tokens);
        }
        for p in hi..end {
            push(p, p + 1, &mut tokens);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(s: &str, a: usize, b: usize) -> Token {
        Token {
            surface: s.to_string(),
            start: a,
            end: b,
        }
    }

    #[test]
    fn usernames() {
        assert_eq!(replace_usernames("@john feels sick"), "@user feels sick");
        assert_eq!(replace_usernames("@user"), "@user");
        assert_eq!(replace_usernames("mail me at a@b"), "mail me at a@user");
        assert_eq!(replace_usernames("@ alone @@x"), "@ alone @@user");
        assert_eq!(replace_usernames("@josé_1!"), "@user!");
    }

    #[test]
    fn hashtags() {
        assert_eq!(split_hashtags("#covid vibes"), "# covid vibes");
        assert_eq!(split_hashtags("# covid"), "# covid");
        assert_eq!(split_hashtags("c#, #2021ok"), "c#, # 2021ok");
        assert_eq!(split_hashtags("##año"), "## año");
    }

    #[test]
    fn emojis() {
        let map = EmojiMap::bundled();
        assert_eq!(
            replace_emojis("😷 home", &map),
            " face with medical mask  home"
        );
        assert_eq!(replace_emojis("no emoji here", &map), "no emoji here");
        assert_eq!(
            replace_emojis("😀😀", &map),
            " grinning face  grinning face "
        );
    }

    #[test]
    fn unknown_emoji_sequences_are_deleted() {
        let map = EmojiMap::new();
        assert_eq!(replace_emojis("a😷b", &map), "ab");
        // ZWJ family with skin tone and variation selector
        assert_eq!(replace_emojis("x👩🏽\u{200D}⚕\u{FE0F}y", &map), "xy");
        // a lone ZWJ outside an emoji sequence is ordinary text
        assert_eq!(replace_emojis("a\u{200D}b", &map), "a\u{200D}b");
    }

    #[test]
    fn longest_match_wins() {
        let mut map = EmojiMap::new();
        map.insert("👍", "thumbs up").unwrap();
        map.insert("👍🏽", "thumbs up medium skin tone").unwrap();
        assert_eq!(
            replace_emojis("👍🏽👍", &map),
            " thumbs up medium skin tone  thumbs up "
        );
    }

    #[test]
    fn normalize_examples() {
        let map = EmojiMap::bundled();
        assert_eq!(
            normalize("@ana 😷 #covid", &map),
            "@user face with medical mask # covid"
        );
        assert_eq!(normalize("", &map), "");
        assert_eq!(normalize("plain text", &map), "plain text");
        assert_eq!(normalize("  a \t\n b  ", &map), "a b");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("flu & fever"),
            vec![tok("flu", 0, 3), tok("&", 4, 5), tok("fever", 6, 11)]
        );
        assert_eq!(tokenize(""), vec![]);
        assert_eq!(tokenize("dolor."), vec![tok("dolor", 0, 5), tok(".", 5, 6)]);
        assert_eq!(
            tokenize("¡fiebre!! covid-19"),
            vec![
                tok("¡", 0, 1),
                tok("fiebre", 1, 7),
                tok("!", 7, 8),
                tok("!", 8, 9),
                tok("covid-19", 10, 18)
            ]
        );
        assert_eq!(
            tokenize("..."),
            vec![tok(".", 0, 1), tok(".", 1, 2), tok(".", 2, 3)]
        );
    }

    #[test]
    fn tsv_parsing() {
        let map = EmojiMap::parse_tsv("# comment\n\n😷\tFace With Medical Mask\r\n").unwrap();
        assert_eq!(map.get("😷"), Some("face with medical mask"));
        assert_eq!(
            EmojiMap::parse_tsv("😷 no tab"),
            Err(EmojiMapError::MissingTab { line: 1 })
        );
        assert!(matches!(
            EmojiMap::parse_tsv("x\tnot an emoji"),
            Err(EmojiMapError::NoEmojiInKey { line: 1, .. })
        ));
        assert!(matches!(
            EmojiMap::parse_tsv("😷\tmask\n😷\tagain"),
            Err(EmojiMapError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            EmojiMap::parse_tsv("😷\tsad 😢"),
            Err(EmojiMapError::BadDescription { line: 1, .. })
        ));
        assert!(matches!(
            EmojiMap::parse_tsv("😷\t   "),
            Err(EmojiMapError::EmptyDescription { line: 1, .. })
        ));
        assert!(matches!(
            EmojiMap::parse_tsv("\tx"),
            Err(EmojiMapError::EmptyKey { line: 1 })
        ));
    }

    #[test]
    fn bundled_map_loads() {
        let map = EmojiMap::bundled();
        assert!(map.len() > 50);
        assert_eq!(map.get("😀"), Some("grinning face"));
    }

    #[test]
    fn alignment_tracks_spans() {
        let map = EmojiMap::bundled();
        let src = "  @bob has 😷 #fiebre now";
        let n = normalize_aligned(src, &map);
        assert_eq!(n.text, "@user has face with medical mask # fiebre now");
        let out: Vec<char> = n.text.chars().collect();
        let slice = |(s, e): (usize, usize)| out[s..e].iter().collect::<String>();
        // "has"
        assert_eq!(slice(n.alignment.map_span(7, 10).unwrap()), "has");
        // "@bob"
        assert_eq!(slice(n.alignment.map_span(2, 6).unwrap()), "@user");
        // "#fiebre" -> "# fiebre"
        assert_eq!(slice(n.alignment.map_span(13, 20).unwrap()), "# fiebre");
        // "fiebre" alone
        assert_eq!(slice(n.alignment.map_span(14, 20).unwrap()), "fiebre");
        assert_eq!(slice(n.alignment.map_span(21, 24).unwrap()), "now");
    }

    fn fuzz_text() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            Just("@".to_string()),
            Just("#".to_string()),
            Just(" ".to_string()),
            Just("\t".to_string()),
            Just("\u{200D}".to_string()),
            Just("\u{FE0F}".to_string()),
            Just("😷".to_string()),
            Just("😀".to_string()),
            Just("🧿".to_string()),
            Just("👍🏽".to_string()),
            "[a-zA-Zñé0-9_]{1,5}",
            "[.,!?&-]",
            any::<char>().prop_map(|c| c.to_string()),
        ];
        prop::collection::vec(piece, 0..24).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(t in fuzz_text()) {
            let map = EmojiMap::bundled();
            let once = normalize(&t, &map);
            prop_assert_eq!(normalize(&once, &map), once);
        }

        #[test]
        fn tokens_cover_non_whitespace(t in fuzz_text()) {
            let chars: Vec<char> = t.chars().collect();
            let toks = tokenize(&t);
            let mut covered = vec![false; chars.len()];
            let mut last_end = 0;
            for tk in &toks {
                prop_assert!(tk.start < tk.end);
                prop_assert!(tk.start >= last_end);
                last_end = tk.end;
                prop_assert_eq!(&tk.surface, &chars[tk.start..tk.end].iter().collect::<String>());
                for c in &mut covered[tk.start..tk.end] {
                    *c = true;
                }
            }
            for (i, c) in chars.iter().enumerate() {
                prop_assert_eq!(covered[i], !c.is_whitespace());
            }
        }

        #[test]
        fn rules_only_touch_their_patterns(t in "[a-z @#!]{0,30}") {
            // with no '@'/'#' the rules are the identity
            let stripped: String = t.chars().filter(|&c| c != '@' && c != '#').collect();
            prop_assert_eq!(replace_usernames(&stripped), stripped.clone());
            prop_assert_eq!(split_hashtags(&stripped), stripped.clone());
            // hashtag splitting only inserts spaces
            let split = split_hashtags(&t);
            prop_assert_eq!(split.replace("# ", "#").len() <= t.len(), true);
            prop_assert!(split.chars().count() <= 2 * t.chars().count());
        }

        #[test]
        fn alignment_is_monotone(t in fuzz_text()) {
            let n = normalize_aligned(&t, &EmojiMap::bundled());
            let len = t.chars().count();
            prop_assert_eq!(n.alignment.source_len(), len);
            let out_len = n.text.chars().count();
            for p in 0..len {
                prop_assert!(n.alignment.start_of(p).unwrap() <= n.alignment.start_of(p + 1).unwrap());
                prop_assert!(n.alignment.end_of(p).unwrap() <= n.alignment.end_of(p + 1).unwrap());
            }
            prop_assert!(n.alignment.end_of(len).unwrap() <= out_len);
        }
    }
}
