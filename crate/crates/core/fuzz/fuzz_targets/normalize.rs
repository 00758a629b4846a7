#![no_main]

use gridner::textnorm::{self, EmojiMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let map = EmojiMap::bundled();
    let norm = textnorm::normalize_aligned(text, &map);
    assert_eq!(textnorm::normalize(&norm.text, &map), norm.text);
    assert_eq!(norm.alignment.source_len(), text.chars().count());
    let out_len = norm.text.chars().count();
    for i in 0..=text.chars().count() {
        assert!(norm.alignment.start_of(i).unwrap() <= out_len);
    }

    let chars: Vec<char> = text.chars().collect();
    let mut covered = 0;
    for t in textnorm::tokenize(text) {
        assert!(t.start < t.end && t.end <= chars.len());
        assert!(chars[covered..t.start].iter().all(|c| c.is_whitespace()));
        assert_eq!(chars[t.start..t.end].iter().collect::<String>(), t.surface);
        covered = t.end;
    }
    assert!(chars[covered..].iter().all(|c| c.is_whitespace()));
});
