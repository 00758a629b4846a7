#![no_main]

use gridner::textnorm::{self, EmojiMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(map) = EmojiMap::parse_tsv(data) else {
        return;
    };
    for (key, desc) in map.iter() {
        assert_eq!(map.get(key), Some(desc));
        assert!(!desc.is_empty());
    }
    let joined: String = map.iter().map(|(k, _)| k).collect::<Vec<_>>().join(" x ");
    let _ = textnorm::normalize(&joined, &map);
});
