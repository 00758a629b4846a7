#![no_main]

use std::collections::BTreeSet;

use gridner::grid::{self, DecodeLimits};
use gridner::records::{self, NerRecord};
use gridner::textnorm::EmojiMap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(rec) = NerRecord::from_json(data) else {
        return;
    };
    if let Ok(norm) = rec.normalized(&EmojiMap::bundled()) {
        let _ = norm.mentions();
    }
    let Ok((tokens, mentions)) = rec.mentions() else {
        return;
    };
    for m in &mentions {
        let spans = records::mention_to_spans(m, &tokens);
        assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));
    }
    let Ok(g) = grid::encode_grid(&mentions, tokens.len()) else {
        return;
    };
    if tokens.len() > 12 {
        let _ = grid::decode_grid(&g, DecodeLimits::default());
        return;
    }
    let limits = DecodeLimits::new(tokens.len().max(1), usize::MAX).unwrap();
    let decoded: BTreeSet<_> = grid::decode_grid(&g, limits).into_iter().collect();
    assert!(mentions.iter().all(|m| decoded.contains(m)));
});
