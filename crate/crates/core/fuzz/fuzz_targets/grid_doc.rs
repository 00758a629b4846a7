#![no_main]

use gridner::grid::{self, DecodeLimits};
use gridner::records::{DecodedEntity, GridBody, GridDoc};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(doc) = GridDoc::from_json(data) else {
        return;
    };
    let mentions = match &doc.body {
        GridBody::Grid(g) => grid::decode_grid(g, DecodeLimits::default()),
        GridBody::Scores(s) => grid::decode_scores(s, DecodeLimits::default()),
    };
    for m in &mentions {
        let _ = DecodedEntity::new(m, doc.tokens.as_deref());
    }
});
