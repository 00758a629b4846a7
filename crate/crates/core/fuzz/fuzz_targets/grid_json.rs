#![no_main]

use gridner::grid::{self, DecodeLimits, RelationGrid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(g) = RelationGrid::from_json(data) else {
        return;
    };
    assert_eq!(RelationGrid::from_json(&g.to_json()).unwrap(), g);
    let limits = DecodeLimits::default();
    for m in grid::decode_grid(&g, limits) {
        m.validate(g.n()).unwrap();
        assert!(m.len() <= limits.max_entity_tokens);
    }
});
