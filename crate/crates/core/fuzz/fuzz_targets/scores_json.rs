#![no_main]

use gridner::grid::{self, DecodeLimits, GridScores};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(s) = GridScores::from_json(data) else {
        return;
    };
    assert_eq!(GridScores::from_json(&s.to_json()).unwrap(), s);
    for m in grid::decode_scores(&s, DecodeLimits::default()) {
        m.validate(s.n()).unwrap();
    }
    let fused = grid::fuse_scores(&[s.clone(), s.clone()]).unwrap();
    assert_eq!(fused.n(), s.n());
});
