#![no_main]

use gridner::toymodel::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = serde_json::from_slice::<Checkpoint>(data) else {
        return;
    };
    if ckpt.dim > 1 << 16 {
        return;
    }
    let Ok((model, ema)) = ckpt.into_parts() else {
        return;
    };
    let back = Checkpoint::from_parts(&model, &ema);
    assert_eq!(back.into_parts().unwrap().0, model);
    let _ = model.predict_text("fever and cough");
});
