//! Word-pair grid NER, text normalization, focal loss with AdamW/EMA, a hashed
//! linear classifier, fold ensembles and evaluation metrics.
//!
//! ```
//! use gridner::grid::{decode_grid, encode_grid, DecodeLimits, EntityMention};
//!
//! let m = EntityMention::new("SYMPTOM", vec![1, 3], 5)?;
//! let grid = encode_grid(&[m.clone()], 5)?;
//! assert_eq!(decode_grid(&grid, DecodeLimits::default()), vec![m]);
//! # Ok::<(), gridner::grid::GridError>(())
//! ```

pub mod ensemble;
pub mod eval;
pub mod grid;
pub mod optim;
pub mod records;
pub mod synth;
pub mod textnorm;
pub mod toymodel;
