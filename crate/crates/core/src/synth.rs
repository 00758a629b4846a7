//! Seeded synthetic tweet-like classification data.

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{LabeledDataset, Record};

const SIGNAL: &[&str] = &[
    "fever",
    "cough",
    "tested",
    "positive",
    "covid",
    "chills",
    "fatigue",
    "anosmia",
    "headache",
    "quarantine",
    "symptoms",
    "isolating",
    "diagnosed",
    "sore",
    "throat",
    "breathless",
];

const NEUTRAL: &[&str] = &[
    "today", "work", "coffee", "friends", "weekend", "game", "music", "news", "school", "rain",
    "dinner", "movie", "happy", "tired", "city", "bus", "phone", "family", "morning", "night",
    "love", "time", "people", "week", "going", "home", "really", "think", "good", "great", "new",
    "long", "day", "still", "just", "back", "hope", "need", "watch", "read", "walk", "dog", "cat",
    "store", "traffic", "sunny", "book", "vote", "team", "win",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "tu", "vo", "zu", "pi", "da", "ko", "ri", "mu", "ga", "be",
    "ho", "ju", "wa", "yi",
];

/// Size of the long-tail filler vocabulary drawn with weight 1/rank.
pub const TAIL_VOCAB: usize = 500;

fn tail_word(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut w = format!("{}{}", SYLLABLES[i % n], SYLLABLES[(i / n) % n]);
    if i >= n * n {
        w.push_str(SYLLABLES[i / (n * n)]);
    }
    w
}

const DECOR: &[&str] = &[
    "@maria_g",
    "@doc_j",
    "#covid19",
    "#stayhome",
    "😷",
    "🤒",
    "😂",
    "🙏",
    "!",
    "...",
];

/// Classification records with exactly `round(n * pos_rate)` positives.
///
/// Positives usually carry one to three symptom words among neutral filler;
/// some carry none. Negatives occasionally mention a symptom word. Filler
/// also includes Zipf-distributed rare words, and mentions, hashtags and
/// emojis are sprinkled in so the text exercises normalization.
pub fn generate(n: usize, pos_rate: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail: Vec<String> = (0..TAIL_VOCAB).map(tail_word).collect();
    let zipf =
        WeightedIndex::new((1..=TAIL_VOCAB).map(|r| 1.0 / r as f64)).expect("positive weights");
    let n_pos = ((n as f64) * pos_rate.clamp(0.0, 1.0)).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);

    let records = labels
        .into_iter()
        .enumerate()
        .map(|(i, positive)| {
            let mut words: Vec<&str> = (0..rng.random_range(6..14))
                .map(|_| *NEUTRAL.choose(&mut rng).unwrap())
                .collect();
            for _ in 0..rng.random_range(3..8) {
                let at = rng.random_range(0..=words.len());
                words.insert(at, &tail[rng.sample(&zipf)]);
            }
            let signals = if positive {
                if rng.random_bool(0.15) {
                    0
                } else {
                    rng.random_range(1..=3)
                }
            } else {
                usize::from(rng.random_bool(0.12))
            };
            for _ in 0..signals {
                let at = rng.random_range(0..=words.len());
                words.insert(at, SIGNAL.choose(&mut rng).unwrap());
            }
            if rng.random_bool(0.4) {
                let at = rng.random_range(0..=words.len());
                words.insert(at, DECOR.choose(&mut rng).unwrap());
            }
            Record {
                id: format!("s{i:05}"),
                text: words.join(" "),
                label: u8::from(positive),
            }
        })
        .collect();
    LabeledDataset::new(records).expect("generated ids are unique")
}

/// Linearly separable records: positives always contain a marker token that
/// negatives never contain. Roughly 30% positives.
pub fn separable(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let positive = i % 10 < 3;
            let mut words: Vec<&str> = (0..rng.random_range(4..10))
                .map(|_| *NEUTRAL.choose(&mut rng).unwrap())
                .collect();
            if positive {
                let at = rng.random_range(0..=words.len());
                words.insert(at, "fever");
            }
            Record {
                id: format!("p{i:05}"),
                text: words.join(" "),
                label: u8::from(positive),
            }
        })
        .collect();
    LabeledDataset::new(records).expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_positive_rate() {
        let ds = generate(2000, 0.176, 1);
        assert_eq!(ds.class_counts(), (1648, 352));
        assert_eq!(generate(2000, 0.176, 1), ds);
        assert_ne!(generate(2000, 0.176, 2), ds);
    }

    #[test]
    fn tail_words_are_distinct_from_fixed_vocabulary() {
        let tail: std::collections::HashSet<String> = (0..TAIL_VOCAB).map(tail_word).collect();
        assert_eq!(tail.len(), TAIL_VOCAB);
        assert!(SIGNAL.iter().chain(NEUTRAL).all(|w| !tail.contains(*w)));
    }

    #[test]
    fn separable_marker() {
        let ds = separable(50, 0);
        for r in ds.records() {
            assert_eq!(r.text.split(' ').any(|w| w == "fever"), r.is_positive());
        }
    }
}
