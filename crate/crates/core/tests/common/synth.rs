//! Synthetic paired corpus built from simple/complex synonym slots.
//!
//! Each document is a chain of synonym slots joined by one-syllable
//! connectors. Its training targets use the complex variant of each slot 4
//! times in 7 and the simple one 3 times in 7, so a bigram model trained on
//! them gives the pair nearly equal probability, the complex word slightly
//! ahead. The source lists both variants of every slot side by side, so an
//! output shares words with it but hardly any 4-grams.

use medsimp::harness::Document;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAIRS: [(&str, &str); 20] = [
    ("use", "utilize"),
    ("help", "facilitate"),
    ("drug", "medication"),
    ("doctor", "physician"),
    ("start", "commence"),
    ("later", "subsequently"),
    ("show", "demonstrate"),
    ("need", "necessitate"),
    ("enough", "sufficient"),
    ("about", "approximately"),
    ("try", "endeavor"),
    ("buy", "purchase"),
    ("end", "terminate"),
    ("often", "frequently"),
    ("many", "numerous"),
    ("get", "obtain"),
    ("check", "evaluate"),
    ("tell", "notify"),
    ("heart", "cardiovascular"),
    ("fast", "rapidly"),
];

pub const CONNECTORS: [&str; 16] = [
    "the", "and", "to", "for", "with", "of", "in", "on", "at", "by", "so", "but", "then", "as", "from", "when",
];

/// Copies of each training pattern.
pub const REPEAT: usize = 100;

pub struct SynthDoc {
    pub doc: Document,
    /// Training targets for this document's language model.
    pub training: Vec<String>,
    pub slots: Vec<(&'static str, &'static str)>,
    pub connectors: Vec<&'static str>,
}

fn sentence(slots: &[&str], connectors: &[&str]) -> String {
    let mut words = Vec::new();
    for (i, s) in slots.iter().enumerate() {
        words.push(*s);
        if let Some(c) = connectors.get(i) {
            words.push(c);
        }
    }
    format!("{} .", words.join(" "))
}

pub fn corpus(n: usize, seed: u64) -> Vec<SynthDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let m = rng.random_range(6..=8);
            let mut pairs = PAIRS.to_vec();
            pairs.shuffle(&mut rng);
            pairs.truncate(m);
            let mut conns = CONNECTORS.to_vec();
            conns.shuffle(&mut rng);
            conns.truncate(m - 1);

            // column j of `choice` says which variant training sentence j uses
            let choice: Vec<Vec<bool>> = (0..m)
                .map(|_| {
                    let mut col = vec![true, true, true, true, false, false, false];
                    col.shuffle(&mut rng);
                    col
                })
                .collect();
            let mut training = Vec::new();
            #[allow(clippy::needless_range_loop)]
            for j in 0..7 {
                let words: Vec<&str> = (0..m)
                    .map(|s| if choice[s][j] { pairs[s].1 } else { pairs[s].0 })
                    .collect();
                let text = sentence(&words, &conns);
                training.extend(std::iter::repeat_n(text, REPEAT));
            }

            let mut src = Vec::new();
            for (s, (simple, complex)) in pairs.iter().enumerate() {
                if rng.random_bool(0.5) {
                    src.extend([*simple, *complex]);
                } else {
                    src.extend([*complex, *simple]);
                }
                if let Some(c) = conns.get(s) {
                    src.push(c);
                }
            }
            let input = format!("{} .", src.join(" "));
            let simple: Vec<&str> = pairs.iter().map(|p| p.0).collect();
            SynthDoc {
                doc: Document {
                    id: format!("syn{i:03}"),
                    input,
                    label: sentence(&simple, &conns),
                    output: None,
                },
                training,
                slots: pairs,
                connectors: conns,
            }
        })
        .collect()
}
