//! Synthetic corpora for desk-scale runs.
//!
//! The language is an order-2 Markov chain over 64 symbols `w00..w63`. Every
//! symbol `b` has four fixed successors; the symbol before it, `a`, picks
//! successor `a mod 4` with probability 0.7, otherwise one of the four
//! uniformly. Lines hold 12 to 30 symbols.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::rng::{substream, Rng};

pub const SYMBOLS: usize = 64;
const SUCCESSORS: usize = 4;
const PREFERRED_PROB: f64 = 0.7;
pub const MIN_LINE: usize = 12;
pub const MAX_LINE: usize = 30;

pub fn symbol(i: usize) -> String {
    format!("w{i:02}")
}

/// The fixed successor table of the chain (independent of the corpus seed).
fn successor_table() -> Vec<[usize; SUCCESSORS]> {
    let mut rng = substream(0x5eed_c0de, "markov-table");
    (0..SYMBOLS)
        .map(|_| {
            let picks = sample(&mut rng, SYMBOLS, SUCCESSORS).into_vec();
            [picks[0], picks[1], picks[2], picks[3]]
        })
        .collect()
}

fn next_symbol(table: &[[usize; SUCCESSORS]], a: usize, b: usize, rng: &mut Rng) -> usize {
    let k = if rng.random::<f64>() < PREFERRED_PROB {
        a % SUCCESSORS
    } else {
        rng.random_range(0..SUCCESSORS)
    };
    table[b][k]
}

fn markov_line(table: &[[usize; SUCCESSORS]], len: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    out.push(rng.random_range(0..SYMBOLS));
    out.push(rng.random_range(0..SYMBOLS));
    while out.len() < len {
        let n = out.len();
        out.push(next_symbol(table, out[n - 2], out[n - 1], rng));
    }
    out.truncate(len);
    out
}

fn render(ids: &[usize]) -> String {
    ids.iter().map(|&i| symbol(i)).collect::<Vec<_>>().join(" ")
}

/// `lines` lines of the Markov language, deterministic in `seed`.
pub fn markov_corpus(seed: u64, lines: usize) -> Vec<String> {
    let table = successor_table();
    let mut rng = substream(seed, "corpus");
    (0..lines)
        .map(|_| {
            let len = rng.random_range(MIN_LINE..=MAX_LINE);
            render(&markov_line(&table, len, &mut rng))
        })
        .collect()
}

/// Two-class task over Markov lines: label 1 iff the line contains `marker`.
/// Positive lines get the marker written at one random position; negative
/// lines have every occurrence replaced by its successor-table neighbour.
/// Classes alternate, so the set is balanced.
pub fn marker_task(seed: u64, lines: usize, marker: usize) -> Vec<(usize, String)> {
    let table = successor_table();
    let mut rng = substream(seed, "marker-task");
    (0..lines)
        .map(|i| {
            let label = i % 2;
            let len = rng.random_range(MIN_LINE..=MAX_LINE);
            let mut ids = markov_line(&table, len, &mut rng);
            for id in ids.iter_mut() {
                if *id == marker {
                    *id = (marker + 1) % SYMBOLS;
                }
            }
            if label == 1 {
                let pos = rng.random_range(0..len);
                ids[pos] = marker;
            }
            (label, render(&ids))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = markov_corpus(3, 200);
        assert_eq!(a, markov_corpus(3, 200));
        assert_ne!(a, markov_corpus(4, 200));
        for line in &a {
            let n = line.split_whitespace().count();
            assert!((MIN_LINE..=MAX_LINE).contains(&n));
        }
    }

    #[test]
    fn transitions_follow_the_table() {
        let table = successor_table();
        for line in markov_corpus(1, 100) {
            let ids: Vec<usize> = line.split_whitespace().map(|w| w[1..].parse().unwrap()).collect();
            for w in ids.windows(3) {
                assert!(table[w[1]].contains(&w[2]));
            }
        }
    }

    #[test]
    fn marker_task_labels_match_content() {
        let marker = symbol(7);
        for (label, line) in marker_task(2, 300, 7) {
            assert_eq!(label == 1, line.split_whitespace().any(|w| w == marker));
        }
    }
}
