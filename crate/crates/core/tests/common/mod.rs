//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stmc_core::PosteriorSequence;

/// Every alignment path of length `t` over `v` labels.
pub fn all_paths(t: usize, v: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out.into_iter().flat_map(|p| (0..v).map(move |k| [p.clone(), vec![k]].concat())).collect();
    }
    out
}

pub fn collapse_oracle(path: &[usize]) -> Vec<usize> {
    let mut dedup: Vec<usize> = path.to_vec();
    dedup.dedup();
    dedup.into_iter().filter(|&k| k != 0).collect()
}

/// p(ℓ|o) for every reachable ℓ, by explicit path enumeration.
pub fn sequence_probs(post: &PosteriorSequence) -> BTreeMap<Vec<usize>, f64> {
    let mut m = BTreeMap::new();
    for path in all_paths(post.steps(), post.labels()) {
        let p: f64 = path.iter().enumerate().map(|(t, &k)| post.row(t)[k]).product();
        *m.entry(collapse_oracle(&path)).or_insert(0.0) += p;
    }
    m
}

pub fn random_posteriors(rng: &mut ChaCha8Rng, t: usize, v: usize, sharpness: f64) -> PosteriorSequence {
    let logits: Vec<f64> = (0..t * v).map(|_| rng.gen_range(-sharpness..sharpness)).collect();
    PosteriorSequence::from_logits(t, v, &logits).unwrap()
}

/// Minimal-cost (sub, del, ins) triples over all edit scripts, by branch and
/// bound over alignments.
pub fn minimal_scripts(r: &[u8], h: &[u8]) -> (usize, BTreeSet<(usize, usize, usize)>) {
    fn go(r: &[u8], h: &[u8], acc: (usize, usize, usize), best: &mut usize, found: &mut BTreeSet<(usize, usize, usize)>) {
        let cost = acc.0 + acc.1 + acc.2;
        if cost + r.len().abs_diff(h.len()) > *best {
            return;
        }
        if r.is_empty() && h.is_empty() {
            if cost < *best {
                *best = cost;
                found.clear();
            }
            found.insert(acc);
            return;
        }
        if !r.is_empty() && !h.is_empty() {
            let s = usize::from(r[0] != h[0]);
            go(&r[1..], &h[1..], (acc.0 + s, acc.1, acc.2), best, found);
        }
        if !r.is_empty() {
            go(&r[1..], h, (acc.0, acc.1 + 1, acc.2), best, found);
        }
        if !h.is_empty() {
            go(r, &h[1..], (acc.0, acc.1, acc.2 + 1), best, found);
        }
    }
    let mut best = r.len() + h.len();
    let mut found = BTreeSet::new();
    go(r, h, (0, 0, 0), &mut best, &mut found);
    (best, found)
}

/// The most probable collapsed sequence by enumeration; ties go to the
/// lexicographically smaller sequence.
pub fn exhaustive_argmax(post: &PosteriorSequence) -> Vec<usize> {
    let probs = sequence_probs(post);
    let best = probs.iter().fold(None::<(&Vec<usize>, f64)>, |acc, (k, &p)| match acc {
        Some((_, q)) if q >= p => acc,
        _ => Some((k, p)),
    });
    best.expect("at least one path").0.clone()
}

/// Every pair `(r, h)` with `|r|, |h| <= max_len` over `symbols` symbols, one
/// representative per relabelling class: symbols in `r ++ h` first appear in
/// increasing order. Edit distances only compare symbols for equality, so the
/// classes cover all pairs.
pub fn canonical_pairs(max_len: usize, symbols: u8) -> Vec<(Vec<u8>, Vec<u8>)> {
    fn grow(s: &mut Vec<u8>, next: u8, symbols: u8, max_len: usize, out: &mut Vec<(Vec<u8>, Vec<u8>)>) {
        for split in s.len().saturating_sub(max_len)..=s.len().min(max_len) {
            out.push((s[..split].to_vec(), s[split..].to_vec()));
        }
        if s.len() == 2 * max_len {
            return;
        }
        for c in 0..next.min(symbols - 1) + 1 {
            s.push(c);
            grow(s, next.max(c + 1), symbols, max_len, out);
            s.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), 0, symbols, max_len, &mut out);
    out
}
