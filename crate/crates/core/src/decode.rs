//! Greedy and prefix beam-search decoding of CTC posteriors.

use std::collections::HashMap;

use crate::ctc::{log_add, LOG_ZERO};
use crate::vocab::{collapse, PosteriorSequence, BLANK};

/// Collapse of the per-step argmax (ties to the lowest label).
pub fn greedy_decode(post: &PosteriorSequence) -> Vec<usize> {
    let path: Vec<usize> = (0..post.steps())
        .map(|t| {
            let row = post.row(t);
            (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect();
    collapse(&path)
}

/// Per-prefix log scores split by whether the last emitted symbol was blank.
/// `total_*` sum over all alignments, `best_*` keep only the best alignment.
#[derive(Clone, Copy, Debug)]
struct Score {
    total_b: f64,
    total_nb: f64,
    best_b: f64,
    best_nb: f64,
}

impl Score {
    const ZERO: Score = Score { total_b: LOG_ZERO, total_nb: LOG_ZERO, best_b: LOG_ZERO, best_nb: LOG_ZERO };

    fn total(&self) -> f64 {
        log_add(self.total_b, self.total_nb)
    }

    fn best(&self) -> f64 {
        self.best_b.max(self.best_nb)
    }

    fn add_b(&mut self, total: f64, best: f64) {
        self.total_b = log_add(self.total_b, total);
        self.best_b = self.best_b.max(best);
    }

    fn add_nb(&mut self, total: f64, best: f64) {
        self.total_nb = log_add(self.total_nb, total);
        self.best_nb = self.best_nb.max(best);
    }
}

/// CTC prefix beam search in log space.
///
/// Prefixes are merged after collapse and carry summed blank/non-blank
/// probabilities, which decide the final answer. Pruning to `width` ranks
/// prefixes by their best single alignment, which makes width 1 coincide with
/// greedy decoding; with a width covering every reachable prefix nothing is
/// pruned and the result is the exact `argmax_ℓ p(ℓ|o)`. Ties prefer the
/// lexicographically smaller label sequence.
pub fn beam_search_decode(post: &PosteriorSequence, width: usize) -> Vec<usize> {
    assert!(width >= 1, "beam width must be at least 1");
    let logp = post.log_data();
    let v = post.labels();
    let mut beam: Vec<(Vec<usize>, Score)> = vec![(Vec::new(), Score { total_b: 0.0, best_b: 0.0, ..Score::ZERO })];
    for t in 0..post.steps() {
        let lp = &logp[t * v..(t + 1) * v];
        let mut next: HashMap<Vec<usize>, Score> = HashMap::new();
        for (prefix, s) in &beam {
            let (all_total, all_best) = (s.total(), s.best());
            // stay: blank, or repeat of the last label without a separator
            let e = next.entry(prefix.clone()).or_insert(Score::ZERO);
            e.add_b(all_total + lp[BLANK], all_best + lp[BLANK]);
            if let Some(&last) = prefix.last() {
                e.add_nb(s.total_nb + lp[last], s.best_nb + lp[last]);
            }
            for (k, &lk) in lp.iter().enumerate().skip(1) {
                let mut ext = prefix.clone();
                ext.push(k);
                let e = next.entry(ext).or_insert(Score::ZERO);
                if prefix.last() == Some(&k) {
                    e.add_nb(s.total_b + lk, s.best_b + lk);
                } else {
                    e.add_nb(all_total + lk, all_best + lk);
                }
            }
        }
        let mut cands: Vec<(Vec<usize>, Score)> = next.into_iter().collect();
        cands.sort_by(|a, b| b.1.best().total_cmp(&a.1.best()).then_with(|| a.0.cmp(&b.0)));
        cands.truncate(width);
        beam = cands;
    }
    beam.into_iter()
        .max_by(|a, b| a.1.total().total_cmp(&b.1.total()).then_with(|| b.0.cmp(&a.0)))
        .map(|(p, _)| p)
        .unwrap_or_default()
}
