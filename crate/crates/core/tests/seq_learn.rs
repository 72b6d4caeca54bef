use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmc_core::ctc::{ctc_brute_force, ctc_loss, ctc_loss_from_logits, forward_backward};
use stmc_core::decode::{beam_search_decode, greedy_decode};
use stmc_core::layers::{Blstm, Builder};
use stmc_core::vocab::collapse;
use stmc_core::wer::{edit_counts, wer};
use stmc_core::{CoreError, PosteriorSequence};
use stmc_tensor::{NdArray, ParamStore, Tape};

mod common;
use common::*;

// ---------- CTC ----------

#[test]
fn ctc_two_step_uniform_example() {
    let post = PosteriorSequence::new(2, 2, vec![0.5; 4]).unwrap();
    assert!((ctc_loss(&post, &[1]).unwrap() + 0.75f64.ln()).abs() < 1e-12);
    assert!((ctc_brute_force(&post, &[1]).unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn ctc_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=7);
        let post = random_posteriors(&mut rng, t, v, 3.0);
        let l = rng.gen_range(0..=3);
        let target: Vec<usize> = (0..l).map(|_| rng.gen_range(1..v)).collect();
        let probs = sequence_probs(&post);
        let oracle = probs.get(&target).copied().unwrap_or(0.0);
        match ctc_loss(&post, &target) {
            Ok(loss) => {
                assert!(oracle > 0.0);
                assert!((loss + oracle.ln()).abs() <= 1e-9 * oracle.ln().abs().max(1.0), "{target:?}");
                assert!((ctc_brute_force(&post, &target).unwrap() - oracle).abs() <= 1e-12);
            }
            Err(CoreError::Inadmissible { .. }) => assert_eq!(oracle, 0.0),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn empty_target_is_all_blank() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let post = random_posteriors(&mut rng, 5, 3, 2.0);
    let expect: f64 = -(0..5).map(|t| post.row(t)[0].ln()).sum::<f64>();
    assert!((ctc_loss(&post, &[]).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn single_step_single_label() {
    let post = PosteriorSequence::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
    assert!((ctc_brute_force(&post, &[2]).unwrap() - 0.3).abs() < 1e-15);
}

#[test]
fn path_probabilities_partition_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 1..=6 {
        let post = random_posteriors(&mut rng, t, 3, 2.0);
        let total: f64 = sequence_probs(&post).keys().map(|l| ctc_brute_force(&post, l).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "T'={t}: {total}");
    }
}

#[test]
fn likelihood_agrees_at_every_cut() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let post = random_posteriors(&mut rng, 8, 4, 3.0);
        let target = [1, 3, 3];
        let fb = forward_backward(&post.log_data(), 4, &target).unwrap();
        for t in 0..8 {
            let l = fb.likelihood_at(t);
            assert!((l - fb.log_likelihood).abs() <= 1e-9 * fb.log_likelihood.abs(), "cut {t}");
        }
    }
}

#[test]
fn relabelling_glosses_leaves_loss_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let perm = [0, 3, 1, 2]; // blank fixed
    for _ in 0..30 {
        let post = random_posteriors(&mut rng, 7, 4, 2.0);
        let target = [1, 2, 1];
        let mut moved = vec![0.0; 28];
        for t in 0..7 {
            for k in 0..4 {
                moved[t * 4 + perm[k]] = post.row(t)[k];
            }
        }
        let moved = PosteriorSequence::new(7, 4, moved).unwrap();
        let relabelled: Vec<usize> = target.iter().map(|&k| perm[k]).collect();
        let (a, b) = (ctc_loss(&post, &target).unwrap(), ctc_loss(&moved, &relabelled).unwrap());
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn inadmissible_and_bad_targets_are_errors() {
    let post = PosteriorSequence::new(2, 3, vec![1.0 / 3.0; 6]).unwrap();
    assert!(matches!(ctc_loss(&post, &[1, 1]), Err(CoreError::Inadmissible { steps: 2, needed: 3 })));
    assert!(matches!(ctc_loss(&post, &[0]), Err(CoreError::Label(_))));
    assert!(matches!(ctc_loss(&post, &[3]), Err(CoreError::Label(_))));
    let big = PosteriorSequence::new(15, 4, vec![0.25; 60]).unwrap();
    assert!(matches!(ctc_brute_force(&big, &[1]), Err(CoreError::TooLarge(_))));
}

#[test]
fn logit_gradient_rows_sum_to_zero() {
    // softmax minus occupancy: both rows are distributions
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, g) = ctc_loss_from_logits(&logits, 4, &[2, 1]).unwrap();
    for row in g.chunks(4) {
        assert!(row.iter().sum::<f64>().abs() < 1e-12);
    }
}

// ---------- collapse and decoding ----------

#[test]
fn collapse_examples() {
    // I I − miss − − you
    let (i, miss, you) = (1, 2, 3);
    assert_eq!(collapse(&[i, i, 0, miss, 0, 0, you]), vec![i, miss, you]);
    assert!(collapse(&[0, 0, 0]).is_empty());
    assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
    assert_eq!(collapse(&[1, 1]), vec![1]);
}

#[test]
fn collapse_matches_oracle_on_all_short_paths() {
    for p in all_paths(5, 3) {
        assert_eq!(collapse(&p), collapse_oracle(&p));
    }
}

#[test]
fn wide_beam_finds_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let post = random_posteriors(&mut rng, 5, 3, 2.5);
        assert_eq!(beam_search_decode(&post, 64), exhaustive_argmax(&post));
    }
}

#[test]
fn unit_beam_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..300 {
        let t = rng.gen_range(1..=10);
        let v = rng.gen_range(2..=5);
        let post = random_posteriors(&mut rng, t, v, 3.0);
        assert_eq!(beam_search_decode(&post, 1), greedy_decode(&post));
    }
}

#[test]
fn greedy_ties_go_to_blank() {
    let post = PosteriorSequence::new(3, 4, vec![0.25; 12]).unwrap();
    assert!(greedy_decode(&post).is_empty());
}

// ---------- WER ----------

#[test]
fn wer_examples() {
    assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap().0, 0.0);
    let (r, c) = wer(&["MORGEN", "REGEN", "NORD"], &["MORGEN", "NORD"]).unwrap();
    assert_eq!((c.sub, c.del, c.ins), (0, 1, 0));
    assert!((r - 1.0 / 3.0).abs() < 1e-15);
    let (r, c) = wer(&["a"], &["b", "c"]).unwrap();
    assert_eq!((c.sub, c.del, c.ins), (1, 0, 1));
    assert_eq!(r, 2.0);
    assert!(matches!(wer::<u8>(&[], &[]), Err(CoreError::EmptyReference)));
}

#[test]
fn edit_counts_are_minimal_on_short_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3000 {
        let r: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..4)).collect();
        let h: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..4)).collect();
        let (cost, scripts) = minimal_scripts(&r, &h);
        let c = edit_counts(&r, &h);
        assert_eq!(c.total(), cost);
        assert!(scripts.contains(&(c.sub, c.del, c.ins)), "{r:?} {h:?}");
    }
}

// ---------- BLSTM ----------

#[test]
fn shared_cell_blstm_reverses_under_input_reversal() {
    let mut store = ParamStore::new();
    let mut enc = Blstm::new(&mut Builder::new(&mut store, 7), "enc", 3, 4, 5);
    enc.bwd = enc.fwd.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f32> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rev: Vec<f32> = x.chunks(3).rev().flatten().copied().collect();
    let run = |data: Vec<f32>| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(NdArray::new(vec![6, 3], data).unwrap());
        let h = enc.encode(&mut tape, &p, xv).unwrap();
        tape.value(h).data().to_vec()
    };
    let (a, b) = (run(x), run(rev));
    // row t of the reversed run is row T−1−t of the original with the
    // forward and backward halves exchanged
    for t in 0..6 {
        let ra = &a[(5 - t) * 8..(6 - t) * 8];
        let rb = &b[t * 8..(t + 1) * 8];
        assert_eq!(&rb[..4], &ra[4..]);
        assert_eq!(&rb[4..], &ra[..4]);
    }
}

#[test]
fn single_step_blstm_sees_same_input_both_ways() {
    let mut store = ParamStore::new();
    let mut enc = Blstm::new(&mut Builder::new(&mut store, 1), "enc", 2, 3, 4);
    enc.bwd = enc.fwd.clone();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.constant(NdArray::new(vec![1, 2], vec![0.3f32, -0.7]).unwrap());
    let h = enc.encode(&mut tape, &p, xv).unwrap();
    let d = tape.value(h).data();
    assert_eq!(&d[..3], &d[3..]);
}

#[test]
fn canonical_pairs_cover_every_pair_up_to_relabelling() {
    let perms = [[0u8, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut seen = std::collections::BTreeSet::new();
    for (r, h) in canonical_pairs(3, 3) {
        for p in &perms {
            let map = |s: &[u8]| s.iter().map(|&c| p[c as usize]).collect::<Vec<_>>();
            seen.insert((map(&r), map(&h)));
        }
    }
    let words: usize = (0..=3).map(|n| 3usize.pow(n)).sum();
    assert_eq!(seen.len(), words * words);
}
