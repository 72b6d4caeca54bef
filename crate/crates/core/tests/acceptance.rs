//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.
//!
//! The training criteria share six desk-scale runs on the default corpus
//! (seeds 0..3, α ∈ {0.6, 0}); `STMC_ACCEPT_EPOCHS` shortens them for local
//! experiments (default 80).

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmc_core::config::NUM_CUES;
use stmc_core::ctc::{ctc_brute_force, ctc_loss};
use stmc_core::decode::{beam_search_decode, greedy_decode};
use stmc_core::gradcheck::full_suite;
use stmc_core::train::{EvalReport, Trainer};
use stmc_core::vocab::collapse;
use stmc_core::wer::edit_counts;
use stmc_core::{CoreError, RunConfig, Stmc, Vocabulary};
use stmc_data::{generate_corpus, Clip, Split, NUM_KEYPOINTS};
use stmc_tensor::gradcheck::GradCheckConfig;
use stmc_tensor::{NdArray, Tape};

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn report(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ctc_vs_brute_force(s: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut bad) = (0.0f64, 0);
    for _ in 0..500 {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=8);
        let post = random_posteriors(&mut rng, t, v, 3.0);
        let l = rng.gen_range(0..=3);
        let target: Vec<usize> = (0..l).map(|_| rng.gen_range(1..v)).collect();
        let oracle = sequence_probs(&post).get(&target).copied().unwrap_or(0.0);
        match ctc_loss(&post, &target) {
            Ok(loss) => worst = worst.max(rel(loss, -oracle.ln())),
            Err(CoreError::Inadmissible { .. }) if oracle == 0.0 => {}
            Err(_) => bad += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(
        "1 ctc-brute-force",
        bad == 0 && worst <= 1e-6 && secs < 30.0,
        format!("500 instances, max rel err of -ln p {worst:.2e} (tol 1e-6), {bad} disagreements, {secs:.1}s (limit 30s)"),
    );
}

fn partition(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for t in 1..=6 {
        for _ in 0..5 {
            let post = random_posteriors(&mut rng, t, 3, 3.0);
            let total: f64 = sequence_probs(&post).keys().map(|l| ctc_brute_force(&post, l).unwrap()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    s.report("2 ctc-partition", worst <= 1e-9, format!("|V|=3, T'<=6: max |Σp - 1| = {worst:.2e} (tol 1e-9)"));
}

fn gradients(s: &mut Suite) {
    let start = Instant::now();
    let reports = full_suite(&GradCheckConfig::default());
    let secs = start.elapsed().as_secs_f64();
    match reports {
        Ok(reports) => {
            let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
            let joint = reports.iter().any(|r| r.name.starts_with("joint_loss"));
            s.report(
                "3 gradient-checks",
                failing.is_empty() && joint && secs < 300.0,
                format!(
                    "{} checks incl. joint loss, max rel err {worst:.2e} (tol 1e-4), failing {failing:?}, {secs:.1}s (limit 300s)",
                    reports.len()
                ),
            );
        }
        Err(e) => s.report("3 gradient-checks", false, format!("error: {e}")),
    }
}

fn soft_argmax_of(h: usize, w: usize, map: Vec<f64>) -> [f64; 2] {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(NdArray::new(vec![1, 1, h, w], map).unwrap());
    let y = tape.soft_argmax(x).unwrap();
    let d = tape.value(y).data();
    [d[0], d[1]]
}

fn soft_argmax(s: &mut Suite) {
    let (h, w) = (24, 24);
    let uniform = soft_argmax_of(h, w, vec![1.0 / (h * w) as f64; h * w]);
    let mut first = vec![0.0; h * w];
    first[0] = 1.0;
    let mut last = vec![0.0; h * w];
    last[h * w - 1] = 1.0;
    let (c0, c1) = (soft_argmax_of(h, w, first), soft_argmax_of(h, w, last));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // support in rows/cols 4..12, shifted by up to ±4 cells
        let mut map = vec![0.0; h * w];
        for i in 4..12 {
            for j in 4..12 {
                map[i * w + j] = rng.gen_range(0.0..1.0);
            }
        }
        let z: f64 = map.iter().sum();
        map.iter_mut().for_each(|p| *p /= z);
        let (di, dj) = (rng.gen_range(-4i64..=4), rng.gen_range(-4i64..=4));
        let mut shifted = vec![0.0; h * w];
        for i in 4..12 {
            for j in 4..12 {
                shifted[(i as i64 + di) as usize * w + (j as i64 + dj) as usize] = map[i * w + j];
            }
        }
        let (a, b) = (soft_argmax_of(h, w, map), soft_argmax_of(h, w, shifted));
        worst = worst.max((b[0] - a[0] - di as f64 / (h - 1) as f64).abs());
        worst = worst.max((b[1] - a[1] - dj as f64 / (w - 1) as f64).abs());
    }
    let uniform_ok = (uniform[0] - 0.5).abs() <= 1e-9 && (uniform[1] - 0.5).abs() <= 1e-9;
    s.report(
        "4 soft-argmax",
        uniform_ok && c0 == [0.0, 0.0] && c1 == [1.0, 1.0] && worst <= 1e-7,
        format!("uniform {uniform:?}, corners {c0:?} {c1:?}, translation max err {worst:.2e} (tol 1e-7)"),
    );
}

fn decoders(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wide = (0..200)
        .filter(|_| {
            let post = random_posteriors(&mut rng, 5, 3, 2.5);
            beam_search_decode(&post, 64) != exhaustive_argmax(&post)
        })
        .count();
    let unit = (0..1000)
        .filter(|_| {
            let t = rng.gen_range(1..=12);
            let v = rng.gen_range(2..=6);
            let post = random_posteriors(&mut rng, t, v, 3.0);
            beam_search_decode(&post, 1) != greedy_decode(&post)
        })
        .count();
    s.report(
        "5 decoders",
        wide == 0 && unit == 0,
        format!("beam 64 vs exhaustive argmax: {wide}/200 differ; beam 1 vs greedy: {unit}/1000 differ"),
    );
}

fn wer_and_collapse(s: &mut Suite) {
    let pairs = canonical_pairs(6, 4);
    let bad = pairs
        .iter()
        .filter(|(r, h)| {
            let (cost, scripts) = minimal_scripts(r, h);
            let c = edit_counts(r, h);
            c.total() != cost || !scripts.contains(&(c.sub, c.del, c.ins))
        })
        .count();
    // I=1, miss=2, you=3, blank=0
    let collapsed = collapse(&[1, 1, 0, 2, 0, 0, 3]);
    s.report(
        "6 wer-and-collapse",
        bad == 0 && collapsed == [1, 2, 3],
        format!(
            "{} pair classes (all pairs up to relabelling, lengths <= 6, 4 symbols): {bad} mismatches; B(I I - miss - - you) = {collapsed:?}",
            pairs.len()
        ),
    );
}

fn random_clip(rng: &mut ChaCha8Rng, t: usize, size: usize) -> Clip {
    Clip {
        id: format!("rand-{t}"),
        split: Split::Test,
        size,
        frames: (0..t * 3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
        keypoints: vec![0.5; t * NUM_KEYPOINTS * 2],
        glosses: vec![0],
    }
}

fn lengths(s: &mut Suite) {
    let cfg = RunConfig::default().model;
    let (model, store) = Stmc::new(&cfg, 11, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut wrong = Vec::new();
    for t in 4..=64 {
        let clip = random_clip(&mut rng, t, cfg.input_size);
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let frames = model.stack_frames::<f32>(&[&clip]).unwrap();
        let x = tape.constant(frames);
        let smc = model.smc.forward(&mut tape, &p, x).unwrap();
        let out = model.forward_clips(&mut tape, &p, &[&clip]).unwrap().remove(0);
        let steps = tape.shape(out.inter_logits)[0];
        let intra_ok = out.intra_logits.iter().all(|&l| tape.shape(l)[0] == steps);
        if tape.shape(smc.features)[0] != t || steps != (t / 2) / 2 || !intra_ok {
            wrong.push(t);
        }
    }
    s.report(
        "11 sequence-lengths",
        wrong.is_empty(),
        format!("T in 4..=64: SMC emits T feature sets and T' = floor(floor(T/2)/2); wrong at {wrong:?}"),
    );
}

struct Run {
    dev: EvalReport,
    /// First evaluated epoch with train WER <= 5%, and the wall time then.
    converged: Option<(usize, Duration)>,
    final_train_wer: f64,
    elapsed: Duration,
}

fn train_run(seed: u64, alpha: f64, epochs: usize) -> Run {
    let mut cfg = RunConfig::default();
    cfg.train.seed = seed;
    cfg.loss.alpha = alpha;
    let corpus = generate_corpus(&cfg.corpus()).unwrap();
    let vocab = Vocabulary::new(corpus.vocabulary.clone()).unwrap();
    let train: Vec<&Clip> = corpus.split(Split::Train).collect();
    let dev: Vec<&Clip> = corpus.split(Split::Dev).collect();
    let beam = cfg.train.beam_width;
    let mut trainer = Trainer::new(cfg, vocab).unwrap();
    let start = Instant::now();
    let mut converged = None;
    let mut final_train_wer = f64::NAN;
    for e in 1..=epochs {
        trainer.run_epoch(&train).unwrap();
        if e % 10 == 0 || e == epochs {
            let w = trainer.evaluate(&train, beam, false).unwrap().wer;
            if w <= 0.05 && converged.is_none() {
                converged = Some((e, start.elapsed()));
            }
            final_train_wer = w;
        }
    }
    let elapsed = start.elapsed();
    let dev = trainer.evaluate(&dev, beam, true).unwrap();
    println!(
        "  run seed={seed} alpha={alpha}: {epochs} epochs in {:.0}s, train WER {final_train_wer:.3}, dev WER {:.3}, per-cue [full, hand, face, pose] {:.3?}, keypoint err {:.2} cells",
        elapsed.as_secs_f64(),
        dev.wer,
        dev.cue_wer.unwrap(),
        dev.keypoint_error
    );
    Run { dev, converged, final_train_wer, elapsed }
}

fn training(s: &mut Suite) {
    let epochs: usize = std::env::var("STMC_ACCEPT_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(80);
    let joint: Vec<Run> = (0..3).map(|seed| train_run(seed, 0.6, epochs)).collect();
    let plain: Vec<Run> = (0..3).map(|seed| train_run(seed, 0.0, epochs)).collect();

    let r0 = &joint[0];
    let conv = match r0.converged {
        Some((e, t)) => format!("train WER <= 5% at epoch {e} after {:.0}s", t.as_secs_f64()),
        None => format!("train WER {:.3} after {epochs} epochs", r0.final_train_wer),
    };
    let fast = r0.converged.is_some_and(|(e, t)| e <= 200 && t.as_secs() <= 15 * 60);
    s.report(
        "7 overfit",
        fast && r0.dev.wer <= 0.20,
        format!(
            "seed 0: {conv} (limits 200 epochs, 15 min), dev WER {:.3} (limit 0.20); full run {:.0}s",
            r0.dev.wer,
            r0.elapsed.as_secs_f64()
        ),
    );

    let inter = median(joint.iter().map(|r| r.dev.wer).collect());
    let cue = |k: usize| median(joint.iter().map(|r| r.dev.cue_wer.unwrap()[k]).collect());
    let (full, pose) = (cue(0), cue(NUM_CUES - 1));
    s.report(
        "8 cue-ordering",
        inter <= full && full <= pose,
        format!("median dev WER over 3 seeds: inter {inter:.3} <= full {full:.3} <= pose {pose:.3}"),
    );

    let with = median(joint.iter().map(|r| r.dev.wer).collect());
    let without = median(plain.iter().map(|r| r.dev.wer).collect());
    s.report(
        "9 intra-loss-helps",
        without >= with,
        format!("median dev WER over 3 seeds: alpha=0 {without:.3} >= alpha=0.6 {with:.3}"),
    );

    let kp = median(joint.iter().map(|r| r.dev.keypoint_error).collect());
    s.report("10 keypoint-error", kp <= 1.5, format!("median dev keypoint error {kp:.3} cells on the 24x24 map (limit 1.5)"));
}

fn main() {
    let mut s = Suite { failed: Vec::new() };
    ctc_vs_brute_force(&mut s);
    partition(&mut s);
    gradients(&mut s);
    soft_argmax(&mut s);
    decoders(&mut s);
    wer_and_collapse(&mut s);
    lengths(&mut s);
    training(&mut s);
    if s.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing {:?}", s.failed);
        std::process::exit(1);
    }
}
