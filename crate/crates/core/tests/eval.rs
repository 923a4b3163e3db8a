use deepsv::eval::{
    build_conditions, compute_eer, read_scores, read_trial_list, write_scores, write_segments, write_trials,
    ConditionSpec, Framing, ScoreRecord, ScoreSet, UttInfo,
};
use deepsv::frontend::Gender;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive sweep: every candidate threshold (each score and +inf) is
/// evaluated by counting over all trials; the EER is interpolated where
/// FA - miss first reaches zero. Returns percent.
fn brute_force_eer(scores: &[(f64, bool)]) -> f64 {
    let nt = scores.iter().filter(|s| s.1).count() as f64;
    let nn = scores.len() as f64 - nt;
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let rates = |th: f64| {
        let fa = scores.iter().filter(|s| !s.1 && s.0 >= th).count() as f64 / nn;
        let miss = scores.iter().filter(|s| s.1 && s.0 < th).count() as f64 / nt;
        (fa, miss)
    };
    let mut prev: Option<(f64, f64)> = None;
    for th in thresholds {
        let (fa, miss) = rates(th);
        if fa - miss <= 0.0 {
            return 100.0
                * match prev {
                    None => fa,
                    Some((pfa, pmiss)) => {
                        let (d0, d1) = (pfa - pmiss, fa - miss);
                        pfa + d0 / (d0 - d1) * (fa - pfa)
                    }
                };
        }
        prev = Some((fa, miss));
    }
    unreachable!()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, bool)> {
    let sep = rng.random_range(0.0..3.0);
    let quantize = rng.random_bool(0.3);
    let mut v: Vec<(f64, bool)> = (0..n)
        .map(|i| {
            let target = i % 2 == 0 || rng.random_bool(0.2);
            let mut s: f64 = rng.random_range(-1.0..1.0) + if target { sep } else { 0.0 };
            if quantize {
                s = (s * 4.0).round() / 4.0;
            }
            (s, target)
        })
        .collect();
    if v.iter().all(|s| s.1) {
        v[1].1 = false;
    }
    v
}

#[test]
fn eer_matches_exhaustive_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let n = rng.random_range(10..=2000);
        let s = random_set(&mut rng, n);
        let fast = compute_eer(&s).unwrap().eer;
        let slow = brute_force_eer(&s);
        assert!((fast - slow).abs() <= 1e-9, "n={n}: {fast} vs {slow}");
    }
}

#[test]
fn random_scores_give_chance_eer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s: Vec<(f64, bool)> = (0..2000).map(|i| (rng.random::<f64>(), i < 1000)).collect();
    let eer = compute_eer(&s).unwrap().eer;
    assert!((eer - 50.0).abs() <= 3.0, "{eer}");
}

proptest! {
    #[test]
    fn eer_invariant_under_monotone_maps(seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(10..300);
        let s = random_set(&mut rng, n);
        let base = compute_eer(&s).unwrap().eer;
        let affine: Vec<_> = s.iter().map(|&(x, t)| (a * x + b, t)).collect();
        let sigm: Vec<_> = s.iter().map(|&(x, t)| (1.0 / (1.0 + (-x).exp()), t)).collect();
        // identical induced orderings (including ties) give identical EERs
        let same_order = |m: &[(f64, bool)]| {
            s.iter().zip(m).all(|(p, q)| s.iter().zip(m).all(|(r, w)| (p.0 < r.0) == (q.0 < w.0) && (p.0 == r.0) == (q.0 == w.0)))
        };
        if same_order(&affine) {
            prop_assert_eq!(compute_eer(&affine).unwrap().eer, base);
        }
        if same_order(&sigm) {
            prop_assert_eq!(compute_eer(&sigm).unwrap().eer, base);
        }
    }

    #[test]
    fn eer_invariant_under_trial_permutation(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(10..300);
        let s = random_set(&mut rng, n);
        let mut p = s.clone();
        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
        prop_assert_eq!(compute_eer(&s).unwrap().eer, compute_eer(&p).unwrap().eer);
    }

    #[test]
    fn trial_counts_follow_the_combinatorics(
        per_gender in 1usize..6,
        utts in 3usize..8,
        enroll in 1usize..3,
    ) {
        let framing = Framing { sample_rate: 8000, frame_len: 200, frame_shift: 80 };
        let frames = framing.frames(4.0);
        let speakers = 2 * per_gender;
        let infos: Vec<UttInfo> = (0..speakers)
            .flat_map(|s| (0..utts).map(move |u| UttInfo {
                id: format!("s{s:02}-u{u}"),
                speaker: format!("s{s:02}"),
                gender: if s % 2 == 0 { Gender::Female } else { Gender::Male },
                num_frames: frames + 7,
            }))
            .collect();
        let cond = ConditionSpec { enrollments_per_speaker: enroll, ..ConditionSpec::new(4.0, 4.0) };
        let list = build_conditions(&infos, &cond, framing).unwrap();
        let tests_per = utts - enroll;
        prop_assert_eq!(list.num_targets(), speakers * enroll * tests_per);
        prop_assert_eq!(list.num_nontargets(), speakers * enroll * (per_gender - 1) * tests_per);
        for t in &list.trials {
            let e = list.segment(&t.enroll_id).unwrap();
            let x = list.segment(&t.test_id).unwrap();
            prop_assert_eq!(e.gender, x.gender);
            prop_assert_eq!(t.target, e.speaker == x.speaker);
            for p in &e.parts {
                prop_assert!(x.parts.iter().all(|q| q.utt_id != p.utt_id));
            }
        }
    }
}

#[test]
fn trial_and_score_files_round_trip() {
    let framing = Framing {
        sample_rate: 8000,
        frame_len: 200,
        frame_shift: 80,
    };
    let infos: Vec<UttInfo> = (0..4)
        .flat_map(|s| {
            (0..6).map(move |u| UttInfo {
                id: format!("s{s}-u{u}"),
                speaker: format!("s{s}"),
                gender: if s % 2 == 0 { Gender::Female } else { Gender::Male },
                num_frames: 450 + 10 * u,
            })
        })
        .collect();
    let list = build_conditions(&infos, &ConditionSpec::new(10.0, 4.0), framing).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (tp, sp) = (dir.path().join("c.trials.tsv"), dir.path().join("c.segments.tsv"));
    write_trials(&tp, &list).unwrap();
    write_segments(&sp, &list).unwrap();
    let back = read_trial_list(&tp, &sp).unwrap();
    assert_eq!(back.trials, list.trials);
    assert_eq!(back.enrollments, list.enrollments);
    assert_eq!(back.tests, list.tests);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set = ScoreSet {
        system: "dvector/cosine".into(),
        condition: list.condition.name.clone(),
        records: list
            .trials
            .iter()
            .map(|t| ScoreRecord {
                enroll_id: t.enroll_id.clone(),
                test_id: t.test_id.clone(),
                score: rng.random_range(-1.0..1.0) / 3.0,
                target: t.target,
            })
            .collect(),
    };
    let path = dir.path().join("s.tsv");
    write_scores(&path, &set).unwrap();
    assert_eq!(read_scores(&path).unwrap(), set);
}

#[test]
fn empty_score_set_is_reported() {
    let err = compute_eer(&[]).unwrap_err().to_string();
    assert!(err.contains("no trials"), "{err}");
}
