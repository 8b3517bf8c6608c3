use std::collections::HashSet;

use lgfusion::annotool::*;
use lgfusion::objective::Emotion;
use lgfusion::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use Emotion::*;

fn profile(id: &str, s: [f64; 5], gender: Gender) -> AnnotatorProfile {
    AnnotatorProfile {
        id: id.into(),
        we: s[0],
        ms: s[1],
        eb: s[2],
        cb: s[3],
        lp: s[4],
        gender,
    }
}

#[test]
fn assignment_score_examples() {
    let p = |s| assignment_score(&profile("x", s, Gender::Male)).unwrap();
    assert!((p([1.0; 5]) - 1.0).abs() < 1e-12);
    assert!((p([0.5, 0.8, 0.7, 0.6, 0.9]) - 0.66).abs() < 1e-12);
    assert_eq!(p([0.0; 5]), 0.0);
    let bad = profile("x", [0.5, 1.2, 0.0, 0.0, 0.0], Gender::Female);
    assert!(matches!(assignment_score(&bad), Err(Error::InvalidArgument { .. })));
}

#[test]
fn groups_have_a_leader_two_men_and_one_woman() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let profiles: Vec<_> = (0..14)
        .map(|i| {
            let s = [0; 5].map(|_| rng.gen::<f64>());
            profile(
                &format!("a{i:02}"),
                s,
                if i % 3 == 0 { Gender::Female } else { Gender::Male },
            )
        })
        .collect();
    let groups = form_groups(&profiles, 3).unwrap();
    let ranked = rank_annotators(&profiles).unwrap();
    let leaders: Vec<_> = groups.iter().map(|g| g.leader.clone()).collect();
    assert_eq!(leaders, ranked[..3].iter().map(|r| r.0.clone()).collect::<Vec<_>>());
    let mut used = HashSet::new();
    for g in &groups {
        assert!(used.insert(g.leader.clone()));
        let genders: Vec<Gender> = g
            .members
            .iter()
            .map(|m| {
                assert!(used.insert(m.clone()));
                profiles.iter().find(|p| &p.id == m).unwrap().gender
            })
            .collect();
        assert_eq!(genders.iter().filter(|&&x| x == Gender::Male).count(), 2);
        assert_eq!(genders.iter().filter(|&&x| x == Gender::Female).count(), 1);
    }
    assert!(form_groups(&profiles[..8], 3).is_err());
}

fn sample(prior: Emotion, current: [Emotion; 3]) -> CrossCheckSample {
    CrossCheckSample { prior, current }
}

fn set(category: Emotion, n: usize, samples: Vec<CrossCheckSample>) -> CrossCheckSet {
    CrossCheckSet {
        category,
        stage: CheckStage::A,
        sets_in_category: n,
        samples,
    }
}

#[test]
fn intra_consistency_examples() {
    let full = vec![sample(Fear, [Fear; 3]); 3];
    let mixed = vec![
        sample(Fear, [Fear, Sadness, Tension]),
        sample(Fear, [Fear, Fear, Tension]),
        sample(Fear, [Fear; 3]),
    ];
    let s = intra_consistency(&[set(Fear, 1, full.clone()), set(Fear, 1, mixed)]).unwrap();
    assert!((s - (1.0 + 6.0 / 9.0) / 2.0).abs() < 1e-12);
    assert!((s - 0.8333).abs() < 1e-4);
    assert_eq!(intra_consistency(&[set(Fear, 1, full)]).unwrap(), 1.0);
    let none = vec![sample(Fear, [Sadness; 3]); 4];
    assert_eq!(intra_consistency(&[set(Fear, 1, none)]).unwrap(), 0.0);
    assert!(matches!(intra_consistency(&[]), Err(Error::Empty(_))));
}

/// One stage of nine sets following the standard layout, each built by `make`.
fn stage(mut make: impl FnMut(Emotion) -> Vec<CrossCheckSample>) -> Vec<CrossCheckSet> {
    standard_stage_layout()
        .into_iter()
        .flat_map(|(e, n)| (0..n).map(move |_| (e, n)))
        .map(|(e, n)| set(e, n, make(e)))
        .collect()
}

fn other(e: Emotion, k: usize) -> Emotion {
    Emotion::ALL[(e.index() + k) % 6]
}

#[test]
fn standard_layout_has_nine_sets_weighing_six() {
    let sets = stage(|e| vec![sample(e, [e; 3])]);
    assert_eq!(sets.len(), 9);
    let w: f64 = sets.iter().map(|s| s.weight().unwrap()).sum();
    assert!((w - 6.0).abs() < 1e-12);
}

#[test]
fn inter_consistency_examples() {
    let perfect = stage(|e| vec![sample(e, [e; 3]); 100]);
    assert!((inter_consistency(&perfect, 6).unwrap() - 70.0).abs() < 1e-9);

    // 80 matched, 10 undecided, 10 resolved to another label: 0.7*80 + 0.3*10 = 59 per unit weight
    let typical = stage(|e| {
        let mut v = vec![sample(e, [e, e, other(e, 1)]); 80];
        v.extend(vec![sample(e, [other(e, 1), other(e, 2), other(e, 3)]); 10]);
        v.extend(vec![sample(e, [other(e, 1), other(e, 1), e]); 10]);
        v
    });
    let t = typical[0].tally().unwrap();
    assert_eq!((t.m, t.matched, t.more), (100, 80, 10));
    assert!((inter_consistency(&typical, 6).unwrap() - 59.0).abs() < 1e-9);

    let undecided = stage(|e| vec![sample(e, [other(e, 1), other(e, 2), other(e, 3)]); 100]);
    assert_eq!(inter_consistency(&undecided, 6).unwrap(), 0.0);

    let tallies: Vec<SetTally> = perfect
        .iter()
        .map(|s| SetTally {
            weight: s.weight().unwrap(),
            m: 100,
            matched: 80,
            more: 10,
        })
        .collect();
    assert!((inter_consistency_from_tallies(&tallies, 6).unwrap() - 59.0).abs() < 1e-9);
}

#[test]
fn inter_consistency_rejects_inconsistent_weights() {
    let mut sets = stage(|e| vec![sample(e, [e; 3]); 5]);
    sets[0].sets_in_category = 1;
    assert!(matches!(inter_consistency(&sets, 6), Err(Error::Config(_))));
    let sets = stage(|e| vec![sample(e, [e; 3]); 5]);
    assert!(matches!(inter_consistency(&sets[..8], 6), Err(Error::Config(_))));
    assert!(matches!(inter_consistency(&sets, 5), Err(Error::Config(_))));
}

fn emotion() -> impl Strategy<Value = Emotion> {
    (0usize..6).prop_map(|i| Emotion::ALL[i])
}

fn samples(m: usize) -> impl Strategy<Value = Vec<CrossCheckSample>> {
    prop::collection::vec(
        (emotion(), emotion(), emotion(), emotion()).prop_map(|(p, a, b, c)| sample(p, [a, b, c])),
        m,
    )
}

fn stage_samples() -> impl Strategy<Value = (usize, Vec<Vec<CrossCheckSample>>)> {
    (1usize..40).prop_flat_map(|m| (Just(m), prop::collection::vec(samples(m), 9)))
}

proptest! {
    #[test]
    fn consistency_scores_stay_in_range((m, per_set) in stage_samples()) {
        let mut it = per_set.into_iter();
        let sets = stage(|_| it.next().unwrap());
        let sa = intra_consistency(&sets).unwrap();
        prop_assert!((0.0..=1.0).contains(&sa));
        // S_r scales with m; normalized per 100 samples it lies in [0, 70]
        let sr = inter_consistency(&sets, 6).unwrap() * 100.0 / m as f64;
        prop_assert!((-1e-9..=70.0 + 1e-9).contains(&sr));
    }
}

#[test]
fn resolver_examples() {
    let r = resolve_label(&VoteRecord::new("s", [Fear, Fear, Sadness])).unwrap();
    assert_eq!(r, Resolution { label: Fear, stage: 1 });

    let mut v = VoteRecord::new("s", [Fear, Sadness, Tension]);
    v.leader_vote = Some(Fear);
    assert_eq!(resolve_label(&v).unwrap(), Resolution { label: Fear, stage: 2 });

    let mut v = VoteRecord::new("s", [Fear, Sadness, Tension]);
    v.leader_vote = Some(Neutral);
    v.exchange_vote = Some(Fear);
    v.expert_label = Some(Relaxation);
    assert_eq!(
        resolve_label(&v).unwrap(),
        Resolution {
            label: Relaxation,
            stage: 4
        }
    );
}

#[test]
fn resolver_reports_the_missing_vote() {
    let v = VoteRecord::new("s", [Fear, Sadness, Tension]);
    assert!(matches!(resolve_label(&v), Err(Error::MissingVote { stage: 2, .. })));
    let mut v = v;
    v.leader_vote = Some(Neutral);
    assert!(matches!(resolve_label(&v), Err(Error::MissingVote { stage: 3, .. })));
    v.exchange_vote = Some(Neutral);
    assert!(matches!(resolve_label(&v), Err(Error::MissingVote { stage: 4, .. })));
}

/// Direct restatement of the voting rules on plain counts.
fn oracle(members: [usize; 3], leader: usize, exchange: usize, expert: usize) -> (usize, u8) {
    let count = |votes: &[usize], l: usize| votes.iter().filter(|&&v| v == l).count();
    for &l in &members {
        if count(&members, l) >= 2 {
            return (l, 1);
        }
    }
    let four = [members[0], members[1], members[2], leader];
    let best = (0..6).map(|l| count(&four, l)).max().unwrap();
    let top: Vec<usize> = (0..6).filter(|&l| count(&four, l) == best).collect();
    if top.len() == 1 {
        return (top[0], 2);
    }
    let five = [four[0], four[1], four[2], four[3], exchange];
    if let Some(l) = (0..6).find(|&l| count(&five, l) >= 3) {
        return (l, 3);
    }
    (expert, 4)
}

#[test]
fn resolver_is_total_over_every_vote_path() {
    let mut paths = 0;
    let mut by_stage = [0usize; 5];
    for a in 0..6 {
        for b in 0..6 {
            for c in 0..6 {
                let votes = [a, b, c].map(|i| Emotion::ALL[i]);
                let bare = resolve_label(&VoteRecord::new("s", votes));
                let distinct = a != b && b != c && a != c;
                assert_eq!(bare.is_err(), distinct);
                for l in 0..6 {
                    for x in 0..6 {
                        for e in 0..6 {
                            let mut v = VoteRecord::new("s", votes);
                            v.leader_vote = Some(Emotion::ALL[l]);
                            v.exchange_vote = Some(Emotion::ALL[x]);
                            v.expert_label = Some(Emotion::ALL[e]);
                            let r = resolve_label(&v).unwrap();
                            let (label, stage) = oracle([a, b, c], l, x, e);
                            assert_eq!((r.label.index(), r.stage), (label, stage));
                            if r.stage == 4 {
                                assert_eq!(r.label, Emotion::ALL[e]);
                            }
                            by_stage[r.stage as usize] += 1;
                            paths += 1;
                        }
                    }
                }
            }
        }
    }
    assert_eq!(paths, 216 * 216);
    // 96 of the 216 member triples agree; the 120 distinct triples reach the leader
    assert_eq!(by_stage[1], 96 * 216);
    assert_eq!(by_stage[2], 120 * 3 * 36);
    assert_eq!(by_stage[3], 0);
    assert_eq!(by_stage[4], 120 * 3 * 36);
}

/// Fleiss' kappa from explicit per-rater labels by counting agreeing rater pairs.
fn kappa_oracle(ratings: &[Vec<usize>], k: usize) -> f64 {
    let n = ratings.len() as f64;
    let r = ratings[0].len();
    let pairs = (r * (r - 1)) as f64;
    let mut p_bar = 0.0;
    for item in ratings {
        let mut agree = 0;
        for i in 0..r {
            for j in 0..r {
                if i != j && item[i] == item[j] {
                    agree += 1;
                }
            }
        }
        p_bar += agree as f64 / pairs;
    }
    p_bar /= n;
    let total = n * r as f64;
    let p_e: f64 = (0..k)
        .map(|c| {
            let share = ratings.iter().flatten().filter(|&&x| x == c).count() as f64 / total;
            share * share
        })
        .sum();
    (p_bar - p_e) / (1.0 - p_e)
}

#[test]
fn kappa_matches_pairwise_oracle() {
    let ratings = vec![
        vec![0, 0, 1],
        vec![1, 1, 1],
        vec![2, 0, 2],
        vec![0, 1, 2],
        vec![3, 3, 0],
    ];
    let table = count_table(&ratings, 4).unwrap();
    let k = fleiss_kappa(&table).unwrap();
    assert!((k - kappa_oracle(&ratings, 4)).abs() < 1e-12);
}

#[test]
fn kappa_unanimity_and_degenerate_tables() {
    let table = count_table(&[vec![0, 0, 0], vec![2, 2, 2], vec![5, 5, 5]], 6).unwrap();
    assert_eq!(fleiss_kappa(&table).unwrap(), 1.0);
    let one_category = count_table(&[vec![1, 1, 1], vec![1, 1, 1]], 6).unwrap();
    assert!(matches!(fleiss_kappa(&one_category), Err(Error::Undefined(_))));
    assert!(matches!(
        fleiss_kappa(&[vec![1, 2], vec![3, 1]]),
        Err(Error::InvalidArgument { .. })
    ));
    assert!(matches!(fleiss_kappa(&[]), Err(Error::Empty(_))));
}

#[test]
fn kappa_of_independent_random_ratings_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ratings: Vec<Vec<usize>> = (0..1000)
        .map(|_| (0..3).map(|_| rng.gen_range(0..6)).collect())
        .collect();
    let k = fleiss_kappa(&count_table(&ratings, 6).unwrap()).unwrap();
    assert!(k.abs() < 0.05, "kappa {k}");
}

proptest! {
    #[test]
    fn kappa_is_invariant_under_relabeling(
        ratings in prop::collection::vec(prop::collection::vec(0usize..6, 4), 2..30),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let table = count_table(&ratings, 6).unwrap();
        let relabeled: Vec<Vec<usize>> = ratings.iter().map(|r| r.iter().map(|&c| perm[c]).collect()).collect();
        match (fleiss_kappa(&table), fleiss_kappa(&count_table(&relabeled, 6).unwrap())) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((a - kappa_oracle(&ratings, 6)).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "relabeling changed definedness: {:?}", other),
        }
    }
}

#[test]
fn mos_examples() {
    assert_eq!(mos_aggregate(&[4, 4, 4, 4]).unwrap(), 4.0);
    assert_eq!(mos_aggregate(&[3, 4, 4, 5]).unwrap(), 4.0);
    assert_eq!(mos_aggregate(&[1, 1, 1, 1]).unwrap(), 1.0);
    assert!(matches!(mos_aggregate(&[]), Err(Error::Empty(_))));
    assert!(mos_aggregate(&[0, 3]).is_err());
    let report = mos_report(&[MosEntry {
        dataset: "d".into(),
        ratings: vec![5, 4, 4, 4],
    }])
    .unwrap();
    assert_eq!(report[0].raters, 4);
    assert!((report[0].mos - 4.25).abs() < 1e-12);
}

#[test]
fn variant_sampling_on_corpus_counts() {
    let manifest = DatasetManifest::from_counts(&CORPUS_COUNTS);
    let cfg = VariantConfig::default();
    let split = sample_variants(&manifest, &cfg).unwrap();
    assert_eq!(split.balanced.len(), 14_462);
    assert_eq!(split.test.len(), 5_000);
    let bc = split.balanced.counts();
    assert_eq!(bc[&Excitation], 4000);
    assert_eq!(bc[&Neutral], 3000);
    for e in [Fear, Relaxation, Sadness, Tension] {
        assert_eq!(bc[&e], manifest.counts()[&e]);
    }
    assert_eq!(split.test.counts(), split.test_allocation);
    let total = manifest.len() as f64;
    for (e, n) in CORPUS_COUNTS {
        let exact = 5000.0 * n as f64 / total;
        assert!((split.test_allocation[&e] as f64 - exact).abs() < 1.0);
    }
    for variant in [&split.balanced, &split.test] {
        let ids: HashSet<&str> = variant.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), variant.len());
        let all: HashSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
        assert!(ids.is_subset(&all));
    }
    assert_eq!(sample_variants(&manifest, &cfg).unwrap(), split);
    let other = sample_variants(&manifest, &VariantConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.balanced, split.balanced);
}

#[test]
fn variant_sampling_reports_shortfalls() {
    let small = DatasetManifest::from_counts(&[(Excitation, 100), (Neutral, 5000), (Fear, 10)]);
    let err = sample_variants(&small, &VariantConfig::default()).unwrap_err();
    assert!(matches!(
        err,
        Error::InsufficientSamples {
            requested: 4000,
            available: 100,
            ..
        }
    ));
}

#[test]
fn largest_remainder_examples() {
    assert_eq!(largest_remainder(&[1, 1, 1], 10).unwrap(), vec![4, 3, 3]);
    assert_eq!(largest_remainder(&[2, 1], 3).unwrap(), vec![2, 1]);
    assert_eq!(largest_remainder(&[5, 3, 2], 7).unwrap(), vec![4, 2, 1]);
}

proptest! {
    #[test]
    fn largest_remainder_sums_exactly(weights in prop::collection::vec(0usize..10_000, 1..8), total in 0usize..20_000) {
        prop_assume!(weights.iter().sum::<usize>() > 0);
        let a = largest_remainder(&weights, total).unwrap();
        prop_assert_eq!(a.iter().sum::<usize>(), total);
        let sum: usize = weights.iter().sum();
        for (w, x) in weights.iter().zip(&a) {
            prop_assert!((*x as f64 - (*w * total) as f64 / sum as f64).abs() < 1.0);
        }
    }
}

const JSONL: &str = r#"
{"sample_id":"v1","stage":"sA","set":"fear-1","category":"Fear","prior_label":"Fear","votes":["Fear","Fear","Sadness"],"confidences":[0.8,0.7,0.6]}
{"sample_id":"v2","stage":"sA","set":"fear-1","category":"Fear","prior_label":"Fear","votes":["fear","Sadness","Tension"],"leader_vote":"Fear"}
{"sample_id":"v3","stage":"sB","set":"neu-1","category":"Neutral","prior_label":"Neutral","votes":["Neutral","Neutral","Neutral"]}
"#;

const CSV: &str = "sample_id,stage,set,category,prior_label,votes,confidences,leader_vote,exchange_vote,expert_label
v1,sA,fear-1,Fear,Fear,Fear;Fear;Sadness,0.8;0.7;0.6,,,
v2,sA,fear-1,Fear,Fear,fear|Sadness|Tension,,Fear,,
v3,sB,neu-1,Neutral,Neutral,Neutral;Neutral;Neutral,,,,
";

#[test]
fn jsonl_and_csv_ingest_identically() {
    let a = read_jsonl(JSONL.as_bytes()).unwrap();
    let b = read_csv(CSV.as_bytes()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    let resolved: Vec<_> = a
        .iter()
        .map(|r| resolve_label(&r.to_vote_record().unwrap()).unwrap())
        .collect();
    assert_eq!(resolved[1], Resolution { label: Fear, stage: 2 });
    let sets = cross_check_sets(&a, CheckStage::A).unwrap();
    assert_eq!(sets.len(), 1);
    assert_eq!(sets[0].samples.len(), 2);
    assert_eq!(sets[0].sets_in_category, 1);
    assert!((intra_consistency(&sets).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn malformed_records_are_rejected() {
    assert!(read_jsonl(r#"{"sample_id":"x","votes":["Joy","Fear","Fear"]}"#.as_bytes()).is_err());
    let two = read_jsonl(r#"{"sample_id":"x","votes":["Fear","Fear"]}"#.as_bytes()).unwrap();
    assert!(two[0].to_vote_record().is_err());
    assert!(read_csv("sample_id,votes\nx,Fear;Fear;Nope\n".as_bytes()).is_err());
}
