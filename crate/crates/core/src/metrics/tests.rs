use std::collections::{BTreeMap, BTreeSet};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn pair(id: &str, c: &str, refs: &[&str]) -> EvalPair {
    EvalPair::new(id, toks(c), refs.iter().map(|r| toks(r)).collect()).unwrap()
}

const WORDS: [&str; 12] = [
    "a", "low", "high", "voice", "speaks", "fast", "slowly", "man", "woman", "the", "loud", "quiet",
];

fn random_caption(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn random_corpus(rng: &mut ChaCha8Rng, pairs: usize) -> Vec<EvalPair> {
    (0..pairs)
        .map(|i| {
            let refs = (0..rng.random_range(1..=3)).map(|_| random_caption(rng, 3, 10)).collect();
            EvalPair::new(format!("s{i}"), random_caption(rng, 2, 10), refs).unwrap()
        })
        .collect()
}

/// BLEU straight from its definition, with string-keyed counts.
fn bleu_oracle(pairs: &[EvalPair]) -> f64 {
    let gram = |t: &[String], n: usize| -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for i in 0..(t.len() + 1).saturating_sub(n) {
            *m.entry(t[i..i + n].join(" ")).or_insert(0) += 1;
        }
        m
    };
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (mut num, mut den) = (0usize, 0usize);
        for p in pairs {
            for (g, c) in gram(&p.candidate, n) {
                let max_ref = p.references.iter().map(|r| gram(r, n).get(&g).copied().unwrap_or(0)).max().unwrap();
                num += c.min(max_ref);
                den += c;
            }
        }
        if num == 0 {
            return 0.0;
        }
        log_p += 0.25 * (num as f64 / den as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let mut r = 0usize;
    for p in pairs {
        let mut best = p.references[0].len();
        for x in &p.references {
            let (d, bd) = (x.len().abs_diff(p.candidate.len()), best.abs_diff(p.candidate.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

fn lcs_oracle(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let v = if a[a.len() - 1] == b[b.len() - 1] {
        1 + lcs_oracle(&a[..a.len() - 1], &b[..b.len() - 1], memo)
    } else {
        lcs_oracle(&a[..a.len() - 1], b, memo).max(lcs_oracle(a, &b[..b.len() - 1], memo))
    };
    memo.insert(key, v);
    v
}

#[test]
fn bleu_self_is_one_and_disjoint_is_zero() {
    let p = vec![pair("a", "a man speaks with a low voice", &["a man speaks with a low voice"])];
    assert_eq!(bleu4(&p), 1.0);
    let q = vec![pair("a", "x y z w v", &["a b c d e"])];
    assert_eq!(bleu4(&q), 0.0);
    let empty = vec![EvalPair::new("e", vec![], vec![toks("a b c d")]).unwrap()];
    assert_eq!(bleu4(&empty), 0.0);
}

#[test]
fn bleu_matches_clean_room_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonzero = 0;
    for _ in 0..50 {
        let mut pairs = random_corpus(&mut rng, 20);
        // Plant some overlap so higher orders match.
        for p in pairs.iter_mut().step_by(3) {
            p.candidate = p.references[0].clone();
        }
        let (got, want) = (bleu4(&pairs), bleu_oracle(&pairs));
        assert_abs_diff_eq!(got, want, epsilon = 1e-6);
        nonzero += (got > 0.0) as usize;
    }
    assert!(nonzero > 40);
}

#[test]
fn bleu_counts_grow_with_a_perfect_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut pairs = random_corpus(&mut rng, 10);
        let before = bleu_counts(&pairs);
        let r = random_caption(&mut rng, 1, 8);
        pairs.push(EvalPair::new("extra", r.clone(), vec![r]).unwrap());
        let after = bleu_counts(&pairs);
        for n in 0..4 {
            assert!(after.matches[n] >= before.matches[n]);
        }
    }
}

#[test]
fn rouge_hand_example() {
    let p = [pair("a", "a b c d", &["a c d"])];
    let (prec, rec, b2) = (0.75, 1.0, 1.44);
    let want = (1.0 + b2) * prec * rec / (rec + b2 * prec);
    assert_abs_diff_eq!(rouge_l(&p), want, epsilon = 1e-12);
    assert_eq!(rouge_l(&[pair("a", "x y", &["x y"])]), 1.0);
    assert_eq!(rouge_l(&[pair("a", "x y", &["z w"])]), 0.0);
}

#[test]
fn rouge_matches_recursive_lcs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let c = random_caption(&mut rng, 1, 12);
        let r = random_caption(&mut rng, 1, 12);
        let l = lcs_oracle(&c, &r, &mut BTreeMap::new());
        let want = if l == 0 {
            0.0
        } else {
            let (p, rc) = (l as f64 / c.len() as f64, l as f64 / r.len() as f64);
            2.44 * p * rc / (rc + 1.44 * p)
        };
        assert_abs_diff_eq!(rouge_l_sample(&c, &[r]), want, epsilon = 1e-6);
    }
}

#[test]
fn meteor_hand_example() {
    // Exact matches only: m = 3, P = 1, R = 3/4, one chunk.
    let got = meteor_lite_sample(&toks("the cat sat"), &[toks("the cat sat quickly")]);
    let (p, r) = (1.0, 0.75);
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let pen = 0.5 * (1.0f64 / 3.0).powi(3);
    assert_abs_diff_eq!(got, fmean * (1.0 - pen), epsilon = 1e-12);
}

#[test]
fn meteor_identical_and_disjoint() {
    // One chunk over m matches leaves the residual penalty 0.5 / m^3.
    let t = toks("a woman speaks slowly with a high and loud voice");
    let m = t.len() as f64;
    assert_abs_diff_eq!(meteor_lite_sample(&t, &[t.clone()]), 1.0 - 0.5 / m.powi(3), epsilon = 1e-12);
    assert!(meteor_lite_sample(&t, &[t.clone()]) > 0.999);
    assert_eq!(meteor_lite_sample(&toks("x y"), &[toks("a b")]), 0.0);
}

#[test]
fn meteor_uses_stems_after_exact() {
    let exact = meteor_lite_sample(&toks("she speaks"), &[toks("she speaking")]);
    let none = meteor_lite_sample(&toks("she talks"), &[toks("she speaking")]);
    assert!(exact > none);
    let a = align(&toks("speaks speak"), &toks("speak speaking"));
    // `speak` matches exactly first; `speaks` then takes the stem match.
    assert_eq!(a, vec![(0, 1), (1, 0)]);
    assert_eq!(chunks(&a), 2);
}

#[test]
fn cider_single_pair_is_zero() {
    let p = [pair("a", "a low voice", &["a low voice"])];
    assert_eq!(cider_d(&p), 0.0);
}

#[test]
fn cider_disjoint_is_zero_and_identity_wins() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = random_corpus(&mut rng, 50);
    for p in &mut pairs {
        p.references.truncate(1);
    }
    let target = 7;
    let reference = pairs[target].references[0].clone();
    pairs[target].candidate = reference.clone();
    let best = cider_d_samples(&pairs)[target];
    for _ in 0..30 {
        let other = random_caption(&mut rng, 2, 10);
        if other == reference {
            continue;
        }
        pairs[target].candidate = other;
        assert!(best > cider_d_samples(&pairs)[target]);
    }
    pairs[target].candidate = toks("zzz yyy xxx");
    assert_eq!(cider_d_samples(&pairs)[target], 0.0);
}

/// CIDEr-D recomputed with string n-grams and explicit loops.
fn cider_oracle(pairs: &[EvalPair]) -> Vec<f64> {
    let grams = |t: &[String]| -> Vec<BTreeMap<String, f64>> {
        (1..=4)
            .map(|n| {
                let mut m = BTreeMap::new();
                for i in 0..(t.len() + 1).saturating_sub(n) {
                    *m.entry(t[i..i + n].join(" ")).or_insert(0.0) += 1.0;
                }
                m
            })
            .collect()
    };
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for p in pairs {
        let mut set = BTreeSet::new();
        for r in &p.references {
            for g in grams(r) {
                set.extend(g.into_keys());
            }
        }
        for g in set {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let n_docs = pairs.len() as f64;
    let weigh = |g: Vec<BTreeMap<String, f64>>| -> Vec<BTreeMap<String, f64>> {
        g.into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|(k, tf)| {
                        let d = df.get(&k).copied().unwrap_or(1.0).max(1.0);
                        (k, tf * (n_docs.ln() - d.ln()))
                    })
                    .collect()
            })
            .collect()
    };
    pairs
        .iter()
        .map(|p| {
            let h = weigh(grams(&p.candidate));
            let mut acc = 0.0;
            for r in &p.references {
                let rv = weigh(grams(r));
                let delta = p.candidate.len() as f64 - r.len() as f64;
                let mut per_n = 0.0;
                for n in 0..4 {
                    let nh: f64 = h[n].values().map(|v| v * v).sum::<f64>().sqrt();
                    let nr: f64 = rv[n].values().map(|v| v * v).sum::<f64>().sqrt();
                    let mut dot = 0.0;
                    for (k, v) in &h[n] {
                        if let Some(w) = rv[n].get(k) {
                            dot += v.min(*w) * w;
                        }
                    }
                    if nh > 0.0 && nr > 0.0 {
                        dot /= nh * nr;
                    }
                    per_n += dot * (-delta * delta / 72.0).exp();
                }
                acc += per_n / 4.0;
            }
            10.0 * acc / p.references.len() as f64
        })
        .collect()
}

#[test]
fn cider_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let mut pairs = random_corpus(&mut rng, 15);
        for p in pairs.iter_mut().step_by(4) {
            p.candidate = p.references[0].clone();
        }
        for (a, b) in cider_d_samples(&pairs).iter().zip(cider_oracle(&pairs)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }
}

#[test]
fn distinct_cases() {
    assert_eq!(distinct_n(&[toks("a b c d")], 1).unwrap(), 1.0);
    assert_eq!(distinct_n(&[toks("a a b"), toks("a c")], 1).unwrap(), 0.6);
    assert!(matches!(distinct_n(&[toks("a")], 2), Err(Error::Undefined(_))));
}

#[test]
fn distinct_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let corpus: Vec<Vec<String>> = (0..rng.random_range(1..8)).map(|_| random_caption(&mut rng, 2, 9)).collect();
        for n in [1, 2] {
            let mut all = Vec::new();
            for c in &corpus {
                for i in 0..c.len() + 1 - n {
                    all.push(c[i..i + n].join("\u{1}"));
                }
            }
            let unique: BTreeSet<_> = all.iter().collect();
            assert_eq!(distinct_n(&corpus, n).unwrap(), unique.len() as f64 / all.len() as f64);
        }
    }
}

struct Fixed(f64);

impl ExternalScorer for Fixed {
    fn name(&self) -> &str {
        "BS"
    }
    fn score(&self, pairs: &[EvalPair]) -> Result<Vec<f64>> {
        Ok(vec![self.0; pairs.len()])
    }
}

struct Broken;

impl ExternalScorer for Broken {
    fn name(&self) -> &str {
        "SPICE"
    }
    fn score(&self, _: &[EvalPair]) -> Result<Vec<f64>> {
        Err(Error::External("unreachable".into()))
    }
}

#[test]
fn report_columns_and_external_failures() {
    let pairs = vec![
        pair("1", "a low voice", &["a low voice"]),
        pair("2", "a man speaks fast", &["a man speaks fast"]),
    ];
    let r = evaluate_corpus(&pairs, &[]).unwrap();
    let cols: Vec<_> = r.corpus_scores.keys().cloned().collect();
    assert_eq!(cols, ["B@4", "C", "M-lite", "R", "distinct-1", "distinct-2"]);
    assert_eq!(r.corpus_scores["B@4"], 1.0);
    assert_eq!(r.corpus_scores["R"], 1.0);

    let with = evaluate_corpus(&pairs, &[&Fixed(0.9), &Broken]).unwrap();
    assert_eq!(with.corpus_scores["BS"], 0.9);
    assert!(!with.corpus_scores.contains_key("SPICE"));
    assert!(with.notes.iter().any(|n| n.contains("SPICE")));
    for k in cols {
        assert_eq!(with.corpus_scores[&k], r.corpus_scores[&k]);
    }
    assert_ne!(with.config_digest, r.config_digest);
    assert_eq!(
        with.column("M-lite"),
        pairs.iter().map(|p| (p.sample_id.clone(), meteor_lite_sample(&p.candidate, &p.references))).collect()
    );
}

#[test]
fn transport_scorer_failure_is_contained() {
    let t = crate::transport::JsonTransport::parse("cmd:false").unwrap();
    let s = TransportScorer::new("BS", t);
    let pairs = vec![pair("1", "a", &["a"])];
    let r = evaluate_corpus(&pairs, &[&s]).unwrap();
    assert!(!r.corpus_scores.contains_key("BS"));
}

proptest! {
    #[test]
    fn corpus_scores_ignore_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_corpus(&mut rng, 12);
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng);
        let a = evaluate_corpus(&pairs, &[]).unwrap();
        let b = evaluate_corpus(&shuffled, &[]).unwrap();
        for (k, v) in &a.corpus_scores {
            prop_assert!((v - b.corpus_scores[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_stay_in_range(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = evaluate_corpus(&random_corpus(&mut rng, 8), &[]).unwrap();
        for (k, v) in &r.corpus_scores {
            prop_assert!(v.is_finite());
            if k != "C" {
                prop_assert!((0.0..=1.0).contains(v), "{k} = {v}");
            } else {
                prop_assert!(*v >= 0.0);
            }
        }
    }
}
