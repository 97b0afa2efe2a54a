use proptest::prelude::*;

use grnp::config::KvConfig;
use grnp::corpus::{canonicalize, split_dataset, synth, tokenize, SplitSpec};
use grnp::nn::Tensor;
use grnp::poem::{Quatrain, TokenId, EOQ, EOV, NUM_RESERVED};
use grnp::rl::{clipped_objective, gae, normalize_advantages, rewards_to_go, VolleyConfig};
use grnp::sampling::{support, Strategy as Sampling};

fn probs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..max_len).prop_filter_map("all zero", |v| {
        let z: f64 = v.iter().sum();
        (z > 1e-6).then(|| v.iter().map(|x| x / z).collect())
    })
}

fn verses() -> impl Strategy<Value = Vec<Vec<TokenId>>> {
    prop::collection::vec(prop::collection::vec(NUM_RESERVED..200usize, 1..8), 4)
}

proptest! {
    #[test]
    fn rewards_to_go_recursion(r in prop::collection::vec(-5.0f64..5.0, 1..30), gamma in 0.0f64..=1.0) {
        let g = rewards_to_go(&r, gamma);
        let n = r.len();
        prop_assert!((g[n - 1] - r[n - 1]).abs() < 1e-12);
        for t in 0..n - 1 {
            prop_assert!((g[t] - (r[t] + gamma * g[t + 1])).abs() < 1e-9);
        }
    }

    #[test]
    fn gae_with_unit_lambda_is_return_minus_value(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        gamma in 0.0f64..=1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let a = gae(&r, &v, 0.0, gamma, 1.0).unwrap();
        let g = rewards_to_go(&r, gamma);
        for t in 0..r.len() {
            prop_assert!((a[t] - (g[t] - v[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_advantages_are_standardized(mut a in prop::collection::vec(-100.0f64..100.0, 2..50)) {
        let spread = a.iter().cloned().fold(f64::MIN, f64::max) - a.iter().cloned().fold(f64::MAX, f64::min);
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        if spread > 1e-6 {
            let var = a.iter().map(|x| x * x).sum::<f64>() / n;
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clipped_objective_never_exceeds_unclipped(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, eps in 0.01f64..0.5) {
        let c = clipped_objective(ratio, adv, eps);
        prop_assert!(c <= ratio * adv + 1e-12);
        if (1.0 - eps..=1.0 + eps).contains(&ratio) {
            prop_assert!((c - ratio * adv).abs() < 1e-12);
        }
    }

    #[test]
    fn nucleus_support_is_minimal_prefix(p in probs(20), top in 0.01f64..=1.0) {
        let s = support(&p, Sampling::Nucleus(top)).unwrap();
        let total: f64 = s.iter().map(|&(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let mass: f64 = s.iter().map(|&(i, _)| p[i]).sum();
        prop_assert!(mass >= top - 1e-9);
        let without_last: f64 = s[..s.len() - 1].iter().map(|&(i, _)| p[i]).sum();
        prop_assert!(without_last < top);
        let smallest = s.iter().map(|&(i, _)| p[i]).fold(f64::MAX, f64::min);
        for (i, &q) in p.iter().enumerate() {
            if !s.iter().any(|&(j, _)| j == i) {
                prop_assert!(q <= smallest);
            }
        }
    }

    #[test]
    fn top_k_support_holds_largest(p in probs(20), k in 1usize..10) {
        let s = support(&p, Sampling::TopK(k)).unwrap();
        prop_assert!(s.len() <= k);
        prop_assert!(s.iter().all(|&(i, _)| p[i] > 0.0));
        let smallest = s.iter().map(|&(i, _)| p[i]).fold(f64::MAX, f64::min);
        let outside = p.iter().enumerate().filter(|(i, _)| !s.iter().any(|&(j, _)| j == *i));
        for (_, &q) in outside {
            prop_assert!(q <= smallest);
        }
    }

    #[test]
    fn quatrain_replacement_keeps_layout(v in verses(), pick in any::<prop::sample::Index>(), tok in NUM_RESERVED..200usize) {
        let q = Quatrain::from_verses(&v).unwrap();
        prop_assert_eq!(q.verses().len(), 4);
        prop_assert_eq!(q.num_words(), v.iter().map(Vec::len).sum::<usize>());
        prop_assert_eq!(*q.tokens().last().unwrap(), EOQ);
        let mut r = q.clone();
        let j = pick.index(q.num_words());
        let old = r.replace_word(j, tok).unwrap();
        prop_assert_eq!(old, q.word(j).unwrap());
        prop_assert_eq!(r.word(j), Some(tok));
        prop_assert_eq!(r.num_words(), q.num_words());
        let markers = |x: &Quatrain| x.tokens().iter().filter(|&&t| t == EOV || t == EOQ).count();
        prop_assert_eq!(markers(&r), 4);
    }

    #[test]
    fn canonical_labels_are_fixed_points(s in "[A-Z]{1,8}") {
        let c = canonicalize(&s);
        prop_assert_eq!(canonicalize(&c), c.clone());
        prop_assert!(c.starts_with('A'));
        // Each new letter is the next unused one.
        let mut next = b'A';
        for b in c.bytes() {
            prop_assert!(b <= next);
            if b == next {
                next += 1;
            }
        }
    }

    #[test]
    fn tokenize_keeps_every_character(line in "[ a-zA-Z,.;!'-]{0,40}") {
        let toks = tokenize(&line);
        prop_assert!(toks.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        let joined: String = toks.concat();
        let expect: String = line.to_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, expect);
    }

    #[test]
    fn splits_partition_the_input(n in 3usize..200, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b, c) = split_dataset(&items, SplitSpec::Ratios([0.8, 0.1, 0.1]), seed).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn matmul_matches_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = Tensor::new(vec![m, k], a.clone()).unwrap().matmul(&Tensor::new(vec![k, n], b.clone()).unwrap()).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
                prop_assert!((c.data()[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_text_round_trips(gamma in 0.0f64..=1.0, epochs in 1usize..50, mb in 1usize..1000) {
        let cfg = VolleyConfig { gamma, epochs, minibatch: mb, ..VolleyConfig::default() };
        let mut back = VolleyConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Each verse takes the letter of the first earlier verse it rhymes
    /// with, or a fresh one.
    #[test]
    fn scheme_labels_follow_first_rhyme(idx in prop::collection::vec(any::<prop::sample::Index>(), 4)) {
        let rhymer = synth::desk_rhymer();
        let words = rhymer.dict().words();
        let ws: Vec<&str> = idx.iter().map(|i| words[i.index(words.len())].as_str()).collect();
        let label = rhymer.label_scheme(&ws).unwrap();
        let l = label.as_bytes();
        prop_assert_eq!(canonicalize(label.as_str()), label.as_str());
        for i in 0..4 {
            if let Some(j) = (0..i).find(|&j| rhymer.rhymes(ws[j], ws[i])) {
                prop_assert_eq!(l[i], l[j]);
            } else {
                prop_assert!((0..i).all(|j| l[j] != l[i]));
            }
        }
    }
}
