use entmemnet::corpus::{
    annotate_entities, parse_babi, simulate, write_babi, EmbeddingTable, Lexicon, WorldConfig,
};
use entmemnet::entmem::{generalize, init_slot, EntityInit, F2Params, MemoryPool};
use entmemnet::numgrad::{seeded_rng, softmax, ParamSet, Shape, Tape, Tensor};
use entmemnet::qanet::{loss_full, loss_weak, output_feature, RetrievalParams};
use entmemnet::seqcells::{GruParams, SentenceVec};
use entmemnet::{Error, TrainConfig};
use proptest::prelude::*;

fn vec_strategy(n: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, n)
}

fn pool_from(states: &[Vec<f64>], dim: usize) -> MemoryPool {
    let mut table = EmbeddingTable::new(dim);
    let names: Vec<String> = (0..states.len()).map(|i| format!("e{i}")).collect();
    for (n, s) in names.iter().zip(states) {
        table.insert(n, s.clone()).unwrap();
    }
    let init = EntityInit::new(table, 0);
    let mut pool = MemoryPool::new(0, dim);
    for (i, n) in names.iter().enumerate() {
        init_slot(&mut pool, n, &init, i).unwrap();
    }
    pool
}

fn sentence(v: Vec<f64>) -> SentenceVec {
    SentenceVec {
        vector: Tensor::vector(v).unwrap(),
        source: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalised_and_shift_invariant(x in vec_strategy(7, 20.0), c in -50.0f64..50.0) {
        let a = softmax(&Tensor::vector(x.clone()).unwrap()).unwrap();
        prop_assert!((a.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = softmax(&Tensor::vector(shifted).unwrap()).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear(w in vec_strategy(12, 1.0), x in vec_strategy(4, 1.0)) {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::matrix(3, 4, w).unwrap()).unwrap();
        let grads = |which: u8| {
            let mut tape = Tape::new();
            let wv = tape.param(&ps, "w").unwrap();
            let xv = tape.leaf(Tensor::vector(x.clone()).unwrap());
            let y = tape.matvec(wv, xv).unwrap();
            let t = tape.tanh(y).unwrap();
            let l1 = tape.sq_norm(t).unwrap();
            let l2 = tape.sum(y).unwrap();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => tape.add(l1, l2).unwrap(),
            };
            tape.backward(loss, &ps).unwrap()
        };
        let (g1, g2, g12) = (grads(1), grads(2), grads(3));
        let (a, b, s) = (g1.get("w").unwrap(), g2.get("w").unwrap(), g12.get("w").unwrap());
        for i in 0..12 {
            prop_assert!((a.values()[i] + b.values()[i] - s.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_update_gate_keeps_state(h in vec_strategy(4, 1.0), x in vec_strategy(3, 1.0), seed in any::<u64>()) {
        let mut g = GruParams::random(3, 4, 0.5, &mut seeded_rng(seed)).unwrap();
        g.params.get_mut("b_z").unwrap().values_mut().iter_mut().for_each(|b| *b = -50.0);
        let ht = Tensor::vector(h.clone()).unwrap();
        let out = g.step(&ht, &Tensor::vector(x).unwrap()).unwrap();
        for (a, b) in out.values().iter().zip(&h) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn generalize_touches_only_listed_slots(
        states in prop::collection::vec(vec_strategy(3, 0.5), 2..6),
        pick in prop::collection::vec(any::<prop::sample::Index>(), 1..3),
        target in vec_strategy(4, 0.9),
        seed in any::<u64>(),
    ) {
        let mut pool = pool_from(&states, 3);
        let listed: Vec<String> = pick.iter().map(|i| format!("e{}", i.index(states.len()))).collect();
        let before = pool.clone();
        let f2 = F2Params::random(3, 4, &mut seeded_rng(seed)).unwrap();
        generalize(&mut pool, &listed, &sentence(target), &f2, 3, 0.05).unwrap();
        for slot in before.slots() {
            if !listed.contains(&slot.token) {
                prop_assert_eq!(&pool.get(&slot.token).unwrap().state, &slot.state);
            }
        }
    }

    #[test]
    fn retrieval_invariants(
        states in prop::collection::vec(vec_strategy(3, 1.0), 1..6),
        q in vec_strategy(3, 1.0),
        hops in 1usize..7,
        eps in prop_oneof![Just(1e-12), 1e-3f64..0.5],
        seed in any::<u64>(),
    ) {
        let p = RetrievalParams::random(3, 3, &mut seeded_rng(seed)).unwrap();
        let pool = pool_from(&states, 3);
        let trace = output_feature(&pool, &sentence(q.clone()), &p, hops, eps).unwrap();
        let mut tokens: Vec<&str> = trace.hops.iter().map(|h| h.token.as_str()).collect();
        prop_assert!(!tokens.is_empty() && tokens.len() <= hops.min(states.len()));
        tokens.sort_unstable();
        tokens.dedup();
        prop_assert_eq!(tokens.len(), trace.hops.len());
        // Only the final hop may fall below the stopping threshold, and a
        // trace shorter than the budget must have stopped there.
        let n = trace.hops.len();
        for h in &trace.hops[..n - 1] {
            prop_assert!(h.rel_change >= eps);
        }
        if n < hops.min(states.len()) {
            prop_assert!(trace.hops[n - 1].rel_change < eps);
        }
        let empty = MemoryPool::new(0, 3);
        prop_assert!(matches!(output_feature(&empty, &sentence(vec![0.1; 3]), &p, hops, eps), Err(Error::EmptyPool)));
    }

    #[test]
    fn losses_nonnegative_and_ordered(
        probs in vec_strategy(5, 1.0),
        scores in vec_strategy(4, 1.0),
        answer in 0usize..5,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1e-2,
        theta in 0.0f64..100.0,
    ) {
        let dist = softmax(&Tensor::vector(probs).unwrap()).unwrap();
        let named: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, s)| (format!("e{i}"), 1.0 / (1.0 + (-s).exp()))).collect();
        let related = vec!["e0".to_string()];
        let weak = loss_weak(&dist, answer, &[], gamma, lambda, theta);
        let full = loss_full(&named, &related, &dist, answer, &[], gamma, lambda, theta).unwrap();
        prop_assert!(weak >= 0.0 && full >= weak);
    }

    #[test]
    fn babi_round_trip(stories in 0usize..8, moves in 1usize..6, questions in 0usize..4, seed in any::<u64>()) {
        let cfg = WorldConfig { stories, moves_per_story: moves, questions_per_story: questions, seed, ..WorldConfig::default() };
        let generated = simulate(&cfg).unwrap();
        let text = write_babi(&generated);
        let parsed = parse_babi(&text, &Lexicon::default()).unwrap();
        prop_assert_eq!(write_babi(&parsed), text);
        for (a, b) in parsed.iter().zip(&generated) {
            prop_assert_eq!(&a.statements, &b.statements);
            prop_assert_eq!(&a.questions, &b.questions);
        }
    }

    #[test]
    fn annotation_idempotent(words in prop::collection::vec(prop::sample::select(vec!["Mary", "went", "to", "the", "garden", "Bob", "she", "."]), 0..12)) {
        let lex = Lexicon::default();
        let once = annotate_entities(&words, &lex);
        prop_assert_eq!(annotate_entities(&words, &lex), once.clone());
        // distinct, and in order of the first position where each qualifies
        let qualifies = |i: usize, w: &str| lex.contains(&w.to_lowercase()) || (i > 0 && w.starts_with(char::is_uppercase));
        let first: Vec<usize> = once
            .iter()
            .map(|e| words.iter().enumerate().position(|(i, w)| w.to_lowercase() == *e && qualifies(i, w)).unwrap())
            .collect();
        prop_assert!(first.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_round_trip(eps in 1e-9f64..1.0, lr in 1e-6f64..1.0, seed in any::<u64>(), hops in 1usize..10) {
        let c = TrainConfig { eps, qa_lr: lr, seed, max_hops: hops, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::parse(&c.to_kv()).unwrap(), c);
    }
}

#[test]
fn shape_errors_are_reported() {
    let p = RetrievalParams::random(3, 3, &mut seeded_rng(1)).unwrap();
    let pool = pool_from(&[vec![0.1; 3]], 3);
    assert!(output_feature(&pool, &sentence(vec![0.0; 4]), &p, 2, 1e-3).is_err());
    assert_eq!(Tensor::zeros(Shape::Vector(2)).len(), 2);
}
