use fsrfm::anneal::{boltzmann_probabilities, enumerate_feasible};
use fsrfm::fm::{amsgrad_step, loss_and_gradients, total_loss};
use fsrfm::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(n: usize, k: usize, seed: u64) -> FmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params(n, k, 0.5, seed).unwrap();
    p.set_a(rng.random_range(-1.0..1.0));
    p
}

fn random_space(counts: &[usize]) -> GridSpace {
    GridSpace::new(
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Block::new(-(i as f64) - 1.0, i as f64 + 1.0, c))
            .collect(),
    )
    .unwrap()
}

fn bits_of(word: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| word >> i & 1 == 1).collect()
}

fn naive_predict(p: &FmParams, x: &[bool]) -> f64 {
    let n = x.len();
    let mut h = p.a();
    for i in 0..n {
        if x[i] {
            h += p.b()[i];
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if x[i] && x[j] {
                let dot: f64 = p.v_row(i).iter().zip(p.v_row(j)).map(|(a, b)| a * b).sum();
                h += dot;
            }
        }
    }
    h
}

fn random_dataset(n: usize, m: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut data = TrainingSet::new(n);
    for _ in 0..m {
        let x: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        data.push_bits(&x, rng.random_range(-2.0..2.0)).unwrap();
    }
    data
}

fn chain(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factorized_predict_matches_double_sum(n in 1usize..14, k in 1usize..5, seed in any::<u64>(), word in any::<u64>()) {
        let p = random_params(n, k, seed);
        let x = bits_of(word, n);
        let fast = p.predict(&x).unwrap();
        let slow = naive_predict(&p, &x);
        prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }

    #[test]
    fn gradients_match_central_differences(
        n in 2usize..10, k in 1usize..4, m in 1usize..8, seed in any::<u64>(),
        lambda_sr in prop::sample::select(vec![0.0, 0.1, 10.0]),
        lambda_l2 in prop::sample::select(vec![0.0, 0.1]),
    ) {
        let p = random_params(n, k, seed);
        let data = random_dataset(n, m, seed);
        let adj = chain(n);
        let (_, g) = loss_and_gradients(&p, &data, &adj, lambda_sr, lambda_l2).unwrap();
        let loss = |q: &FmParams| total_loss(q, &data, &adj, lambda_sr, lambda_l2).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            (analytic - numeric).abs() <= 1e-6 * analytic.abs().max(numeric.abs()).max(1.0)
        };
        let mut q = p.clone();
        q.set_a(p.a() + h);
        let up = loss(&q);
        q.set_a(p.a() - h);
        let down = loss(&q);
        prop_assert!(check(g.da, (up - down) / (2.0 * h)));
        for i in 0..n {
            let mut q = p.clone();
            q.b_mut()[i] += h;
            let up = loss(&q);
            q.b_mut()[i] -= 2.0 * h;
            let down = loss(&q);
            prop_assert!(check(g.db[i], (up - down) / (2.0 * h)), "db[{}]", i);
        }
        for idx in 0..n * k {
            let mut q = p.clone();
            q.v_mut()[idx] += h;
            let up = loss(&q);
            q.v_mut()[idx] -= 2.0 * h;
            let down = loss(&q);
            prop_assert!(check(g.dv[idx], (up - down) / (2.0 * h)), "dv[{}]", idx);
        }
    }

    #[test]
    fn encode_decode_round_trip(counts in prop::collection::vec(2usize..9, 1..5), seed in any::<u64>()) {
        let space = random_space(&counts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = counts.iter().map(|&c| rng.random_range(0..c)).collect();
        let bits = space.encode(&idx).unwrap();
        prop_assert_eq!(bits.iter().filter(|b| **b).count(), counts.len());
        prop_assert_eq!(space.decode(&bits).unwrap(), idx);
    }

    #[test]
    fn penalty_is_exact_square(c in 2usize..5, alpha in 0.01f64..100.0) {
        let space = random_space(&[c]);
        let q = space.penalty_qubo(alpha).unwrap();
        let mut gap = f64::INFINITY;
        for word in 0..1u64 << c {
            let x = bits_of(word, c);
            let set = x.iter().filter(|b| **b).count() as f64;
            let expected = alpha * (set - 1.0).powi(2);
            let e = q.energy(&x).unwrap();
            prop_assert!((e - expected).abs() <= 1e-12 * alpha.max(1.0));
            if set != 1.0 {
                gap = gap.min(e);
            }
        }
        prop_assert!((gap - alpha).abs() <= 1e-12 * alpha.max(1.0));
    }

    #[test]
    fn assembled_qubo_is_prediction_plus_penalty(counts in prop::collection::vec(2usize..5, 1..4), k in 1usize..4, seed in any::<u64>(), alpha in 0.1f64..10.0) {
        let space = random_space(&counts);
        let n = space.n_bits();
        let p = random_params(n, k, seed);
        let q = space.assemble_qubo(&p, alpha).unwrap();
        for word in 0..1u64 << n {
            let x = bits_of(word, n);
            let mut penalty = 0.0;
            for b in 0..space.n_blocks() {
                let start = space.offset(b);
                let set = x[start..start + space.blocks()[b].count].iter().filter(|v| **v).count() as f64;
                penalty += alpha * (set - 1.0).powi(2);
            }
            let expected = naive_predict(&p, &x) + penalty;
            prop_assert!((qubo_energy(&q, &x).unwrap() - expected).abs() <= 1e-9);
        }
    }

    #[test]
    fn adjacency_stays_inside_blocks(counts in prop::collection::vec(2usize..12, 1..6)) {
        let space = random_space(&counts);
        let pairs = space.adjacency_pairs();
        prop_assert_eq!(pairs.len(), counts.iter().map(|c| c - 1).sum::<usize>());
        for &(p, q) in &pairs {
            prop_assert_eq!(q, p + 1);
            let block = |i: usize| (0..space.n_blocks()).rev().find(|&b| space.offset(b) <= i).unwrap();
            prop_assert_eq!(block(p), block(q));
        }
    }

    #[test]
    fn annealer_energies_are_exact(n in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QuboMatrix::new(n);
        q.set_offset(rng.random_range(-1.0..1.0));
        for i in 0..n {
            for j in i..n {
                if rng.random_bool(0.5) {
                    q.add(i, j, rng.random_range(-3.0..3.0)).unwrap();
                }
            }
        }
        let schedule = AnnealSchedule { beta_start: 0.1, beta_end: 10.0, sweeps: 20, reads: 8, seed };
        let set = simulated_anneal(&q, &schedule).unwrap();
        prop_assert_eq!(set.num_reads(), 8);
        for s in set.samples() {
            prop_assert!((s.energy - q.energy(&s.bits).unwrap()).abs() <= 1e-9);
        }
        prop_assert_eq!(set, simulated_anneal(&q, &schedule).unwrap());
    }

    #[test]
    fn r_squared_matches_reference(values in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..50)) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let mean = pred.iter().sum::<f64>() / pred.len() as f64;
        let den: f64 = pred.iter().map(|p| (p - mean) * (p - mean)).sum();
        prop_assume!(den > 1e-9);
        let num: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t) * (p - t)).sum();
        let reference = 1.0 - num / den;
        let got = r_squared(&pred, &truth).unwrap();
        prop_assert!((got - reference).abs() <= 1e-12 * reference.abs().max(1.0));
    }

    #[test]
    fn untouched_bits_keep_their_initial_values(seed in any::<u64>(), skipped in 0usize..6) {
        let n = 6;
        let mut data = TrainingSet::new(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let active: Vec<usize> = (0..n).filter(|&i| i != skipped && rng.random_bool(0.5)).collect();
            data.push_active(active, rng.random_range(-1.0..1.0)).unwrap();
        }
        let p0 = init_params(n, 3, 0.1, seed).unwrap();
        let cfg = TrainConfig { n_updates: 200, ..Default::default() };
        let (p, _) = train(p0.clone(), &data, &cfg, &chain(n)).unwrap();
        prop_assert_eq!(p.b()[skipped].to_bits(), p0.b()[skipped].to_bits());
        for (a, b) in p.v_row(skipped).iter().zip(p0.v_row(skipped)) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn smoothing_alone_never_increases_roughness() {
    let space = GridSpace::uniform(2, 0.0, 1.0, 12).unwrap();
    let adj = space.adjacency_pairs();
    for seed in 0..4 {
        let mut params = init_params(space.n_bits(), 4, 0.3, seed).unwrap();
        // a single all-zero row contributes nothing but the bias residual
        let mut data = TrainingSet::new(space.n_bits());
        data.push_active(vec![], params.a()).unwrap();
        let mut state = AmsgradState::new(&params);
        let mut last = params.fsr_penalty(&adj).unwrap();
        for _ in 0..500 {
            let (_, g) = loss_and_gradients(&params, &data, &adj, 1.0, 0.0).unwrap();
            amsgrad_step(&mut state, &mut params, &g, 0.01).unwrap();
            let now = params.fsr_penalty(&adj).unwrap();
            assert!(now <= last + 1e-12, "seed {seed}: {last} -> {now}");
            last = now;
        }
    }
}

#[test]
fn boltzmann_draws_follow_exact_probabilities() {
    let space = random_space(&[4, 4]);
    let params = random_params(space.n_bits(), 2, 11);
    let beta = 1.5;
    let probs = boltzmann_probabilities(&params, &space, beta).unwrap();
    assert_eq!(probs.len(), 16);
    let index: Vec<Vec<usize>> = enumerate_feasible(&space).unwrap().map(|(i, _)| i).collect();
    let draws = boltzmann_sample(&params, &space, beta, 100_000, 5).unwrap();
    let mut counts = [0usize; 16];
    for d in &draws {
        counts[index.iter().position(|i| i == d).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| {
            let e = p * draws.len() as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 15 degrees of freedom, upper 1e-3 quantile
    assert!(chi2 < 37.697, "chi2 = {chi2}");
}

#[test]
fn trials_grow_and_improve_monotonically() {
    let h1 = H1::with_space(GridSpace::uniform(2, -5.12, 5.12, 21).unwrap()).unwrap();
    for seed in 0..3 {
        let config = LoopConfig {
            n_init: 5,
            n_steps: 4,
            reads_per_step: 3,
            rank: 4,
            seed,
            train: TrainConfig { n_updates: 50, lambda_sr: 0.1, ..Default::default() },
            ..Default::default()
        };
        let trial = run_trial(&h1, &config).unwrap();
        assert_eq!(trial.dataset.len(), 5 + 4 * 3);
        assert!(trial.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(trial, run_trial(&h1, &config).unwrap());
        let counts = success_count(&[trial.clone()], 0.0, 1.0).unwrap();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]));
    }
}
