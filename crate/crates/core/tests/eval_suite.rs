use foragelab::env::{battery, Perturbation, WorldConfig};
use foragelab::eval::{
    ablation_csv, checkpoint_sweep, default_grid, evaluate_episodes, evaluate_success, extract_features, final_score, parse_site, r2_score, rdm_correlation,
    ridge_fit, ridge_fit_predict, run_ablation_protocol, train_test_split, AlignmentDataset, BehaviorSpec, Controller, EvalError, SurrogateCortex,
};
use foragelab::nn::{FeatureSite, Model, ModelCheckpoint, ModelSpec, RngState};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tiny_world() -> WorldConfig {
    WorldConfig::default().with_resolution(20, 24)
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn tiny_model(seed: u64, use_norm: bool, use_glu: bool) -> Model<f32> {
    let w = tiny_world();
    Model::new(ModelSpec::simple_cnn(w.render_height, w.render_width, use_norm, use_glu), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn checkpoint(model: Model<f32>, step: u64) -> ModelCheckpoint<f32> {
    ModelCheckpoint {
        model,
        step,
        env_steps: step,
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
    }
}

// Score arithmetic against the published result tables (percent units).

const RESULTS_TABLE: [(f64, f64, f64); 6] = [
    (80.96, 51.00, 65.98),
    (91.40, 84.00, 87.70),
    (72.60, 47.00, 59.80),
    (94.20, 89.00, 91.60),
    (95.60, 88.00, 91.80),
    (96.80, 94.00, 95.40),
];

const ABLATION_TABLE: [(f64, f64, f64); 4] = [(96.80, 94.00, 95.40), (95.60, 88.00, 91.80), (94.20, 89.00, 91.60), (94.20, 89.00, 91.60)];

#[test]
fn final_score_reproduces_the_result_tables() {
    for &(asr, msr, fin) in RESULTS_TABLE.iter().chain(&ABLATION_TABLE) {
        let got = final_score(asr / 100.0, msr / 100.0).unwrap();
        assert!((got * 100.0 - fin).abs() < 5e-5, "({asr}, {msr}) gave {got}, table says {fin}");
        assert_eq!(format!("{:.4}", got), format!("{:.4}", fin / 100.0));
    }
}

#[test]
fn final_score_rejects_out_of_range() {
    for (a, m) in [(1.01, 0.5), (0.5, -0.1), (f64::NAN, 0.5), (0.5, f64::INFINITY)] {
        assert!(matches!(final_score(a, m), Err(EvalError::Range(_))), "({a}, {m})");
    }
}

proptest! {
    #[test]
    fn final_score_is_the_mean(a in 0.0f64..=1.0, m in 0.0f64..=1.0) {
        let s = final_score(a, m).unwrap();
        prop_assert_eq!(s, (a + m) / 2.0);
        prop_assert_eq!(final_score(a, a).unwrap(), a);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}

// Ridge readout.

#[test]
fn ridge_recovers_a_realizable_linear_map() {
    let f = gaussian(300, 10, 1);
    let w = gaussian(10, 6, 2);
    let mut n = &f * &w;
    for (k, mut col) in n.column_iter_mut().enumerate() {
        col.add_scalar_mut(k as f64 - 2.5);
    }
    let (train, test) = train_test_split(300, 0.2, 3);
    let mut grid = vec![1e-10];
    grid.extend(default_grid());
    let r = ridge_fit_predict(&f, &n, &train, &test, &grid).unwrap();
    assert!(r.test_r2.mean > 0.999, "R² {}", r.test_r2.mean);
    assert!(grid.contains(&r.readout.strength));
    assert_eq!((r.train_rows, r.test_rows), (240, 60));
}

#[test]
fn ridge_on_pure_noise_has_no_skill() {
    let f = gaussian(2000, 10, 4);
    let n = gaussian(2000, 5, 5);
    let (train, test) = train_test_split(2000, 0.2, 6);
    let r = ridge_fit_predict(&f, &n, &train, &test, &default_grid()).unwrap();
    assert!(r.test_r2.mean <= 0.05, "R² {}", r.test_r2.mean);
}

#[test]
fn scalar_ridge_matches_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for lam in [0.0, 1e-3, 0.5, 10.0, 1e3] {
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.7 * v - 0.4 + rng.gen_range(-0.5..0.5)).collect();
        let (mx, my) = (x.iter().sum::<f64>() / 40.0, y.iter().sum::<f64>() / 40.0);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let w = sxy / (sxx + lam);
        let r = ridge_fit(&DMatrix::from_column_slice(40, 1, &x), &DMatrix::from_column_slice(40, 1, &y), lam);
        assert!((r.weights[(0, 0)] - w).abs() < 1e-8, "λ={lam}: {} vs {w}", r.weights[(0, 0)]);
        assert!((r.intercept[0] - (my - w * mx)).abs() < 1e-8);
    }
}

#[test]
fn unregularized_residuals_are_orthogonal_to_features() {
    let f = gaussian(80, 7, 8);
    let n = gaussian(80, 3, 9);
    let r = ridge_fit(&f, &n, 0.0);
    let resid = &n - r.predict(&f);
    let mut aug = DMatrix::from_element(80, 8, 1.0);
    aug.columns_mut(1, 7).copy_from(&f);
    let normal = aug.transpose() * resid;
    assert!(normal.abs().max() < 1e-8, "{}", normal.abs().max());
}

#[test]
fn constant_neurons_are_excluded_and_counted() {
    let truth = DMatrix::from_row_slice(4, 2, &[1.0, 3.0, 2.0, 3.0, 3.0, 3.0, 4.0, 3.0]);
    let pred = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0]);
    let s = r2_score(&truth, &pred);
    assert_eq!((s.mean, s.excluded), (1.0, 1));
    assert_eq!(s.per_neuron, vec![Some(1.0), None]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn training_r2_does_not_increase_with_strength(seed in any::<u64>(), rows in 8usize..40, cols in 1usize..6) {
        let f = gaussian(rows, cols, seed);
        let n = gaussian(rows, 2, seed ^ 0xabc) + &f * gaussian(cols, 2, seed.wrapping_add(1));
        let mut prev = f64::INFINITY;
        for lam in [0.0, 1e-4, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let r2 = r2_score(&n, &ridge_fit(&f, &n, lam).predict(&f)).mean;
            prop_assert!(r2 <= prev + 1e-12, "λ={} raised R² from {} to {}", lam, prev, r2);
            prev = r2;
        }
    }
}

// Representational dissimilarity.

#[test]
fn rdm_of_a_matrix_with_itself_is_one() {
    let f = gaussian(30, 12, 10);
    let r = rdm_correlation(&f, &f).unwrap();
    assert!((r.correlation - 1.0).abs() < 1e-9);
    assert_eq!((r.pairs, r.excluded_pairs), (435, 0));
}

#[test]
fn rdm_against_unrelated_data_is_near_zero() {
    let r = rdm_correlation(&gaussian(50, 20, 11), &gaussian(50, 20, 12)).unwrap();
    assert!(r.correlation.abs() < 0.2, "{}", r.correlation);
}

#[test]
fn constant_rows_are_excluded_from_the_rdm() {
    let mut f = gaussian(6, 5, 13);
    f.row_mut(2).fill(0.7);
    let r = rdm_correlation(&f, &gaussian(6, 5, 14)).unwrap();
    assert_eq!((r.pairs, r.excluded_pairs), (10, 5));
    assert!(matches!(rdm_correlation(&f.rows(0, 2).into_owned(), &f.rows(0, 2).into_owned()), Err(EvalError::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rdm_is_invariant_to_per_row_affine_maps(seed in any::<u64>(), rows in 3usize..20) {
        let a = gaussian(rows, 8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut b = a.clone() * 3.0;
        for mut row in b.row_iter_mut() {
            let (scale, shift): (f64, f64) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
            row *= scale;
            row.add_scalar_mut(shift);
        }
        let r = rdm_correlation(&a, &b).unwrap();
        prop_assert!((r.correlation - 1.0).abs() < 1e-9, "{}", r.correlation);
    }

    #[test]
    fn rdm_is_symmetric(seed in any::<u64>(), rows in 3usize..20) {
        let a = gaussian(rows, 6, seed);
        let b = gaussian(rows, 9, seed.wrapping_mul(31));
        let (ab, ba) = (rdm_correlation(&a, &b).unwrap(), rdm_correlation(&b, &a).unwrap());
        prop_assert!((ab.correlation - ba.correlation).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab.correlation));
    }
}

// Surrogate cortex and alignment dataset.

#[test]
fn surrogate_is_deterministic_and_shaped() {
    let world = WorldConfig::small();
    let stimuli = foragelab::eval::generate_stimuli(&world, 200, 21).unwrap();
    let c = SurrogateCortex::new(world.render_height, world.render_width, 100, 0.0, 22).unwrap();
    let a = c.responses(&stimuli).unwrap();
    assert_eq!(a.shape(), (200, 100));
    assert_eq!(a, c.responses(&stimuli).unwrap());
    let again = SurrogateCortex::new(world.render_height, world.render_width, 100, 0.0, 22).unwrap();
    assert_eq!(a, again.responses(&stimuli).unwrap());
}

#[test]
fn surrogate_predicts_itself_through_its_own_units() {
    let world = tiny_world();
    let c = SurrogateCortex::new(world.render_height, world.render_width, 60, 0.0, 23).unwrap();
    // More stimuli than filter-bank units, so the readout is not underdetermined.
    let stimuli = foragelab::eval::generate_stimuli(&world, 1200, 24).unwrap();
    let f = c.features(&stimuli).unwrap();
    assert!(f.ncols() < 960);
    let n = c.responses(&stimuli).unwrap();
    let (train, test) = train_test_split(1200, 0.2, 25);
    let mut grid = vec![1e-10];
    grid.extend(default_grid());
    let r = ridge_fit_predict(&f, &n, &train, &test, &grid).unwrap();
    assert!(r.test_r2.mean > 0.99, "R² {}", r.test_r2.mean);
}

#[test]
fn dataset_generation_is_reproducible() {
    let world = tiny_world();
    let c = SurrogateCortex::new(world.render_height, world.render_width, 30, 0.1, 26).unwrap();
    let a = AlignmentDataset::generate(&world, 20, 27, &c).unwrap();
    let b = AlignmentDataset::generate(&world, 20, 27, &c).unwrap();
    assert_eq!(a.encode(), b.encode());
    assert_eq!((a.rows(), a.neurons()), (20, 30));
    let back = AlignmentDataset::decode(&a.encode()).unwrap();
    assert_eq!(back.encode(), a.encode());
}

// Feature extraction.

#[test]
fn post_glu_features_have_the_hidden_width() {
    let world = WorldConfig::small();
    let model = Model::<f32>::new(ModelSpec::simple_cnn(world.render_height, world.render_width, true, true), &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    let stimuli = foragelab::eval::generate_stimuli(&world, 10, 31).unwrap();
    let f = extract_features(&model, &stimuli, FeatureSite::PostGlu).unwrap();
    assert_eq!(f.shape(), (10, 256));
}

#[test]
fn duplicated_stimuli_give_duplicated_rows() {
    let world = tiny_world();
    let model = tiny_model(32, true, true);
    let one = foragelab::eval::generate_stimuli(&world, 1, 33).unwrap();
    let two = [one.clone(), one].concat();
    for site in [FeatureSite::PostEncoder, FeatureSite::PostGlu] {
        let f = extract_features(&model, &two, site).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }
}

#[test]
fn zero_image_on_a_zero_bias_model_gives_zero_features() {
    let mut model = tiny_model(34, false, true);
    let ids: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).ends_with(".bias")).collect();
    for id in ids {
        model.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let f = extract_features(&model, &vec![0.0; model.input_len()], FeatureSite::PostGlu).unwrap();
    assert!(f.iter().all(|&v| v == 0.0));
}

#[test]
fn unknown_site_lists_the_valid_ones() {
    let err = parse_site("fc2").unwrap_err().to_string();
    assert!(err.contains("post-encoder") && err.contains("post-GLU"), "{err}");
}

// Behavioral protocol.

#[test]
fn oracle_succeeds_on_every_clean_episode() {
    let s = evaluate_success(Controller::StateOracle, &WorldConfig::small(), Perturbation::None, 100, 40).unwrap();
    assert_eq!((s.episodes, s.successes, s.rate), (100, 100, 1.0));
}

#[test]
fn random_policy_stays_near_the_floor() {
    let world = WorldConfig::small();
    let s = evaluate_success(Controller::Random, &world, Perturbation::None, 100, 41).unwrap();
    assert!(s.rate < 0.2, "random success rate {}", s.rate);
    assert_eq!(s, evaluate_success(Controller::Random, &world, Perturbation::None, 100, 41).unwrap());
}

#[test]
fn success_does_not_depend_on_episode_order() {
    let world = tiny_world();
    let model = tiny_model(42, true, true);
    let fog = Perturbation::Fog { density: 1.0 };
    let forward: Vec<usize> = (0..60).collect();
    let mut shuffled = forward.clone();
    shuffled.reverse();
    shuffled.swap(3, 40);
    let a = evaluate_episodes(Controller::Policy(&model), &world, fog, &forward, 43).unwrap();
    let b = evaluate_episodes(Controller::Policy(&model), &world, fog, &shuffled, 43).unwrap();
    assert_eq!(a, b);
    let head = evaluate_episodes(Controller::Policy(&model), &world, fog, &forward[..25], 43).unwrap();
    let tail = evaluate_episodes(Controller::Policy(&model), &world, fog, &forward[25..], 43).unwrap();
    assert_eq!(head.successes + tail.successes, a.successes);
}

#[test]
fn checkpoint_sweep_sorts_and_flags() {
    let world = tiny_world();
    let cortex = SurrogateCortex::new(world.render_height, world.render_width, 30, 0.1, 50).unwrap();
    let dataset = AlignmentDataset::generate(&world, 40, 51, &cortex).unwrap();
    let series: Vec<(String, ModelCheckpoint<f32>)> =
        [(30_000, 52), (10_000, 53), (20_000, 54), (20_000, 54)].iter().map(|&(step, s)| (format!("ckpt-{step}"), checkpoint(tiny_model(s, true, true), step))).collect();
    let spec = BehaviorSpec {
        world: world.clone(),
        battery: vec![Perturbation::Fog { density: 1.0 }],
        episodes: 4,
        seed: 55,
    };
    let report = checkpoint_sweep(&series, &dataset, FeatureSite::PostGlu, &spec).unwrap();
    let steps: Vec<u64> = report.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![10_000, 20_000, 20_000, 30_000]);
    assert_eq!(report.duplicate_steps, vec![20_000]);
    assert_eq!(report.rows.iter().filter(|r| r.best_r2).count(), 1);
    let best = report.rows.iter().map(|r| r.r2).fold(f64::NEG_INFINITY, f64::max);
    assert!(report.rows.iter().any(|r| r.best_r2 && r.r2 == best));
    let (a, b) = (&report.rows[1], &report.rows[2]);
    assert_eq!((a.r2, a.rdm_correlation, a.asr, a.msr), (b.r2, b.rdm_correlation, b.asr, b.msr));
    for r in &report.rows {
        assert_eq!(r.final_score, Some((r.asr + r.msr.unwrap()) / 2.0));
    }
    assert_eq!(report.to_csv().lines().count(), 5);
    assert!(matches!(checkpoint_sweep(&series[..1], &dataset, FeatureSite::PostGlu, &spec), Err(EvalError::Config(_))));
}

#[test]
fn ablation_protocol_emits_one_row_per_variant() {
    let world = tiny_world();
    let models = [tiny_model(60, true, true), tiny_model(61, false, true), tiny_model(62, true, false), tiny_model(63, false, false)];
    let names = ["full", "no-norm", "no-glu", "neither"];
    let variants: Vec<(String, Option<&Model<f32>>)> = names.iter().zip(&models).map(|(n, m)| (n.to_string(), Some(m))).collect();
    let spec = BehaviorSpec {
        world,
        battery: battery("photometric").unwrap(),
        episodes: 3,
        seed: 64,
    };
    let rows = run_ablation_protocol(&variants, &spec).unwrap();
    assert_eq!(rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), names);
    for r in &rows {
        assert_eq!(r.final_score, final_score(r.asr, r.msr).unwrap());
    }
    assert_eq!(ablation_csv(&rows).lines().count(), 5);

    let twice = vec![("a".to_string(), Some(&models[0])), ("b".to_string(), Some(&models[0]))];
    let rows = run_ablation_protocol(&twice, &spec).unwrap();
    assert_eq!((rows[0].asr, rows[0].msr), (rows[1].asr, rows[1].msr));

    let missing = vec![("full".to_string(), Some(&models[0])), ("no-norm".to_string(), None)];
    let err = run_ablation_protocol(&missing, &spec).unwrap_err();
    assert!(matches!(&err, EvalError::MissingCheckpoint(v) if v == "no-norm"), "{err}");
}
