use foragelab::nn::checkpoint::{FORMAT_VERSION, VERSION_OFFSET};
use foragelab::nn::encoders::DeepResNetEncoder;
use foragelab::nn::{
    format_layer_table, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Architecture, CheckpointError, FeatureSite, Model, ModelCheckpoint,
    ModelError, ModelSpec, ObservationNormalizer, RngState,
};
use foragelab::tensor::gradcheck::{check, check_params, Coords};
use foragelab::tensor::{ParamSet, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn row(model: &Model<f32>, name: &str) -> usize {
    model
        .layer_table()
        .into_iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("no row {name}"))
        .params
}

fn rows_with_prefix(model: &Model<f32>, prefix: &str) -> Vec<usize> {
    model.layer_table().into_iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.params).collect()
}

#[test]
fn simple_cnn_layer_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f32>::new(ModelSpec::simple_cnn(86, 155, true, true), &mut rng).unwrap();
    assert_eq!(row(&model, "Conv1"), 1_040);
    assert_eq!(row(&model, "Conv2"), 8_224);
    // Valid padding gives a 9x17x32 map.
    assert_eq!(row(&model, "FC1"), 9 * 17 * 32 * 256 + 256);
    assert_eq!(row(&model, "FC1"), 1_253_632);
    for name in ["GLU_Feature", "GLU_Gate", "GLU_Output"] {
        assert_eq!(row(&model, name), 65_792);
    }
    assert_eq!(row(&model, "Policy Head"), 771);
    assert_eq!(row(&model, "Value Head"), 257);
    let table_sum: usize = model.layer_table().iter().map(|r| r.params).sum();
    assert_eq!(table_sum, model.parameter_count());
}

#[test]
fn deep_resnet_layer_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f32>::new(ModelSpec::deep_resnet(86, 155), &mut rng).unwrap();
    assert_eq!(row(&model, "Initial Conv"), 1_088);
    assert_eq!(rows_with_prefix(&model, "Downsample"), vec![32_896, 131_328, 524_800]);
    assert_eq!(rows_with_prefix(&model, "Stage 1"), vec![73_856, 73_856]);
    assert_eq!(rows_with_prefix(&model, "Stage 2"), vec![295_168]);
    assert_eq!(rows_with_prefix(&model, "Stage 3").iter().sum::<usize>(), 2_360_320);
    assert_eq!(rows_with_prefix(&model, "Stage 4"), vec![4_719_616]);
    assert_eq!(row(&model, "GLU Gate"), 1_048_832);
    assert_eq!(row(&model, "Dense Projection"), 1_048_832);
    assert_eq!(row(&model, "Policy Head"), 771);
    assert_eq!(row(&model, "Value Head"), 257);
    assert_eq!(model.conv_layer_count(), 16);
    let table_sum: usize = model.layer_table().iter().map(|r| r.params).sum();
    assert_eq!(table_sum, model.parameter_count());
}

#[test]
fn hand_summed_counts_match_formula() {
    let conv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
    assert_eq!(conv(8, 1, 16), 1_040);
    assert_eq!(conv(4, 16, 32), 8_224);
    assert_eq!(2 * conv(3, 64, 64), 73_856);
    assert_eq!(conv(2, 256, 512), 524_800);
}

#[test]
fn printed_table_total_is_row_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f32>::new(ModelSpec::simple_cnn(43, 78, true, true), &mut rng).unwrap();
    let text = format_layer_table(&model.layer_table());
    let total_line = text.lines().last().unwrap();
    let printed: usize = total_line.split_whitespace().last().unwrap().replace(',', "").parse().unwrap();
    assert_eq!(printed, model.parameter_count());
    assert!(text.contains("1,040"));
}

#[test]
fn deep_stage_shapes_at_full_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::<f32>::new(ModelSpec::deep_resnet(86, 155), &mut rng).unwrap();
    let mut tape = Tape::inference();
    let x = model.input_var(&mut tape, &vec![0.5; 86 * 155]).unwrap();
    let out = model.forward(&mut tape, x).unwrap();
    let shapes: Vec<Vec<usize>> = out.encoder.stages.iter().map(|&v| tape.shape(v)[1..].to_vec()).collect();
    assert_eq!(shapes, vec![vec![21, 38, 64], vec![10, 19, 128], vec![5, 9, 256], vec![2, 4, 512]]);
    assert_eq!(tape.shape(out.encoder.flat), &[1, 4096]);
    assert_eq!(tape.shape(out.features), &[1, 256]);
}

#[test]
fn simple_cnn_intermediate_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::<f32>::new(ModelSpec::simple_cnn(86, 155, true, false), &mut rng).unwrap();
    let mut tape = Tape::inference();
    let x = model.input_var(&mut tape, &vec![0.1; 2 * 86 * 155]).unwrap();
    let out = model.forward(&mut tape, x).unwrap();
    assert_eq!(tape.shape(out.encoder.stages[0]), &[2, 20, 37, 16]);
    assert_eq!(tape.shape(out.encoder.stages[1]), &[2, 9, 17, 32]);
    assert_eq!(tape.shape(out.encoder.output), &[2, 256]);
}

#[test]
fn too_small_input_names_the_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = Model::<f32>::new(ModelSpec::deep_resnet(30, 60), &mut rng).unwrap_err();
    match err {
        ModelError::InputTooSmall { stage, .. } => assert!(stage.contains("stage 4"), "{stage}"),
        other => panic!("{other}"),
    }
}

#[test]
fn wrong_resolution_is_a_shape_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::<f32>::new(ModelSpec::simple_cnn(43, 78, true, true), &mut rng).unwrap();
    let mut tape = Tape::inference();
    assert!(matches!(model.input_var(&mut tape, &[0.0; 100]), Err(ModelError::InputShape { .. })));
    let x = tape.constant(Tensor::zeros(&[1, 40, 78, 1]));
    assert!(matches!(model.forward(&mut tape, x), Err(ModelError::InputShape { .. })));
}

#[test]
fn zero_residual_block_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamSet::<f64>::new();
    let enc = DeepResNetEncoder::new(&mut params, 32, 32, 0.2, &mut rng).unwrap();
    let block = &enc.stages[0].blocks[0];
    *params.get_mut(block.conv_b.kernel) = Tensor::zeros(params.get(block.conv_b.kernel).shape());
    *params.get_mut(block.conv_b.bias) = Tensor::zeros(params.get(block.conv_b.bias).shape());
    let h = Tensor::from_fn(&[2, 5, 6, 64], |_| rng.gen_range(-1.0..1.0));
    let mut tape = Tape::inference();
    let hv = tape.constant(h.clone());
    let y = block.forward(&mut tape, &params, hv, 0.2).unwrap();
    assert_eq!(tape.value(y), &h);
}

#[test]
fn gates_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let simple = Model::<f64>::new(ModelSpec::simple_cnn(24, 28, true, true), &mut rng).unwrap();
    let deep = Model::<f64>::new(ModelSpec::deep_resnet(32, 32), &mut rng).unwrap();
    for model in [&simple, &deep] {
        let n = 4;
        let pixels: Vec<f32> = (0..n * model.input_len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::inference();
        let x = model.input_var(&mut tape, &pixels).unwrap();
        let out = model.forward(&mut tape, x).unwrap();
        let gate = tape.value(out.gate.unwrap().gate);
        assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
        if model.spec().architecture == Architecture::DeepResnet {
            for r in gate.data().chunks(256) {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_input_with_zero_biases_gives_zero_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = Model::<f32>::new(ModelSpec::simple_cnn(43, 78, false, true), &mut rng).unwrap();
    let bias_ids: Vec<_> = model.params().iter().filter(|(_, n, _)| n.ends_with(".bias")).map(|(id, _, _)| id).collect();
    for id in bias_ids {
        let shape = model.params().get(id).shape().to_vec();
        *model.params_mut().get_mut(id) = Tensor::zeros(&shape);
    }
    let zeros = vec![0.0; model.input_len()];
    for site in [FeatureSite::PostEncoder, FeatureSite::PostGlu] {
        let f = model.features(&zeros, site).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].len(), 256);
        assert!(f[0].iter().all(|&v| v == 0.0), "{site}");
    }
}

#[test]
fn normalizer_whitens_stationary_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dist = Normal::new(0.4, 0.15).unwrap();
    let mut norm = ObservationNormalizer::new(1, 0.999);
    for _ in 0..10_000 {
        let batch: Vec<f32> = (0..64).map(|_| dist.sample(&mut rng) as f32).collect();
        norm.update(&batch);
    }
    let probe: Vec<f32> = (0..200_000).map(|_| dist.sample(&mut rng) as f32).collect();
    let out = norm.apply(&probe);
    let n = out.len() as f64;
    let mean = out.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = out.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// Scalar loss over policy mean and value with fixed random weights.
fn head_loss(tape: &mut Tape<'_, f64>, mean: Var, value: Var, w: &[f64]) -> Result<Var, TensorError> {
    let nm = tape.value(mean).len();
    let nv = tape.value(value).len();
    let a = tape.weighted_sum(mean, &w[..nm])?;
    let b = tape.weighted_sum(value, &w[nm..nm + nv])?;
    let s = tape.add(a, b)?;
    tape.reshape(s, vec![1])
}

fn fitted_normalizer(rng: &mut ChaCha8Rng) -> ObservationNormalizer {
    ObservationNormalizer::from_parts(vec![rng.gen_range(0.2..0.5)], vec![rng.gen_range(0.01..0.09)], 1e-8, 0.999, 1000)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w, n) = (24, 28, 2);
    for point in 0..10u64 {
        let mut model = Model::<f64>::new(ModelSpec::simple_cnn(h, w, true, true), &mut rng).unwrap();
        model.set_normalizer(fitted_normalizer(&mut rng));
        let raw = Tensor::from_fn(&[n, h, w, 1], |_| rng.gen_range(0.0..1.0));
        let weights: Vec<f64> = (0..4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let report = check_params(model.params(), 1e-5, Coords::Sample { per_tensor: 6, seed: point }, |tape, params| {
            let x = tape.constant(raw.clone());
            let out = model.forward_raw_with(tape, params, x).map_err(tensor_err)?;
            head_loss(tape, out.mean, out.value, &weights)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "params, point {point}: {report:?}");

        let names = vec!["observation".to_string()];
        let report = check(&names, &[raw.clone()], 1e-5, Coords::Sample { per_tensor: 30, seed: point }, |p| {
            let mut tape = Tape::new();
            let x = tape.variable(p[0].clone());
            let out = model.forward_raw(&mut tape, x).map_err(tensor_err)?;
            let loss = head_loss(&mut tape, out.mean, out.value, &weights)?;
            let value = tape.value(loss).data()[0];
            let g = tape.backward(vec![(loss, vec![1.0])])?;
            Ok((value, vec![g.wrt(x).unwrap().to_vec()]))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "input, point {point}: {report:?}");
    }
}

#[test]
fn deep_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for point in 0..2u64 {
        let mut model = Model::<f64>::new(ModelSpec::deep_resnet(32, 32), &mut rng).unwrap();
        model.set_normalizer(fitted_normalizer(&mut rng));
        let raw = Tensor::from_fn(&[1, 32, 32, 1], |_| rng.gen_range(0.0..1.0));
        let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = check_params(model.params(), 1e-5, Coords::Sample { per_tensor: 2, seed: point }, |tape, params| {
            let x = tape.constant(raw.clone());
            let out = model.forward_raw_with(tape, params, x).map_err(tensor_err)?;
            head_loss(tape, out.mean, out.value, &weights)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "point {point}: {report:?}");
    }
}

fn checkpoint(arch: Architecture, seed: u64) -> ModelCheckpoint<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = match arch {
        Architecture::SimpleCnn => ModelSpec::simple_cnn(43, 78, true, true),
        Architecture::DeepResnet => ModelSpec::deep_resnet(32, 32),
    };
    let mut model = Model::<f32>::new(spec, &mut rng).unwrap();
    let mut norm = ObservationNormalizer::new(1, 0.999);
    norm.update(&[0.1, 0.7, 0.3]);
    model.set_normalizer(norm);
    let _: u64 = rng.gen();
    ModelCheckpoint {
        model,
        step: 20_000,
        env_steps: 20_480,
        rng: RngState::capture(&rng),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let ckpt = checkpoint(Architecture::SimpleCnn, 8);
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint::<f32>(&path).unwrap();
    for ((_, na, a), (_, nb, b)) in ckpt.model.params().iter().zip(loaded.model.params().iter()) {
        assert_eq!(na, nb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(loaded.model.normalizer(), ckpt.model.normalizer());
    assert_eq!(loaded.step, 20_000);
    assert_eq!(loaded.env_steps, 20_480);
    assert_eq!(loaded.rng, ckpt.rng);
    let path2 = dir.path().join("b.ckpt");
    save_checkpoint(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn restored_rng_continues_the_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let _: [u64; 3] = rng.gen();
    let mut restored = RngState::capture(&rng).restore();
    let a: [u64; 4] = rng.gen();
    let b: [u64; 4] = restored.gen();
    assert_eq!(a, b);
}

#[test]
fn damaged_checkpoints_give_distinct_errors() {
    let bytes = checkpoint(Architecture::SimpleCnn, 9).encode();

    let mut flipped = bytes.clone();
    flipped[VERSION_OFFSET] ^= 0xFF;
    assert!(matches!(ModelCheckpoint::<f32>::decode(&flipped), Err(CheckpointError::Version { expected, .. }) if expected == FORMAT_VERSION));

    let mut corrupted = bytes.clone();
    let mid = bytes.len() / 2;
    corrupted[mid] ^= 0x01;
    assert!(matches!(ModelCheckpoint::<f32>::decode(&corrupted), Err(CheckpointError::Checksum { .. })));

    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(ModelCheckpoint::<f32>::decode(truncated), Err(CheckpointError::Truncated { .. })));

    assert!(matches!(ModelCheckpoint::<f32>::decode(b"nope"), Err(CheckpointError::BadMagic)));
}

#[test]
fn architecture_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t1.ckpt");
    save_checkpoint(&checkpoint(Architecture::SimpleCnn, 10), &path).unwrap();
    let err = load_checkpoint_expecting::<f32>(&path, Architecture::DeepResnet).unwrap_err();
    assert!(matches!(err, CheckpointError::ArchitectureMismatch { .. }), "{err}");
    assert!(load_checkpoint_expecting::<f32>(&path, Architecture::SimpleCnn).is_ok());
}

#[test]
fn deep_checkpoint_round_trip() {
    let ckpt = checkpoint(Architecture::DeepResnet, 11);
    let bytes = ckpt.encode();
    let loaded = ModelCheckpoint::<f32>::decode(&bytes).unwrap();
    assert_eq!(loaded.encode(), bytes);
}

#[test]
fn glu_graft_keeps_backbone_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let phase1 = Model::<f32>::new(ModelSpec::simple_cnn(43, 78, true, false), &mut rng).unwrap();
    let phase2 = phase1.with_fresh_glu(&mut rng).unwrap();
    assert!(phase2.spec().use_glu);
    for (_, name, t) in phase1.params().iter() {
        let id = phase2.params().find(name).unwrap();
        assert_eq!(phase2.params().get(id), t, "{name}");
    }
    let glu: Vec<_> = phase2.params().iter().filter(|(_, n, _)| n.starts_with("glu.")).collect();
    assert_eq!(glu.len(), 6);
    assert!(glu.iter().all(|(_, _, t)| t.data().iter().any(|&v| v != 0.0)));
    assert!(matches!(phase2.with_fresh_glu(&mut rng), Err(ModelError::AlreadyGated)));
}

#[test]
fn glu_graft_starts_near_the_phase_one_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let phase1 = Model::<f32>::new(ModelSpec::simple_cnn(43, 78, true, false), &mut rng).unwrap();
    let phase2 = phase1.with_fresh_glu(&mut rng).unwrap();
    let pixels: Vec<f32> = (0..4 * 43 * 78).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let x = phase1.normalize(&pixels);
    let before = phase1.act_batch::<ChaCha8Rng>(&x, None).unwrap();
    let after = phase2.act_batch::<ChaCha8Rng>(&x, None).unwrap();
    for (a, b) in before.iter().zip(&after) {
        for (u, v) in a.action.iter().zip(&b.action) {
            assert!((u - v).abs() < 0.02, "{u} vs {v}");
        }
        assert!((a.value - b.value).abs() < 0.02, "{} vs {}", a.value, b.value);
    }
}
