use ndarray::{s, Array1, Array2};
use pase::audio_encoder::{encode_audio, encode_audio_cnn, gru_cell_step, AudioCnn, AudioCnnConfig, GruLayer, GruStack, Pooling};
use pase::nn::gradcheck::{check_gradients, GradCheckOptions};
use pase::nn::init::{seeded_rng, uniform_array};
use pase::nn::Parameters;
use proptest::prelude::*;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar loops over the `[h, x]` column layout.
fn scalar_cell(x: &[f64], h: &[f64], l: &GruLayer<f64>) -> Vec<f64> {
    let hd = h.len();
    let gate = |lin: &pase::nn::Linear<f64>, hin: &[f64], i: usize| {
        let mut acc = lin.bias[i];
        for j in 0..hd {
            acc += lin.weight[[i, j]] * hin[j];
        }
        for (j, xv) in x.iter().enumerate() {
            acc += lin.weight[[i, hd + j]] * xv;
        }
        acc
    };
    let z: Vec<f64> = (0..hd).map(|i| sig(gate(&l.update, h, i))).collect();
    let r: Vec<f64> = (0..hd).map(|i| sig(gate(&l.reset, h, i))).collect();
    let rh: Vec<f64> = (0..hd).map(|i| r[i] * h[i]).collect();
    (0..hd)
        .map(|i| {
            let c = gate(&l.candidate, &rh, i).tanh();
            (1.0 - z[i]) * h[i] + z[i] * c
        })
        .collect()
}

#[test]
fn cell_matches_scalar_oracle() {
    let mut rng = seeded_rng(4, 0, 0);
    let layer = GruLayer::<f64>::uniform(4, 4, &mut rng);
    let x: Array1<f64> = uniform_array(&mut rng, 4, 1.0);
    let h: Array1<f64> = uniform_array(&mut rng, 4, 0.9);
    let got = gru_cell_step(x.view(), h.view(), &layer).unwrap();
    let want = scalar_cell(x.as_slice().unwrap(), h.as_slice().unwrap(), &layer);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gru_gradients_match_central_differences() {
    let mut rng = seeded_rng(9, 0, 0);
    let stack = GruStack::<f64>::uniform(8, 8, 2, &mut rng);
    let spec: Array2<f64> = uniform_array(&mut rng, (6, 8), 1.0);
    let target: Array2<f64> = uniform_array(&mut rng, (6, 8), 1.0);
    let loss = |m: &GruStack<f64>| {
        let (seq, pooled) = encode_audio(spec.view(), m, Pooling::Last).unwrap();
        (&seq - &target).mapv(|v| v * v).sum() + pooled.sum()
    };
    let traces = stack.forward(spec.view());
    let seq = traces.last().unwrap().output().to_owned();
    let mut d = (&seq - &target) * 2.0;
    d.row_mut(5).mapv_inplace(|v| v + 1.0);
    let mut grad = stack.zeros_like();
    stack.backward(&traces, d, &mut grad);
    let r = check_gradients(&stack, &grad, 1e-5, &GradCheckOptions::default(), loss).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
    assert_eq!(r.checked, stack.param_count());
}

#[test]
fn prefix_runs_agree_with_full_run() {
    let mut rng = seeded_rng(2, 0, 0);
    let stack = GruStack::<f64>::uniform(5, 6, 3, &mut rng);
    let spec: Array2<f64> = uniform_array(&mut rng, (7, 5), 1.0);
    let (seq, pooled) = encode_audio(spec.view(), &stack, Pooling::Last).unwrap();
    assert_eq!(pooled, seq.row(6));
    for t in 1..=7 {
        let (_, p) = encode_audio(spec.slice(s![..t, ..]), &stack, Pooling::Last).unwrap();
        assert_eq!(p, seq.row(t - 1));
    }
    let (one, p1) = encode_audio(spec.slice(s![..1, ..]), &stack, Pooling::Mean).unwrap();
    assert_eq!(p1, one.row(0));
    let again = encode_audio(spec.view(), &stack, Pooling::Last).unwrap();
    assert_eq!(again.0, seq);
}

#[test]
fn zero_stack_gives_zero_embedding() {
    let stack = GruStack::<f64>::zeros(5, 6, 8);
    let spec = Array2::from_elem((4, 5), 0.7);
    let (_, p) = encode_audio(spec.view(), &stack, Pooling::Last).unwrap();
    assert!(p.iter().all(|&v| v == 0.0));
}

fn delta(len: usize, bins: usize, at: usize) -> Array2<f64> {
    let mut x = Array2::zeros((len, bins));
    x.row_mut(at).fill(1.0);
    x
}

#[test]
fn cnn_shift_moves_map_by_one_stride() {
    let mut rng = seeded_rng(5, 0, 0);
    for cfg in [
        AudioCnnConfig {
            hidden_channels: vec![],
            kernel: 3,
            strides: vec![1],
        },
        AudioCnnConfig::default(),
    ] {
        let cnn = AudioCnn::<f64>::he_uniform(6, 8, &cfg, &mut rng);
        let step: usize = cfg.strides.iter().product();
        let (a, _) = cnn.forward(delta(24, 6, 8).view());
        let (b, _) = cnn.forward(delta(24, 6, 8 + step).view());
        // Rows far from both the delta and the clip edges are pure bias responses.
        for t in 1..a.nrows() - 2 {
            for e in 0..a.ncols() {
                assert!((b[[t + 1, e]] - a[[t, e]]).abs() < 1e-12, "row {t}");
            }
        }
        assert_eq!(encode_audio_cnn(delta(5, 6, 0).view(), &cnn).unwrap().len(), 8);
        assert_eq!(encode_audio_cnn(delta(17, 6, 0).view(), &cnn).unwrap().len(), 8);
    }
    let zero = AudioCnn::<f64>::zeros(6, 8, &AudioCnnConfig::default());
    assert!(encode_audio_cnn(Array2::zeros((9, 6)).view(), &zero).unwrap().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hidden_state_stays_in_open_unit_interval(seed in 0u64..10_000, t in 1usize..12, scale in 0.1f64..20.0) {
        let mut rng = seeded_rng(seed, 1, 0);
        let stack = GruStack::<f64>::uniform(4, 5, 2, &mut rng);
        let spec: Array2<f64> = uniform_array(&mut rng, (t, 4), scale);
        let (seq, _) = encode_audio(spec.view(), &stack, Pooling::Last).unwrap();
        prop_assert!(seq.iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn cnn_output_steps_matches_forward() {
    let cfg = AudioCnnConfig {
        strides: vec![2, 3],
        ..AudioCnnConfig::default()
    };
    let cnn = AudioCnn::<f64>::he_uniform(5, 4, &cfg, &mut seeded_rng(1, 0, 0));
    for t in 1..40 {
        let spec = Array2::<f64>::ones((t, 5));
        let (seq, _) = cnn.forward(spec.view());
        assert_eq!(cfg.output_steps(t), Some(seq.nrows()), "t = {t}");
    }
}
