//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array1, Array2};

/// |X_k| of a zero-padded, Hann-windowed frame by the O(N²) DFT sum.
pub fn naive_dft_magnitudes(signal: &[f64], n_fft: usize, win: usize, hop: usize) -> Vec<Vec<f64>> {
    let mut padded = signal.to_vec();
    if padded.len() < win {
        padded.resize(win, 0.0);
    }
    let frames = (padded.len() - win) / hop + 1;
    let window: Vec<f64> = (0..win).map(|n| (PI * n as f64 / win as f64).sin().powi(2)).collect();
    (0..frames)
        .map(|t| {
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for n in 0..win {
                        let x = padded[t * hop + n] * window[n];
                        let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                        re += x * ang.cos();
                        im += x * ang.sin();
                    }
                    re.hypot(im)
                })
                .collect()
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Softmax attention by explicit loops: one head, `W·x + b` projections.
pub fn loop_attention(
    q: &[f64],
    kv: &[Vec<f64>],
    wq: &[Vec<f64>],
    bq: &[f64],
    wk: &[Vec<f64>],
    bk: &[f64],
    wv: &[Vec<f64>],
    bv: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let affine = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        w.iter()
            .zip(b)
            .map(|(row, bi)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bi)
            .collect()
    };
    let qp = affine(wq, bq, q);
    let d = qp.len() as f64;
    let scores: Vec<f64> = kv
        .iter()
        .map(|x| {
            let k = affine(wk, bk, x);
            qp.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|v| v / z).collect();
    let mut out = vec![0.0; wv.len()];
    for (x, wt) in kv.iter().zip(&w) {
        let v = affine(wv, bv, x);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += wt * vi;
        }
    }
    (out, w)
}

pub fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

pub fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
