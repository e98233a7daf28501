//! Seeded batteries of oracle comparisons. Each returns how many cases ran
//! and the worst error seen, so callers pick the tolerance.

use rand::Rng;
use repfuse_core::ctc::{ctc_grad, ctc_loss};
use repfuse_core::fusion::AttentionParams;
use repfuse_core::metrics::align;
use repfuse_core::similarity::{cca_correlations, pwcca_score, DEFAULT_REG_EPS};
use repfuse_core::tensor::{log_softmax_rows, matmul};
use repfuse_core::{FusionParams, LabelSeq, Matrix};

use super::*;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub cases: usize,
    pub worst: f64,
}

impl Check {
    fn new() -> Self {
        Self { cases: 0, worst: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }
}

fn random_target(rng: &mut ChaCha8Rng, v: usize, max_len: usize) -> Vec<usize> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| rng.random_range(1..v)).collect()
}

/// exp(−ctc_loss) against enumeration of every labeling (T ≤ 8, V ≤ 4,
/// |target| ≤ 3). Error is relative.
pub fn ctc_oracle(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let v = rng.random_range(2..=4);
        let target = random_target(&mut rng, v, 3);
        let labels = LabelSeq::new(target.clone(), v).unwrap();
        let t_len = rng.random_range(labels.min_frames().max(1)..=8);
        let log_probs = log_softmax_rows(&uniform(t_len, v, 3.0, &mut rng));
        let loss = ctc_loss(&log_probs, &labels).unwrap();
        let expected = brute_force_ctc_prob(&log_probs, &target);
        let err = if loss < 0.0 {
            f64::INFINITY
        } else {
            ((-loss).exp() - expected).abs() / expected
        };
        check.record(err);
        check.cases += 1;
    }
    check
}

/// Central differences over groups of f64 values; `f` sees every group.
fn fd_groups(groups: &[Vec<f64>], f: impl Fn(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
    (0..groups.len())
        .map(|i| {
            central_diff(&groups[i], FD_STEP, |x| {
                let mut work = groups.to_vec();
                work[i] = x.to_vec();
                f(&work)
            })
        })
        .collect()
}

fn worst_group(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// CTC gradient w.r.t. logits (T ≤ 6, V ≤ 5).
pub fn ctc_gradient(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let v = rng.random_range(2..=5);
        let target = random_target(&mut rng, v, 3);
        let labels = LabelSeq::new(target.clone(), v).unwrap();
        let t_len = rng.random_range(labels.min_frames().max(1)..=6);
        let logits = uniform(t_len, v, 2.0, &mut rng);
        let analytic = ctc_grad(&log_softmax_rows(&logits), &labels).unwrap();
        let numeric = central_diff(&to_f64(logits.as_slice()), FD_STEP, |l| {
            enumerate_ctc_nll(l, v, &target)
        });
        check.record(rel_err(&to_f64(analytic.as_slice()), &numeric));
        check.cases += 1;
    }
    check
}

// Runs the library forward/backward for `params` with a random output
// probe, returning (probe, [param tensors..., d_ref, d_delta]).
fn library_grads(params: &FusionParams, r: &Matrix, d: &Matrix, rng: &mut ChaCha8Rng) -> (Matrix, Vec<Vec<f64>>) {
    let (z, cache) = params.forward(r, d).unwrap();
    let g = uniform(z.rows(), z.cols(), 1.0, rng);
    let grads = params.backward(&cache, &g).unwrap();
    let mut out: Vec<Vec<f64>> = grads.params.tensors().into_iter().map(to_f64).collect();
    out.push(to_f64(grads.d_reference.as_slice()));
    out.push(to_f64(grads.d_delta.as_slice()));
    (g, out)
}

/// Weighted fusion: θ and both inputs.
pub fn weighted_gradient(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let (t_len, dim) = (rng.random_range(1..=5), rng.random_range(1..=6));
        let r = uniform(t_len, dim, 1.0, &mut rng);
        let d = uniform(t_len, dim, 1.0, &mut rng);
        let theta: f32 = rng.random_range(-3.0..3.0);
        let (g, analytic) = library_grads(&FusionParams::Weighted { theta }, &r, &d, &mut rng);
        let g = Dense::from_matrix(&g);
        let groups = vec![vec![f64::from(theta)], to_f64(r.as_slice()), to_f64(d.as_slice())];
        let numeric = fd_groups(&groups, |w| {
            let z = weighted64(
                &Dense::new(t_len, dim, w[1].clone()),
                &Dense::new(t_len, dim, w[2].clone()),
                w[0][0],
            );
            sum_product(&z, &g)
        });
        check.record(worst_group(&analytic, &numeric));
        check.cases += 1;
    }
    check
}

/// MoE gating: W_MoE and both inputs.
pub fn moe_gradient(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let (t_len, dim) = (rng.random_range(1..=5), rng.random_range(1..=6));
        let r = uniform(t_len, dim, 1.0, &mut rng);
        let d = uniform(t_len, dim, 1.0, &mut rng);
        let gate = uniform(dim, 2, 2.0, &mut rng);
        let (g, analytic) = library_grads(&FusionParams::Moe { gate: gate.clone() }, &r, &d, &mut rng);
        let g = Dense::from_matrix(&g);
        let groups = vec![to_f64(gate.as_slice()), to_f64(r.as_slice()), to_f64(d.as_slice())];
        let numeric = fd_groups(&groups, |w| {
            let z = moe64(
                &Dense::new(t_len, dim, w[1].clone()),
                &Dense::new(t_len, dim, w[2].clone()),
                &Dense::new(dim, 2, w[0].clone()),
            );
            sum_product(&z, &g)
        });
        check.record(worst_group(&analytic, &numeric));
        check.cases += 1;
    }
    check
}

/// Cross attention on 3×8 inputs with 2 heads: all four projections, the
/// layer-norm affine and both inputs.
pub fn xattn_gradient(instances: usize, seed: u64) -> Check {
    const T: usize = 3;
    const D: usize = 8;
    const HEADS: usize = 2;
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let mut p = AttentionParams::init(D, HEADS, &mut rng).unwrap();
        // sharper attention than the default init so query/key gradients are not tiny
        p.wq = p.wq.scale(3.0);
        p.wk = p.wk.scale(3.0);
        p.ln_gain = (0..D).map(|_| rng.random_range(0.5..1.5)).collect();
        p.ln_bias = (0..D).map(|_| rng.random_range(-0.5..0.5)).collect();
        let r = uniform(T, D, 1.0, &mut rng);
        let d = uniform(T, D, 1.0, &mut rng);
        let params = FusionParams::CrossAttention(p);
        let (g, analytic) = library_grads(&params, &r, &d, &mut rng);
        let g = Dense::from_matrix(&g);
        let mut groups: Vec<Vec<f64>> = params.tensors().into_iter().map(to_f64).collect();
        groups.push(to_f64(r.as_slice()));
        groups.push(to_f64(d.as_slice()));
        let numeric = fd_groups(&groups, |w| {
            let sq = |k: usize| Dense::new(D, D, w[k].clone());
            let (wq, wk, wv, wo) = (sq(0), sq(1), sq(2), sq(3));
            let z = xattn64(
                &Dense::new(T, D, w[6].clone()),
                &Dense::new(T, D, w[7].clone()),
                [&wq, &wk, &wv, &wo],
                &w[4],
                &w[5],
                HEADS,
            );
            sum_product(&z, &g)
        });
        check.record(worst_group(&analytic, &numeric));
        check.cases += 1;
    }
    check
}

/// Largest |ρ − 1| and |pwcca − 1| for Y = X.
pub fn cca_self(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let d = rng.random_range(2..=8);
        let x = uniform(200, d, 1.0, &mut rng);
        let cca = cca_correlations(&x, &x, DEFAULT_REG_EPS).unwrap();
        for r in &cca.correlations {
            check.record((r - 1.0).abs());
        }
        check.record((cca.pwcca().unwrap() - 1.0).abs());
        check.cases += 1;
    }
    check
}

// Diagonally dominant, hence invertible.
fn invertible(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = uniform(d, d, 1.0, rng);
    for k in 0..d {
        m.set(k, k, m.get(k, k) + d as f32 + 1.0);
    }
    m
}

fn affine(x: &Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    let m = invertible(x.cols(), rng);
    let shift: Vec<f32> = (0..x.cols()).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut y = matmul(x, &m).unwrap();
    for t in 0..y.rows() {
        for (v, s) in y.row_mut(t).iter_mut().zip(&shift) {
            *v += s;
        }
    }
    y
}

fn correlated_pair(n: usize, d1: usize, d2: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let x = uniform(n, d1, 1.0, rng);
    let mix = uniform(d1, d2, 1.0, rng);
    let noise = uniform(n, d2, rng.random_range(0.3..2.0), rng);
    let y = matmul(&x, &mix).unwrap().add(&noise).unwrap();
    (x, y)
}

/// Largest |ρ − 1| for Y = X·M + b, and largest change in ρ when either
/// view of a correlated pair is mapped by a random invertible affine map.
pub fn cca_invariance(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let (d1, d2) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let (x, y) = correlated_pair(300, d1, d2, &mut rng);

        let mapped = affine(&x, &mut rng);
        for r in cca_correlations(&x, &mapped, DEFAULT_REG_EPS).unwrap().correlations {
            check.record((r - 1.0).abs());
        }

        let base = cca_correlations(&x, &y, DEFAULT_REG_EPS).unwrap().correlations;
        let left = cca_correlations(&affine(&x, &mut rng), &y, DEFAULT_REG_EPS).unwrap().correlations;
        let right = cca_correlations(&x, &affine(&y, &mut rng), DEFAULT_REG_EPS).unwrap().correlations;
        for ((a, b), c) in base.iter().zip(&left).zip(&right) {
            check.record((a - b).abs().max((a - c).abs()));
        }
        check.cases += 1;
    }
    check
}

/// 3-dimensional views: canonical correlations against the cubic
/// characteristic polynomial, absolute error.
pub fn cca3_oracle(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let n = rng.random_range(50..=300);
        let (x, y) = correlated_pair(n, 3, 3, &mut rng);
        let got = cca_correlations(&x, &y, DEFAULT_REG_EPS).unwrap().correlations;
        let want = cca3_correlations(&x, &y, DEFAULT_REG_EPS);
        for (g, w) in got.iter().zip(&want) {
            check.record((g - w).abs());
        }
        check.cases += 1;
    }
    check
}

/// 3-dimensional views: PWCCA against the definition-level oracle.
pub fn pwcca3_oracle(instances: usize, seed: u64) -> Check {
    let mut check = Check::new();
    for i in 0..instances {
        let mut rng = rng(seed.wrapping_add(i as u64));
        let n = rng.random_range(50..=300);
        let (x, y) = correlated_pair(n, 3, 3, &mut rng);
        let got = pwcca_score(&x, &y, DEFAULT_REG_EPS).unwrap();
        check.record((got - pwcca3(&x, &y, DEFAULT_REG_EPS)).abs());
        check.cases += 1;
    }
    check
}

/// Number of random word-list pairs whose backtraced edit counts disagree
/// with the plain edit distance or are inconsistent with the list lengths.
pub fn levenshtein_oracle(pairs: usize, seed: u64) -> (usize, usize) {
    const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = rng(seed);
    let mut mismatches = 0;
    for _ in 0..pairs {
        let words = |rng: &mut ChaCha8Rng| -> Vec<&str> {
            let len = rng.random_range(0..=10);
            (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
        };
        let a = words(&mut rng);
        let b = words(&mut rng);
        let e = align(&a, &b);
        let consistent = a.len() as i64 - e.del as i64 == b.len() as i64 - e.ins as i64;
        if e.total() != levenshtein(&a, &b) || !consistent {
            mismatches += 1;
        }
    }
    (pairs, mismatches)
}
