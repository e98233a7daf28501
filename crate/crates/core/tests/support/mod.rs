//! Independent reference implementations used to check the library.
//!
//! Nothing here calls into the code paths it is used to verify: CTC
//! probabilities come from enumerating every frame labeling, gradients from
//! central differences, canonical correlations from the characteristic
//! polynomial of the generalized eigenproblem, and edit distances from a
//! plain two-row dynamic program.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repfuse_core::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn log_softmax_f64(logits: &Matrix) -> Vec<Vec<f64>> {
    logits
        .row_iter()
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
            let lse = max + row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
            row.iter().map(|&v| f64::from(v) - lse).collect()
        })
        .collect()
}

/// Collapses a frame labeling: merge repeats, then drop blanks (index 0).
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != 0 {
            out.push(p);
        }
        prev = p;
    }
    out
}

/// Σ over all Vᵀ labelings collapsing to `target` of Π_t p_t(label_t).
pub fn brute_force_ctc_prob(log_probs: &Matrix, target: &[usize]) -> f64 {
    let lp: Vec<Vec<f64>> = log_probs.row_iter().map(to_f64).collect();
    enumerate_ctc_prob(&lp, target)
}

pub fn enumerate_ctc_prob(log_probs: &[Vec<f64>], target: &[usize]) -> f64 {
    let t_len = log_probs.len();
    let v = log_probs[0].len();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0f64;
    loop {
        if collapse(&path) == target {
            let lp: f64 = path.iter().enumerate().map(|(t, &k)| log_probs[t][k]).sum();
            total += lp.exp();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return total;
            }
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// −log of the enumerated CTC probability, from row-major f64 logits.
pub fn enumerate_ctc_nll(logits: &[f64], v: usize, target: &[usize]) -> f64 {
    let lp: Vec<Vec<f64>> = logits
        .chunks(v)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.iter().map(|&x| x - lse).collect()
        })
        .collect();
    -enumerate_ctc_prob(&lp, target).ln()
}

/// Central-difference gradient of `f` with respect to every entry of
/// `params`, in f64.
pub fn central_diff(params: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| {
            let x = params[i];
            let h = step * x.abs().max(1.0);
            work[i] = x + h;
            let up = f(&work);
            work[i] = x - h;
            let down = f(&work);
            work[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), with 0 for two zero vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Σ G ⊙ Z accumulated in f64: a scalar probe of a matrix-valued function.
pub fn probe(z: &Matrix, g: &Matrix) -> f64 {
    z.as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum()
}

/// Plain Levenshtein distance, two rows.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

// ---------------------------------------------------------------------------
// 3-dimensional CCA straight from the generalized eigenproblem
//   Σxx⁻¹ Σxy Σyy⁻¹ Σyx v = ρ² v.

pub type M3 = [[f64; 3]; 3];

fn mul3(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose3(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn det3(a: &M3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn inv3(a: &M3) -> M3 {
    let d = det3(a);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // cofactor of a[j][i]
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
        }
    }
    inv
}

/// Centered data and regularized covariance blocks.
pub struct Cov3 {
    pub xc: Vec<[f64; 3]>,
    pub sxx: M3,
    pub syy: M3,
    pub sxy: M3,
}

pub fn covariances3(x: &Matrix, y: &Matrix, reg_eps: f64) -> Cov3 {
    assert_eq!((x.cols(), y.cols()), (3, 3));
    let n = x.rows();
    let mean = |m: &Matrix| {
        let mut mu = [0.0; 3];
        for r in 0..n {
            for c in 0..3 {
                mu[c] += f64::from(m.get(r, c)) / n as f64;
            }
        }
        mu
    };
    let (mx, my) = (mean(x), mean(y));
    let xc: Vec<[f64; 3]> = (0..n)
        .map(|r| std::array::from_fn(|c| f64::from(x.get(r, c)) - mx[c]))
        .collect();
    let yc: Vec<[f64; 3]> = (0..n)
        .map(|r| std::array::from_fn(|c| f64::from(y.get(r, c)) - my[c]))
        .collect();
    let cov = |a: &[[f64; 3]], b: &[[f64; 3]], reg: f64| {
        let mut s = [[0.0; 3]; 3];
        for (ra, rb) in a.iter().zip(b) {
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] += ra[i] * rb[j];
                }
            }
        }
        for (i, row) in s.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v /= (n - 1) as f64;
                if i == j {
                    *v += reg;
                }
            }
        }
        s
    };
    Cov3 {
        sxx: cov(&xc, &xc, reg_eps),
        syy: cov(&yc, &yc, reg_eps),
        sxy: cov(&xc, &yc, 0.0),
        xc,
    }
}

fn cca_matrix(c: &Cov3) -> M3 {
    let syx = transpose3(&c.sxy);
    mul3(&mul3(&mul3(&inv3(&c.sxx), &c.sxy), &inv3(&c.syy)), &syx)
}

/// Real roots of λ³ + aλ² + bλ + c, descending (all three assumed real).
fn cubic_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    if p.abs() < 1e-300 {
        let r = (-q).cbrt() + shift;
        return [r, r, r];
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
    let theta = arg.acos() / 3.0;
    let mut roots = [0.0; 3];
    for (k, r) in roots.iter_mut().enumerate() {
        *r = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift;
    }
    roots.sort_by(|x, y| y.total_cmp(x));
    roots
}

fn eigenvalues3(b: &M3) -> [f64; 3] {
    let tr = b[0][0] + b[1][1] + b[2][2];
    let minors = b[0][0] * b[1][1] - b[0][1] * b[1][0] + b[0][0] * b[2][2] - b[0][2] * b[2][0]
        + b[1][1] * b[2][2]
        - b[1][2] * b[2][1];
    cubic_roots(-tr, minors, -det3(b))
}

/// Canonical correlations of two 3-column views, descending.
pub fn cca3_correlations(x: &Matrix, y: &Matrix, reg_eps: f64) -> [f64; 3] {
    let c = covariances3(x, y, reg_eps);
    eigenvalues3(&cca_matrix(&c)).map(|l| l.max(0.0).sqrt().min(1.0))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// PWCCA from its definition: canonical directions as null vectors of
/// `B − ρ²I`, scaled to unit canonical variance, explicit canonical
/// variates `h_i = X̃ v_i`, weights `Σ_j |⟨h_i, x̃_j⟩|`.
pub fn pwcca3(x: &Matrix, y: &Matrix, reg_eps: f64) -> f64 {
    let c = covariances3(x, y, reg_eps);
    let b = cca_matrix(&c);
    let lambdas = eigenvalues3(&b);
    let mut weights = [0.0; 3];
    let mut rhos = [0.0; 3];
    for (i, &l) in lambdas.iter().enumerate() {
        let rows: Vec<[f64; 3]> = (0..3)
            .map(|r| std::array::from_fn(|k| b[r][k] - if r == k { l } else { 0.0 }))
            .collect();
        let candidates = [
            cross(rows[0], rows[1]),
            cross(rows[0], rows[2]),
            cross(rows[1], rows[2]),
        ];
        let norm = |v: &[f64; 3]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut v = *candidates
            .iter()
            .max_by(|p, q| norm(p).total_cmp(&norm(q)))
            .unwrap();
        let var: f64 = (0..3)
            .map(|p| (0..3).map(|q| v[p] * c.sxx[p][q] * v[q]).sum::<f64>())
            .sum();
        for a in v.iter_mut() {
            *a /= var.sqrt();
        }
        let h: Vec<f64> = c.xc.iter().map(|row| (0..3).map(|k| row[k] * v[k]).sum()).collect();
        weights[i] = (0..3)
            .map(|j| h.iter().zip(&c.xc).map(|(hv, row)| hv * row[j]).sum::<f64>().abs())
            .sum();
        rhos[i] = l.max(0.0).sqrt().min(1.0);
    }
    let total: f64 = weights.iter().sum();
    weights.iter().zip(&rhos).map(|(w, r)| w / total * r).sum()
}

// ---------------------------------------------------------------------------
// Fusion operators written out in f64 from their definitions.

/// Row-major f64 matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::new(m.rows(), m.cols(), to_f64(m.as_slice()))
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for j in 0..other.cols {
                out[i * other.cols + j] = (0..self.cols).map(|k| self.at(i, k) * other.at(k, j)).sum();
            }
        }
        Dense::new(self.rows, other.cols, out)
    }
}

pub fn sum_product(z: &Dense, g: &Dense) -> f64 {
    z.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
}

pub fn weighted64(r: &Dense, d: &Dense, theta: f64) -> Dense {
    let lambda = 1.0 / (1.0 + (-theta).exp());
    let data = r.data.iter().zip(&d.data).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    Dense::new(r.rows, r.cols, data)
}

pub fn moe64(r: &Dense, d: &Dense, w: &Dense) -> Dense {
    let logits = r.mul(w);
    let mut out = vec![0.0; r.rows * r.cols];
    for t in 0..r.rows {
        let (a, b) = (logits.at(t, 0), logits.at(t, 1));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let (g0, g1) = (ea / (ea + eb), eb / (ea + eb));
        for j in 0..r.cols {
            out[t * r.cols + j] = g0 * r.at(t, j) + g1 * d.at(t, j);
        }
    }
    Dense::new(r.rows, r.cols, out)
}

pub const LN_EPS: f64 = 1e-5;

/// Single-block multi-head cross attention with residual layer norm.
/// `w` holds Wq, Wk, Wv, Wo.
#[allow(clippy::too_many_arguments)]
pub fn xattn64(r: &Dense, d: &Dense, w: [&Dense; 4], gain: &[f64], bias: &[f64], heads: usize) -> Dense {
    let (t_len, dim) = (r.rows, r.cols);
    let q = r.mul(w[0]);
    let k = d.mul(w[1]);
    let v = d.mul(w[2]);
    let dh = dim / heads;
    let mut concat = vec![0.0; t_len * dim];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for t in 0..t_len {
            let scores: Vec<f64> = (0..t_len)
                .map(|s| cols.clone().map(|j| q.at(t, j) * k.at(s, j)).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in cols.clone() {
                concat[t * dim + j] = (0..t_len).map(|s| e[s] / z * v.at(s, j)).sum();
            }
        }
    }
    let attended = Dense::new(t_len, dim, concat).mul(w[3]);
    let mut out = vec![0.0; t_len * dim];
    for t in 0..t_len {
        let x: Vec<f64> = (0..dim).map(|j| r.at(t, j) + attended.at(t, j)).collect();
        let mean = x.iter().sum::<f64>() / dim as f64;
        let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / dim as f64;
        for j in 0..dim {
            out[t * dim + j] = (x[j] - mean) / (var + LN_EPS).sqrt() * gain[j] + bias[j];
        }
    }
    Dense::new(t_len, dim, out)
}

pub mod suites;
