//! The self-normalizer `V_n(k)` for every split point `k`, computed either
//! directly from the deviation matrices `C_{1,k}`, `C_{n,k+1}` or by a
//! recursive sweep.
//!
//! The recursive sweep writes the forward block as
//! `F(k) = A_k - (M_k S_kᵀ + S_k M_kᵀ)/k + (Q_k/k²) S_k S_kᵀ` with running
//! sums `A_k = Σ S_j S_jᵀ`, `M_k = Σ j S_j`, `Q_k = Σ j²` of the partial sums
//! `S_j`, and the backward block the same way from the other end. The inverse
//! comes from `H_k = A_k + A'_{n-k}`, whose inverse is carried along by
//! Sherman-Morrison updates, corrected for the rank-4 centring term with a
//! Woodbury identity.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;

use crate::linalg::{inv_spd, min_eigenvalue, symmetrize};

/// Relative eigenvalue floor below which `V_n(k)` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Denominator magnitude that triggers a direct inversion.
pub const BREAKDOWN_TOL: f64 = 1e-12;

const REFRESH_EVERY: usize = 64;

/// One evaluated split point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub k: usize,
    pub v: DMatrix<f64>,
    /// `None` when `V_n(k)` is singular by the eigenvalue rule.
    pub v_inv: Option<DMatrix<f64>>,
}

/// Normalizers over a grid of split points.
#[derive(Debug, Clone, Default)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Split points where a low-rank update broke down and the inverse was
    /// computed directly.
    pub fallbacks: Vec<usize>,
}

/// Prefix sums `S_1..S_n` of the rows of `x` (row `j-1` holds `S_j`).
fn prefix_sums(x: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut acc = DVector::zeros(x.ncols());
    (0..x.nrows())
        .map(|i| {
            acc += x.row(i).transpose();
            acc.clone()
        })
        .collect()
}

fn centred(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scores.nrows() as f64;
    let mean = scores.row_sum() / n;
    let mut x = scores.clone();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    x
}

/// Rounding-level scale of `V_n(k)`: the trace of the uncentred sum of
/// squared partial sums, divided by `n²`.
struct RoundingScale {
    forward: Vec<f64>,
    backward: Vec<f64>,
}

impl RoundingScale {
    fn new(partial: &[DVector<f64>]) -> Self {
        let n = partial.len();
        let total = &partial[n - 1];
        let mut forward = vec![0.0; n + 1];
        let mut backward = vec![0.0; n + 1];
        for j in 1..=n {
            forward[j] = forward[j - 1] + partial[j - 1].norm_squared();
            let r = if j == n { total.clone() } else { total - &partial[n - j - 1] };
            backward[j] = backward[j - 1] + r.norm_squared();
        }
        Self { forward, backward }
    }

    fn at(&self, k: usize, n: usize) -> f64 {
        (self.forward[k] + self.backward[n - k]) / (n * n) as f64
    }
}

fn is_singular(v: &DMatrix<f64>, rounding: f64) -> bool {
    let q = v.nrows() as f64;
    let floor = (SINGULAR_TOL * v.trace() / q).max(1e-13 * rounding / q);
    !(min_eigenvalue(v) >= floor) || v.trace() <= 0.0
}

/// `C_{a,b}` columns for the forward (`a ≤ b`) or backward (`a > b`)
/// direction, 1-based positions, from the raw scores.
pub fn deviation_matrix(scores: &DMatrix<f64>, a: usize, b: usize) -> DMatrix<f64> {
    let q = scores.ncols();
    let m = a.abs_diff(b) + 1;
    let step = |j: usize| if a <= b { a + j - 1 } else { a + 1 - j };
    let mut partial = Vec::with_capacity(m);
    let mut acc = DVector::zeros(q);
    for j in 1..=m {
        acc += scores.row(step(j) - 1).transpose();
        partial.push(acc.clone());
    }
    let total = partial[m - 1].clone();
    let mut c = DMatrix::zeros(q, m);
    for j in 1..=m {
        let col = &partial[j - 1] - &total * (j as f64 / m as f64);
        c.set_column(j - 1, &col);
    }
    c
}

/// `V_n(k) = n⁻² [C_{1,k} C_{1,k}ᵀ + C_{n,k+1} C_{n,k+1}ᵀ]`.
pub fn normalizer_direct(scores: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = scores.nrows();
    let f = deviation_matrix(scores, 1, k);
    let g = deviation_matrix(scores, n, k + 1);
    symmetrize((&f * f.transpose() + &g * g.transpose()) / (n * n) as f64)
}

/// Direct sweep: every `V_n(k)` built from its deviation matrices and
/// inverted by Cholesky. Split points are evaluated in parallel.
pub fn sweep_direct(scores: &DMatrix<f64>, ks: &[usize]) -> Sweep {
    let centred_partial = prefix_sums(&centred(scores));
    let rounding = RoundingScale::new(&centred_partial);
    let n = scores.nrows();
    let points = ks
        .par_iter()
        .map(|&k| {
            let v = normalizer_direct(scores, k);
            let v_inv = if is_singular(&v, rounding.at(k, n)) { None } else { inv_spd(&v) };
            SweepPoint { k, v, v_inv }
        })
        .collect();
    Sweep { points, fallbacks: Vec::new() }
}

/// Running forward sums for the recursive sweep.
struct Running {
    a: DMatrix<f64>,
    m: DVector<f64>,
    q: f64,
}

impl Running {
    fn new(dim: usize) -> Self {
        Self { a: DMatrix::zeros(dim, dim), m: DVector::zeros(dim), q: 0.0 }
    }

    fn push(&mut self, j: usize, s: &DVector<f64>) {
        self.a.ger(1.0, s, s, 1.0);
        self.m.axpy(j as f64, s, 1.0);
        self.q += (j * j) as f64;
    }

    /// Centred block `Σ (S_j - (j/k) S_k)(·)ᵀ` for the current `k`.
    fn block(&self, k: usize, last: &DVector<f64>) -> DMatrix<f64> {
        let kf = k as f64;
        let mut out = self.a.clone();
        out.ger(-1.0 / kf, &self.m, last, 1.0);
        out.ger(-1.0 / kf, last, &self.m, 1.0);
        out.ger(self.q / (kf * kf), last, last, 1.0);
        out
    }
}

/// Backward quantities for split point `k`: the centred block and the raw
/// accumulators `(A', M', Q')` over the last `n-k` cases.
struct BackwardBlock {
    block: DMatrix<f64>,
    a: DMatrix<f64>,
    m: DVector<f64>,
    q: f64,
}

fn backward_blocks(partial: &[DVector<f64>], ks: &[usize], keep_raw: bool) -> Vec<Option<BackwardBlock>> {
    let n = partial.len();
    let dim = partial[0].len();
    let total = &partial[n - 1];
    let mut wanted = vec![false; n];
    for &k in ks {
        wanted[k] = true;
    }
    let mut out: Vec<Option<BackwardBlock>> = (0..n).map(|_| None).collect();
    let mut run = Running::new(dim);
    for m in 1..n {
        // R_m = S_n - S_{n-m}
        let r = total - &partial[n - m - 1];
        run.push(m, &r);
        let k = n - m;
        if wanted[k] {
            out[k] = Some(BackwardBlock {
                block: run.block(m, &r),
                a: if keep_raw { run.a.clone() } else { DMatrix::zeros(0, 0) },
                m: run.m.clone(),
                q: run.q,
            });
        }
    }
    out
}

/// Recursive sweep over `ks` (ascending, within `1..n-1`). For one column the
/// inverse is a reciprocal; for more, consecutive split points reuse the
/// previous `H⁻¹` through rank-one updates.
pub fn sweep_recursive(scores: &DMatrix<f64>, ks: &[usize]) -> Sweep {
    let n = scores.nrows();
    let dim = scores.ncols();
    let x = centred(scores);
    let partial = prefix_sums(&x);
    let rounding = RoundingScale::new(&partial);
    let use_woodbury = dim > 1;
    let backward = backward_blocks(&partial, ks, use_woodbury);
    let total = partial[n - 1].clone();
    let n2 = (n * n) as f64;

    let mut fwd = Running::new(dim);
    let mut pushed = 0usize;
    let mut h_inv: Option<DMatrix<f64>> = None;
    let mut last_k = 0usize;
    let mut since_refresh = 0usize;
    let mut sweep = Sweep::default();

    for &k in ks {
        while pushed < k {
            pushed += 1;
            fwd.push(pushed, &partial[pushed - 1]);
        }
        let s_k = &partial[k - 1];
        let back = backward[k].as_ref().expect("backward block computed for every k");
        let v = symmetrize((fwd.block(k, s_k) + &back.block) / n2);
        if is_singular(&v, rounding.at(k, n)) {
            sweep.points.push(SweepPoint { k, v, v_inv: None });
            h_inv = None;
            continue;
        }
        if !use_woodbury {
            let inv = DMatrix::from_element(1, 1, 1.0 / v[(0, 0)]);
            sweep.points.push(SweepPoint { k, v, v_inv: Some(inv) });
            continue;
        }

        // carry H⁻¹ forward from k-1 when possible
        let mut broke = false;
        h_inv = match h_inv.take() {
            Some(mut hi) if last_k + 1 == k && since_refresh < REFRESH_EVERY => {
                // forward gains S_k S_kᵀ, backward loses R_{n-k+1} R_{n-k+1}ᵀ
                let r_out = &total - &partial[k - 2];
                broke |= !rank_one(&mut hi, s_k, 1.0);
                broke |= !broke && !rank_one(&mut hi, &r_out, -1.0);
                since_refresh += 1;
                if broke {
                    None
                } else {
                    Some(hi)
                }
            }
            _ => None,
        };
        if h_inv.is_none() {
            since_refresh = 0;
            h_inv = inv_spd(&(&fwd.a + &back.a));
        }
        last_k = k;

        let m = n - k;
        let r_m = &total - s_k;
        let inv = h_inv.as_ref().and_then(|hi| {
            woodbury(hi, [&fwd.m, s_k, &back.m, &r_m], [(fwd.q, k as f64), (back.q, m as f64)])
        });
        let inv = match inv {
            Some(w) => w * n2,
            None => {
                sweep.fallbacks.push(k);
                match inv_spd(&v) {
                    Some(i) => i,
                    None => {
                        sweep.points.push(SweepPoint { k, v, v_inv: None });
                        continue;
                    }
                }
            }
        };
        if broke {
            sweep.fallbacks.push(k);
        }
        sweep.points.push(SweepPoint { k, v, v_inv: Some(symmetrize(inv)) });
    }
    sweep.fallbacks.sort_unstable();
    sweep.fallbacks.dedup();
    sweep
}

/// In-place Sherman-Morrison update of `H⁻¹` for `H ± w wᵀ`. Returns false
/// when the denominator is too small.
fn rank_one(h_inv: &mut DMatrix<f64>, w: &DVector<f64>, sign: f64) -> bool {
    let hw = &*h_inv * w;
    let denom = 1.0 + sign * w.dot(&hw);
    if denom.abs() < BREAKDOWN_TOL || !denom.is_finite() {
        return false;
    }
    h_inv.ger(-sign / denom, &hw, &hw, 1.0);
    true
}

/// `(H - U Ψ Uᵀ)⁻¹` with `Ψ⁻¹ = diag([[Q_f, k], [k, 0]], [[Q_b, m], [m, 0]])`.
fn woodbury(h_inv: &DMatrix<f64>, u: [&DVector<f64>; 4], psi: [(f64, f64); 2]) -> Option<DMatrix<f64>> {
    let dim = h_inv.nrows();
    let mut um = DMatrix::zeros(dim, 4);
    for (j, col) in u.iter().enumerate() {
        um.set_column(j, col);
    }
    let hu = h_inv * &um;
    let utu = um.transpose() * &hu;
    let mut cap = Matrix4::<f64>::zeros();
    for (blk, (qv, kv)) in psi.iter().enumerate() {
        let o = 2 * blk;
        cap[(o, o)] = *qv;
        cap[(o, o + 1)] = *kv;
        cap[(o + 1, o)] = *kv;
    }
    for i in 0..4 {
        for j in 0..4 {
            cap[(i, j)] -= utu[(i, j)];
        }
    }
    let lu = cap.full_piv_lu();
    let u_diag = lu.u().diagonal();
    let scale = cap.amax();
    if u_diag.iter().any(|d| d.abs() < BREAKDOWN_TOL * scale) {
        return None;
    }
    let mut correction = DMatrix::zeros(dim, dim);
    let hut = hu.transpose();
    for c in 0..dim {
        let rhs = Vector4::new(hut[(0, c)], hut[(1, c)], hut[(2, c)], hut[(3, c)]);
        let sol = lu.solve(&rhs)?;
        for r in 0..dim {
            correction[(r, c)] = (0..4).map(|j| hu[(r, j)] * sol[j]).sum::<f64>();
        }
    }
    Some(h_inv + correction)
}
