//! Two-level linear mixed model `y_j = X_j β + Z_j b_j + e_j`,
//! `b_j ~ N(0, G)`, `e_j ~ N(0, σ² I)`, fitted by marginal maximum likelihood.
//!
//! Parameters are reported in the order `β_1..β_p`, `vech(G)` (column-major
//! lower triangle), `σ²`. The optimizer works on the relative Cholesky factor
//! `L` with `G = σ² L Lᵀ`, profiling `β` and `σ²` out in closed form, and
//! finishes with Fisher scoring in the reporting parameterization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Cluster, LongDataset};
use crate::error::{Error, Result};
use crate::linalg::{inv_spd, inverse_condition, min_eigenvalue, psd_cholesky, symmetrize};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative size (of `G / σ²`) below which a variance component counts as
/// estimated on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Eigenvector component above which an effect counts as part of a null
/// direction of the random-effect correlation matrix.
const NULL_LOADING: f64 = 1e-3;

/// Dimensions and labels of the model's parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    p: usize,
    r: usize,
    names: Vec<String>,
}

impl ModelSpec {
    pub fn new(p: usize, r: usize, names: Vec<String>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("model needs at least one fixed effect".into()));
        }
        let q = p + r * (r + 1) / 2 + 1;
        if names.len() != q {
            return Err(Error::InvalidArgument(format!(
                "expected {q} parameter names, got {}",
                names.len()
            )));
        }
        Ok(Self { p, r, names })
    }

    /// Labels derived from the dataset's covariate names: fixed names as-is,
    /// `var(z)` / `cov(z1,z2)` for the random-effect covariance, `residual`.
    pub fn for_dataset(data: &LongDataset) -> Self {
        let (p, r) = (data.p(), data.r());
        let fixed = data.fixed_names();
        let random = data.random_names();
        let mut names: Vec<String> = fixed.to_vec();
        for (a, b) in vech_pairs(r) {
            if a == b {
                names.push(format!("var({})", random[a]));
            } else {
                names.push(format!("cov({},{})", random[b], random[a]));
            }
        }
        names.push("residual".into());
        Self { p, r, names }
    }

    pub fn with_names(self, names: Vec<String>) -> Result<Self> {
        Self::new(self.p, self.r, names)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of random-effect covariance parameters.
    pub fn n_vc(&self) -> usize {
        self.r * (self.r + 1) / 2
    }

    pub fn q(&self) -> usize {
        self.p + self.n_vc() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn residual_index(&self) -> usize {
        self.q() - 1
    }

    fn check(&self, data: &LongDataset) -> Result<()> {
        if data.p() != self.p || data.r() != self.r {
            return Err(Error::InvalidArgument(format!(
                "model has p={}, r={} but data has p={}, r={}",
                self.p,
                self.r,
                data.p(),
                data.r()
            )));
        }
        Ok(())
    }
}

/// `(row, col)` pairs of the lower triangle in column-major order.
pub fn vech_pairs(r: usize) -> Vec<(usize, usize)> {
    (0..r).flat_map(|b| (b..r).map(move |a| (a, b))).collect()
}

/// Parameter values in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_parts(spec: &ModelSpec, beta: &[f64], g: &DMatrix<f64>, sigma2: f64) -> Self {
        let mut values = beta.to_vec();
        values.extend(vech_pairs(spec.r).into_iter().map(|(a, b)| g[(a, b)]));
        values.push(sigma2);
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn beta(&self, spec: &ModelSpec) -> DVector<f64> {
        DVector::from_column_slice(&self.values[..spec.p])
    }

    pub fn g_matrix(&self, spec: &ModelSpec) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(spec.r, spec.r);
        for (k, (a, b)) in vech_pairs(spec.r).into_iter().enumerate() {
            let v = self.values[spec.p + k];
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
        g
    }

    pub fn sigma2(&self) -> f64 {
        *self.values.last().expect("empty theta")
    }

    /// Checks the length, `σ² > 0`, and that `G` is positive semi-definite.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.values.len() != spec.q() {
            return Err(Error::InvalidArgument(format!(
                "theta has length {}, model needs {}",
                self.values.len(),
                spec.q()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("theta has non-finite entries".into()));
        }
        if !(self.sigma2() > 0.0) {
            return Err(Error::InvalidArgument("residual variance must be positive".into()));
        }
        if spec.r > 0 {
            let g = self.g_matrix(spec);
            let scale = g.trace().abs().max(1.0);
            if min_eigenvalue(&g) < -1e-10 * scale {
                return Err(Error::InvalidArgument(
                    "random-effect covariance is not positive semi-definite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Euclidean norm bound on the log-likelihood gradient (reporting parameters).
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 500 }
    }
}

/// Result of [`fit_ml`].
#[derive(Debug, Clone)]
pub struct FittedLmm {
    pub spec: ModelSpec,
    pub theta_hat: ThetaVector,
    pub loglik: f64,
    /// Expected information (whole sample) at `theta_hat`.
    pub info: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Optimality measure: the gradient norm in the reporting parameters for
    /// interior fits; on the boundary, the gradient norm in `(β, C, σ²)`
    /// with `G = C Cᵀ`.
    pub grad_norm: f64,
    /// Per parameter: estimate lies on the boundary of the parameter space.
    pub boundary: Vec<bool>,
}

impl FittedLmm {
    pub fn is_interior(&self) -> bool {
        !self.boundary.iter().any(|&b| b)
    }
}

/// Cholesky-based solves for one cluster at a given parameter value.
pub(crate) struct ClusterSolve {
    pub vinv: DMatrix<f64>,
    /// `V⁻¹ (y - Xβ)`
    pub u: DVector<f64>,
    pub logdet: f64,
    pub quad: f64,
}

pub(crate) fn solve_cluster(
    beta: &DVector<f64>,
    g: &DMatrix<f64>,
    sigma2: f64,
    cl: &Cluster,
) -> Result<ClusterSolve> {
    let nj = cl.len();
    let mut v = &cl.z * g * cl.z.transpose();
    for i in 0..nj {
        v[(i, i)] += sigma2;
    }
    let chol = v.cholesky().ok_or_else(|| Error::SingularCluster { cluster: cl.id.clone() })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let resid = &cl.y - &cl.x * beta;
    let u = chol.solve(&resid);
    let quad = resid.dot(&u);
    let vinv = symmetrize(chol.inverse());
    Ok(ClusterSolve { vinv, u, logdet, quad })
}

/// `∂V_j/∂θ_k` for every variance parameter: `vech(G)` entries then `σ²`.
pub(crate) fn dv_matrices(spec: &ModelSpec, z: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let nj = z.nrows();
    let mut out = Vec::with_capacity(spec.n_vc() + 1);
    for (a, b) in vech_pairs(spec.r) {
        let za = z.column(a);
        let zb = z.column(b);
        let d = if a == b {
            za * za.transpose()
        } else {
            za * zb.transpose() + zb * za.transpose()
        };
        out.push(d);
    }
    out.push(DMatrix::identity(nj, nj));
    out
}

fn cluster_loglik_from(solve: &ClusterSolve, nj: usize) -> f64 {
    -0.5 * (nj as f64 * LN_2PI + solve.logdet + solve.quad)
}

/// Log-likelihood contribution of a single cluster.
pub fn cluster_loglik(spec: &ModelSpec, theta: &ThetaVector, cl: &Cluster) -> Result<f64> {
    let s = solve_cluster(&theta.beta(spec), &theta.g_matrix(spec), theta.sigma2(), cl)?;
    Ok(cluster_loglik_from(&s, cl.len()))
}

/// Marginal log-likelihood `Σ_j ℓ_j` of the data.
pub fn marginal_loglik(spec: &ModelSpec, theta: &ThetaVector, data: &LongDataset) -> Result<f64> {
    spec.check(data)?;
    theta.validate(spec)?;
    let beta = theta.beta(spec);
    let g = theta.g_matrix(spec);
    let sigma2 = theta.sigma2();
    data.clusters().iter().try_fold(0.0, |acc, cl| {
        let s = solve_cluster(&beta, &g, sigma2, cl)?;
        Ok(acc + cluster_loglik_from(&s, cl.len()))
    })
}

/// Analytic score of one cluster in the reporting parameterization.
pub fn cluster_score(spec: &ModelSpec, theta: &ThetaVector, cl: &Cluster) -> Result<DVector<f64>> {
    let s = solve_cluster(&theta.beta(spec), &theta.g_matrix(spec), theta.sigma2(), cl)?;
    Ok(cluster_score_from(spec, cl, &s))
}

fn cluster_score_from(spec: &ModelSpec, cl: &Cluster, s: &ClusterSolve) -> DVector<f64> {
    let mut out = DVector::zeros(spec.q());
    out.rows_mut(0, spec.p).copy_from(&(cl.x.transpose() * &s.u));
    for (k, d) in dv_matrices(spec, &cl.z).iter().enumerate() {
        let tr = s.vinv.component_mul(d).sum();
        let du = d * &s.u;
        out[spec.p + k] = -0.5 * tr + 0.5 * s.u.dot(&du);
    }
    out
}

/// Gradient of the marginal log-likelihood.
pub fn gradient(spec: &ModelSpec, theta: &ThetaVector, data: &LongDataset) -> Result<DVector<f64>> {
    spec.check(data)?;
    data.clusters().iter().try_fold(DVector::zeros(spec.q()), |acc, cl| {
        Ok(acc + cluster_score(spec, theta, cl)?)
    })
}

/// Expected information of the marginal likelihood at `theta`, block
/// diagonal in `(β, variance parameters)`.
pub fn expected_information(
    spec: &ModelSpec,
    theta: &ThetaVector,
    data: &LongDataset,
) -> Result<DMatrix<f64>> {
    spec.check(data)?;
    theta.validate(spec)?;
    let (p, q) = (spec.p, spec.q());
    let beta = theta.beta(spec);
    let g = theta.g_matrix(spec);
    let mut info = DMatrix::zeros(q, q);
    for cl in data.clusters() {
        let s = solve_cluster(&beta, &g, theta.sigma2(), cl)?;
        let xtvx = cl.x.transpose() * &s.vinv * &cl.x;
        let mut block = info.view_mut((0, 0), (p, p));
        block += xtvx;
        let prods: Vec<DMatrix<f64>> = dv_matrices(spec, &cl.z).iter().map(|d| &s.vinv * d).collect();
        for k in 0..prods.len() {
            for l in k..prods.len() {
                // tr(A B) = Σ_ij A_ij B_ji
                let t = prods[k].component_mul(&prods[l].transpose()).sum();
                info[(p + k, p + l)] += 0.5 * t;
            }
        }
    }
    for k in p..q {
        for l in (k + 1)..q {
            info[(l, k)] = info[(k, l)];
        }
    }
    Ok(info)
}

/// Expected information at a converged fit.
pub fn information_matrix(fitted: &FittedLmm, data: &LongDataset) -> Result<DMatrix<f64>> {
    if !fitted.converged {
        return Err(Error::NotConverged);
    }
    expected_information(&fitted.spec, &fitted.theta_hat, data)
}

/// Profiled deviance at relative Cholesky parameters `phi`.
struct ProfilePoint {
    deviance: f64,
    beta: DVector<f64>,
    sigma2: f64,
    /// Relative lower Cholesky factor, `G = σ² L Lᵀ`.
    l: DMatrix<f64>,
}

fn lower_from_phi(r: usize, phi: &DVector<f64>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(r, r);
    for (k, (a, b)) in vech_pairs(r).into_iter().enumerate() {
        l[(a, b)] = phi[k];
    }
    l
}

fn profile(spec: &ModelSpec, data: &LongDataset, phi: &DVector<f64>) -> Result<ProfilePoint> {
    let p = spec.p;
    let l = lower_from_phi(spec.r, phi);
    let lambda = &l * l.transpose();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    let mut logdet = 0.0;
    let mut chols = Vec::with_capacity(data.n_clusters());
    for cl in data.clusters() {
        let nj = cl.len();
        let mut w = &cl.z * &lambda * cl.z.transpose();
        for i in 0..nj {
            w[(i, i)] += 1.0;
        }
        let chol = w.cholesky().ok_or_else(|| Error::SingularCluster { cluster: cl.id.clone() })?;
        logdet += 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let wx = chol.solve(&cl.x);
        xtwx += cl.x.transpose() * &wx;
        xtwy += wx.transpose() * &cl.y;
        chols.push(chol);
    }
    let beta = xtwx
        .cholesky()
        .ok_or(Error::RankDeficient { condition: 0.0 })?
        .solve(&xtwy);
    let mut rss = 0.0;
    for (cl, chol) in data.clusters().iter().zip(&chols) {
        let resid = &cl.y - &cl.x * &beta;
        rss += resid.dot(&chol.solve(&resid));
    }
    let n = data.n() as f64;
    let sigma2 = rss / n;
    if !(sigma2 > 0.0) {
        return Err(Error::Data("residual sum of squares is zero; the model interpolates the data".into()));
    }
    let deviance = n * (1.0 + LN_2PI + sigma2.ln()) + logdet;
    Ok(ProfilePoint { deviance, beta, sigma2, l })
}

impl ProfilePoint {
    fn theta(&self, spec: &ModelSpec) -> ThetaVector {
        let g = (&self.l * self.l.transpose()) * self.sigma2;
        ThetaVector::from_parts(spec, self.beta.as_slice(), &g, self.sigma2)
    }
}

/// Deviance and its gradient with respect to `phi` (envelope theorem: the
/// profiled-out `β` and `σ²` contribute nothing at their optimum).
fn profile_with_gradient(
    spec: &ModelSpec,
    data: &LongDataset,
    phi: &DVector<f64>,
) -> Result<(ProfilePoint, DVector<f64>)> {
    let pt = profile(spec, data, phi)?;
    let r = spec.r;
    let theta = pt.theta(spec);
    let grad = gradient(spec, &theta, data)?;
    let mut gamma = DMatrix::zeros(r, r);
    for (k, (a, b)) in vech_pairs(r).into_iter().enumerate() {
        let gk = grad[spec.p + k];
        if a == b {
            gamma[(a, a)] = gk;
        } else {
            gamma[(a, b)] = 0.5 * gk;
            gamma[(b, a)] = 0.5 * gk;
        }
    }
    // dℓ/dL = 2 σ² Γ L ; deviance = -2ℓ
    let dl = gamma * &pt.l * (2.0 * pt.sigma2);
    let dphi = DVector::from_iterator(
        spec.n_vc(),
        vech_pairs(r).into_iter().map(|(a, b)| -2.0 * dl[(a, b)]),
    );
    Ok((pt, dphi))
}

struct BfgsOutcome {
    x: DVector<f64>,
    iterations: usize,
}

/// BFGS with Armijo backtracking; stops on a small gradient, on a stalled
/// line search, or after `max_iter` iterations.
fn bfgs<F>(mut f: F, x0: DVector<f64>, max_iter: usize, gtol: f64) -> Result<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut gx) = f(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;
    while iterations < max_iter {
        if gx.amax() <= gtol * (1.0 + fx.abs()) {
            break;
        }
        iterations += 1;
        let mut dir = -(&h * &gx);
        let mut slope = dir.dot(&gx);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -gx.clone();
            slope = dir.dot(&gx);
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let xn = &x + &dir * step;
            if let Ok((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h *= sy / y.dot(&y);
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let stalled = (fx - fn_).abs() <= 1e-15 * fx.abs().max(1.0) && s.amax() <= 1e-12;
        x = xn;
        fx = fn_;
        gx = gn;
        if stalled {
            break;
        }
    }
    Ok(BfgsOutcome { x, iterations })
}

/// Flags parameters whose estimate lies on the boundary. A random effect is
/// degenerate when its variance `G_aa / σ²` is below [`BOUNDARY_TOL`] or when
/// it loads (above [`NULL_LOADING`]) on a null direction of the correlation
/// matrix of the remaining effects, e.g. `|corr| = 1`. Every variance and
/// covariance touching a degenerate effect is flagged: the likelihood is
/// maximized on a constraint surface there and its score does not vanish.
fn boundary_flags(spec: &ModelSpec, theta: &ThetaVector) -> Vec<bool> {
    let g = theta.g_matrix(spec);
    let s2 = theta.sigma2();
    let mut degenerate: Vec<bool> = (0..spec.r).map(|a| g[(a, a)] / s2 <= BOUNDARY_TOL).collect();
    let live: Vec<usize> = (0..spec.r).filter(|&a| !degenerate[a]).collect();
    if live.len() > 1 {
        let corr = DMatrix::from_fn(live.len(), live.len(), |i, j| {
            let (a, b) = (live[i], live[j]);
            g[(a, b)] / (g[(a, a)] * g[(b, b)]).sqrt()
        });
        let eig = SymmetricEigen::new(corr);
        for (m, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= BOUNDARY_TOL {
                for (i, &a) in live.iter().enumerate() {
                    degenerate[a] |= eig.eigenvectors[(i, m)].abs() > NULL_LOADING;
                }
            }
        }
    }
    let mut flags = vec![false; spec.q()];
    for (k, (a, b)) in vech_pairs(spec.r).into_iter().enumerate() {
        flags[spec.p + k] = degenerate[a] || degenerate[b];
    }
    flags
}

/// Norm of the log-likelihood gradient in `(β, C, σ²)` with `G = C Cᵀ`,
/// `C` lower triangular. At a rank-deficient `G` this is the first-order
/// optimality measure on the constraint surface.
fn factor_gradient_norm(spec: &ModelSpec, grad: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let r = spec.r;
    let mut gamma = DMatrix::zeros(r, r);
    for (k, (a, b)) in vech_pairs(r).into_iter().enumerate() {
        let gk = grad[spec.p + k];
        if a == b {
            gamma[(a, a)] = gk;
        } else {
            gamma[(a, b)] = 0.5 * gk;
            gamma[(b, a)] = 0.5 * gk;
        }
    }
    let dc = gamma * c * 2.0;
    let fixed: f64 = grad.rows(0, spec.p).norm_squared();
    let factor: f64 = vech_pairs(r).into_iter().map(|(a, b)| dc[(a, b)].powi(2)).sum();
    let resid = grad[spec.q() - 1].powi(2);
    (fixed + factor + resid).sqrt()
}

fn masked_norm(g: &DVector<f64>, mask: &[bool]) -> f64 {
    g.iter()
        .zip(mask)
        .filter(|(_, &b)| !b)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Marginal maximum-likelihood fit.
pub fn fit_ml(spec: &ModelSpec, data: &LongDataset, opts: &FitOptions) -> Result<FittedLmm> {
    spec.check(data)?;
    let q = spec.q();
    if data.n() <= q {
        return Err(Error::TooFewObservations { n: data.n(), required: q + 1 });
    }
    let condition = inverse_condition(data.fixed());
    if condition < 1e-10 {
        return Err(Error::RankDeficient { condition });
    }

    let phi0 = DVector::from_iterator(
        spec.n_vc(),
        vech_pairs(spec.r).into_iter().map(|(a, b)| if a == b { 1.0 } else { 0.0 }),
    );
    let outcome = if spec.n_vc() > 0 {
        bfgs(
            |phi| profile_with_gradient(spec, data, phi).map(|(pt, g)| (pt.deviance, g)),
            phi0,
            opts.max_iter,
            1e-10,
        )?
    } else {
        BfgsOutcome { x: phi0, iterations: 0 }
    };
    let mut iterations = outcome.iterations;
    let start = profile(spec, data, &outcome.x)?;
    let mut theta = start.theta(spec);
    let boundary = boundary_flags(spec, &theta);
    let at_boundary = boundary.iter().any(|&b| b);
    let free: Vec<usize> = (0..q).filter(|&i| !boundary[i]).collect();
    let mut loglik = marginal_loglik(spec, &theta, data)?;
    let mut grad = gradient(spec, &theta, data)?;
    let optimality = |theta: &ThetaVector, grad: &DVector<f64>| {
        if at_boundary {
            factor_gradient_norm(spec, grad, &psd_cholesky(&theta.g_matrix(spec)))
        } else {
            masked_norm(grad, &boundary)
        }
    };
    let mut grad_norm = optimality(&theta, &grad);
    // Fisher scoring polish over the free parameters. On the boundary the
    // flagged block stays fixed, which keeps the iterate on the constraint
    // surface; the loop stops once the free gradient is negligible.
    while grad_norm > opts.grad_tol
        && masked_norm(&grad, &boundary) > 1e-3 * opts.grad_tol
        && iterations < opts.max_iter
    {
        iterations += 1;
        let info = expected_information(spec, &theta, data)?;
        let sub = info.select_rows(free.iter()).select_columns(free.iter());
        let gsub = grad.select_rows(free.iter());
        let Some(delta) = sub.cholesky().map(|c| c.solve(&gsub)) else { break };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let mut cand = theta.clone();
            for (j, &i) in free.iter().enumerate() {
                cand.values[i] += t * delta[j];
            }
            if is_admissible(spec, &cand) {
                if let Ok(ll) = marginal_loglik(spec, &cand, data) {
                    if ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                        theta = cand;
                        loglik = ll;
                        moved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        grad = gradient(spec, &theta, data)?;
        grad_norm = optimality(&theta, &grad);
    }

    let converged = grad_norm <= opts.grad_tol;
    let info = expected_information(spec, &theta, data)?;
    let loglik = marginal_loglik(spec, &theta, data)?;
    Ok(FittedLmm {
        spec: spec.clone(),
        theta_hat: theta,
        loglik,
        info,
        converged,
        iterations,
        grad_norm,
        boundary,
    })
}

fn is_admissible(spec: &ModelSpec, theta: &ThetaVector) -> bool {
    theta.sigma2() > 0.0 && theta.values.iter().all(|v| v.is_finite()) && theta.validate(spec).is_ok()
}

/// Ordinary least squares `β̂ = (XᵀX)⁻¹ Xᵀy`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = x.transpose() * x;
    inv_spd(&xtx).map(|inv| inv * (x.transpose() * y))
}
