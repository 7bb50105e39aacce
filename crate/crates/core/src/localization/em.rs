use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, seed};

const CHUNK: usize = 256;
const KMEANS_ITERS: usize = 25;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the per-sample objective gains less than this.
    pub tol: f64,
    pub restarts: usize,
    /// Relative covariance floor: `eps = floor * trace(cov) / d`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-7,
            restarts: 10,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Fitted two-component mixture. Component 1 is the minority
/// (weight <= component 0) and is treated as the anomalous one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureState {
    pub dim: usize,
    pub weights: [f64; 2],
    pub means: [Vec<f64>; 2],
    /// Row-major `dim x dim`.
    pub covariances: [Vec<f64>; 2],
    /// Final per-sample penalized log-likelihood.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub restart: usize,
    pub epsilon: f64,
    pub degenerate: bool,
}

impl GaussianMixtureState {
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        s.weights.swap(0, 1);
        s.means.swap(0, 1);
        s.covariances.swap(0, 1);
        s
    }

    /// `log p(x | 1) - log p(x | 0)` for every row; zeros when degenerate.
    pub fn log_likelihood_ratio(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        if self.degenerate {
            return Ok(vec![0.0; points.nrows()]);
        }
        check_points(points, self.dim)?;
        let comps = [self.component(0)?, self.component(1)?];
        Ok(par::map_range(points.nrows(), |i| {
            let x = row(points, i);
            comps[1].log_density(&x) - comps[0].log_density(&x)
        }))
    }

    fn component(&self, k: usize) -> Result<Component> {
        let d = self.dim;
        let cov = DMatrix::from_row_slice(d, d, &self.covariances[k]);
        Component::new(self.weights[k], DVector::from_column_slice(&self.means[k]), cov)
    }
}

struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    l: DMatrix<f64>,
    log_det: f64,
    trace_inv: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Data("mixture covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace_inv = chol.inverse().trace();
        Ok(Self {
            log_weight: weight.ln(),
            mean,
            cov,
            l,
            log_det,
            trace_inv,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self
            .l
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det + y.norm_squared())
    }
}

fn row(points: &Array2<f64>, i: usize) -> DVector<f64> {
    DVector::from_iterator(points.ncols(), points.row(i).iter().copied())
}

fn check_points(points: &Array2<f64>, dim: usize) -> Result<()> {
    if points.ncols() != dim {
        return Err(Error::Shape {
            expected: (points.nrows(), dim),
            actual: points.dim(),
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature vector".into()));
    }
    Ok(())
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-point penalized component terms
/// `log pi_k + log N(x | mu_k, S_k) - eps/2 tr(S_k^-1)`.
fn joint_terms(points: &Array2<f64>, comps: &[Component; 2], eps: f64) -> Vec<[f64; 2]> {
    let pen = [0.5 * eps * comps[0].trace_inv, 0.5 * eps * comps[1].trace_inv];
    par::map_range(points.nrows(), |i| {
        let x = row(points, i);
        let mut t = [0.0; 2];
        for k in 0..2 {
            t[k] = if comps[k].log_weight == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                comps[k].log_weight + comps[k].log_density(&x) - pen[k]
            };
        }
        t
    })
}

/// Weighted mean/scatter sums for both components, reduced in chunk order.
fn m_step(points: &Array2<f64>, resp: &[[f64; 2]], eps: f64, prev: Option<&[Component; 2]>) -> Result<[Component; 2]> {
    let (n, d) = points.dim();
    let chunks = n.div_ceil(CHUNK);
    let partial_first = par::map_range(chunks, |c| {
        let mut mass = [0.0; 2];
        let mut sum = [DVector::zeros(d), DVector::zeros(d)];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let x = row(points, i);
            for k in 0..2 {
                mass[k] += resp[i][k];
                sum[k].axpy(resp[i][k], &x, 1.0);
            }
        }
        (mass, sum)
    });
    let mut mass = [0.0; 2];
    let mut sum = [DVector::zeros(d), DVector::zeros(d)];
    for (m, s) in partial_first {
        for k in 0..2 {
            mass[k] += m[k];
            sum[k] += &s[k];
        }
    }
    let means: Vec<DVector<f64>> = (0..2)
        .map(|k| {
            if mass[k] > 0.0 {
                &sum[k] / mass[k]
            } else {
                prev.map_or_else(|| DVector::zeros(d), |p| p[k].mean.clone())
            }
        })
        .collect();
    let partial_scatter = par::map_range(chunks, |c| {
        let mut sc = [DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let x = row(points, i);
            for k in 0..2 {
                let diff = &x - &means[k];
                sc[k].ger(resp[i][k], &diff, &diff, 1.0);
            }
        }
        sc
    });
    let mut scatter = [DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
    for sc in partial_scatter {
        for k in 0..2 {
            scatter[k] += &sc[k];
        }
    }
    let build = |k: usize| -> Result<Component> {
        let cov = if mass[k] > 0.0 {
            let mut c = &scatter[k] / mass[k] + DMatrix::identity(d, d) * eps;
            c = (&c + c.transpose()) * 0.5;
            c
        } else {
            prev.map_or_else(|| DMatrix::identity(d, d) * eps, |p| p[k].cov.clone())
        };
        Component::new(mass[k] / n as f64, means[k].clone(), cov)
    };
    Ok([build(0)?, build(1)?])
}

fn e_step(terms: &[[f64; 2]]) -> (Vec<[f64; 2]>, f64) {
    let mut total = 0.0;
    let resp = terms
        .iter()
        .map(|t| {
            let z = log_sum_exp(t[0], t[1]);
            total += z;
            [(t[0] - z).exp(), (t[1] - z).exp()]
        })
        .collect();
    (resp, total / terms.len() as f64)
}

fn kmeans_init(points: &Array2<f64>, seed: u64, restart: usize) -> Vec<[f64; 2]> {
    let n = points.nrows();
    let mut rng = seed::rng_for(seed, &format!("em-restart-{restart}"));
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let mut centers = [points.row(a).to_owned(), points.row(b).to_owned()];
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let next: Vec<usize> = par::map_range(n, |i| {
            let p = points.row(i);
            let d0 = (&p - &centers[0]).mapv(|v| v * v).sum();
            let d1 = (&p - &centers[1]).mapv(|v| v * v).sum();
            usize::from(d1 < d0)
        });
        let changed = next != assign;
        assign = next;
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
            if members.is_empty() {
                continue;
            }
            let mut c = ndarray::Array1::<f64>::zeros(points.ncols());
            for &i in &members {
                c += &points.row(i);
            }
            *center = c / members.len() as f64;
        }
        if !changed {
            break;
        }
    }
    let counts = [assign.iter().filter(|&&k| k == 0).count(), assign.iter().filter(|&&k| k == 1).count()];
    if counts[0] == 0 || counts[1] == 0 {
        return vec![[0.5, 0.5]; n];
    }
    assign
        .iter()
        .map(|&k| if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect()
}

struct Fit {
    comps: [Component; 2],
    history: Vec<f64>,
    iterations: usize,
}

fn run_restart(points: &Array2<f64>, eps: f64, opts: &EmOptions, restart: usize) -> Result<Fit> {
    let resp0 = kmeans_init(points, opts.seed, restart);
    let mut comps = m_step(points, &resp0, eps, None)?;
    let (mut resp, mut ll) = e_step(&joint_terms(points, &comps, eps));
    let mut history = vec![ll];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        comps = m_step(points, &resp, eps, Some(&comps))?;
        let (r, next) = e_step(&joint_terms(points, &comps, eps));
        iterations += 1;
        history.push(next);
        let gain = next - ll;
        resp = r;
        ll = next;
        if gain < opts.tol {
            break;
        }
    }
    Ok(Fit {
        comps,
        history,
        iterations,
    })
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|i| m[(i / d, i % d)]).collect()
}

/// Two-component Gaussian-mixture EM with k-means restarts. Each M-step adds
/// `eps * I` to the covariances and the tracked objective carries the matching
/// `-eps/2 tr(S^-1)` penalty, so the recorded sequence is monotone.
pub fn em_fit(points: &Array2<f64>, degenerate: bool, opts: &EmOptions) -> Result<GaussianMixtureState> {
    let (n, d) = points.dim();
    if d == 0 {
        return Err(Error::Config("mixture dimension must be positive".into()));
    }
    if n < 2 * d || n < 2 {
        return Err(Error::Data(format!("EM needs at least {} vectors, have {n}", (2 * d).max(2))));
    }
    if opts.restarts == 0 {
        return Err(Error::Config("EM needs at least one restart".into()));
    }
    check_points(points, d)?;
    let mean: Vec<f64> = (0..d).map(|j| points.column(j).sum() / n as f64).collect();
    let trace: f64 = (0..d)
        .map(|j| points.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64)
        .sum();
    let eps = opts.floor * trace / d as f64;
    if degenerate || !(eps > 0.0) {
        let ident: Vec<f64> = flatten(&DMatrix::identity(d, d));
        return Ok(GaussianMixtureState {
            dim: d,
            weights: [0.5, 0.5],
            means: [mean.clone(), mean],
            covariances: [ident.clone(), ident],
            log_likelihood: 0.0,
            iterations: 0,
            history: Vec::new(),
            restart: 0,
            epsilon: eps,
            degenerate: true,
        });
    }
    let fits = par::map_range(opts.restarts, |r| run_restart(points, eps, opts, r));
    let mut best: Option<(usize, Fit)> = None;
    for (r, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        let better = match &best {
            None => true,
            Some((_, b)) => fit.history.last() > b.history.last(),
        };
        if better {
            best = Some((r, fit));
        }
    }
    let (restart, fit) = best.expect("at least one restart");
    let w = [fit.comps[0].log_weight.exp(), fit.comps[1].log_weight.exp()];
    let order = if w[1] > w[0] { [1, 0] } else { [0, 1] };
    Ok(GaussianMixtureState {
        dim: d,
        weights: [w[order[0]], w[order[1]]],
        means: order.map(|k| fit.comps[k].mean.iter().copied().collect()),
        covariances: order.map(|k| flatten(&fit.comps[k].cov)),
        log_likelihood: *fit.history.last().expect("history starts non-empty"),
        iterations: fit.iterations,
        history: fit.history,
        restart,
        epsilon: eps,
        degenerate: false,
    })
}

/// Posterior of the anomalous component per row.
pub fn responsibilities(state: &GaussianMixtureState, points: &Array2<f64>) -> Result<Vec<f64>> {
    let llr = state.log_likelihood_ratio(points)?;
    let lw = (state.weights[1] / state.weights[0]).ln();
    Ok(llr.into_iter().map(|v| 1.0 / (1.0 + (-(v + lw)).exp())).collect())
}
