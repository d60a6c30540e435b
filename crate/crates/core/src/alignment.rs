//! Domain-divergence losses.
//!
//! The primary alignment loss is the entropic optimal-transport cost computed
//! by alternating marginal scaling on the Gibbs kernel K = exp(-C/eta); the
//! loss is <C, P> for the resulting coupling P. Gradients with respect to
//! both point clouds are obtained by reverse-mode differentiation through the
//! exact sequence of scaling iterations that ran, so they agree with finite
//! differences of the computed value even when the iteration is truncated.
//!
//! A biased Gaussian-kernel MMD estimator is provided as the ablation
//! alternative, plus a gradient-magnitude probe comparing how both losses
//! (and a soft-histogram KL baseline) respond when the two clouds are pushed
//! apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Pairwise cost matrix C_ij = ||z_i - z_j||^p.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub costs: RealArray,
    pub exponent: f64,
}

/// Nonnegative coupling with prescribed marginals.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: RealArray,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl TransportPlan {
    /// Worst absolute violation of the prescribed marginals.
    pub fn marginal_violation(&self) -> f64 {
        let (n, m) = (self.plan.shape[0], self.plan.shape[1]);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let sum: f64 = (0..m).map(|j| self.plan.at2(i, j)).sum();
            worst = worst.max((sum - self.row_marginal[i]).abs());
        }
        for j in 0..m {
            let sum: f64 = (0..n).map(|i| self.plan.at2(i, j)).sum();
            worst = worst.max((sum - self.col_marginal[j]).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkhornDomain {
    /// Pick the log domain when exp(-C/eta) risks underflow.
    Auto,
    Scaling,
    LogDomain,
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    pub eta: f64,
    pub max_iterations: usize,
    pub exponent: f64,
    /// Stop once the row-marginal violation drops below this value.
    pub early_stop: Option<f64>,
    pub domain: SinkhornDomain,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            eta: 1e-3,
            max_iterations: 100,
            exponent: 2.0,
            early_stop: Some(1e-6),
            domain: SinkhornDomain::Auto,
        }
    }
}

#[derive(Debug)]
pub struct SinkhornResult {
    pub loss: f64,
    pub plan: TransportPlan,
    pub grad_source: Vec<Vec<f64>>,
    pub grad_target: Vec<Vec<f64>>,
}

/// Pairwise distances raised to `exponent`.
pub fn cost_matrix(source: &[Vec<f64>], target: &[Vec<f64>], exponent: f64) -> Result<CostMatrix> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("cost matrix needs non-empty batches".to_string()));
    }
    if exponent <= 0.0 {
        return Err(Error::invalid("cost exponent must be positive".to_string()));
    }
    let dim = source[0].len();
    for z in source.iter().chain(target.iter()) {
        if z.len() != dim {
            return Err(Error::shape(format!(
                "feature dimension mismatch: expected {dim}, got {}",
                z.len()
            )));
        }
    }
    let (n, m) = (source.len(), target.len());
    let mut costs = RealArray::zeros(&[n, m]);
    for (i, zi) in source.iter().enumerate() {
        for (j, zj) in target.iter().enumerate() {
            let dist_sq: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
            *costs.at2_mut(i, j) = if exponent == 2.0 {
                dist_sq
            } else {
                dist_sq.sqrt().powf(exponent)
            };
        }
    }
    Ok(CostMatrix { costs, exponent })
}

/// Entropic transport cost between uniformly weighted point clouds.
///
/// Runs `iterations` rounds of a <- mu / (K b), b <- nu / (K^T a) (stopping
/// early once the row marginal settles below 1e-6) and returns
/// sum(C . diag(a) K diag(b)) together with the coupling.
pub fn sinkhorn_loss(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    eta: f64,
    iterations: usize,
    exponent: f64,
) -> Result<(f64, TransportPlan)> {
    let opts = SinkhornOptions {
        eta,
        max_iterations: iterations,
        exponent,
        ..SinkhornOptions::default()
    };
    let result = sinkhorn(source, target, &opts)?;
    Ok((result.loss, result.plan))
}

/// Full entropic-transport computation including gradients with respect to
/// both point clouds (reverse mode through the scaling iterations).
pub fn sinkhorn(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    if opts.eta <= 0.0 {
        return Err(Error::invalid("sinkhorn eta must be positive".to_string()));
    }
    if opts.max_iterations == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration".to_string()));
    }
    let cm = cost_matrix(source, target, opts.exponent)?;
    let (n, m) = (source.len(), target.len());
    let mu = vec![1.0 / n as f64; n];
    let nu = vec![1.0 / m as f64; m];

    let max_cost = cm.costs.data.iter().cloned().fold(0.0_f64, f64::max);
    let use_log = match opts.domain {
        SinkhornDomain::Scaling => false,
        SinkhornDomain::LogDomain => true,
        SinkhornDomain::Auto => max_cost / opts.eta > 30.0,
    };

    let (loss, plan, grad_c) = if use_log {
        log_domain_sinkhorn(&cm.costs, &mu, &nu, opts)?
    } else {
        scaling_sinkhorn(&cm.costs, &mu, &nu, opts)?
    };

    // Chain dL/dC through C_ij = ||z_i - z_j||^p.
    let dim = source[0].len();
    let mut grad_source = vec![vec![0.0; dim]; n];
    let mut grad_target = vec![vec![0.0; dim]; m];
    for i in 0..n {
        for j in 0..m {
            let g = grad_c.at2(i, j);
            if g == 0.0 {
                continue;
            }
            let coeff = if opts.exponent == 2.0 {
                2.0 * g
            } else {
                let dist_sq: f64 = source[i]
                    .iter()
                    .zip(&target[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let dist = dist_sq.sqrt();
                if dist == 0.0 {
                    0.0
                } else {
                    g * opts.exponent * dist.powf(opts.exponent - 2.0)
                }
            };
            for k in 0..dim {
                let diff = source[i][k] - target[j][k];
                grad_source[i][k] += coeff * diff;
                grad_target[j][k] -= coeff * diff;
            }
        }
    }

    Ok(SinkhornResult {
        loss,
        plan: TransportPlan {
            plan,
            row_marginal: mu,
            col_marginal: nu,
        },
        grad_source,
        grad_target,
    })
}

fn scaling_sinkhorn(
    costs: &RealArray,
    mu: &[f64],
    nu: &[f64],
    opts: &SinkhornOptions,
) -> Result<(f64, RealArray, RealArray)> {
    let (n, m) = (costs.shape[0], costs.shape[1]);
    let kernel: Vec<f64> = costs.data.iter().map(|c| (-c / opts.eta).exp()).collect();
    let kv = |b: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..m).map(|j| kernel[i * m + j] * b[j]).sum())
            .collect()
    };
    let ktv = |a: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|j| (0..n).map(|i| kernel[i * m + j] * a[i]).sum())
            .collect()
    };

    let mut b = nu.to_vec();
    let mut trace: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for _ in 0..opts.max_iterations {
        let r = kv(&b);
        let mut a = vec![0.0; n];
        for i in 0..n {
            if r[i] <= 0.0 || !r[i].is_finite() {
                return Err(Error::numeric(
                    "sinkhorn scaling underflow: K b has a zero row; use a larger eta or the log-domain mode"
                        .to_string(),
                ));
            }
            a[i] = mu[i] / r[i];
        }
        let s = ktv(&a);
        let prev_b = b.clone();
        for j in 0..m {
            if s[j] <= 0.0 || !s[j].is_finite() {
                return Err(Error::numeric(
                    "sinkhorn scaling underflow: K^T a has a zero column; use a larger eta or the log-domain mode"
                        .to_string(),
                ));
            }
            b[j] = nu[j] / s[j];
        }
        trace.push((a, prev_b, r, s));
        if let Some(tol) = opts.early_stop {
            let a_ref = &trace.last().unwrap().0;
            let row_viol = kv(&b)
                .iter()
                .zip(a_ref.iter().zip(mu))
                .map(|(rb, (a, mu_i))| (a * rb - mu_i).abs())
                .fold(0.0_f64, f64::max);
            if row_viol < tol {
                break;
            }
        }
    }

    let a_final = &trace.last().unwrap().0;
    let b_final = &b;
    let mut plan = RealArray::zeros(&[n, m]);
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = a_final[i] * kernel[i * m + j] * b_final[j];
            *plan.at2_mut(i, j) = p;
            loss += costs.at2(i, j) * p;
        }
    }

    // Reverse pass through the recorded iterations.
    let mut grad_k = vec![0.0; n * m];
    let mut grad_c = RealArray::zeros(&[n, m]);
    let mut da = vec![0.0; n];
    let mut db = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let c = costs.at2(i, j);
            da[i] += c * kernel[i * m + j] * b_final[j];
            db[j] += c * kernel[i * m + j] * a_final[i];
            grad_k[i * m + j] += c * a_final[i] * b_final[j];
            *grad_c.at2_mut(i, j) += a_final[i] * kernel[i * m + j] * b_final[j];
        }
    }
    for (a, prev_b, r, s) in trace.iter().rev() {
        // b = nu / s, s = K^T a
        let mut ds = vec![0.0; m];
        for j in 0..m {
            let b_j = nu[j] / s[j];
            ds[j] = -db[j] * b_j / s[j];
        }
        for i in 0..n {
            for j in 0..m {
                grad_k[i * m + j] += a[i] * ds[j];
                da[i] += kernel[i * m + j] * ds[j];
            }
        }
        // a = mu / r, r = K b_prev
        let mut dr = vec![0.0; n];
        for i in 0..n {
            dr[i] = -da[i] * a[i] / r[i];
        }
        let mut db_prev = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                grad_k[i * m + j] += prev_b[j] * dr[i];
                db_prev[j] += kernel[i * m + j] * dr[i];
            }
        }
        da = vec![0.0; n];
        db = db_prev;
    }
    // b_0 = nu is constant; remaining db drops. K = exp(-C/eta).
    for i in 0..n {
        for j in 0..m {
            *grad_c.at2_mut(i, j) += grad_k[i * m + j] * (-kernel[i * m + j] / opts.eta);
        }
    }
    Ok((loss, plan, grad_c))
}

fn log_domain_sinkhorn(
    costs: &RealArray,
    mu: &[f64],
    nu: &[f64],
    opts: &SinkhornOptions,
) -> Result<(f64, RealArray, RealArray)> {
    let (n, m) = (costs.shape[0], costs.shape[1]);
    let eta = opts.eta;
    let log_mu: Vec<f64> = mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|v| v.ln()).collect();

    let lse = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = values.collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    };

    let mut psi = log_nu.clone();
    let mut trace: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new(); // (phi_j, psi_{j-1}, psi_j)
    for _ in 0..opts.max_iterations {
        let psi_prev = psi.clone();
        let mut phi = vec![0.0; n];
        for i in 0..n {
            let l = lse(&mut (0..m).map(|j| psi_prev[j] - costs.at2(i, j) / eta));
            phi[i] = log_mu[i] - l;
        }
        for j in 0..m {
            let l = lse(&mut (0..n).map(|i| phi[i] - costs.at2(i, j) / eta));
            psi[j] = log_nu[j] - l;
        }
        trace.push((phi, psi_prev, psi.clone()));
        if let Some(tol) = opts.early_stop {
            let phi_ref = &trace.last().unwrap().0;
            let mut row_viol: f64 = 0.0;
            for i in 0..n {
                let sum: f64 = (0..m)
                    .map(|j| (phi_ref[i] + psi[j] - costs.at2(i, j) / eta).exp())
                    .sum();
                row_viol = row_viol.max((sum - mu[i]).abs());
            }
            if row_viol < tol {
                break;
            }
        }
    }

    let phi_final = trace.last().unwrap().0.clone();
    let psi_final = psi;
    let mut plan = RealArray::zeros(&[n, m]);
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = (phi_final[i] + psi_final[j] - costs.at2(i, j) / eta).exp();
            *plan.at2_mut(i, j) = p;
            loss += costs.at2(i, j) * p;
        }
    }

    let mut grad_c = RealArray::zeros(&[n, m]);
    let mut dphi = vec![0.0; n];
    let mut dpsi = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let c = costs.at2(i, j);
            let p = plan.at2(i, j);
            dphi[i] += c * p;
            dpsi[j] += c * p;
            *grad_c.at2_mut(i, j) += p - c * p / eta;
        }
    }
    for (phi, psi_prev, psi_cur) in trace.iter().rev() {
        // psi_cur[j] = log_nu[j] - LSE_i(phi[i] - C_ij/eta)
        // softmax weight w_ij = exp(phi[i] - C_ij/eta - (log_nu[j] - psi_cur[j]))
        for j in 0..m {
            if dpsi[j] == 0.0 {
                continue;
            }
            let lse_j = log_nu[j] - psi_cur[j];
            for i in 0..n {
                let w = (phi[i] - costs.at2(i, j) / eta - lse_j).exp();
                dphi[i] -= dpsi[j] * w;
                *grad_c.at2_mut(i, j) += dpsi[j] * w / eta;
            }
        }
        // phi[i] = log_mu[i] - LSE_j(psi_prev[j] - C_ij/eta)
        let mut dpsi_prev = vec![0.0; m];
        for i in 0..n {
            if dphi[i] == 0.0 {
                continue;
            }
            let lse_i = log_mu[i] - phi[i];
            for j in 0..m {
                let u = (psi_prev[j] - costs.at2(i, j) / eta - lse_i).exp();
                dpsi_prev[j] -= dphi[i] * u;
                *grad_c.at2_mut(i, j) += dphi[i] * u / eta;
            }
        }
        dphi = vec![0.0; n];
        dpsi = dpsi_prev;
    }
    Ok((loss, plan, grad_c))
}

/// Biased squared MMD with the Gaussian kernel k(x, y) = exp(-||x-y||^2 / (2 sigma^2)).
pub fn mmd_loss(source: &[Vec<f64>], target: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("mmd bandwidth must be positive".to_string()));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("mmd needs non-empty batches".to_string()));
    }
    let k = |a: &[f64], b: &[f64]| -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d / (2.0 * sigma * sigma)).exp()
    };
    let (n, m) = (source.len() as f64, target.len() as f64);
    let mut ss = 0.0;
    for a in source {
        for b in source {
            ss += k(a, b);
        }
    }
    let mut tt = 0.0;
    for a in target {
        for b in target {
            tt += k(a, b);
        }
    }
    let mut st = 0.0;
    for a in source {
        for b in target {
            st += k(a, b);
        }
    }
    Ok(ss / (n * n) + tt / (m * m) - 2.0 * st / (n * m))
}

/// Analytic gradient of `mmd_loss` with respect to both clouds.
pub fn mmd_grad(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    sigma: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if sigma <= 0.0 {
        return Err(Error::invalid("mmd bandwidth must be positive".to_string()));
    }
    let dim = source[0].len();
    let (n, m) = (source.len() as f64, target.len() as f64);
    let sig_sq = sigma * sigma;
    let k = |a: &[f64], b: &[f64]| -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d / (2.0 * sig_sq)).exp()
    };
    let mut gs = vec![vec![0.0; dim]; source.len()];
    let mut gt = vec![vec![0.0; dim]; target.len()];
    for (i, zi) in source.iter().enumerate() {
        for (j, zj) in source.iter().enumerate() {
            let kv = k(zi, zj);
            for d in 0..dim {
                gs[i][d] += (2.0 / (n * n)) * kv * (zj[d] - zi[d]) / sig_sq;
            }
            let _ = j;
        }
        for zj in target.iter() {
            let kv = k(zi, zj);
            for d in 0..dim {
                gs[i][d] -= (2.0 / (n * m)) * kv * (zj[d] - zi[d]) / sig_sq;
            }
        }
    }
    for (j, zj) in target.iter().enumerate() {
        for zi in target.iter() {
            let kv = k(zj, zi);
            for d in 0..dim {
                gt[j][d] += (2.0 / (m * m)) * kv * (zi[d] - zj[d]) / sig_sq;
            }
        }
        for zi in source.iter() {
            let kv = k(zj, zi);
            for d in 0..dim {
                gt[j][d] -= (2.0 / (n * m)) * kv * (zi[d] - zj[d]) / sig_sq;
            }
        }
    }
    Ok((gs, gt))
}

/// Median pairwise distance over the pooled sample, the default MMD bandwidth.
pub fn median_pairwise_distance(source: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut pooled: Vec<&Vec<f64>> = source.iter().chain(target.iter()).collect();
    if pooled.len() < 2 {
        return 1.0;
    }
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            let d: f64 = pooled[i]
                .iter()
                .zip(pooled[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dists.push(d);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        pooled.swap(0, 0); // no spread at all; fall back to unit bandwidth
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeDivergence {
    Sinkhorn,
    Mmd,
    KlOnHistograms,
}

impl std::fmt::Display for ProbeDivergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeDivergence::Sinkhorn => write!(f, "sinkhorn"),
            ProbeDivergence::Mmd => write!(f, "mmd"),
            ProbeDivergence::KlOnHistograms => write!(f, "kl_on_histograms"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeRecord {
    pub divergence: ProbeDivergence,
    pub shift: f64,
    pub gradient_norm: f64,
}

const PROBE_POINTS: usize = 16;
const PROBE_DIM: usize = 2;
const PROBE_SEED: u64 = 0x70b3;

fn probe_clouds(shift: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let base: Vec<Vec<f64>> = (0..PROBE_POINTS)
        .map(|_| (0..PROBE_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let shifted = base
        .iter()
        .map(|z| {
            let mut s = z.clone();
            s[0] += shift;
            s
        })
        .collect();
    (base, shifted)
}

/// Norm of the divergence gradient with respect to the source cloud when two
/// unit Gaussian clouds (a fixed cloud and its copy) are `shift` apart.
pub fn gradient_probe(shift: f64, divergence: ProbeDivergence) -> Result<ProbeRecord> {
    if shift < 0.0 {
        return Err(Error::invalid("probe shift must be nonnegative".to_string()));
    }
    let (source, target) = probe_clouds(shift);
    let grad_norm = match divergence {
        ProbeDivergence::Mmd => {
            let (gs, _) = mmd_grad(&source, &target, 1.0)?;
            frobenius(&gs)
        }
        ProbeDivergence::Sinkhorn => {
            let result = sinkhorn(&source, &target, &SinkhornOptions::default())?;
            frobenius(&result.grad_source)
        }
        ProbeDivergence::KlOnHistograms => {
            let grad = kl_histogram_grad(&source, &target, shift);
            frobenius(&grad)
        }
    };
    Ok(ProbeRecord {
        divergence,
        shift,
        gradient_norm: grad_norm,
    })
}

fn frobenius(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// KL divergence between kernel-smoothed histograms of the first coordinate,
/// differentiated by central differences.
fn kl_histogram_grad(source: &[Vec<f64>], target: &[Vec<f64>], shift: f64) -> Vec<Vec<f64>> {
    let lo = -6.0;
    let hi = shift + 6.0;
    let bins = 64usize;
    let width = 0.5;
    let centers: Vec<f64> = (0..bins)
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / bins as f64)
        .collect();
    let density = |points: &[Vec<f64>]| -> Vec<f64> {
        let mut d: Vec<f64> = centers
            .iter()
            .map(|c| {
                points
                    .iter()
                    .map(|z| (-((z[0] - c) * (z[0] - c)) / (2.0 * width * width)).exp())
                    .sum::<f64>()
            })
            .collect();
        let total: f64 = d.iter().sum();
        for v in &mut d {
            *v = (*v / total).max(1e-12);
        }
        d
    };
    let q = density(target);
    let kl = |points: &[Vec<f64>]| -> f64 {
        let p = density(points);
        p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
    };
    let h = 1e-5;
    let mut grads = vec![vec![0.0; source[0].len()]; source.len()];
    let mut work = source.to_vec();
    for i in 0..source.len() {
        for d in 0..source[0].len() {
            let orig = work[i][d];
            work[i][d] = orig + h;
            let f_plus = kl(&work);
            work[i][d] = orig - h;
            let f_minus = kl(&work);
            work[i][d] = orig;
            grads[i][d] = (f_plus - f_minus) / (2.0 * h);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect()
    }

    /// Exact OT for uniform marginals with n = m by enumerating permutation
    /// couplings (the vertices of the Birkhoff polytope, scaled by 1/n).
    fn exact_ot(costs: &RealArray) -> f64 {
        let n = costs.shape[0];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = p.iter().enumerate().map(|(i, &j)| costs.at2(i, j)).sum();
            if cost < best {
                best = cost;
            }
        });
        best / n as f64
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn cost_matrix_examples() {
        let c = cost_matrix(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]], 2.0).unwrap();
        assert_eq!(c.costs.data, vec![0.0]);
        let c = cost_matrix(&[vec![0.0]], &[vec![3.0]], 2.0).unwrap();
        close(c.costs.data[0], 9.0, 1e-12);
        assert!(cost_matrix(&[], &[vec![1.0]], 2.0).is_err());
    }

    #[test]
    fn cost_matrix_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zs = random_cloud(&mut rng, 5, 3, 2.0);
        let zt = random_cloud(&mut rng, 4, 3, 2.0);
        for p in [1.0, 2.0, 1.5] {
            let c = cost_matrix(&zs, &zt, p).unwrap();
            for i in 0..5 {
                for j in 0..4 {
                    let d: f64 = zs[i]
                        .iter()
                        .zip(&zt[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    close(c.costs.at2(i, j), d.powf(p), 1e-10);
                }
            }
        }
    }

    #[test]
    fn single_point_coupling_is_forced() {
        let (loss, plan) = sinkhorn_loss(&[vec![0.0]], &[vec![1.0]], 0.5, 50, 2.0).unwrap();
        close(plan.plan.data[0], 1.0, 1e-9);
        close(loss, 1.0, 1e-9);
    }

    #[test]
    fn identical_pair_has_near_zero_loss() {
        let z = vec![vec![0.0], vec![1.0]];
        let (loss, plan) = sinkhorn_loss(&z, &z, 1e-3, 100, 2.0).unwrap();
        assert!(loss < 1e-3, "loss {loss}");
        assert!(plan.marginal_violation() <= 1e-6);
        close(plan.plan.at2(0, 0), 0.5, 1e-6);
        close(plan.plan.at2(1, 1), 0.5, 1e-6);
    }

    #[test]
    fn separated_pair_matches_monotone_matching() {
        let zs = vec![vec![0.0], vec![1.0]];
        let zt = vec![vec![2.0], vec![3.0]];
        let (loss, _) = sinkhorn_loss(&zs, &zt, 1e-3, 100, 1.0).unwrap();
        close(loss, 2.0, 1e-2);
    }

    #[test]
    fn small_eta_recovers_exact_ot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for n in 2..=4usize {
            for trial in 0..8 {
                let zs = random_cloud(&mut rng, n, 2, 3.0);
                let zt = random_cloud(&mut rng, n, 2, 3.0);
                let cm = cost_matrix(&zs, &zt, 2.0).unwrap();
                let mut sorted = cm.costs.data.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = sorted[sorted.len() / 2];
                if median <= 0.0 {
                    continue;
                }
                let opts = SinkhornOptions {
                    eta: 1e-4 * median,
                    max_iterations: 50_000,
                    exponent: 2.0,
                    early_stop: Some(1e-10),
                    domain: SinkhornDomain::Auto,
                };
                let result = sinkhorn(&zs, &zt, &opts).unwrap();
                let want = exact_ot(&cm.costs);
                assert!(
                    (result.loss - want).abs() <= 0.01 * want.max(1e-12),
                    "n={n} trial={trial}: sinkhorn {} vs exact {want}",
                    result.loss
                );
                assert!(result.plan.marginal_violation() <= 1e-6);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let opts = SinkhornOptions {
            eta: 0.05,
            max_iterations: 20_000,
            exponent: 2.0,
            early_stop: Some(1e-13),
            domain: SinkhornDomain::Auto,
        };
        for _ in 0..5 {
            let zs = random_cloud(&mut rng, 3, 2, 2.0);
            let zt = random_cloud(&mut rng, 3, 2, 2.0);
            let ab = sinkhorn(&zs, &zt, &opts).unwrap().loss;
            let ba = sinkhorn(&zt, &zs, &opts).unwrap().loss;
            assert!(ab >= 0.0);
            close(ab, ba, 1e-9);
        }
    }

    #[test]
    fn log_domain_matches_scaling_when_both_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let zs = random_cloud(&mut rng, 4, 2, 1.0);
        let zt = random_cloud(&mut rng, 3, 2, 1.0);
        let base = SinkhornOptions {
            eta: 0.5,
            max_iterations: 300,
            exponent: 2.0,
            early_stop: None,
            domain: SinkhornDomain::Scaling,
        };
        let log = SinkhornOptions {
            domain: SinkhornDomain::LogDomain,
            ..base
        };
        let a = sinkhorn(&zs, &zt, &base).unwrap();
        let b = sinkhorn(&zs, &zt, &log).unwrap();
        close(a.loss, b.loss, 1e-9);
        for (pa, pb) in a.plan.plan.data.iter().zip(&b.plan.plan.data) {
            close(*pa, *pb, 1e-9);
        }
        for (ga, gb) in a.grad_source.iter().flatten().zip(b.grad_source.iter().flatten()) {
            close(*ga, *gb, 1e-8);
        }
    }

    #[test]
    fn scaling_underflow_reports_helpful_error() {
        let zs = vec![vec![0.0]];
        let zt = vec![vec![100.0]];
        let opts = SinkhornOptions {
            eta: 1e-3,
            max_iterations: 10,
            exponent: 2.0,
            early_stop: None,
            domain: SinkhornDomain::Scaling,
        };
        let err = sinkhorn(&zs, &zt, &opts).unwrap_err();
        assert!(err.to_string().contains("larger eta"));
    }

    #[test]
    fn sinkhorn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zs = random_cloud(&mut rng, 3, 2, 1.5);
        let zt = random_cloud(&mut rng, 3, 2, 1.5);
        for (eta, domain) in [(0.5, SinkhornDomain::Scaling), (0.01, SinkhornDomain::LogDomain)] {
            let opts = SinkhornOptions {
                eta,
                max_iterations: 60,
                exponent: 2.0,
                early_stop: None,
                domain,
            };
            let result = sinkhorn(&zs, &zt, &opts).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                for d in 0..2 {
                    let mut plus = zs.clone();
                    plus[i][d] += h;
                    let mut minus = zs.clone();
                    minus[i][d] -= h;
                    let fp = sinkhorn(&plus, &zt, &opts).unwrap().loss;
                    let fm = sinkhorn(&minus, &zt, &opts).unwrap().loss;
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (result.grad_source[i][d] - fd).abs() / fd.abs().max(1.0);
                    assert!(
                        rel < 1e-4,
                        "eta {eta}: grad {} vs fd {fd}",
                        result.grad_source[i][d]
                    );
                }
            }
        }
    }

    #[test]
    fn mmd_trivial_cases() {
        let z = vec![vec![0.3, -0.4], vec![1.0, 0.2]];
        let v = mmd_loss(&z, &z, 1.0).unwrap();
        close(v, 0.0, 1e-12);

        // two single points distance d apart
        let d: f64 = 1.7;
        let v = mmd_loss(&[vec![0.0]], &[vec![d]], 0.8).unwrap();
        close(v, 2.0 * (1.0 - (-d * d / (2.0 * 0.64)).exp()), 1e-12);
    }

    #[test]
    fn mmd_matches_triple_sum_oracle_and_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let zs = random_cloud(&mut rng, 4, 3, 2.0);
        let zt = random_cloud(&mut rng, 5, 3, 2.0);
        let sigma = 1.3;
        let got = mmd_loss(&zs, &zt, sigma).unwrap();
        let k = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d / (2.0 * sigma * sigma)).exp()
        };
        let mut want = 0.0;
        for a in &zs {
            for b in &zs {
                want += k(a, b) / 16.0;
            }
        }
        for a in &zt {
            for b in &zt {
                want += k(a, b) / 25.0;
            }
        }
        for a in &zs {
            for b in &zt {
                want -= 2.0 * k(a, b) / 20.0;
            }
        }
        close(got, want, 1e-10);
        assert!(got >= 0.0);
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let zs = random_cloud(&mut rng, 3, 2, 1.0);
        let zt = random_cloud(&mut rng, 4, 2, 1.0);
        let sigma = 0.9;
        let (gs, gt) = mmd_grad(&zs, &zt, sigma).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for d in 0..2 {
                let mut plus = zs.clone();
                plus[i][d] += h;
                let mut minus = zs.clone();
                minus[i][d] -= h;
                let fd = (mmd_loss(&plus, &zt, sigma).unwrap()
                    - mmd_loss(&minus, &zt, sigma).unwrap())
                    / (2.0 * h);
                close(gs[i][d], fd, 1e-7);
            }
        }
        for j in 0..4 {
            for d in 0..2 {
                let mut plus = zt.clone();
                plus[j][d] += h;
                let mut minus = zt.clone();
                minus[j][d] -= h;
                let fd = (mmd_loss(&zs, &plus, sigma).unwrap()
                    - mmd_loss(&zs, &minus, sigma).unwrap())
                    / (2.0 * h);
                close(gt[j][d], fd, 1e-7);
            }
        }
    }

    #[test]
    fn probe_mmd_vanishes_with_separation() {
        let at_zero = gradient_probe(0.0, ProbeDivergence::Mmd).unwrap();
        close(at_zero.gradient_norm, 0.0, 1e-12);
        let near = gradient_probe(2.0, ProbeDivergence::Mmd).unwrap();
        let far = gradient_probe(50.0, ProbeDivergence::Mmd).unwrap();
        assert!(
            far.gradient_norm < near.gradient_norm,
            "mmd gradient should decay: {} vs {}",
            far.gradient_norm,
            near.gradient_norm
        );
    }

    #[test]
    fn probe_sinkhorn_gradient_does_not_vanish() {
        let near = gradient_probe(2.0, ProbeDivergence::Sinkhorn).unwrap();
        let far = gradient_probe(50.0, ProbeDivergence::Sinkhorn).unwrap();
        assert!(
            far.gradient_norm >= 0.5 * near.gradient_norm,
            "sinkhorn gradient should stay strong: {} vs {}",
            far.gradient_norm,
            near.gradient_norm
        );
    }

    #[test]
    fn probe_sinkhorn_agrees_with_finite_differences() {
        let shift = 3.0;
        let (zs, zt) = probe_clouds(shift);
        let probe = gradient_probe(shift, ProbeDivergence::Sinkhorn).unwrap();
        let opts = SinkhornOptions::default();
        let h = 1e-5;
        let mut sq = 0.0;
        for i in 0..zs.len() {
            for d in 0..zs[0].len() {
                let mut plus = zs.clone();
                plus[i][d] += h;
                let mut minus = zs.clone();
                minus[i][d] -= h;
                let fp = sinkhorn(&plus, &zt, &opts).unwrap().loss;
                let fm = sinkhorn(&minus, &zt, &opts).unwrap().loss;
                let fd = (fp - fm) / (2.0 * h);
                sq += fd * fd;
            }
        }
        let fd_norm = sq.sqrt();
        close(probe.gradient_norm, fd_norm, 1e-3 * fd_norm.max(1.0));
    }
}
