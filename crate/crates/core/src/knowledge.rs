//! Soft predictions, the knowledge-coefficient matrix and personalized
//! ensemble teachers.
//!
//! Convention: `c[m][n]` is the contribution of client `m` to the teacher of
//! client `n`, so client `n`'s teacher is a combination of column `n`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::{check_stochastic, forward, softmax_t, Model, KL_EPS};
use crate::tensor::Tensor;

/// Hyperparameters of the knowledge-transfer objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeHyper {
    /// Weight of the KL term.
    pub lambda: f64,
    /// Pull of the coefficients toward `1/N`.
    pub rho: f64,
    pub temperature: f64,
    /// Step size of the coefficient update.
    pub coeff_lr: f64,
    /// Teachers kept per client by the top-K policy.
    pub top_k: usize,
    pub kl_eps: f64,
}

impl Default for KnowledgeHyper {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rho: 0.7,
            temperature: 1.0,
            coeff_lr: 0.01,
            top_k: 5,
            kl_eps: KL_EPS,
        }
    }
}

impl KnowledgeHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Parameter(format!("{what} out of range: {v}")));
        if !(self.lambda >= 0.0) {
            return bad("lambda", self.lambda);
        }
        if !(self.rho >= 0.0) {
            return bad("rho", self.rho);
        }
        if !(self.temperature > 0.0) {
            return bad("temperature", self.temperature);
        }
        if !(self.coeff_lr >= 0.0) {
            return bad("coefficient learning rate", self.coeff_lr);
        }
        if !(self.kl_eps > 0.0) {
            return bad("kl_eps", self.kl_eps);
        }
        Ok(())
    }
}

/// Square matrix of teaching weights, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut c = Self {
            n,
            data: vec![0.0; n * n],
        };
        for i in 0..n {
            c.set(i, i, 1.0);
        }
        c
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(dim_err(format!("coefficient row {i}"), n, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.n + n]
    }

    pub fn set(&mut self, m: usize, n: usize, v: f64) {
        self.data[m * self.n + n] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.n).map(|m| self.get(m, n)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n).map(|n| self.column(n).iter().sum()).collect()
    }

    /// Every entry in `[0, 1]` and every column sums to 1 within `tol`.
    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0 + tol).contains(&v))
            && self.column_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// Frobenius distance to the uniform matrix `1/N`.
    pub fn distance_to_uniform(&self) -> f64 {
        let u = 1.0 / self.n as f64;
        self.data.iter().map(|v| (v - u) * (v - u)).sum::<f64>().sqrt()
    }

    /// The square sub-matrix over the given client indices, in that order.
    pub fn restrict(&self, ids: &[usize]) -> CoefficientMatrix {
        let mut sub = CoefficientMatrix::zeros(ids.len());
        for (i, &m) in ids.iter().enumerate() {
            for (j, &n) in ids.iter().enumerate() {
                sub.set(i, j, self.get(m, n));
            }
        }
        sub
    }

    /// Writes a column-stochastic sub-matrix back over the `ids` block.
    /// Each touched column keeps the mass it previously had on `ids`, so
    /// entries outside the block and column sums are unchanged.
    pub fn embed_preserving_mass(&mut self, ids: &[usize], sub: &CoefficientMatrix) {
        for (j, &n) in ids.iter().enumerate() {
            let mass: f64 = ids.iter().map(|&m| self.get(m, n)).sum();
            for (i, &m) in ids.iter().enumerate() {
                self.set(m, n, sub.get(i, j) * mass);
            }
        }
    }

    /// Writes `sub` over the `ids` block verbatim.
    pub fn embed(&mut self, ids: &[usize], sub: &CoefficientMatrix) {
        for (j, &n) in ids.iter().enumerate() {
            for (i, &m) in ids.iter().enumerate() {
                self.set(m, n, sub.get(i, j));
            }
        }
    }

    /// N lines of N comma-separated values with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for m in 0..self.n {
            let line: Vec<String> = (0..self.n).map(|n| format!("{:.8e}", self.get(m, n))).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Data(format!("bad coefficient {v:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// Per-client soft predictions on one shared public batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPredictionBank {
    /// Client id of each entry; entry `i` pairs with row/column `i` of the
    /// coefficient matrix used with this bank.
    pub client_ids: Vec<usize>,
    pub predictions: Vec<Tensor>,
    pub sample_indices: Vec<usize>,
}

impl SoftPredictionBank {
    pub fn new(
        client_ids: Vec<usize>,
        predictions: Vec<Tensor>,
        sample_indices: Vec<usize>,
    ) -> Result<Self> {
        if client_ids.len() != predictions.len() {
            return Err(dim_err("bank entries", client_ids.len(), predictions.len()));
        }
        if let Some(first) = predictions.first() {
            if first.rows() != sample_indices.len() {
                return Err(dim_err("bank batch", sample_indices.len(), first.rows()));
            }
        }
        for (id, p) in client_ids.iter().zip(&predictions) {
            if Some(p.shape()) != predictions.first().map(Tensor::shape) {
                return Err(dim_err(
                    format!("soft prediction of client {id}"),
                    format!("{:?}", predictions[0].shape()),
                    format!("{:?}", p.shape()),
                ));
            }
            check_stochastic(&format!("soft prediction of client {id}"), p)?;
        }
        Ok(Self {
            client_ids,
            predictions,
            sample_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.sample_indices.len()
    }

    fn shape(&self) -> (usize, usize) {
        self.predictions
            .first()
            .map_or((0, 0), |p| (p.rows(), p.cols()))
    }

    fn require_complete(&self, c: &CoefficientMatrix) -> Result<()> {
        if self.len() != c.dim() {
            return Err(Error::Protocol(format!(
                "bank holds {} client predictions but the coefficient matrix covers {} clients",
                self.len(),
                c.dim()
            )));
        }
        Ok(())
    }
}

/// `softmax_t(forward(model, batch))`.
pub fn soft_predict(model: &Model, public_batch: &Tensor, t: f64) -> Result<Tensor> {
    softmax_t(&forward(model, public_batch)?, t)
}

/// Client `n`'s personalized teacher: `Σ_m c[m][n] · S_m`.
pub fn ensemble_teacher(bank: &SoftPredictionBank, c: &CoefficientMatrix, n: usize) -> Result<Tensor> {
    bank.require_complete(c)?;
    if n >= c.dim() {
        return Err(Error::Protocol(format!("no client at position {n}")));
    }
    let (b, classes) = bank.shape();
    let mut out = Tensor::zeros(&[b, classes]);
    for (m, s) in bank.predictions.iter().enumerate() {
        let w = c.get(m, n);
        for (o, &v) in out.data_mut().iter_mut().zip(s.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn kl_rows_unchecked(p: &Tensor, q: &Tensor, eps: f64) -> f64 {
    if p.rows() == 0 {
        return 0.0;
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pv, &qv)| {
            if pv <= 0.0 {
                0.0
            } else {
                pv * (pv.max(eps).ln() - qv.max(eps).ln())
            }
        })
        .sum();
    total / p.rows() as f64
}

/// The coefficient objective with model parameters fixed:
/// `Σ_n w_n·λ·KL(p_n ‖ S_n) + ρ‖c − 1/N‖²`, where `w_n = D_n/D`.
pub fn coefficient_objective(
    bank: &SoftPredictionBank,
    c: &CoefficientMatrix,
    weights: &[f64],
    hyper: &KnowledgeHyper,
) -> Result<f64> {
    bank.require_complete(c)?;
    if weights.len() != c.dim() {
        return Err(dim_err("client weights", c.dim(), weights.len()));
    }
    let mut total = 0.0;
    for n in 0..c.dim() {
        let p = ensemble_teacher(bank, c, n)?;
        total += weights[n] * hyper.lambda * kl_rows_unchecked(&p, &bank.predictions[n], hyper.kl_eps);
    }
    Ok(total + hyper.rho * c.distance_to_uniform().powi(2))
}

/// Gradient of [`coefficient_objective`] with respect to `c`:
///
/// `g[m][n] = λ·w_n·mean_b Σ_k S_m[b,k]·(ln p_n[b,k] + 1 − ln S_n[b,k]) + 2ρ(c[m][n] − 1/N)`
///
/// Only teacher `p_n` depends on column `n`; the student `S_n` is constant.
pub fn coeff_gradient(
    bank: &SoftPredictionBank,
    c: &CoefficientMatrix,
    weights: &[f64],
    hyper: &KnowledgeHyper,
) -> Result<CoefficientMatrix> {
    bank.require_complete(c)?;
    if weights.len() != c.dim() {
        return Err(dim_err("client weights", c.dim(), weights.len()));
    }
    let n_clients = c.dim();
    let uniform = 1.0 / n_clients as f64;
    let (b, _) = bank.shape();
    let inv_b = if b == 0 { 0.0 } else { 1.0 / b as f64 };
    let eps = hyper.kl_eps;
    let mut g = CoefficientMatrix::zeros(n_clients);
    for n in 0..n_clients {
        let teacher = ensemble_teacher(bank, c, n)?;
        // d_k = ln p_n + 1 − ln S_n, elementwise over the batch
        let d: Vec<f64> = teacher
            .data()
            .iter()
            .zip(bank.predictions[n].data())
            .map(|(&p, &s)| p.max(eps).ln() + 1.0 - s.max(eps).ln())
            .collect();
        let scale = hyper.lambda * weights[n] * inv_b;
        for m in 0..n_clients {
            let dot: f64 = bank.predictions[m].data().iter().zip(&d).map(|(a, b)| a * b).sum();
            g.set(m, n, scale * dot + 2.0 * hyper.rho * (c.get(m, n) - uniform));
        }
    }
    Ok(g)
}

/// `c ← c − lr·g`, optionally followed by [`normalize_columns`].
pub fn apply_coefficient_update(
    c: &CoefficientMatrix,
    g: &CoefficientMatrix,
    lr: f64,
    normalize: bool,
) -> Result<CoefficientMatrix> {
    if c.dim() != g.dim() {
        return Err(dim_err("coefficient gradient", c.dim(), g.dim()));
    }
    let data = c.data.iter().zip(&g.data).map(|(v, d)| v - lr * d).collect();
    let next = CoefficientMatrix { n: c.n, data };
    Ok(if normalize { normalize_columns(&next) } else { next })
}

/// Clamps entries at zero and rescales each column to sum to one; a column
/// with no mass becomes uniform.
pub fn normalize_columns(c: &CoefficientMatrix) -> CoefficientMatrix {
    let n = c.dim();
    let mut out = c.clone();
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    for col in 0..n {
        let sum: f64 = out.column(col).iter().sum();
        for m in 0..n {
            let v = if sum > 0.0 { out.get(m, col) / sum } else { 1.0 / n as f64 };
            out.set(m, col, v);
        }
    }
    out
}

/// Raw cosine similarity between every pair of flattened soft predictions.
pub fn cosine_similarities(bank: &SoftPredictionBank) -> Result<CoefficientMatrix> {
    let norms: Vec<f64> = bank.predictions.iter().map(Tensor::l2_norm).collect();
    if let Some(i) = norms.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Numeric(format!(
            "soft prediction of client {} has zero norm",
            bank.client_ids[i]
        )));
    }
    let n = bank.len();
    let mut sim = CoefficientMatrix::zeros(n);
    for m in 0..n {
        for k in m..n {
            let dot: f64 = bank.predictions[m]
                .data()
                .iter()
                .zip(bank.predictions[k].data())
                .map(|(a, b)| a * b)
                .sum();
            let v = dot / (norms[m] * norms[k]);
            sim.set(m, k, v);
            sim.set(k, m, v);
        }
    }
    Ok(sim)
}

/// Similarity-based coefficients: clamped cosine similarities, column-normalized.
pub fn cosine_coefficients(bank: &SoftPredictionBank) -> Result<CoefficientMatrix> {
    Ok(normalize_columns(&cosine_similarities(bank)?))
}

/// Keeps, per column, the `k` most similar clients (the client itself first
/// among ties) and renormalizes.
pub fn topk_coefficients(bank: &SoftPredictionBank, k: usize) -> Result<CoefficientMatrix> {
    let n = bank.len();
    if k == 0 || k > n {
        return Err(Error::Configuration(format!("top-K needs 1 <= K <= {n}, got {k}")));
    }
    let sim = cosine_similarities(bank)?;
    let mut kept = CoefficientMatrix::zeros(n);
    for col in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            sim.get(b, col)
                .total_cmp(&sim.get(a, col))
                .then((b == col).cmp(&(a == col)))
                .then(a.cmp(&b))
        });
        for &m in order.iter().take(k) {
            kept.set(m, col, sim.get(m, col));
        }
    }
    Ok(normalize_columns(&kept))
}
