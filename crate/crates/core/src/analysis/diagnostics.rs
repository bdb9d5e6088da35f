//! Predictor-matrix diagnostics, pathwise invariance, and the
//! loss-decomposition identity check.

use crate::analysis::embeddings::{embed_split, EmbeddingSet, WindowSide};
use crate::error::{Error, Result};
use crate::models::{Model, PredictorKind, TrainMode};
use crate::numerics::{eigenvalues, Tensor};
use crate::synthgen::{
    extract_pair, generate_master_conditional_mean, kind_is_deterministic, regime_table,
    standardize, DatasetSplit, Manifest, NUM_REGIMES,
};

/// The linear predictor's weight as a dense row-major k x k matrix in
/// double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrix {
    entries: Vec<f64>,
    dim: usize,
}

impl PredictorMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("matrix dimension must be at least 1"));
        }
        if entries.len() != dim * dim {
            return Err(Error::contract(format!(
                "{} entries cannot fill a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("predictor matrix has non-finite entries"));
        }
        Ok(PredictorMatrix { entries, dim })
    }

    /// Extracts the matrix from a model with a linear predictor.
    pub fn from_model(model: &Model<f32>) -> Result<Self> {
        if model.mode != TrainMode::Jepa {
            return Err(Error::contract("only JEPA models carry a predictor matrix"));
        }
        if !matches!(model.config.predictor, PredictorKind::Linear { .. }) {
            return Err(Error::contract(
                "the MLP predictor has no single matrix; use a linear predictor",
            ));
        }
        let weight = model
            .online
            .get("predictor.linear.weight")
            .ok_or_else(|| Error::contract("model is missing predictor.linear.weight"))?;
        let entries = weight.data().iter().map(|&v| f64::from(v)).collect();
        PredictorMatrix::new(model.config.latent_dim, entries)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        PredictorMatrix::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Matrix-vector product `M v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::dim(format!(
                "vector length {} does not match matrix dimension {}",
                v.len(),
                self.dim
            )));
        }
        Ok((0..self.dim)
            .map(|i| {
                self.entries[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(&m, &x)| m * x)
                    .sum()
            })
            .collect())
    }
}

/// How far the predictor matrix is from the identity and from symmetry,
/// plus its eigenvalue magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDiagnostics {
    /// `|M - I|_F / |M|_F`.
    pub frob_rel: f64,
    /// `|M - M^T|_F / |M|_F`.
    pub skew_rel: f64,
    /// Eigenvalue magnitudes sorted descending, length k.
    pub eigen_mags: Vec<f64>,
}

pub fn m_diagnostics(m: &PredictorMatrix) -> Result<MatrixDiagnostics> {
    let k = m.dim();
    let frob = frobenius(m.entries());
    if frob == 0.0 {
        return Err(Error::numeric(
            "predictor matrix is identically zero; relative norms are undefined",
        ));
    }

    let mut minus_identity = m.entries().to_vec();
    for i in 0..k {
        minus_identity[i * k + i] -= 1.0;
    }
    let mut minus_transpose = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            minus_transpose[i * k + j] = m.entries()[i * k + j] - m.entries()[j * k + i];
        }
    }

    let mut eigen_mags: Vec<f64> =
        eigenvalues(m.entries(), k)?.iter().map(|e| e.norm()).collect();
    eigen_mags.sort_by(|a, b| b.partial_cmp(a).expect("magnitudes are finite"));

    Ok(MatrixDiagnostics {
        frob_rel: frobenius(&minus_identity) / frob,
        skew_rel: frobenius(&minus_transpose) / frob,
        eigen_mags,
    })
}

fn frobenius(entries: &[f64]) -> f64 {
    entries.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Per-centroid relative displacement under the predictor,
/// `|M c_i - c_i| / |c_i|`, and the mean across centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidAction {
    pub errors: Vec<f64>,
    pub mean: f64,
}

pub fn centroid_action(m: &PredictorMatrix, centroids: &[Vec<f64>]) -> Result<CentroidAction> {
    if centroids.is_empty() {
        return Err(Error::contract("no centroids to act on"));
    }
    let mut errors = Vec::with_capacity(centroids.len());
    for (i, c) in centroids.iter().enumerate() {
        let norm = c.iter().map(|&v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::numeric(format!(
                "centroid {i} has norm {norm:.3e}; relative action is undefined"
            )));
        }
        let mc = m.apply(c)?;
        let diff: f64 =
            mc.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        errors.push(diff / norm);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(CentroidAction { errors, mean })
}

/// Mean relative drift of the online embedding from context to target
/// window, `mean |f(target) - f(context)| / (|f(context)| + 1e-12)`.
/// Zero means the representation is constant along trajectories.
pub fn pathwise_invariance(
    model: &Model<f32>,
    split: &DatasetSplit,
    batch_size: usize,
) -> Result<f64> {
    let context = embed_split(model, split, WindowSide::Context, batch_size)?;
    let target = embed_split(model, split, WindowSide::Target, batch_size)?;
    Ok(relative_drift(&context, &target))
}

fn relative_drift(context: &EmbeddingSet, target: &EmbeddingSet) -> f64 {
    let mut total = 0.0f64;
    for (ctx, tgt) in context.rows.iter().zip(&target.rows) {
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for (&c, &t) in ctx.iter().zip(tgt) {
            let c = f64::from(c);
            let t = f64::from(t);
            diff += (t - c) * (t - c);
            norm += c * c;
        }
        total += diff.sqrt() / (norm.sqrt() + 1e-12);
    }
    total / context.rows.len() as f64
}

/// The pairs of a split whose regime has no per-step process noise, so the
/// target window is a deterministic function of the sequence's initial
/// draws.
pub fn deterministic_subset(split: &DatasetSplit) -> DatasetSplit {
    let table = regime_table();
    DatasetSplit {
        pairs: split
            .pairs
            .iter()
            .filter(|p| {
                usize::from(p.regime_label) < table.len()
                    && kind_is_deterministic(table[usize::from(p.regime_label)].kind)
            })
            .cloned()
            .collect(),
        context_len: split.context_len,
        target_len: split.target_len,
        num_regimes: split.num_regimes,
    }
}

/// Everything needed to regenerate a pair's master sequence from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegenerationParams {
    pub global_seed: u64,
    pub master_len: usize,
    pub delta: usize,
}

impl From<&Manifest> for RegenerationParams {
    fn from(manifest: &Manifest) -> Self {
        RegenerationParams {
            global_seed: manifest.global_seed,
            master_len: manifest.master_len,
            delta: manifest.delta,
        }
    }
}

/// Compares the realized JEPA loss against the prediction error measured
/// toward conditional-mean targets, `|L - term1| / max(L, 1e-12)`.
///
/// The conditional-mean target is rebuilt by regenerating each pair's
/// master sequence with process noise zeroed beyond the context window.
/// On regimes without per-step noise the regeneration reproduces the stored
/// target exactly, so the two losses coincide and the gap is zero for any
/// checkpoint; stochastic regimes generically leave a positive gap.
pub fn loss_decomposition_check(
    model: &Model<f32>,
    split: &DatasetSplit,
    regen: &RegenerationParams,
    batch_size: usize,
) -> Result<f64> {
    if model.mode != TrainMode::Jepa {
        return Err(Error::contract("loss decomposition applies to JEPA models only"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if split.pairs.is_empty() {
        return Err(Error::contract("loss decomposition needs a nonempty split"));
    }
    let input_len = model.config.input_len;
    if split.context_len != input_len || split.target_len != input_len {
        return Err(Error::dim(format!(
            "split windows ({}, {}) do not match model input {input_len}",
            split.context_len, split.target_len
        )));
    }
    if regen.delta + split.context_len > regen.master_len {
        return Err(Error::contract(format!(
            "windows [{} + {}] exceed master length {}",
            regen.delta, split.context_len, regen.master_len
        )));
    }

    let table = regime_table();
    let k = model.config.latent_dim;
    let mut realized_sq = 0.0f64;
    let mut conditional_sq = 0.0f64;
    let mut elements = 0usize;

    for chunk in split.pairs.chunks(batch_size) {
        let mut ctx = Vec::with_capacity(chunk.len() * input_len);
        let mut tgt = Vec::with_capacity(chunk.len() * input_len);
        let mut tgt_cond = Vec::with_capacity(chunk.len() * input_len);
        for pair in chunk {
            let label = usize::from(pair.regime_label);
            if label >= NUM_REGIMES {
                return Err(Error::contract(format!(
                    "pair carries regime label {label}, table has {NUM_REGIMES}"
                )));
            }
            let master = generate_master_conditional_mean(
                &table[label],
                regen.global_seed,
                pair.seq_index,
                regen.master_len,
                split.context_len,
            )?;
            let standardized = standardize(&master.values);
            let rebuilt = extract_pair(
                &standardized,
                split.context_len,
                regen.delta,
                pair.regime_label,
                pair.seq_index,
            )?;
            ctx.extend_from_slice(&pair.context);
            tgt.extend_from_slice(&pair.target);
            tgt_cond.extend_from_slice(&rebuilt.target);
        }
        let shape = vec![chunk.len(), 1, input_len];
        let predicted = model.predict(&model.encode(&Tensor::new(shape.clone(), ctx)?)?)?;
        let ema_real = model.encode_ema(&Tensor::new(shape.clone(), tgt)?)?;
        let ema_cond = model.encode_ema(&Tensor::new(shape, tgt_cond)?)?;

        for ((&p, &r), &c) in
            predicted.data().iter().zip(ema_real.data()).zip(ema_cond.data())
        {
            let p = f64::from(p);
            realized_sq += (p - f64::from(r)).powi(2);
            conditional_sq += (p - f64::from(c)).powi(2);
        }
        elements += chunk.len() * k;
    }

    let loss = realized_sq / elements as f64;
    let term1 = conditional_sq / elements as f64;
    Ok((loss - term1).abs() / loss.max(1e-12))
}
