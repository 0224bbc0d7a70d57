//! Multi-head attention with the engine's softmax applied row by row,
//! softmax-level error metrics, the bitwidth sweep and the synthetic logit
//! generator that stands in for real dataset activations.
//!
//! Matrix products are exact host arithmetic, walked in `matmul_tile`
//! blocks so the number of crossbar tile operations can be counted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{reference_softmax, EngineConfig, EngineTrace, SoftmaxEngine};
use crate::error::{Error, Result};
use crate::fxp::FxFormat;

/// Floor applied to engine probabilities inside the KL term.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub matmul_tile: usize,
    pub scale_scores: bool,
}

impl Default for AttentionConfig {
    /// BERT-base shape at sequence length 128.
    fn default() -> Self {
        Self {
            seq_len: 128,
            d_model: 768,
            n_heads: 12,
            matmul_tile: 128,
            scale_scores: true,
        }
    }
}

impl AttentionConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self, ecfg: &EngineConfig) -> Result<()> {
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("matmul_tile", self.matmul_tile),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.seq_len > ecfg.max_seq_len {
            return Err(Error::Config(format!(
                "seq_len {} exceeds engine max_seq_len {}",
                self.seq_len, ecfg.max_seq_len
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "ragged rows: {} vs {cols}",
                bad.len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Columns `[start, start + width)`.
    pub fn col_slice(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.data[r * width..(r + 1) * width]
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    pub fn random(
        rows: usize,
        cols: usize,
        dist: &LogitDistribution,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let data = dist.sample_n(rows * cols, rng)?;
        Ok(Self { rows, cols, data })
    }
}

/// `a · bᵀ` walked in `tile`-wide blocks of the reduction and output
/// dimensions. Returns the product and the number of tile operations (one
/// per input row per `tile × tile` crossbar block).
pub fn matmul_bt_tiled(a: &Matrix, b: &Matrix, tile: usize) -> Result<(Matrix, u64)> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "inner dimensions {} vs {}",
            a.cols, b.cols
        )));
    }
    let (n, m, k) = (a.rows, b.rows, a.cols);
    let mut out = Matrix::zeros(n, m);
    let mut tile_ops = 0u64;
    for i in 0..n {
        let ar = a.row(i);
        for k0 in (0..k).step_by(tile) {
            let k1 = (k0 + tile).min(k);
            for j0 in (0..m).step_by(tile) {
                let j1 = (j0 + tile).min(m);
                tile_ops += 1;
                for j in j0..j1 {
                    let br = b.row(j);
                    let partial: f64 = (k0..k1).map(|kk| ar[kk] * br[kk]).sum();
                    out.data[i * m + j] += partial;
                }
            }
        }
    }
    Ok((out, tile_ops))
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            t.set(c, r, m.get(r, c));
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Matrix,
    /// Engine probabilities, one `seq × seq` matrix per head.
    pub probabilities: Vec<Matrix>,
    /// Raw attention scores fed to the engine, one matrix per head.
    pub scores: Vec<Matrix>,
    /// Head-major: `traces[h * seq_len + row]`. Empty unless requested.
    pub traces: Vec<EngineTrace>,
    pub tile_ops: u64,
    pub saturation_events: usize,
}

fn check_shapes(q: &Matrix, k: &Matrix, v: &Matrix, acfg: &AttentionConfig) -> Result<()> {
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        if m.rows != acfg.seq_len || m.cols != acfg.d_model {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, expected {}x{}",
                m.rows, m.cols, acfg.seq_len, acfg.d_model
            )));
        }
    }
    Ok(())
}

/// Attention forward pass with per-row traces.
pub fn attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    acfg: &AttentionConfig,
    ecfg: &EngineConfig,
) -> Result<AttentionOutput> {
    run_attention(q, k, v, acfg, ecfg, true)
}

/// As [`attention_forward`] without keeping traces.
pub fn attention_forward_lean(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    acfg: &AttentionConfig,
    ecfg: &EngineConfig,
) -> Result<AttentionOutput> {
    run_attention(q, k, v, acfg, ecfg, false)
}

fn run_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    acfg: &AttentionConfig,
    ecfg: &EngineConfig,
    keep_traces: bool,
) -> Result<AttentionOutput> {
    acfg.validate(ecfg)?;
    check_shapes(q, k, v, acfg)?;
    let engine = SoftmaxEngine::new(*ecfg)?;
    let dh = acfg.d_head();
    let scale = if acfg.scale_scores {
        1.0 / (dh as f64).sqrt()
    } else {
        1.0
    };

    let heads = (0..acfg.n_heads)
        .into_par_iter()
        .map(|h| {
            let (qh, kh, vh) = (
                q.col_slice(h * dh, dh),
                k.col_slice(h * dh, dh),
                v.col_slice(h * dh, dh),
            );
            let (mut scores, mut ops) = matmul_bt_tiled(&qh, &kh, acfg.matmul_tile)?;
            scores.data.iter_mut().for_each(|s| *s *= scale);
            let rows = (0..acfg.seq_len)
                .into_par_iter()
                .map(|r| engine.softmax(scores.row(r)))
                .collect::<Result<Vec<_>>>()?;
            let mut probs = Matrix::zeros(acfg.seq_len, acfg.seq_len);
            let mut traces = Vec::new();
            let mut sat = 0;
            for (r, (p, t)) in rows.into_iter().enumerate() {
                for (c, val) in p.iter().enumerate() {
                    probs.set(r, c, val.to_f64());
                }
                sat += t.saturation_events;
                if keep_traces {
                    traces.push(t);
                }
            }
            let (out_h, pv_ops) = matmul_bt_tiled(&probs, &transpose(&vh), acfg.matmul_tile)?;
            ops += pv_ops;
            Ok((out_h, probs, scores, traces, ops, sat))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut output = Matrix::zeros(acfg.seq_len, acfg.d_model);
    let mut out = AttentionOutput {
        output: Matrix::zeros(0, 0),
        probabilities: Vec::with_capacity(acfg.n_heads),
        scores: Vec::with_capacity(acfg.n_heads),
        traces: Vec::new(),
        tile_ops: 0,
        saturation_events: 0,
    };
    for (h, (out_h, probs, scores, traces, ops, sat)) in heads.into_iter().enumerate() {
        for r in 0..acfg.seq_len {
            for c in 0..dh {
                output.set(r, h * dh + c, out_h.get(r, c));
            }
        }
        out.probabilities.push(probs);
        out.scores.push(scores);
        out.traces.extend(traces);
        out.tile_ops += ops;
        out.saturation_events += sat;
    }
    out.output = output;
    Ok(out)
}

/// Float64 attention: naive products and [`reference_softmax`].
/// Returns the output and per-head probability matrices.
pub fn reference_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    acfg: &AttentionConfig,
) -> Result<(Matrix, Vec<Matrix>)> {
    check_shapes(q, k, v, acfg)?;
    let dh = acfg.d_head();
    let scale = if acfg.scale_scores {
        1.0 / (dh as f64).sqrt()
    } else {
        1.0
    };
    let n = acfg.seq_len;
    let mut output = Matrix::zeros(n, acfg.d_model);
    let mut all_probs = Vec::with_capacity(acfg.n_heads);
    for h in 0..acfg.n_heads {
        let off = h * dh;
        let mut probs = Matrix::zeros(n, n);
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    (0..dh)
                        .map(|c| q.get(i, off + c) * k.get(j, off + c))
                        .sum::<f64>()
                        * scale
                })
                .collect();
            let p = reference_softmax(&scores)?;
            for (j, pj) in p.iter().enumerate() {
                probs.set(i, j, *pj);
            }
            for c in 0..dh {
                let acc: f64 = (0..n).map(|j| p[j] * v.get(j, off + c)).sum();
                output.set(i, off + c, acc);
            }
        }
        all_probs.push(probs);
    }
    Ok((output, all_probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub mean_kl_divergence: f64,
    pub argmax_agreement: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise comparison of engine probabilities against oracle ones.
///
/// The KL term is the generalized divergence `Σ p·ln(p/q) − p + q` with
/// `q` floored at [`KL_EPSILON`]; it equals the usual KL divergence when the
/// engine row sums to one and stays non-negative when it does not.
pub fn error_metrics(engine: &[Vec<f64>], oracle: &[Vec<f64>]) -> Result<ErrorReport> {
    if engine.len() != oracle.len() {
        return Err(Error::Shape(format!(
            "{} engine rows vs {} oracle rows",
            engine.len(),
            oracle.len()
        )));
    }
    if oracle.is_empty() {
        return Err(Error::Empty);
    }
    let mut max_abs = 0.0f64;
    let mut sum_mean_abs = 0.0;
    let mut sum_kl = 0.0;
    let mut agree = 0usize;
    for (i, (e, o)) in engine.iter().zip(oracle).enumerate() {
        if e.len() != o.len() || o.is_empty() {
            return Err(Error::Shape(format!(
                "row {i}: {} engine vs {} oracle entries",
                e.len(),
                o.len()
            )));
        }
        let total: f64 = o.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Shape(format!("oracle row {i} sums to {total}")));
        }
        let mut row_abs = 0.0;
        let mut kl = 0.0;
        for (&q, &p) in e.iter().zip(o) {
            let d = (q - p).abs();
            max_abs = max_abs.max(d);
            row_abs += d;
            let qf = q.max(KL_EPSILON);
            let log_term = if p > 0.0 { p * (p / qf).ln() } else { 0.0 };
            kl += log_term - p + qf;
        }
        sum_mean_abs += row_abs / o.len() as f64;
        sum_kl += kl.max(0.0);
        agree += (argmax(e) == argmax(o)) as usize;
    }
    let rows = oracle.len() as f64;
    Ok(ErrorReport {
        max_abs_error: max_abs,
        mean_abs_error: sum_mean_abs / rows,
        mean_kl_divergence: sum_kl / rows,
        argmax_agreement: agree as f64 / rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum LogitDistribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl LogitDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                    return Err(Error::Distribution(format!(
                        "gaussian needs finite mean and std >= 0, got mean={mean} std={std}"
                    )));
                }
            }
            Self::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::Distribution(format!(
                        "uniform needs finite lo <= hi, got lo={lo} hi={hi}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample_n(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        let dist_err = |e: &dyn std::fmt::Display| Error::Distribution(e.to_string());
        Ok(match *self {
            Self::Gaussian { mean, std } => {
                let d = Normal::new(mean, std).map_err(|e| dist_err(&e))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Self::Uniform { lo, hi } if lo == hi => vec![lo; n],
            Self::Uniform { lo, hi } => {
                let d = Uniform::new_inclusive(lo, hi).map_err(|e| dist_err(&e))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
        })
    }
}

/// Shape and distribution of a synthetic logit corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub distribution: LogitDistribution,
    #[serde(default = "default_corpus_rows")]
    pub rows: usize,
    #[serde(default = "default_corpus_seq_len")]
    pub seq_len: usize,
}

fn default_corpus_rows() -> usize {
    64
}

fn default_corpus_seq_len() -> usize {
    128
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            distribution: LogitDistribution::Gaussian {
                mean: 0.0,
                std: 2.0,
            },
            rows: default_corpus_rows(),
            seq_len: default_corpus_seq_len(),
        }
    }
}

impl CorpusSpec {
    pub fn generate(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        synth_logits(&self.distribution, self.rows, self.seq_len, seed)
    }
}

/// `rows` logit vectors of length `seq_len`, deterministic in `seed`.
pub fn synth_logits(
    dist: &LogitDistribution,
    rows: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| dist.sample_n(seq_len, &mut rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub format: FxFormat,
    pub report: ErrorReport,
    pub saturation_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Smallest sign-inclusive integer width whose range covers the corpus.
    pub min_integer_bits: u32,
}

/// Smallest `i` with `-2^(i-1) <= lo` and `hi < 2^(i-1)`.
pub fn integer_bits_for_range(lo: f64, hi: f64) -> u32 {
    let mut bits = 1;
    while -(2f64.powi(bits as i32 - 1)) > lo || hi >= 2f64.powi(bits as i32 - 1) {
        bits += 1;
    }
    bits
}

pub fn bitwidth_sweep(
    corpus: &[Vec<f64>],
    formats: &[FxFormat],
    base: &EngineConfig,
) -> Result<SweepReport> {
    if corpus.is_empty() || corpus.iter().any(Vec::is_empty) {
        return Err(Error::Empty);
    }
    let oracle = corpus
        .iter()
        .map(|x| reference_softmax(x))
        .collect::<Result<Vec<_>>>()?;
    let rows = formats
        .iter()
        .map(|&format| {
            let engine = SoftmaxEngine::new(base.with_input_format(format))?;
            let runs = corpus
                .par_iter()
                .map(|x| engine.softmax(x))
                .collect::<Result<Vec<_>>>()?;
            let saturation_events = runs.iter().map(|(_, t)| t.saturation_events).sum();
            let probs: Vec<Vec<f64>> = runs
                .iter()
                .map(|(p, _)| p.iter().map(|v| v.to_f64()).collect())
                .collect();
            Ok(SweepRow {
                format,
                report: error_metrics(&probs, &oracle)?,
                saturation_events,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let flat = corpus.iter().flatten().copied();
    let observed_min = flat.clone().fold(f64::INFINITY, f64::min);
    let observed_max = flat.fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepReport {
        rows,
        observed_min,
        observed_max,
        min_integer_bits: integer_bits_for_range(observed_min, observed_max),
    })
}
