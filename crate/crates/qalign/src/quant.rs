//! Symmetric INT8 quantization.
//!
//! Covers the full progression: per-tensor and per-channel scale selection,
//! round-half-away-from-zero quantization to `[-127, 127]`, the integer
//! linear kernel with exact channel-specific dequantization scales, scale
//! migration that shifts quantization difficulty from activations to weights,
//! and a reproducible demonstration of why per-channel *activation*
//! quantization cannot be undone by any single scalar.
//!
//! Everything is symmetric: the zero point is fixed at 0 and `-128` is never
//! produced, so negation stays closed over the quantized range.

use serde::{Deserialize, Serialize};

use crate::container::TensorRecord;
use crate::encoder::{
    ActivationQuant, EmbeddingTable, EncoderModel, LayerWeight, LinearLayer,
};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Quantized values live in `[-QMAX, QMAX]`.
pub const QMAX: i32 = 127;

/// Default floor applied to scales so all-zero channels stay invertible.
pub const SCALE_EPS: f32 = 1e-8;

/// Which dimension per-channel scales run along.
///
/// Both named roles index the columns of the matrix being quantized: output
/// channels are weight columns, input channels are activation columns. The
/// axis records the operand's role so kernels can reject mismatched operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelAxis {
    /// Weight output channels (columns of a `K x M` weight).
    OutputChannel,
    /// Activation input channels (columns of an `N x K` activation).
    InputChannel,
}

/// Scale granularity for a quantized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantScheme {
    /// One scale for the whole tensor.
    PerTensor,
    /// One scale per channel along the given axis.
    PerChannel(ChannelAxis),
}

impl QuantScheme {
    fn scale_count(&self, cols: usize) -> usize {
        match self {
            QuantScheme::PerTensor => 1,
            QuantScheme::PerChannel(_) => cols,
        }
    }
}

/// 8-bit signed matrix plus the positive scales needed to map it back to
/// real values. Symmetric: `zero_point` is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    qvalues: Vec<i8>,
    scheme: QuantScheme,
    scales: Vec<f32>,
}

impl QuantizedMatrix {
    /// Assembles a quantized matrix from parts, enforcing the type
    /// invariants (value range, positive finite scales, scale count).
    pub fn from_parts(
        rows: usize,
        cols: usize,
        qvalues: Vec<i8>,
        scheme: QuantScheme,
        scales: Vec<f32>,
    ) -> Result<Self> {
        if qvalues.len() != rows * cols {
            return Err(Error::shape(
                "QuantizedMatrix::from_parts",
                format!("{rows}x{cols}"),
                format!("{} qvalues", qvalues.len()),
            ));
        }
        if qvalues.contains(&i8::MIN) {
            return Err(Error::domain(
                "QuantizedMatrix::from_parts",
                "-128 is outside the symmetric range".to_string(),
            ));
        }
        if scales.len() != scheme.scale_count(cols) {
            return Err(Error::shape(
                "QuantizedMatrix::from_parts",
                format!("{} scales for {:?}", scheme.scale_count(cols), scheme),
                format!("{} scales", scales.len()),
            ));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::domain(
                "QuantizedMatrix::from_parts",
                format!("scale {s} is not positive and finite"),
            ));
        }
        Ok(Self {
            rows,
            cols,
            qvalues,
            scheme,
            scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn qvalues(&self) -> &[i8] {
        &self.qvalues
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.qvalues[r * self.cols + c]
    }

    /// The zero point is fixed by construction.
    pub fn zero_point(&self) -> i32 {
        0
    }

    /// Scale applied to column `c` under this scheme.
    pub fn scale_for_col(&self, c: usize) -> f32 {
        match self.scheme {
            QuantScheme::PerTensor => self.scales[0],
            QuantScheme::PerChannel(_) => self.scales[c],
        }
    }
}

/// Selects quantization scales for a matrix: `max(|.|, eps) / 127` over the
/// whole tensor or per column, depending on the scheme.
pub fn compute_scale(m: &DenseMatrix, scheme: QuantScheme, eps: f32) -> Result<Vec<f32>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::domain(
            "compute_scale",
            format!("eps must be positive and finite, got {eps}"),
        ));
    }
    let to_scale = |abs_max: f32| ((abs_max.max(eps) as f64) / QMAX as f64) as f32;
    Ok(match scheme {
        QuantScheme::PerTensor => vec![to_scale(m.abs_max())],
        QuantScheme::PerChannel(_) => (0..m.cols()).map(|c| to_scale(m.col_abs_max(c))).collect(),
    })
}

/// Quantizes with internally computed scales: `clamp(round(x / s), -127, 127)`
/// with ties rounding away from zero.
pub fn quantize(m: &DenseMatrix, scheme: QuantScheme, eps: f32) -> Result<QuantizedMatrix> {
    let scales = compute_scale(m, scheme, eps)?;
    quantize_with_scales(m, scheme, scales)
}

/// Quantizes against caller-provided scales. Used by the static activation
/// policy (calibrated scales) and the dequantization-gap demonstration.
pub fn quantize_with_scales(
    m: &DenseMatrix,
    scheme: QuantScheme,
    scales: Vec<f32>,
) -> Result<QuantizedMatrix> {
    if scales.len() != scheme.scale_count(m.cols()) {
        return Err(Error::shape(
            "quantize_with_scales",
            format!("{} scales for {:?}", scheme.scale_count(m.cols()), scheme),
            format!("{} scales", scales.len()),
        ));
    }
    let mut q = Vec::with_capacity(m.rows() * m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let s = match scheme {
                QuantScheme::PerTensor => scales[0],
                QuantScheme::PerChannel(_) => scales[c],
            };
            // f64::round ties away from zero, matching the kernel contract.
            let v = (m.get(r, c) as f64 / s as f64).round();
            q.push(v.clamp(-(QMAX as f64), QMAX as f64) as i8);
        }
    }
    QuantizedMatrix::from_parts(m.rows(), m.cols(), q, scheme, scales)
}

/// Maps a quantized matrix back to real values: `x̂ = q * scale`, broadcast
/// per the scheme.
pub fn dequantize(q: &QuantizedMatrix) -> DenseMatrix {
    let mut values = Vec::with_capacity(q.rows * q.cols);
    for r in 0..q.rows {
        for c in 0..q.cols {
            values.push(q.get(r, c) as f32 * q.scale_for_col(c));
        }
    }
    DenseMatrix::from_vec(q.rows, q.cols, values).expect("dequantized values are finite")
}

/// Integer linear kernel: per-tensor activations times per-output-channel
/// weights, accumulated in 32 bits, then each output column `j` is mapped
/// back with the channel-specific factor `s_x * s_w[j]`.
pub fn quantized_linear(x_q: &QuantizedMatrix, w_q: &QuantizedMatrix) -> Result<DenseMatrix> {
    if x_q.scheme != QuantScheme::PerTensor {
        return Err(Error::Scheme {
            op: "quantized_linear",
            msg: format!(
                "activations must be per-tensor, got {:?}; per-channel activations have no \
                 single dequantization scale, see dequant_gap_demo",
                x_q.scheme
            ),
        });
    }
    if w_q.scheme != QuantScheme::PerChannel(ChannelAxis::OutputChannel) {
        return Err(Error::Scheme {
            op: "quantized_linear",
            msg: format!(
                "weights must be per-output-channel, got {:?}",
                w_q.scheme
            ),
        });
    }
    if x_q.cols != w_q.rows {
        return Err(Error::shape(
            "quantized_linear",
            format!("{}x{}", x_q.rows, x_q.cols),
            format!("{}x{}", w_q.rows, w_q.cols),
        ));
    }
    let s_x = x_q.scales[0] as f64;
    let mut out = vec![0.0f32; x_q.rows * w_q.cols];
    let mut acc = vec![0i32; w_q.cols];
    for i in 0..x_q.rows {
        acc.fill(0);
        for k in 0..x_q.cols {
            let xv = x_q.get(i, k) as i32;
            if xv == 0 {
                continue;
            }
            let wrow = &w_q.qvalues[k * w_q.cols..(k + 1) * w_q.cols];
            for (a, wv) in acc.iter_mut().zip(wrow) {
                *a += xv * *wv as i32;
            }
        }
        for (j, a) in acc.iter().enumerate() {
            out[i * w_q.cols + j] = (*a as f64 * s_x * w_q.scales[j] as f64) as f32;
        }
    }
    DenseMatrix::from_vec(x_q.rows, w_q.cols, out)
}

/// Per-input-channel max magnitudes of activations and weights over a shared
/// inner dimension `K`: `act_max[j] = max |X[:, j]|`, `wt_max[j] = max |W[j, :]|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub act_max: Vec<f32>,
    pub wt_max: Vec<f32>,
}

impl CalibrationStats {
    pub fn new(act_max: Vec<f32>, wt_max: Vec<f32>) -> Result<Self> {
        let stats = Self { act_max, wt_max };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.act_max.len() != self.wt_max.len() {
            return Err(Error::shape(
                "CalibrationStats",
                format!("{} act_max", self.act_max.len()),
                format!("{} wt_max", self.wt_max.len()),
            ));
        }
        for v in self.act_max.iter().chain(self.wt_max.iter()) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::domain(
                    "CalibrationStats",
                    format!("magnitude {v} must be finite and >= 0"),
                ));
            }
        }
        Ok(())
    }

    /// Collects stats directly from a single activation/weight pair.
    pub fn from_operands(x: &DenseMatrix, w: &DenseMatrix) -> Result<Self> {
        if x.cols() != w.rows() {
            return Err(Error::shape(
                "CalibrationStats::from_operands",
                format!("{}x{}", x.rows(), x.cols()),
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
        let act_max = (0..x.cols()).map(|c| x.col_abs_max(c)).collect();
        let wt_max = (0..w.rows()).map(|r| w.row_abs_max(r)).collect();
        Self::new(act_max, wt_max)
    }

    pub fn inner_dim(&self) -> usize {
        self.act_max.len()
    }
}

/// Smoothing factor and scale floor for activation-to-weight migration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Balance exponent in `[0, 1]`: 0 leaves all difficulty on activations,
    /// 1 moves all of it to weights.
    pub alpha: f32,
    /// Positive floor applied to magnitudes before exponentiation.
    pub eps: f32,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            eps: SCALE_EPS,
        }
    }
}

impl SmoothingConfig {
    pub fn new(alpha: f32, eps: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::domain(
                "SmoothingConfig",
                format!("alpha must lie in [0, 1], got {alpha}"),
            ));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::domain(
                "SmoothingConfig",
                format!("eps must be positive, got {eps}"),
            ));
        }
        Ok(Self { alpha, eps })
    }
}

/// Per-channel migration scales `s_j = max(act_max_j, eps)^alpha /
/// max(wt_max_j, eps)^(1 - alpha)`.
pub fn smooth_scales(stats: &CalibrationStats, cfg: &SmoothingConfig) -> Result<Vec<f32>> {
    stats.validate()?;
    SmoothingConfig::new(cfg.alpha, cfg.eps)?;
    let alpha = cfg.alpha as f64;
    let eps = cfg.eps as f64;
    Ok(stats
        .act_max
        .iter()
        .zip(&stats.wt_max)
        .map(|(a, w)| {
            let a = (*a as f64).max(eps);
            let w = (*w as f64).max(eps);
            (a.powf(alpha) / w.powf(1.0 - alpha)) as f32
        })
        .collect())
}

/// Divides activation column `j` by `s_j` and multiplies weight row `j` by
/// `s_j`, leaving the matrix product unchanged up to rounding.
pub fn apply_smoothing(
    x: &DenseMatrix,
    w: &DenseMatrix,
    s: &[f32],
) -> Result<(DenseMatrix, DenseMatrix)> {
    if s.len() != x.cols() || x.cols() != w.rows() {
        return Err(Error::shape(
            "apply_smoothing",
            format!("x {}x{}, w {}x{}", x.rows(), x.cols(), w.rows(), w.cols()),
            format!("{} smoothing scales", s.len()),
        ));
    }
    if let Some(bad) = s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::domain(
            "apply_smoothing",
            format!("smoothing scale {bad} must be positive and finite"),
        ));
    }
    let mut xv = Vec::with_capacity(x.rows() * x.cols());
    for r in 0..x.rows() {
        for (c, sj) in s.iter().enumerate() {
            xv.push((x.get(r, c) as f64 / *sj as f64) as f32);
        }
    }
    let mut wv = Vec::with_capacity(w.rows() * w.cols());
    for (r, sj) in s.iter().enumerate() {
        for c in 0..w.cols() {
            wv.push((w.get(r, c) as f64 * *sj as f64) as f32);
        }
    }
    Ok((
        DenseMatrix::from_vec(x.rows(), x.cols(), xv)?,
        DenseMatrix::from_vec(w.rows(), w.cols(), wv)?,
    ))
}

/// Per-output-column account of how far the mixed-scale integer accumulation
/// is from *any* single-scalar dequantization.
#[derive(Debug, Clone)]
pub struct ColumnGap {
    pub column: usize,
    /// Scalar that best maps the integer column onto the reference.
    pub best_scale: f64,
    /// L2 distance between `best_scale * y_int` and the reference column.
    pub residual: f64,
    /// L2 norm of the reference column, for relative reads.
    pub reference_norm: f64,
}

/// Output of [`dequant_gap_demo`].
#[derive(Debug, Clone)]
pub struct GapReport {
    pub columns: Vec<ColumnGap>,
}

impl GapReport {
    pub fn max_residual(&self) -> f64 {
        self.columns.iter().fold(0.0, |m, c| m.max(c.residual))
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.residual).collect()
    }
}

/// Quantizes activations per input channel and weights per output channel,
/// then measures — per output column — the smallest residual any single
/// dequantization scalar can achieve against the correctly scaled result.
///
/// With one shared activation scale the integer column is exactly
/// proportional to the reference and the residual is literally zero; with
/// distinct scales the per-channel factors are mixed inside the accumulation
/// and no scalar can undo them. The weight scale multiplies both sides of
/// each column identically, so it cancels and is omitted.
pub fn dequant_gap_demo(
    x: &DenseMatrix,
    w: &DenseMatrix,
    act_scales: &[f32],
) -> Result<GapReport> {
    if act_scales.len() != x.cols() || x.cols() != w.rows() {
        return Err(Error::shape(
            "dequant_gap_demo",
            format!("x {}x{}, w {}x{}", x.rows(), x.cols(), w.rows(), w.cols()),
            format!("{} activation scales", act_scales.len()),
        ));
    }
    if let Some(bad) = act_scales.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::domain(
            "dequant_gap_demo",
            format!("activation scale {bad} must be positive and finite"),
        ));
    }
    let x_q = quantize_with_scales(
        x,
        QuantScheme::PerChannel(ChannelAxis::InputChannel),
        act_scales.to_vec(),
    )?;
    let w_q = quantize(w, QuantScheme::PerChannel(ChannelAxis::OutputChannel), SCALE_EPS)?;

    let mut columns = Vec::with_capacity(w_q.cols());
    for j in 0..w_q.cols() {
        // y_int: raw integer accumulation; y_ref: the same accumulation with
        // each term carried at its own channel scale.
        let mut y_int = vec![0i64; x_q.rows()];
        let mut y_ref = vec![0.0f64; x_q.rows()];
        for (i, (yi, yr)) in y_int.iter_mut().zip(y_ref.iter_mut()).enumerate() {
            for (k, s_k) in act_scales.iter().enumerate() {
                let t = x_q.get(i, k) as i64 * w_q.get(k, j) as i64;
                *yi += t;
                *yr += *s_k as f64 * t as f64;
            }
        }
        let ref_norm = l2(&y_ref);
        let dot_ii: f64 = y_int.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let mut best_scale = 0.0f64;
        let mut residual = ref_norm;
        if dot_ii > 0.0 {
            let dot_ir: f64 = y_int
                .iter()
                .zip(&y_ref)
                .map(|(a, b)| *a as f64 * *b)
                .sum();
            let mut candidates = vec![dot_ir / dot_ii];
            // Exact-ratio candidate: when the reference is exactly
            // proportional to the integer column this reproduces the shared
            // scale bit for bit, so proportional columns report residual 0.
            if let Some((i_star, _)) = y_int
                .iter()
                .enumerate()
                .max_by_key(|(_, v)| v.unsigned_abs())
            {
                if y_int[i_star] != 0 {
                    candidates.push(y_ref[i_star] / y_int[i_star] as f64);
                }
            }
            for c in candidates {
                let r = l2_diff(c, &y_int, &y_ref);
                if r < residual {
                    residual = r;
                    best_scale = c;
                }
            }
        }
        columns.push(ColumnGap {
            column: j,
            best_scale,
            residual,
            reference_norm: ref_norm,
        });
    }
    Ok(GapReport { columns })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_diff(c: f64, y_int: &[i64], y_ref: &[f64]) -> f64 {
    y_int
        .iter()
        .zip(y_ref)
        .map(|(i, r)| {
            let d = c * *i as f64 - r;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// How activation scales are chosen at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationPolicy {
    /// One scale per layer, fixed from calibration stats.
    Static,
    /// Recomputed from each batch's smoothed activations.
    Dynamic,
}

impl std::fmt::Display for ActivationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActivationPolicy::Static => write!(f, "static"),
            ActivationPolicy::Dynamic => write!(f, "dynamic"),
        }
    }
}

/// How weight scales are computed. Per-tensor weights are stored with the
/// shared scale broadcast per output channel so the integer kernel applies
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    PerTensor,
    PerOutputChannel,
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightScheme::PerTensor => write!(f, "per-tensor"),
            WeightScheme::PerOutputChannel => write!(f, "per-channel"),
        }
    }
}

/// Full W8A8 conversion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizeOptions {
    pub smoothing: SmoothingConfig,
    pub policy: ActivationPolicy,
    pub weight_scheme: WeightScheme,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            policy: ActivationPolicy::Static,
            weight_scheme: WeightScheme::PerOutputChannel,
        }
    }
}

/// Calibration stats for one named linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    #[serde(flatten)]
    pub stats: CalibrationStats,
}

/// Stats for every linear layer of a model, serializable as
/// `{"layers": [{"name", "act_max", "wt_max"}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub layers: Vec<LayerStats>,
}

impl CalibrationSet {
    pub fn find(&self, name: &str) -> Option<&CalibrationStats> {
        self.layers.iter().find(|l| l.name == name).map(|l| &l.stats)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(json)?;
        for layer in &set.layers {
            layer.stats.validate()?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Converts a full-precision encoder to W8A8: every linear layer gets
/// smoothed, per-output-channel (or broadcast per-tensor) quantized weights
/// plus a per-tensor activation policy; the embedding table is quantized per
/// output channel as well. Biases stay in full precision.
pub fn quantize_model(
    model: &EncoderModel,
    opts: &QuantizeOptions,
    calib: &CalibrationSet,
) -> Result<EncoderModel> {
    if model.is_quantized() {
        return Err(Error::domain(
            "quantize_model",
            "model is already quantized".to_string(),
        ));
    }
    let eps = opts.smoothing.eps;

    let embedding = match &model.embedding {
        EmbeddingTable::Fp(table) => EmbeddingTable::Quantized(quantize(
            table,
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
            eps,
        )?),
        EmbeddingTable::Quantized(q) => EmbeddingTable::Quantized(q.clone()),
    };

    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let name = EncoderModel::layer_name(i);
        let weight = match &layer.weight {
            LayerWeight::Fp(w) => w,
            LayerWeight::Quantized { .. } => {
                return Err(Error::domain(
                    "quantize_model",
                    format!("layer {name} is already quantized"),
                ))
            }
        };
        let stats = calib
            .find(&name)
            .ok_or_else(|| Error::MissingCalibration { layer: name.clone() })?;
        stats.validate()?;
        if stats.inner_dim() != weight.rows() {
            return Err(Error::shape(
                "quantize_model",
                format!("layer {name} inner dim {}", weight.rows()),
                format!("stats over {} channels", stats.inner_dim()),
            ));
        }

        let smooth = smooth_scales(stats, &opts.smoothing)?;
        let cols = weight.cols();
        let w_hat_values: Vec<f32> = weight
            .values()
            .iter()
            .enumerate()
            .map(|(idx, v)| (*v as f64 * smooth[idx / cols] as f64) as f32)
            .collect();
        let w_hat = DenseMatrix::from_vec(weight.rows(), cols, w_hat_values)?;
        let w_q = match opts.weight_scheme {
            WeightScheme::PerOutputChannel => quantize(
                &w_hat,
                QuantScheme::PerChannel(ChannelAxis::OutputChannel),
                eps,
            )?,
            WeightScheme::PerTensor => {
                let shared = compute_scale(&w_hat, QuantScheme::PerTensor, eps)?[0];
                quantize_with_scales(
                    &w_hat,
                    QuantScheme::PerChannel(ChannelAxis::OutputChannel),
                    vec![shared; w_hat.cols()],
                )?
            }
        };

        let act = match opts.policy {
            ActivationPolicy::Dynamic => ActivationQuant::Dynamic,
            ActivationPolicy::Static => {
                // After smoothing, channel j's activations peak at
                // act_max[j] / s_j; the per-tensor scale covers the largest.
                let smoothed_max = stats
                    .act_max
                    .iter()
                    .zip(&smooth)
                    .map(|(a, s)| *a as f64 / *s as f64)
                    .fold(0.0f64, f64::max);
                let scale = (smoothed_max.max(eps as f64) / QMAX as f64) as f32;
                ActivationQuant::Static { scale }
            }
        };

        layers.push(LinearLayer {
            weight: LayerWeight::Quantized {
                weight: w_q,
                smooth,
                act,
            },
            bias: layer.bias.clone(),
        });
    }

    Ok(EncoderModel {
        embedding,
        layers,
        nonlinearity: model.nonlinearity,
        seed: model.seed,
        tokenizer: model.tokenizer.clone(),
    })
}

/// Serialized byte size of a model under the container format.
pub fn serialized_size(model: &EncoderModel) -> Result<usize> {
    Ok(model.to_container()?.to_bytes()?.len())
}

pub(crate) fn quantized_to_record(name: &str, q: &QuantizedMatrix) -> TensorRecord {
    TensorRecord::i8(
        name,
        vec![q.rows() as u32, q.cols() as u32],
        q.scales().to_vec(),
        q.qvalues().to_vec(),
    )
}

pub(crate) fn record_to_quantized(rec: &TensorRecord) -> Result<QuantizedMatrix> {
    if rec.shape.len() != 2 {
        return Err(Error::Container {
            msg: format!("tensor `{}` must be rank 2", rec.name),
        });
    }
    QuantizedMatrix::from_parts(
        rec.shape[0] as usize,
        rec.shape[1] as usize,
        rec.as_i8()?.to_vec(),
        QuantScheme::PerChannel(ChannelAxis::OutputChannel),
        rec.scales.clone(),
    )
}

pub(crate) fn matrix_to_record(name: &str, m: &DenseMatrix) -> TensorRecord {
    TensorRecord::f32(
        name,
        vec![m.rows() as u32, m.cols() as u32],
        m.values().to_vec(),
    )
}

pub(crate) fn record_to_matrix(rec: &TensorRecord) -> Result<DenseMatrix> {
    if rec.shape.len() != 2 {
        return Err(Error::Container {
            msg: format!("tensor `{}` must be rank 2", rec.name),
        });
    }
    DenseMatrix::from_vec(
        rec.shape[0] as usize,
        rec.shape[1] as usize,
        rec.as_f32()?.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matmul;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f32 {
        ((0..12).map(|_| unit(rng)).sum::<f64>() - 6.0) as f32
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let vals = (0..rows * cols).map(|_| gauss(rng)).collect();
        DenseMatrix::from_vec(rows, cols, vals).unwrap()
    }

    #[test]
    fn scale_of_zero_matrix_is_eps_over_127() {
        let z = DenseMatrix::zeros(3, 2);
        let s = compute_scale(&z, QuantScheme::PerTensor, 1e-8).unwrap();
        assert!((s[0] - 1e-8 / 127.0).abs() < 1e-15);
    }

    #[test]
    fn per_tensor_scale_hand_case() {
        let m = DenseMatrix::from_vec(1, 3, vec![1.27, -0.635, 0.0]).unwrap();
        let s = compute_scale(&m, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        assert!((s[0] - 0.01).abs() < 1e-8, "{}", s[0]);
    }

    #[test]
    fn per_channel_scale_hand_case() {
        let m = DenseMatrix::from_rows(&[vec![2.54, -1.27], vec![-1.0, 0.5]]).unwrap();
        let s = compute_scale(
            &m,
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
            SCALE_EPS,
        )
        .unwrap();
        assert!((s[0] - 0.02).abs() < 1e-8);
        assert!((s[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn quantize_hand_case_rounds_away_from_zero() {
        let m = DenseMatrix::from_vec(1, 3, vec![1.27, -0.635, 0.0]).unwrap();
        let q = quantize(&m, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        assert_eq!(q.qvalues(), &[127, -64, 0]);
    }

    #[test]
    fn quantize_zero_matrix_is_all_zero() {
        let q = quantize(&DenseMatrix::zeros(2, 2), QuantScheme::PerTensor, SCALE_EPS).unwrap();
        assert!(q.qvalues().iter().all(|v| *v == 0));
    }

    #[test]
    fn max_magnitude_saturates_at_127() {
        let m = DenseMatrix::from_vec(1, 2, vec![-3.7, 1.1]).unwrap();
        let q = quantize(&m, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        assert_eq!(q.qvalues()[0], -127);
    }

    #[test]
    fn dequantize_hand_case() {
        let q = QuantizedMatrix::from_parts(
            1,
            3,
            vec![127, -64, 0],
            QuantScheme::PerTensor,
            vec![0.01],
        )
        .unwrap();
        let x = dequantize(&q);
        assert!((x.get(0, 0) - 1.27).abs() < 1e-6);
        assert!((x.get(0, 1) + 0.64).abs() < 1e-6);
        assert_eq!(x.get(0, 2), 0.0);
    }

    #[test]
    fn integer_grid_round_trips_exactly() {
        let m = DenseMatrix::from_vec(1, 4, vec![127.0, -45.0, 3.0, 0.0]).unwrap();
        let q = quantize(&m, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        let back = dequantize(&q);
        assert_eq!(back.values(), m.values());
    }

    #[test]
    fn round_trip_error_within_half_scale_both_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scheme in [
            QuantScheme::PerTensor,
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
        ] {
            for _ in 0..50 {
                let m = random_matrix(&mut rng, 9, 7);
                let q = quantize(&m, scheme, SCALE_EPS).unwrap();
                let back = dequantize(&q);
                for r in 0..m.rows() {
                    for c in 0..m.cols() {
                        let s = q.scale_for_col(c) as f64;
                        let err = (back.get(r, c) as f64 - m.get(r, c) as f64).abs();
                        assert!(err <= s / 2.0 + s * 1e-6, "err {err} vs scale {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn quantized_linear_unit_scales_is_exact_integer_matmul() {
        let x = QuantizedMatrix::from_parts(
            2,
            2,
            vec![3, -4, 7, 2],
            QuantScheme::PerTensor,
            vec![1.0],
        )
        .unwrap();
        let w = QuantizedMatrix::from_parts(
            2,
            2,
            vec![1, 2, -3, 5],
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
            vec![1.0, 1.0],
        )
        .unwrap();
        let out = quantized_linear(&x, &w).unwrap();
        // [[3,-4],[7,2]] x [[1,2],[-3,5]] = [[15,-14],[1,24]]
        assert_eq!(out.values(), &[15.0, -14.0, 1.0, 24.0]);
    }

    #[test]
    fn quantized_linear_identity_case() {
        let x = QuantizedMatrix::from_parts(1, 2, vec![1, 2], QuantScheme::PerTensor, vec![1.0])
            .unwrap();
        let w = QuantizedMatrix::from_parts(
            2,
            2,
            vec![1, 0, 0, 1],
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(quantized_linear(&x, &w).unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn quantized_linear_rejects_per_channel_activations() {
        let x = QuantizedMatrix::from_parts(
            1,
            2,
            vec![1, 2],
            QuantScheme::PerChannel(ChannelAxis::InputChannel),
            vec![1.0, 1.0],
        )
        .unwrap();
        let w = QuantizedMatrix::from_parts(
            2,
            1,
            vec![1, 1],
            QuantScheme::PerChannel(ChannelAxis::OutputChannel),
            vec![1.0],
        )
        .unwrap();
        let err = quantized_linear(&x, &w).unwrap_err().to_string();
        assert!(err.contains("dequant_gap_demo"), "{err}");
    }

    #[test]
    fn quantized_linear_tracks_fp_oracle_on_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 64, 64);
        let w = random_matrix(&mut rng, 64, 64);
        let x_q = quantize(&x, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        let w_q = quantize(&w, QuantScheme::PerChannel(ChannelAxis::OutputChannel), SCALE_EPS)
            .unwrap();
        let got = quantized_linear(&x_q, &w_q).unwrap();
        let want = matmul(&x, &w).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (g, w_) in got.values().iter().zip(want.values()) {
            num += ((g - w_) as f64).powi(2);
            den += (*w_ as f64).powi(2);
        }
        assert!((num / den).sqrt() <= 1e-2, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn quantized_linear_matches_dequantized_matmul_closely() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_matrix(&mut rng, 8, 6);
        let w = random_matrix(&mut rng, 6, 5);
        let x_q = quantize(&x, QuantScheme::PerTensor, SCALE_EPS).unwrap();
        let w_q = quantize(&w, QuantScheme::PerChannel(ChannelAxis::OutputChannel), SCALE_EPS)
            .unwrap();
        let got = quantized_linear(&x_q, &w_q).unwrap();
        let want = matmul(&dequantize(&x_q), &dequantize(&w_q)).unwrap();
        for (g, w_) in got.values().iter().zip(want.values()) {
            let tol = 1e-6 * w_.abs().max(1e-3);
            assert!((g - w_).abs() <= tol, "{g} vs {w_}");
        }
    }

    #[test]
    fn smooth_scales_hand_case() {
        let stats = CalibrationStats::new(vec![4.0, 1.0], vec![1.0, 4.0]).unwrap();
        let s = smooth_scales(&stats, &SmoothingConfig::default()).unwrap();
        assert_eq!(s, vec![2.0, 0.5]);
    }

    #[test]
    fn smooth_scales_alpha_zero_moves_nothing_to_weights() {
        let stats = CalibrationStats::new(vec![4.0, 9.0], vec![2.0, 5.0]).unwrap();
        let cfg = SmoothingConfig::new(0.0, SCALE_EPS).unwrap();
        let s = smooth_scales(&stats, &cfg).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-7);
        assert!((s[1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn smooth_scales_symmetric_stats_give_unit_scales() {
        let stats = CalibrationStats::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let s = smooth_scales(&stats, &SmoothingConfig::default()).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn apply_smoothing_unit_scales_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 2);
        let (xh, wh) = apply_smoothing(&x, &w, &[1.0; 4]).unwrap();
        assert_eq!(xh.values(), x.values());
        assert_eq!(wh.values(), w.values());
    }

    #[test]
    fn apply_smoothing_preserves_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 5, 6);
            let w = random_matrix(&mut rng, 6, 4);
            let s: Vec<f32> = (0..6).map(|_| (unit(&mut rng) * 9.9 + 0.1) as f32).collect();
            let (xh, wh) = apply_smoothing(&x, &w, &s).unwrap();
            let before = matmul(&x, &w).unwrap();
            let after = matmul(&xh, &wh).unwrap();
            let max_ref = before.abs_max();
            for (a, b) in after.values().iter().zip(before.values()) {
                assert!((a - b).abs() <= 1e-5 * max_ref.max(1e-3));
            }
        }
    }

    #[test]
    fn apply_smoothing_equalizes_outlier_channel() {
        let x = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![-4.0, 0.5]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let (xh, _) = apply_smoothing(&x, &w, &[2.0, 0.5]).unwrap();
        assert_eq!(xh.col_abs_max(0), 2.0);
        assert_eq!(xh.col_abs_max(1), 2.0);
    }

    #[test]
    fn apply_smoothing_rejects_nonpositive_scale() {
        let x = DenseMatrix::zeros(1, 2);
        let w = DenseMatrix::zeros(2, 1);
        assert!(apply_smoothing(&x, &w, &[1.0, 0.0]).is_err());
        assert!(apply_smoothing(&x, &w, &[1.0, -2.0]).is_err());
    }

    #[test]
    fn gap_residual_zero_for_shared_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_matrix(&mut rng, 6, 8);
        let w = random_matrix(&mut rng, 8, 5);
        let report = dequant_gap_demo(&x, &w, &[0.03125; 8]).unwrap();
        for col in &report.columns {
            assert_eq!(col.residual, 0.0, "column {}", col.column);
        }
    }

    #[test]
    fn gap_residual_positive_for_distinct_scales() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![1.0, -0.5]]).unwrap();
        let report = dequant_gap_demo(&x, &w, &[1.0, 2.0]).unwrap();
        assert!(
            report.max_residual() > 0.0,
            "distinct channel scales must leave a residual"
        );
    }

    #[test]
    fn smoothing_strictly_reduces_outlier_quantization_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut wins = 0;
        for _ in 0..20 {
            let mut x = random_matrix(&mut rng, 12, 12);
            let cols = x.cols();
            for r in 0..x.rows() {
                x.values_mut()[r * cols] *= 150.0;
            }
            let w = random_matrix(&mut rng, 12, 12);
            let reference = matmul(&x, &w).unwrap();

            let err = |xm: &DenseMatrix, wm: &DenseMatrix| -> f64 {
                let xq = quantize(xm, QuantScheme::PerTensor, SCALE_EPS).unwrap();
                let wq = quantize(
                    wm,
                    QuantScheme::PerChannel(ChannelAxis::OutputChannel),
                    SCALE_EPS,
                )
                .unwrap();
                let got = quantized_linear(&xq, &wq).unwrap();
                got.values()
                    .iter()
                    .zip(reference.values())
                    .map(|(g, r)| ((g - r) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };

            let plain = err(&x, &w);
            let stats = CalibrationStats::from_operands(&x, &w).unwrap();
            let s = smooth_scales(&stats, &SmoothingConfig::default()).unwrap();
            let (xh, wh) = apply_smoothing(&x, &w, &s).unwrap();
            let smoothed = err(&xh, &wh);
            if smoothed < plain {
                wins += 1;
            }
        }
        assert!(wins >= 19, "smoothing won only {wins}/20 outlier trials");
    }

    #[test]
    fn calibration_set_json_round_trip() {
        let set = CalibrationSet {
            layers: vec![LayerStats {
                name: "layer0".into(),
                stats: CalibrationStats::new(vec![1.0, 2.0], vec![0.5, 0.25]).unwrap(),
            }],
        };
        let json = set.to_json().unwrap();
        assert!(json.contains("\"act_max\""), "{json}");
        let back = CalibrationSet::from_json(&json).unwrap();
        assert_eq!(back, set);
    }
}
