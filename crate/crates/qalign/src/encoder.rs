//! Text normalization, deterministic hash tokenization, batching, and a
//! seeded residual feed-forward encoder that produces `(B, L, H)` hidden
//! states and pooled corpus embeddings in both full-precision and W8A8 modes.
//!
//! The encoder is a stand-in: embedding lookup followed by position-wise
//! `h + gelu(h W + b)` blocks. It is deterministic for a given seed, keeps
//! activations bounded, and is sensitive to quantization error in exactly the
//! way the integer kernels need exercising — which is all the alignment and
//! search layers above it require.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Container, TensorRecord};
use crate::error::{Error, Result};
use crate::numerics::{concat_rows, matmul, mean_over_sequence, DenseMatrix, DenseTensor3};
use crate::quant::{
    self, compute_scale, quantize_with_scales, quantized_linear, CalibrationSet, CalibrationStats,
    LayerStats, QuantScheme, QuantizedMatrix, SCALE_EPS,
};

/// Token id reserved for padding.
pub const PAD_ID: u32 = 0;

/// Tokenizer settings: padded length, vocabulary size, and the hash seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub max_length: usize,
    pub vocab_size: u32,
    /// Fixed at 0; id 0 never collides with a hashed token.
    pub pad_id: u32,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            max_length: 512,
            vocab_size: 1024,
            pad_id: PAD_ID,
            seed: 42,
        }
    }
}

impl TokenizerConfig {
    pub fn new(max_length: usize, vocab_size: u32, seed: u64) -> Result<Self> {
        let cfg = Self {
            max_length,
            vocab_size,
            pad_id: PAD_ID,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_length < 1 {
            return Err(Error::domain("TokenizerConfig", "max_length must be >= 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::domain(
                "TokenizerConfig",
                "vocab_size must be >= 2 (pad plus at least one token id)",
            ));
        }
        if self.pad_id != PAD_ID {
            return Err(Error::domain("TokenizerConfig", "pad_id is fixed at 0"));
        }
        Ok(())
    }
}

/// A `B x L` grid of token ids plus each row's pre-padding length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    batch: usize,
    seq: usize,
    true_lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn id(&self, b: usize, l: usize) -> u32 {
        self.ids[b * self.seq + l]
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq..(b + 1) * self.seq]
    }

    pub fn true_lengths(&self) -> &[usize] {
        &self.true_lengths
    }
}

/// One corpus record: an opaque id and its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub text: String,
}

/// Ordered list of uniquely identified texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn from_entries(entries: Vec<CorpusEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::domain(
                    "Corpus",
                    format!("duplicate id `{}`", e.id),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        Self::from_entries(
            pairs
                .into_iter()
                .map(|(id, text)| CorpusEntry { id, text })
                .collect(),
        )
    }

    /// Reads a two-column `id<TAB>text` TSV, no header. Text may itself
    /// contain tabs; only the first tab separates the columns.
    pub fn read_tsv(path: &std::path::Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let name = path.display().to_string();
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: name.clone(),
                line: i + 1,
                msg: "expected `id<TAB>text`".into(),
            })?;
            entries.push(CorpusEntry {
                id: id.to_string(),
                text: text.to_string(),
            });
        }
        Self::from_entries(entries)
    }

    /// Applies a text transform to every entry, keeping ids.
    pub fn map_texts(&self, f: impl Fn(&str) -> String) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| CorpusEntry {
                    id: e.id.clone(),
                    text: f(&e.text),
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// Lowercases, replaces every character outside letters/digits/whitespace
/// with a space, collapses whitespace runs, and trims. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            // whitespace and punctuation both collapse into one separator
            pending_space = true;
        }
    }
    out
}

fn token_id(word: &str, cfg: &TokenizerConfig) -> u32 {
    // Seeded FNV-1a over the seed bytes then the word bytes; id 0 stays
    // reserved for padding.
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in cfg.seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    for b in word.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(PRIME);
    }
    (h % (cfg.vocab_size as u64 - 1)) as u32 + 1
}

/// Whitespace-splits each text, hashes tokens into `[1, V)`, and pads or
/// truncates every row to exactly `max_length`.
pub fn tokenize_batch(texts: &[&str], cfg: &TokenizerConfig) -> Result<TokenBatch> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(Error::Empty {
            op: "tokenize_batch",
        });
    }
    let seq = cfg.max_length;
    let mut ids = vec![cfg.pad_id; texts.len() * seq];
    let mut true_lengths = Vec::with_capacity(texts.len());
    for (b, text) in texts.iter().enumerate() {
        let mut count = 0;
        for word in text.split_whitespace().take(seq) {
            ids[b * seq + count] = token_id(word, cfg);
            count += 1;
        }
        true_lengths.push(count);
    }
    Ok(TokenBatch {
        ids,
        batch: texts.len(),
        seq,
        true_lengths,
    })
}

/// Splits a corpus into `ceil(N / B)` batches of at most `B` records each,
/// preserving order.
pub fn split_batches(corpus: &Corpus, batch_size: usize) -> Result<Vec<&[CorpusEntry]>> {
    if batch_size == 0 {
        return Err(Error::domain("split_batches", "batch size must be >= 1"));
    }
    Ok(corpus.entries.chunks(batch_size).collect())
}

/// Position-wise nonlinearity applied inside each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nonlinearity {
    /// tanh-approximated GELU.
    GeluTanh,
}

fn gelu_tanh(x: f32) -> f32 {
    let x = x as f64;
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    (0.5 * x * (1.0 + inner.tanh())) as f32
}

/// Per-layer activation quantization at inference time.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationQuant {
    /// Calibrated per-tensor scale.
    Static { scale: f32 },
    /// Scale recomputed from each batch's smoothed activations.
    Dynamic,
}

/// A layer's weight in either precision. Quantized weights carry the
/// smoothing vector that must divide the incoming activations.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeight {
    Fp(DenseMatrix),
    Quantized {
        weight: QuantizedMatrix,
        smooth: Vec<f32>,
        act: ActivationQuant,
    },
}

/// One residual feed-forward block: `h + gelu(h W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: LayerWeight,
    pub bias: Vec<f32>,
}

/// Embedding table in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingTable {
    Fp(DenseMatrix),
    Quantized(QuantizedMatrix),
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        match self {
            EmbeddingTable::Fp(m) => m.rows(),
            EmbeddingTable::Quantized(q) => q.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            EmbeddingTable::Fp(m) => m.cols(),
            EmbeddingTable::Quantized(q) => q.cols(),
        }
    }
}

/// Architecture and seeding parameters for [`EncoderModel::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub dim: usize,
    pub layers: usize,
    pub max_length: usize,
    pub seed: u64,
    /// Number of embedding channels boosted to act as activation outliers.
    pub outlier_channels: usize,
    /// Multiplier applied to the boosted channels.
    pub outlier_gain: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            dim: 64,
            layers: 4,
            max_length: 512,
            seed: 42,
            outlier_channels: 0,
            outlier_gain: 40.0,
        }
    }
}

/// The seeded stand-in encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub embedding: EmbeddingTable,
    pub layers: Vec<LinearLayer>,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

impl EncoderModel {
    /// Deterministically initializes a full-precision model: every weight,
    /// bias, and embedding entry is uniform in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn generate(cfg: &ModelConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::domain("EncoderModel::generate", "dim must be >= 1"));
        }
        let tokenizer = TokenizerConfig::new(cfg.max_length, cfg.vocab_size, cfg.seed)?;
        let bound = 1.0 / (cfg.dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| ((unit(&mut rng) * 2.0 - 1.0) * bound) as f32)
                .collect()
        };

        let v = cfg.vocab_size as usize;
        let mut embedding = DenseMatrix::from_vec(v, cfg.dim, draw(v * cfg.dim))?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let weight = DenseMatrix::from_vec(cfg.dim, cfg.dim, draw(cfg.dim * cfg.dim))?;
            let bias = draw(cfg.dim);
            layers.push(LinearLayer {
                weight: LayerWeight::Fp(weight),
                bias,
            });
        }

        if cfg.outlier_channels > 0 {
            if !(cfg.outlier_gain.is_finite() && cfg.outlier_gain > 0.0) {
                return Err(Error::domain(
                    "EncoderModel::generate",
                    format!("outlier gain must be positive, got {}", cfg.outlier_gain),
                ));
            }
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < cfg.outlier_channels.min(cfg.dim) {
                chosen.insert((rng.next_u64() % cfg.dim as u64) as usize);
            }
            let cols = embedding.cols();
            for r in 0..embedding.rows() {
                for &c in &chosen {
                    embedding.values_mut()[r * cols + c] *= cfg.outlier_gain;
                }
            }
        }

        Ok(Self {
            embedding: EmbeddingTable::Fp(embedding),
            layers,
            nonlinearity: Nonlinearity::GeluTanh,
            seed: cfg.seed,
            tokenizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> u32 {
        self.embedding.rows() as u32
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.embedding, EmbeddingTable::Quantized(_))
            || self
                .layers
                .iter()
                .any(|l| matches!(l.weight, LayerWeight::Quantized { .. }))
    }

    pub fn layer_name(index: usize) -> String {
        format!("layer{index}")
    }

    /// Serializes to the shared tensor container. A `meta` record carries
    /// the scalar configuration; per-layer tensor dtypes encode the
    /// precision.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        let nonlin = match self.nonlinearity {
            Nonlinearity::GeluTanh => 0.0f32,
        };
        let meta = vec![
            self.vocab_size() as f32,
            self.dim() as f32,
            self.layers.len() as f32,
            self.tokenizer.max_length as f32,
            self.tokenizer.pad_id as f32,
            (self.seed & 0xFFFF) as f32,
            ((self.seed >> 16) & 0xFFFF) as f32,
            ((self.seed >> 32) & 0xFFFF) as f32,
            ((self.seed >> 48) & 0xFFFF) as f32,
            nonlin,
        ];
        c.push(TensorRecord::f32("meta", vec![meta.len() as u32], meta));
        match &self.embedding {
            EmbeddingTable::Fp(m) => c.push(quant::matrix_to_record("embedding", m)),
            EmbeddingTable::Quantized(q) => c.push(quant::quantized_to_record("embedding", q)),
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let name = Self::layer_name(i);
            match &layer.weight {
                LayerWeight::Fp(w) => {
                    c.push(quant::matrix_to_record(&format!("{name}.weight"), w));
                }
                LayerWeight::Quantized { weight, smooth, act } => {
                    c.push(quant::quantized_to_record(&format!("{name}.weight"), weight));
                    c.push(TensorRecord::f32(
                        format!("{name}.smooth"),
                        vec![smooth.len() as u32],
                        smooth.clone(),
                    ));
                    if let ActivationQuant::Static { scale } = act {
                        c.push(TensorRecord::f32(
                            format!("{name}.act_scale"),
                            vec![1],
                            vec![*scale],
                        ));
                    }
                }
            }
            c.push(TensorRecord::f32(
                format!("{name}.bias"),
                vec![layer.bias.len() as u32],
                layer.bias.clone(),
            ));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = c.get("meta")?.as_f32()?;
        if meta.len() != 10 {
            return Err(Error::Container {
                msg: format!("meta record must hold 10 values, got {}", meta.len()),
            });
        }
        let vocab_size = meta[0] as u32;
        let dim = meta[1] as usize;
        let n_layers = meta[2] as usize;
        let max_length = meta[3] as usize;
        let seed = (meta[5] as u64)
            | ((meta[6] as u64) << 16)
            | ((meta[7] as u64) << 32)
            | ((meta[8] as u64) << 48);
        let nonlinearity = match meta[9] as i64 {
            0 => Nonlinearity::GeluTanh,
            other => {
                return Err(Error::Container {
                    msg: format!("unknown nonlinearity tag {other}"),
                })
            }
        };
        let tokenizer = TokenizerConfig::new(max_length, vocab_size, seed)?;

        let emb_rec = c.get("embedding")?;
        let embedding = match emb_rec.payload {
            crate::container::Payload::F32(_) => {
                EmbeddingTable::Fp(quant::record_to_matrix(emb_rec)?)
            }
            crate::container::Payload::I8(_) => {
                EmbeddingTable::Quantized(quant::record_to_quantized(emb_rec)?)
            }
        };
        if embedding.rows() != vocab_size as usize || embedding.cols() != dim {
            return Err(Error::Container {
                msg: "embedding shape disagrees with meta".into(),
            });
        }

        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let name = Self::layer_name(i);
            let w_rec = c.get(&format!("{name}.weight"))?;
            let bias = c.get(&format!("{name}.bias"))?.as_f32()?.to_vec();
            if bias.len() != dim {
                return Err(Error::Container {
                    msg: format!("{name}.bias length {} != dim {dim}", bias.len()),
                });
            }
            let weight = match w_rec.payload {
                crate::container::Payload::F32(_) => LayerWeight::Fp(quant::record_to_matrix(w_rec)?),
                crate::container::Payload::I8(_) => {
                    let weight = quant::record_to_quantized(w_rec)?;
                    let smooth = c.get(&format!("{name}.smooth"))?.as_f32()?.to_vec();
                    if smooth.len() != dim {
                        return Err(Error::Container {
                            msg: format!("{name}.smooth length {} != dim {dim}", smooth.len()),
                        });
                    }
                    let act = match c.find(&format!("{name}.act_scale")) {
                        Some(rec) => ActivationQuant::Static {
                            scale: rec.as_f32()?[0],
                        },
                        None => ActivationQuant::Dynamic,
                    };
                    LayerWeight::Quantized { weight, smooth, act }
                }
            };
            layers.push(LinearLayer { weight, bias });
        }

        Ok(Self {
            embedding,
            layers,
            nonlinearity,
            seed,
            tokenizer,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::write_atomic(path, &self.to_container()?.to_bytes()?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&Container::from_bytes(&std::fs::read(path)?)?)
    }
}

fn lookup_embeddings(model: &EncoderModel, batch: &TokenBatch) -> Result<DenseMatrix> {
    let dim = model.dim();
    let vocab = model.vocab_size();
    let mut values = Vec::with_capacity(batch.batch() * batch.seq() * dim);
    for b in 0..batch.batch() {
        for l in 0..batch.seq() {
            let id = batch.id(b, l);
            if id >= vocab {
                return Err(Error::Vocabulary { id, vocab });
            }
            match &model.embedding {
                EmbeddingTable::Fp(m) => values.extend_from_slice(m.row(id as usize)),
                EmbeddingTable::Quantized(q) => {
                    for d in 0..dim {
                        values.push(q.get(id as usize, d) as f32 * q.scale_for_col(d));
                    }
                }
            }
        }
    }
    DenseMatrix::from_vec(batch.batch() * batch.seq(), dim, values)
}

fn layer_forward(layer: &LinearLayer, x: &DenseMatrix) -> Result<DenseMatrix> {
    let pre = match &layer.weight {
        LayerWeight::Fp(w) => matmul(x, w)?,
        LayerWeight::Quantized { weight, smooth, act } => {
            let mut xv = Vec::with_capacity(x.rows() * x.cols());
            for r in 0..x.rows() {
                for (c, s) in smooth.iter().enumerate() {
                    xv.push((x.get(r, c) as f64 / *s as f64) as f32);
                }
            }
            let x_hat = DenseMatrix::from_vec(x.rows(), x.cols(), xv)?;
            let scale = match act {
                ActivationQuant::Static { scale } => vec![*scale],
                ActivationQuant::Dynamic => {
                    compute_scale(&x_hat, QuantScheme::PerTensor, SCALE_EPS)?
                }
            };
            let x_q = quantize_with_scales(&x_hat, QuantScheme::PerTensor, scale)?;
            quantized_linear(&x_q, weight)?
        }
    };
    let mut out = Vec::with_capacity(x.rows() * x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let y = pre.get(r, c) + layer.bias[c];
            out.push(x.get(r, c) + gelu_tanh(y));
        }
    }
    DenseMatrix::from_vec(x.rows(), x.cols(), out)
}

fn encode_batch_observed(
    model: &EncoderModel,
    batch: &TokenBatch,
    mut observe: impl FnMut(usize, &DenseMatrix),
) -> Result<DenseTensor3> {
    let mut h = lookup_embeddings(model, batch)?;
    for (i, layer) in model.layers.iter().enumerate() {
        observe(i, &h);
        h = layer_forward(layer, &h)?;
    }
    DenseTensor3::from_vec(batch.batch(), batch.seq(), model.dim(), h.values().to_vec())
}

/// Runs the model over one token batch, producing `(B, L, H)` hidden states.
pub fn encode_batch(model: &EncoderModel, batch: &TokenBatch) -> Result<DenseTensor3> {
    encode_batch_observed(model, batch, |_, _| {})
}

/// Activations entering layer `layer` as a `(B*L) x H` matrix (row = token
/// position, column = channel). `layer == 0` is the embedding output;
/// `layer == layers.len()` is the final hidden state.
pub fn activation_snapshot(
    model: &EncoderModel,
    batch: &TokenBatch,
    layer: usize,
) -> Result<DenseMatrix> {
    if layer > model.layers.len() {
        return Err(Error::domain(
            "activation_snapshot",
            format!(
                "layer {layer} out of range for a {}-layer model",
                model.layers.len()
            ),
        ));
    }
    let mut h = lookup_embeddings(model, batch)?;
    for l in model.layers.iter().take(layer) {
        h = layer_forward(l, &h)?;
    }
    Ok(h)
}

/// Encodes a whole corpus: batches it, tokenizes, runs the encoder, pools
/// over the sequence, and concatenates batch results in corpus order into an
/// `N x H` matrix.
pub fn encode_corpus(
    model: &EncoderModel,
    corpus: &Corpus,
    cfg: &TokenizerConfig,
    batch_size: usize,
) -> Result<DenseMatrix> {
    if corpus.is_empty() {
        return Err(Error::Empty { op: "encode_corpus" });
    }
    cfg.validate()?;
    if cfg.vocab_size != model.vocab_size() {
        return Err(Error::shape(
            "encode_corpus",
            format!("tokenizer vocab {}", cfg.vocab_size),
            format!("model vocab {}", model.vocab_size()),
        ));
    }
    let mut pooled = Vec::new();
    for chunk in split_batches(corpus, batch_size)? {
        let texts: Vec<&str> = chunk.iter().map(|e| e.text.as_str()).collect();
        let batch = tokenize_batch(&texts, cfg)?;
        let hidden = encode_batch(model, &batch)?;
        pooled.push(mean_over_sequence(&hidden)?);
    }
    concat_rows(&pooled)
}

/// Runs the full-precision model over a corpus and records, per linear
/// layer, the per-channel activation maxima alongside the weight row maxima.
pub fn collect_calibration(
    model: &EncoderModel,
    corpus: &Corpus,
    cfg: &TokenizerConfig,
    batch_size: usize,
) -> Result<CalibrationSet> {
    if model.is_quantized() {
        return Err(Error::domain(
            "collect_calibration",
            "calibration runs on the full-precision model",
        ));
    }
    if corpus.is_empty() {
        return Err(Error::Empty {
            op: "collect_calibration",
        });
    }
    cfg.validate()?;
    let dim = model.dim();
    let mut act_max = vec![vec![0.0f32; dim]; model.layers.len()];
    for chunk in split_batches(corpus, batch_size)? {
        let texts: Vec<&str> = chunk.iter().map(|e| e.text.as_str()).collect();
        let batch = tokenize_batch(&texts, cfg)?;
        encode_batch_observed(model, &batch, |layer, x| {
            let maxima = &mut act_max[layer];
            for r in 0..x.rows() {
                for (c, m) in maxima.iter_mut().enumerate() {
                    *m = m.max(x.get(r, c).abs());
                }
            }
        })?;
    }

    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, (layer, act)) in model.layers.iter().zip(act_max).enumerate() {
        let weight = match &layer.weight {
            LayerWeight::Fp(w) => w,
            LayerWeight::Quantized { .. } => unreachable!("checked above"),
        };
        let wt_max = (0..weight.rows()).map(|r| weight.row_abs_max(r)).collect();
        layers.push(LayerStats {
            name: EncoderModel::layer_name(i),
            stats: CalibrationStats::new(act, wt_max)?,
        });
    }
    Ok(CalibrationSet { layers })
}

/// Deterministic word-salad corpus for demos and held-out evaluations.
pub fn synthetic_corpus(n: usize, seed: u64, id_prefix: &str) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let words = 3 + (rng.next_u64() % 10) as usize;
        let mut text = String::new();
        for w in 0..words {
            if w > 0 {
                text.push(' ');
            }
            let len = 3 + (rng.next_u64() % 6) as usize;
            for _ in 0..len {
                text.push((b'a' + (rng.next_u64() % 26) as u8) as char);
            }
        }
        entries.push(CorpusEntry {
            id: format!("{id_prefix}{i}"),
            text,
        });
    }
    Corpus { entries }
}
