//! Checkpoint and adapter I/O on top of the safetensors container.
//!
//! Tensors follow the Llama-style naming convention
//! (`model.layers.{i}.self_attn.{q,k,v,o}_proj.weight`,
//! `model.layers.{i}.mlp.{gate,up,down}_proj.weight`, plus the two RMSNorm
//! scale vectors per layer) and are stored in right-multiplication
//! orientation: a row-vector activation `x` maps through a projection as
//! `x * W`, so `q_proj` is `hidden x (n_heads * head_dim)` and `o_proj` is
//! `(n_heads * head_dim) x hidden`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Container, Dtype, TensorData};
use crate::error::{Error, Result};
use crate::linalg::{stream_rng, Matrix};

/// Architecture hyperparameters, loaded from a JSON document with exactly
/// these field names (`qk_norm` is optional and defaults to false).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    pub norm_eps: f64,
    /// Learned per-coordinate Q/K normalization scaling (Qwen3-style).
    /// When set, the Q/K rotation gauge refuses to run.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub qk_norm: bool,
}

impl ModelConfig {
    /// Desk-scale default: exercises GQA fan-out (4 query heads per KV head)
    /// and the RoPE pair structure while running in milliseconds.
    pub fn toy_default() -> Self {
        ModelConfig {
            n_layers: 2,
            hidden_size: 64,
            n_heads: 8,
            n_kv_heads: 2,
            head_dim: 8,
            intermediate_size: 128,
            vocab_size: 256,
            rope_theta: 10_000.0,
            norm_eps: 1e-5,
            qk_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // n_layers = 0 is allowed: the forward pass degenerates to the
        // identity, which the oracle tests rely on.
        let positive = [
            ("hidden_size", self.hidden_size),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "n_heads ({}) must be divisible by n_kv_heads ({})",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "head_dim must be even for the RoPE pair structure".to_string(),
            ));
        }
        let positive_finite = |v: f64| v.is_finite() && v > 0.0;
        if !positive_finite(self.rope_theta) || !positive_finite(self.norm_eps) {
            return Err(Error::InvalidConfig(
                "rope_theta and norm_eps must be positive finite".to_string(),
            ));
        }
        Ok(())
    }

    /// Query heads sharing each KV head.
    pub fn q_per_kv(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    /// KV group of query head `q`.
    pub fn kv_group(&self, q_head: usize) -> usize {
        q_head / self.q_per_kv()
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Total parameter count of the canonical tensor set.
    pub fn param_count(&self) -> usize {
        canonical_schema(self).values().map(|s| s.iter().product::<usize>()).sum()
    }

    /// FNV-1a fingerprint of the canonical JSON form, used to tie gauge
    /// specs to the config they were built for.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in json.as_bytes() {
            h = (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let config: ModelConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::json(format!("parsing config {}", path.display()), e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("serializing config", e))?;
        fs::write(path, json + "\n")
            .map_err(|e| Error::io(format!("writing config {}", path.display()), e))
    }
}

/// Weight site targetable by a gauge or a LoRA adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl Site {
    pub const ALL: [Site; 7] = [
        Site::Q,
        Site::K,
        Site::V,
        Site::O,
        Site::Gate,
        Site::Up,
        Site::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Q => "q",
            Site::K => "k",
            Site::V => "v",
            Site::O => "o",
            Site::Gate => "gate",
            Site::Up => "up",
            Site::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Option<Site> {
        Site::ALL.into_iter().find(|site| site.as_str() == s)
    }

    /// Canonical checkpoint tensor this site targets.
    pub fn tensor_name(self, layer: usize) -> String {
        match self {
            Site::Q | Site::K | Site::V | Site::O => {
                format!("model.layers.{layer}.self_attn.{}_proj.weight", self.as_str())
            }
            Site::Gate | Site::Up | Site::Down => {
                format!("model.layers.{layer}.mlp.{}_proj.weight", self.as_str())
            }
        }
    }

    /// (rows, cols) of the base tensor in right-multiplication orientation.
    pub fn base_shape(self, config: &ModelConfig) -> (usize, usize) {
        match self {
            Site::Q => (config.hidden_size, config.q_dim()),
            Site::K | Site::V => (config.hidden_size, config.kv_dim()),
            Site::O => (config.q_dim(), config.hidden_size),
            Site::Gate | Site::Up => (config.hidden_size, config.intermediate_size),
            Site::Down => (config.intermediate_size, config.hidden_size),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn input_norm_name(layer: usize) -> String {
    format!("model.layers.{layer}.input_layernorm.weight")
}

pub fn post_attn_norm_name(layer: usize) -> String {
    format!("model.layers.{layer}.post_attention_layernorm.weight")
}

/// The canonical tensor set for a config: 9 tensors per layer, sorted by
/// name. A pure function of the config.
pub fn canonical_schema(config: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut schema = BTreeMap::new();
    for layer in 0..config.n_layers {
        for site in Site::ALL {
            let (rows, cols) = site.base_shape(config);
            schema.insert(site.tensor_name(layer), vec![rows, cols]);
        }
        schema.insert(input_norm_name(layer), vec![config.hidden_size]);
        schema.insert(post_attn_norm_name(layer), vec![config.hidden_size]);
    }
    schema
}

/// One named tensor in a loaded checkpoint: storage dtype, container shape,
/// and the values widened to a 64-bit matrix (1-D tensors become one row).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub matrix: Matrix,
}

/// Named-tensor map over a loaded checkpoint. Immutable in normal use;
/// gauge application clones and rewrites the targeted tensors only.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointView {
    entries: BTreeMap<String, TensorEntry>,
}

impl CheckpointView {
    pub fn from_entries(entries: BTreeMap<String, TensorEntry>) -> Self {
        CheckpointView { entries }
    }

    pub fn entries(&self) -> &BTreeMap<String, TensorEntry> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.matrix)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.matrix)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Snap every value to the grid of `dtype` (narrow then widen), keeping
    /// the declared storage dtypes. Models what a deployment at that
    /// storage precision would compute with.
    pub fn snapped_to(&self, dtype: Dtype) -> Result<CheckpointView> {
        let mut entries = self.entries.clone();
        for (name, entry) in &mut entries {
            let snapped: Option<Vec<f64>> = entry
                .matrix
                .data()
                .iter()
                .map(|&v| container::storage_roundtrip(v, dtype))
                .collect();
            let data = snapped.ok_or_else(|| Error::NarrowingOverflow {
                tensor: name.clone(),
                value: entry.matrix.max_abs(),
                dtype: dtype.name(),
            })?;
            entry.matrix = Matrix::new(entry.matrix.rows(), entry.matrix.cols(), data)?;
        }
        Ok(CheckpointView { entries })
    }
}

fn matrix_from_tensor(name: &str, t: &TensorData) -> Result<Matrix> {
    let (rows, cols) = match t.shape.len() {
        1 => (1, t.shape[0]),
        2 => (t.shape[0], t.shape[1]),
        _ => {
            return Err(Error::ShapeMismatch {
                tensor: name.to_string(),
                expected: vec![],
                found: t.shape.clone(),
            })
        }
    };
    Matrix::new(rows, cols, t.values.clone())
}

/// Load a checkpoint and validate it against the canonical schema for
/// `config`: every required tensor present with the expected shape, no
/// extras, 16-bit storage widened to 64-bit for math.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<CheckpointView> {
    config.validate()?;
    let parsed = container::read_container(path)?;
    let schema = canonical_schema(config);

    for name in parsed.tensors.keys() {
        if !schema.contains_key(name) {
            return Err(Error::UnexpectedTensor(name.clone()));
        }
    }

    let mut entries = BTreeMap::new();
    for (name, expected_shape) in &schema {
        let t = parsed
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if &t.shape != expected_shape {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                expected: expected_shape.clone(),
                found: t.shape.clone(),
            });
        }
        entries.insert(
            name.clone(),
            TensorEntry {
                dtype: t.dtype,
                shape: t.shape.clone(),
                matrix: matrix_from_tensor(name, t)?,
            },
        );
    }
    Ok(CheckpointView { entries })
}

/// Save a checkpoint, narrowing each tensor back to its storage dtype with
/// round-to-nearest-even. Tensor names are written sorted; an untouched
/// load/save round trip is byte-identical.
pub fn save_checkpoint(view: &CheckpointView, path: &Path) -> Result<()> {
    let mut c = Container::default();
    for (name, entry) in &view.entries {
        c.tensors.insert(
            name.clone(),
            TensorData {
                dtype: entry.dtype,
                shape: entry.shape.clone(),
                values: entry.matrix.data().to_vec(),
            },
        );
    }
    container::write_container(path, &c)
}

/// Seeded random desk-scale checkpoint: projection weights are i.i.d.
/// Gaussian scaled by `1/sqrt(hidden_size)`, norm weights sit near 1.
/// Values are snapped to the storage grid at generation so the in-memory
/// view equals what a save/load round trip produces.
pub fn generate_toy_checkpoint(
    config: &ModelConfig,
    seed: u64,
    dtype: Dtype,
) -> Result<CheckpointView> {
    config.validate()?;
    let sigma = 1.0 / (config.hidden_size as f64).sqrt();
    let mut entries = BTreeMap::new();

    let mut insert = |name: String, shape: Vec<usize>, raw: Matrix| -> Result<()> {
        let snapped: Option<Vec<f64>> = raw
            .data()
            .iter()
            .map(|&v| container::storage_roundtrip(v, dtype))
            .collect();
        let data = snapped.ok_or_else(|| Error::NarrowingOverflow {
            tensor: name.clone(),
            value: raw.max_abs(),
            dtype: dtype.name(),
        })?;
        let matrix = Matrix::new(raw.rows(), raw.cols(), data)?;
        entries.insert(name, TensorEntry { dtype, shape, matrix });
        Ok(())
    };

    for layer in 0..config.n_layers {
        for site in Site::ALL {
            let (rows, cols) = site.base_shape(config);
            let mut rng = stream_rng(seed, layer as u64, site.as_str());
            let m = Matrix::gaussian(rows, cols, sigma, &mut rng);
            insert(site.tensor_name(layer), vec![rows, cols], m)?;
        }
        for (name, tag) in [
            (input_norm_name(layer), "input_layernorm"),
            (post_attn_norm_name(layer), "post_attention_layernorm"),
        ] {
            let mut rng = stream_rng(seed, layer as u64, tag);
            let noise = Matrix::gaussian(1, config.hidden_size, 0.05, &mut rng);
            let m = Matrix::from_fn(1, config.hidden_size, |_, j| 1.0 + noise.get(0, j));
            insert(name, vec![config.hidden_size], m)?;
        }
    }
    Ok(CheckpointView { entries })
}

// ---------------------------------------------------------------------------
// LoRA adapters
// ---------------------------------------------------------------------------

/// Low-rank pair for one target: `A` is `n x r`, `B` is `r x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Matrix,
    pub b: Matrix,
    pub dtype: Dtype,
}

/// LoRA adapter over one or more `(layer, site)` targets. The effective
/// weight delta at a target is `(alpha / rank) * A * B`, folded in before
/// any gauge algebra so the transform identities apply unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub targets: BTreeMap<(usize, Site), LoraPair>,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Effective delta `(alpha / rank) * A * B` for a target, if present.
    pub fn delta(&self, layer: usize, site: Site) -> Option<Result<Matrix>> {
        self.targets.get(&(layer, site)).map(|pair| {
            crate::linalg::matmul(&pair.a, &pair.b)
                .map(|c| c.scale(self.alpha / self.rank as f64))
        })
    }

    /// Validate every target's outer shape against the base tensors of
    /// `config`.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        for ((layer, site), pair) in &self.targets {
            let (rows, cols) = site.base_shape(config);
            if *layer >= config.n_layers {
                return Err(Error::AdapterMismatch {
                    layer: *layer,
                    site: site.as_str().to_string(),
                    reason: format!("layer index out of range (n_layers = {})", config.n_layers),
                });
            }
            if pair.a.rows() != rows || pair.b.cols() != cols {
                return Err(Error::AdapterMismatch {
                    layer: *layer,
                    site: site.as_str().to_string(),
                    reason: format!(
                        "outer shape {}x{} does not match base {rows}x{cols}",
                        pair.a.rows(),
                        pair.b.cols()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Seeded random adapter with nonzero A and B at every given target.
    /// Values are snapped to the storage grid so save/load is lossless.
    pub fn seeded_random(
        config: &ModelConfig,
        rank: usize,
        alpha: f64,
        sites: &[Site],
        seed: u64,
        dtype: Dtype,
    ) -> Result<LoraAdapter> {
        let snap = |m: Matrix| -> Result<Matrix> {
            let data: Option<Vec<f64>> = m
                .data()
                .iter()
                .map(|&v| container::storage_roundtrip(v, dtype))
                .collect();
            Matrix::new(
                m.rows(),
                m.cols(),
                data.expect("toy adapter values fit every storage dtype"),
            )
        };
        let mut targets = BTreeMap::new();
        for layer in 0..config.n_layers {
            for &site in sites {
                let (rows, cols) = site.base_shape(config);
                let mut rng = stream_rng(seed, layer as u64, &format!("lora-{}", site.as_str()));
                let a = snap(Matrix::gaussian(rows, rank, 1.0 / (rows as f64).sqrt(), &mut rng))?;
                let b = snap(Matrix::gaussian(rank, cols, 1.0 / (rank as f64).sqrt(), &mut rng))?;
                targets.insert((layer, site), LoraPair { a, b, dtype });
            }
        }
        let adapter = LoraAdapter {
            targets,
            rank,
            alpha,
        };
        adapter.validate_against(config)?;
        Ok(adapter)
    }
}

fn parse_adapter_tensor_name(name: &str) -> Result<(usize, Site, bool)> {
    // "layers.{i}.{site}.lora_A" / "layers.{i}.{site}.lora_B"
    let parts: Vec<&str> = name.split('.').collect();
    if parts.len() != 4 || parts[0] != "layers" {
        return Err(Error::MalformedAdapterName(name.to_string()));
    }
    let layer: usize = parts[1]
        .parse()
        .map_err(|_| Error::MalformedAdapterName(name.to_string()))?;
    let site = Site::parse(parts[2]).ok_or_else(|| Error::UnknownSite(name.to_string()))?;
    let is_a = match parts[3] {
        "lora_A" => true,
        "lora_B" => false,
        _ => return Err(Error::MalformedAdapterName(name.to_string())),
    };
    Ok((layer, site, is_a))
}

/// Load a LoRA adapter from its container. Target names follow
/// `layers.{i}.{site}.lora_A/lora_B`; `alpha` comes from the container
/// metadata and defaults to the rank (so the delta is exactly `A * B`).
pub fn load_adapter(path: &Path) -> Result<LoraAdapter> {
    let parsed = container::read_container(path)?;
    let mut a_parts: BTreeMap<(usize, Site), (Matrix, Dtype)> = BTreeMap::new();
    let mut b_parts: BTreeMap<(usize, Site), (Matrix, Dtype)> = BTreeMap::new();

    for (name, t) in &parsed.tensors {
        let (layer, site, is_a) = parse_adapter_tensor_name(name)?;
        let matrix = matrix_from_tensor(name, t)?;
        if t.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                expected: vec![0, 0],
                found: t.shape.clone(),
            });
        }
        if is_a {
            a_parts.insert((layer, site), (matrix, t.dtype));
        } else {
            b_parts.insert((layer, site), (matrix, t.dtype));
        }
    }

    let mut targets = BTreeMap::new();
    let mut rank: Option<usize> = None;
    for (key, (a, dtype)) in a_parts {
        let (layer, site) = key;
        let (b, _) = b_parts.remove(&key).ok_or_else(|| {
            Error::MissingTensor(format!("layers.{layer}.{site}.lora_B"))
        })?;
        if a.cols() != b.rows() {
            return Err(Error::RankInconsistency {
                context: format!("layers.{layer}.{site}"),
                expected: a.cols(),
                found: b.rows(),
            });
        }
        match rank {
            None => rank = Some(a.cols()),
            Some(r) if r != a.cols() => {
                return Err(Error::RankInconsistency {
                    context: format!("layers.{layer}.{site} vs earlier targets"),
                    expected: r,
                    found: a.cols(),
                })
            }
            _ => {}
        }
        targets.insert(key, LoraPair { a, b, dtype });
    }
    if let Some(((layer, site), _)) = b_parts.into_iter().next() {
        return Err(Error::MissingTensor(format!(
            "layers.{layer}.{site}.lora_A"
        )));
    }
    let rank = rank.ok_or_else(|| Error::MissingTensor("adapter has no targets".to_string()))?;

    let alpha = match parsed.metadata.get("alpha") {
        Some(s) => s.parse::<f64>().map_err(|_| {
            Error::MalformedHeader(format!("adapter alpha metadata {s:?} is not a number"))
        })?,
        None => rank as f64,
    };

    Ok(LoraAdapter {
        targets,
        rank,
        alpha,
    })
}

/// Save a LoRA adapter with the same round-trip contract as checkpoints.
pub fn save_adapter(adapter: &LoraAdapter, path: &Path) -> Result<()> {
    let mut c = Container::default();
    c.metadata
        .insert("alpha".to_string(), format!("{}", adapter.alpha));
    for ((layer, site), pair) in &adapter.targets {
        if pair.a.cols() != adapter.rank || pair.b.rows() != adapter.rank {
            return Err(Error::RankInconsistency {
                context: format!("layers.{layer}.{site}"),
                expected: adapter.rank,
                found: pair.a.cols(),
            });
        }
        c.tensors.insert(
            format!("layers.{layer}.{site}.lora_A"),
            TensorData {
                dtype: pair.dtype,
                shape: vec![pair.a.rows(), pair.a.cols()],
                values: pair.a.data().to_vec(),
            },
        );
        c.tensors.insert(
            format!("layers.{layer}.{site}.lora_B"),
            TensorData {
                dtype: pair.dtype,
                shape: vec![pair.b.rows(), pair.b.cols()],
                values: pair.b.data().to_vec(),
            },
        );
    }
    container::write_container(path, &c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        ModelConfig::toy_default().validate().unwrap();
    }

    #[test]
    fn canonical_schema_counts_nine_per_layer() {
        let config = ModelConfig::toy_default();
        let schema = canonical_schema(&config);
        assert_eq!(schema.len(), 9 * config.n_layers);
    }

    #[test]
    fn config_rejects_bad_gqa_split() {
        let mut c = ModelConfig::toy_default();
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_odd_head_dim() {
        let mut c = ModelConfig::toy_default();
        c.head_dim = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip_exact_field_names() {
        let config = ModelConfig::toy_default();
        let json = serde_json::to_string(&config).unwrap();
        for field in [
            "n_layers",
            "hidden_size",
            "n_heads",
            "n_kv_heads",
            "head_dim",
            "intermediate_size",
            "vocab_size",
            "rope_theta",
            "norm_eps",
        ] {
            assert!(json.contains(&format!("\"{field}\":")), "missing {field}");
        }
        // qk_norm is omitted unless set
        assert!(!json.contains("qk_norm"));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let res: std::result::Result<ModelConfig, _> =
            serde_json::from_str(r#"{"n_layers":1,"hidden_size":8,"n_heads":2,"n_kv_heads":1,"head_dim":4,"intermediate_size":16,"vocab_size":16,"rope_theta":10000.0,"norm_eps":1e-5,"bogus":1}"#);
        assert!(res.is_err());
    }

    #[test]
    fn checkpoint_roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let view = generate_toy_checkpoint(&config, 42, Dtype::F32).unwrap();

        let p1 = dir.path().join("a.safetensors");
        let p2 = dir.path().join("b.safetensors");
        save_checkpoint(&view, &p1).unwrap();
        let loaded = load_checkpoint(&p1, &config).unwrap();
        assert_eq!(loaded, view);
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bf16_checkpoint_roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let view = generate_toy_checkpoint(&config, 7, Dtype::Bf16).unwrap();
        let p1 = dir.path().join("a.safetensors");
        let p2 = dir.path().join("b.safetensors");
        save_checkpoint(&view, &p1).unwrap();
        save_checkpoint(&load_checkpoint(&p1, &config).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn toy_generation_is_seed_deterministic() {
        let config = ModelConfig::toy_default();
        let a = generate_toy_checkpoint(&config, 42, Dtype::F64).unwrap();
        let b = generate_toy_checkpoint(&config, 42, Dtype::F64).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_checkpoint(&config, 43, Dtype::F64).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn load_rejects_shape_mismatch_naming_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let mut view = generate_toy_checkpoint(&config, 1, Dtype::F32).unwrap();
        let name = Site::V.tensor_name(0);
        let entry = view.entries.get_mut(&name).unwrap();
        entry.shape = vec![entry.shape[0], entry.shape[1] - 1];
        entry.matrix = Matrix::zeros(entry.shape[0], entry.shape[1]);
        let path = dir.path().join("bad.safetensors");
        save_checkpoint(&view, &path).unwrap();
        match load_checkpoint(&path, &config) {
            Err(Error::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, name),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_missing_and_unexpected_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let view = generate_toy_checkpoint(&config, 1, Dtype::F32).unwrap();

        let mut missing = view.clone();
        missing.entries.remove(&Site::Q.tensor_name(1));
        let p = dir.path().join("missing.safetensors");
        save_checkpoint(&missing, &p).unwrap();
        assert!(matches!(
            load_checkpoint(&p, &config),
            Err(Error::MissingTensor(_))
        ));

        let mut extra = view;
        extra.entries.insert(
            "model.layers.0.unexpected.weight".to_string(),
            TensorEntry {
                dtype: Dtype::F32,
                shape: vec![2],
                matrix: Matrix::zeros(1, 2),
            },
        );
        let p = dir.path().join("extra.safetensors");
        save_checkpoint(&extra, &p).unwrap();
        assert!(matches!(
            load_checkpoint(&p, &config),
            Err(Error::UnexpectedTensor(_))
        ));
    }

    #[test]
    fn adapter_roundtrip_single_q_site() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let mut adapter =
            LoraAdapter::seeded_random(&config, 2, 4.0, &[Site::Q], 5, Dtype::F32).unwrap();
        // keep only one layer's target
        adapter.targets.retain(|(layer, _), _| *layer == 0);

        let p1 = dir.path().join("adapter.safetensors");
        let p2 = dir.path().join("adapter2.safetensors");
        save_adapter(&adapter, &p1).unwrap();
        let loaded = load_adapter(&p1).unwrap();
        assert_eq!(loaded, adapter);
        save_adapter(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn adapter_rank_inconsistency_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::default();
        c.tensors.insert(
            "layers.0.q.lora_A".to_string(),
            TensorData {
                dtype: Dtype::F32,
                shape: vec![4, 2],
                values: vec![0.0; 8],
            },
        );
        c.tensors.insert(
            "layers.0.q.lora_B".to_string(),
            TensorData {
                dtype: Dtype::F32,
                shape: vec![3, 4],
                values: vec![0.0; 12],
            },
        );
        let path = dir.path().join("bad.safetensors");
        container::write_container(&path, &c).unwrap();
        assert!(matches!(
            load_adapter(&path),
            Err(Error::RankInconsistency { .. })
        ));
    }

    #[test]
    fn adapter_unknown_site_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::default();
        c.tensors.insert(
            "layers.0.attn.lora_A".to_string(),
            TensorData {
                dtype: Dtype::F32,
                shape: vec![2, 2],
                values: vec![0.0; 4],
            },
        );
        let path = dir.path().join("bad.safetensors");
        container::write_container(&path, &c).unwrap();
        assert!(matches!(load_adapter(&path), Err(Error::UnknownSite(_))));
    }

    #[test]
    fn adapter_all_sites_two_layers_has_fourteen_targets() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let adapter =
            LoraAdapter::seeded_random(&config, 2, 2.0, &Site::ALL, 9, Dtype::F32).unwrap();
        let path = dir.path().join("adapter.safetensors");
        save_adapter(&adapter, &path).unwrap();
        let loaded = load_adapter(&path).unwrap();
        assert_eq!(loaded.targets.len(), 14);
        assert_eq!(loaded.rank, 2);
    }

    #[test]
    fn adapter_alpha_defaults_to_rank() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy_default();
        let adapter =
            LoraAdapter::seeded_random(&config, 3, 12.0, &[Site::Up], 1, Dtype::F32).unwrap();
        let path = dir.path().join("adapter.safetensors");
        save_adapter(&adapter, &path).unwrap();

        // strip the metadata and reload
        let mut parsed = container::read_container(&path).unwrap();
        parsed.metadata.clear();
        container::write_container(&path, &parsed).unwrap();
        let loaded = load_adapter(&path).unwrap();
        assert_eq!(loaded.alpha, 3.0);
        assert_eq!(loaded.rank, 3);
    }

    #[test]
    fn param_count_matches_schema() {
        let config = ModelConfig::toy_default();
        let by_hand: usize = canonical_schema(&config)
            .values()
            .map(|s| s.iter().product::<usize>())
            .sum();
        assert_eq!(config.param_count(), by_hand);
        assert!(by_hand > 0);
    }
}
