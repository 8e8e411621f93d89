//! Behavior-preserving weight-space symmetry transforms.
//!
//! Three sites are supported, each applied independently per layer:
//!
//! - `vo`: a Haar-random orthogonal gauge per KV head's value subspace.
//!   The head's column block of `v_proj` is right-multiplied by `G_h`; the
//!   row block of `o_proj` for every query head in that KV group is
//!   left-multiplied by `G_h^T`, so the attention output is unchanged.
//! - `mlp`: one random permutation of the intermediate coordinates per
//!   layer. `gate_proj` and `up_proj` get the column permutation, which
//!   commutes with the elementwise nonlinearity and product; `down_proj`
//!   gets the inverse row permutation.
//! - `qk` (optional): per-frequency-pair rotations of each KV group's
//!   query/key subspace. Block rotations in the RoPE pair planes commute
//!   with every positional rotation, so attention scores are preserved.
//!   Refused for configs with learned Q/K normalization scaling.
//!
//! Adapters installed on gauged weights can be pulled back to the adapter
//! effectively seen on the original weights, and pushed forward in the
//! other direction; both transforms touch exactly one low-rank factor per
//! site, preserving rank and storage layout.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointView, LoraAdapter, ModelConfig, Site};
use crate::error::{Error, Result};
use crate::linalg::{
    haar_orthogonal, permute_columns, permute_columns_inv, permute_rows, permute_rows_inv,
    random_permutation, stream_rng, Matrix, OrthogonalMatrix, PermutationMatrix,
};

/// Which symmetry sites a gauge spec covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SiteSet {
    pub vo: bool,
    pub mlp: bool,
    pub qk: bool,
}

impl SiteSet {
    pub fn none() -> Self {
        SiteSet::default()
    }

    pub fn all() -> Self {
        SiteSet {
            vo: true,
            mlp: true,
            qk: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.vo || self.mlp || self.qk)
    }

    /// Parse a comma-separated subset of `vo,mlp,qk`. The empty string is
    /// the empty set.
    pub fn parse(s: &str) -> Result<SiteSet> {
        let mut set = SiteSet::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "vo" => set.vo = true,
                "mlp" => set.mlp = true,
                "qk" => set.qk = true,
                other => return Err(Error::UnknownGaugeSite(other.to_string())),
            }
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.vo {
            out.push("vo");
        }
        if self.mlp {
            out.push("mlp");
        }
        if self.qk {
            out.push("qk");
        }
        out
    }
}

impl std::fmt::Display for SiteSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

/// Rotation of one RoPE frequency pair: the query-side block is
/// `scale * R(angle)`, the key-side block is `(1/scale) * R(angle)`.
/// The builder always samples `scale = 1` (orthogonal); the general form
/// exists because the symmetry itself only needs invertibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QkRotation {
    pub angle: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerGauge {
    /// One orthogonal gauge per KV head (empty unless `vo` is enabled).
    vo: Vec<OrthogonalMatrix>,
    /// Permutation of the intermediate coordinates (`mlp` site).
    mlp: Option<PermutationMatrix>,
    /// Per KV group, one rotation per RoPE frequency pair (`qk` site).
    qk: Option<Vec<Vec<QkRotation>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GaugeDims {
    n_layers: usize,
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
    intermediate_size: usize,
    qk_norm: bool,
}

impl GaugeDims {
    fn of(config: &ModelConfig) -> Self {
        GaugeDims {
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            n_kv_heads: config.n_kv_heads,
            head_dim: config.head_dim,
            intermediate_size: config.intermediate_size,
            qk_norm: config.qk_norm,
        }
    }

    fn q_per_kv(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    fn kv_group(&self, q_head: usize) -> usize {
        q_head / self.q_per_kv()
    }

    fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }
}

/// Per-layer symmetry data for one attack: a pure function of
/// `(seed, config, sites)`. Composition and inversion produce derived
/// specs, which carry their matrices but can no longer be serialized as
/// `(seed, sites, config hash)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeSpec {
    seed: u64,
    sites: SiteSet,
    config_fingerprint: u64,
    dims: GaugeDims,
    layers: Vec<LayerGauge>,
    seeded: bool,
}

impl GaugeSpec {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sites(&self) -> SiteSet {
        self.sites
    }

    pub fn n_layers(&self) -> usize {
        self.dims.n_layers
    }

    /// True when the spec came straight from [`build_gauge_spec`] and can
    /// be serialized as seed + metadata.
    pub fn is_seeded(&self) -> bool {
        self.seeded
    }

    fn check_compatible(&self, other: &GaugeSpec) -> Result<()> {
        if self.config_fingerprint != other.config_fingerprint || self.dims != other.dims {
            return Err(Error::SpecMismatch(
                "specs were built for different model configs".to_string(),
            ));
        }
        if self.sites != other.sites {
            return Err(Error::SpecMismatch(format!(
                "specs cover different sites ({} vs {})",
                self.sites, other.sites
            )));
        }
        Ok(())
    }
}

/// Draw the per-layer gauges for `sites` from independent RNG streams
/// keyed by `(seed, layer, site)`.
pub fn build_gauge_spec(config: &ModelConfig, seed: u64, sites: SiteSet) -> Result<GaugeSpec> {
    config.validate()?;
    let dims = GaugeDims::of(config);
    let mut layers = Vec::with_capacity(dims.n_layers);
    for layer in 0..dims.n_layers {
        let vo = if sites.vo {
            let mut rng = stream_rng(seed, layer as u64, "vo");
            (0..dims.n_kv_heads)
                .map(|_| haar_orthogonal(dims.head_dim, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let mlp = if sites.mlp {
            let mut rng = stream_rng(seed, layer as u64, "mlp");
            Some(random_permutation(dims.intermediate_size, &mut rng))
        } else {
            None
        };
        let qk = if sites.qk {
            let mut rng = stream_rng(seed, layer as u64, "qk");
            Some(
                (0..dims.n_kv_heads)
                    .map(|_| {
                        (0..dims.head_dim / 2)
                            .map(|_| QkRotation {
                                angle: rng.gen_range(0.0..std::f64::consts::TAU),
                                scale: 1.0,
                            })
                            .collect()
                    })
                    .collect(),
            )
        } else {
            None
        };
        layers.push(LayerGauge { vo, mlp, qk });
    }
    Ok(GaugeSpec {
        seed,
        sites,
        config_fingerprint: config.fingerprint(),
        dims,
        layers,
        seeded: true,
    })
}

fn expect_cols(view: &CheckpointView, name: &str, cols: usize) -> Result<()> {
    let m = view.tensor(name)?;
    if m.cols() != cols {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            expected: vec![m.rows(), cols],
            found: vec![m.rows(), m.cols()],
        });
    }
    Ok(())
}

fn expect_rows(view: &CheckpointView, name: &str, rows: usize) -> Result<()> {
    let m = view.tensor(name)?;
    if m.rows() != rows {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            expected: vec![rows, m.cols()],
            found: vec![m.rows(), m.cols()],
        });
    }
    Ok(())
}

fn vo_gauge_layer(view: &mut CheckpointView, spec: &GaugeSpec, layer: usize) -> Result<()> {
    let d = spec.dims.head_dim;
    let gauge = &spec.layers[layer];
    let v_name = Site::V.tensor_name(layer);
    let o_name = Site::O.tensor_name(layer);
    expect_cols(view, &v_name, spec.dims.kv_dim())?;
    expect_rows(view, &o_name, spec.dims.q_dim())?;

    let w_v = view.tensor_mut(&v_name)?;
    for (h, g) in gauge.vo.iter().enumerate() {
        w_v.mul_col_block(h * d, d, g.matrix());
    }
    let w_o = view.tensor_mut(&o_name)?;
    for q_head in 0..spec.dims.n_heads {
        let g = &gauge.vo[spec.dims.kv_group(q_head)];
        w_o.mul_row_block(q_head * d, d, &g.matrix().transpose());
    }
    Ok(())
}

fn mlp_permutation_layer(view: &mut CheckpointView, spec: &GaugeSpec, layer: usize) -> Result<()> {
    let p = spec.layers[layer].mlp.as_ref().expect("mlp enabled");
    for site in [Site::Gate, Site::Up] {
        let name = site.tensor_name(layer);
        expect_cols(view, &name, spec.dims.intermediate_size)?;
        let m = view.tensor_mut(&name)?;
        *m = permute_columns(m, p)?;
    }
    let down_name = Site::Down.tensor_name(layer);
    expect_rows(view, &down_name, spec.dims.intermediate_size)?;
    let m = view.tensor_mut(&down_name)?;
    *m = permute_rows_inv(m, p)?;
    Ok(())
}

fn qk_rope_gauge_layer(view: &mut CheckpointView, spec: &GaugeSpec, layer: usize) -> Result<()> {
    let d = spec.dims.head_dim;
    let rots = spec.layers[layer].qk.as_ref().expect("qk enabled");
    let q_name = Site::Q.tensor_name(layer);
    let k_name = Site::K.tensor_name(layer);
    expect_cols(view, &q_name, spec.dims.q_dim())?;
    expect_cols(view, &k_name, spec.dims.kv_dim())?;

    let w_q = view.tensor_mut(&q_name)?;
    for q_head in 0..spec.dims.n_heads {
        let block = qk_apply_q(&rots[spec.dims.kv_group(q_head)]);
        w_q.mul_col_block(q_head * d, d, &block);
    }
    let w_k = view.tensor_mut(&k_name)?;
    for (h, head_rots) in rots.iter().enumerate() {
        w_k.mul_col_block(h * d, d, &qk_apply_k(head_rots));
    }
    Ok(())
}

/// Apply the per-KV-head value/output gauge: `v_proj` head blocks pick up
/// `G_h` on the right, `o_proj` row blocks of every query head in group
/// `h` pick up `G_h^T` on the left. All other tensors are untouched.
pub fn apply_vo_gauge(view: &CheckpointView, spec: &GaugeSpec) -> Result<CheckpointView> {
    if !spec.sites.vo {
        return Err(Error::SiteNotEnabled("vo"));
    }
    let mut out = view.clone();
    for layer in 0..spec.layers.len() {
        vo_gauge_layer(&mut out, spec, layer)?;
    }
    Ok(out)
}

/// Apply the MLP permutation: `gate_proj` and `up_proj` columns are
/// permuted, `down_proj` rows get the inverse permutation. Pure data
/// movement, so the MLP output changes only by summation order.
pub fn apply_mlp_permutation(view: &CheckpointView, spec: &GaugeSpec) -> Result<CheckpointView> {
    if !spec.sites.mlp {
        return Err(Error::SiteNotEnabled("mlp"));
    }
    let mut out = view.clone();
    for layer in 0..spec.layers.len() {
        mlp_permutation_layer(&mut out, spec, layer)?;
    }
    Ok(out)
}

/// Build the `head_dim x head_dim` block-diagonal matrix whose 2x2 block
/// for pair `j` is `scale * R(angle)`, with `(scale, angle)` derived from
/// the stored rotation by `f`.
fn rotation_block(rots: &[QkRotation], f: impl Fn(&QkRotation) -> (f64, f64)) -> Matrix {
    let d = rots.len() * 2;
    let mut m = Matrix::zeros(d, d);
    for (j, rot) in rots.iter().enumerate() {
        let (scale, angle) = f(rot);
        let (sin, cos) = angle.sin_cos();
        m.set(2 * j, 2 * j, scale * cos);
        m.set(2 * j, 2 * j + 1, scale * sin);
        m.set(2 * j + 1, 2 * j, -scale * sin);
        m.set(2 * j + 1, 2 * j + 1, scale * cos);
    }
    m
}

fn qk_apply_q(rots: &[QkRotation]) -> Matrix {
    rotation_block(rots, |r| (r.scale, r.angle))
}

fn qk_apply_k(rots: &[QkRotation]) -> Matrix {
    rotation_block(rots, |r| (1.0 / r.scale, r.angle))
}

fn qk_invert_q(rots: &[QkRotation]) -> Matrix {
    rotation_block(rots, |r| (1.0 / r.scale, -r.angle))
}

fn qk_invert_k(rots: &[QkRotation]) -> Matrix {
    rotation_block(rots, |r| (r.scale, -r.angle))
}

/// Apply the Q/K rotation gauge. Every query head in KV group `h` and the
/// group's key head pick up the same per-pair rotations (the key side gets
/// the inverse transpose), which commute with RoPE and cancel in the
/// attention scores. Refused when the config declares learned Q/K
/// normalization scaling.
pub fn apply_qk_rope_gauge(view: &CheckpointView, spec: &GaugeSpec) -> Result<CheckpointView> {
    if !spec.sites.qk {
        return Err(Error::SiteNotEnabled("qk"));
    }
    if spec.dims.qk_norm {
        return Err(Error::QkNormBlocksGauge);
    }
    let mut out = view.clone();
    for layer in 0..spec.layers.len() {
        qk_rope_gauge_layer(&mut out, spec, layer)?;
    }
    Ok(out)
}

/// Apply every enabled site of the spec to one layer, in place. Each
/// layer's transform reads and writes only that layer's tensors, so
/// callers may process layers independently.
pub fn apply_gauge_layer(view: &mut CheckpointView, spec: &GaugeSpec, layer: usize) -> Result<()> {
    if layer >= spec.layers.len() {
        return Err(Error::SpecMismatch(format!(
            "layer {layer} out of range for a {}-layer spec",
            spec.layers.len()
        )));
    }
    if spec.sites.qk && spec.dims.qk_norm {
        return Err(Error::QkNormBlocksGauge);
    }
    if spec.sites.vo {
        vo_gauge_layer(view, spec, layer)?;
    }
    if spec.sites.mlp {
        mlp_permutation_layer(view, spec, layer)?;
    }
    if spec.sites.qk {
        qk_rope_gauge_layer(view, spec, layer)?;
    }
    Ok(())
}

/// Apply every enabled site of the spec. An empty site set is the
/// identity.
pub fn apply_gauge(view: &CheckpointView, spec: &GaugeSpec) -> Result<CheckpointView> {
    let mut out = view.clone();
    for layer in 0..spec.layers.len() {
        apply_gauge_layer(&mut out, spec, layer)?;
    }
    Ok(out)
}

fn adapter_layer_gauge(spec: &GaugeSpec, layer: usize, site: Site) -> Result<&LayerGauge> {
    spec.layers.get(layer).ok_or_else(|| Error::AdapterMismatch {
        layer,
        site: site.as_str().to_string(),
        reason: format!("spec covers {} layers", spec.dims.n_layers),
    })
}

fn check_adapter_block(
    layer: usize,
    site: Site,
    dim_name: &str,
    found: usize,
    expected: usize,
) -> Result<()> {
    if found != expected {
        return Err(Error::AdapterMismatch {
            layer,
            site: site.as_str().to_string(),
            reason: format!("{dim_name} is {found}, gauge expects {expected}"),
        });
    }
    Ok(())
}

/// Shared walk for pullback/pushforward: per site, exactly one factor of
/// `(A, B)` is rewritten, so rank is preserved. Sites whose gauge is not
/// enabled pass through unchanged.
fn map_adapter(
    adapter: &LoraAdapter,
    spec: &GaugeSpec,
    direction: MapDirection,
) -> Result<LoraAdapter> {
    let d = spec.dims.head_dim;
    let mut out = adapter.clone();
    for ((layer, site), pair) in &mut out.targets {
        let layer = *layer;
        let site = *site;
        match site {
            Site::V if spec.sites.vo => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                check_adapter_block(layer, site, "B cols", pair.b.cols(), spec.dims.kv_dim())?;
                for (h, g) in gauge.vo.iter().enumerate() {
                    let block = match direction {
                        MapDirection::Pullback => g.matrix().transpose(),
                        MapDirection::Pushforward => g.matrix().clone(),
                    };
                    pair.b.mul_col_block(h * d, d, &block);
                }
            }
            Site::O if spec.sites.vo => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                check_adapter_block(layer, site, "A rows", pair.a.rows(), spec.dims.q_dim())?;
                for q_head in 0..spec.dims.n_heads {
                    let g = &gauge.vo[spec.dims.kv_group(q_head)];
                    let block = match direction {
                        MapDirection::Pullback => g.matrix().clone(),
                        MapDirection::Pushforward => g.matrix().transpose(),
                    };
                    pair.a.mul_row_block(q_head * d, d, &block);
                }
            }
            Site::Gate | Site::Up if spec.sites.mlp => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                let p = gauge.mlp.as_ref().expect("mlp enabled");
                check_adapter_block(layer, site, "B cols", pair.b.cols(), p.dim())?;
                pair.b = match direction {
                    MapDirection::Pullback => permute_columns_inv(&pair.b, p)?,
                    MapDirection::Pushforward => permute_columns(&pair.b, p)?,
                };
            }
            Site::Down if spec.sites.mlp => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                let p = gauge.mlp.as_ref().expect("mlp enabled");
                check_adapter_block(layer, site, "A rows", pair.a.rows(), p.dim())?;
                pair.a = match direction {
                    MapDirection::Pullback => permute_rows(&pair.a, p)?,
                    MapDirection::Pushforward => permute_rows_inv(&pair.a, p)?,
                };
            }
            Site::Q if spec.sites.qk => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                let rots = gauge.qk.as_ref().expect("qk enabled");
                check_adapter_block(layer, site, "B cols", pair.b.cols(), spec.dims.q_dim())?;
                for q_head in 0..spec.dims.n_heads {
                    let head_rots = &rots[spec.dims.kv_group(q_head)];
                    let block = match direction {
                        MapDirection::Pullback => qk_invert_q(head_rots),
                        MapDirection::Pushforward => qk_apply_q(head_rots),
                    };
                    pair.b.mul_col_block(q_head * d, d, &block);
                }
            }
            Site::K if spec.sites.qk => {
                let gauge = adapter_layer_gauge(spec, layer, site)?;
                let rots = gauge.qk.as_ref().expect("qk enabled");
                check_adapter_block(layer, site, "B cols", pair.b.cols(), spec.dims.kv_dim())?;
                for (h, head_rots) in rots.iter().enumerate() {
                    let block = match direction {
                        MapDirection::Pullback => qk_invert_k(head_rots),
                        MapDirection::Pushforward => qk_apply_k(head_rots),
                    };
                    pair.b.mul_col_block(h * d, d, &block);
                }
            }
            _ => {} // site not covered by an enabled gauge: passthrough
        }
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum MapDirection {
    Pullback,
    Pushforward,
}

/// The adapter effectively seen on the ORIGINAL weights when `adapter` is
/// installed on the GAUGED weights: `original + pullback(C)` is
/// function-equal to `gauged + C`.
pub fn pullback_adapter(adapter: &LoraAdapter, spec: &GaugeSpec) -> Result<LoraAdapter> {
    map_adapter(adapter, spec, MapDirection::Pullback)
}

/// Exact inverse of [`pullback_adapter`]: the adapter to install on the
/// GAUGED weights so that `gauged + pushforward(C)` is function-equal to
/// `original + C`.
pub fn pushforward_adapter(adapter: &LoraAdapter, spec: &GaugeSpec) -> Result<LoraAdapter> {
    map_adapter(adapter, spec, MapDirection::Pushforward)
}

/// Spec whose application equals applying `first`, then `second`.
/// Per KV head `G = G_first * G_second`; per layer `P = P_first * P_second`;
/// per frequency pair the angles add and the scales multiply.
pub fn compose_gauges(first: &GaugeSpec, second: &GaugeSpec) -> Result<GaugeSpec> {
    first.check_compatible(second)?;
    let mut layers = Vec::with_capacity(first.layers.len());
    for (a, b) in first.layers.iter().zip(&second.layers) {
        let vo = a
            .vo
            .iter()
            .zip(&b.vo)
            .map(|(ga, gb)| ga.compose(gb))
            .collect::<Result<Vec<_>>>()?;
        let mlp = match (&a.mlp, &b.mlp) {
            (Some(pa), Some(pb)) => Some(pa.compose(pb)),
            (None, None) => None,
            _ => unreachable!("site sets already checked equal"),
        };
        let qk = match (&a.qk, &b.qk) {
            (Some(ra), Some(rb)) => Some(
                ra.iter()
                    .zip(rb)
                    .map(|(ha, hb)| {
                        ha.iter()
                            .zip(hb)
                            .map(|(x, y)| QkRotation {
                                angle: x.angle + y.angle,
                                scale: x.scale * y.scale,
                            })
                            .collect()
                    })
                    .collect(),
            ),
            (None, None) => None,
            _ => unreachable!("site sets already checked equal"),
        };
        layers.push(LayerGauge { vo, mlp, qk });
    }
    Ok(GaugeSpec {
        seed: first.seed,
        sites: first.sites,
        config_fingerprint: first.config_fingerprint,
        dims: first.dims,
        layers,
        seeded: false,
    })
}

/// Spec whose application undoes `spec`: transposed orthogonal gauges,
/// inverse permutations, negated angles, reciprocal scales.
pub fn invert_gauge(spec: &GaugeSpec) -> GaugeSpec {
    let layers = spec
        .layers
        .iter()
        .map(|layer| LayerGauge {
            vo: layer.vo.iter().map(OrthogonalMatrix::transpose).collect(),
            mlp: layer.mlp.as_ref().map(PermutationMatrix::inverse),
            qk: layer.qk.as_ref().map(|heads| {
                heads
                    .iter()
                    .map(|rots| {
                        rots.iter()
                            .map(|r| QkRotation {
                                angle: -r.angle,
                                scale: 1.0 / r.scale,
                            })
                            .collect()
                    })
                    .collect()
            }),
        })
        .collect();
    GaugeSpec {
        seed: spec.seed,
        sites: spec.sites,
        config_fingerprint: spec.config_fingerprint,
        dims: spec.dims,
        layers,
        seeded: false,
    }
}

// ---------------------------------------------------------------------------
// Serialization: seed + metadata only, matrices are regenerated
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GaugeSpecFile {
    seed: u64,
    sites: Vec<String>,
    config_hash: String,
}

/// Serialize a seed-built spec as a small JSON document (seed, enabled
/// sites, config hash). The matrices are regenerated from the seed on
/// load, never stored. Derived specs are refused.
pub fn save_gauge_spec(spec: &GaugeSpec, path: &Path) -> Result<()> {
    if !spec.seeded {
        return Err(Error::DerivedSpecNotSerializable);
    }
    let file = GaugeSpecFile {
        seed: spec.seed,
        sites: spec.sites.names().iter().map(|s| s.to_string()).collect(),
        config_hash: format!("{:016x}", spec.config_fingerprint),
    };
    let json =
        serde_json::to_string_pretty(&file).map_err(|e| Error::json("serializing gauge spec", e))?;
    fs::write(path, json + "\n")
        .map_err(|e| Error::io(format!("writing gauge spec {}", path.display()), e))
}

/// Load a gauge spec document and regenerate its matrices for `config`.
/// The stored config hash must match.
pub fn load_gauge_spec(path: &Path, config: &ModelConfig) -> Result<GaugeSpec> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading gauge spec {}", path.display()), e))?;
    let file: GaugeSpecFile = serde_json::from_str(&raw)
        .map_err(|e| Error::json(format!("parsing gauge spec {}", path.display()), e))?;
    let expected = format!("{:016x}", config.fingerprint());
    if file.config_hash != expected {
        return Err(Error::SpecMismatch(format!(
            "spec was built for config hash {}, this config hashes to {expected}",
            file.config_hash
        )));
    }
    let mut sites = SiteSet::none();
    for s in &file.sites {
        match s.as_str() {
            "vo" => sites.vo = true,
            "mlp" => sites.mlp = true,
            "qk" => sites.qk = true,
            other => return Err(Error::UnknownGaugeSite(other.to_string())),
        }
    }
    build_gauge_spec(config, file.seed, sites)
}
