//! Bit-exact reader/writer for the single-file safetensors container.
//!
//! Layout: 8-byte little-endian unsigned header length, UTF-8 JSON header
//! mapping tensor name to `{dtype, shape, data_offsets}`, then contiguous
//! raw little-endian tensor data. Offsets are relative to the end of the
//! header. An optional `__metadata__` entry carries a string-to-string map.
//!
//! Storage values are widened to `f64` on read and narrowed back with
//! round-to-nearest-even on write. Narrow-then-widen is the identity on
//! every representable value, so an untouched load/save round-trip is
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};

/// Storage precision of a tensor in the container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F16,
    Bf16,
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F16 => "F16",
            Dtype::Bf16 => "BF16",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::Bf16),
            "F32" => Some(Dtype::F32),
            "F64" => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Dtype::F16 | Dtype::Bf16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// One tensor: storage dtype, container shape, and values widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parsed container: tensors keyed by name (sorted), plus header metadata.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub tensors: BTreeMap<String, TensorData>,
    pub metadata: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// f16 / bf16 conversion
// ---------------------------------------------------------------------------

/// Widen an IEEE half bit pattern to f64. Exact for all finite values.
pub fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1F) as i32;
    let mant = (bits & 0x3FF) as f64;
    match exp {
        0 => sign * mant * (-24f64).exp2(),
        0x1F => {
            if mant == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1.0 + mant / 1024.0) * f64::from(exp - 15).exp2(),
    }
}

/// Widen a bfloat16 bit pattern to f64. Exact for all finite values.
pub fn bf16_bits_to_f64(bits: u16) -> f64 {
    f64::from(f32::from_bits(u32::from(bits) << 16))
}

/// Round a finite f64 to a binary float with `exp_bits` exponent bits and
/// `mant_bits` stored mantissa bits (round-to-nearest-even, subnormals
/// included). Returns `None` when the magnitude overflows the target's
/// finite range.
fn round_to_minifloat(v: f64, exp_bits: u32, mant_bits: u32) -> Option<u64> {
    debug_assert!(v.is_finite());
    let bits = v.to_bits();
    let sign = bits >> 63;
    let out_sign = sign << (exp_bits + mant_bits);

    let biased64 = ((bits >> 52) & 0x7FF) as i64;
    let mant52 = bits & ((1u64 << 52) - 1);
    // Zero, and f64 subnormals: far below half of any target's smallest
    // subnormal, so they round to signed zero.
    if biased64 == 0 {
        return Some(out_sign);
    }

    let bias_t = (1i64 << (exp_bits - 1)) - 1;
    let e = biased64 - 1023;
    let e_min_normal = 1 - bias_t;
    let e_max = bias_t;

    let full = (1u64 << 52) | mant52;
    let mut shift = u64::from(52 - mant_bits);
    let subnormal_target = e < e_min_normal;
    if subnormal_target {
        shift += (e_min_normal - e) as u64;
    }
    if shift > 63 {
        return Some(out_sign);
    }
    let shift = shift as u32;
    let keep = full >> shift;
    let rem = full & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    let round_up = rem > half || (rem == half && keep & 1 == 1);
    let rounded = keep + u64::from(round_up);

    if subnormal_target {
        // May round up into the smallest normal; the bit layout handles it:
        // rounded == 2^mant_bits encodes biased exponent 1, mantissa 0.
        return Some(out_sign | rounded);
    }

    let mut exp = e;
    let mut r = rounded;
    if r >= (1u64 << (mant_bits + 1)) {
        r >>= 1;
        exp += 1;
    }
    if exp > e_max {
        return None;
    }
    let biased = (exp + bias_t) as u64;
    Some(out_sign | (biased << mant_bits) | (r - (1u64 << mant_bits)))
}

/// Narrow f64 to an IEEE half bit pattern (RNE); `None` on overflow.
pub fn f64_to_f16_bits(v: f64) -> Option<u16> {
    round_to_minifloat(v, 5, 10).map(|b| b as u16)
}

/// Narrow f64 to a bfloat16 bit pattern (RNE); `None` on overflow.
pub fn f64_to_bf16_bits(v: f64) -> Option<u16> {
    round_to_minifloat(v, 8, 7).map(|b| b as u16)
}

/// Narrow f64 to an f32 bit pattern (RNE); `None` on overflow.
pub fn f64_to_f32_bits(v: f64) -> Option<u32> {
    round_to_minifloat(v, 8, 23).map(|b| b as u32)
}

/// Narrow a value to `dtype` and widen it back: the value the container
/// would hold after a save/load round trip.
pub fn storage_roundtrip(v: f64, dtype: Dtype) -> Option<f64> {
    match dtype {
        Dtype::F16 => f64_to_f16_bits(v).map(f16_bits_to_f64),
        Dtype::Bf16 => f64_to_bf16_bits(v).map(bf16_bits_to_f64),
        Dtype::F32 => f64_to_f32_bits(v).map(|b| f64::from(f32::from_bits(b))),
        Dtype::F64 => Some(v),
    }
}

// ---------------------------------------------------------------------------
// Container read / write
// ---------------------------------------------------------------------------

fn malformed(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::MalformedHeader(format!("{}: {msg}", path.display()))
}

/// Read a safetensors container, widening every tensor to f64.
/// Rejects unsupported dtypes and non-finite stored values.
pub fn read_container(path: &Path) -> Result<Container> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.len() < 8 {
        return Err(malformed(path, "file too small to contain a header length"));
    }
    let header_len = u64::from_le_bytes(raw[..8].try_into().unwrap());
    let header_end = 8usize
        .checked_add(usize::try_from(header_len).map_err(|_| malformed(path, "header length overflows"))?)
        .ok_or_else(|| malformed(path, "header length overflows"))?;
    if raw.len() < header_end {
        return Err(malformed(path, "truncated header"));
    }
    let header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&raw[8..header_end])
            .map_err(|e| malformed(path, format!("header is not valid JSON: {e}")))?;
    let data = &raw[header_end..];

    let mut out = Container::default();
    for (name, value) in header {
        if name == "__metadata__" {
            let map = value
                .as_object()
                .ok_or_else(|| malformed(path, "__metadata__ is not an object"))?;
            for (k, v) in map {
                let s = v
                    .as_str()
                    .ok_or_else(|| malformed(path, format!("metadata value {k} is not a string")))?;
                out.metadata.insert(k.clone(), s.to_string());
            }
            continue;
        }
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(path, format!("tensor {name} entry is not an object")))?;
        let dtype_str = obj
            .get("dtype")
            .and_then(|v| v.as_str())
            .ok_or_else(|| malformed(path, format!("tensor {name} missing dtype")))?;
        let dtype = Dtype::parse(dtype_str).ok_or_else(|| Error::UnsupportedDtype {
            tensor: name.clone(),
            dtype: dtype_str.to_string(),
        })?;
        let shape: Vec<usize> = obj
            .get("shape")
            .and_then(|v| v.as_array())
            .ok_or_else(|| malformed(path, format!("tensor {name} missing shape")))?
            .iter()
            .map(|v| v.as_u64().map(|u| u as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| malformed(path, format!("tensor {name} has a non-integer shape")))?;
        let offsets = obj
            .get("data_offsets")
            .and_then(|v| v.as_array())
            .ok_or_else(|| malformed(path, format!("tensor {name} missing data_offsets")))?;
        if offsets.len() != 2 {
            return Err(malformed(path, format!("tensor {name} data_offsets length")));
        }
        let start = offsets[0].as_u64().map(|u| u as usize);
        let end = offsets[1].as_u64().map(|u| u as usize);
        let (start, end) = match (start, end) {
            (Some(s), Some(e)) if s <= e && e <= data.len() => (s, e),
            _ => {
                return Err(malformed(
                    path,
                    format!("tensor {name} data_offsets out of bounds"),
                ))
            }
        };
        let numel: usize = shape.iter().product();
        if end - start != numel * dtype.byte_size() {
            return Err(malformed(
                path,
                format!("tensor {name} byte length does not match shape and dtype"),
            ));
        }
        let bytes = &data[start..end];
        let values = widen_bytes(bytes, dtype);
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("tensor {name} in {}", path.display()),
            });
        }
        out.tensors.insert(name, TensorData { dtype, shape, values });
    }
    Ok(out)
}

fn widen_bytes(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16_bits_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        Dtype::Bf16 => bytes
            .chunks_exact(2)
            .map(|c| bf16_bits_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_bits(u32::from_le_bytes(c.try_into().unwrap()))))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

fn narrow_values(name: &str, t: &TensorData, out: &mut Vec<u8>) -> Result<()> {
    let overflow = |v: f64| Error::NarrowingOverflow {
        tensor: name.to_string(),
        value: v,
        dtype: t.dtype.name(),
    };
    match t.dtype {
        Dtype::F16 => {
            for &v in &t.values {
                let b = f64_to_f16_bits(v).ok_or_else(|| overflow(v))?;
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        Dtype::Bf16 => {
            for &v in &t.values {
                let b = f64_to_bf16_bits(v).ok_or_else(|| overflow(v))?;
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in &t.values {
                let b = f64_to_f32_bits(v).ok_or_else(|| overflow(v))?;
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in &t.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
    }
    Ok(())
}

/// Serialize a container to bytes: tensors laid out in sorted-name order,
/// header padded with spaces to a multiple of 8. Deterministic: the same
/// container always produces the same bytes.
pub fn container_to_bytes(container: &Container) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    if !container.metadata.is_empty() {
        let meta: serde_json::Map<String, serde_json::Value> = container
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        header.insert("__metadata__".to_string(), serde_json::Value::Object(meta));
    }

    let mut payload = Vec::new();
    for (name, t) in &container.tensors {
        if t.values.len() != t.numel() {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                expected: t.shape.clone(),
                found: vec![t.values.len()],
            });
        }
        let start = payload.len();
        narrow_values(name, t, &mut payload)?;
        header.insert(
            name.clone(),
            json!({
                "dtype": t.dtype.name(),
                "shape": t.shape,
                "data_offsets": [start, payload.len()],
            }),
        );
    }

    let mut header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))
        .map_err(|e| Error::json("serializing container header", e))?;
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }

    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Write a container to disk. See [`container_to_bytes`].
pub fn write_container(path: &Path, container: &Container) -> Result<()> {
    let bytes = container_to_bytes(container)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f16_widen_narrow_identity_exhaustive() {
        for bits in 0u16..=u16::MAX {
            let v = f16_bits_to_f64(bits);
            if !v.is_finite() {
                continue;
            }
            let back = f64_to_f16_bits(v).unwrap();
            assert_eq!(back, bits, "f16 bits {bits:#06x} -> {v} -> {back:#06x}");
        }
    }

    #[test]
    fn bf16_widen_narrow_identity_exhaustive() {
        for bits in 0u16..=u16::MAX {
            let v = bf16_bits_to_f64(bits);
            if !v.is_finite() {
                continue;
            }
            let back = f64_to_bf16_bits(v).unwrap();
            assert_eq!(back, bits, "bf16 bits {bits:#06x} -> {v} -> {back:#06x}");
        }
    }

    #[test]
    fn f16_subnormal_and_zero_edges() {
        assert_eq!(f64_to_f16_bits(0.0).unwrap(), 0x0000);
        assert_eq!(f64_to_f16_bits(-0.0).unwrap(), 0x8000);
        // smallest f16 subnormal is 2^-24
        let min_sub = (-24f64).exp2();
        assert_eq!(f64_to_f16_bits(min_sub).unwrap(), 0x0001);
        // exactly half of it rounds to even (zero)
        assert_eq!(f64_to_f16_bits(min_sub / 2.0).unwrap(), 0x0000);
        // just above half rounds up
        assert_eq!(f64_to_f16_bits(min_sub * 0.5000001).unwrap(), 0x0001);
        // 1.5 * min_sub is a tie between 1 and 2; RNE picks 2
        assert_eq!(f64_to_f16_bits(min_sub * 1.5).unwrap(), 0x0002);
        // largest finite f16 is 65504; halfway to the next step overflows
        assert_eq!(f64_to_f16_bits(65504.0).unwrap(), 0x7BFF);
        assert!(f64_to_f16_bits(65520.0).is_none());
        assert_eq!(f64_to_f16_bits(65519.9).unwrap(), 0x7BFF);
    }

    #[test]
    fn mantissa_carry_promotes_exponent() {
        // 1.9999999... in f16: 1 + 1023.9/1024 rounds up to 2.0
        let just_under_two = 2.0 - (-12f64).exp2();
        assert_eq!(f64_to_f16_bits(just_under_two).unwrap(), 0x4000); // 2.0
        // subnormal rounding up into the smallest normal
        let min_normal = (-14f64).exp2();
        let just_under = min_normal - (-40f64).exp2();
        assert_eq!(f64_to_f16_bits(just_under).unwrap(), 0x0400); // min normal
    }

    proptest! {
        #[test]
        fn prop_f32_narrow_matches_as_cast(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assume!(v.is_finite());
            match f64_to_f32_bits(v) {
                Some(bits) => prop_assert_eq!(bits, (v as f32).to_bits()),
                None => prop_assert!(!(v as f32).is_finite()),
            }
        }

        #[test]
        fn prop_f32_roundtrip_near_unity(mag in -6.0f64..6.0, frac in 0u64..(1u64<<52)) {
            let v = f64::from_bits(((mag + 1023.0) as u64) << 52 | frac);
            prop_assume!(v.is_finite());
            prop_assert_eq!(f64_to_f32_bits(v).unwrap(), (v as f32).to_bits());
        }
    }

    fn toy_container() -> Container {
        let mut c = Container::default();
        c.tensors.insert(
            "b.weight".to_string(),
            TensorData {
                dtype: Dtype::Bf16,
                shape: vec![2, 3],
                values: vec![0.5, -1.25, 3.0, 0.0, -0.0, 42.0],
            },
        );
        c.tensors.insert(
            "a.weight".to_string(),
            TensorData {
                dtype: Dtype::F32,
                shape: vec![4],
                values: vec![1.0, 2.5, -3.75, 1e-3],
            },
        );
        c.metadata.insert("alpha".to_string(), "8".to_string());
        c
    }

    #[test]
    fn container_roundtrip_bytes_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.safetensors");
        let c = toy_container();
        write_container(&path, &c).unwrap();
        let first = std::fs::read(&path).unwrap();

        let loaded = read_container(&path).unwrap();
        assert_eq!(loaded.metadata.get("alpha").map(String::as_str), Some("8"));
        assert_eq!(loaded.tensors.len(), 2);

        let path2 = dir.path().join("toy2.safetensors");
        write_container(&path2, &loaded).unwrap();
        let second = std::fs::read(&path2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn header_is_eight_byte_aligned_and_tensors_sorted() {
        let bytes = container_to_bytes(&toy_container()).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(header_len % 8, 0);
        let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
        let a = header.find("a.weight").unwrap();
        let b = header.find("b.weight").unwrap();
        assert!(a < b);
    }

    #[test]
    fn truncated_header_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(
            read_container(&path),
            Err(Error::MalformedHeader(_))
        ));

        // header length pointing past end of file
        let mut bytes = 9999u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn bad_json_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        let body = b"{not json";
        let mut bytes = (body.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(body);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn unsupported_dtype_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        let body = br#"{"t":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}}"#;
        let mut bytes = (body.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(body);
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path),
            Err(Error::UnsupportedDtype { .. })
        ));
    }

    #[test]
    fn offsets_out_of_bounds_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        let body = br#"{"t":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}"#;
        let mut bytes = (body.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(body);
        bytes.extend_from_slice(&[0u8; 4]); // only 4 bytes of data, not 16
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_stored_value_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        let body = br#"{"t":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}}"#;
        let mut bytes = (body.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(body);
        bytes.extend_from_slice(&f32::INFINITY.to_bits().to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn narrowing_overflow_is_error() {
        let mut c = Container::default();
        c.tensors.insert(
            "t".to_string(),
            TensorData {
                dtype: Dtype::F16,
                shape: vec![1],
                values: vec![1e6],
            },
        );
        assert!(matches!(
            container_to_bytes(&c),
            Err(Error::NarrowingOverflow { .. })
        ));
    }
}
