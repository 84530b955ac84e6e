//! Named parameter tensors, the unit of training, aggregation and transfer.
//!
//! A [`ParamSet`] is an ordered list of [`Tensor`]s plus a 64-bit schema
//! digest over the tensor names and shapes. Two sets can be combined
//! elementwise only when their digests agree.

mod rng;
mod wire;

pub use rng::Rng;
pub use wire::{deserialize, read_fdw, serialize, write_fdw, FDW_MAGIC};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("schema mismatch: {left:#018x} vs {right:#018x}")]
    SchemaMismatch { left: u64, right: u64 },
    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ParamsError>;

/// A named, shaped block of `f32` values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let invalid = |reason: String| ParamsError::InvalidTensor {
            name: name.clone(),
            reason,
        };
        if dims.is_empty() || dims.len() > 4 {
            return Err(invalid(format!("rank {} outside 1..=4", dims.len())));
        }
        if dims.contains(&0) {
            return Err(invalid("zero-sized dimension".into()));
        }
        if name.len() > u16::MAX as usize {
            return Err(invalid("name too long".into()));
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(invalid(format!(
                "{} values for dims {:?} (expected {expected})",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { name, dims, values })
    }

    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(name, dims, vec![0.0; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of tensors with a cached schema digest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
    schema_hash: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self {
            tensors: Vec::new(),
            schema_hash: schema_hash_of(&[]),
        }
    }
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|o| o.name == t.name) {
                return Err(ParamsError::DuplicateName(t.name.clone()));
            }
        }
        let schema_hash = schema_hash_of(&tensors);
        Ok(Self { tensors, schema_hash })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// All values concatenated in tensor order.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in &self.tensors {
            out.extend_from_slice(&t.values);
        }
        out
    }

    /// Builds a set with this schema and new flat values.
    pub fn with_flat(&self, flat: &[f32]) -> Result<Self> {
        if flat.len() != self.num_values() {
            return Err(ParamsError::InvalidTensor {
                name: "<flat>".into(),
                reason: format!("{} values, schema holds {}", flat.len(), self.num_values()),
            });
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n = t.len();
            tensors.push(Tensor::new(
                t.name.clone(),
                t.dims.clone(),
                flat[offset..offset + n].to_vec(),
            )?);
            offset += n;
        }
        Ok(Self {
            tensors,
            schema_hash: self.schema_hash,
        })
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.schema_hash != other.schema_hash {
            return Err(ParamsError::SchemaMismatch {
                left: self.schema_hash,
                right: other.schema_hash,
            });
        }
        Ok(())
    }
}

/// Same schema, every value `0.0`.
pub fn zeros_like(p: &ParamSet) -> ParamSet {
    ParamSet {
        tensors: p
            .tensors
            .iter()
            .map(|t| Tensor {
                name: t.name.clone(),
                dims: t.dims.clone(),
                values: vec![0.0; t.values.len()],
            })
            .collect(),
        schema_hash: p.schema_hash,
    }
}

/// `alpha * x + y`, evaluated per element in `f64` and rounded once.
pub fn axpy(alpha: f64, x: &ParamSet, y: &ParamSet) -> Result<ParamSet> {
    x.check_compatible(y)?;
    let tensors = x
        .tensors
        .iter()
        .zip(&y.tensors)
        .map(|(tx, ty)| {
            let values = tx
                .values
                .iter()
                .zip(&ty.values)
                .map(|(&a, &b)| (alpha * a as f64 + b as f64) as f32)
                .collect::<Vec<_>>();
            Tensor::new(ty.name.clone(), ty.dims.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSet {
        tensors,
        schema_hash: y.schema_hash,
    })
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// FNV-1a over, per tensor in order: name bytes, rank as one byte, and each
/// dim as a little-endian `u32`.
fn schema_hash_of(tensors: &[Tensor]) -> u64 {
    tensors.iter().fold(FNV_OFFSET, |mut h, t| {
        h = fnv1a(h, t.name.as_bytes());
        h = fnv1a(h, &[t.dims.len() as u8]);
        for &d in &t.dims {
            h = fnv1a(h, &(d as u32).to_le_bytes());
        }
        h
    })
}


#[cfg(test)]
mod tests {
    use super::testing::arb_paramset;
    use super::*;
    use proptest::prelude::*;

    fn vector(values: &[f32]) -> ParamSet {
        ParamSet::new(vec![Tensor::new("v", vec![values.len()], values.to_vec()).unwrap()]).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new("a", vec![], vec![]).is_err());
        assert!(Tensor::new("a", vec![2, 0], vec![]).is_err());
        assert!(Tensor::new("a", vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new("a", vec![3], vec![0.0; 2]).is_err());
        assert!(Tensor::new("a", vec![1], vec![f32::NAN]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::zeros("w", vec![1]).unwrap();
        assert_eq!(
            ParamSet::new(vec![t.clone(), t]),
            Err(ParamsError::DuplicateName("w".into()))
        );
    }

    #[test]
    fn zeros_like_examples() {
        let z = zeros_like(&vector(&[1.0, 2.0]));
        assert_eq!(z.to_flat(), vec![0.0, 0.0]);
        assert_eq!(zeros_like(&ParamSet::default()), ParamSet::default());
    }

    #[test]
    fn axpy_examples() {
        let x = vector(&[1.0, 2.0]);
        let y = vector(&[3.0, 4.0]);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        assert_eq!(axpy(1.0, &x, &zeros_like(&x)).unwrap(), x);
        assert_eq!(axpy(2.0, &x, &y).unwrap().to_flat(), vec![5.0, 8.0]);
    }

    #[test]
    fn axpy_schema_mismatch() {
        let x = vector(&[1.0, 2.0]);
        let y = vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(axpy(1.0, &x, &y), Err(ParamsError::SchemaMismatch { .. })));
    }

    #[test]
    fn schema_hash_depends_on_names_and_dims_only() {
        let a = ParamSet::new(vec![Tensor::new("w", vec![2, 3], vec![1.0; 6]).unwrap()]).unwrap();
        let b = ParamSet::new(vec![Tensor::new("w", vec![2, 3], vec![7.0; 6]).unwrap()]).unwrap();
        let c = ParamSet::new(vec![Tensor::new("w", vec![3, 2], vec![1.0; 6]).unwrap()]).unwrap();
        let d = ParamSet::new(vec![Tensor::new("u", vec![2, 3], vec![1.0; 6]).unwrap()]).unwrap();
        assert_eq!(a.schema_hash(), b.schema_hash());
        assert_ne!(a.schema_hash(), c.schema_hash());
        assert_ne!(a.schema_hash(), d.schema_hash());
    }

    #[test]
    fn flat_round_trip() {
        let p = vector(&[1.0, -2.0, 3.5]);
        assert_eq!(p.with_flat(&p.to_flat()).unwrap(), p);
        assert!(p.with_flat(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn zeros_like_preserves_schema(p in arb_paramset()) {
            let z = zeros_like(&p);
            prop_assert_eq!(z.schema_hash(), p.schema_hash());
            prop_assert!(z.to_flat().iter().all(|&v| v == 0.0));
        }

        #[test]
        fn axpy_is_linear(p in arb_paramset(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let zero = zeros_like(&p);
            let lhs = axpy(a, &p, &axpy(b, &p, &zero).unwrap()).unwrap();
            let rhs = axpy(a + b, &p, &zero).unwrap();
            for (l, r) in lhs.to_flat().iter().zip(rhs.to_flat()) {
                prop_assert!((l - r).abs() <= 1e-6);
            }
        }
    }
}
