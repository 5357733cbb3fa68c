//! Named-tensor checkpoint container.
//!
//! ```text
//! "RTCK" | u32 version | u32 meta_len | meta (UTF-8 JSON) | u32 n_tensors
//! per tensor: u16 name_len | name | u8 dtype | u8 ndim | u32 dims[ndim] | payload
//! ```
//!
//! All integers and payloads are little endian; dtype 0 is f32, 1 is f64.

use super::{CompactCnn, ModelConfig, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTCK";
pub const VERSION: u32 = 1;
const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: String,
    pub tensors: Vec<Tensor>,
}

pub fn encode(container: &Container, dtype: DType) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(container.metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(container.metadata.as_bytes());
    out.extend_from_slice(&(container.tensors.len() as u32).to_le_bytes());
    for t in &container.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(dtype.code());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let err = |msg: String| Error::format("checkpoint", msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(err("missing RTCK magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let metadata = std::str::from_utf8(r.take(meta_len)?).map_err(|e| err(e.to_string()))?.to_string();
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| err(e.to_string()))?.to_string();
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::F64,
            c => return Err(err(format!("tensor {name}: unknown dtype {c}"))),
        };
        let ndim = r.u8()? as usize;
        if ndim > MAX_DIMS {
            return Err(err(format!("tensor {name}: {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let elems = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)))
            .ok_or_else(|| err(format!("tensor {name}: shape overflow")))?;
        let payload = r.take(elems.1)?;
        let data: Vec<f64> = match dtype {
            DType::F32 => payload.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4")))).collect(),
            DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("tensor {name}: non-finite value")));
        }
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Container { metadata, tensors })
}

impl CompactCnn {
    /// Parameters followed by normalization buffers.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let k = self.config.in_planes;
        let mut out = self.params.clone();
        out.push(Tensor { name: "input.mean".into(), shape: vec![k], data: self.input_mean.clone() });
        out.push(Tensor { name: "input.std".into(), shape: vec![k], data: self.input_std.clone() });
        out.push(Tensor { name: "distance.norm".into(), shape: vec![2], data: vec![self.distance_mean, self.distance_std] });
        out
    }

    pub fn from_tensors(config: ModelConfig, tensors: &[Tensor]) -> Result<Self> {
        let mut model = CompactCnn::new(config, 0)?;
        let expected = model.to_tensors();
        if tensors.len() != expected.len() {
            return Err(Error::Mismatch(format!("{} tensors, expected {}", tensors.len(), expected.len())));
        }
        let find = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Mismatch(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.data.clone())
        };
        for p in model.params.iter_mut() {
            p.data = find(&p.name, &p.shape)?;
        }
        let k = model.config.in_planes;
        let (mean, std) = (find("input.mean", &[k])?, find("input.std", &[k])?);
        model.set_input_normalization(mean, std)?;
        let d = find("distance.norm", &[2])?;
        model.set_distance_normalization(d[0], d[1])?;
        Ok(model)
    }
}
