use std::io::{Read, Write};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACLS";
const VERSION: u16 = 1;

/// Named, ordered tensors. Names are unique; order is insertion order and
/// is what flattening and serialization follow.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Duplicate(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::Missing(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Missing(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), reusing this set's layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.numel() {
            return Err(Error::shape(
                "unflatten",
                format!("expected {} values, got {}", self.numel(), flat.len()),
            ));
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let data = flat[offset..offset + t.len()].to_vec();
                offset += t.len();
                Tensor::new(t.shape().to_vec(), data).map(|t| (n.clone(), t))
            })
            .collect::<Result<_>>()?;
        Ok(ParamSet { entries })
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Put every tensor on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        Bound {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_container(&mut buf, self).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        read_container(&mut &bytes[..])
    }

    /// Exact serialized size in bytes.
    pub fn serialized_len(&self) -> usize {
        10 + self
            .entries
            .iter()
            .map(|(n, t)| 2 + n.len() + 1 + 4 * t.rank() + 8 * t.len())
            .sum::<usize>()
    }
}

/// Tape handles for a bound [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Missing(name.to_string()))
    }

    /// Collect gradients into a set shaped like the bound parameters.
    pub fn grads(&self, grads: &Gradients) -> ParamSet {
        ParamSet {
            entries: self
                .names
                .iter()
                .cloned()
                .zip(self.vars.iter().map(|&v| grads.wrt(v)))
                .collect(),
        }
    }
}

/// Serialize: magic `ACLS`, version u16, count u32, then per entry the
/// name (u16 length + UTF-8), rank u8, dims as u32, and the payload as
/// little-endian f64. All integers are little-endian.
pub fn write_container<W: Write>(w: &mut W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Invalid(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(8 * t.len());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_container<R: Read>(r: &mut R) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected ACLS"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let at = c.pos;
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(at + 2, "name is not UTF-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload_at = c.pos;
        let raw = c.take(8 * n, "payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(payload_at, e.to_string()))?;
        params
            .insert(name, t)
            .map_err(|e| Error::format(at, e.to_string()))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, "trailing bytes"));
    }
    Ok(params)
}
