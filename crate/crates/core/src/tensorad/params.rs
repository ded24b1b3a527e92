use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Tape, Tensor, TensorError, Var};
use crate::Scalar;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "tongue-checkpoint v1";

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters placed on one tape as gradient-tracked leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles already on a tape, in registry order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(TensorError::Checkpoint(format!("bad parameter name {name:?}")));
        }
        if self.names.contains(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.variable(v.clone())).collect(),
        }
    }

    /// Parameters as constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// Same layout (names and shapes) as `other`.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// A parameter store together with the seed that produced it and free-form
/// metadata (configuration, epoch, scores).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub meta: Option<serde_json::Value>,
    pub params: ParamStore<T>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(seed: u64, meta: Option<serde_json::Value>, params: ParamStore<T>) -> Self {
        Self { seed, meta, params }
    }

    /// Text header followed by little-endian `f64` blocks, one per parameter.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "seed {}", self.seed)?;
        match &self.meta {
            Some(m) => writeln!(w, "meta {}", serde_json::to_string(m).map_err(|e| bad(e.to_string()))?)?,
            None => writeln!(w, "meta null")?,
        }
        writeln!(w, "params {}", self.params.len())?;
        for (name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "{name} {}", dims.join("x"))?;
        }
        writeln!(w, "end")?;
        for (_, t) in self.params.iter() {
            for v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, TensorError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<R>| -> Result<String, TensorError> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != CHECKPOINT_MAGIC {
            return Err(bad("missing magic line"));
        }
        let seed = next_line(&mut r)?
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad seed line"))?;
        let meta_line = next_line(&mut r)?;
        let meta_json = meta_line.strip_prefix("meta ").ok_or_else(|| bad("bad meta line"))?;
        let meta: serde_json::Value = serde_json::from_str(meta_json).map_err(|e| bad(e.to_string()))?;
        let meta = (!meta.is_null()).then_some(meta);
        let count: usize = next_line(&mut r)?
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad params line"))?;
        let mut layout = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(&mut r)?;
            let (name, dims) = l.split_once(' ').ok_or_else(|| bad(format!("bad entry {l:?}")))?;
            let shape = if dims.is_empty() {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape {dims:?}"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            layout.push((name.to_string(), shape));
        }
        if next_line(&mut r)? != "end" {
            return Err(bad("missing end line"));
        }
        let mut params = ParamStore::new();
        let mut buf = [0u8; 8];
        for (name, shape) in layout {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|_| bad(format!("truncated data for {name}")))?;
                data.push(T::of(f64::from_le_bytes(buf)));
            }
            params.add(name, Tensor::new(&shape, data)?)?;
        }
        if r.read(&mut buf)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { seed, meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
