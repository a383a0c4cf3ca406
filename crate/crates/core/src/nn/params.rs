use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// First line of a checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "oodgat-checkpoint v1";

/// Ordered named parameter tensors.
///
/// Checkpoint text format:
///
/// ```text
/// oodgat-checkpoint v1
/// <count>
/// <name> <rows> <cols>
/// <rows*cols values, space separated, row-major>
/// ...
/// ```
///
/// Values are written in shortest round-trip form, so loading restores
/// every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|v| tape.param(v.clone())).collect();
        BoundParams {
            names: self.names.clone(),
            vars,
        }
    }

    /// Records every tensor as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .values
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        BoundParams {
            names: self.names.clone(),
            vars,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", self.len());
        for (name, m) in self.iter() {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            let line: Vec<String> = m.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("missing header {CHECKPOINT_MAGIC:?}")));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing tensor count".into()))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.next().ok_or_else(|| bad("truncated file".into()))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(format!("bad tensor header {head:?}")));
            };
            let rows: usize = rows
                .parse()
                .map_err(|_| bad(format!("bad rows in {head:?}")))?;
            let cols: usize = cols
                .parse()
                .map_err(|_| bad(format!("bad cols in {head:?}")))?;
            let body = lines
                .next()
                .ok_or_else(|| bad(format!("missing values for {name}")))?;
            let data = body
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("bad value {v:?} in {name}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if data.len() != rows * cols {
                return Err(bad(format!(
                    "{name}: expected {} values, found {}",
                    rows * cols,
                    data.len()
                )));
            }
            if store.get(name).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            store.push(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Parameters recorded on one tape, addressable by name.
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    /// Names `vars` (already recorded on a tape) in the store's order.
    pub fn new(names: &[String], vars: &[Var]) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::Config(format!(
                "{} names for {} variables",
                names.len(),
                vars.len()
            )));
        }
        Ok(BoundParams {
            names: names.to_vec(),
            vars: vars.to_vec(),
        })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("parameter {name} missing for this model")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
