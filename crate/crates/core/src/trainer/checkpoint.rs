//! Plain-text checkpoints.
//!
//! ```text
//! HAGAN-CKPT v1
//! config <json>
//! model <json>
//! param <name> <rows>x<cols>
//! <one line of values per row>
//! opt <name> <rows>x<cols>
//! <one line of values per row>
//! end
//! ```
//!
//! Vectors are written as `<n>x1`. Values use 17 significant digits, so a
//! save and load round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{Hagan, ModelSpec};
use crate::tensor::Tensor;

use super::{OptimizerState, TrainConfig};

const MAGIC: &str = "HAGAN-CKPT v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Hagan,
    pub optimizer: OptimizerState,
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        [n] => (*n, 1),
        _ => (1, t.len()),
    }
}

fn write_block(out: &mut String, kind: &str, name: &str, t: &Tensor) {
    let (rows, cols) = rows_cols(t);
    let _ = writeln!(out, "{kind} {name} {rows}x{cols}");
    for row in t.data().chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn write_checkpoint(model: &Hagan, config: &TrainConfig, optimizer: &OptimizerState) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "config {}", serde_json::to_string(config).expect("config serializes"));
    let _ = writeln!(out, "model {}", serde_json::to_string(&model.spec).expect("spec serializes"));
    let store = &model.store;
    for id in store.ids() {
        write_block(&mut out, "param", store.name(id), store.value(id));
    }
    for (id, avg) in optimizer.iter() {
        write_block(&mut out, "opt", store.name(id), avg);
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &Hagan,
    config: &TrainConfig,
    optimizer: &OptimizerState,
) -> Result<()> {
    std::fs::write(path, write_checkpoint(model, config, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.error("unexpected end of checkpoint")),
        }
    }

    fn error(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            detail: detail.into(),
        }
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, key: &str) -> Result<T> {
        let l = self.next()?;
        let body = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key}` line")))?;
        serde_json::from_str(body).map_err(|e| self.error(format!("bad {key}: {e}")))
    }

    fn values(&mut self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.next()?;
            let before = data.len();
            for tok in l.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| self.error(format!("bad number `{tok}`")))?);
            }
            if data.len() - before != cols {
                return Err(self.error(format!("expected {cols} values, found {}", data.len() - before)));
            }
        }
        Ok(data)
    }
}

fn parse_header<'a>(lines: &Lines<'_>, l: &'a str) -> Result<(&'a str, &'a str, usize, usize)> {
    let parts: Vec<&str> = l.split(' ').collect();
    let [kind, name, dims] = parts[..] else {
        return Err(lines.error(format!("malformed block header `{l}`")));
    };
    let (r, c) = dims
        .split_once('x')
        .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
        .ok_or_else(|| lines.error(format!("malformed dimensions `{dims}`")))?;
    Ok((kind, name, r, c))
}

pub fn read_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.error("not a checkpoint file"));
    }
    let config: TrainConfig = lines.json("config")?;
    let spec: ModelSpec = lines.json("model")?;
    let mut model = Hagan::new(spec, 0)?;
    let mut optimizer = OptimizerState::new();
    let mut loaded = vec![false; model.store.len()];
    loop {
        let l = lines.next()?;
        if l == "end" {
            break;
        }
        let (kind, name, rows, cols) = parse_header(&lines, l)?;
        let store: &ParamStore = &model.store;
        let id = store
            .find(name)
            .ok_or_else(|| lines.error(format!("unknown parameter `{name}`")))?;
        let expected = rows_cols(store.value(id));
        if expected != (rows, cols) {
            return Err(lines.error(format!(
                "`{name}` is {rows}x{cols}, model expects {}x{}",
                expected.0, expected.1
            )));
        }
        let shape = store.value(id).shape().to_vec();
        let data = lines.values(rows, cols)?;
        match kind {
            "param" => {
                model.store.set_values(id, &data)?;
                loaded[id.index()] = true;
            }
            "opt" => optimizer.set(id, Tensor::new(shape, data)?),
            other => return Err(lines.error(format!("unknown block kind `{other}`"))),
        }
    }
    if let Some(i) = loaded.iter().position(|l| !l) {
        let id = model.store.ids().nth(i).expect("index in range");
        return Err(lines.error(format!("missing parameter `{}`", model.store.name(id))));
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
    })
}
