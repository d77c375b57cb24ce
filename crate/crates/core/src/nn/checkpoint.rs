//! Plain-text checkpoint format.
//!
//! ```text
//! slingq-checkpoint 1
//! scalar f32
//! step 1200
//! meta agent.gamma 0.99
//! layers 3
//! layer conv kernel=8x8 stride=4x4 padding=0x0 in=3 out=32
//! layer relu
//! layer flatten
//! optimizer adam beta1=0.9 beta2=0.999 eps=0.00000001 step=300
//! tensor online 0 0 8,8,3,32
//! 0.0123 -0.0456 ...            (row-major, 8 values per line)
//! tensor online 0 1 32
//! ...
//! end
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same bits, so a save/load cycle is exact. Weight sets are named
//! (`online`, `target`, ...); optimizer moments use the set names
//! `optimizer.m` and `optimizer.v`.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{LayerSpec, NetworkWeights, OptimizerKind, OptimizerState, Scalar, Tensor};

const MAGIC: &str = "slingq-checkpoint 1";
const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    /// Free-form ordered header entries; keys are single words.
    pub meta: Vec<(String, String)>,
    pub spec: Vec<LayerSpec>,
    pub weights: Vec<(String, NetworkWeights<T>)>,
    pub optimizer: Option<OptimizerState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn weight_set(&self, name: &str) -> Option<&NetworkWeights<T>> {
        self.weights.iter().find(|(n, _)| n == name).map(|(_, w)| w)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", MAGIC)?;
        writeln!(out, "scalar {}", T::NAME)?;
        writeln!(out, "step {}", self.step)?;
        for (k, v) in &self.meta {
            writeln!(out, "meta {} {}", k, v)?;
        }
        writeln!(out, "layers {}", self.spec.len())?;
        for l in &self.spec {
            writeln!(out, "layer {}", l)?;
        }
        match &self.optimizer {
            None => writeln!(out, "optimizer none")?,
            Some(o) => match o.kind {
                OptimizerKind::Sgd => writeln!(out, "optimizer sgd step={}", o.step)?,
                OptimizerKind::Adam { beta1, beta2, eps } => writeln!(
                    out,
                    "optimizer adam beta1={} beta2={} eps={} step={}",
                    beta1, beta2, eps, o.step
                )?,
            },
        }
        let mut sets: Vec<(&str, &NetworkWeights<T>)> =
            self.weights.iter().map(|(n, w)| (n.as_str(), w)).collect();
        if let Some(o) = &self.optimizer {
            sets.push(("optimizer.m", &o.first_moment));
            sets.push(("optimizer.v", &o.second_moment));
        }
        for (name, set) in sets {
            for (l, group) in set.layers.iter().enumerate() {
                for (p, t) in group.iter().enumerate() {
                    let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
                    writeln!(out, "tensor {} {} {} {}", name, l, p, shape.join(","))?;
                    for chunk in t.data().chunks(VALUES_PER_LINE) {
                        let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
                        writeln!(out, "{}", line.join(" "))?;
                    }
                }
            }
        }
        writeln!(out, "end")?;
        out.flush()
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp)?;
            self.write_to(BufWriter::new(file))?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, CheckpointError> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String), CheckpointError> {
            match lines.next() {
                Some((n, l)) => Ok((n, l?)),
                None => Err(CheckpointError::Parse {
                    line: 0,
                    reason: "unexpected end of file".into(),
                }),
            }
        };
        let fail = |line: usize, reason: String| CheckpointError::Parse { line, reason };

        let (n, magic) = next()?;
        if magic.trim() != MAGIC {
            return Err(fail(n, format!("expected `{}`", MAGIC)));
        }
        let (n, scalar) = next()?;
        if scalar.trim() != format!("scalar {}", T::NAME) {
            return Err(fail(n, format!("expected scalar {}, found `{}`", T::NAME, scalar)));
        }
        let (n, step) = next()?;
        let step = step
            .strip_prefix("step ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fail(n, "expected `step <n>`".into()))?;

        let mut meta = Vec::new();
        let (mut n, mut line) = next()?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            (n, line) = next()?;
        }
        let count: usize = line
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fail(n, "expected `layers <n>`".into()))?;
        let mut spec = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = next()?;
            let body = line
                .strip_prefix("layer ")
                .ok_or_else(|| fail(n, "expected `layer ...`".into()))?;
            spec.push(body.parse::<LayerSpec>().map_err(|e| fail(n, e))?);
        }

        let (n, line) = next()?;
        let opt_line = line
            .strip_prefix("optimizer ")
            .ok_or_else(|| fail(n, "expected `optimizer ...`".into()))?
            .to_string();
        let mut words = opt_line.split_whitespace();
        let opt_kind = words.next().unwrap_or("");
        let fields: std::collections::HashMap<&str, &str> =
            words.filter_map(|w| w.split_once('=')).collect();
        let num = |key: &str| -> Result<f64, CheckpointError> {
            fields
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fail(n, format!("optimizer is missing `{}`", key)))
        };
        let mut optimizer = match opt_kind {
            "none" => None,
            "sgd" => Some(OptimizerState::new(OptimizerKind::Sgd, &spec)),
            "adam" => Some(OptimizerState::new(
                OptimizerKind::Adam {
                    beta1: num("beta1")?,
                    beta2: num("beta2")?,
                    eps: num("eps")?,
                },
                &spec,
            )),
            other => return Err(fail(n, format!("unknown optimizer `{}`", other))),
        };
        if let Some(o) = optimizer.as_mut() {
            o.step = fields
                .get("step")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fail(n, "optimizer is missing `step`".into()))?;
        }

        let mut weights: Vec<(String, NetworkWeights<T>)> = Vec::new();
        loop {
            let (n, line) = next()?;
            if line.trim() == "end" {
                break;
            }
            let header: Vec<&str> = line
                .strip_prefix("tensor ")
                .ok_or_else(|| fail(n, "expected `tensor ...` or `end`".into()))?
                .split_whitespace()
                .collect();
            if header.len() != 4 {
                return Err(fail(n, "tensor header needs set, layer, index and shape".into()));
            }
            let layer: usize = header[1].parse().map_err(|_| fail(n, "bad layer index".into()))?;
            let param: usize = header[2].parse().map_err(|_| fail(n, "bad parameter index".into()))?;
            let shape: Vec<usize> = header[3]
                .split(',')
                .map(|d| d.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| fail(n, "bad shape".into()))?;
            let expected = spec
                .get(layer)
                .map(|l| l.param_shapes())
                .and_then(|s| s.get(param).cloned())
                .ok_or_else(|| fail(n, format!("no parameter {}.{} in layer spec", layer, param)))?;
            if expected != shape {
                return Err(fail(n, format!("shape {:?} but layer expects {:?}", shape, expected)));
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            while data.len() < len {
                let (vn, vline) = next()?;
                for tok in vline.split_whitespace() {
                    data.push(
                        tok.parse::<T>()
                            .map_err(|_| fail(vn, format!("bad value `{}`", tok)))?,
                    );
                }
            }
            if data.len() != len {
                return Err(fail(n, format!("expected {} values, read {}", len, data.len())));
            }
            let tensor = Tensor::from_vec(&shape, data).map_err(|e| fail(n, e.to_string()))?;

            let set_name = header[0];
            let target = match (set_name, optimizer.as_mut()) {
                ("optimizer.m", Some(o)) => &mut o.first_moment,
                ("optimizer.v", Some(o)) => &mut o.second_moment,
                ("optimizer.m" | "optimizer.v", None) => {
                    return Err(fail(n, "optimizer tensors without an optimizer".into()))
                }
                _ => {
                    if !weights.iter().any(|(s, _)| s == set_name) {
                        weights.push((set_name.to_string(), NetworkWeights::zeros(&spec)));
                    }
                    &mut weights.iter_mut().find(|(s, _)| s == set_name).unwrap().1
                }
            };
            target.layers[layer][param] = tensor;
        }
        Ok(Checkpoint {
            step,
            meta,
            spec,
            weights,
            optimizer,
        })
    }
}
