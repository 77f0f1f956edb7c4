//! Versioned plain-text checkpoint: bundle domain, network shape, weights
//! and, for resumable runs, the optimizer and scheduler state.
//!
//! Floats are written in shortest round-trip form so a load/save cycle
//! reproduces the file byte for byte.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bundle::{AKind, Bundle, BundleConfig, Interval, ParamSetting};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkSpec};
use crate::systems::OdeSystem;
use crate::training::{Adam, AdamConfig, MovingAverage, PlateauState};

const MAGIC: &str = "odebundle-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer and scheduler state needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub lr: f64,
    pub adam: Adam,
    pub plateau: PlateauState,
    pub smoothing: MovingAverage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub bundle: BundleConfig,
    pub params: NetworkParams,
    pub seed: u64,
    /// Batches completed; the next batch to run has this index.
    pub batches: u64,
    pub smoothed_loss: Option<f64>,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn into_bundle(self) -> Result<Bundle> {
        Bundle::new(self.bundle, self.params)
    }

    pub fn to_bundle(&self) -> Result<Bundle> {
        Bundle::new(self.bundle.clone(), self.params.clone())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b = &self.bundle;
        let spec = self.params.spec();
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "system {}", b.system);
        let _ = writeln!(s, "t0 {}", b.t0);
        let _ = writeln!(s, "tf {}", b.tf);
        let _ = writeln!(s, "a_kind {}", b.a_kind);
        let _ = writeln!(s, "time_margin {}", b.time_margin);
        let _ = writeln!(s, "normalize_inputs {}", b.normalize_inputs);
        for iv in &b.x0_box {
            let _ = writeln!(s, "x0_box {} {}", iv.lo, iv.hi);
        }
        for (name, p) in b.system.param_names().iter().zip(&b.params) {
            match p {
                ParamSetting::Fixed(v) => {
                    let _ = writeln!(s, "param {name} fixed {v}");
                }
                ParamSetting::Free(iv) => {
                    let _ = writeln!(s, "param {name} free {} {}", iv.lo, iv.hi);
                }
            }
        }
        let _ = writeln!(s, "input_dim {}", spec.input_dim);
        let hidden: Vec<String> = spec.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "output_dim {}", spec.output_dim);
        let _ = writeln!(s, "skip_connections {}", spec.skip_connections);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "batches {}", self.batches);
        match self.smoothed_loss {
            Some(l) => {
                let _ = writeln!(s, "smoothed_loss {l}");
            }
            None => {
                let _ = writeln!(s, "smoothed_loss none");
            }
        }
        write_values(&mut s, "weights", self.params.values());
        if let Some(tr) = &self.training {
            let _ = writeln!(s, "training");
            let _ = writeln!(s, "lr {}", tr.lr);
            let c = tr.adam.config;
            let _ = writeln!(s, "adam {} {} {} {}", c.beta1, c.beta2, c.eps, tr.adam.step);
            write_values(&mut s, "adam_m", &tr.adam.m);
            write_values(&mut s, "adam_v", &tr.adam.v);
            let p = tr.plateau;
            let _ = writeln!(s, "plateau {} {} {}", p.best, p.num_bad, p.cooldown_left);
            let sm = &tr.smoothing;
            let _ = writeln!(s, "smoothing {} {} {}", sm.window, sm.sum, sm.since_resum);
            let values: Vec<f64> = sm.values.iter().copied().collect();
            write_values(&mut s, "smoothing_values", &values);
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let header = r.fields("header")?;
        if header.len() != 2 || header[0] != MAGIC {
            return Err(Error::Checkpoint("not an odebundle checkpoint".into()));
        }
        let version: u32 = parse(header[1], "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let system: OdeSystem = r.value("system")?;
        let t0: f64 = r.value("t0")?;
        let tf: f64 = r.value("tf")?;
        let a_kind: AKind = r.value("a_kind")?;
        let time_margin: f64 = r.value("time_margin")?;
        let normalize_inputs: bool = r.value("normalize_inputs")?;
        let mut x0_box = Vec::new();
        for _ in 0..system.state_dim() {
            let f = r.keyed("x0_box", 2)?;
            x0_box.push(Interval::new(
                parse(f[0], "x0_box")?,
                parse(f[1], "x0_box")?,
            ));
        }
        let mut params = Vec::new();
        for name in system.param_names() {
            let f = r.keyed_any("param")?;
            if f.first() != Some(name) {
                return Err(Error::Checkpoint(format!(
                    "expected parameter `{name}`, found {f:?}"
                )));
            }
            params.push(match (f.get(1).copied(), f.len()) {
                (Some("fixed"), 3) => ParamSetting::Fixed(parse(f[2], name)?),
                (Some("free"), 4) => {
                    ParamSetting::Free(Interval::new(parse(f[2], name)?, parse(f[3], name)?))
                }
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "malformed parameter line for `{name}`"
                    )))
                }
            });
        }
        let bundle = BundleConfig {
            system,
            t0,
            tf,
            x0_box,
            params,
            a_kind,
            time_margin,
            normalize_inputs,
        };
        bundle
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let input_dim: usize = r.value("input_dim")?;
        let hidden = r
            .keyed_any("hidden")?
            .iter()
            .map(|h| parse(h, "hidden"))
            .collect::<Result<Vec<usize>>>()?;
        let output_dim: usize = r.value("output_dim")?;
        let skip: bool = r.value("skip_connections")?;
        let spec = NetworkSpec::new(input_dim, hidden, output_dim).with_skip_connections(skip);
        let seed: u64 = r.value("seed")?;
        let batches: u64 = r.value("batches")?;
        let smoothed = r.keyed("smoothed_loss", 1)?;
        let smoothed_loss = match smoothed[0] {
            "none" => None,
            v => Some(parse(v, "smoothed_loss")?),
        };
        let weights = r.values("weights")?;
        let params = NetworkParams::from_values(spec, weights)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let training = if r.peek_key() == Some("training") {
            r.keyed("training", 0)?;
            let lr: f64 = r.value("lr")?;
            let a = r.keyed("adam", 4)?;
            let config = AdamConfig {
                beta1: parse(a[0], "adam")?,
                beta2: parse(a[1], "adam")?,
                eps: parse(a[2], "adam")?,
            };
            let step: u64 = parse(a[3], "adam")?;
            let m = r.values("adam_m")?;
            let v = r.values("adam_v")?;
            if m.len() != params.len() || v.len() != params.len() {
                return Err(Error::Checkpoint(
                    "optimizer moments do not match the network".into(),
                ));
            }
            let p = r.keyed("plateau", 3)?;
            let plateau = PlateauState {
                best: parse(p[0], "plateau")?,
                num_bad: parse(p[1], "plateau")?,
                cooldown_left: parse(p[2], "plateau")?,
            };
            let sm = r.keyed("smoothing", 3)?;
            let window: usize = parse(sm[0], "smoothing")?;
            let sum: f64 = parse(sm[1], "smoothing")?;
            let since_resum: usize = parse(sm[2], "smoothing")?;
            let values: VecDeque<f64> = r.values("smoothing_values")?.into();
            if window == 0 || values.len() > window {
                return Err(Error::Checkpoint(
                    "smoothing buffer exceeds its window".into(),
                ));
            }
            Some(TrainingState {
                lr,
                adam: Adam { config, m, v, step },
                plateau,
                smoothing: MovingAverage {
                    window,
                    values,
                    sum,
                    since_resum,
                },
            })
        } else {
            None
        };
        r.keyed("end", 0)?;
        if r.peek_key().is_some() {
            return Err(Error::Checkpoint("trailing content after `end`".into()));
        }
        let ckpt = Checkpoint {
            bundle,
            params,
            seed,
            batches,
            smoothed_loss,
            training,
        };
        ckpt.to_bundle()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ckpt)
    }

    /// Write via a temporary file and rename, so an interrupted save leaves
    /// the previous checkpoint intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(self.to_text().as_bytes())
                .map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_values(s: &mut String, key: &str, values: &[f64]) {
    let _ = writeln!(s, "{key} {}", values.len());
    for v in values {
        let _ = writeln!(s, "{v}");
    }
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse `{s}` for {what}")))
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn fields(&mut self, expecting: &str) -> Result<Vec<&'a str>> {
        match self.lines.next() {
            Some((_, line)) => Ok(line.split_whitespace().collect()),
            None => Err(Error::Checkpoint(format!(
                "truncated: expected `{expecting}`"
            ))),
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.lines
            .peek()
            .and_then(|(_, l)| l.split_whitespace().next())
    }

    fn keyed_any(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line_no = self.lines.peek().map(|(i, _)| i + 1);
        let f = self.fields(key)?;
        if f.first() != Some(&key) {
            return Err(Error::Checkpoint(format!(
                "line {}: expected `{key}`, found `{}`",
                line_no.unwrap_or(0),
                f.join(" ")
            )));
        }
        Ok(f[1..].to_vec())
    }

    fn keyed(&mut self, key: &str, n: usize) -> Result<Vec<&'a str>> {
        let f = self.keyed_any(key)?;
        if f.len() != n {
            return Err(Error::Checkpoint(format!(
                "`{key}` expects {n} fields, found {}",
                f.len()
            )));
        }
        Ok(f)
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<T> {
        parse(self.keyed(key, 1)?[0], key)
    }

    fn values(&mut self, key: &str) -> Result<Vec<f64>> {
        let n: usize = self.value(key)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let f = self.fields(key)?;
            if f.len() != 1 {
                return Err(Error::Checkpoint(format!("`{key}` entry {i} is malformed")));
            }
            out.push(parse(f[0], key)?);
        }
        Ok(out)
    }
}
