use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{accuracy, loss_eval, truncate_outputs, LossKind, Network, Targets, Tensor};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Full,
    Train,
    Test,
}

/// Labeled examples. `classes` is the number of class scores a model needs
/// (for real-valued targets: the target width).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub name: String,
    pub inputs: Tensor<S>,
    pub targets: Targets<S>,
    pub classes: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

const EVAL_CHUNK: usize = 1024;

impl<S: Real> Dataset<S> {
    pub fn new(name: impl Into<String>, inputs: Tensor<S>, targets: Targets<S>, classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::shape("dataset inputs must be rank 2"));
        }
        if targets.len() != inputs.rows() {
            return Err(Error::shape(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        match &targets {
            Targets::Classes(c) => {
                if let Some(&bad) = c.iter().find(|&&y| y >= classes) {
                    return Err(Error::shape(format!("class {bad} not below {classes}")));
                }
            }
            Targets::Values(v) => {
                if v.cols() != classes {
                    return Err(Error::shape("value targets wider than declared outputs"));
                }
            }
        }
        inputs.ensure_finite("dataset inputs")?;
        Ok(Self {
            name: name.into(),
            inputs,
            targets,
            classes,
            split: Split::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_width(&self) -> usize {
        self.classes
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<S>, Targets<S>)> {
        Ok((self.inputs.select_rows(indices)?, self.targets.select(indices)?))
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        let (inputs, targets) = self.batch(indices)?;
        Ok(Self {
            name: self.name.clone(),
            inputs,
            targets,
            classes: self.classes,
            split,
        })
    }

    /// Deterministic split; class targets are stratified so both halves stay
    /// balanced.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in (0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<Vec<usize>> = match &self.targets {
            Targets::Classes(c) => (0..self.classes)
                .map(|k| (0..c.len()).filter(|&i| c[i] == k).collect())
                .collect(),
            Targets::Values(_) => vec![(0..self.len()).collect()],
        };
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut g in groups {
            g.shuffle(&mut rng);
            let n_test = (g.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&g[..n_test]);
            train.extend_from_slice(&g[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument("split leaves an empty side".into()));
        }
        Ok((self.subset(&train, Split::Train)?, self.subset(&test, Split::Test)?))
    }

    /// Loss and accuracy of `net` using its first `output_width()` outputs.
    pub fn evaluate(&self, net: &Network<S>, kind: LossKind) -> Result<Evaluation> {
        if net.input_width() != self.features() || net.output_width() < self.classes {
            return Err(Error::shape(format!(
                "network {}->{} cannot score {} features / {} outputs",
                net.input_width(),
                net.output_width(),
                self.features(),
                self.classes
            )));
        }
        let mut loss = 0.0;
        let mut hits = 0.0;
        let mut has_acc = true;
        let idx: Vec<usize> = (0..self.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, y) = self.batch(chunk)?;
            let pred = truncate_outputs(&net.forward(&x)?, self.classes)?;
            loss += loss_eval(&pred, &y, kind)?.widen() * chunk.len() as f64;
            match accuracy(&pred, &y) {
                Some(a) => hits += a * chunk.len() as f64,
                None => has_acc = false,
            }
        }
        let n = self.len() as f64;
        Ok(Evaluation {
            loss: loss / n,
            accuracy: has_acc.then_some(hits / n),
        })
    }

    pub fn cast<T: Real>(&self) -> Dataset<T> {
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.cast(),
            targets: match &self.targets {
                Targets::Classes(c) => Targets::Classes(c.clone()),
                Targets::Values(v) => Targets::Values(v.cast()),
            },
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Writes `x0..x{F-1}` feature columns followed by `class` or `y0..y{K-1}`.
pub fn write_csv<S: Real>(dataset: &Dataset<S>, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..dataset.features()).map(|i| format!("x{i}")).collect();
    match &dataset.targets {
        Targets::Classes(_) => header.push("class".into()),
        Targets::Values(v) => header.extend((0..v.cols()).map(|i| format!("y{i}"))),
    }
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(&header).map_err(csv_err)?;
    for r in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.inputs.row(r).iter().map(|v| v.widen().to_string()).collect();
        match &dataset.targets {
            Targets::Classes(c) => rec.push(c[r].to_string()),
            Targets::Values(v) => rec.extend(v.row(r).iter().map(|y| y.widen().to_string())),
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    super::atomic_write(path, &bytes)
}

/// Reads the format produced by [`write_csv`]. `classes` overrides the
/// class count inferred from the largest label.
pub fn read_csv(path: &Path, classes: Option<usize>) -> Result<Dataset<f32>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Parse(e.to_string()),
    })?;
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let features = header.iter().filter(|h| h.starts_with('x')).count();
    let is_class = header.iter().any(|h| h == "class");
    let width = header.len() - features;
    if features == 0 || width == 0 {
        return Err(Error::Parse(format!("{}: need x* and class/y* columns", path.display())));
    }
    let mut xs = Vec::new();
    let mut classes_seen = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let num = |s: &str| s.trim().parse::<f32>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        for f in rec.iter().take(features) {
            xs.push(num(f)?);
        }
        if is_class {
            let c = rec[features]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("class label: {e}")))?;
            classes_seen.push(c);
        } else {
            for f in rec.iter().skip(features) {
                ys.push(num(f)?);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse(format!("{}: no rows", path.display())));
    }
    let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
    let inputs = Tensor::matrix(rows, features, xs)?;
    if is_class {
        let inferred = classes_seen.iter().max().map_or(1, |m| m + 1);
        let c = classes.unwrap_or(inferred);
        Dataset::new(name, inputs, Targets::Classes(classes_seen), c)
    } else {
        Dataset::new(name, inputs, Targets::Values(Tensor::matrix(rows, width, ys)?), width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset<f32> {
        let x = Tensor::matrix(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        Dataset::new("toy", x, Targets::Classes(vec![0, 1, 0, 1, 0, 1]), 2).unwrap()
    }

    #[test]
    fn rejects_out_of_range_classes() {
        let x = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new("bad", x, Targets::Classes(vec![0, 2]), 2).is_err());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let d = toy();
        let (tr, te) = d.split(1.0 / 3.0, 4).unwrap();
        assert_eq!(te.len(), 2);
        assert_eq!(tr.len(), 4);
        let Targets::Classes(c) = &te.targets else { unreachable!() };
        assert_eq!(c.iter().filter(|&&k| k == 0).count(), 1);
        assert_eq!(d.split(1.0 / 3.0, 4).unwrap().1, te);
        assert!(d.split(0.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.csv");
        let d = toy();
        write_csv(&d, &p).unwrap();
        let back = read_csv(&p, None).unwrap();
        assert_eq!(back.inputs, d.inputs);
        assert_eq!(back.targets, d.targets);
        assert_eq!(read_csv(&p, Some(4)).unwrap().classes, 4);
    }
}
