use super::dataset::Dataset;
use super::EdgeClass;
use crate::error::{NlmcError, Result};
use crate::linalg::dense_solve;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

const FORMAT: &str = "nlmc-regressor v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Σ(Y − Ŷ)².
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Σ(Y − Ŷ)² / n.
    pub mean_squared: f64,
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(NlmcError::InvalidArgument(format!(
            "metrics need equal nonempty lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let se: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let ae: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    let s2: f64 = y.iter().map(|a| a * a).sum();
    let s1: f64 = y.iter().map(|a| a.abs()).sum();
    if s1 == 0.0 || s2 == 0.0 {
        return Err(NlmcError::InvalidArgument("relative metrics undefined for Y = 0".into()));
    }
    Ok(Metrics {
        mse: se,
        rmse: (se / s2).sqrt(),
        mae: ae / s1,
        mean_squared: se / y.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelKind {
    Ridge { lambda: f64 },
    Knn { k: usize },
    Mlp { hidden: usize, epochs: usize, learning_rate: f64 },
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(ModelKind::Ridge { lambda: 1e-6 }),
            "knn" => Ok(ModelKind::Knn { k: 4 }),
            "mlp" => Ok(ModelKind::Mlp {
                hidden: 32,
                epochs: 400,
                learning_rate: 3e-3,
            }),
            _ => Err(NlmcError::Parse(format!("unknown model family '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ridge { .. } => "ridge",
            ModelKind::Knn { .. } => "knn",
            ModelKind::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Ridge { w: Vec<f64>, b: f64 },
    Knn { k: usize, x: Vec<Vec<f64>>, y: Vec<f64> },
    Mlp { hidden: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: f64 },
}

/// Standardized scalar regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
struct Scalar {
    log: bool,
    y_mean: f64,
    y_std: f64,
    model: Fitted,
}

#[derive(Debug, Clone, PartialEq)]
struct ClassModel {
    mean: Vec<f64>,
    std: Vec<f64>,
    t: Scalar,
    /// Model of T^w / T.
    ratio: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub kind: ModelKind,
    pub seed: u64,
    pub feature_count: usize,
    models: [Option<ClassModel>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub train: usize,
    pub validation: usize,
    pub t: Option<Metrics>,
    pub tw: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub classes: [Option<ClassReport>; 4],
}

impl TrainReport {
    /// Largest validation RMSE of T over trained classes with a validation set.
    pub fn max_rmse(&self) -> Option<f64> {
        self.classes
            .iter()
            .flatten()
            .filter_map(|c| c.t.map(|m| m.rmse))
            .fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,train,validation,mse,rmse,mae,mse_w,rmse_w,mae_w\n");
        for c in EdgeClass::ALL {
            let Some(r) = &self.classes[c.index()] else {
                let _ = writeln!(s, "{},0,0,,,,,,", c.name());
                continue;
            };
            let f = |m: Option<Metrics>| {
                m.map_or(",,".to_string(), |m| format!("{:e},{:e},{:e}", m.mse, m.rmse, m.mae))
            };
            let _ = writeln!(s, "{},{},{},{},{}", c.name(), r.train, r.validation, f(r.t), f(r.tw));
        }
        s
    }
}

fn standardize(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            std[j] += (r[j] - mean[j]).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, std)
}

fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Fitted> {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut a = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for (r, &t) in x.iter().zip(y) {
        for i in 0..d {
            rhs[i] += r[i] * t;
            for j in 0..d {
                a[i * d + j] += r[i] * r[j];
            }
        }
    }
    a.iter_mut().for_each(|v| *v /= n);
    rhs.iter_mut().for_each(|v| *v /= n);
    for i in 0..d {
        a[i * d + i] += lambda;
    }
    let w = dense_solve(d, &a, &rhs)?;
    Ok(Fitted::Ridge { w, b: 0.0 })
}

fn fit_mlp(x: &[Vec<f64>], y: &[f64], hidden: usize, epochs: usize, lr: f64, rng: &mut ChaCha8Rng) -> Fitted {
    let d = x[0].len();
    let limit1 = (6.0 / (d + hidden) as f64).sqrt();
    let limit2 = (6.0 / (hidden + 1) as f64).sqrt();
    let mut p: Vec<f64> = (0..hidden * d).map(|_| rng.random_range(-limit1..limit1)).collect();
    p.extend(std::iter::repeat_n(0.0, hidden));
    p.extend((0..hidden).map(|_| rng.random_range(-limit2..limit2)));
    p.push(0.0);
    let (o1, o2, o3) = (hidden * d, hidden * d + hidden, hidden * d + 2 * hidden);
    let (b1c, b2c, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let mut order: Vec<usize> = (0..x.len()).collect();
    let batch = 32.min(x.len());
    let mut step = 0i32;
    let mut grad = vec![0.0; p.len()];
    let mut h = vec![0.0; hidden];
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &s in chunk {
                let xs = &x[s];
                for k in 0..hidden {
                    let z: f64 = p[o1 + k] + (0..d).map(|j| p[k * d + j] * xs[j]).sum::<f64>();
                    h[k] = z.tanh();
                }
                let out = p[o3] + (0..hidden).map(|k| p[o2 + k] * h[k]).sum::<f64>();
                let e = 2.0 * (out - y[s]) / chunk.len() as f64;
                grad[o3] += e;
                for k in 0..hidden {
                    grad[o2 + k] += e * h[k];
                    let dz = e * p[o2 + k] * (1.0 - h[k] * h[k]);
                    grad[o1 + k] += dz;
                    for j in 0..d {
                        grad[k * d + j] += dz * xs[j];
                    }
                }
            }
            step += 1;
            let (c1, c2) = (1.0 - b1c.powi(step), 1.0 - b2c.powi(step));
            for i in 0..p.len() {
                m[i] = b1c * m[i] + (1.0 - b1c) * grad[i];
                v[i] = b2c * v[i] + (1.0 - b2c) * grad[i] * grad[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
    Fitted::Mlp {
        hidden,
        w1: p[..o1].to_vec(),
        b1: p[o1..o2].to_vec(),
        w2: p[o2..o3].to_vec(),
        b2: p[o3],
    }
}

impl Fitted {
    fn predict(&self, z: &[f64]) -> f64 {
        match self {
            Fitted::Ridge { w, b } => b + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>(),
            Fitted::Knn { k, x, y } => {
                let mut d: Vec<(f64, usize)> = x
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (r.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if d[0].0 < 1e-12 {
                    return y[d[0].1];
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(dist, i) in d.iter().take(*k) {
                    num += y[i] / dist;
                    den += 1.0 / dist;
                }
                num / den
            }
            Fitted::Mlp { hidden, w1, b1, w2, b2 } => {
                let d = z.len();
                b2 + (0..*hidden)
                    .map(|k| w2[k] * (b1[k] + (0..d).map(|j| w1[k * d + j] * z[j]).sum::<f64>()).tanh())
                    .sum::<f64>()
            }
        }
    }
}

impl Scalar {
    fn fit(kind: ModelKind, z: &[Vec<f64>], targets: &[f64], allow_log: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let log = allow_log && targets.iter().all(|&t| t > 0.0);
        let y: Vec<f64> = targets.iter().map(|&t| if log { t.ln() } else { t }).collect();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_std = if sd < 1e-300 { 1.0 } else { sd };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let model = match kind {
            ModelKind::Ridge { lambda } => fit_ridge(z, &ys, lambda)?,
            ModelKind::Knn { k } => Fitted::Knn {
                k: k.max(1),
                x: z.to_vec(),
                y: ys,
            },
            ModelKind::Mlp {
                hidden,
                epochs,
                learning_rate,
            } => fit_mlp(z, &ys, hidden, epochs, learning_rate, rng),
        };
        Ok(Self {
            log,
            y_mean,
            y_std,
            model,
        })
    }

    fn predict(&self, z: &[f64]) -> f64 {
        let v = self.y_mean + self.y_std * self.model.predict(z);
        if self.log {
            v.exp()
        } else {
            v
        }
    }
}

impl ClassModel {
    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

fn fit_class(kind: ModelKind, data: &Dataset, class: EdgeClass, idx: &[usize], seed: u64) -> Result<ClassModel> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.samples[i].features.as_slice()).collect();
    let (mean, std) = standardize(&rows);
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(class.index() as u64));
    let t: Vec<f64> = idx.iter().map(|&i| data.samples[i].t).collect();
    let tmodel = Scalar::fit(kind, &z, &t, true, &mut rng)?;
    let ratio = if data.two_phase {
        let r: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let s = &data.samples[i];
                if s.t != 0.0 {
                    s.tw.unwrap_or(0.0) / s.t
                } else {
                    0.0
                }
            })
            .collect();
        Some(Scalar::fit(kind, &z, &r, false, &mut rng)?)
    } else {
        None
    };
    Ok(ClassModel {
        mean,
        std,
        t: tmodel,
        ratio,
    })
}

/// Fit every class on all of its samples.
pub fn fit_all(kind: ModelKind, data: &Dataset, seed: u64) -> Result<Regressor> {
    let mut models: [Option<ClassModel>; 4] = Default::default();
    for class in EdgeClass::ALL {
        let idx = data.class_indices(class);
        if !idx.is_empty() {
            models[class.index()] = Some(fit_class(kind, data, class, &idx, seed)?);
        }
    }
    Ok(Regressor {
        kind,
        seed,
        feature_count: data.feature_names.len(),
        models,
    })
}

/// Train one model per edge class on the dataset's training split and report
/// validation metrics.
pub fn train(kind: ModelKind, data: &Dataset, seed: u64) -> Result<(Regressor, TrainReport)> {
    let split = data.split();
    let mut models: [Option<ClassModel>; 4] = Default::default();
    let mut reports: [Option<ClassReport>; 4] = Default::default();
    for (class, (tr, va)) in &split {
        if tr.is_empty() {
            log::warn!("edge class {} has no training samples", class.name());
            continue;
        }
        models[class.index()] = Some(fit_class(kind, data, *class, tr, seed)?);
        reports[class.index()] = Some(ClassReport {
            train: tr.len(),
            validation: va.len(),
            t: None,
            tw: None,
        });
    }
    let reg = Regressor {
        kind,
        seed,
        feature_count: data.feature_names.len(),
        models,
    };
    for (class, (_, va)) in &split {
        let Some(rep) = reports[class.index()].as_mut() else {
            continue;
        };
        if va.is_empty() {
            continue;
        }
        let mut y = Vec::new();
        let mut yh = Vec::new();
        let mut w = Vec::new();
        let mut wh = Vec::new();
        for &i in va {
            let s = &data.samples[i];
            let (t, tw) = reg.predict(*class, &s.features)?;
            y.push(s.t);
            yh.push(t);
            if let (Some(a), Some(b)) = (s.tw, tw) {
                w.push(a);
                wh.push(b);
            }
        }
        rep.t = metrics(&y, &yh).ok();
        if !w.is_empty() {
            rep.tw = metrics(&w, &wh).ok();
        }
    }
    Ok((reg, TrainReport { classes: reports }))
}

impl Regressor {
    pub fn is_trained(&self, class: EdgeClass) -> bool {
        self.models[class.index()].is_some()
    }

    /// Predicted `(T, T^w)`.
    pub fn predict(&self, class: EdgeClass, features: &[f64]) -> Result<(f64, Option<f64>)> {
        let m = self.models[class.index()]
            .as_ref()
            .ok_or_else(|| NlmcError::Untrained(class.name().into()))?;
        if features.len() != self.feature_count {
            return Err(NlmcError::InvalidArgument(format!(
                "expected {} features, got {}",
                self.feature_count,
                features.len()
            )));
        }
        let z = m.scale(features);
        let t = m.t.predict(&z);
        Ok((t, m.ratio.as_ref().map(|r| r.predict(&z) * t)))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT}");
        match self.kind {
            ModelKind::Ridge { lambda } => {
                let _ = writeln!(s, "kind ridge {lambda:e}");
            }
            ModelKind::Knn { k } => {
                let _ = writeln!(s, "kind knn {k}");
            }
            ModelKind::Mlp {
                hidden,
                epochs,
                learning_rate,
            } => {
                let _ = writeln!(s, "kind mlp {hidden} {epochs} {learning_rate:e}");
            }
        }
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "features {}", self.feature_count);
        for c in EdgeClass::ALL {
            match &self.models[c.index()] {
                None => {
                    let _ = writeln!(s, "class {} untrained", c.name());
                }
                Some(m) => {
                    let _ = writeln!(s, "class {} trained {}", c.name(), m.ratio.is_some() as u8);
                    vector(&mut s, "mean", &m.mean);
                    vector(&mut s, "std", &m.std);
                    write_scalar(&mut s, &m.t);
                    if let Some(r) = &m.ratio {
                        write_scalar(&mut s, r);
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(FORMAT) {
            return Err(NlmcError::Parse(format!("model file must start with '{FORMAT}'")));
        }
        let mut t = Tokens(lines.flat_map(str::split_whitespace).collect::<Vec<_>>().into_iter());
        t.expect("kind")?;
        let kind = match t.word()? {
            "ridge" => ModelKind::Ridge { lambda: t.num()? },
            "knn" => ModelKind::Knn { k: t.int()? },
            "mlp" => ModelKind::Mlp {
                hidden: t.int()?,
                epochs: t.int()?,
                learning_rate: t.num()?,
            },
            w => return Err(NlmcError::Parse(format!("unknown model family '{w}'"))),
        };
        t.expect("seed")?;
        let seed = t.int()? as u64;
        t.expect("features")?;
        let feature_count = t.int()?;
        let mut models: [Option<ClassModel>; 4] = Default::default();
        for c in EdgeClass::ALL {
            t.expect("class")?;
            t.expect(c.name())?;
            if t.word()? == "untrained" {
                continue;
            }
            let two = t.int()? == 1;
            let mean = t.vector("mean")?;
            let std = t.vector("std")?;
            let tm = read_scalar(&mut t)?;
            let ratio = if two { Some(read_scalar(&mut t)?) } else { None };
            models[c.index()] = Some(ClassModel {
                mean,
                std,
                t: tm,
                ratio,
            });
        }
        Ok(Self {
            kind,
            seed,
            feature_count,
            models,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| NlmcError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NlmcError::io(path, e))?;
        Self::from_text(&text)
    }
}

fn vector(s: &mut String, name: &str, v: &[f64]) {
    let _ = write!(s, "{name} {}", v.len());
    for x in v {
        let _ = write!(s, " {x:e}");
    }
    s.push('\n');
}

fn write_scalar(s: &mut String, m: &Scalar) {
    let _ = writeln!(s, "target {} {:e} {:e}", m.log as u8, m.y_mean, m.y_std);
    match &m.model {
        Fitted::Ridge { w, b } => {
            let _ = writeln!(s, "ridge {b:e}");
            vector(s, "w", w);
        }
        Fitted::Knn { k, x, y } => {
            let _ = writeln!(s, "knn {k} {}", x.len());
            vector(s, "y", y);
            for r in x {
                vector(s, "x", r);
            }
        }
        Fitted::Mlp { hidden, w1, b1, w2, b2 } => {
            let _ = writeln!(s, "mlp {hidden} {b2:e}");
            vector(s, "w1", w1);
            vector(s, "b1", b1);
            vector(s, "w2", w2);
        }
    }
}

struct Tokens<'a>(std::vec::IntoIter<&'a str>);

impl<'a> Tokens<'a> {
    fn word(&mut self) -> Result<&'a str> {
        self.0.next().ok_or_else(|| NlmcError::Parse("unexpected end of model file".into()))
    }
    fn expect(&mut self, w: &str) -> Result<()> {
        let got = self.word()?;
        if got == w {
            Ok(())
        } else {
            Err(NlmcError::Parse(format!("expected '{w}', found '{got}'")))
        }
    }
    fn num(&mut self) -> Result<f64> {
        let w = self.word()?;
        w.parse().map_err(|_| NlmcError::Parse(format!("bad number '{w}'")))
    }
    fn int(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse().map_err(|_| NlmcError::Parse(format!("bad integer '{w}'")))
    }
    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        self.expect(name)?;
        let n = self.int()?;
        (0..n).map(|_| self.num()).collect()
    }
}

fn read_scalar(t: &mut Tokens<'_>) -> Result<Scalar> {
    t.expect("target")?;
    let log = t.int()? == 1;
    let y_mean = t.num()?;
    let y_std = t.num()?;
    let model = match t.word()? {
        "ridge" => {
            let b = t.num()?;
            Fitted::Ridge { w: t.vector("w")?, b }
        }
        "knn" => {
            let k = t.int()?;
            let n = t.int()?;
            let y = t.vector("y")?;
            let x = (0..n).map(|_| t.vector("x")).collect::<Result<Vec<_>>>()?;
            Fitted::Knn { k, x, y }
        }
        "mlp" => {
            let hidden = t.int()?;
            let b2 = t.num()?;
            Fitted::Mlp {
                hidden,
                w1: t.vector("w1")?,
                b1: t.vector("b1")?,
                w2: t.vector("w2")?,
                b2,
            }
        }
        w => return Err(NlmcError::Parse(format!("unknown fitted model '{w}'"))),
    };
    Ok(Scalar {
        log,
        y_mean,
        y_std,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = metrics(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae), (25.0, 1.0, 1.0));
        let m = metrics(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!((m.mse, m.mae), (1.0, 0.5));
        assert!(metrics(&[0.0], &[1.0]).is_err());
        assert!(metrics(&[], &[]).is_err());
    }
}
