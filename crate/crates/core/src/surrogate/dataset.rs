use super::transmissibility::{compute_transmissibility, Physics, TransContext};
use super::{ContinuumGraph, Edge, EdgeClass};
use crate::continua::ContinuumKind;
use crate::error::{NlmcError, Result};
use crate::exec::Exec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub edge: usize,
    pub step: usize,
    pub class: EdgeClass,
    pub features: Vec<f64>,
    pub t: f64,
    pub tw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub two_phase: bool,
    pub seed: u64,
}

pub fn feature_names(two_phase: bool) -> Vec<String> {
    let mut v = vec![
        "ln_trans",
        "lnk_mean_a",
        "lnk_std_a",
        "lnk_mean_b",
        "lnk_std_b",
        "ln_vol_a",
        "ln_vol_b",
        "fracture_fraction",
        "lnk_mean_patch",
        "lnk_std_patch",
        "p_a",
        "p_b",
        "dp",
        "abs_p_a",
        "abs_p_b",
    ];
    if two_phase {
        v.extend(["s_a", "s_b", "fw_a", "fw_b", "ln_mob_a", "ln_mob_b"]);
    }
    v.into_iter().map(String::from).collect()
}

fn log_stats(perm: &[f64], cells: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let n = cells.clone().count() as f64;
    let m = cells.clone().map(|i| perm[i].ln()).sum::<f64>() / n;
    let v = cells.map(|i| (perm[i].ln() - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Engineered features of `edge` at continuum means `means`.
pub fn edge_features(ctx: &TransContext<'_>, edge: &Edge, means: &[f64], sats: Option<&[f64]>) -> Vec<f64> {
    let space = ctx.space;
    let (a, b) = (&space.continua[edge.alpha], &space.continua[edge.beta]);
    let (ma, sa) = log_stats(ctx.perm, a.cells.iter().copied());
    let (mb, sb) = log_stats(ctx.perm, b.cells.iter().copied());
    let (_, region) = ctx.pair_region(edge);
    let rect = space.coarse.fine_rect(&region);
    let patch: Vec<usize> = rect.iter().map(|(x, y)| space.fine.index(x, y)).collect();
    let frac = patch
        .iter()
        .filter(|&&i| space.continua[space.owner[i]].kind == ContinuumKind::Fracture)
        .count();
    let (mp, sp) = log_stats(ctx.perm, patch.iter().copied());
    let (pa, pb) = (means[edge.alpha], means[edge.beta]);
    let mut f = vec![
        edge.trans_sum.ln(),
        ma,
        sa,
        mb,
        sb,
        space.volume(edge.alpha).ln(),
        space.volume(edge.beta).ln(),
        frac as f64 / rect.len() as f64,
        mp,
        sp,
        pa,
        pb,
        pa - pb,
        pa.abs(),
        pb.abs(),
    ];
    if let (Physics::TwoPhase(cons), Some(s)) = (ctx.physics, sats) {
        let (sa, sb) = (s[edge.alpha], s[edge.beta]);
        f.extend([
            sa,
            sb,
            cons.fractional_flow(sa),
            cons.fractional_flow(sb),
            cons.total_mobility(sa).ln(),
            cons.total_mobility(sb).ln(),
        ]);
    }
    f
}

/// Time indices sampled with `stride`: `stride, 2·stride, …` up to `last`.
pub fn sampled_steps(last: usize, stride: usize) -> Vec<usize> {
    (1..=last).filter(|k| k % stride.max(1) == 0).collect()
}

/// One sample per (edge, sampled step) from fine states. `states[k]` and
/// `saturations[k]` are fine rasters at time node `k`.
pub fn generate_dataset(
    ctx: &TransContext<'_>,
    graph: &ContinuumGraph,
    states: &[Vec<f64>],
    saturations: Option<&[Vec<f64>]>,
    stride: usize,
    seed: u64,
    exec: Exec,
) -> Result<Dataset> {
    if states.is_empty() {
        return Err(NlmcError::InvalidArgument("no states to sample".into()));
    }
    let two = ctx.is_two_phase();
    if two && saturations.is_none() {
        return Err(NlmcError::InvalidArgument("two-phase dataset needs saturations".into()));
    }
    let mut samples = Vec::new();
    for k in sampled_steps(states.len() - 1, stride) {
        let means = ctx.space.plain_means(&states[k]);
        let sats = saturations.map(|s| ctx.space.plain_means(&s[k]));
        let batch = exec.try_map_range(graph.edges.len(), |e| {
            let edge = &graph.edges[e];
            let target = compute_transmissibility(ctx, edge, &means, sats.as_deref())?;
            Ok(Sample {
                edge: e,
                step: k,
                class: edge.class,
                features: edge_features(ctx, edge, &means, sats.as_deref()),
                t: target.t,
                tw: target.tw,
            })
        })?;
        samples.extend(batch);
    }
    let counts = EdgeClass::ALL.map(|c| samples.iter().filter(|s| s.class == c).count());
    log::info!("dataset: {} samples, per class {:?}", samples.len(), counts);
    Ok(Dataset {
        feature_names: feature_names(two),
        samples,
        two_phase: two,
        seed,
    })
}

impl Dataset {
    pub fn class_indices(&self, class: EdgeClass) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].class == class).collect()
    }

    /// Deterministic per-class 80:20 split; validation size is `floor(0.2 n)`.
    pub fn split(&self) -> BTreeMap<EdgeClass, (Vec<usize>, Vec<usize>)> {
        EdgeClass::ALL
            .into_iter()
            .map(|c| {
                let mut idx = self.class_indices(c);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(c.index() as u64));
                idx.shuffle(&mut rng);
                let nv = idx.len() / 5;
                let val = idx[..nv].to_vec();
                let train = idx[nv..].to_vec();
                (c, (train, val))
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["edge".to_string(), "step".into(), "class".into()];
        header.extend(self.feature_names.iter().cloned());
        header.push("t".into());
        if self.two_phase {
            header.push("tw".into());
        }
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut rec = vec![s.edge.to_string(), s.step.to_string(), s.class.name().to_string()];
            rec.extend(s.features.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", s.t));
            if self.two_phase {
                rec.push(format!("{:e}", s.tw.unwrap_or(f64::NAN)));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| NlmcError::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| NlmcError::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|s| s.to_string()).collect();
        if header.len() < 5 || header[..3] != ["edge", "step", "class"] {
            return Err(NlmcError::Parse("dataset header must start with edge,step,class".into()));
        }
        let two_phase = header.last().map(|s| s == "tw").unwrap_or(false);
        let nt = if two_phase { 2 } else { 1 };
        let feature_names = header[3..header.len() - nt].to_vec();
        let num = |s: &str| s.parse::<f64>().map_err(|e| NlmcError::Parse(format!("'{s}': {e}")));
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let edge = rec[0].parse().map_err(|e| NlmcError::Parse(format!("edge: {e}")))?;
            let step = rec[1].parse().map_err(|e| NlmcError::Parse(format!("step: {e}")))?;
            let class = EdgeClass::parse(&rec[2])?;
            let features = (3..3 + feature_names.len()).map(|i| num(&rec[i])).collect::<Result<Vec<_>>>()?;
            let t = num(&rec[3 + feature_names.len()])?;
            let tw = if two_phase { Some(num(&rec[4 + feature_names.len()])?) } else { None };
            samples.push(Sample {
                edge,
                step,
                class,
                features,
                t,
                tw,
            });
        }
        Ok(Self {
            feature_names,
            samples,
            two_phase,
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| NlmcError::io(path, e))
    }

    pub fn read(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NlmcError::io(path, e))?;
        Self::from_csv(&text, seed)
    }
}

fn csv_err(e: csv::Error) -> NlmcError {
    NlmcError::Parse(format!("csv: {e}"))
}
