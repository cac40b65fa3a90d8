use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const DEFAULT_ANCHORS_PER_CLASS: usize = 4;

/// Per-class mean embedding of one client's selected, labeled nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPrototypes {
    pub hidden_dim: usize,
    /// `None` when the client selected no node of that class.
    pub prototypes: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl LocalPrototypes {
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }
}

/// Mean of `hidden` rows over `selected` nodes grouped by label. Selected
/// nodes whose label is `None` do not contribute.
pub fn local_prototypes(
    hidden: &DenseMatrix,
    labels: &[Option<usize>],
    selected: &[usize],
    num_classes: usize,
) -> Result<LocalPrototypes> {
    if selected.is_empty() {
        return Err(Error::invalid("local_prototypes: no selected nodes"));
    }
    if labels.len() != hidden.rows() {
        return Err(Error::invalid("local_prototypes: labels and embeddings differ in length"));
    }
    let d = hidden.cols();
    let mut sums = vec![vec![0.0; d]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for &u in selected {
        let Some(c) = labels.get(u).copied().flatten() else { continue };
        if c >= num_classes {
            return Err(Error::invalid(format!("local_prototypes: label {c} out of range")));
        }
        counts[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(hidden.row(u)) {
            *s += x;
        }
    }
    let prototypes = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    Ok(LocalPrototypes {
        hidden_dim: d,
        prototypes,
        counts,
    })
}

/// Server-side stack of class anchors, class-major then anchor-minor:
/// row `c·anchors_per_class + k` is anchor `k` of class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeRepository {
    pub num_classes: usize,
    pub anchors_per_class: usize,
    pub anchors: DenseMatrix,
    pub present: Vec<bool>,
}

impl PrototypeRepository {
    pub fn index(&self, class: usize, anchor: usize) -> usize {
        class * self.anchors_per_class + anchor
    }

    pub fn num_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Rows of the present anchors, in repository order.
    pub fn present_anchors(&self) -> DenseMatrix {
        let idx: Vec<usize> = (0..self.present.len()).filter(|&i| self.present[i]).collect();
        self.anchors.select_rows(&idx)
    }

    /// CSV rows of `class,anchor,present,v_0,...,v_{d-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema=s2fgl.repository.v1\nclass,anchor,present");
        for j in 0..self.anchors.cols() {
            let _ = write!(out, ",v{j}");
        }
        out.push('\n');
        for c in 0..self.num_classes {
            for k in 0..self.anchors_per_class {
                let i = self.index(c, k);
                let _ = write!(out, "{c},{k},{}", u8::from(self.present[i]));
                for &x in self.anchors.row(i) {
                    let _ = write!(out, ",{x:?}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, usize, bool, Vec<f64>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("class,") {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                line: ln + 1,
                msg: msg.to_string(),
            };
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < 3 {
                return Err(perr("expected class,anchor,present,..."));
            }
            let c = cells[0].parse().map_err(|_| perr("bad class"))?;
            let k = cells[1].parse().map_err(|_| perr("bad anchor"))?;
            let present = match cells[2] {
                "1" => true,
                "0" => false,
                _ => return Err(perr("present flag must be 0 or 1")),
            };
            let values = cells[3..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| perr("bad value")))
                .collect::<Result<Vec<_>>>()?;
            rows.push((c, k, present, values));
        }
        let num_classes = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let anchors_per_class = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let d = rows.first().map_or(0, |r| r.3.len());
        if rows.len() != num_classes * anchors_per_class || rows.iter().any(|r| r.3.len() != d) {
            return Err(Error::invalid("repository CSV is not a complete class × anchor grid"));
        }
        let mut repo = PrototypeRepository {
            num_classes,
            anchors_per_class,
            anchors: DenseMatrix::zeros(rows.len(), d),
            present: vec![false; rows.len()],
        };
        for (c, k, present, values) in rows {
            let i = repo.index(c, k);
            repo.present[i] = present;
            repo.anchors.row_mut(i).copy_from_slice(&values);
        }
        Ok(repo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Builds every anchor of every class from an independent random subset of
/// `ceil(fraction · holders)` clients holding that class, weighting each
/// client prototype by its node count.
pub fn aggregate_global_repository(
    all_locals: &[LocalPrototypes],
    fraction: f64,
    anchors_per_class: usize,
    rng: &mut impl Rng,
) -> Result<PrototypeRepository> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("prototype fraction must lie in (0, 1], got {fraction}")));
    }
    if anchors_per_class == 0 {
        return Err(Error::invalid("anchors_per_class must be >= 1"));
    }
    let first = all_locals
        .first()
        .ok_or_else(|| Error::invalid("aggregate_global_repository: no clients"))?;
    let (num_classes, d) = (first.num_classes(), first.hidden_dim);
    if all_locals.iter().any(|l| l.num_classes() != num_classes || l.hidden_dim != d) {
        return Err(Error::invalid("clients disagree on class count or embedding size"));
    }
    let mut repo = PrototypeRepository {
        num_classes,
        anchors_per_class,
        anchors: DenseMatrix::zeros(num_classes * anchors_per_class, d),
        present: vec![false; num_classes * anchors_per_class],
    };
    for c in 0..num_classes {
        let holders: Vec<usize> = (0..all_locals.len())
            .filter(|&i| all_locals[i].prototypes[c].is_some())
            .collect();
        if holders.is_empty() {
            log::warn!("class {c} has no prototype on any client; its anchors are absent");
            continue;
        }
        let take = ((fraction * holders.len() as f64 - 1e-9).ceil() as usize).clamp(1, holders.len());
        for k in 0..anchors_per_class {
            let mut chosen = sample(rng, holders.len(), take).into_vec();
            chosen.sort_unstable();
            let row = repo.index(c, k);
            let mut total = 0.0;
            let mut acc = vec![0.0; d];
            for &h in &chosen {
                let local = &all_locals[holders[h]];
                let w = local.counts[c] as f64;
                total += w;
                for (a, &x) in acc.iter_mut().zip(local.prototypes[c].as_ref().expect("holder")) {
                    *a += w * x;
                }
            }
            for (o, a) in repo.anchors.row_mut(row).iter_mut().zip(acc) {
                *o = a / total;
            }
            repo.present[row] = true;
        }
    }
    Ok(repo)
}
