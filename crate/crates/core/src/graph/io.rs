//! Text graph format.
//!
//! ```text
//! N d C
//! <label> f_1 ... f_d        (N lines, label -1 = unlabeled)
//! EDGES
//! u v                        (0-indexed, one undirected edge per line)
//! ```
//!
//! An edge listed in both orientations is merged into one undirected edge.
//! Listing the same orientation twice is an error.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    parse_graph(&text)
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| perr(hline, format!("bad header token `{t}`"))))
        .collect::<Result<_>>()?;
    let [n, d, c] = nums[..] else {
        return Err(perr(hline, "header must be `N d C`"));
    };

    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for node in 0..n {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| perr(hline, format!("expected {n} node lines, found {node}")))?;
        let mut toks = line.split_whitespace();
        let label: i64 = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(ln, "bad label"))?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 && (l as usize) < c => Some(l as usize),
            l => return Err(perr(ln, format!("label {l} outside [0, {c})"))),
        });
        let before = features.len();
        for t in toks {
            let v: f64 = t.parse().map_err(|_| perr(ln, format!("bad feature `{t}`")))?;
            if !v.is_finite() {
                return Err(perr(ln, "non-finite feature"));
            }
            features.push(v);
        }
        if features.len() - before != d {
            return Err(perr(ln, format!("expected {d} features, found {}", features.len() - before)));
        }
    }

    match lines.next() {
        Some((_, "EDGES")) => {}
        Some((ln, other)) => return Err(perr(ln, format!("expected EDGES sentinel, found `{other}`"))),
        None => return Err(perr(hline, "missing EDGES sentinel")),
    }

    let mut seen_directed = HashSet::new();
    let mut undirected = HashSet::new();
    let mut edges = Vec::new();
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(perr(ln, "edge line must be `u v`"));
        };
        let u: usize = a.parse().map_err(|_| perr(ln, format!("bad node id `{a}`")))?;
        let v: usize = b.parse().map_err(|_| perr(ln, format!("bad node id `{b}`")))?;
        if u >= n || v >= n {
            return Err(perr(ln, format!("edge ({u}, {v}) references node outside 0..{n}")));
        }
        if u == v {
            log::warn!("line {ln}: dropping self-loop on node {u}");
            continue;
        }
        if !seen_directed.insert((u, v)) {
            return Err(perr(ln, format!("duplicate edge ({u}, {v})")));
        }
        if undirected.insert((u.min(v), u.max(v))) {
            edges.push((u, v));
        }
    }
    let features = DenseMatrix::new(n, d, features)?;
    Graph::new(n, edges, features, labels, c)
}

pub fn write_graph(g: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", g.num_nodes(), g.feature_dim(), g.num_classes());
    for u in 0..g.num_nodes() {
        let label = g.labels()[u].map_or(-1, |c| c as i64);
        let _ = write!(out, "{label}");
        for &x in g.features().row(u) {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    out.push_str("EDGES\n");
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_graph(g))?;
    Ok(())
}
