use super::PrototypeRepository;
use crate::error::{Error, Result};
use crate::tensor::tape::{cosine_sim_value, softmax_rows_value};
use crate::tensor::{DenseMatrix, Tape, Var};

/// Frozen side of the distillation loss: the present anchors and the global
/// model's similarity distributions over them.
#[derive(Clone, Debug)]
pub struct FkdTarget {
    anchors: DenseMatrix,
    q: DenseMatrix,
    nodes: Option<Vec<usize>>,
    temperature: f64,
}

impl FkdTarget {
    /// `nodes = None` evaluates every row.
    pub fn new(
        global_hidden: &DenseMatrix,
        repo: &PrototypeRepository,
        nodes: Option<&[usize]>,
        temperature: f64,
    ) -> Result<Self> {
        if repo.num_present() == 0 {
            return Err(Error::invalid(
                "prototype repository is empty; skip the distillation term until the first broadcast",
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
        }
        if let Some(idx) = nodes {
            if idx.is_empty() {
                return Err(Error::invalid("distillation node subset is empty"));
            }
        }
        let anchors = repo.present_anchors();
        let rows = match nodes {
            Some(idx) => global_hidden.select_rows(idx),
            None => global_hidden.clone(),
        };
        let sims = cosine_sim_value(&rows, &anchors)?.scale(1.0 / temperature);
        Ok(Self {
            anchors,
            q: softmax_rows_value(&sims),
            nodes: nodes.map(<[usize]>::to_vec),
            temperature,
        })
    }

    /// Mean over nodes of `KL(softmax(φ(h_local, 𝓗)) ‖ softmax(φ(h_global, 𝓗)))`.
    pub fn loss(&self, tape: &mut Tape, local_hidden: Var) -> Result<Var> {
        let rows = match &self.nodes {
            Some(idx) => tape.select_rows(local_hidden, idx)?,
            None => local_hidden,
        };
        let sims = tape.cosine_sim_rows(rows, &self.anchors)?;
        let scaled = if self.temperature == 1.0 {
            sims
        } else {
            tape.scale(sims, 1.0 / self.temperature)?
        };
        let p = tape.softmax_rows(scaled)?;
        let q = tape.constant(self.q.clone());
        tape.kl_rows(p, q)
    }
}

/// One-shot form of [`FkdTarget::loss`].
pub fn fkd_loss(
    tape: &mut Tape,
    local_hidden: Var,
    global_hidden: &DenseMatrix,
    repo: &PrototypeRepository,
    nodes: Option<&[usize]>,
    temperature: f64,
) -> Result<Var> {
    FkdTarget::new(global_hidden, repo, nodes, temperature)?.loss(tape, local_hidden)
}
