use serde::{Deserialize, Serialize};

use super::InterpretError;
use crate::dataset::DtiMatrix;
use crate::graph::{NodeFeatures, UnifiedGraph};
use crate::model::GtModel;
use crate::smiles::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneScore {
    pub gene: usize,
    /// Head-averaged attention the drug pays to the gene.
    pub score: f64,
    /// `score` divided by the drug's total attention over gene edges.
    pub renormalized: f64,
    pub known: bool,
}

/// Per-drug gene rankings from drug-gene attention coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    /// Hash of the serialized model the scores came from.
    pub checkpoint_id: String,
    pub layer: usize,
    pub drugs: Vec<String>,
    pub genes: Vec<String>,
    /// One list per drug, sorted by descending score, ties by gene id.
    pub ranked: Vec<Vec<GeneScore>>,
}

/// Runs an eval-mode forward pass over `graph` (normally built in interpret
/// mode) and collects, for every drug, the head-mean attention it assigns to
/// each adjacent gene. `layer` defaults to the final layer.
pub fn extract_ac(
    model: &GtModel,
    graph: &UnifiedGraph,
    features: &NodeFeatures,
    dti: &DtiMatrix,
    layer: Option<usize>,
) -> Result<AttentionReport, InterpretError> {
    if model.config.num_layers == 0 {
        return Err(InterpretError::NoLayers);
    }
    if dti.drugs.len() != graph.n || dti.genes.len() != graph.l {
        return Err(InterpretError::Invalid(format!(
            "target matrix is {}x{} but the graph has {} drugs and {} genes",
            dti.drugs.len(),
            dti.genes.len(),
            graph.n,
            graph.l
        )));
    }
    let layer = layer.unwrap_or(model.config.num_layers - 1);
    let (_, alphas) = model.predict_with_attention(graph, features, &[])?;
    let alpha = alphas.get(layer).ok_or(InterpretError::NoLayers)?;
    let heads = alpha.shape()[1];
    let a = alpha.data();
    let gene_start = graph.gene_node(0);
    let mut ranked: Vec<Vec<GeneScore>> = vec![Vec::new(); graph.n];
    for (e, edge) in graph.edges.iter().enumerate() {
        if edge.dst >= graph.n || edge.src < gene_start {
            continue;
        }
        let score = a[e * heads..(e + 1) * heads].iter().sum::<f64>() / heads as f64;
        let gene = edge.src - gene_start;
        ranked[edge.dst].push(GeneScore {
            gene,
            score,
            renormalized: 0.0,
            known: dti.is_known(edge.dst, gene),
        });
    }
    for list in &mut ranked {
        let total: f64 = list.iter().map(|g| g.score).sum();
        for g in list.iter_mut() {
            g.renormalized = if total > 0.0 { g.score / total } else { 0.0 };
        }
        list.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.gene.cmp(&y.gene)));
    }
    Ok(AttentionReport {
        checkpoint_id: format!("{:016x}", fnv1a64(model.to_json().as_bytes())),
        layer,
        drugs: dti.drugs.clone(),
        genes: dti.genes.clone(),
        ranked,
    })
}

impl AttentionReport {
    /// The first `k` genes for `drug`; asking for more than exist returns the
    /// whole list with a warning.
    pub fn top_k(&self, drug: usize, k: usize) -> Result<&[GeneScore], InterpretError> {
        if k == 0 {
            return Err(InterpretError::Invalid("k must be at least 1".into()));
        }
        let list = self
            .ranked
            .get(drug)
            .ok_or_else(|| InterpretError::Invalid(format!("no drug with index {drug}")))?;
        if k > list.len() {
            log::warn!(
                "requested top {k} genes for {} but only {} are linked",
                self.drugs[drug],
                list.len()
            );
        }
        Ok(&list[..k.min(list.len())])
    }

    /// Tab-separated `drug gene score renormalized rank known_dti` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("drug\tgene\tscore\trenormalized\trank\tknown_dti\n");
        for (d, list) in self.ranked.iter().enumerate() {
            for (rank, g) in list.iter().enumerate() {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    self.drugs[d],
                    self.genes[g.gene],
                    g.score,
                    g.renormalized,
                    rank + 1,
                    u8::from(g.known)
                ));
            }
        }
        s
    }

    /// Drug-gene edge list of the top `k` genes per drug.
    pub fn top_k_pairs(&self, k: usize) -> Vec<(usize, usize)> {
        self.ranked
            .iter()
            .enumerate()
            .flat_map(|(d, list)| list.iter().take(k).map(move |g| (d, g.gene)))
            .collect()
    }
}
