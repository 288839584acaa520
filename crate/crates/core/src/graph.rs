//! Node features and the heterogeneous drug / cell-line / gene graph.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DtiMatrix, ExpressionMatrix, LabeledResponse, Task};
use crate::numcore::{EdgeIndex, NumError, Tensor};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("similarity needs at least one feature column")]
    NoFeatures,
    #[error("non-finite feature at row {row}")]
    NonFinite { row: usize },
    #[error("{kind:?} edge ({src}, {dst}) outside its block")]
    OutOfRange {
        kind: EdgeKind,
        src: usize,
        dst: usize,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarityKind {
    Drug,
    Cell,
    Gene,
}

/// Square RBF kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub kind: SimilarityKind,
    pub values: Tensor,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.rows()
    }
}

/// `exp(-gamma * ||x_i - x_j||^2)` with `gamma = 1 / cols`, over the rows of
/// a row-major `rows x cols` matrix.
pub fn rbf_similarity(
    kind: SimilarityKind,
    rows: usize,
    cols: usize,
    x: &[f64],
) -> Result<SimilarityMatrix, GraphError> {
    if cols == 0 {
        return Err(GraphError::NoFeatures);
    }
    assert_eq!(x.len(), rows * cols, "feature matrix has wrong length");
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(GraphError::NonFinite { row: bad / cols });
    }
    let gamma = 1.0 / cols as f64;
    let mut s = vec![0.0; rows * rows];
    for i in 0..rows {
        s[i * rows + i] = 1.0;
        let xi = &x[i * cols..(i + 1) * cols];
        for j in i + 1..rows {
            let xj = &x[j * cols..(j + 1) * cols];
            let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-gamma * d2).exp();
            s[i * rows + j] = k;
            s[j * rows + i] = k;
        }
    }
    Ok(SimilarityMatrix {
        kind,
        values: Tensor::matrix(rows, rows, s)?,
    })
}

/// Drug, cell-line and gene similarity features for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub drug: SimilarityMatrix,
    pub cell: SimilarityMatrix,
    pub gene: SimilarityMatrix,
}

impl NodeFeatures {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, GraphError> {
        let e = &ds.expression;
        let (m, l) = (e.cells.len(), e.genes.len());
        let mut by_gene = vec![0.0; l * m];
        for c in 0..m {
            for g in 0..l {
                by_gene[g * m + c] = e.get(c, g);
            }
        }
        let fp = &ds.fingerprints;
        Ok(Self {
            drug: rbf_similarity(SimilarityKind::Drug, fp.drugs.len(), fp.nbits, &fp.bits)?,
            cell: rbf_similarity(SimilarityKind::Cell, m, l, &e.values)?,
            gene: rbf_similarity(SimilarityKind::Gene, l, m, &by_gene)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    DrugCell,
    DrugGene,
    CellGene,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::DrugCell => "drug-cell",
            EdgeKind::DrugGene => "drug-gene",
            EdgeKind::CellGene => "cell-gene",
        }
    }
}

/// An edge between two blocks, indexed within those blocks
/// (`a` in the first block named by the kind, `b` in the second).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdConvention {
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgMode {
    Train,
    Interpret,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphOptions {
    /// Keep weight-0 drug-gene edges for unknown interactions in train mode.
    pub zero_padding: bool,
    /// Keep weight-0 drug-cell edges for training pairs labeled resistant.
    pub keep_zero_labels: bool,
    /// Min-max scale regression response weights (fitted on training pairs).
    pub scale_regression: bool,
    pub cg_std: StdConvention,
    /// Weight for unknown drug-gene pairs in interpret mode.
    pub soft_edge: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            zero_padding: true,
            keep_zero_labels: true,
            scale_regression: true,
            cg_std: StdConvention::Population,
            soft_edge: 0.5,
        }
    }
}

/// Drug-cell edges from every labeled pair outside `test_mask`.
pub fn build_dc(
    labels: &LabeledResponse,
    test_mask: &HashSet<(usize, usize)>,
    opts: &GraphOptions,
) -> Vec<BlockEdge> {
    let train: Vec<_> = labels
        .entries
        .iter()
        .filter(|e| !test_mask.contains(&(e.drug, e.cell)))
        .collect();
    let (lo, hi) = train
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.value), hi.max(e.value))
        });
    let rescale = |v: f64| {
        if labels.task == Task::Regression && opts.scale_regression {
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                1.0
            }
        } else {
            v
        }
    };
    train
        .iter()
        .map(|e| BlockEdge {
            a: e.drug,
            b: e.cell,
            weight: rescale(e.value),
        })
        .filter(|e| labels.task == Task::Regression || opts.keep_zero_labels || e.weight != 0.0)
        .collect()
}

/// Cell-gene edges: per-gene z-scores across cell lines, kept where positive.
pub fn build_cg(expr: &ExpressionMatrix, std: StdConvention) -> Vec<BlockEdge> {
    let (m, l) = (expr.cells.len(), expr.genes.len());
    let mut out = Vec::new();
    if m < 2 {
        return out;
    }
    for g in 0..l {
        let mean = (0..m).map(|c| expr.get(c, g)).sum::<f64>() / m as f64;
        let ss: f64 = (0..m).map(|c| (expr.get(c, g) - mean).powi(2)).sum();
        let denom = match std {
            StdConvention::Population => m as f64,
            StdConvention::Sample => (m - 1) as f64,
        };
        let sd = (ss / denom).sqrt();
        if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        for c in 0..m {
            let z = (expr.get(c, g) - mean) / sd;
            if z > 0.0 {
                out.push(BlockEdge {
                    a: c,
                    b: g,
                    weight: z,
                });
            }
        }
    }
    out
}

/// Drug-gene edges: known interactions at weight 1; unknown pairs are absent,
/// weight 0 with `zero_padding`, or `soft_edge` in interpret mode.
pub fn build_dg(dti: &DtiMatrix, mode: DgMode, opts: &GraphOptions) -> Vec<BlockEdge> {
    let (n, l) = (dti.drugs.len(), dti.genes.len());
    let unknown = match mode {
        DgMode::Interpret => Some(opts.soft_edge),
        DgMode::Train if opts.zero_padding => Some(0.0),
        DgMode::Train => None,
    };
    let mut out = Vec::new();
    for d in 0..n {
        for g in 0..l {
            let weight = if dti.is_known(d, g) {
                Some(1.0)
            } else {
                unknown
            };
            if let Some(weight) = weight {
                out.push(BlockEdge { a: d, b: g, weight });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Symmetric edge list over drugs `[0, n)`, cells `[n, n+m)` and genes
/// `[n+m, n+m+l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedGraph {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub edges: Vec<Edge>,
}

pub fn assemble(
    n: usize,
    m: usize,
    l: usize,
    dc: &[BlockEdge],
    dg: &[BlockEdge],
    cg: &[BlockEdge],
) -> Result<UnifiedGraph, GraphError> {
    let mut edges = Vec::with_capacity(2 * (dc.len() + dg.len() + cg.len()));
    let blocks = [
        (EdgeKind::DrugCell, dc, 0, n, n, m),
        (EdgeKind::DrugGene, dg, 0, n, n + m, l),
        (EdgeKind::CellGene, cg, n, m, n + m, l),
    ];
    for (kind, list, off_a, size_a, off_b, size_b) in blocks {
        for e in list {
            if e.a >= size_a || e.b >= size_b {
                return Err(GraphError::OutOfRange {
                    kind,
                    src: e.a,
                    dst: e.b,
                });
            }
            let (u, v) = (off_a + e.a, off_b + e.b);
            edges.push(Edge {
                src: u,
                dst: v,
                weight: e.weight,
                kind,
            });
            edges.push(Edge {
                src: v,
                dst: u,
                weight: e.weight,
                kind,
            });
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst, e.kind));
    Ok(UnifiedGraph { n, m, l, edges })
}

impl UnifiedGraph {
    /// Builds the graph for `ds` with the labeled pairs in `test_mask` hidden.
    pub fn build(
        ds: &Dataset,
        test_mask: &HashSet<(usize, usize)>,
        mode: DgMode,
        opts: &GraphOptions,
    ) -> Result<Self, GraphError> {
        let dc = build_dc(&ds.labels, test_mask, opts);
        let dg = build_dg(&ds.dti, mode, opts);
        let cg = build_cg(&ds.expression, opts.cg_std);
        assemble(ds.n_drugs(), ds.n_cells(), ds.n_genes(), &dc, &dg, &cg)
    }

    pub fn num_nodes(&self) -> usize {
        self.n + self.m + self.l
    }

    pub fn drug_node(&self, d: usize) -> usize {
        d
    }

    pub fn cell_node(&self, c: usize) -> usize {
        self.n + c
    }

    pub fn gene_node(&self, g: usize) -> usize {
        self.n + self.m + g
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let t = self.num_nodes();
        let mut a = vec![vec![0.0; t]; t];
        for e in &self.edges {
            a[e.src][e.dst] = e.weight;
        }
        a
    }

    pub fn edge_index(&self) -> Result<Rc<EdgeIndex>, GraphError> {
        Ok(Rc::new(EdgeIndex::new(
            self.edges.iter().map(|e| e.src).collect(),
            self.edges.iter().map(|e| e.dst).collect(),
            self.edges.iter().map(|e| e.weight).collect(),
            self.num_nodes(),
        )?))
    }

    /// Tab-separated `src dst weight kind` lines with a header.
    pub fn dump(&self) -> String {
        let mut s = String::from("src\tdst\tweight\tkind\n");
        for e in &self.edges {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.src, e.dst, e.weight, e.kind.name());
        }
        s
    }

    /// Bitwise comparison including weights, for leakage audits.
    pub fn bit_identical(&self, other: &Self) -> bool {
        (self.n, self.m, self.l) == (other.n, other.m, other.l)
            && self.edges.len() == other.edges.len()
            && self.edges.iter().zip(&other.edges).all(|(a, b)| {
                (a.src, a.dst, a.kind) == (b.src, b.dst, b.kind)
                    && a.weight.to_bits() == b.weight.to_bits()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledEntry;

    fn expr(cells: usize, genes: usize, values: Vec<f64>) -> ExpressionMatrix {
        ExpressionMatrix {
            cells: (0..cells).map(|c| format!("c{c}")).collect(),
            genes: (0..genes).map(|g| format!("g{g}")).collect(),
            values,
        }
    }

    #[test]
    fn rbf_two_points() {
        let s = rbf_similarity(SimilarityKind::Drug, 2, 2, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.values.get(0, 0), 1.0);
        assert!((s.values.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(s.values.get(0, 1), s.values.get(1, 0));
        assert!(matches!(
            rbf_similarity(SimilarityKind::Drug, 2, 0, &[]),
            Err(GraphError::NoFeatures)
        ));
    }

    #[test]
    fn cg_single_positive_z() {
        let e = expr(3, 1, vec![1.0, 2.0, 3.0]);
        let edges = build_cg(&e, StdConvention::Population);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].a, 2);
        assert!((edges[0].weight - 1.5f64.sqrt()).abs() < 1e-12);
        assert!(build_cg(&expr(3, 1, vec![4.0; 3]), StdConvention::Population).is_empty());
    }

    #[test]
    fn dg_modes() {
        let dti = DtiMatrix {
            drugs: vec!["a".into(), "b".into()],
            genes: vec!["x".into(), "y".into(), "z".into()],
            known: vec![false, true, false, false, false, false],
        };
        let off = GraphOptions {
            zero_padding: false,
            ..Default::default()
        };
        assert_eq!(build_dg(&dti, DgMode::Train, &off).len(), 1);
        let padded = build_dg(&dti, DgMode::Train, &GraphOptions::default());
        assert_eq!(padded.len(), 6);
        assert_eq!(padded.iter().filter(|e| e.weight == 0.0).count(), 5);
        let soft = build_dg(&dti, DgMode::Interpret, &off);
        assert_eq!(soft.len(), 6);
        assert_eq!(soft.iter().filter(|e| e.weight == 0.5).count(), 5);
        assert_eq!(soft.iter().filter(|e| e.weight == 1.0).count(), 1);
    }

    #[test]
    fn dc_masks_test_pairs() {
        let labels = LabeledResponse {
            task: Task::Classification,
            drugs: vec!["d".into()],
            cells: vec!["a".into(), "b".into()],
            entries: vec![
                LabeledEntry {
                    drug: 0,
                    cell: 0,
                    value: 1.0,
                },
                LabeledEntry {
                    drug: 0,
                    cell: 1,
                    value: 0.0,
                },
            ],
        };
        let all: HashSet<_> = [(0, 0), (0, 1)].into_iter().collect();
        assert!(build_dc(&labels, &all, &GraphOptions::default()).is_empty());
        let one: HashSet<_> = [(0, 1)].into_iter().collect();
        let e = build_dc(&labels, &one, &GraphOptions::default());
        assert_eq!(
            e,
            vec![BlockEdge {
                a: 0,
                b: 0,
                weight: 1.0
            }]
        );
    }

    #[test]
    fn assemble_block_structure() {
        let g = assemble(2, 3, 4, &[], &[], &[]).unwrap();
        assert_eq!(g.num_nodes(), 9);
        assert!(g.edges.is_empty());
        let g = assemble(
            2,
            3,
            4,
            &[BlockEdge {
                a: 1,
                b: 2,
                weight: 1.0,
            }],
            &[BlockEdge {
                a: 0,
                b: 3,
                weight: 0.5,
            }],
            &[BlockEdge {
                a: 2,
                b: 0,
                weight: 0.7,
            }],
        )
        .unwrap();
        let a = g.dense();
        for (i, row) in a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, a[j][i]);
            }
        }
        assert_eq!(a[1][4], 1.0);
        assert_eq!(a[0][8], 0.5);
        assert_eq!(a[4][5], 0.7);
        assert!(assemble(
            2,
            3,
            4,
            &[BlockEdge {
                a: 2,
                b: 0,
                weight: 1.0
            }],
            &[],
            &[]
        )
        .is_err());
    }
}
