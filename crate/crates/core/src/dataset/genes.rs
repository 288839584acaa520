use std::collections::BTreeSet;

use super::{DtiMatrix, ExpressionMatrix};

/// Genes whose population variance across cell lines ranks in the top
/// `fraction` (rounded up, ties broken by ascending identifier), unioned with
/// every gene that has a known drug-target interaction. Returned indices are
/// ascending. `dti.genes` must equal `expr.genes`.
pub fn select_genes(expr: &ExpressionMatrix, dti: &DtiMatrix, fraction: f64) -> Vec<usize> {
    assert_eq!(expr.genes, dti.genes, "gene axes must be aligned");
    let l = expr.genes.len();
    let m = expr.cells.len();
    let variance: Vec<f64> = (0..l)
        .map(|g| {
            if m == 0 {
                return 0.0;
            }
            let mean = (0..m).map(|c| expr.get(c, g)).sum::<f64>() / m as f64;
            (0..m).map(|c| (expr.get(c, g) - mean).powi(2)).sum::<f64>() / m as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        variance[b]
            .total_cmp(&variance[a])
            .then_with(|| expr.genes[a].cmp(&expr.genes[b]))
    });
    let top = ((l as f64) * fraction.clamp(0.0, 1.0)).ceil() as usize;
    let mut keep: BTreeSet<usize> = order.into_iter().take(top).collect();
    keep.extend(dti.annotated_genes());
    keep.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr(cols: &[&[f64]]) -> ExpressionMatrix {
        let m = cols[0].len();
        ExpressionMatrix {
            cells: (0..m).map(|c| format!("c{c}")).collect(),
            genes: (0..cols.len()).map(|g| format!("g{g}")).collect(),
            values: (0..m)
                .flat_map(|c| cols.iter().map(move |col| col[c]))
                .collect(),
        }
    }

    fn no_dti(e: &ExpressionMatrix, known: &[usize]) -> DtiMatrix {
        let l = e.genes.len();
        DtiMatrix {
            drugs: vec!["d0".into()],
            genes: e.genes.clone(),
            known: (0..l).map(|g| known.contains(&g)).collect(),
        }
    }

    #[test]
    fn single_high_variance_gene() {
        // population variance 100 for gene 3, zero elsewhere
        let flat = [1.0, 1.0];
        let wide = [-10.0, 10.0];
        let cols: Vec<&[f64]> = (0..10)
            .map(|g| if g == 3 { &wide[..] } else { &flat[..] })
            .collect();
        let e = expr(&cols);
        assert_eq!(select_genes(&e, &no_dti(&e, &[]), 0.1), vec![3]);
    }

    #[test]
    fn dti_gene_kept_by_union() {
        let flat = [1.0, 1.0];
        let wide = [-10.0, 10.0];
        let cols: Vec<&[f64]> = (0..10)
            .map(|g| if g == 3 { &wide[..] } else { &flat[..] })
            .collect();
        let e = expr(&cols);
        assert_eq!(select_genes(&e, &no_dti(&e, &[7]), 0.1), vec![3, 7]);
    }

    #[test]
    fn ties_break_by_identifier() {
        let v = [0.0, 2.0];
        let cols: Vec<&[f64]> = vec![&v[..]; 20];
        let mut e = expr(&cols);
        e.genes = (0..20).map(|g| format!("g{:02}", 19 - g)).collect();
        let picked = select_genes(&e, &no_dti(&e, &[]), 0.1);
        let names: Vec<&str> = picked.iter().map(|&g| e.genes[g].as_str()).collect();
        assert_eq!(picked.len(), 2);
        assert!(names.contains(&"g00") && names.contains(&"g01"));
    }
}
