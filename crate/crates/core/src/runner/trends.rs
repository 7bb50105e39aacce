use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{RecipeName, Variant, LEFT_QFS};
use crate::metrics::ResultGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotEvaluable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: u8,
    pub statement: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub claims: Vec<Claim>,
}

impl TrendReport {
    pub fn claim(&self, id: u8) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }
}

impl fmt::Display for TrendReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.claims {
            let v = match c.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::NotEvaluable => "NOT EVALUABLE",
            };
            writeln!(f, "[{v}] claim {}: {} ({})", c.id, c.statement, c.detail)?;
        }
        Ok(())
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Mean of the cell means over `cells`, or `None` if any cell is absent.
fn mean_over(grid: &ResultGrid, model: &str, cells: &[(u8, Variant)]) -> Option<f64> {
    let mut sum = 0.0;
    for &(q, v) in cells {
        sum += grid.get(model, q, v)?.mean;
    }
    Some(sum / cells.len() as f64)
}

fn not_evaluable(id: u8, statement: &str, why: &str) -> Claim {
    Claim {
        id,
        statement: statement.into(),
        verdict: Verdict::NotEvaluable,
        detail: why.into(),
    }
}

/// Checks the four qualitative findings on a result grid.
pub fn compare_trends(grid: &ResultGrid) -> TrendReport {
    let high = RecipeName::HighQf.display_name();
    let wide = RecipeName::WideQf.display_name();
    let rec = RecipeName::HighQfRec.display_name();
    let mut claims = Vec::new();

    let s1 = "best MCC rises with the QF pair within each model (lossless)";
    let models = grid.models();
    let mut detail = Vec::new();
    let mut verdict = if models.is_empty() { Verdict::NotEvaluable } else { Verdict::Pass };
    for m in &models {
        let ys: Option<Vec<f64>> = LEFT_QFS.iter().map(|&q| grid.get(m, q, Variant::Lossless).map(|c| c.mean)).collect();
        match ys {
            Some(ys) => {
                let xs: Vec<f64> = LEFT_QFS.iter().map(|&q| f64::from(q)).collect();
                let rho = spearman(&xs, &ys);
                detail.push(format!("{m} rho={rho:.3}"));
                if rho <= 0.0 && verdict == Verdict::Pass {
                    verdict = Verdict::Fail;
                }
            }
            None => {
                detail.push(format!("{m} incomplete"));
                verdict = Verdict::NotEvaluable;
            }
        }
    }
    claims.push(Claim {
        id: 1,
        statement: s1.into(),
        verdict,
        detail: if detail.is_empty() { "no models".into() } else { detail.join(", ") },
    });

    let s2 = "WideQF does not beat HighQF on QF pairs from 70/80 up (lossless)";
    let hi_cells: Vec<(u8, Variant)> = LEFT_QFS.iter().filter(|&&q| q >= 70).map(|&q| (q, Variant::Lossless)).collect();
    claims.push(match (mean_over(grid, wide, &hi_cells), mean_over(grid, high, &hi_cells)) {
        (Some(w), Some(h)) => Claim {
            id: 2,
            statement: s2.into(),
            verdict: if w <= h { Verdict::Pass } else { Verdict::Fail },
            detail: format!("{wide}={w:.4} {high}={h:.4}"),
        },
        _ => not_evaluable(2, s2, "missing WideQF or HighQF cells"),
    });

    let s3 = "HighQFRec is at least HighQF on recompressed variants with Rec. QF >= 70";
    let rec_cells: Vec<(u8, Variant)> = LEFT_QFS
        .iter()
        .flat_map(|&q| [70u8, 80, 90, 95, 100].map(|r| (q, Variant::Recompressed(r))))
        .collect();
    claims.push(match (mean_over(grid, rec, &rec_cells), mean_over(grid, high, &rec_cells)) {
        (Some(r), Some(h)) => Claim {
            id: 3,
            statement: s3.into(),
            verdict: if r >= h { Verdict::Pass } else { Verdict::Fail },
            detail: format!("{rec}={r:.4} {high}={h:.4}"),
        },
        _ => not_evaluable(3, s3, "missing recompressed cells"),
    });

    let s4 = "HighQFRec may trail HighQF on the lossless variant (permitted cost)";
    let lossless: Vec<(u8, Variant)> = LEFT_QFS.iter().map(|&q| (q, Variant::Lossless)).collect();
    claims.push(match (mean_over(grid, rec, &lossless), mean_over(grid, high, &lossless)) {
        (Some(r), Some(h)) => Claim {
            id: 4,
            statement: s4.into(),
            verdict: Verdict::Pass,
            detail: format!(
                "{rec}={r:.4} {high}={h:.4} ({})",
                if r <= h { "cost observed" } else { "no cost observed" }
            ),
        },
        _ => not_evaluable(4, s4, "missing lossless cells"),
    });

    TrendReport { claims }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate_grid, EvalRecord, Polarity};

    fn grid_with(f: impl Fn(&str, u8, Variant) -> f64, models: &[&str], variants: &[Variant]) -> ResultGrid {
        let mut rs = Vec::new();
        for m in models {
            for &q in &LEFT_QFS {
                for &v in variants {
                    rs.push(EvalRecord {
                        model: m.to_string(),
                        source_id: "s".into(),
                        left_qf: q,
                        right_qf: q + 10,
                        variant: v,
                        best_mcc: f(m, q, v),
                        best_threshold: 0.0,
                        polarity: Polarity::Positive,
                    });
                }
            }
        }
        aggregate_grid(&rs).unwrap()
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // ties get average ranks
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]) - 0.948_683_298_050_513_8).abs() < 1e-12);
    }

    #[test]
    fn full_grid_has_four_verdicts() {
        let g = grid_with(
            |m, q, v| {
                let base = f64::from(q) / 100.0;
                match (m, v) {
                    ("HighQF", Variant::Recompressed(_)) => base * 0.2,
                    ("WideQF", _) => base * 0.9,
                    _ => base,
                }
            },
            &["HighQF", "WideQF", "HighQFRec"],
            &Variant::all(),
        );
        let r = compare_trends(&g);
        assert_eq!(r.claims.len(), 4);
        assert!(r.claims.iter().all(|c| c.verdict == Verdict::Pass), "{r}");
    }

    #[test]
    fn lossless_only_gates_claim_three() {
        let g = grid_with(|_, q, _| f64::from(q) / 100.0, &["HighQF", "HighQFRec"], &[Variant::Lossless]);
        let r = compare_trends(&g);
        assert_eq!(r.claim(3).unwrap().verdict, Verdict::NotEvaluable);
        assert_eq!(r.claim(2).unwrap().verdict, Verdict::NotEvaluable);
        assert_eq!(r.claim(1).unwrap().verdict, Verdict::Pass);
    }

    #[test]
    fn constant_grid_fails_claim_one() {
        let g = grid_with(|_, _, _| 0.5, &["HighQF"], &[Variant::Lossless]);
        let c = compare_trends(&g).claim(1).unwrap().clone();
        assert_eq!(c.verdict, Verdict::Fail);
        assert!(c.detail.contains("rho=0.000"));
    }
}
