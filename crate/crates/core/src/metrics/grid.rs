use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mcc::Polarity;
use crate::dataset::{Variant, LEFT_QFS, QF_PAIR_GAP};
use crate::error::{Error, Result};

/// One scored composite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub source_id: String,
    pub left_qf: u8,
    pub right_qf: u8,
    pub variant: Variant,
    pub best_mcc: f64,
    pub best_threshold: f64,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub left_qf: u8,
    pub variant: Variant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub count: usize,
    /// Population standard deviation.
    pub std: f64,
}

impl CellStats {
    /// Summed in sorted order so the result does not depend on input order.
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        dev.sort_by(f64::total_cmp);
        Self {
            mean,
            count: v.len(),
            std: (dev.iter().sum::<f64>() / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultGrid {
    pub cells: BTreeMap<CellKey, CellStats>,
}

impl ResultGrid {
    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.cells.keys().map(|k| &k.model).collect();
        set.into_iter().cloned().collect()
    }

    pub fn get(&self, model: &str, left_qf: u8, variant: Variant) -> Option<&CellStats> {
        self.cells.get(&CellKey {
            model: model.to_string(),
            left_qf,
            variant,
        })
    }

    /// Cells of the full QF-pair x variant grid absent for `models`.
    pub fn missing(&self, models: &[String]) -> Vec<CellKey> {
        let mut out = Vec::new();
        for model in models {
            for &left_qf in &LEFT_QFS {
                for variant in Variant::all() {
                    let key = CellKey {
                        model: model.clone(),
                        left_qf,
                        variant,
                    };
                    if !self.cells.contains_key(&key) {
                        out.push(key);
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["model", "left_qf", "right_qf", "variant", "mean_mcc", "count", "std_mcc"])?;
        for (k, s) in &self.cells {
            w.write_record([
                k.model.clone(),
                k.left_qf.to_string(),
                (k.left_qf + QF_PAIR_GAP).to_string(),
                k.variant.to_string(),
                format!("{:.6}", s.mean),
                s.count.to_string(),
                format!("{:.6}", s.std),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Per-image results averaged per (model, QF pair, variant) cell.
pub fn aggregate_grid(records: &[EvalRecord]) -> Result<ResultGrid> {
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        if !(-1.0..=1.0).contains(&r.best_mcc) {
            return Err(Error::Data(format!("MCC {} outside [-1, 1]", r.best_mcc)));
        }
        if !seen.insert((r.model.clone(), r.left_qf, r.variant, r.source_id.clone())) {
            return Err(Error::Data(format!(
                "duplicate result for model {} image {} qf{} {}",
                r.model, r.source_id, r.left_qf, r.variant
            )));
        }
        groups
            .entry(CellKey {
                model: r.model.clone(),
                left_qf: r.left_qf,
                variant: r.variant,
            })
            .or_default()
            .push(r.best_mcc);
    }
    Ok(ResultGrid {
        cells: groups
            .into_iter()
            .map(|(k, v)| (k, CellStats::from_values(&v)))
            .collect(),
    })
}

pub const RESULTS_HEADER: [&str; 8] = [
    "model",
    "source_id",
    "left_qf",
    "right_qf",
    "variant",
    "best_mcc",
    "best_threshold",
    "polarity",
];

pub fn write_results_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            r.model.clone(),
            r.source_id.clone(),
            r.left_qf.to_string(),
            r.right_qf.to_string(),
            r.variant.to_string(),
            format!("{}", r.best_mcc),
            format!("{}", r.best_threshold),
            r.polarity.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad number '{}' in {}", field(i), path.display())))
        };
        let qf = |i: usize| -> Result<u8> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad QF '{}' in {}", field(i), path.display())))
        };
        out.push(EvalRecord {
            model: field(0).to_string(),
            source_id: field(1).to_string(),
            left_qf: qf(2)?,
            right_qf: qf(3)?,
            variant: field(4).parse()?,
            best_mcc: num(5)?,
            best_threshold: num(6)?,
            polarity: match field(7) {
                "-1" => Polarity::Negative,
                _ => Polarity::Positive,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn rec(model: &str, src: &str, qf: u8, variant: Variant, mcc: f64) -> EvalRecord {
        EvalRecord {
            model: model.into(),
            source_id: src.into(),
            left_qf: qf,
            right_qf: qf + 10,
            variant,
            best_mcc: mcc,
            best_threshold: 0.0,
            polarity: Polarity::Positive,
        }
    }

    #[test]
    fn cell_mean_and_count() {
        let rs: Vec<_> = [0.2, 0.4, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &m)| rec("HighQF", &format!("s{i}"), 50, Variant::Lossless, m))
            .collect();
        let g = aggregate_grid(&rs).unwrap();
        let c = g.get("HighQF", 50, Variant::Lossless).unwrap();
        assert!((c.mean - 0.4).abs() < 1e-12);
        assert_eq!(c.count, 3);
        assert_eq!(g.missing(&["HighQF".into()]).len(), 15 * 8 - 1);
    }

    #[test]
    fn empty_and_duplicates() {
        assert!(aggregate_grid(&[]).unwrap().cells.is_empty());
        let r = rec("WideQF", "a", 20, Variant::Recompressed(95), 0.1);
        assert!(aggregate_grid(&[r.clone(), r]).is_err());
    }

    #[test]
    fn full_grid_shape_and_order_independence() {
        let mut rs = Vec::new();
        for (mi, model) in ["HighQF", "WideQF", "HighQFRec"].iter().enumerate() {
            for &qf in &LEFT_QFS {
                for v in Variant::all() {
                    for s in 0..3 {
                        let m = ((mi * 7 + qf as usize + s * 13) % 97) as f64 / 97.0 - 0.3;
                        rs.push(rec(model, &format!("s{s}"), qf, v, m));
                    }
                }
            }
        }
        let g = aggregate_grid(&rs).unwrap();
        assert_eq!(g.cells.len(), 3 * 15 * 8);
        assert!(g.missing(&g.models()).is_empty());
        let mut shuffled = rs.clone();
        shuffled.shuffle(&mut crate::seed::rng(1));
        assert_eq!(aggregate_grid(&shuffled).unwrap(), g);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        let rs = vec![
            rec("HighQF", "a", 20, Variant::Lossless, 0.25),
            rec("HighQFRec", "b", 90, Variant::Recompressed(100), -0.125),
        ];
        write_results_csv(&p, &rs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model,source_id,left_qf,right_qf,variant,best_mcc,best_threshold,polarity\n"));
        assert_eq!(read_results_csv(&p).unwrap(), rs);
        aggregate_grid(&rs).unwrap().write_csv(&dir.path().join("grid.csv")).unwrap();
    }
}
