//! Dice overlap, binary intensity ratio (BIR) and report aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume3;

fn same_shape(a: &LabelVolume3, b: &LabelVolume3) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)` for every nonzero label present in either volume.
pub fn dice_per_label(a: &LabelVolume3, b: &LabelVolume3) -> Result<BTreeMap<u16, f64>> {
    same_shape(a, b)?;
    // label -> (|A|, |B|, |A∩B|)
    let mut counts: BTreeMap<u16, (u64, u64, u64)> = BTreeMap::new();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if x != 0 {
            counts.entry(x).or_default().0 += 1;
        }
        if y != 0 {
            counts.entry(y).or_default().1 += 1;
        }
        if x != 0 && x == y {
            counts.entry(x).or_default().2 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(l, (na, nb, both))| (l, 2.0 * both as f64 / (na + nb) as f64))
        .collect())
}

/// Mean Dice over the nonzero labels of `reference`; labels missing from the
/// other volume count as 0.
pub fn mean_foreground_dice(reference: &LabelVolume3, other: &LabelVolume3) -> Result<f64> {
    let d = dice_per_label(reference, other)?;
    let labels = reference.labels();
    if labels.is_empty() {
        return Err(Error::InvalidArgument("reference has no foreground labels".into()));
    }
    Ok(labels.iter().map(|l| d.get(l).copied().unwrap_or(0.0)).sum::<f64>() / labels.len() as f64)
}

/// 1 where the two label maps disagree, 0 elsewhere.
pub fn binary_difference(target: &LabelVolume3, warped: &LabelVolume3) -> Result<LabelVolume3> {
    same_shape(target, warped)?;
    let data = target
        .data()
        .iter()
        .zip(warped.data())
        .map(|(t, w)| u16::from(t != w))
        .collect();
    LabelVolume3::from_header(target.header().clone(), data)
}

/// `1 - #(target != warped) / #(target != 0)`. Can be negative when
/// disagreements outside the target support outnumber its size.
pub fn bir(target: &LabelVolume3, warped: &LabelVolume3) -> Result<f64> {
    same_shape(target, warped)?;
    let support = target.data().iter().filter(|&&t| t != 0).count();
    if support == 0 {
        return Err(Error::InvalidArgument("BIR is undefined for an all-background target".into()));
    }
    let diff = target
        .data()
        .iter()
        .zip(warped.data())
        .filter(|(t, w)| t != w)
        .count();
    Ok(1.0 - diff as f64 / support as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Min, first quartile, median, third quartile, max; quantiles interpolate
/// linearly between order statistics at position `p * (n - 1)`.
pub fn five_number_summary(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Ok([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// One `(target labels, warped source labels)` pair to score.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub src: String,
    pub dst: String,
    pub target: LabelVolume3,
    pub warped: LabelVolume3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub pair_src: String,
    pub pair_dst: String,
    pub label: u16,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirRow {
    pub pair_src: String,
    pub pair_dst: String,
    pub bir: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub label: u16,
    pub stats: [f64; 5],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dice: Vec<DiceRow>,
    pub bir: Vec<BirRow>,
    pub summary: Vec<SummaryRow>,
    pub boxplot: Vec<BoxplotRow>,
}

impl EvalReport {
    pub fn summary_of(&self, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.metric == metric)
    }

    /// Writes `dice.csv`, `bir.csv`, `summary.csv` and `boxplot.csv`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        let mut s = String::from("pair_src,pair_dst,label,dice\n");
        for r in &self.dice {
            s += &format!("{},{},{},{}\n", r.pair_src, r.pair_dst, r.label, r.dice);
        }
        write("dice.csv", s)?;
        let mut s = String::from("pair_src,pair_dst,bir\n");
        for r in &self.bir {
            s += &format!("{},{},{}\n", r.pair_src, r.pair_dst, r.bir);
        }
        write("bir.csv", s)?;
        let mut s = String::from("metric,mean,std\n");
        for r in &self.summary {
            s += &format!("{},{},{}\n", r.metric, r.mean, r.std);
        }
        write("summary.csv", s)?;
        let mut s = String::from("label,min,q1,median,q3,max\n");
        for r in &self.boxplot {
            let [a, b, c, d, e] = r.stats;
            s += &format!("{},{a},{b},{c},{d},{e}\n", r.label);
        }
        write("boxplot.csv", s)
    }
}

/// Per-pair BIR and per-label Dice with their aggregates and per-label
/// five-number summaries.
pub fn evaluate_pairs(pairs: &[EvalPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let mut report = EvalReport::default();
    let mut per_label: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        let b = bir(&p.target, &p.warped)?;
        report.bir.push(BirRow {
            pair_src: p.src.clone(),
            pair_dst: p.dst.clone(),
            bir: b,
        });
        for (label, d) in dice_per_label(&p.target, &p.warped)? {
            per_label.entry(label).or_default().push(d);
            report.dice.push(DiceRow {
                pair_src: p.src.clone(),
                pair_dst: p.dst.clone(),
                label,
                dice: d,
            });
        }
    }
    let birs: Vec<f64> = report.bir.iter().map(|r| r.bir).collect();
    let (m, s) = aggregate(&birs)?;
    report.summary.push(SummaryRow {
        metric: "bir".into(),
        mean: m,
        std: s,
    });
    let dices: Vec<f64> = report.dice.iter().map(|r| r.dice).collect();
    if !dices.is_empty() {
        let (m, s) = aggregate(&dices)?;
        report.summary.push(SummaryRow {
            metric: "dice".into(),
            mean: m,
            std: s,
        });
    }
    for (label, values) in per_label {
        report.boxplot.push(BoxplotRow {
            label,
            stats: five_number_summary(&values)?,
        });
    }
    Ok(report)
}

/// Runs `f` and returns its result with the elapsed wall-clock time.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape3;

    fn line(v: &[u16]) -> LabelVolume3 {
        LabelVolume3::new(Shape3::new(v.len(), 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = line(&[1, 1, 2, 0, 3]);
        assert!(dice_per_label(&a, &a).unwrap().values().all(|&d| d == 1.0));
        let d = dice_per_label(&line(&[5, 5, 0, 0]), &line(&[0, 0, 5, 5])).unwrap();
        assert_eq!(d[&5], 0.0);
        // |A| = 4, |B| = 6, overlap 3
        let a = line(&[5, 5, 5, 5, 0, 0, 0, 0]);
        let b = line(&[5, 5, 5, 0, 5, 5, 5, 0]);
        assert_eq!(dice_per_label(&a, &b).unwrap()[&5], 0.6);
        let d = dice_per_label(&line(&[0, 0]), &line(&[0, 0])).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn bir_examples() {
        let t = line(&[1, 2, 0, 3]);
        assert_eq!(bir(&t, &t).unwrap(), 1.0);
        assert_eq!(bir(&t, &line(&[0, 0, 0, 0])).unwrap(), 0.0);
        // 10 target voxels, 4 mismatches inside the support, 2 outside
        let t = line(&[1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0, 0, 0, 0]);
        let w = line(&[1, 1, 0, 2, 1, 2, 3, 2, 0, 2, 0, 4, 4, 0]);
        assert!((bir(&t, &w).unwrap() - 0.4).abs() < 1e-15);
        assert!(bir(&line(&[0, 0]), &line(&[1, 0])).is_err());
        assert!(bir(&line(&[1]), &line(&[2])).unwrap() <= 1.0);
        let neg = bir(&line(&[1, 0, 0, 0]), &line(&[2, 3, 3, 3])).unwrap();
        assert_eq!(neg, -3.0);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[0.5, 0.5]).unwrap(), (0.5, 0.0));
        assert_eq!(aggregate(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn quantiles_of_five_values() {
        // sorted: 0.2 0.4 0.5 0.7 0.9 -> positions 0, 1, 2, 3, 4
        let q = five_number_summary(&[0.7, 0.2, 0.9, 0.5, 0.4]).unwrap();
        assert_eq!(q, [0.2, 0.4, 0.5, 0.7, 0.9]);
        let q = five_number_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(q, [1.0, 1.75, 2.5, 3.25, 4.0]);
    }

    #[test]
    fn identical_pair_report() {
        let t = line(&[1, 2, 2, 0]);
        let r = evaluate_pairs(&[EvalPair {
            src: "a".into(),
            dst: "b".into(),
            target: t.clone(),
            warped: t,
        }])
        .unwrap();
        assert_eq!(r.summary_of("bir").unwrap().mean, 1.0);
        assert!(r.dice.iter().all(|d| d.dice == 1.0));
        assert_eq!(r.boxplot.len(), 2);
    }

    #[test]
    fn difference_volume() {
        let d = binary_difference(&line(&[1, 2, 0]), &line(&[1, 0, 3])).unwrap();
        assert_eq!(d.data(), &[0, 1, 1]);
    }
}
