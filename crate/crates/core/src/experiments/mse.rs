//! EV / ES / SV mean-squared-error statistics between expected,
//! vanilla-stitched and similarity-stitched representations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{BatchOrder, DatasetSplit};
use crate::error::{Error, Result};
use crate::nn::ops::mse_per_item;
use crate::scalar::Scalar;
use crate::stitching::StitchedNetwork;
use crate::tensor::Tensor;
use crate::zoo::EVAL_BATCH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseScope {
    /// Corresponding layers only, `i == j`.
    Diagonals,
    All,
}

impl MseScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            MseScope::Diagonals => "diagonals",
            MseScope::All => "all",
        }
    }

    pub fn includes(&self, i: usize, j: usize) -> bool {
        *self == MseScope::All || i == j
    }
}

impl fmt::Display for MseScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MseScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonals" => Ok(MseScope::Diagonals),
            "all" | "all_stitches" => Ok(MseScope::All),
            _ => Err(Error::Argument(format!(
                "unknown scope {s:?}; expected diagonals or all"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    /// Sequential sums in the given order; `values` must be non-empty.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Summary {
        let mut n = 0usize;
        let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values.clone() {
            sum += v;
            min = min.min(v);
            max = max.max(v);
            n += 1;
        }
        let mean = sum / n as f64;
        let mut sq = 0.0;
        for v in values {
            sq += (v - mean) * (v - mean);
        }
        Summary {
            min,
            // Rounding can push a mean of equal values past them.
            mean: mean.clamp(min, max),
            max,
            std: (sq / n as f64).sqrt(),
        }
    }
}

/// One MSE sample per (example, layer pair): `[EV, ES, SV]`.
pub type Sample = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseStatsTable {
    pub scope: MseScope,
    pub ev: Summary,
    pub es: Summary,
    pub sv: Summary,
    pub samples: usize,
}

pub const MSE_COLUMNS: [&str; 12] = [
    "min_ev", "min_es", "min_sv", "mean_ev", "mean_es", "mean_sv", "max_ev", "max_es", "max_sv",
    "std_ev", "std_es", "std_sv",
];

impl MseStatsTable {
    pub fn from_samples(scope: MseScope, samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument(format!(
                "no layer pairs in the {scope} scope"
            )));
        }
        let col = |k: usize| Summary::of(samples.iter().map(move |s| s[k]));
        Ok(Self {
            scope,
            ev: col(0),
            es: col(1),
            sv: col(2),
            samples: samples.len(),
        })
    }

    /// The twelve values in [`MSE_COLUMNS`] order.
    pub fn values(&self) -> [f64; 12] {
        let (e, s, v) = (&self.ev, &self.es, &self.sv);
        [
            e.min, s.min, v.min, e.mean, s.mean, v.mean, e.max, s.max, v.max, e.std, s.std, v.std,
        ]
    }

    pub fn to_csv(&self) -> String {
        let values: Vec<String> = self.values().iter().map(|v| format!("{v:.6e}")).collect();
        format!("{}\n{}\n", MSE_COLUMNS.join(","), values.join(","))
    }
}

/// Per-example samples for one layer pair from already computed
/// representations (`N x C x H x W` each).
pub fn pair_samples<S: Scalar>(
    expected: &Tensor<S>,
    vanilla: &Tensor<S>,
    similarity: &Tensor<S>,
) -> Result<Vec<Sample>> {
    for (name, t) in [("vanilla", vanilla), ("similarity", similarity)] {
        if t.shape() != expected.shape() {
            return Err(Error::shape(
                format!("{name} stitch output vs expected representation"),
                expected.shape(),
                t.shape(),
            ));
        }
    }
    let ev = mse_per_item(expected, vanilla);
    let es = mse_per_item(expected, similarity);
    let sv = mse_per_item(similarity, vanilla);
    Ok((0..ev.len()).map(|n| [ev[n], es[n], sv[n]]).collect())
}

/// Representations of one layer pair on a fixed set of examples.
pub struct MseEntry<S> {
    pub i: usize,
    pub j: usize,
    pub expected: Tensor<S>,
    pub vanilla: Tensor<S>,
    pub similarity: Tensor<S>,
}

/// Statistics over precomputed representations, samples ordered by entry
/// then example.
pub fn mse_table_from_entries<S: Scalar>(
    entries: &[MseEntry<S>],
    scope: MseScope,
) -> Result<MseStatsTable> {
    let mut samples = Vec::new();
    for e in entries.iter().filter(|e| scope.includes(e.i, e.j)) {
        samples.extend(pair_samples(&e.expected, &e.vanilla, &e.similarity)?);
    }
    MseStatsTable::from_samples(scope, &samples)
}

/// A vanilla and a similarity-trained stitch across the same cut.
pub struct StitchPair<S> {
    pub vanilla: StitchedNetwork<S>,
    pub similarity: StitchedNetwork<S>,
}

impl<S: Scalar> StitchPair<S> {
    fn indices(&self) -> Result<(usize, usize)> {
        let (v, s) = (&self.vanilla, &self.similarity);
        let same = v.sender_index() == s.sender_index()
            && v.receiver_index() == s.receiver_index()
            && v.sender().label() == s.sender().label()
            && v.receiver().label() == s.receiver().label()
            && ((Arc::ptr_eq(v.sender(), s.sender()) && Arc::ptr_eq(v.receiver(), s.receiver()))
                || v.frozen_digest() == s.frozen_digest());
        match (same, v.receiver_index()) {
            (true, Some(j)) => Ok((v.sender_index(), j)),
            _ => Err(Error::Argument(
                "stitch pair does not share one cut between the same networks".into(),
            )),
        }
    }
}

/// Mean EV / ES / SV for one layer pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMse {
    pub i: usize,
    pub j: usize,
    pub ev: f64,
    pub es: f64,
    pub sv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseStudy {
    pub diagonals: Option<MseStatsTable>,
    pub all: MseStatsTable,
    pub per_pair: Vec<PairMse>,
}

impl MseStudy {
    pub fn table(&self, scope: MseScope) -> Option<&MseStatsTable> {
        match scope {
            MseScope::Diagonals => self.diagonals.as_ref(),
            MseScope::All => Some(&self.all),
        }
    }
}

/// Samples every pair on `data` (sequential order, no augmentation).
pub fn mse_statistics<S: Scalar>(pairs: &[StitchPair<S>], data: &DatasetSplit) -> Result<MseStudy> {
    if data.is_empty() {
        return Err(Error::Argument("empty evaluation split".into()));
    }
    let mut all = Vec::new();
    let mut diagonals = Vec::new();
    let mut per_pair = Vec::new();
    for pair in pairs {
        let (i, j) = pair.indices()?;
        let mut samples = Vec::with_capacity(data.len());
        for batch in data.batches::<S>(EVAL_BATCH, BatchOrder::Sequential) {
            let x = batch.images();
            let expected = pair.vanilla.expected(x)?;
            samples.extend(pair_samples(
                &expected,
                &pair.vanilla.provided(x)?,
                &pair.similarity.provided(x)?,
            )?);
        }
        let mean = |k: usize| samples.iter().map(|s| s[k]).sum::<f64>() / samples.len() as f64;
        per_pair.push(PairMse {
            i,
            j,
            ev: mean(0),
            es: mean(1),
            sv: mean(2),
        });
        if i == j {
            diagonals.extend_from_slice(&samples);
        }
        all.extend(samples);
    }
    Ok(MseStudy {
        diagonals: (!diagonals.is_empty())
            .then(|| MseStatsTable::from_samples(MseScope::Diagonals, &diagonals))
            .transpose()?,
        all: MseStatsTable::from_samples(MseScope::All, &all)?,
        per_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_tensors_have_zero_ev() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Tensor::<f32>::randn(&[2, 2, 2, 2], 1.0, &mut rng);
        let s = Tensor::<f32>::randn(&[2, 2, 2, 2], 1.0, &mut rng);
        let samples = pair_samples(&e, &e, &s).unwrap();
        assert!(samples
            .iter()
            .all(|s| s[0] == 0.0 && s[1] > 0.0 && s[1] == s[2]));
        assert!(pair_samples(&e, &Tensor::zeros(&[2, 2, 2, 1]), &s).is_err());
    }

    #[test]
    fn summary_orders_and_std() {
        let s = Summary::of([1.0, 2.0, 3.0, 4.0].into_iter());
        assert_eq!((s.min, s.mean, s.max), (1.0, 2.5, 4.0));
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        let c = Summary::of([0.1; 7].into_iter());
        assert!(c.min <= c.mean && c.mean <= c.max);
    }

    #[test]
    fn csv_has_twelve_columns() {
        let t = MseStatsTable::from_samples(MseScope::All, &[[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
            .unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 12);
        assert_eq!(lines[1].split(',').count(), 12);
        assert!(MseStatsTable::from_samples(MseScope::All, &[]).is_err());
    }

    #[test]
    fn scope_filtering() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mk = |i, j, rng: &mut ChaCha8Rng| MseEntry::<f64> {
            i,
            j,
            expected: Tensor::randn(&[1, 1, 2, 2], 1.0, rng),
            vanilla: Tensor::randn(&[1, 1, 2, 2], 1.0, rng),
            similarity: Tensor::randn(&[1, 1, 2, 2], 1.0, rng),
        };
        let entries = vec![mk(0, 0, &mut rng), mk(1, 0, &mut rng), mk(1, 1, &mut rng)];
        assert_eq!(
            mse_table_from_entries(&entries, MseScope::All)
                .unwrap()
                .samples,
            3
        );
        assert_eq!(
            mse_table_from_entries(&entries, MseScope::Diagonals)
                .unwrap()
                .samples,
            2
        );
        assert!(mse_table_from_entries(&entries[1..2], MseScope::Diagonals).is_err());
    }
}
