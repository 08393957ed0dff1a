//! Histograms for exported distributions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_BINS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("no samples")]
    Empty,
    #[error("non-finite sample {0}")]
    NonFinite(f64),
    #[error("invalid binning: {0}")]
    InvalidBinning(&'static str),
    #[error("binning would need {0} bins")]
    TooManyBins(usize),
}

/// Counts of integer-valued observations, such as cluster sizes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CountHistogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl CountHistogram {
    pub fn from_values<I: IntoIterator<Item = u64>>(values: I) -> Self {
        let mut h = CountHistogram::default();
        for v in values {
            *h.counts.entry(v).or_default() += 1;
            h.total += 1;
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, value: u64) -> u64 {
        self.counts.get(&value).copied().unwrap_or(0)
    }

    pub fn fraction(&self, value: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.count(value) as f64 / self.total as f64
    }

    /// `(value, count, fraction)` in ascending value order.
    pub fn rows(&self) -> Vec<(u64, u64, f64)> {
        self.counts
            .iter()
            .map(|(&v, &c)| (v, c, c as f64 / self.total as f64))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,count,fraction\n");
        for (v, c, f) in self.rows() {
            let _ = writeln!(s, "{v},{c},{f}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// Regular bins `[origin + i*width, origin + (i+1)*width)` covering the data.
    Width { origin: f64, width: f64 },
    /// Explicit ascending edges; the last bin is closed on the right.
    Edges(Vec<f64>),
}

impl Binning {
    /// Unit-width bins centred on the integers.
    pub fn integer() -> Self {
        Binning::Width {
            origin: -0.5,
            width: 1.0,
        }
    }

    fn validate(&self) -> Result<(), HistogramError> {
        match self {
            Binning::Width { origin, width } => {
                if !(width.is_finite() && *width > 0.0 && origin.is_finite()) {
                    return Err(HistogramError::InvalidBinning("width must be finite and positive"));
                }
            }
            Binning::Edges(edges) => {
                if edges.len() < 2 {
                    return Err(HistogramError::InvalidBinning("need at least two edges"));
                }
                if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
                    return Err(HistogramError::InvalidBinning("edges must be finite and strictly increasing"));
                }
            }
        }
        Ok(())
    }
}

/// Values repeated at least `min_count` times and carrying at least
/// `min_mass` of the sample are split out as point masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomRule {
    pub min_count: usize,
    pub min_mass: f64,
}

impl Default for AtomRule {
    fn default() -> Self {
        AtomRule {
            min_count: 2,
            min_mass: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub value: f64,
    pub count: u64,
    pub mass: f64,
}

/// Density histogram. Bin densities, atom masses and the out-of-range
/// fraction together account for the whole sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub samples: u64,
    pub out_of_range: u64,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Probability mass of bin `i`.
    pub fn mass(&self, i: usize) -> f64 {
        self.density[i] * (self.edges[i + 1] - self.edges[i])
    }

    /// Index of the bin containing `x`.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let last = *self.edges.last()?;
        if x < self.edges[0] || x > last {
            return None;
        }
        let i = self.edges.partition_point(|&e| e <= x);
        Some(i.saturating_sub(1).min(self.counts.len() - 1))
    }

    pub fn atom_mass(&self, value: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.value == value)
            .map_or(0.0, |a| a.mass)
    }

    /// Integral of the density plus atom masses.
    pub fn total_mass(&self) -> f64 {
        (0..self.counts.len()).map(|i| self.mass(i)).sum::<f64>()
            + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Two-column `center,density` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("center,density\n");
        for (c, d) in self.centers().iter().zip(&self.density) {
            let _ = writeln!(s, "{c},{d}");
        }
        s
    }
}

pub fn build_histogram(
    samples: &[f64],
    binning: &Binning,
    atoms: Option<AtomRule>,
) -> Result<Histogram, HistogramError> {
    if samples.is_empty() {
        return Err(HistogramError::Empty);
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(HistogramError::NonFinite(*bad));
    }
    binning.validate()?;
    let n = samples.len() as f64;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut atom_list = Vec::new();
    let mut rest: Vec<f64> = Vec::with_capacity(sorted.len());
    if let Some(rule) = atoms {
        for run in sorted.chunk_by(|a, b| a == b) {
            let mass = run.len() as f64 / n;
            if run.len() >= rule.min_count.max(1) && mass >= rule.min_mass {
                atom_list.push(Atom {
                    value: run[0],
                    count: run.len() as u64,
                    mass,
                });
            } else {
                rest.extend_from_slice(run);
            }
        }
    } else {
        rest = sorted;
    }

    let edges = match binning {
        Binning::Edges(e) => e.clone(),
        Binning::Width { origin, width } => {
            let (lo, hi) = match (rest.first(), rest.last()) {
                (Some(&lo), Some(&hi)) => (lo, hi),
                _ => (atom_list[0].value, atom_list[0].value),
            };
            let first = ((lo - origin) / width).floor();
            let last = ((hi - origin) / width).floor();
            let nbins = (last - first) as usize + 1;
            if nbins > MAX_BINS {
                return Err(HistogramError::TooManyBins(nbins));
            }
            (0..=nbins).map(|i| origin + (first + i as f64) * width).collect()
        }
    };

    let nbins = edges.len() - 1;
    let mut counts = vec![0u64; nbins];
    let mut out_of_range = 0u64;
    for &x in &rest {
        if x < edges[0] || x > edges[nbins] {
            out_of_range += 1;
            continue;
        }
        let mut i = edges.partition_point(|&e| e <= x).saturating_sub(1).min(nbins - 1);
        // Guard against rounding in the computed edges.
        while i > 0 && x < edges[i] {
            i -= 1;
        }
        counts[i] += 1;
    }
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
        .collect();

    Ok(Histogram {
        edges,
        counts,
        density,
        atoms: atom_list,
        samples: samples.len() as u64,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_extraction() {
        let h = build_histogram(
            &[0.5, 0.5, 0.25],
            &Binning::Width {
                origin: 0.0,
                width: 0.1,
            },
            Some(AtomRule::default()),
        )
        .unwrap();
        assert_eq!(h.atoms.len(), 1);
        assert_eq!(h.atoms[0].value, 0.5);
        assert!((h.atoms[0].mass - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(h.counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn density_integrates_to_one() {
        let samples: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 37.0).collect();
        for width in [0.01, 0.3, 1.0, 7.5] {
            let h = build_histogram(&samples, &Binning::Width { origin: 0.0, width }, None).unwrap();
            assert!((h.total_mass() - 1.0).abs() < 1e-12, "width {width}");
            assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        }
    }

    #[test]
    fn integer_bins_are_centered() {
        let h = build_histogram(&[2.0, 2.0, 3.0, 5.0], &Binning::integer(), None).unwrap();
        assert_eq!(h.centers(), vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
        assert!((h.mass(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn explicit_edges_and_out_of_range() {
        let h = build_histogram(&[0.0, 0.5, 1.0, 2.0], &Binning::Edges(vec![0.0, 0.5, 1.0]), None).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.out_of_range, 1);
        assert!((h.total_mass() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(build_histogram(&[], &Binning::integer(), None), Err(HistogramError::Empty));
        assert!(build_histogram(&[1.0], &Binning::Width { origin: 0.0, width: 0.0 }, None).is_err());
        assert!(build_histogram(&[1.0], &Binning::Edges(vec![1.0]), None).is_err());
        assert!(build_histogram(&[f64::NAN], &Binning::integer(), None).is_err());
    }

    #[test]
    fn count_histogram_fractions() {
        let h = CountHistogram::from_values([1, 1, 2]);
        assert_eq!(h.total(), 3);
        assert!((h.fraction(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.fraction(2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.fraction(3), 0.0);
        assert_eq!(h.to_csv(), "value,count,fraction\n1,2,0.6666666666666666\n2,1,0.3333333333333333\n");
    }
}
