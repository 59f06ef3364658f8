use serde::{Deserialize, Serialize};

use crate::clicks::{ClickStream, NS_PER_S};
use crate::error::{Error, Result};

/// Pair-delay histogram over positive delays.
///
/// Bin `k` covers delays `(k·w, (k+1)·w]`, truncated to
/// `(exclusion_window, max_delay]`. All bookkeeping is in integer
/// nanoseconds so the binning is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ns: u64,
    pub max_delay_ns: u64,
    pub exclusion_ns: u64,
    pub counts: Vec<u64>,
    pub total_clicks: usize,
    pub duration: f64,
}

impl CoincidenceHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_width_ns as f64 / NS_PER_S
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay_ns as f64 / NS_PER_S
    }

    pub fn exclusion_window(&self) -> f64 {
        self.exclusion_ns as f64 / NS_PER_S
    }

    /// Bin edges in seconds (`counts.len() + 1` entries).
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|k| ((k as u64 * self.bin_width_ns).min(self.max_delay_ns)) as f64 / NS_PER_S)
            .collect()
    }

    /// Usable part `(lo, hi]` of bin `k` in ns, `None` when fully excluded.
    pub fn effective_range_ns(&self, k: usize) -> Option<(u64, u64)> {
        let lo = (k as u64 * self.bin_width_ns).max(self.exclusion_ns);
        let hi = ((k as u64 + 1) * self.bin_width_ns).min(self.max_delay_ns);
        (hi > lo).then_some((lo, hi))
    }

    pub fn is_excluded(&self, k: usize) -> bool {
        self.effective_range_ns(k).is_none()
    }

    /// Bin index for a delay in ns, if it is counted at all.
    pub fn bin_of(&self, delay_ns: u64) -> Option<usize> {
        (delay_ns > self.exclusion_ns && delay_ns <= self.max_delay_ns && delay_ns > 0)
            .then(|| ((delay_ns - 1) / self.bin_width_ns) as usize)
    }
}

fn seconds_to_ns(name: &str, s: f64) -> Result<u64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid(name, format!("must be >= 0, got {s}")));
    }
    Ok((s * NS_PER_S).round() as u64)
}

/// Counts ordered pairs `i < j` with `t_j - t_i` in `(exclusion_window, max_delay]`.
pub fn build_histogram(
    stream: &ClickStream,
    max_delay: f64,
    bin_width: f64,
    exclusion_window: f64,
) -> Result<CoincidenceHistogram> {
    let bin_width_ns = seconds_to_ns("bin_width", bin_width)?;
    let max_delay_ns = seconds_to_ns("max_delay", max_delay)?;
    let exclusion_ns = seconds_to_ns("exclusion_window", exclusion_window)?;
    if bin_width_ns == 0 {
        return Err(Error::invalid("bin_width", "must be at least 1 ns"));
    }
    if max_delay_ns < bin_width_ns {
        return Err(Error::invalid("max_delay", "must be >= bin_width"));
    }
    if stream.len() < 2 {
        return Err(Error::EmptyStream(stream.len()));
    }
    let nbins = max_delay_ns.div_ceil(bin_width_ns) as usize;
    let mut hist = CoincidenceHistogram {
        bin_width_ns,
        max_delay_ns,
        exclusion_ns,
        counts: vec![0; nbins],
        total_clicks: stream.len(),
        duration: stream.duration,
    };

    let ts = &stream.timestamps;
    // `first` tracks the earliest partner beyond the exclusion window
    let mut first = 1;
    for i in 0..ts.len() {
        let t0 = ts[i];
        first = first.max(i + 1);
        while first < ts.len() && ts[first] - t0 <= exclusion_ns {
            first += 1;
        }
        for &t in &ts[first..] {
            let d = t - t0;
            if d > max_delay_ns {
                break;
            }
            hist.counts[((d - 1) / bin_width_ns) as usize] += 1;
        }
    }
    Ok(hist)
}

/// How raw coincidences are turned into g²(τ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Normalization {
    /// Accidentals from the global click rate with finite-duration correction.
    #[default]
    AccidentalFloor,
    /// Rescale so the mean over bins with `τ > after` is 1.
    LongDelayTail { after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Point {
    /// Center of the usable part of the bin, s.
    pub tau: f64,
    pub g2: f64,
    /// Poisson error from the observed counts.
    pub sigma: f64,
    pub counts: u64,
    /// Coincidences expected for g² = 1.
    pub expected: f64,
}

/// Per-bin g² values with Poisson errors; excluded bins are dropped.
pub fn normalize_g2(hist: &CoincidenceHistogram, normalization: Normalization) -> Result<Vec<G2Point>> {
    if hist.total_clicks < 2 {
        return Err(Error::EmptyStream(hist.total_clicks));
    }
    if !(hist.duration > hist.max_delay()) {
        return Err(Error::invalid("duration", "stream must be longer than max_delay"));
    }
    let rate = hist.total_clicks as f64 / hist.duration;
    if !(rate > 0.0) {
        return Err(Error::ZeroRate);
    }
    let mut points: Vec<G2Point> = (0..hist.counts.len())
        .filter_map(|k| {
            let (lo, hi) = hist.effective_range_ns(k)?;
            let width = (hi - lo) as f64 / NS_PER_S;
            let tau = 0.5 * (lo + hi) as f64 / NS_PER_S;
            let expected = rate * rate * (hist.duration - tau) * width;
            let counts = hist.counts[k];
            Some(G2Point {
                tau,
                g2: counts as f64 / expected,
                sigma: (counts as f64).sqrt() / expected,
                counts,
                expected,
            })
        })
        .collect();

    if let Normalization::LongDelayTail { after } = normalization {
        let tail: Vec<f64> = points.iter().filter(|p| p.tau > after).map(|p| p.g2).collect();
        if tail.is_empty() {
            return Err(Error::invalid("normalization", "no bins beyond the tail threshold"));
        }
        let level = tail.iter().sum::<f64>() / tail.len() as f64;
        if !(level > 0.0) {
            return Err(Error::ZeroRate);
        }
        for p in &mut points {
            p.g2 /= level;
            p.sigma /= level;
            p.expected *= level;
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicks::{Channel, ClickStream};

    fn stream(times: &[f64], duration: f64) -> ClickStream {
        ClickStream::from_seconds(times, duration, Channel::AntiStokes).unwrap()
    }

    #[test]
    fn single_pair() {
        let s = stream(&[0.0, 1e-6], 1.0);
        let h = build_histogram(&s, 10e-6, 1e-6, 0.0).unwrap();
        assert_eq!(h.counts.len(), 10);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 1);

        let h = build_histogram(&s, 10e-6, 1e-6, 2e-6).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 0);
        assert!(h.is_excluded(0) && h.is_excluded(1) && !h.is_excluded(2));
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = stream(&[0.0], 1.0);
        assert!(matches!(build_histogram(&s, 1e-5, 1e-6, 0.0), Err(Error::EmptyStream(1))));
        let s = stream(&[0.0, 1e-6], 1.0);
        assert!(build_histogram(&s, 1e-7, 1e-6, 0.0).is_err());
        assert!(build_histogram(&s, 1e-5, 0.0, 0.0).is_err());
    }

    #[test]
    fn partial_bins() {
        let s = stream(&[0.0, 1e-6], 1.0);
        let h = build_histogram(&s, 2.5e-6, 1e-6, 0.5e-6).unwrap();
        assert_eq!(h.counts.len(), 3);
        assert_eq!(h.effective_range_ns(0), Some((500, 1000)));
        assert_eq!(h.effective_range_ns(2), Some((2000, 2500)));
        assert_eq!(h.bin_edges(), vec![0.0, 1e-6, 2e-6, 2.5e-6]);
        assert_eq!(h.bin_of(500), None);
        assert_eq!(h.bin_of(501), Some(0));
        assert_eq!(h.bin_of(2501), None);
    }

    #[test]
    fn periodic_comb_peaks_at_period() {
        let period = 10e-6;
        let times: Vec<f64> = (0..10_000).map(|i| i as f64 * period).collect();
        let s = stream(&times, 0.1);
        let h = build_histogram(&s, 35e-6, 1e-6, 0.0).unwrap();
        let g = normalize_g2(&h, Normalization::AccidentalFloor).unwrap();
        for (k, p) in g.iter().enumerate() {
            let at_multiple = (k + 1) % 10 == 0;
            assert_eq!(p.counts > 0, at_multiple, "bin {k}");
        }
    }

    #[test]
    fn tail_normalization_sets_tail_to_one() {
        let times: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.618_034).fract()).collect();
        let s = stream(&times, 1.0);
        let h = build_histogram(&s, 1e-2, 1e-4, 0.0).unwrap();
        let g = normalize_g2(&h, Normalization::LongDelayTail { after: 5e-3 }).unwrap();
        let tail: Vec<f64> = g.iter().filter(|p| p.tau > 5e-3).map(|p| p.g2).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
