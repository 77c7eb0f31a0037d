//! Utterance-level pooling of per-window scores and equal error rate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-window scores of one utterance, higher meaning more spoof-like.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub values: Vec<f64>,
    /// Window hop in feature frames.
    pub shift_frames: usize,
    pub origin: String,
}

impl ScoreSeries {
    pub fn new(values: Vec<f64>, shift_frames: usize, origin: impl Into<String>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score at window {i}")));
        }
        Ok(Self {
            values,
            shift_frames,
            origin: origin.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Centered moving average of length `len` covering offsets
/// `-(len-1)/2 ..= len/2`. Windows are truncated at the edges and divided by
/// the number of values they actually cover.
pub fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || len <= 1 {
        return x.to_vec();
    }
    let before = (len - 1) / 2;
    let after = len / 2;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(before);
            let hi = (t + after).min(n - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingConfig {
    /// Moving-average length in windows.
    pub smooth_len: usize,
    /// Fraction of the highest smoothed scores that are averaged.
    pub top_frac: f64,
    /// How many times the moving average is applied.
    pub repeats: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            smooth_len: 10,
            top_frac: 0.05,
            repeats: 1,
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_len == 0 || !(self.top_frac > 0.0 && self.top_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pooling needs smooth_len >= 1 and top_frac in (0, 1], got {} and {}",
                self.smooth_len, self.top_frac
            )));
        }
        Ok(())
    }
}

pub fn score_average(series: &ScoreSeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series.values.iter().sum::<f64>() / series.len() as f64)
}

/// Smooths the series, then averages its top `max(1, ceil(top_frac * n))`
/// values. Short high-scoring regions dominate the result instead of being
/// diluted by the rest of the utterance.
pub fn interleaved_aware(series: &ScoreSeries, cfg: &PoolingConfig) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    cfg.validate()?;
    let mut smoothed = series.values.clone();
    for _ in 0..cfg.repeats {
        smoothed = moving_average(&smoothed, cfg.smooth_len);
    }
    let n = smoothed.len();
    let k = ((cfg.top_frac * n as f64).ceil() as usize).clamp(1, n);
    smoothed.sort_by(|a, b| b.total_cmp(a));
    Ok(smoothed[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction in [0, 0.5].
    pub eer: f64,
    /// Decision threshold at the equal error point (`score >= threshold` is spoof).
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub target_scores: Vec<f64>,
    pub nontarget_scores: Vec<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eer\t{:?}", self.eer)?;
        writeln!(f, "eer_percent\t{:.2}", 100.0 * self.eer)?;
        writeln!(f, "threshold\t{:?}", self.threshold)?;
        writeln!(f, "n_target\t{}", self.n_target)?;
        write!(f, "n_nontarget\t{}", self.n_nontarget)
    }
}

/// One operating point: counts scaled so that both rates share the
/// denominator `n_target * n_nontarget`.
#[derive(Debug, Clone, Copy)]
struct Point {
    fa: i128,
    miss: i128,
    threshold: f64,
}

fn operating_points(targets: &[f64], nontargets: &[f64]) -> Vec<Point> {
    let (n, m) = (targets.len() as i128, nontargets.len() as i128);
    let mut t = targets.to_vec();
    let mut nt = nontargets.to_vec();
    t.sort_by(f64::total_cmp);
    nt.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = t.iter().chain(&nt).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    // "score >= threshold" is a spoof decision
    thresholds
        .into_iter()
        .map(|th| {
            let miss = t.partition_point(|&s| s < th) as i128;
            let fa = nt.len() as i128 - nt.partition_point(|&s| s < th) as i128;
            Point {
                fa: fa * n,
                miss: miss * m,
                threshold: th,
            }
        })
        .collect()
}

fn cross(o: &Point, a: &Point, b: &Point) -> i128 {
    (a.fa - o.fa) * (b.miss - o.miss) - (a.miss - o.miss) * (b.fa - o.fa)
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact `num / den` rounded once to the nearest double.
pub(crate) fn ratio(num: i128, den: i128) -> f64 {
    let g = gcd(num, den).max(1);
    (num / g) as f64 / (den / g) as f64
}

/// Equal error rate with spoof (`targets`) as the positive class.
///
/// The miss and false-alarm rates are traced over every distinct score, and
/// the EER is read off the lower convex hull of those operating points where
/// it meets the line miss = false alarm. Between hull vertices the threshold
/// is interpolated linearly; a crossing exactly on a vertex reports that
/// vertex's threshold, which is the lower of the two candidate segments.
pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::EmptyClass("target"));
    }
    if nontargets.is_empty() {
        return Err(Error::EmptyClass("nontarget"));
    }
    if targets.iter().chain(nontargets).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score in EER input".into()));
    }
    let scale = targets.len() as i128 * nontargets.len() as i128;
    let mut pts = operating_points(targets, nontargets);
    // ascending false alarms (descending threshold)
    pts.reverse();
    let mut hull: Vec<Point> = Vec::new();
    for p in pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let (mut eer_num, mut eer_den, mut threshold) = (0i128, 1i128, f64::NAN);
    for w in hull.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (a.miss - a.fa, b.miss - b.fa);
        if db == 0 {
            (eer_num, eer_den, threshold) = (b.fa, scale, b.threshold);
            break;
        }
        if da > 0 && db < 0 {
            let num = b.fa * a.miss - a.fa * b.miss;
            let den = ((b.fa - a.fa) - (b.miss - a.miss)) * scale;
            let s = da as f64 / (da - db) as f64;
            threshold = if a.threshold.is_infinite() {
                b.threshold
            } else {
                a.threshold + s * (b.threshold - a.threshold)
            };
            (eer_num, eer_den) = (num, den);
            break;
        }
    }
    if hull.first().is_some_and(|p| p.miss == p.fa) {
        (eer_num, eer_den, threshold) = (0, 1, hull[0].threshold);
    }
    Ok(EvalReport {
        eer: ratio(eer_num, eer_den),
        threshold,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
        target_scores: targets.to_vec(),
        nontarget_scores: nontargets.to_vec(),
    })
}

/// One line of a score dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub path: String,
    pub avg: f64,
    pub interleaved: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Average,
    Interleaved,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" => Ok(Self::Average),
            "interleaved" => Ok(Self::Interleaved),
            other => Err(Error::InvalidConfig(format!("unknown pooling `{other}` (use avg or interleaved)"))),
        }
    }
}

impl ScoreLine {
    pub fn pooled(&self, pooling: Pooling) -> f64 {
        match pooling {
            Pooling::Average => self.avg,
            Pooling::Interleaved => self.interleaved,
        }
    }
}

/// `<path>\t<avg>\t<interleaved>` lines; floats use the shortest
/// representation that round-trips.
pub fn format_score_dump(lines: &[ScoreLine]) -> String {
    lines
        .iter()
        .map(|l| format!("{}\t{:?}\t{:?}\n", l.path, l.avg, l.interleaved))
        .collect()
}

pub fn parse_score_dump(text: &str) -> Result<Vec<ScoreLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad score `{s}`: {e}"),
            })
        };
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        out.push(ScoreLine {
            path: fields[0].to_string(),
            avg: parse(fields[1])?,
            interleaved: parse(fields[2])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: Vec<f64>) -> ScoreSeries {
        ScoreSeries::new(v, 10, "test").unwrap()
    }

    fn burst() -> ScoreSeries {
        let mut v = vec![0.0; 100];
        v[..10].fill(10.0);
        series(v)
    }

    #[test]
    fn averages() {
        assert_eq!(score_average(&series(vec![3.5; 3])).unwrap(), 3.5);
        assert_eq!(score_average(&series(vec![0.0, 1.0])).unwrap(), 0.5);
        assert_eq!(score_average(&burst()).unwrap(), 1.0);
        assert!(matches!(score_average(&series(vec![])), Err(Error::EmptySeries)));
    }

    #[test]
    fn interleaved_examples() {
        let cfg = PoolingConfig::default();
        assert_eq!(interleaved_aware(&series(vec![-2.25; 37]), &cfg).unwrap(), -2.25);
        assert_eq!(interleaved_aware(&burst(), &cfg).unwrap(), 10.0);
        assert_eq!(interleaved_aware(&series(vec![0.3]), &cfg).unwrap(), 0.3);
        assert!(matches!(interleaved_aware(&series(vec![]), &cfg), Err(Error::EmptySeries)));
    }

    #[test]
    fn moving_average_offsets() {
        // length 5: one 1 among zeros spreads 0.2 over five positions
        let mut x = vec![0.0; 11];
        x[5] = 1.0;
        let y = moving_average(&x, 5);
        for (t, v) in y.iter().enumerate() {
            let expected = if (3..=7).contains(&t) { 0.2 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15, "{t}: {v}");
        }
        // length 10 covers t-4 ..= t+5
        let mut x = vec![0.0; 30];
        x[15] = 1.0;
        let y = moving_average(&x, 10);
        let nonzero: Vec<usize> = (0..30).filter(|&t| y[t] != 0.0).collect();
        assert_eq!(nonzero, (10..=19).collect::<Vec<_>>());
    }

    #[test]
    fn repeats_apply_filter_again() {
        let cfg = PoolingConfig { repeats: 2, ..Default::default() };
        let s = burst();
        let twice = moving_average(&moving_average(&s.values, 10), 10);
        let mut sorted = twice.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let expected = sorted[..5].iter().sum::<f64>() / 5.0;
        assert_eq!(interleaved_aware(&s, &cfg).unwrap(), expected);
    }

    #[test]
    fn eer_examples() {
        let r = compute_eer(&[1.0, 1.0, 1.0], &[-1.0, -1.0]).unwrap();
        assert_eq!(r.eer, 0.0);
        let v = [0.1, 0.4, 0.4, 0.9];
        assert_eq!(compute_eer(&v, &v).unwrap().eer, 0.5);
        let r = compute_eer(&[0.8, 0.6], &[0.7, 0.1]).unwrap();
        assert_eq!(r.eer, 0.25);
        assert!(r.threshold > 0.6 && r.threshold < 0.8, "{}", r.threshold);
        assert!(matches!(compute_eer(&[], &[1.0]), Err(Error::EmptyClass(_))));
        assert!(matches!(compute_eer(&[1.0], &[]), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn eer_threshold_separates_perfect_sets() {
        let r = compute_eer(&[2.0, 3.0], &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!(r.threshold > 1.0 && r.threshold <= 2.0);
    }

    #[test]
    fn dump_round_trip() {
        let lines = vec![
            ScoreLine { path: "a.wav".into(), avg: 0.1, interleaved: -1.0 / 3.0 },
            ScoreLine { path: "dir/b.wav".into(), avg: 1e-300, interleaved: 7.0 },
        ];
        assert_eq!(parse_score_dump(&format_score_dump(&lines)).unwrap(), lines);
        assert!(matches!(parse_score_dump("x\t1"), Err(Error::Parse { line: 1, .. })));
        assert!("median".parse::<Pooling>().is_err());
    }
}
