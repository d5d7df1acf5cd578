//! Dispersion-compensating tap design.
//!
//! Taps follow the closed-form inverse of fiber dispersion sampled at period
//! `T`:
//!
//! ```text
//! g_k = sqrt(j·c·T² / (D·λ²·z)) · exp(−j·π·c·T² / (D·λ²·z) · k²)
//! ```
//!
//! for `k = −(N−1)/2 ..= (N−1)/2`. The clustered equalizer replaces each tap
//! by one of `N_C` complex representatives found with k-means (Lloyd
//! iterations, k-means++ seeding, many random restarts) over the points
//! `(Re g_k, Im g_k)`.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::signal::BerReport;
use crate::{CdcError, Result, SPEED_OF_LIGHT};

/// The physical inputs of the tap formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    /// Dispersion coefficient D in ps/(nm·km).
    pub dispersion_ps_nm_km: f64,
    pub wavelength_m: f64,
    /// Accumulated fiber length z in metres.
    pub length_m: f64,
    pub sample_period_s: f64,
}

impl DispersionParams {
    pub fn new(
        dispersion_ps_nm_km: f64,
        wavelength_m: f64,
        length_m: f64,
        sample_period_s: f64,
    ) -> Self {
        Self {
            dispersion_ps_nm_km,
            wavelength_m,
            length_m,
            sample_period_s,
        }
    }

    /// D in s/m².
    pub fn dispersion_si(&self) -> f64 {
        self.dispersion_ps_nm_km * 1e-6
    }

    /// D·λ²·z / c, the accumulated dispersion expressed in s².
    pub fn accumulated_s2(&self) -> f64 {
        self.dispersion_si() * self.wavelength_m.powi(2) * self.length_m / SPEED_OF_LIGHT
    }

    fn check_positive(&self) -> Result<()> {
        let fields = [
            ("dispersion", self.dispersion_ps_nm_km),
            ("wavelength", self.wavelength_m),
            ("sample period", self.sample_period_s),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CdcError::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.length_m >= 0.0 && self.length_m.is_finite()) {
            return Err(CdcError::param(format!(
                "length must be non-negative, got {}",
                self.length_m
            )));
        }
        Ok(())
    }
}

/// Centered FIR taps `g_k`, `k = −(N−1)/2 ..= (N−1)/2`, stored at position
/// `k + (N−1)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TapSet {
    pub taps: Vec<Complex64>,
    pub params: DispersionParams,
}

impl TapSet {
    pub fn size(&self) -> usize {
        self.taps.len()
    }

    /// (N−1)/2, which is also the group delay in samples.
    pub fn half_width(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn tap(&self, k: isize) -> Complex64 {
        self.taps[(k + self.half_width() as isize) as usize]
    }

    /// A one-tap identity filter.
    pub fn identity(params: DispersionParams) -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
            params,
        }
    }

    /// Taps given explicitly; the length must be odd.
    pub fn from_taps(taps: Vec<Complex64>, params: DispersionParams) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(CdcError::param(format!(
                "tap count {} must be odd",
                taps.len()
            )));
        }
        Ok(Self { taps, params })
    }
}

/// Evaluates the closed-form compensating taps for an odd `size`.
pub fn generate_taps(params: &DispersionParams, size: usize) -> Result<TapSet> {
    params.check_positive()?;
    if size % 2 == 0 {
        return Err(CdcError::param(format!("filter size {size} must be odd")));
    }
    if params.length_m == 0.0 {
        return Err(CdcError::Singularity(
            "tap formula is undefined for zero fiber length".into(),
        ));
    }
    // a = c·T² / (D·λ²·z)
    let a = params.sample_period_s.powi(2) / params.accumulated_s2();
    let gain = Complex64::new(0.0, a).sqrt();
    let half = (size / 2) as isize;
    let taps = (-half..=half)
        .map(|k| gain * Complex64::from_polar(1.0, -std::f64::consts::PI * a * (k * k) as f64))
        .collect();
    Ok(TapSet {
        taps,
        params: *params,
    })
}

/// `N = 2·round(|D|·λ²·z / (2·c·T²)) + 1`.
pub fn max_filter_size(params: &DispersionParams) -> Result<usize> {
    params.check_positive()?;
    let half = params.accumulated_s2().abs() / (2.0 * params.sample_period_s.powi(2));
    Ok(2 * half.round() as usize + 1)
}

/// A partition of tap positions into clusters with one coefficient each.
///
/// Clusters are labelled in order of their lowest member position, so a
/// filter built from singleton clusters has cluster `i` = tap position `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredFilter {
    pub representatives: Vec<Complex64>,
    /// Cluster id for each tap position.
    pub assignment: Vec<usize>,
    pub params: DispersionParams,
}

impl ClusteredFilter {
    /// Builds and validates a filter, relabelling clusters canonically.
    pub fn new(
        representatives: Vec<Complex64>,
        assignment: Vec<usize>,
        params: DispersionParams,
    ) -> Result<Self> {
        if assignment.len() % 2 == 0 {
            return Err(CdcError::param(format!(
                "filter size {} must be odd",
                assignment.len()
            )));
        }
        let nc = representatives.len();
        if nc == 0 || nc > assignment.len() {
            return Err(CdcError::param(format!(
                "{nc} clusters for {} taps",
                assignment.len()
            )));
        }
        let mut seen = vec![false; nc];
        for &c in &assignment {
            if c >= nc {
                return Err(CdcError::param(format!("cluster id {c} out of range")));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(CdcError::param(format!("cluster {c} has no members")));
        }
        // Canonical relabelling by first appearance.
        let mut relabel = vec![usize::MAX; nc];
        let mut next = 0;
        for &c in &assignment {
            if relabel[c] == usize::MAX {
                relabel[c] = next;
                next += 1;
            }
        }
        let mut reps = vec![Complex64::default(); nc];
        for (old, &new) in relabel.iter().enumerate() {
            reps[new] = representatives[old];
        }
        Ok(Self {
            representatives: reps,
            assignment: assignment.iter().map(|&c| relabel[c]).collect(),
            params,
        })
    }

    /// Every tap in its own cluster.
    pub fn singletons(taps: &TapSet) -> Self {
        Self {
            representatives: taps.taps.clone(),
            assignment: (0..taps.size()).collect(),
            params: taps.params,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.representatives.len()
    }

    pub fn size(&self) -> usize {
        self.assignment.len()
    }

    pub fn half_width(&self) -> usize {
        self.size() / 2
    }

    /// Member tap positions of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (pos, &c) in self.assignment.iter().enumerate() {
            out[c].push(pos);
        }
        out
    }

    /// The tap set obtained by replacing each tap with its representative.
    pub fn expanded_taps(&self) -> TapSet {
        TapSet {
            taps: self
                .assignment
                .iter()
                .map(|&c| self.representatives[c])
                .collect(),
            params: self.params,
        }
    }

    /// Replaces the representatives, keeping the partition. This is the hook
    /// for refitting coefficients against data; the design flow uses
    /// centroids.
    pub fn with_representatives(&self, representatives: Vec<Complex64>) -> Result<Self> {
        if representatives.len() != self.n_clusters() {
            return Err(CdcError::param(format!(
                "expected {} representatives, got {}",
                self.n_clusters(),
                representatives.len()
            )));
        }
        Ok(Self {
            representatives,
            ..self.clone()
        })
    }

    /// Within-cluster sum of squared distances for `taps`.
    pub fn distortion(&self, taps: &TapSet) -> f64 {
        taps.taps
            .iter()
            .zip(&self.assignment)
            .map(|(t, &c)| (t - self.representatives[c]).norm_sqr())
            .sum()
    }

    /// Serializes to the line-oriented text format:
    ///
    /// ```text
    /// clustered-filter v1
    /// size <N>
    /// clusters <N_C>
    /// dispersion_ps_nm_km <D>
    /// wavelength_m <λ>
    /// length_m <z>
    /// sample_period_s <T>
    /// <re> <im> <k> <k> ...     (one line per cluster, k = tap index −(N−1)/2..)
    /// ```
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "clustered-filter v1");
        let _ = writeln!(s, "size {}", self.size());
        let _ = writeln!(s, "clusters {}", self.n_clusters());
        let _ = writeln!(s, "dispersion_ps_nm_km {:?}", p.dispersion_ps_nm_km);
        let _ = writeln!(s, "wavelength_m {:?}", p.wavelength_m);
        let _ = writeln!(s, "length_m {:?}", p.length_m);
        let _ = writeln!(s, "sample_period_s {:?}", p.sample_period_s);
        let half = self.half_width() as isize;
        for (rep, members) in self.representatives.iter().zip(self.members()) {
            let _ = write!(s, "{:?} {:?}", rep.re, rep.im);
            for pos in members {
                let _ = write!(s, " {}", pos as isize - half);
            }
            s.push('\n');
        }
        s
    }
}

impl FromStr for ClusteredFilter {
    type Err = CdcError;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |d: String| CdcError::format("clustered filter", d);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("clustered-filter v1") {
            return Err(bad("missing 'clustered-filter v1' header".into()));
        }
        let mut header = |key: &str| -> Result<f64> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(format!("expected '{key}', got '{line}'")));
            }
            it.next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("bad value for {key}")))
        };
        let size = header("size")? as usize;
        let nc = header("clusters")? as usize;
        let params = DispersionParams {
            dispersion_ps_nm_km: header("dispersion_ps_nm_km")?,
            wavelength_m: header("wavelength_m")?,
            length_m: header("length_m")?,
            sample_period_s: header("sample_period_s")?,
        };
        let half = (size / 2) as isize;
        let mut reps = Vec::with_capacity(nc);
        let mut assignment = vec![usize::MAX; size];
        for (c, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let mut num = || -> Result<f64> {
                it.next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("bad representative on line '{line}'")))
            };
            reps.push(Complex64::new(num()?, num()?));
            for tok in it {
                let k: isize = tok.parse().map_err(|_| bad(format!("bad index '{tok}'")))?;
                let pos = k + half;
                if pos < 0 || pos as usize >= size || assignment[pos as usize] != usize::MAX {
                    return Err(bad(format!("index {k} out of range or repeated")));
                }
                assignment[pos as usize] = c;
            }
        }
        if reps.len() != nc {
            return Err(bad(format!(
                "header says {nc} clusters, found {}",
                reps.len()
            )));
        }
        if assignment.contains(&usize::MAX) {
            return Err(bad("some taps are not assigned".into()));
        }
        ClusteredFilter::new(reps, assignment, params)
    }
}

/// Options for [`cluster_taps_with`].
#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    pub trials: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub exec: Exec,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            trials: 300,
            seed: 0,
            max_iterations: 500,
            exec: Exec::default(),
        }
    }
}

/// Outcome of one random restart.
#[derive(Clone, Debug)]
pub struct KMeansTrial {
    pub centers: Vec<Complex64>,
    pub assignment: Vec<usize>,
    pub distortion: f64,
    /// Objective after each centroid update.
    pub history: Vec<f64>,
}

fn nearest(p: Complex64, centers: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &m) in centers.iter().enumerate() {
        let d = (p - m).norm_sqr();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn kmeanspp_init(points: &[Complex64], k: usize, rng: &mut ChaCha20Rng) -> Vec<Complex64> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p - points[first]).norm_sqr())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            if d2[idx] == 0.0 {
                // Rounding walked past the last positive weight.
                idx = d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            // Fewer distinct points than clusters: duplicate an unused point.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick]);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min((p - points[pick]).norm_sqr());
        }
    }
    centers
}

fn sse(points: &[Complex64], assignment: &[usize], centers: &[Complex64]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| (p - centers[c]).norm_sqr())
        .sum()
}

/// Moves points into empty clusters. The donor is the point farthest from
/// its current center among clusters with at least two members.
fn repair_empty(points: &[Complex64], assignment: &mut [usize], centers: &mut [Complex64]) {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor = None;
        let mut best = -1.0;
        for (i, &c) in assignment.iter().enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = (points[i] - centers[c]).norm_sqr();
            if d > best {
                best = d;
                donor = Some(i);
            }
        }
        let Some(i) = donor else { return };
        counts[assignment[i]] -= 1;
        assignment[i] = empty;
        counts[empty] = 1;
        centers[empty] = points[i];
    }
}

fn centroids(points: &[Complex64], assignment: &[usize], k: usize) -> Vec<Complex64> {
    let mut sums = vec![Complex64::default(); k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        sums[c] += p;
        counts[c] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect()
}

/// One seeded k-means run: k-means++ seeding then Lloyd iterations until the
/// assignment stops changing.
pub fn kmeans_trial(
    points: &[Complex64],
    k: usize,
    seed: u64,
    trial: u64,
    max_iterations: usize,
) -> KMeansTrial {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut centers = kmeanspp_init(points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let mut next: Vec<usize> = points.iter().map(|&p| nearest(p, &centers)).collect();
        repair_empty(points, &mut next, &mut centers);
        if next == assignment {
            break;
        }
        assignment = next;
        centers = centroids(points, &assignment, k);
        history.push(sse(points, &assignment, &centers));
    }
    KMeansTrial {
        distortion: sse(points, &assignment, &centers),
        centers,
        assignment,
        history,
    }
}

/// Clusters the taps into `n_clusters` groups, keeping the best of `trials`
/// seeded restarts.
pub fn cluster_taps(
    taps: &TapSet,
    n_clusters: usize,
    trials: usize,
    seed: u64,
) -> Result<ClusteredFilter> {
    cluster_taps_with(
        taps,
        n_clusters,
        &KMeansOptions {
            trials,
            seed,
            ..Default::default()
        },
    )
}

pub fn cluster_taps_with(
    taps: &TapSet,
    n_clusters: usize,
    opts: &KMeansOptions,
) -> Result<ClusteredFilter> {
    let n = taps.size();
    if n_clusters == 0 || n_clusters > n {
        return Err(CdcError::param(format!(
            "cluster count {n_clusters} must lie in 1..={n}"
        )));
    }
    if opts.trials == 0 {
        return Err(CdcError::param("at least one clustering trial is required"));
    }
    if n_clusters == n {
        return Ok(ClusteredFilter::singletons(taps));
    }
    let points = &taps.taps;
    let runs = opts.exec.map_range(opts.trials, |t| {
        kmeans_trial(points, n_clusters, opts.seed, t as u64, opts.max_iterations)
    });
    // Lowest trial index wins ties.
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.distortion < a.distortion { b } else { a })
        .expect("trials >= 1");
    ClusteredFilter::new(best.centers, best.assignment, taps.params)
}

/// One probed candidate of a design search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub candidate: usize,
    pub report: BerReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSearchReport {
    /// Chosen filter size or cluster count.
    pub chosen: usize,
    pub ber_at_choice: f64,
    pub target: f64,
    /// Number of candidates evaluated.
    pub trials: usize,
    pub table: Vec<SearchPoint>,
}

/// Descends from the maximum filter size in steps of two and returns the
/// last size whose BER meets `ber_target` before the first failure.
pub fn truncation_search<F>(
    params: &DispersionParams,
    ber_target: f64,
    mut evaluate: F,
) -> Result<DesignSearchReport>
where
    F: FnMut(&TapSet) -> Result<BerReport>,
{
    let start = max_filter_size(params)?;
    truncation_search_from(params, start, ber_target, &mut evaluate)
}

/// As [`truncation_search`], starting from an explicit odd size.
pub fn truncation_search_from<F>(
    params: &DispersionParams,
    start: usize,
    ber_target: f64,
    mut evaluate: F,
) -> Result<DesignSearchReport>
where
    F: FnMut(&TapSet) -> Result<BerReport>,
{
    if start % 2 == 0 {
        return Err(CdcError::param(format!("start size {start} must be odd")));
    }
    let mut table = Vec::new();
    let mut size = start;
    let mut chosen: Option<SearchPoint> = None;
    loop {
        let report = evaluate(&generate_taps(params, size)?)?;
        let point = SearchPoint {
            candidate: size,
            report,
        };
        table.push(point);
        if !report.passes(ber_target) {
            break;
        }
        chosen = Some(point);
        if size == 1 {
            break;
        }
        size -= 2;
    }
    match chosen {
        Some(p) => Ok(DesignSearchReport {
            chosen: p.candidate,
            ber_at_choice: p.report.ber,
            target: ber_target,
            trials: table.len(),
            table,
        }),
        None => Err(CdcError::NoFeasibleSize {
            best_ber: table[0].report.ber,
            target: ber_target,
        }),
    }
}

/// Scans `N_C = 1, 2, …` and returns the first cluster count whose BER meets
/// `ber_target`, together with that filter.
pub fn cluster_count_search<F>(
    taps: &TapSet,
    ber_target: f64,
    opts: &KMeansOptions,
    mut evaluate: F,
) -> Result<(DesignSearchReport, ClusteredFilter)>
where
    F: FnMut(&ClusteredFilter) -> Result<BerReport>,
{
    let mut table = Vec::new();
    let mut best_ber = f64::INFINITY;
    for nc in 1..=taps.size() {
        let filter = cluster_taps_with(taps, nc, opts)?;
        let report = evaluate(&filter)?;
        table.push(SearchPoint {
            candidate: nc,
            report,
        });
        best_ber = best_ber.min(report.ber);
        if report.passes(ber_target) {
            let trials = table.len();
            return Ok((
                DesignSearchReport {
                    chosen: nc,
                    ber_at_choice: report.ber,
                    target: ber_target,
                    trials,
                    table,
                },
                filter,
            ));
        }
    }
    Err(CdcError::NoFeasibleSize {
        best_ber,
        target: ber_target,
    })
}
