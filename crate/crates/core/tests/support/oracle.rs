//! Reference implementations written independently of the library code:
//! path enumeration for the likelihood and decoding, densities from statrs
//! plus a power-series Bessel function, and a null-space stationary solver.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use occuhmm_core::hmm::{
    CovariateSeries, Emission, EmissionSpec, HmmModel, InitialDistribution, ObservationSeries,
    TransitionCoefficients,
};
use rand::Rng;
use statrs::distribution::{Continuous, Gamma, Normal};

pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 0.0);
    loop {
        k += 1.0;
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
    }
}

pub fn pdf(e: &Emission, x: f64) -> f64 {
    match *e {
        Emission::Gaussian { mean, sd } => Normal::new(mean, sd).unwrap().pdf(x),
        Emission::Gamma { mean, sd } => {
            let shape = mean * mean / (sd * sd);
            Gamma::new(shape, mean / (sd * sd)).unwrap().pdf(x)
        }
        Emission::VonMises { mean, kappa } => (kappa * (x - mean).cos()).exp() / (2.0 * PI * bessel_i0(kappa)),
    }
}

pub fn tpm(model: &HmmModel, z: &[f64]) -> DMatrix<f64> {
    let n = model.n_states();
    let t = model.transition();
    DMatrix::from_fn(n, n, |i, j| {
        let eta = |a: usize, b: usize| {
            if a == b {
                0.0
            } else {
                let beta = t.pair(a, b);
                beta[0] + z.iter().zip(&beta[1..]).map(|(v, b)| v * b).sum::<f64>()
            }
        };
        let denom: f64 = (0..n).map(|k| eta(i, k).exp()).sum();
        eta(i, j).exp() / denom
    })
}

/// Left eigenvector for eigenvalue 1 from the null space of `G' - I`.
pub fn stationary(g: &DMatrix<f64>) -> Vec<f64> {
    let n = g.nrows();
    let a = g.transpose() - DMatrix::identity(n, n);
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = (0..n)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    let v: Vec<f64> = vt.row(k).iter().copied().collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn initial(model: &HmmModel, z: &[f64]) -> Vec<f64> {
    let n = model.n_states();
    match model.initial() {
        InitialDistribution::Stationary => stationary(&tpm(model, z)),
        InitialDistribution::Uniform => vec![1.0 / n as f64; n],
        InitialDistribution::Fixed(d) => d.clone(),
    }
}

fn log_emission(model: &HmmModel, state: usize, row: &[Option<f64>]) -> f64 {
    row.iter()
        .enumerate()
        .filter_map(|(c, x)| x.map(|x| pdf(model.emissions().get(state, c), x).ln()))
        .sum()
}

fn segments(ids: &[u32]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=ids.len() {
        if t == ids.len() || ids[t] != ids[start] {
            out.push(start..t);
            start = t;
        }
    }
    out
}

fn paths(n: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut p = vec![0; len];
        for slot in p.iter_mut().rev() {
            *slot = code % n;
            code /= n;
        }
        p
    })
}

fn log_joint(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries, seg: &std::ops::Range<usize>, path: &[usize]) -> f64 {
    let d = initial(model, cov.row(seg.start));
    let mut lp = d[path[0]].ln() + log_emission(model, path[0], obs.row(seg.start));
    for k in 1..path.len() {
        let t = seg.start + k;
        lp += tpm(model, cov.row(t))[(path[k - 1], path[k])].ln() + log_emission(model, path[k], obs.row(t));
    }
    lp
}

pub fn brute_loglik(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries) -> f64 {
    segments(obs.segment_ids())
        .iter()
        .map(|seg| {
            let lps: Vec<f64> = paths(model.n_states(), seg.len())
                .map(|p| log_joint(model, obs, cov, seg, &p))
                .collect();
            let m = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + lps.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .sum()
}

/// Enumerates paths in lexicographic order and keeps the first maximiser.
pub fn brute_viterbi(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries) -> Vec<usize> {
    let mut out = Vec::new();
    for seg in segments(obs.segment_ids()) {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for p in paths(model.n_states(), seg.len()) {
            let lp = log_joint(model, obs, cov, &seg, &p);
            if lp > best.0 {
                best = (lp, p);
            }
        }
        out.extend(best.1);
    }
    out
}

pub fn random_emission<R: Rng>(rng: &mut R, family: usize) -> Emission {
    match family {
        0 => Emission::Gaussian { mean: rng.random_range(-2.0..2.0), sd: rng.random_range(0.5..2.0) },
        1 => Emission::Gamma { mean: rng.random_range(0.5..3.0), sd: rng.random_range(0.3..2.0) },
        _ => Emission::VonMises { mean: rng.random_range(-PI..PI), kappa: rng.random_range(0.1..5.0) },
    }
}

fn random_value<R: Rng>(rng: &mut R, family: usize) -> f64 {
    match family {
        0 => rng.random_range(-3.0..3.0),
        1 => rng.random_range(0.05..5.0),
        _ => rng.random_range(-PI..PI),
    }
}

/// Random model and data: 1-2 channels of mixed families, 0-2 covariates,
/// about 15% missing cells and up to two segments.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, len: usize) -> (HmmModel, ObservationSeries, CovariateSeries) {
    let n_ch = rng.random_range(1..=2usize);
    let families: Vec<usize> = (0..n_ch).map(|_| rng.random_range(0..3usize)).collect();
    let p = rng.random_range(0..=2usize);
    let beta = (0..n * (n - 1) * (p + 1)).map(|_| rng.random_range(-2.0..2.0)).collect();
    let transition = TransitionCoefficients::new(n, p, beta).unwrap();
    let states = (0..n)
        .map(|_| families.iter().map(|&f| random_emission(rng, f)).collect())
        .collect();
    let initial = match rng.random_range(0..3u32) {
        0 => InitialDistribution::Stationary,
        1 => InitialDistribution::Uniform,
        _ => {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            InitialDistribution::Fixed(w.iter().map(|v| v / s).collect())
        }
    };
    let model = HmmModel::new(transition, EmissionSpec::new(states).unwrap(), initial).unwrap();
    let split = if len >= 4 && rng.random_bool(0.5) { rng.random_range(1..len) } else { len };
    let seg: Vec<u32> = (0..len).map(|t| u32::from(t >= split)).collect();
    let values = (0..len)
        .flat_map(|_| families.clone())
        .map(|f| (!rng.random_bool(0.15)).then(|| random_value(rng, f)))
        .collect();
    let obs = ObservationSeries::new(n_ch, values, seg.clone()).unwrap();
    let z = (0..len * p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let cov = CovariateSeries::new(p, z, seg).unwrap();
    (model, obs, cov)
}

pub fn random_stochastic<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
    for mut row in g.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    g
}
