//! Hard monotonic alignment between encoded tokens and feature frames.
//!
//! An [`Alignment`] maps each of `F` frames to one of `L` tokens, non-decreasing and onto.
//! Token and frame indices are zero-based here; external formats carry durations only.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::MlpLayout;

/// Relative tolerance under which two path scores count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alignment {
    frame_to_token: Vec<usize>,
    num_tokens: usize,
}

impl Alignment {
    pub fn from_frame_to_token(frame_to_token: Vec<usize>, num_tokens: usize) -> Result<Self> {
        if num_tokens == 0 {
            return Err(Error::InvalidAlignment("no tokens".into()));
        }
        if frame_to_token.first() != Some(&0) {
            return Err(Error::InvalidAlignment("first frame must map to the first token".into()));
        }
        if frame_to_token.last() != Some(&(num_tokens - 1)) {
            return Err(Error::InvalidAlignment("last frame must map to the last token".into()));
        }
        for w in frame_to_token.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidAlignment("frame map decreases".into()));
            }
            if w[1] > w[0] + 1 {
                return Err(Error::InvalidAlignment(format!("token {} is skipped", w[0] + 1)));
            }
        }
        Ok(Self { frame_to_token, num_tokens })
    }

    pub fn from_durations(durations: &[usize]) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::InvalidAlignment("no tokens".into()));
        }
        if let Some(i) = durations.iter().position(|&d| d == 0) {
            return Err(Error::InvalidAlignment(format!("token {i} has zero duration")));
        }
        let frame_to_token = durations.iter().enumerate().flat_map(|(i, &d)| std::iter::repeat_n(i, d)).collect();
        Ok(Self { frame_to_token, num_tokens: durations.len() })
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn num_frames(&self) -> usize {
        self.frame_to_token.len()
    }

    pub fn frame_to_token(&self) -> &[usize] {
        &self.frame_to_token
    }

    pub fn durations(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_tokens];
        for &i in &self.frame_to_token {
            d[i] += 1;
        }
        d
    }

    /// CSV with header `token,duration` (token indices start at 1).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "token,duration")?;
        for (i, d) in self.durations().iter().enumerate() {
            writeln!(out, "{},{}", i + 1, d)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "token,duration" => {}
            _ => return Err(Error::Format("duration CSV must start with `token,duration`".into())),
        }
        let mut durations = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (tok, dur) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("malformed duration row `{line}`")))?;
            let tok: usize = tok.trim().parse().map_err(|_| Error::Format(format!("bad token index `{tok}`")))?;
            if tok != k + 1 {
                return Err(Error::Format(format!("token rows out of order at `{line}`")));
            }
            durations.push(dur.trim().parse().map_err(|_| Error::Format(format!("bad duration `{dur}`")))?);
        }
        Self::from_durations(&durations)
    }
}

fn check_pair(mu_tilde: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if mu_tilde.ncols() != y.ncols() {
        return Err(Error::shape(format!("token features have {} columns, frames {}", mu_tilde.ncols(), y.ncols())));
    }
    if mu_tilde.nrows() == 0 {
        return Err(Error::shape("no tokens"));
    }
    Ok(())
}

fn half_sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// `−Σ_j log N(y_j; μ̃_{A(j)}, I)`.
pub fn encoder_loss(mu_tilde: ArrayView2<f64>, y: ArrayView2<f64>, alignment: &Alignment) -> Result<f64> {
    check_pair(mu_tilde, y)?;
    if alignment.num_tokens() != mu_tilde.nrows() || alignment.num_frames() != y.nrows() {
        return Err(Error::InvalidAlignment(format!(
            "alignment covers {} tokens × {} frames, inputs are {} × {}",
            alignment.num_tokens(),
            alignment.num_frames(),
            mu_tilde.nrows(),
            y.nrows()
        )));
    }
    let n = y.ncols() as f64;
    let constant = 0.5 * n * (2.0 * PI).ln();
    Ok(alignment
        .frame_to_token()
        .iter()
        .zip(y.rows())
        .map(|(&i, yj)| constant + half_sq_dist(yj, mu_tilde.row(i)))
        .sum())
}

fn tied_or_better(candidate: f64, best: f64) -> bool {
    candidate >= best - TIE_TOLERANCE * best.abs().max(1.0)
}

/// Monotonic alignment search: the alignment maximizing `Σ_j log N(y_j; μ̃_{A(j)}, I)`.
///
/// The value-to-go `V[i][j]` (best log-likelihood of frames `j..F` when frame `j` sits on
/// token `i`) is filled right to left with the two moves "stay on token" and "advance one
/// token", and the path is read off left to right. Among equally good alignments the one
/// with the lexicographically smallest duration vector is returned, i.e. the trace advances
/// as soon as advancing costs nothing.
pub fn mas(mu_tilde: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Alignment> {
    check_pair(mu_tilde, y)?;
    let l = mu_tilde.nrows();
    let f = y.nrows();
    if f < l {
        return Err(Error::NoAlignment { tokens: l, frames: f });
    }
    // cost[i][j] = log-likelihood of frame j under token i, without the constant
    let mut ll = Array2::<f64>::zeros((l, f));
    for i in 0..l {
        for j in 0..f {
            ll[[i, j]] = -half_sq_dist(y.row(j), mu_tilde.row(i));
        }
    }
    let neg = f64::NEG_INFINITY;
    let mut value = Array2::<f64>::from_elem((l, f), neg);
    value[[l - 1, f - 1]] = ll[[l - 1, f - 1]];
    for j in (0..f - 1).rev() {
        // token i at frame j is reachable from the start iff i <= j, and can still finish iff
        // the remaining frames cover the remaining tokens
        let lo = (l - 1).saturating_sub(f - 1 - j);
        let hi = j.min(l - 1);
        for i in lo..=hi {
            let stay = value[[i, j + 1]];
            let advance = if i + 1 < l { value[[i + 1, j + 1]] } else { neg };
            value[[i, j]] = ll[[i, j]] + stay.max(advance);
        }
    }
    let mut frame_to_token = Vec::with_capacity(f);
    let mut i = 0;
    frame_to_token.push(0);
    for j in 1..f {
        if i + 1 < l {
            let stay = value[[i, j]];
            let advance = value[[i + 1, j]];
            if advance > neg && (stay == neg || tied_or_better(advance, stay)) {
                i += 1;
            }
        }
        frame_to_token.push(i);
    }
    Alignment::from_frame_to_token(frame_to_token, l)
}

/// `C(F−1, L−1)`: the number of monotonic surjective alignments.
pub fn count_alignments(tokens: usize, frames: usize) -> u128 {
    if tokens == 0 || frames < tokens {
        return 0;
    }
    let n = (frames - 1) as u128;
    let k = (tokens - 1).min(frames - tokens) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul(n - i) / (i + 1);
    }
    c
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

/// Exhaustive optimum over every composition of `F` into `L` positive parts, visited in
/// lexicographic order; ties keep the earliest (lexicographically smallest) durations.
pub fn brute_force_alignment(mu_tilde: ArrayView2<f64>, y: ArrayView2<f64>, cap: u128) -> Result<Alignment> {
    check_pair(mu_tilde, y)?;
    let l = mu_tilde.nrows();
    let f = y.nrows();
    if f < l {
        return Err(Error::NoAlignment { tokens: l, frames: f });
    }
    let candidates = count_alignments(l, f);
    if candidates > cap {
        return Err(Error::EnumerationCap { candidates, cap });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_composition(f, l, &mut |durations| {
        let a = Alignment::from_durations(durations).expect("compositions are valid");
        let loss = encoder_loss(mu_tilde, y, &a).expect("shapes checked");
        let better = match &best {
            None => true,
            Some((b, _)) => -loss > -b && !tied_or_better(-b, -loss),
        };
        if better {
            best = Some((loss, durations.to_vec()));
        }
    });
    let (_, durations) = best.expect("at least one composition");
    Alignment::from_durations(&durations)
}

/// Visit all compositions of `total` into `parts` positive integers in lexicographic order.
pub fn for_each_composition(total: usize, parts: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(remaining: usize, parts_left: usize, buf: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if parts_left == 1 {
            buf.push(remaining);
            visit(buf);
            buf.pop();
            return;
        }
        for d in 1..=remaining - (parts_left - 1) {
            buf.push(d);
            rec(remaining - d, parts_left - 1, buf, visit);
            buf.pop();
        }
    }
    if parts == 0 || total < parts {
        return;
    }
    let mut buf = Vec::with_capacity(parts);
    rec(total, parts, &mut buf, visit);
}

/// `d_i = log(frames assigned to token i)`.
pub fn durations_from_alignment(alignment: &Alignment) -> Array1<f64> {
    alignment.durations().into_iter().map(|d| (d as f64).ln()).collect()
}

/// Repeat token row `i` `durations[i]` times.
pub fn expand_encoded(mu_tilde: ArrayView2<f64>, durations: &[usize]) -> Result<Array2<f64>> {
    if durations.len() != mu_tilde.nrows() {
        return Err(Error::InvalidAlignment(format!(
            "{} durations for {} tokens",
            durations.len(),
            mu_tilde.nrows()
        )));
    }
    let alignment = Alignment::from_durations(durations)?;
    Ok(expand_with(mu_tilde, &alignment))
}

pub fn expand_with(mu_tilde: ArrayView2<f64>, alignment: &Alignment) -> Array2<f64> {
    mu_tilde.select(Axis(0), alignment.frame_to_token())
}

/// `max(1, round_half_up(factor · exp(d_i)))` per token.
pub fn scale_durations(log_durations: ArrayView1<f64>, factor: f64) -> Result<Vec<usize>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::domain(format!("tempo factor must be > 0, got {factor}")));
    }
    log_durations
        .iter()
        .map(|&d| {
            let frames = (factor * d.exp() + 0.5).floor();
            if !frames.is_finite() || frames > 1e9 {
                return Err(Error::NumericalFailure { t: 0.0, what: format!("predicted log-duration {d} overflows") });
            }
            Ok((frames as usize).max(1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationPredictorArch {
    pub dim: usize,
    pub hidden: usize,
}

impl Default for DurationPredictorArch {
    fn default() -> Self {
        Self { dim: 8, hidden: 16 }
    }
}

/// Per-token two-layer map from encoded features to a predicted log-duration.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationPredictor {
    arch: DurationPredictorArch,
    layout: MlpLayout,
    pub params: Vec<f64>,
}

impl DurationPredictor {
    pub fn new<R: Rng + ?Sized>(arch: DurationPredictorArch, rng: &mut R) -> Result<Self> {
        let layout = Self::layout_for(&arch)?;
        let params = layout.init(rng, false);
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: DurationPredictorArch, params: Vec<f64>) -> Result<Self> {
        let layout = Self::layout_for(&arch)?;
        if params.len() != layout.num_params() {
            return Err(Error::shape(format!("duration predictor needs {} parameters, got {}", layout.num_params(), params.len())));
        }
        Ok(Self { arch, layout, params })
    }

    fn layout_for(arch: &DurationPredictorArch) -> Result<MlpLayout> {
        if arch.dim == 0 || arch.hidden == 0 {
            return Err(Error::Config("duration predictor sizes must be positive".into()));
        }
        Ok(MlpLayout::new(vec![arch.dim, arch.hidden, 1]))
    }

    pub fn arch(&self) -> &DurationPredictorArch {
        &self.arch
    }

    fn check(&self, mu_tilde: ArrayView2<f64>) -> Result<()> {
        if mu_tilde.ncols() != self.arch.dim {
            return Err(Error::shape(format!("{} feature columns, predictor expects {}", mu_tilde.ncols(), self.arch.dim)));
        }
        Ok(())
    }

    /// One predicted log-duration per token.
    pub fn predict(&self, mu_tilde: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check(mu_tilde)?;
        Ok(self.layout.forward(&self.params, mu_tilde).column(0).to_owned())
    }

    /// Loss and parameter gradient. The input is a constant here: nothing is returned for it.
    pub fn loss_and_gradients(&self, mu_tilde_detached: ArrayView2<f64>, d: ArrayView1<f64>) -> Result<(f64, Vec<f64>)> {
        self.check(mu_tilde_detached)?;
        if d.len() != mu_tilde_detached.nrows() {
            return Err(Error::shape(format!("{} targets for {} tokens", d.len(), mu_tilde_detached.nrows())));
        }
        let (out, cache) = self.layout.forward_cached(&self.params, mu_tilde_detached);
        let resid = &out.column(0) - &d;
        let count = d.len() as f64;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / count;
        let d_out = (resid * (2.0 / count)).insert_axis(Axis(1));
        let mut grads = vec![0.0; self.params.len()];
        self.layout.backward(&self.params, &cache, d_out, &mut grads);
        Ok((loss, grads))
    }
}

/// Mean squared error between predicted and target log-durations.
pub fn duration_loss(dp: &DurationPredictor, mu_tilde_detached: ArrayView2<f64>, d: ArrayView1<f64>) -> Result<f64> {
    let pred = dp.predict(mu_tilde_detached)?;
    if pred.len() != d.len() {
        return Err(Error::shape(format!("{} targets for {} tokens", d.len(), pred.len())));
    }
    Ok(mse(pred.view(), d))
}

pub fn mse(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};
    use ndarray::array;

    const LOG_2PI: f64 = 1.8378770664093453;

    #[test]
    fn alignment_validation() {
        assert!(Alignment::from_frame_to_token(vec![0, 0, 1], 2).is_ok());
        assert!(Alignment::from_frame_to_token(vec![0, 2, 1], 3).is_err());
        assert!(Alignment::from_frame_to_token(vec![0, 2, 2], 3).is_err());
        assert!(Alignment::from_frame_to_token(vec![0, 0, 0], 2).is_err());
        assert!(Alignment::from_frame_to_token(vec![1, 1], 2).is_err());
        assert!(Alignment::from_durations(&[2, 0, 1]).is_err());
        assert_eq!(Alignment::from_durations(&[2, 1]).unwrap().frame_to_token(), &[0, 0, 1]);
    }

    #[test]
    fn encoder_loss_examples() {
        let mu = array![[0.0], [1.0]];
        let y = array![[0.0], [0.0], [1.0]];
        let a = Alignment::from_durations(&[2, 1]).unwrap();
        assert!((encoder_loss(mu.view(), y.view(), &a).unwrap() - 1.5 * LOG_2PI).abs() < 1e-12);
        assert!((1.5 * LOG_2PI - 2.7568).abs() < 1e-4);
        let b = Alignment::from_durations(&[1, 2]).unwrap();
        assert!((encoder_loss(mu.view(), y.view(), &b).unwrap() - (1.5 * LOG_2PI + 0.5)).abs() < 1e-12);
        let bad = Alignment::from_durations(&[1, 1]).unwrap();
        assert!(matches!(encoder_loss(mu.view(), y.view(), &bad), Err(Error::InvalidAlignment(_))));
    }

    #[test]
    fn mas_examples() {
        let mu = array![[0.0], [1.0]];
        let y = array![[0.0], [0.0], [1.0]];
        assert_eq!(mas(mu.view(), y.view()).unwrap().durations(), vec![2, 1]);
        let one = array![[0.3, 0.1]];
        let frames = standard_normal((6, 2), &mut seeded(1));
        assert_eq!(mas(one.view(), frames.view()).unwrap().durations(), vec![6]);
        assert!(matches!(mas(mu.view(), array![[0.0]].view()), Err(Error::NoAlignment { .. })));
    }

    #[test]
    fn mas_ties_pick_smallest_durations() {
        // identical tokens: every alignment has the same loss
        let mu = array![[0.5], [0.5], [0.5]];
        let y = array![[0.1], [0.2], [0.3], [0.4], [0.9]];
        assert_eq!(mas(mu.view(), y.view()).unwrap().durations(), vec![1, 1, 3]);
        assert_eq!(brute_force_alignment(mu.view(), y.view(), DEFAULT_ENUMERATION_CAP).unwrap().durations(), vec![1, 1, 3]);
    }

    #[test]
    fn brute_force_counts_and_identity() {
        assert_eq!(count_alignments(2, 3), 2);
        assert_eq!(count_alignments(4, 8), 35);
        assert_eq!(count_alignments(3, 2), 0);
        let mut seen = Vec::new();
        for_each_composition(3, 2, &mut |d| seen.push(d.to_vec()));
        assert_eq!(seen, vec![vec![1, 2], vec![2, 1]]);
        let mu = standard_normal((4, 2), &mut seeded(3));
        let y = standard_normal((4, 2), &mut seeded(4));
        assert_eq!(brute_force_alignment(mu.view(), y.view(), 10).unwrap().durations(), vec![1; 4]);
    }

    #[test]
    fn brute_force_respects_cap() {
        let mu = Array2::zeros((10, 1));
        let y = Array2::zeros((40, 1));
        assert!(matches!(brute_force_alignment(mu.view(), y.view(), 1000), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn log_durations() {
        let d = durations_from_alignment(&Alignment::from_durations(&[2, 1]).unwrap());
        assert!((d[0] - 2f64.ln()).abs() < 1e-15 && d[1] == 0.0);
        assert!(durations_from_alignment(&Alignment::from_durations(&[1, 1, 1]).unwrap()).iter().all(|&v| v == 0.0));
        let d = durations_from_alignment(&Alignment::from_durations(&[7]).unwrap());
        assert!((d[0] - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn expansion() {
        let mu = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(expand_encoded(mu.view(), &[1, 1]).unwrap(), mu);
        assert_eq!(expand_encoded(mu.view(), &[2, 1]).unwrap(), array![[1.0, 2.0], [1.0, 2.0], [3.0, 4.0]]);
        assert!(expand_encoded(mu.view(), &[2, 0]).is_err());
        assert!(expand_encoded(mu.view(), &[2]).is_err());
    }

    #[test]
    fn tempo_scaling() {
        let d = array![2f64.ln(), 0.0];
        assert_eq!(scale_durations(d.view(), 1.0).unwrap(), vec![2, 1]);
        assert_eq!(scale_durations(d.view(), 2.0).unwrap(), vec![4, 2]);
        assert_eq!(scale_durations(array![0.0].view(), 0.1).unwrap(), vec![1]);
        assert_eq!(scale_durations(array![0.0].view(), 2.5).unwrap(), vec![3]);
        assert!(scale_durations(d.view(), 0.0).is_err());
        assert!(scale_durations(d.view(), -1.0).is_err());
    }

    #[test]
    fn duration_loss_examples() {
        let dp = DurationPredictor::new(DurationPredictorArch { dim: 2, hidden: 3 }, &mut seeded(1)).unwrap();
        let mu = standard_normal((4, 2), &mut seeded(2));
        let pred = dp.predict(mu.view()).unwrap();
        assert_eq!(duration_loss(&dp, mu.view(), pred.view()).unwrap(), 0.0);
        let shifted = &pred - 1.0;
        assert!((duration_loss(&dp, mu.view(), shifted.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!(duration_loss(&dp, mu.view(), array![0.0].view()).is_err());
    }

    #[test]
    fn duration_gradient_matches_finite_differences() {
        let dp = DurationPredictor::new(DurationPredictorArch { dim: 3, hidden: 4 }, &mut seeded(5)).unwrap();
        let mu = standard_normal((5, 3), &mut seeded(6));
        let d: Array1<f64> = standard_normal(5, &mut seeded(7));
        let (loss, g) = dp.loss_and_gradients(mu.view(), d.view()).unwrap();
        assert!((loss - duration_loss(&dp, mu.view(), d.view()).unwrap()).abs() < 1e-14);
        for k in 0..dp.params.len() {
            let mut p = dp.clone();
            p.params[k] += 1e-6;
            let up = duration_loss(&p, mu.view(), d.view()).unwrap();
            p.params[k] -= 2e-6;
            let down = duration_loss(&p, mu.view(), d.view()).unwrap();
            let fd = (up - down) / 2e-6;
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn duration_csv_round_trip() {
        let a = Alignment::from_durations(&[3, 1, 2]).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "token,duration\n1,3\n2,1\n3,2\n");
        assert_eq!(Alignment::read_csv(buf.as_slice()).unwrap(), a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
            (1usize..5, 0usize..5, 1usize..4).prop_flat_map(|(l, extra, n)| {
                let f = l + extra;
                (
                    proptest::collection::vec(-3.0..3.0f64, l * n),
                    proptest::collection::vec(-3.0..3.0f64, f * n),
                )
                    .prop_map(move |(a, b)| {
                        (Array2::from_shape_vec((l, n), a).unwrap(), Array2::from_shape_vec((f, n), b).unwrap())
                    })
            })
        }

        proptest! {
            #[test]
            fn mas_output_is_valid_and_optimal((mu, y) in instance()) {
                let a = mas(mu.view(), y.view()).unwrap();
                prop_assert_eq!(a.num_frames(), y.nrows());
                prop_assert_eq!(a.durations().iter().sum::<usize>(), y.nrows());
                prop_assert!(a.durations().iter().all(|&d| d >= 1));
                let b = brute_force_alignment(mu.view(), y.view(), DEFAULT_ENUMERATION_CAP).unwrap();
                let la = encoder_loss(mu.view(), y.view(), &a).unwrap();
                let lb = encoder_loss(mu.view(), y.view(), &b).unwrap();
                prop_assert!((la - lb).abs() <= 1e-9 * lb.abs().max(1.0));
            }

            #[test]
            fn translation_leaves_argmin_unchanged((mu, y) in instance(), shift in -10.0..10.0f64) {
                let a = mas(mu.view(), y.view()).unwrap();
                let b = mas((&mu + shift).view(), (&y + shift).view()).unwrap();
                let la = encoder_loss(mu.view(), y.view(), &a).unwrap();
                let lb = encoder_loss(mu.view(), y.view(), &b).unwrap();
                prop_assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0));
            }

            #[test]
            fn expansion_round_trips(durs in proptest::collection::vec(1usize..6, 1..7)) {
                let l = durs.len();
                let mu = Array2::from_shape_fn((l, 2), |(i, c)| (i * 10 + c) as f64);
                let expanded = expand_encoded(mu.view(), &durs).unwrap();
                prop_assert_eq!(expanded.nrows(), durs.iter().sum::<usize>());
                let a = Alignment::from_durations(&durs).unwrap();
                let logd = durations_from_alignment(&a);
                prop_assert_eq!(scale_durations(logd.view(), 1.0).unwrap(), durs);
            }
        }
    }
}
