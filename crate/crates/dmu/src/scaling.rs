//! Memory-scaling controller.
//!
//! During BPTT the adjoint at each scaled-memory node `S_k * h_t` is a
//! per-timestep gradient `g_t`. Backward-in-time growth of `||g_t||`
//! signals gradient explosion, shrinkage signals vanishing. After each
//! episode the controller nudges the scalar `S` by the clipped
//! recursion
//!
//! ```text
//! S_{k+1} = min{ S_k (k-1)/k
//!              + S_k (1/k) (sum ||g_{t-1}||^p / sum ||g_t||^p)^(-1/(p(1+eps))),
//!              1 }
//! ```
//!
//! so a ratio above one (exploding) shrinks `S` and a ratio below one
//! would raise it, capped at 1. The exponent groups both factors in the
//! denominator: the weighted-average step raises the ratio to `-1/p`
//! and the pull-toward-one step adds the `1/(1+eps)` factor on top.
//!
//! Conventions not fixed by the update itself: `||.||` is the 2-norm,
//! aggregated over the batch as a Frobenius norm; `S_1 = 1`; norms
//! below `norm_floor` are floored before any ratio; an episode with
//! fewer than two captured norms is skipped but still advances `k`.

use crate::autodiff::{AdError, Tape, TensorId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("interpolation chain needs at least 2 norms, got {0}")]
    TooFewNorms(usize),
}

/// Gradient norms `||g_t||` captured from one episode, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradLog {
    pub norms: Vec<f64>,
}

impl EpisodeGradLog {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

/// Read the Frobenius norm of the adjoint at every scaled-memory node.
/// Requires that backward has already run on the episode's loss.
pub fn capture_norms(tape: &Tape, grad_nodes: &[TensorId]) -> Result<EpisodeGradLog, AdError> {
    let mut norms = Vec::with_capacity(grad_nodes.len());
    for &node in grad_nodes {
        let adj = tape.adjoint(node)?;
        norms.push(adj.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(EpisodeGradLog { norms })
}

/// The per-module scalar `S_k` and its update hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleController {
    s: f64,
    k: u64,
    p: f64,
    epsilon: f64,
    norm_floor: f64,
    enabled: bool,
}

impl ScaleController {
    /// Fresh controller with `S_1 = 1`.
    pub fn new(p: f64, epsilon: f64) -> Self {
        assert!(p >= 1.0, "p must be >= 1");
        assert!(epsilon > 0.0, "epsilon must be positive");
        ScaleController {
            s: 1.0,
            k: 1,
            p,
            epsilon,
            norm_floor: 1e-12,
            enabled: true,
        }
    }

    /// Controller for the ablation configuration: `S` stays 1 forever,
    /// the episode counter still advances.
    pub fn disabled() -> Self {
        ScaleController {
            enabled: false,
            ..ScaleController::new(1.0, 0.2)
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn scale(&self) -> f64 {
        self.s
    }

    pub fn episode(&self) -> u64 {
        self.k
    }

    /// Consume one episode's gradient log and advance to `S_{k+1}`.
    pub fn update(&mut self, log: &EpisodeGradLog) {
        let k = self.k;
        self.k += 1;
        if !self.enabled || log.len() < 2 {
            return;
        }
        let floored: Vec<f64> = log.norms.iter().map(|&n| n.max(self.norm_floor)).collect();
        let last = floored.len() - 1;
        let numer: f64 = floored[..last].iter().map(|n| n.powf(self.p)).sum();
        let denom: f64 = floored[1..].iter().map(|n| n.powf(self.p)).sum();
        let factor = (numer / denom).powf(-1.0 / (self.p * (1.0 + self.epsilon)));
        let k = k as f64;
        let raw = self.s * (k - 1.0) / k + self.s * factor / k;
        self.s = raw.min(1.0);
    }
}

/// The intermediate per-episode multiplicative factors of the scaling
/// recursion, from the plain average-ratio form through the final
/// averaged one. A diagnostic for tests and the `check-scaling` CLI.
#[derive(Debug, Clone, Copy)]
pub struct ChainFactors {
    /// Inverse of the plain average of `||g_{t-1}|| / ||g_t||`.
    pub s0: f64,
    /// Inverse `p`-mean of the ratios; large `p` weights the worst step.
    pub s1: f64,
    /// Gradient-magnitude-weighted form: `(sum ||g_{t-1}||^p / sum ||g_t||^p)^(-1/p)`.
    pub s2: f64,
    /// `s2` softened toward 1 by the `1/(1+eps)` exponent.
    pub s3: f64,
    /// The factor entering the running average; identical to `s3`, the
    /// averaging itself applies it with weight `1/k`.
    pub s4: f64,
}

/// Evaluate each intermediate formula on a raw norm list.
pub fn interpolation_chain(norms: &[f64], p: f64, epsilon: f64) -> Result<ChainFactors, ScaleError> {
    if norms.len() < 2 {
        return Err(ScaleError::TooFewNorms(norms.len()));
    }
    let floor = 1e-12;
    let floored: Vec<f64> = norms.iter().map(|&n| n.max(floor)).collect();
    let ratios: Vec<f64> = floored.windows(2).map(|w| w[0] / w[1]).collect();
    let steps = ratios.len() as f64;

    let mean_ratio = ratios.iter().sum::<f64>() / steps;
    let s0 = mean_ratio.powi(-1);

    let mean_ratio_p = ratios.iter().map(|r| r.powf(p)).sum::<f64>() / steps;
    let s1 = mean_ratio_p.powf(-1.0 / p);

    let last = floored.len() - 1;
    let numer: f64 = floored[..last].iter().map(|n| n.powf(p)).sum();
    let denom: f64 = floored[1..].iter().map(|n| n.powf(p)).sum();
    let s2 = (numer / denom).powf(-1.0 / p);
    let s3 = (numer / denom).powf(-1.0 / (p * (1.0 + epsilon)));

    Ok(ChainFactors { s0, s1, s2, s3, s4: s3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::array;

    #[test]
    fn capture_before_backward_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0]]);
        assert!(capture_norms(&tape, &[x]).is_err());
    }

    #[test]
    fn loss_detached_from_memory_gives_zero_norms() {
        let mut tape = Tape::new();
        let mem = tape.leaf(array![[0.5, 0.5]]);
        let scaled = tape.scale(mem, 1.0);
        let other = tape.leaf(array![[1.0]]);
        let y = tape.tanh(other);
        let loss = tape.mse_loss(y, &array![[0.0]]).unwrap();
        tape.backward(loss).unwrap();
        let log = capture_norms(&tape, &[scaled]).unwrap();
        assert_eq!(log.norms, vec![0.0]);
    }

    #[test]
    fn linear_recurrence_norms_are_geometric() {
        // h_t = a * h_{t-1} via a scaled node at each step; the adjoint at
        // the t-th scaled node is a^(T-t) * dL/dh_T, so consecutive norms
        // have ratio |a|.
        let a = 0.6;
        let steps = 5;
        let mut tape = Tape::new();
        let mut h = tape.leaf(array![[1.0]]);
        let mut scaled_nodes = Vec::new();
        for _ in 0..steps {
            let scaled = tape.scale(h, 1.0);
            scaled_nodes.push(scaled);
            h = tape.scale(scaled, a);
        }
        let loss = tape.mse_loss(h, &array![[0.0]]).unwrap();
        tape.backward(loss).unwrap();
        let log = capture_norms(&tape, &scaled_nodes).unwrap();
        assert_eq!(log.len(), steps);
        // dL/dh_T = 2 * h_T = 2 a^steps; h_T = a^(steps-t) * scaled_t, so
        // the adjoint at scaled node t is a^(steps-t) times that.
        let dl_dht = 2.0 * a.powi(steps as i32);
        for (t, &n) in log.norms.iter().enumerate() {
            let expected = a.powi((steps - t) as i32) * dl_dht;
            assert!((n - expected).abs() < 1e-12, "t={t}: {n} vs {expected}");
        }
        for w in log.norms.windows(2) {
            assert!((w[1] / w[0] - 1.0 / a).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_norms_are_a_fixed_point() {
        for k0 in [1u64, 5, 50] {
            let mut ctrl = ScaleController::new(1.0, 0.2);
            for _ in 1..k0 {
                ctrl.update(&EpisodeGradLog { norms: vec![1.0, 1.0] });
            }
            let before = ctrl.scale();
            ctrl.update(&EpisodeGradLog {
                norms: vec![0.37, 0.37, 0.37, 0.37],
            });
            assert!((ctrl.scale() - before).abs() < 1e-15);
        }
    }

    #[test]
    fn first_update_with_ratio_two() {
        // k=1, S=1, p=1, eps=0.2, ratio 2 -> S_2 = 2^(-1/1.2).
        let mut ctrl = ScaleController::new(1.0, 0.2);
        ctrl.update(&EpisodeGradLog { norms: vec![4.0, 2.0, 1.0] });
        assert!((ctrl.scale() - 0.5612310241546865).abs() < 1e-12);
        assert_eq!(ctrl.episode(), 2);
    }

    #[test]
    fn vanishing_ratio_is_clipped_to_one() {
        // ratio 0.5 -> raw factor 0.5^(-1/1.2) ~ 1.78, clipped to 1.
        let mut ctrl = ScaleController::new(1.0, 0.2);
        ctrl.update(&EpisodeGradLog { norms: vec![1.0, 2.0, 4.0] });
        assert_eq!(ctrl.scale(), 1.0);
    }

    #[test]
    fn averaged_update_at_k_ten() {
        // k=10, S=0.8, ratio 1.44: S_11 = 0.8*0.9 + 0.08*1.44^(-1/1.2).
        let mut ctrl = ScaleController::new(1.0, 0.2);
        // Drive k to 10 with skipped episodes, then force S to 0.8 by
        // rebuilding: use the serde-visible constructor path instead.
        for _ in 0..9 {
            ctrl.update(&EpisodeGradLog { norms: vec![] });
        }
        assert_eq!(ctrl.episode(), 10);
        ctrl.s = 0.8;
        ctrl.update(&EpisodeGradLog { norms: vec![1.44, 1.0] });
        assert!((ctrl.scale() - 0.7790365871768118).abs() < 1e-12);
    }

    #[test]
    fn short_log_skips_but_counts() {
        let mut ctrl = ScaleController::new(1.0, 0.2);
        ctrl.update(&EpisodeGradLog { norms: vec![5.0] });
        assert_eq!(ctrl.scale(), 1.0);
        assert_eq!(ctrl.episode(), 2);
    }

    #[test]
    fn all_floored_norms_leave_s_unchanged() {
        let mut ctrl = ScaleController::new(1.0, 0.2);
        ctrl.update(&EpisodeGradLog { norms: vec![9.0, 3.0] });
        let s = ctrl.scale();
        ctrl.update(&EpisodeGradLog { norms: vec![0.0, 0.0, 0.0] });
        assert_eq!(ctrl.scale(), s);
        assert_eq!(ctrl.episode(), 3);
    }

    #[test]
    fn clipping_and_positivity_over_random_updates() {
        let mut ctrl = ScaleController::new(1.0, 0.2);
        let mut state = 88172645463325252u64;
        let mut next = move || {
            // xorshift, good enough for fuzzing norms
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 10_000) as f64 / 100.0
        };
        for _ in 0..500 {
            let norms: Vec<f64> = (0..5).map(|_| next()).collect();
            ctrl.update(&EpisodeGradLog { norms });
            assert!(ctrl.scale() > 0.0 && ctrl.scale() <= 1.0);
        }
    }

    #[test]
    fn monotone_in_growth_ratio() {
        let mut prev = f64::INFINITY;
        for ratio in [0.5, 1.0, 1.5, 2.0, 4.0] {
            let mut ctrl = ScaleController::new(1.0, 0.2);
            ctrl.update(&EpisodeGradLog { norms: vec![ratio, 1.0] });
            assert!(ctrl.scale() <= prev);
            prev = ctrl.scale();
        }
    }

    #[test]
    fn update_shrinks_with_k() {
        // |S_{k+1} - S_k| <= S_k * (1/k) * |factor - 1|
        let mut ctrl = ScaleController::new(1.0, 0.2);
        let factor = (2.0f64).powf(-1.0 / 1.2);
        for _ in 0..200 {
            let before = ctrl.scale();
            let k = ctrl.episode() as f64;
            ctrl.update(&EpisodeGradLog { norms: vec![2.0, 1.0] });
            let bound = before * (factor - 1.0).abs() / k + 1e-15;
            assert!((ctrl.scale() - before).abs() <= bound);
        }
    }

    #[test]
    fn disabled_controller_is_the_ablation() {
        let mut ctrl = ScaleController::disabled();
        for _ in 0..50 {
            ctrl.update(&EpisodeGradLog { norms: vec![100.0, 1.0] });
            assert_eq!(ctrl.scale(), 1.0);
        }
        assert_eq!(ctrl.episode(), 51);
    }

    #[test]
    fn chain_p1_collapses_s2_to_inverse_sum_ratio() {
        let f = interpolation_chain(&[4.0, 2.0, 1.0], 1.0, 0.2).unwrap();
        assert!((f.s0 - 0.5).abs() < 1e-12);
        assert!((f.s2 - (2.0 + 1.0) / (4.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn chain_constant_norms_all_factors_one() {
        let f = interpolation_chain(&[0.9, 0.9, 0.9, 0.9], 3.0, 0.5).unwrap();
        for v in [f.s0, f.s1, f.s2, f.s3, f.s4] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_large_p_approaches_max_ratio_limit() {
        // Unique max ratio 3.0, others 1.0: the p=64 mean is dominated
        // by the largest element.
        let norms = [3.0, 1.0, 1.0, 1.0];
        let f = interpolation_chain(&norms, 64.0, 0.2).unwrap();
        let limit = 1.0 / 3.0;
        assert!((f.s1 - limit).abs() / limit < 0.05);
    }

    #[test]
    fn chain_too_few_norms() {
        assert!(matches!(
            interpolation_chain(&[1.0], 1.0, 0.2),
            Err(ScaleError::TooFewNorms(1))
        ));
    }
}
