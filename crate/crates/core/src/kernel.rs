//! Random Fourier features, the primal max-margin hinge objective and the
//! margin/decision rules of the cross-domain kernel classifier.
//!
//! The hyperplane is `w·φ(z) − ρ = 0`. Source points carry signed labels
//! `ỹ = 2y − 1` (vulnerable = +1). Vulnerable points should score `≥ 0`,
//! non-vulnerable points `≤ −1`, and target points `≥ 0` (the origin sits on
//! the far side of the hyperplane).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Params, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Frozen frequency matrix `Ω` (`K×d`, iid `N(0, 2γ)`) of a Gaussian-kernel
/// random feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct RffFrequencies {
    omega: Tensor,
    omega_t: Tensor,
    gamma: f64,
}

impl RffFrequencies {
    pub fn from_omega(omega: Tensor, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
        }
        Ok(RffFrequencies { omega_t: omega.transpose(), omega, gamma })
    }

    pub fn omega(&self) -> &Tensor {
        &self.omega
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of frequencies `K`; the feature dimension is `2K`.
    pub fn k(&self) -> usize {
        self.omega.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.omega.cols()
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.k()
    }
}

pub fn sample_frequencies(d: usize, k: usize, gamma: f64, seed: u64) -> Result<RffFrequencies> {
    if d == 0 || k == 0 {
        return Err(Error::Validation(format!("invalid feature map dimensions d={d}, K={k}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
    }
    let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..k * d).map(|_| normal.sample(&mut rng)).collect();
    RffFrequencies::from_omega(Tensor::from_vec(k, d, data)?, gamma)
}

/// The map from latents to classifier features.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureMap {
    Rff(RffFrequencies),
    /// `φ(z) = z`; used to check the optimizer against an exact solver.
    Linear { dim: usize },
}

impl FeatureMap {
    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureMap::Rff(f) => f.feature_dim(),
            FeatureMap::Linear { dim } => *dim,
        }
    }

    /// `B×d` latents to `B×F` features on the tape.
    pub fn apply(&self, tape: &mut Tape, z: Var) -> Var {
        match self {
            FeatureMap::Linear { .. } => z,
            FeatureMap::Rff(f) => {
                let omega_t = tape.constant(f.omega_t.clone());
                let proj = tape.matmul(z, omega_t);
                let c = tape.cos(proj);
                let s = tape.sin(proj);
                let cat = tape.concat_cols(&[c, s]);
                tape.scale(cat, 1.0 / (f.k() as f64).sqrt())
            }
        }
    }

    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Linear { .. } => z.to_vec(),
            FeatureMap::Rff(f) => rff_map(z, f),
        }
    }
}

/// `[cos(ω_k·z)/√K]_k ++ [sin(ω_k·z)/√K]_k`.
pub fn rff_map(z: &[f64], freqs: &RffFrequencies) -> Vec<f64> {
    assert_eq!(z.len(), freqs.input_dim(), "latent dimension");
    let k = freqs.k();
    let scale = 1.0 / (k as f64).sqrt();
    let mut out = vec![0.0; 2 * k];
    for r in 0..k {
        let dot: f64 = freqs.omega.row_slice(r).iter().zip(z).map(|(a, b)| a * b).sum();
        out[r] = dot.cos() * scale;
        out[k + r] = dot.sin() * scale;
    }
    out
}

/// Gaussian kernel `exp(−γ‖x − x′‖²)` that the features approximate.
pub fn gaussian_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// Median heuristic `γ = 1 / (2·median²)` over pairwise distances. Falls back
/// to `γ = 1` when all points coincide.
pub fn median_heuristic_gamma(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] };
    if median > 0.0 {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

/// Hyperplane normal `w` and offset `ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub w: Vec<f64>,
    pub rho: f64,
}

pub const W_NAME: &str = "kernel.w";
pub const RHO_NAME: &str = "kernel.rho";

impl KernelParams {
    /// `w ~ U(±1e-2)`, `ρ = 0`.
    pub fn init(feature_dim: usize, rng: &mut impl Rng) -> Self {
        KernelParams { w: (0..feature_dim).map(|_| rng.random_range(-1e-2..=1e-2)).collect(), rho: 0.0 }
    }

    pub fn to_params(&self) -> Params {
        let mut p = Params::new();
        p.insert(W_NAME, Tensor::column(self.w.clone()));
        p.insert(RHO_NAME, Tensor::scalar(self.rho));
        p
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        let w = p.get(W_NAME).ok_or_else(|| Error::Checkpoint(format!("missing {W_NAME}")))?;
        let rho = p.get(RHO_NAME).ok_or_else(|| Error::Checkpoint(format!("missing {RHO_NAME}")))?;
        Ok(KernelParams { w: w.data().to_vec(), rho: rho.item() })
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        KernelParams { w: self.w.iter().map(|v| v * k).collect(), rho: self.rho * k }
    }

    /// `w·φ − ρ`.
    pub fn score(&self, phi: &[f64]) -> f64 {
        assert_eq!(phi.len(), self.w.len(), "feature dimension");
        self.w.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() - self.rho
    }
}

/// `+1` for vulnerable (`y = 1`), `−1` otherwise.
pub fn signed_label(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// How the target batch enters the hinge objective.
#[derive(Clone, Copy, Debug)]
pub enum TargetTerm {
    /// Target features (`B_T×F`) with their one-sided hinge.
    Hinge(Var),
    /// Only the batch size counts, in the normalizer.
    CountOnly(usize),
}

/// The objective and its parts, as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct MarginLoss {
    pub total: Var,
    pub regularizer: Var,
    pub source_hinge: Var,
    pub target_hinge: Option<Var>,
}

/// `½‖w‖² + (1/N)·[Σ_vuln max(0, −z) + Σ_clean max(0, 1 − z)]
///  + (λ/N)·Σ_target max(0, ρ − w·φ)` with `z = ỹ(w·φ − ρ)` and
/// `N = N_S + N_T`.
///
/// `w` is `F×1`, `rho` is `1×1`.
pub fn margin_loss(
    tape: &mut Tape,
    phi_source: Var,
    labels: &[u8],
    target: TargetTerm,
    w: Var,
    rho: Var,
    lambda: f64,
) -> Result<MarginLoss> {
    let n_source = tape.value(phi_source).rows();
    if n_source != labels.len() {
        return Err(Error::Shape(format!("{n_source} source rows vs {} labels", labels.len())));
    }
    let n_target = match target {
        TargetTerm::Hinge(phi_t) => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Validation(format!("lambda must be positive, got {lambda}")));
            }
            tape.value(phi_t).rows()
        }
        TargetTerm::CountOnly(n) => n,
    };
    let normalizer = (n_source + n_target) as f64;

    let ww = tape.mul(w, w);
    let ww = tape.sum(ww);
    let regularizer = tape.scale(ww, 0.5);

    let neg_rho = tape.neg(rho);
    let raw = tape.matmul(phi_source, w);
    let score = tape.add_broadcast(raw, neg_rho);
    let signs = tape.constant(Tensor::column(labels.iter().map(|&y| signed_label(y)).collect()));
    let z = tape.mul(signs, score);
    let offsets = tape.constant(Tensor::column(labels.iter().map(|&y| if y == 1 { 0.0 } else { 1.0 }).collect()));
    let slack = tape.sub(offsets, z);
    let hinge = tape.relu(slack);
    let hinge_sum = tape.sum(hinge);
    let source_hinge = tape.scale(hinge_sum, 1.0 / normalizer);
    let mut total = tape.add(regularizer, source_hinge);

    let target_hinge = match target {
        TargetTerm::Hinge(phi_t) => {
            let raw_t = tape.matmul(phi_t, w);
            let neg = tape.neg(raw_t);
            let slack_t = tape.add_broadcast(neg, rho);
            let hinge_t = tape.relu(slack_t);
            let sum_t = tape.sum(hinge_t);
            let term = tape.scale(sum_t, lambda / normalizer);
            total = tape.add(total, term);
            Some(term)
        }
        TargetTerm::CountOnly(_) => None,
    };
    Ok(MarginLoss { total, regularizer, source_hinge, target_hinge })
}

/// Source margin `min_vuln (w·φ − ρ)/‖w‖` and target margin `ρ/‖w‖`.
pub fn margins(kp: &KernelParams, vulnerable_phis: &[Vec<f64>]) -> Result<(f64, f64)> {
    let norm = kp.norm();
    if norm == 0.0 {
        return Err(Error::Validation("margins are undefined for w = 0".into()));
    }
    if vulnerable_phis.is_empty() {
        return Err(Error::Validation("source margin needs at least one vulnerable point".into()));
    }
    let source = vulnerable_phis.iter().map(|phi| kp.score(phi) / norm).fold(f64::INFINITY, f64::min);
    Ok((source, kp.rho / norm))
}

/// 1 (vulnerable) iff `w·φ(z) − ρ ≥ threshold`.
pub fn decide(latent: &[f64], kp: &KernelParams, map: &FeatureMap, threshold: f64) -> u8 {
    u8::from(kp.score(&map.features(latent)) >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    #[test]
    fn frequencies_are_deterministic_with_the_right_shape() {
        let a = sample_frequencies(128, 512, 0.5, 9).unwrap();
        let b = sample_frequencies(128, 512, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.omega().shape(), [512, 128]);
        assert!(sample_frequencies(0, 4, 1.0, 1).is_err());
        assert!(sample_frequencies(4, 0, 1.0, 1).is_err());
        assert!(sample_frequencies(4, 4, 0.0, 1).is_err());
    }

    #[test]
    fn frequency_moments() {
        // gamma = 0.5 → N(0, 1); n = 65,536 entries
        let f = sample_frequencies(128, 512, 0.5, 2024).unwrap();
        let data = f.omega().data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn features_at_zero_projection() {
        let f = sample_frequencies(3, 8, 1.0, 1).unwrap();
        let phi = rff_map(&[0.0; 3], &f);
        let s = 1.0 / 8f64.sqrt();
        assert!(phi[..8].iter().all(|&v| (v - s).abs() < 1e-15));
        assert!(phi[8..].iter().all(|&v| v == 0.0));
        assert!((phi.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tape_features_match_direct_map() {
        let f = sample_frequencies(3, 5, 0.7, 4).unwrap();
        let map = FeatureMap::Rff(f.clone());
        let z = vec![0.3, -1.2, 0.8];
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::row(z.clone()));
        let phi = map.apply(&mut tape, zv);
        let direct = rff_map(&z, &f);
        for (a, b) in tape.value(phi).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn hinge_setup(
        tape: &mut Tape,
        kp: &KernelParams,
        phis: &[Vec<f64>],
        target: &[Vec<f64>],
    ) -> (Var, Var, Var, Option<Var>) {
        let w = tape.leaf(Tensor::column(kp.w.clone()));
        let rho = tape.leaf(Tensor::scalar(kp.rho));
        let ps = tape.constant(Tensor::from_rows(phis).unwrap());
        let pt = (!target.is_empty()).then(|| tape.constant(Tensor::from_rows(target).unwrap()));
        (w, rho, ps, pt)
    }

    #[test]
    fn zero_hyperplane_charges_each_clean_point_once() {
        let kp = KernelParams { w: vec![0.0; 2], rho: 0.0 };
        let phis = vec![vec![0.3, 0.1], vec![-0.2, 0.5], vec![0.9, 0.9], vec![0.0, 1.0]];
        let labels = [1, 0, 0, 1];
        let target = vec![vec![0.5, 0.5], vec![0.1, 0.2]];
        let mut tape = Tape::new();
        let (w, rho, ps, pt) = hinge_setup(&mut tape, &kp, &phis, &target);
        let l = margin_loss(&mut tape, ps, &labels, TargetTerm::Hinge(pt.unwrap()), w, rho, 0.1).unwrap();
        assert_eq!(tape.value(l.total).item(), 2.0 / 6.0);
    }

    #[test]
    fn hand_evaluated_objective() {
        // w = (0.5, −1), ρ = 0.2, λ = 0.1, N = 3
        // vulnerable φ = (1, 0.5): s = 0.5 − 0.5 − 0.2 = −0.2 → hinge 0.2
        // clean φ = (0.2, −0.4):   s = 0.1 + 0.4 − 0.2 = 0.3, z = −0.3 → hinge 1.3
        // target φ = (0.4, 0.4):   w·φ = −0.2 → hinge ρ − w·φ = 0.4
        // L = ½(0.25 + 1) + (0.2 + 1.3)/3 + 0.1·0.4/3
        let kp = KernelParams { w: vec![0.5, -1.0], rho: 0.2 };
        let mut tape = Tape::new();
        let (w, rho, ps, pt) =
            hinge_setup(&mut tape, &kp, &[vec![1.0, 0.5], vec![0.2, -0.4]], &[vec![0.4, 0.4]]);
        let l = margin_loss(&mut tape, ps, &[1, 0], TargetTerm::Hinge(pt.unwrap()), w, rho, 0.1).unwrap();
        let expected = 0.625 + 1.5 / 3.0 + 0.04 / 3.0;
        assert!((tape.value(l.total).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn vulnerable_hinge_term() {
        // single vulnerable point at score −0.5 → hinge 0.5
        let kp = KernelParams { w: vec![1.0], rho: 0.5 };
        let mut tape = Tape::new();
        let (w, rho, ps, _) = hinge_setup(&mut tape, &kp, &[vec![0.0]], &[]);
        let l = margin_loss(&mut tape, ps, &[1], TargetTerm::CountOnly(0), w, rho, 0.1).unwrap();
        assert_eq!(tape.value(l.source_hinge).item(), 0.5);
    }

    #[test]
    fn lambda_must_be_positive_with_target_hinge() {
        let kp = KernelParams { w: vec![1.0], rho: 0.0 };
        for lambda in [0.0, -1.0] {
            let mut tape = Tape::new();
            let (w, rho, ps, pt) = hinge_setup(&mut tape, &kp, &[vec![0.0]], &[vec![1.0]]);
            assert!(margin_loss(&mut tape, ps, &[1], TargetTerm::Hinge(pt.unwrap()), w, rho, lambda).is_err());
        }
    }

    #[test]
    fn margin_arithmetic_and_scale_invariance() {
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        let kp = KernelParams { w, rho: 1.0 };
        let (s, t) = margins(&kp, &[vec![3.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!((s, t), (2.0, 1.0));
        let (s2, t2) = margins(&kp.scaled(4.0), &[vec![3.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!((s2, t2), (2.0, 1.0));
        assert!(margins(&KernelParams { w: vec![0.0; 4], rho: 1.0 }, &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn decisions() {
        let map = FeatureMap::Linear { dim: 1 };
        let kp = KernelParams { w: vec![1.0], rho: 0.0 };
        assert_eq!(decide(&[0.2], &kp, &map, 0.0), 1);
        assert_eq!(decide(&[-1.5], &kp, &map, 0.0), 0);
        assert_eq!(decide(&[-1.5], &kp, &map, f64::NEG_INFINITY), 1);
    }

    #[test]
    fn median_heuristic() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 1.0]];
        // distances 5, 1, √18 → median √18
        assert!((median_heuristic_gamma(&pts) - 1.0 / 36.0).abs() < 1e-15);
        assert_eq!(median_heuristic_gamma(&[vec![1.0], vec![1.0]]), 1.0);
    }

    #[test]
    fn objective_gradients_through_features() {
        let f = sample_frequencies(3, 4, 0.8, 3).unwrap();
        let map = FeatureMap::Rff(f);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = KernelParams::init(8, &mut rng).to_params();
        p.get_mut(RHO_NAME).unwrap().data_mut()[0] = 0.01;
        p.insert("zs", Tensor::from_vec(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        p.insert("zt", Tensor::from_vec(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        let report = gradcheck::check(
            &p,
            |tape, b| {
                let ps = map.apply(tape, b.var("zs"));
                let pt = map.apply(tape, b.var("zt"));
                let l = margin_loss(tape, ps, &[1, 0, 0], TargetTerm::Hinge(pt), b.var(W_NAME), b.var(RHO_NAME), 0.3)
                    .unwrap();
                l.total
            },
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
