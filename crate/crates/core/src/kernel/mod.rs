//! Small numeric diffusion kernel: noise schedules, forward noising, the
//! noise-prediction losses, a fixed latent projection and classifier-free
//! guidance. Vectors are plain `f64` slices.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod check;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// Index `t` holds the cumulative product up to step `t`; index 0 is 1.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("steps", "schedule needs at least one step"));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid(format!("betas[{i}]"), format!("{b} is outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        let mut acc = 1.0;
        alpha_bars.push(acc);
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::invalid("t", format!("{t} is outside [0, {}]", self.steps())))
        } else {
            Ok(())
        }
    }
}

/// Betas spaced evenly from `beta_start` to `beta_end` over `steps` steps.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be positive"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(
            "beta_start/beta_end",
            format!("need 0 < {beta_start} <= {beta_end} < 1"),
        ));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (steps - 1) as f64;
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// Source of standard-normal draws.
pub trait NoiseSource {
    fn fill_standard_normal(&mut self, out: &mut [f64]);

    fn standard_normal(&mut self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.fill_standard_normal(&mut v);
        v
    }
}

/// ChaCha8-backed source. Cloning forks the stream, so a clone replays the
/// same draws.
#[derive(Debug, Clone)]
pub struct SeededNoise(ChaCha8Rng);

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl NoiseSource for SeededNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.0);
        }
    }
}

/// Always returns zeros.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// One step of plain additive noising: `x_t = x_prev + eps`. The returned
/// noise is `x_t - x_prev` as stored, so it absorbs the rounding of the sum.
pub fn forward_noise_simple(x_prev: &[f64], noise: &mut dyn NoiseSource) -> (Vec<f64>, Vec<f64>) {
    let draw = noise.standard_normal(x_prev.len());
    let x_t: Vec<f64> = x_prev.iter().zip(&draw).map(|(x, e)| x + e).collect();
    let eps = x_t.iter().zip(x_prev).map(|(t, x)| t - x).collect();
    (x_t, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisedSample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Closed-form variance-preserving noising:
/// `x_t = sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) eps`. `t = 0` returns `x_0`.
pub fn forward_noise_vp(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
) -> Result<NoisedSample> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = noise.standard_normal(x0.len());
    let x_t = x0.iter().zip(&eps).map(|(x, e)| a * x + s * e).collect();
    Ok(NoisedSample { x_t, t, eps })
}

/// Inverts [`forward_noise_vp`] given the noise that was added.
pub fn reconstruct_x0(x_t: &[f64], eps: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_dims(x_t.len(), eps.len())?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps).map(|(x, e)| (x - s * e) / a).collect())
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Predicts the noise in `x_t` at step `t`, optionally conditioned.
pub trait NoisePredictor {
    fn predict(&self, x_t: &[f64], t: usize, cond: Option<&[f64]>) -> Vec<f64>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&[f64], usize, Option<&[f64]>) -> Vec<f64>,
{
    fn predict(&self, x_t: &[f64], t: usize, cond: Option<&[f64]>) -> Vec<f64> {
        self(x_t, t, cond)
    }
}

/// Batch mean of `||eps - predictor(x_t, t)||^2`.
pub fn dm_loss<P: NoisePredictor + ?Sized>(predictor: &P, batch: &[NoisedSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("dm_loss needs a non-empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        check_dims(s.x_t.len(), s.eps.len())?;
        let pred = predictor.predict(&s.x_t, s.t, None);
        check_dims(s.eps.len(), pred.len())?;
        total += s.eps.iter().zip(&pred).map(|(e, p)| (e - p).powi(2)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Linear encoder with orthonormal rows; decoding is the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    encode: DMatrix<f64>,
}

impl LatentCodec {
    pub fn identity(dim: usize) -> Self {
        Self {
            encode: DMatrix::identity(dim, dim),
        }
    }

    /// Rows drawn from the Q factor of a seeded Gaussian matrix.
    pub fn random_orthonormal(latent_dim: usize, image_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 || latent_dim > image_dim {
            return Err(Error::invalid(
                "latent_dim",
                format!("need 0 < {latent_dim} <= {image_dim}"),
            ));
        }
        let mut noise = SeededNoise::new(seed);
        let g = DMatrix::from_vec(image_dim, latent_dim, noise.standard_normal(image_dim * latent_dim));
        let q = g.qr().q();
        Ok(Self { encode: q.transpose() })
    }

    pub fn latent_dim(&self) -> usize {
        self.encode.nrows()
    }

    pub fn image_dim(&self) -> usize {
        self.encode.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.encode
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.image_dim(), x.len())?;
        Ok((&self.encode * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.latent_dim(), z.len())?;
        Ok((self.encode.transpose() * nalgebra::DVector::from_column_slice(z)).as_slice().to_vec())
    }
}

/// Encodes `x0`, noises it in latent space and scores the predictor there.
pub fn ldm_loss<P: NoisePredictor + ?Sized>(
    predictor: &P,
    codec: &LatentCodec,
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    let z0 = codec.encode(x0)?;
    let sample = forward_noise_vp(&z0, t, schedule, noise)?;
    dm_loss(predictor, std::slice::from_ref(&sample))
}

/// Classifier-free guidance, written as `(1 - s) u + s c` so that scale 1
/// returns the conditional input and scale 0 the unconditional one exactly.
pub fn cfg_combine(eps_uncond: &[f64], eps_cond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_dims(eps_uncond.len(), eps_cond.len())?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", format!("{scale} must be finite and >= 0")));
    }
    Ok(eps_uncond
        .iter()
        .zip(eps_cond)
        .map(|(u, c)| (1.0 - scale) * u + scale * c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn single_step_schedule() {
        let s = make_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn thousand_step_endpoint() {
        let s = make_linear_schedule(1000, 1e-4, 2e-2).unwrap();
        let mut prod = 1.0;
        for i in 0..1000 {
            prod *= 1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000) - prod).abs() <= 1e-15);
        assert!((s.alpha_bar(1000) - 4.035829765375676e-05).abs() < 1e-12);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(make_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.3, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = [1.0, -2.0, 3.5];
        let (xt, eps) = forward_noise_simple(&x, &mut ZeroNoise);
        assert_eq!(xt, x);
        assert_eq!(eps, [0.0; 3]);
        let s = make_linear_schedule(10, 0.1, 0.2).unwrap();
        assert_eq!(forward_noise_vp(&x, 0, &s, &mut SeededNoise::new(1)).unwrap().x_t, x);
        assert!(forward_noise_vp(&x, 11, &s, &mut ZeroNoise).is_err());
    }

    #[test]
    fn simple_noise_is_the_difference() {
        let x = [0.25, 4.0];
        let (xt, eps) = forward_noise_simple(&x, &mut SeededNoise::new(3));
        for i in 0..2 {
            assert_eq!(eps[i], xt[i] - x[i]);
        }
    }

    #[test]
    fn simple_variance_grows_linearly() {
        let mut rng = SeededNoise::new(11);
        let steps = 8;
        let finals: Vec<f64> = (0..10_000)
            .map(|_| {
                let mut x = vec![0.0];
                for _ in 0..steps {
                    x = forward_noise_simple(&x, &mut rng).0;
                }
                x[0]
            })
            .collect();
        let v = sample_var(&finals);
        assert!((v / steps as f64 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn vp_preserves_unit_variance() {
        let s = make_linear_schedule(100, 1e-4, 0.2).unwrap();
        let mut rng = SeededNoise::new(5);
        for t in [1, 10, 50, 100] {
            let xs: Vec<f64> = (0..10_000)
                .map(|_| {
                    let x0 = rng.standard_normal(1);
                    forward_noise_vp(&x0, t, &s, &mut rng).unwrap().x_t[0]
                })
                .collect();
            let v = sample_var(&xs);
            assert!((v - 1.0).abs() < 0.05, "t={t} var={v}");
        }
    }

    #[test]
    fn inversion_recovers_x0() {
        let s = make_linear_schedule(100, 1e-4, 2e-2).unwrap();
        let mut rng = SeededNoise::new(2);
        let x0 = rng.standard_normal(16);
        for t in 1..=100 {
            let n = forward_noise_vp(&x0, t, &s, &mut rng).unwrap();
            let back = reconstruct_x0(&n.x_t, &n.eps, t, &s).unwrap();
            let err = x0.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "t={t} err={err}");
        }
    }

    #[test]
    fn dm_loss_cases() {
        let s = make_linear_schedule(10, 0.01, 0.1).unwrap();
        let mut rng = SeededNoise::new(4);
        let batch: Vec<_> = (0..5)
            .map(|t| forward_noise_vp(&rng.standard_normal(4), t + 1, &s, &mut rng).unwrap())
            .collect();
        let lookup = batch.clone();
        let oracle = move |x: &[f64], _: usize, _: Option<&[f64]>| {
            lookup.iter().find(|b| b.x_t == x).unwrap().eps.clone()
        };
        assert_eq!(dm_loss(&oracle, &batch).unwrap(), 0.0);

        let one = NoisedSample { x_t: vec![0.0; 4], t: 1, eps: vec![0.0; 4] };
        let off = |x: &[f64], _: usize, _: Option<&[f64]>| vec![0.1; x.len()];
        assert!((dm_loss(&off, std::slice::from_ref(&one)).unwrap() - 0.04).abs() < 1e-15);

        let mut rev = batch.clone();
        rev.reverse();
        let noisy = |x: &[f64], _: usize, _: Option<&[f64]>| x.iter().map(|v| v * 0.5).collect::<Vec<_>>();
        let a = dm_loss(&noisy, &batch).unwrap();
        let b = dm_loss(&noisy, &rev).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));

        let short = |_: &[f64], _: usize, _: Option<&[f64]>| vec![0.0; 3];
        assert!(matches!(dm_loss(&short, &[one]), Err(Error::DimensionMismatch { .. })));
        assert!(dm_loss(&off, &[]).is_err());
    }

    #[test]
    fn identity_codec_matches_dm_loss_bitwise() {
        let s = make_linear_schedule(50, 1e-4, 2e-2).unwrap();
        let x0 = SeededNoise::new(8).standard_normal(6);
        let pred = |x: &[f64], _: usize, _: Option<&[f64]>| x.iter().map(|v| v.sin()).collect::<Vec<_>>();
        let rng = SeededNoise::new(21);
        let ldm = ldm_loss(&pred, &LatentCodec::identity(6), &x0, 17, &s, &mut rng.clone()).unwrap();
        let sample = forward_noise_vp(&x0, 17, &s, &mut rng.clone()).unwrap();
        let dm = dm_loss(&pred, &[sample]).unwrap();
        assert_eq!(ldm.to_bits(), dm.to_bits());
    }

    #[test]
    fn latent_oracle_and_projection() {
        let s = make_linear_schedule(50, 1e-4, 2e-2).unwrap();
        let codec = LatentCodec::random_orthonormal(3, 8, 99).unwrap();
        let e = codec.matrix();
        // rows orthonormal, by explicit dot products
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..8).map(|k| e[(i, k)] * e[(j, k)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        let x0 = SeededNoise::new(1).standard_normal(8);
        let rng = SeededNoise::new(77);

        let mut replay = rng.clone();
        let eps = replay.standard_normal(3);
        let oracle = move |_: &[f64], _: usize, _: Option<&[f64]>| eps.clone();
        assert_eq!(ldm_loss(&oracle, &codec, &x0, 30, &s, &mut rng.clone()).unwrap(), 0.0);

        // predictor that encodes a fixed image-space guess; compare with hand arithmetic
        let guess: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let enc_guess = codec.encode(&guess).unwrap();
        let pred = move |_: &[f64], _: usize, _: Option<&[f64]>| enc_guess.clone();
        let got = ldm_loss(&pred, &codec, &x0, 30, &s, &mut rng.clone()).unwrap();
        let eps = rng.clone().standard_normal(3);
        let mut want = 0.0;
        for i in 0..3 {
            let proj: f64 = (0..8).map(|k| e[(i, k)] * guess[k]).sum();
            want += (eps[i] - proj).powi(2);
        }
        assert!((got - want).abs() < 1e-12);

        assert!(LatentCodec::random_orthonormal(9, 8, 0).is_err());
        let z = codec.encode(&x0).unwrap();
        let round = codec.encode(&codec.decode(&z).unwrap()).unwrap();
        assert!(z.iter().zip(&round).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cfg_cases() {
        let u = [0.3, -1.0, 1e20];
        let c = [1.0, 2.0, 1.0];
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&[0.0], &[1.0], 6.0).unwrap(), [6.0]);
        let a = cfg_combine(&u[..2], &c[..2], 2.0).unwrap();
        let b = cfg_combine(&u[..2], &c[..2], 4.0).unwrap();
        let m = cfg_combine(&u[..2], &c[..2], 3.0).unwrap();
        for i in 0..2 {
            assert!(((a[i] + b[i]) / 2.0 - m[i]).abs() < 1e-12);
        }
        assert!(cfg_combine(&u, &c[..2], 1.0).is_err());
        assert!(cfg_combine(&u, &c, -1.0).is_err());
    }
}
