//! Property suite for the diffusion kernel, shared by the `kernel-check`
//! command and the acceptance tests.

use serde::Serialize;

use super::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Runs every check with `samples` Monte Carlo draws where applicable.
pub fn run_suite(seed: u64, samples: usize) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut rng = SeededNoise::new(seed);

    let long = make_linear_schedule(1000, 1e-4, 2e-2)?;
    let decreasing = long.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let end = long.alpha_bar(1000);
    out.push(outcome(
        "schedule_linear_1000",
        decreasing && (end - 4.0e-5).abs() < 2e-6,
        format!("alpha_bar_T = {end:.6e}, strictly decreasing = {decreasing}"),
    ));

    let sched = make_linear_schedule(100, 1e-4, 2e-2)?;
    let batch: Vec<NoisedSample> = (1..=sched.steps())
        .map(|t| {
            let x0 = rng.standard_normal(8);
            forward_noise_vp(&x0, t, &sched, &mut rng)
        })
        .collect::<Result<_>>()?;
    let lookup = batch.clone();
    let oracle = move |x: &[f64], t: usize, _: Option<&[f64]>| {
        lookup
            .iter()
            .find(|s| s.t == t && s.x_t == x)
            .map(|s| s.eps.clone())
            .unwrap_or_default()
    };
    let loss = dm_loss(&oracle, &batch)?;
    out.push(outcome("dm_loss_oracle_zero", loss == 0.0, format!("loss = {loss}")));

    let mut worst = 0.0f64;
    let x0 = rng.standard_normal(16);
    for t in 1..=sched.steps() {
        let n = forward_noise_vp(&x0, t, &sched, &mut rng)?;
        let back = reconstruct_x0(&n.x_t, &n.eps, t, &sched)?;
        for (a, b) in x0.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    out.push(outcome(
        "x0_inversion",
        worst <= 1e-10,
        format!("max abs error over t = 1..=100: {worst:.3e}"),
    ));

    let steep = make_linear_schedule(100, 1e-4, 0.2)?;
    let mut vp_detail = Vec::new();
    let mut vp_ok = true;
    for t in [1, 25, 50, 100] {
        let xs: Vec<f64> = (0..samples)
            .map(|_| {
                let x0 = rng.standard_normal(1);
                forward_noise_vp(&x0, t, &steep, &mut rng).map(|s| s.x_t[0])
            })
            .collect::<Result<_>>()?;
        let v = sample_var(&xs);
        vp_ok &= (v - 1.0).abs() < 0.05;
        vp_detail.push(format!("t={t}: {v:.4}"));
    }
    out.push(outcome("vp_variance_preserved", vp_ok, vp_detail.join(", ")));

    let steps = 10;
    let finals: Vec<f64> = (0..samples)
        .map(|_| {
            let mut x = vec![0.0];
            for _ in 0..steps {
                x = forward_noise_simple(&x, &mut rng).0;
            }
            x[0]
        })
        .collect();
    let v = sample_var(&finals);
    out.push(outcome(
        "additive_variance_grows",
        (v / steps as f64 - 1.0).abs() < 0.05,
        format!("variance after {steps} steps: {v:.4}"),
    ));

    let pred = |x: &[f64], t: usize, _: Option<&[f64]>| {
        x.iter().map(|v| (v * t as f64).sin()).collect::<Vec<_>>()
    };
    let x0 = rng.standard_normal(12);
    let fork = rng.clone();
    let ldm = ldm_loss(&pred, &LatentCodec::identity(12), &x0, 40, &sched, &mut fork.clone())?;
    let dm = dm_loss(&pred, &[forward_noise_vp(&x0, 40, &sched, &mut fork.clone())?])?;
    out.push(outcome(
        "ldm_identity_equals_dm",
        ldm.to_bits() == dm.to_bits(),
        format!("ldm = {ldm}, dm = {dm}"),
    ));

    let codec = LatentCodec::random_orthonormal(4, 12, seed)?;
    let eps = fork.clone().standard_normal(4);
    let latent_oracle = move |_: &[f64], _: usize, _: Option<&[f64]>| eps.clone();
    let l = ldm_loss(&latent_oracle, &codec, &x0, 40, &sched, &mut fork.clone())?;
    out.push(outcome("ldm_oracle_zero", l == 0.0, format!("loss = {l}")));

    let u = rng.standard_normal(8);
    let c = rng.standard_normal(8);
    let one = cfg_combine(&u, &c, 1.0)?;
    let zero = cfg_combine(&u, &c, 0.0)?;
    let six = cfg_combine(&[0.0], &[1.0], 6.0)?;
    out.push(outcome(
        "cfg_endpoints",
        one == c && zero == u && six == [6.0],
        format!("scale 1 == cond: {}, scale 0 == uncond: {}, (0, 1, 6) -> {}", one == c, zero == u, six[0]),
    ));

    Ok(out)
}
