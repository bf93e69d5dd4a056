//! Scalar reference implementations compared against the library. Each check
//! returns the worst deviation seen.

use exohand::env::{positional_encoding, reward_demo, reward_obj, RewardParams};
use exohand::rl::{gae, log_prob, loss_and_grad, policy_forward, Batch, PPOConfig, PolicyParams};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn demo_oracle(p: &[[f64; 3]; 6], q: &[[f64; 3]; 6], w: &[f64], lambda2: f64, alpha2: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..6 {
        let dx = p[k][0] - q[k][0];
        let dy = p[k][1] - q[k][1];
        let dz = p[k][2] - q[k][2];
        num += w[k] * (dx * dx + dy * dy + dz * dz).sqrt();
        den += w[k];
    }
    -lambda2 * alpha2 * num / den
}

/// Quaternions as `[w, x, y, z]`, already unit length.
fn obj_oracle(pos: [f64; 3], q: [f64; 4], ref_pos: [f64; 3], rq: [f64; 4], r: &RewardParams) -> f64 {
    let d = ((pos[0] - ref_pos[0]).powi(2) + (pos[1] - ref_pos[1]).powi(2) + (pos[2] - ref_pos[2]).powi(2)).sqrt();
    let dot = (q[0] * rq[0] + q[1] * rq[1] + q[2] * rq[2] + q[3] * rq[3]).abs().min(1.0);
    let angle = 2.0 * dot.acos();
    r.lambda1 * (-r.alpha1 * d - r.beta * angle).exp()
}

fn pe_oracle(t: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let x = t as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
        out.push(x.sin());
        out.push(x.cos());
    }
    out
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// Reward terms and the step encoding against the scalar oracles.
pub fn reward_terms(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let params = RewardParams {
            lambda1: rng.random_range(0.1..5.0),
            lambda2: rng.random_range(0.1..5.0),
            alpha1: rng.random_range(0.1..30.0),
            alpha2: rng.random_range(0.1..20.0),
            beta: rng.random_range(0.1..2.0),
            keypoint_weights: (0..6).map(|_| rng.random_range(0.1..3.0)).collect(),
            ..RewardParams::default()
        };
        let p: [[f64; 3]; 6] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.3..0.3)));
        let q: [[f64; 3]; 6] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.3..0.3)));
        let got = reward_demo(&p.map(Vector3::from), &q.map(Vector3::from), &params);
        let want = demo_oracle(&p, &q, &params.keypoint_weights, params.lambda2, params.alpha2);
        worst = worst.max((got - want).abs());

        let pos: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let ref_pos: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let (qa, qb) = (random_quat(&mut rng), random_quat(&mut rng));
        let unit = |q: [f64; 4]| UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]));
        let got = reward_obj(&pos.into(), &unit(qa), &ref_pos.into(), &unit(qb), &params);
        worst = worst.max((got - obj_oracle(pos, qa, ref_pos, qb, &params)).abs());

        let t = rng.random_range(0..5000);
        let d = 2 * rng.random_range(1..9);
        let got = positional_encoding(t, d).map_err(|e| e.to_string())?;
        for (a, b) in got.iter().zip(pe_oracle(t, d)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// GAE with lambda = 1 against brute-force discounted sums.
pub fn gae_lambda_one(seed: u64, episodes: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..episodes {
        let n = rng.random_range(1..=10);
        let gamma = rng.random_range(0.0..0.999);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let terminal = rng.random_bool(0.5);
        let mut dones = vec![false; n];
        dones[n - 1] = terminal;
        let last = rng.random_range(-5.0..5.0);
        let (adv, ret) = gae(&rewards, &values, &dones, last, gamma, 1.0);
        for t in 0..n {
            let mut g = 0.0;
            let mut disc = 1.0;
            for r in &rewards[t..] {
                g += disc * r;
                disc *= gamma;
            }
            if !terminal {
                g += disc * last;
            }
            worst = worst.max((adv[t] - (g - values[t])).abs()).max((ret[t] - g).abs());
        }
    }
    Ok(worst)
}

/// Analytic PPO loss gradient against central differences on random small
/// networks. Returns the worst relative error, with components below a
/// thousandth of the largest one compared on that scale.
pub fn gradient_fidelity(seed: u64, nets: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let od = rng.random_range(1..=5);
        let ad = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
        let mut params = PolicyParams::init(od, ad, &hidden, rng.random_range(-1.0..0.5), &mut rng);
        let gain = rng.random_range(1.0..5.0);
        for w in params.policy.iter_mut().chain(params.value.iter_mut()) {
            *w *= gain;
        }
        let n = rng.random_range(2..=12);
        let obs: Vec<f64> = (0..n * od).map(|_| rng.random_range(-2.0..2.0)).collect();
        let act: Vec<f64> = (0..n * ad).map(|_| rng.random_range(-1.5..1.5)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ret: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        // Ratios mostly inside the clip range, some far outside it.
        let mut olp = Vec::with_capacity(n);
        for i in 0..n {
            let out = policy_forward(&params, &obs[i * od..(i + 1) * od]).map_err(|e| e.to_string())?;
            let lp = log_prob(&out.mean, &out.log_std, &act[i * ad..(i + 1) * ad]);
            let shift = if rng.random_bool(0.25) {
                rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                rng.random_range(-0.1..0.1)
            };
            olp.push(lp + shift);
        }
        let config = PPOConfig {
            entropy_coef: rng.random_range(0.0..0.05),
            ..PPOConfig::default()
        };
        let batch = Batch {
            obs: ArrayView2::from_shape((n, od), &obs).map_err(|e| e.to_string())?,
            actions: ArrayView2::from_shape((n, ad), &act).map_err(|e| e.to_string())?,
            old_log_probs: &olp,
            advantages: &adv,
            returns: &ret,
        };
        let (_, grad) = loss_and_grad(&params, &batch, &config);
        // Components far below the largest one are pure round-off.
        let floor = 1e-3 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let theta = params.flat();
        let h = 1e-6;
        let mut p = params.clone();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            p.set_flat(&t);
            let up = loss_and_grad(&p, &batch, &config).0.total(&config);
            t[i] -= 2.0 * h;
            p.set_flat(&t);
            let down = loss_and_grad(&p, &batch, &config).0.total(&config);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor));
        }
    }
    Ok(worst)
}
