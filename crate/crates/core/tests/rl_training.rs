use exohand::par::Execution;
use exohand::rl::*;
use exohand::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-step episodes, reward -(a - 0.5)^2.
struct Bandit;

impl Environment for Bandit {
    fn obs_dim(&self) -> usize {
        1
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = -(action[0] - 0.5).powi(2);
        Ok(Transition {
            obs: vec![1.0],
            reward: r,
            done: true,
            demo_err: 0.0,
            obj_err: 0.0,
            success: false,
        })
    }
}

/// Noisy random walk with episodes of random length.
struct Walk {
    x: f64,
    t: usize,
    len: usize,
    rng: ChaCha8Rng,
}

impl Walk {
    fn new() -> Self {
        Walk {
            x: 0.0,
            t: 0,
            len: 1,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Environment for Walk {
    fn obs_dim(&self) -> usize {
        2
    }
    fn act_dim(&self) -> usize {
        2
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = self.rng.random_range(-1.0..1.0);
        self.t = 0;
        self.len = self.rng.random_range(3..40);
        Ok(vec![self.x, 0.0])
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        self.x += 0.1 * action[0] + 0.01 * self.rng.random_range(-1.0..1.0);
        self.t += 1;
        Ok(Transition {
            obs: vec![self.x, self.t as f64],
            reward: -self.x.abs() - 0.01 * action[1] * action[1],
            done: self.t >= self.len,
            demo_err: self.x.abs(),
            obj_err: 0.0,
            success: self.x.abs() < 0.1,
        })
    }
}

fn walks(n: usize) -> Vec<EnvSlot> {
    (0..n).map(|_| Box::new(Walk::new()) as EnvSlot).collect()
}

fn small_config(n_envs: usize, n_steps: usize, total: u64) -> PPOConfig {
    PPOConfig {
        n_envs,
        n_steps,
        total_steps: total,
        hidden: vec![16, 16],
        epochs: 3,
        minibatch_size: 64,
        ..PPOConfig::default()
    }
}

#[test]
fn one_env_one_step_buffer() {
    let mut envs = walks(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = PolicyParams::init(2, 2, &[4], 0.0, &mut rng);
    let b = collect_rollouts(&mut envs, &p, &RunningNorm::new(2), 1, 7, 0, Execution::Sequential).unwrap();
    assert_eq!(b.len(), 1);
    b.validate().unwrap();
}

#[test]
fn rollouts_are_deterministic_and_match_single_env_replays() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PolicyParams::init(2, 2, &[8], -0.5, &mut rng);
    let norm = RunningNorm::new(2);
    let mut a = walks(16);
    let mut b = walks(16);
    let ba = collect_rollouts(&mut a, &p, &norm, 128, 42, 3, Execution::Parallel).unwrap();
    let bb = collect_rollouts(&mut b, &p, &norm, 128, 42, 3, Execution::Sequential).unwrap();
    assert_eq!(ba.len(), 2048);
    assert_eq!(ba, bb);
    for e in 0..16 {
        // Replaying env e alone with its own stream gives the same rewards.
        let mut solo = walks(1);
        let mut rng = env_rng(42, e, 3);
        let mut obs = solo[0].reset(rand::RngCore::next_u64(&mut rng)).unwrap();
        let mut sum = 0.0;
        for _ in 0..128 {
            let out = policy_forward(&p, &norm.normalize(&obs)).unwrap();
            let act = sample_action(&out.mean, &out.log_std, &mut rng);
            let tr = solo[0].step(&act).unwrap();
            sum += tr.reward;
            obs = if tr.done { solo[0].reset(rand::RngCore::next_u64(&mut rng)).unwrap() } else { tr.obs };
        }
        let buffered: f64 = ba.rewards[e * 128..(e + 1) * 128].iter().sum();
        assert_eq!(sum.to_bits(), buffered.to_bits(), "env {e}");
    }
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let mut envs = walks(2);
    let p = PolicyParams::zeros(3, 2, &[4], 0.0);
    let r = collect_rollouts(&mut envs, &p, &RunningNorm::new(3), 4, 0, 0, Execution::Sequential);
    assert!(matches!(r, Err(exohand::Error::Config(_))));
}

#[test]
fn zero_budget_returns_initialization() {
    let mut envs = walks(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = PolicyParams::init(2, 2, &[16, 16], -0.5, &mut rng);
    let cfg = small_config(2, 16, 0);
    let (ck, report) = train(&mut envs, &cfg, TrainInit::Params(p.clone(), None), &TrainOptions::default()).unwrap();
    assert_eq!(ck.params, p);
    assert!(report.records.is_empty());
}

#[test]
fn bandit_mean_converges_to_optimum() {
    let mut envs: Vec<EnvSlot> = (0..4).map(|_| Box::new(Bandit) as EnvSlot).collect();
    let cfg = PPOConfig {
        n_envs: 4,
        n_steps: 256,
        total_steps: 200_000,
        hidden: vec![16, 16],
        epochs: 4,
        minibatch_size: 256,
        lr: 3e-3,
        gamma: 0.0,
        init_log_std: 0.0,
        ..PPOConfig::default()
    };
    let opts = TrainOptions {
        seed: 3,
        ..TrainOptions::default()
    };
    let (ck, report) = train(&mut envs, &cfg, TrainInit::Fresh, &opts).unwrap();
    let mean = act_deterministic(&ck.params, &ck.norm, &[1.0]).unwrap()[0];
    assert!((mean - 0.5).abs() < 0.05, "mean action {mean}");
    assert!(report.records.len() as u64 * 1024 <= 200_000 + 1024);
    let steps: Vec<u64> = report.records.iter().map(|r| r.env_steps).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PPOConfig {
        checkpoint_every: 2,
        ..small_config(3, 32, 6 * 96)
    };
    let opts = TrainOptions {
        seed: 9,
        exec: Execution::Parallel,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stage: "walk".into(),
    };
    let (full, report) = train(&mut walks(3), &cfg, TrainInit::Fresh, &opts).unwrap();
    let (again, report2) = train(
        &mut walks(3),
        &cfg,
        TrainInit::Fresh,
        &TrainOptions {
            checkpoint_dir: None,
            exec: Execution::Sequential,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_eq!(full, again);
    assert_eq!(report.records, report2.records);

    let mid = load_checkpoint(&dir.path().join("walk_000004.json")).unwrap();
    assert_eq!(mid.iteration, 4);
    let (resumed, _) = train(
        &mut walks(3),
        &cfg,
        TrainInit::Resume(mid),
        &TrainOptions {
            checkpoint_dir: None,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_eq!(resumed, full);
    let final_ck = load_checkpoint(&dir.path().join("walk_final.json")).unwrap();
    assert_eq!(final_ck, full);

    let jsonl = dir.path().join("log.jsonl");
    report.write_jsonl(&jsonl).unwrap();
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap().lines().count(), 6);
    report.write_csv(&dir.path().join("log.csv")).unwrap();
}
