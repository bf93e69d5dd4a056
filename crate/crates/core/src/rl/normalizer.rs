use serde::{Deserialize, Serialize};

/// Clip applied to normalized observations.
pub const OBS_CLIP: f64 = 10.0;

/// Running mean and variance of observations (parallel-merge form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 1e-4,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of rows (each `dim` long, concatenated).
    pub fn update(&mut self, rows: &[f64]) {
        let d = self.dim();
        let n = (rows.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        let mut bmean = vec![0.0; d];
        for row in rows.chunks_exact(d) {
            for (m, x) in bmean.iter_mut().zip(row) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; d];
        for row in rows.chunks_exact(d) {
            for ((v, x), m) in bvar.iter_mut().zip(row).zip(&bmean) {
                *v += (x - m) * (x - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n);
        let total = self.count + n;
        for i in 0..d {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, obs: &[f64], out: &mut [f64]) {
        for i in 0..obs.len() {
            out[i] = ((obs[i] - self.mean[i]) / (self.var[i] + 1e-8).sqrt()).clamp(-OBS_CLIP, OBS_CLIP);
        }
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; obs.len()];
        self.normalize_into(obs, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_updates_match_direct_statistics() {
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut a = RunningNorm::new(3);
        a.count = 0.0;
        a.update(&data[..18]);
        a.update(&data[18..]);
        for c in 0..3 {
            let col: Vec<f64> = data.iter().skip(c).step_by(3).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!((a.mean[c] - m).abs() < 1e-12);
            assert!((a.var[c] - v).abs() < 1e-12);
        }
        let z = a.normalize(&[1e9, -1e9, a.mean[2]]);
        assert_eq!(z[0], OBS_CLIP);
        assert_eq!(z[1], -OBS_CLIP);
        assert_eq!(z[2], 0.0);
    }
}
