use serde::{Deserialize, Serialize};

/// Per-step wall-clock summary in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Mean over post-warmup steps.
    pub mean: f64,
    pub std: f64,
    /// Median of per-window means; equals `mean` when there are too few
    /// steps for one full window.
    pub median_of_means: f64,
    /// Steps that entered the statistics.
    pub steps: usize,
}

impl TimingStats {
    /// Drop the first `warmup` samples (unless that leaves nothing), then
    /// summarise. Windows of `window` samples feed the median of means;
    /// a trailing partial window is ignored.
    pub fn from_samples(samples: &[f64], warmup: usize, window: usize) -> Self {
        let s = if samples.len() > warmup { &samples[warmup..] } else { samples };
        if s.is_empty() {
            return TimingStats::default();
        }
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let std = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut means: Vec<f64> = if window == 0 {
            Vec::new()
        } else {
            s.chunks_exact(window)
                .map(|w| w.iter().sum::<f64>() / window as f64)
                .collect()
        };
        let median_of_means = if means.is_empty() {
            mean
        } else {
            means.sort_by(f64::total_cmp);
            let m = means.len();
            if m % 2 == 1 {
                means[m / 2]
            } else {
                0.5 * (means[m / 2 - 1] + means[m / 2])
            }
        };
        TimingStats {
            mean,
            std,
            median_of_means,
            steps: s.len(),
        }
    }
}

/// `(T_orig − T_new) / T_orig`.
pub fn speedup(t_orig: f64, t_new: f64) -> f64 {
    (t_orig - t_new) / t_orig
}
