//! Batch bookkeeping: worker pool and certified-ratio statistics.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

/// Exact two-sided binomial interval for `successes / trials` at level `1 - alpha`.
pub fn clopper_pearson(successes: usize, trials: usize, alpha: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).expect("positive shape").inverse_cdf(alpha / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).expect("positive shape").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub certified: usize,
    pub ratio: f64,
    /// 95% Clopper–Pearson interval of the certified ratio.
    pub ci95: [f64; 2],
    pub attacked: Option<usize>,
    /// Certified count never exceeds the count of failed attacks, and no input is both.
    pub consistent: Option<bool>,
    pub mean_item_time_s: f64,
}

impl Summary {
    pub fn new(certified: &[bool], attacked: Option<&[bool]>, times: &[f64]) -> Self {
        let total = certified.len();
        let n_cert = certified.iter().filter(|&&c| c).count();
        let (lo, hi) = clopper_pearson(n_cert, total, 0.05);
        let consistent = attacked.map(|a| {
            let n_att = a.iter().filter(|&&s| s).count();
            n_cert <= total - n_att && certified.iter().zip(a).all(|(&c, &s)| !(c && s))
        });
        Self {
            total,
            certified: n_cert,
            ratio: if total > 0 { n_cert as f64 / total as f64 } else { 0.0 },
            ci95: [lo, hi],
            attacked: attacked.map(|a| a.iter().filter(|&&s| s).count()),
            consistent,
            mean_item_time_s: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        }
    }
}

/// Applies `f` to every item on `workers` threads, keeping the input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("every item ran")).collect()
}
