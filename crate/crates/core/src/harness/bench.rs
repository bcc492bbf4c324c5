//! Single-layer overhead benchmark with a per-phase breakdown.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::{BuilderKind, VpsConfig};
use crate::error::{Result, VpsError};
use crate::layer::{base_forward, LinearLayer, PhaseTimes, VpsLayer};
use crate::linalg::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchShape {
    pub d_in: usize,
    pub d_out: usize,
    pub n: usize,
    pub rank: usize,
    pub topk: usize,
    pub reps: usize,
}

/// Analytic operation counts for the four VPS cost items and the base map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictedFlops {
    pub base: f64,
    /// `N (d_in + d_out)`.
    pub scoring: f64,
    /// `(d_in + d_out) log2 k`.
    pub topk: f64,
    /// `d_in d_out r`.
    pub factors: f64,
    /// `N r d_out`.
    pub perturbation: f64,
}

impl PredictedFlops {
    pub fn for_shape(s: &BenchShape) -> Self {
        let (n, di, d_o, r) = (s.n as f64, s.d_in as f64, s.d_out as f64, s.rank as f64);
        let logk = (s.topk.max(2) as f64).log2();
        Self {
            base: n * di * d_o,
            scoring: n * (di + d_o),
            topk: (di + d_o) * logk,
            factors: di * d_o * r,
            perturbation: n * r * d_o,
        }
    }

    pub fn extra(&self) -> f64 {
        self.scoring + self.topk + self.factors + self.perturbation
    }
}

/// Median per-phase seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseMedians {
    pub base: f64,
    pub policy: f64,
    pub scoring: f64,
    pub topk: f64,
    pub builder: f64,
    pub factors: f64,
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub shape: BenchShape,
    pub base_median_s: f64,
    pub vps_median_s: f64,
    /// `vps_median / base_median` over separately timed calls.
    pub ratio: f64,
    /// Median of per-call `total / base phase` from the instrumented forward.
    pub paired_ratio: f64,
    pub phases: PhaseMedians,
    /// Median of per-call `total - base phase`.
    pub extra_median_s: f64,
    /// Median of per-call summed non-base phases.
    pub phase_sum_median_s: f64,
    /// Median of per-call `|phase sum - extra| / extra`.
    pub phase_gap: f64,
    pub predicted: PredictedFlops,
}

impl BenchReport {
    /// Non-base phases account for the extra time within `tol` (relative).
    pub fn phases_consistent(&self, tol: f64) -> bool {
        self.phase_gap <= tol
    }

    pub fn render(&self) -> String {
        let s = &self.shape;
        let p = &self.phases;
        let f = &self.predicted;
        let ms = |v: f64| v * 1e3;
        let mut out = format!(
            "shape d_in={} d_out={} N={} r={} k={} reps={}\n",
            s.d_in, s.d_out, s.n, s.rank, s.topk, s.reps
        );
        out += &format!("base_forward median {:.3} ms\n", ms(self.base_median_s));
        out += &format!("vps_forward  median {:.3} ms\n", ms(self.vps_median_s));
        out += &format!("ratio {:.4} (paired {:.4})\n", self.ratio, self.paired_ratio);
        out += "phase          median_ms   predicted_flops\n";
        let rows = [
            ("base", p.base, f.base),
            ("policy", p.policy, f64::NAN),
            ("scoring", p.scoring, f.scoring),
            ("topk", p.topk, f.topk),
            ("builder", p.builder, f64::NAN),
            ("factors", p.factors, f.factors),
            ("perturbation", p.perturbation, f.perturbation),
        ];
        for (name, t, fl) in rows {
            let fl = if fl.is_nan() { "-".to_string() } else { format!("{fl:.3e}") };
            out += &format!("{name:<14} {:>9.4}   {fl}\n", ms(t));
        }
        out += &format!(
            "extra {:.4} ms, phase sum {:.4} ms, gap {:.2}%\n",
            ms(self.extra_median_s),
            ms(self.phase_sum_median_s),
            self.phase_gap * 100.0
        );
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `reps` plain forwards and `reps` instrumented VPS forwards on a
/// random layer of the given shape.
pub fn benchmark_overhead(shape: BenchShape, seed: u64) -> Result<BenchReport> {
    if shape.reps < 10 {
        return Err(VpsError::Argument(format!("need at least 10 reps, got {}", shape.reps)));
    }
    let mut rng = SeededRng::new(seed);
    let w = Matrix::random_normal(shape.d_out, shape.d_in, 1.0 / (shape.d_in as f64).sqrt(), &mut rng);
    let x = Matrix::random_normal(shape.n, shape.d_in, 1.0, &mut rng);
    let base = LinearLayer::new(w, None)?;
    let cfg = VpsConfig {
        rank: shape.rank,
        topk: shape.topk,
        builder: BuilderKind::Sk,
        adaptive_rank: false,
        adaptive_gamma: false,
        rank_bounds: (shape.rank, shape.rank),
        topk_bounds: (shape.topk, shape.topk),
        ..VpsConfig::default()
    };
    cfg.validate()?;
    let mut layer = VpsLayer::new("bench", base.clone(), Arc::new(cfg));

    // Warm caches and allocator.
    base_forward(&x, &base)?;
    layer.forward_timed(&x)?;

    let mut base_t = Vec::with_capacity(shape.reps);
    let mut vps_t = Vec::with_capacity(shape.reps);
    let mut phases: Vec<PhaseTimes> = Vec::with_capacity(shape.reps);
    for _ in 0..shape.reps {
        let clock = Instant::now();
        std::hint::black_box(base_forward(&x, &base)?);
        base_t.push(clock.elapsed().as_secs_f64());

        let clock = Instant::now();
        let (y, t) = layer.forward_timed(&x)?;
        vps_t.push(clock.elapsed().as_secs_f64());
        std::hint::black_box(y);
        phases.push(t);
    }
    let secs = |d: Duration| d.as_secs_f64();
    let med = |f: &dyn Fn(&PhaseTimes) -> Duration| median(phases.iter().map(|p| secs(f(p))).collect());
    let extras: Vec<f64> = vps_t.iter().zip(&phases).map(|(v, p)| v - secs(p.base)).collect();
    let sums: Vec<f64> = phases.iter().map(|p| secs(p.extra())).collect();
    let gaps: Vec<f64> = extras
        .iter()
        .zip(&sums)
        .map(|(e, s)| (s - e).abs() / e.max(1e-12))
        .collect();
    let base_median = median(base_t);
    let vps_median = median(vps_t.clone());
    Ok(BenchReport {
        shape,
        base_median_s: base_median,
        vps_median_s: vps_median,
        ratio: vps_median / base_median,
        paired_ratio: median(vps_t.iter().zip(&phases).map(|(v, p)| v / secs(p.base)).collect()),
        phases: PhaseMedians {
            base: med(&|p| p.base),
            policy: med(&|p| p.policy),
            scoring: med(&|p| p.scoring),
            topk: med(&|p| p.topk),
            builder: med(&|p| p.builder),
            factors: med(&|p| p.factors),
            perturbation: med(&|p| p.perturbation),
        },
        extra_median_s: median(extras),
        phase_sum_median_s: median(sums),
        phase_gap: median(gaps),
        predicted: PredictedFlops::for_shape(&shape),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_flops_formulas() {
        let s = BenchShape {
            d_in: 8,
            d_out: 4,
            n: 3,
            rank: 2,
            topk: 4,
            reps: 10,
        };
        let f = PredictedFlops::for_shape(&s);
        assert_eq!(f.scoring, 36.0);
        assert_eq!(f.topk, 24.0);
        assert_eq!(f.factors, 64.0);
        assert_eq!(f.perturbation, 24.0);
        assert_eq!(f.base, 96.0);
    }

    #[test]
    fn small_bench_is_well_formed() {
        let s = BenchShape {
            d_in: 32,
            d_out: 24,
            n: 16,
            rank: 2,
            topk: 8,
            reps: 10,
        };
        let r = benchmark_overhead(s, 1).unwrap();
        assert!(r.paired_ratio >= 1.0);
        assert!(r.base_median_s > 0.0 && r.vps_median_s > 0.0);
        assert!(r.render().contains("perturbation"));
        assert!(benchmark_overhead(BenchShape { reps: 9, ..s }, 1).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
