//! Latency measurement, serialized-size accounting, energy-to-CO2
//! conversion, and before/after trade-off summaries.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assumed GPU emission factor, kg CO2 per kWh.
pub const CO2_KG_PER_KWH: f64 = 0.475;

/// Wall-clock latency summary over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub avg_ms: f64,
    pub max_ms: f64,
    pub min_ms: f64,
    pub repetitions: usize,
    pub warmup: usize,
}

/// Times a workload: `warmup` unrecorded runs, then `repetitions` timed
/// runs on the calling thread. Also returns the raw per-run samples.
pub fn measure_latency_detailed<F>(
    mut workload: F,
    repetitions: usize,
    warmup: usize,
) -> Result<(LatencyStats, Vec<f64>)>
where
    F: FnMut() -> Result<()>,
{
    if repetitions == 0 {
        return Err(Error::domain(
            "measure_latency",
            "repetitions must be >= 1",
        ));
    }
    for run in 0..warmup {
        workload().map_err(|e| Error::Workload {
            run,
            source: Box::new(e),
        })?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for run in 0..repetitions {
        let start = Instant::now();
        workload().map_err(|e| Error::Workload {
            run: warmup + run,
            source: Box::new(e),
        })?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let avg_ms = samples.iter().sum::<f64>() / samples.len() as f64;
    let max_ms = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ms = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((
        LatencyStats {
            avg_ms,
            max_ms,
            min_ms,
            repetitions,
            warmup,
        },
        samples,
    ))
}

/// [`measure_latency_detailed`] without the samples.
pub fn measure_latency<F>(workload: F, repetitions: usize, warmup: usize) -> Result<LatencyStats>
where
    F: FnMut() -> Result<()>,
{
    Ok(measure_latency_detailed(workload, repetitions, warmup)?.0)
}

/// Converts reported energy (kWh) to kg of CO2 under the assumed factor.
pub fn estimate_emissions(energy_kwh: f64) -> Result<f64> {
    if !energy_kwh.is_finite() || energy_kwh < 0.0 {
        return Err(Error::domain(
            "estimate_emissions",
            format!("energy must be >= 0, got {energy_kwh}"),
        ));
    }
    Ok(energy_kwh * CO2_KG_PER_KWH)
}

/// One labeled measurement row: latency, serialized size, reported energy,
/// and the derived CO2 figure.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub label: String,
    pub latency: LatencyStats,
    pub size_mb: f64,
    /// Reported input from external telemetry; never measured here.
    pub energy_kwh: f64,
    /// Always `energy_kwh * 0.475`, fixed at construction.
    pub co2_kg: f64,
}

impl BenchReport {
    pub fn new(
        label: impl Into<String>,
        latency: LatencyStats,
        size_mb: f64,
        energy_kwh: f64,
    ) -> Result<Self> {
        if !size_mb.is_finite() || size_mb < 0.0 {
            return Err(Error::domain(
                "BenchReport",
                format!("size must be >= 0 MB, got {size_mb}"),
            ));
        }
        let co2_kg = estimate_emissions(energy_kwh)?;
        Ok(Self {
            label: label.into(),
            latency,
            size_mb,
            energy_kwh,
            co2_kg,
        })
    }
}

/// Flat JSON form of a report; numbers are rounded to at most 4 decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportFile {
    label: String,
    latency_avg_ms: f64,
    latency_max_ms: f64,
    latency_min_ms: f64,
    size_mb: f64,
    energy_kwh: f64,
    co2_kg: f64,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        let file = ReportFile {
            label: self.label.clone(),
            latency_avg_ms: round4(self.latency.avg_ms),
            latency_max_ms: round4(self.latency.max_ms),
            latency_min_ms: round4(self.latency.min_ms),
            size_mb: round4(self.size_mb),
            energy_kwh: round4(self.energy_kwh),
            co2_kg: round4(self.co2_kg),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let f: ReportFile = serde_json::from_str(json)?;
        let latency = LatencyStats {
            avg_ms: f.latency_avg_ms,
            max_ms: f.latency_max_ms,
            min_ms: f.latency_min_ms,
            repetitions: 1,
            warmup: 0,
        };
        // files round to 4 decimals; reject anything further off, then
        // recompute so the co2 = energy * factor invariant holds exactly
        let expected = estimate_emissions(f.energy_kwh)?;
        if (f.co2_kg - expected).abs() > 1e-3 {
            return Err(Error::domain(
                "BenchReport::from_json",
                format!(
                    "co2_kg {} inconsistent with energy_kwh {} (expected {expected})",
                    f.co2_kg, f.energy_kwh
                ),
            ));
        }
        Self::new(f.label, latency, f.size_mb, f.energy_kwh)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Relative gains of an optimized run over its baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeOff {
    /// `baseline latency / optimized latency`.
    pub speedup: f64,
    /// `1 - optimized size / baseline size`.
    pub size_reduction: f64,
    /// `1 - optimized energy / baseline energy`; 0 when both are 0.
    pub energy_reduction: f64,
}

pub fn compare_reports(baseline: &BenchReport, optimized: &BenchReport) -> Result<TradeOff> {
    if optimized.latency.avg_ms == 0.0 {
        return Err(Error::domain(
            "compare_reports",
            "optimized average latency is zero",
        ));
    }
    if baseline.size_mb <= 0.0 {
        return Err(Error::domain(
            "compare_reports",
            "baseline size must be positive",
        ));
    }
    let energy_reduction = if baseline.energy_kwh > 0.0 {
        1.0 - optimized.energy_kwh / baseline.energy_kwh
    } else {
        0.0
    };
    Ok(TradeOff {
        speedup: baseline.latency.avg_ms / optimized.latency.avg_ms,
        size_reduction: 1.0 - optimized.size_mb / baseline.size_mb,
        energy_reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(avg: f64) -> LatencyStats {
        LatencyStats {
            avg_ms: avg,
            max_ms: avg,
            min_ms: avg,
            repetitions: 1,
            warmup: 0,
        }
    }

    #[test]
    fn single_repetition_collapses_stats() {
        let s = measure_latency(|| Ok(()), 1, 0).unwrap();
        assert_eq!(s.avg_ms, s.max_ms);
        assert_eq!(s.avg_ms, s.min_ms);
    }

    #[test]
    fn order_statistics_hold() {
        let (s, samples) = measure_latency_detailed(
            || {
                std::hint::black_box((0..2000).sum::<u64>());
                Ok(())
            },
            20,
            2,
        )
        .unwrap();
        assert!(s.min_ms <= s.avg_ms && s.avg_ms <= s.max_ms);
        assert_eq!(samples.len(), 20);
        // coefficient of variation is finite on a busy-loop workload
        let mean = s.avg_ms;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        let cov = var.sqrt() / mean;
        assert!(cov.is_finite() && cov >= 0.0, "cov {cov}");
    }

    #[test]
    fn zero_repetitions_rejected() {
        assert!(measure_latency(|| Ok(()), 0, 0).is_err());
    }

    #[test]
    fn workload_failure_carries_run_index() {
        let mut n = 0;
        let err = measure_latency(
            || {
                n += 1;
                if n == 3 {
                    Err(Error::domain("demo", "boom"))
                } else {
                    Ok(())
                }
            },
            5,
            1,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("run 2"), "{err}");
    }

    #[test]
    fn emissions_zero_and_reference_rows() {
        assert_eq!(estimate_emissions(0.0).unwrap(), 0.0);
        assert!((estimate_emissions(2.2127).unwrap() - 1.0510).abs() < 1e-3);
        assert!((estimate_emissions(7.1139).unwrap() - 3.3791).abs() < 1e-3);
        assert!(estimate_emissions(-1.0).is_err());
    }

    #[test]
    fn report_enforces_co2_consistency() {
        let r = BenchReport::new("m", stats(2.0), 10.0, 2.0).unwrap();
        assert!((r.co2_kg - 2.0 * CO2_KG_PER_KWH).abs() < 1e-6);
    }

    #[test]
    fn report_json_field_names_and_rounding() {
        let r = BenchReport::new("fp32", stats(19.91434567), 438.0, 2.2127).unwrap();
        let json = r.to_json().unwrap();
        for field in [
            "label",
            "latency_avg_ms",
            "latency_max_ms",
            "latency_min_ms",
            "size_mb",
            "energy_kwh",
            "co2_kg",
        ] {
            assert!(json.contains(&format!("\"{field}\"")), "{json}");
        }
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["latency_avg_ms"], serde_json::json!(19.9143));
        let back = BenchReport::from_json(&json).unwrap();
        assert_eq!(back.label, "fp32");
        // the invariant survives the 4-decimal file rounding
        assert!((back.co2_kg - back.energy_kwh * CO2_KG_PER_KWH).abs() < 1e-6);
    }

    #[test]
    fn from_json_rejects_inconsistent_co2() {
        let json = r#"{
            "label": "x", "latency_avg_ms": 1.0, "latency_max_ms": 1.0,
            "latency_min_ms": 1.0, "size_mb": 1.0, "energy_kwh": 2.0,
            "co2_kg": 0.4
        }"#;
        assert!(BenchReport::from_json(json).is_err());
    }

    #[test]
    fn self_comparison_is_neutral() {
        let r = BenchReport::new("m", stats(5.0), 10.0, 1.0).unwrap();
        let t = compare_reports(&r, &r).unwrap();
        assert_eq!(t.speedup, 1.0);
        assert_eq!(t.size_reduction, 0.0);
        assert_eq!(t.energy_reduction, 0.0);
    }

    #[test]
    fn published_row_arithmetic() {
        let base = BenchReport::new("base", stats(19.9143), 438.0, 2.2127).unwrap();
        let opt = BenchReport::new("opt", stats(1.2114), 166.44, 0.1346).unwrap();
        let t = compare_reports(&base, &opt).unwrap();
        assert!((t.speedup - 16.44).abs() < 0.01, "{}", t.speedup);
        assert!((t.size_reduction - 0.62).abs() < 0.005, "{}", t.size_reduction);

        let base2 = BenchReport::new("base", stats(185.5632), 2293.76, 20.6181).unwrap();
        let opt2 = BenchReport::new("opt", stats(9.7195), 762.13, 1.0799).unwrap();
        let t2 = compare_reports(&base2, &opt2).unwrap();
        assert!((t2.speedup - 19.09).abs() < 0.01, "{}", t2.speedup);
    }

    #[test]
    fn zero_optimized_latency_rejected() {
        let base = BenchReport::new("b", stats(5.0), 10.0, 1.0).unwrap();
        let opt = BenchReport::new("o", stats(0.0), 10.0, 1.0).unwrap();
        assert!(compare_reports(&base, &opt).is_err());
    }
}
