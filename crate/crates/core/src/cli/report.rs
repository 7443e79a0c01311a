use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cachestore::DiskReport;
use crate::modulator::{Toggles, Variant};

/// Soft VQA accuracy of one prediction: `min(#matching annotations / 3, 1)`.
pub fn vqa_accuracy(prediction: &str, answers: &[String]) -> f64 {
    let hits = answers.iter().filter(|a| a.as_str() == prediction).count();
    (hits as f64 / 3.0).min(1.0)
}

/// Mean of [`vqa_accuracy`] over a dataset; 0 for an empty one.
pub fn mean_vqa_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [String])>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, a) in pairs {
        sum += vqa_accuracy(p, a);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub instances: usize,
    /// Mean seconds per instance with compressed prompts read from the cache.
    pub with_cache_s: f64,
    /// Mean seconds per instance compressing documents on the fly.
    pub without_cache_s: f64,
    /// `1 - with / without`.
    pub saving: f64,
    /// Instances whose answers are token-identical on both paths.
    pub identical_answers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub toggles: Toggles,
    pub k: usize,
    pub val_instances: usize,
    pub vqa_accuracy: f64,
    /// The frozen base model answering without any modulation.
    pub baseline_accuracy: f64,
    pub prrecall_at_1: f64,
    pub prrecall_at_3: f64,
    pub prrecall_at_5: f64,
    /// `(step, loss)` samples of the training curve.
    pub loss_curve: Vec<(usize, f64)>,
    pub eval_seconds: f64,
    pub latency: Option<LatencyReport>,
    pub disk: Option<DiskReport>,
}

impl MetricsReport {
    /// The report with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.eval_seconds = 0.0;
        if let Some(l) = &mut r.latency {
            l.with_cache_s = 0.0;
            l.without_cache_s = 0.0;
            l.saving = 0.0;
        }
        r
    }

    pub fn is_finite(&self) -> bool {
        let mut v = vec![
            self.vqa_accuracy,
            self.baseline_accuracy,
            self.prrecall_at_1,
            self.prrecall_at_3,
            self.prrecall_at_5,
            self.eval_seconds,
        ];
        v.extend(self.loss_curve.iter().map(|&(_, l)| l));
        if let Some(l) = &self.latency {
            v.extend([l.with_cache_s, l.without_cache_s, l.saving]);
        }
        v.iter().all(|x| x.is_finite())
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let t = self.toggles;
        let row = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k:<28} {v}");
        };
        row(&mut s, "variant", format!("{:?}", self.variant).to_lowercase());
        row(
            &mut s,
            "toggles",
            format!("pipe={} prdb={} dcse={} rgca={}", t.pipe, t.prdb, t.dcse, t.rgca),
        );
        row(&mut s, "K", self.k.to_string());
        row(&mut s, "val instances", self.val_instances.to_string());
        row(&mut s, "VQA accuracy", format!("{:.4}", self.vqa_accuracy));
        row(&mut s, "baseline accuracy", format!("{:.4}", self.baseline_accuracy));
        row(&mut s, "PRRecall@1", format!("{:.4}", self.prrecall_at_1));
        row(&mut s, "PRRecall@3", format!("{:.4}", self.prrecall_at_3));
        row(&mut s, "PRRecall@5", format!("{:.4}", self.prrecall_at_5));
        row(&mut s, "eval time (s)", format!("{:.3}", self.eval_seconds));
        if let Some(l) = &self.latency {
            row(&mut s, "latency w/o cache (s/inst)", format!("{:.6}", l.without_cache_s));
            row(&mut s, "latency w/ cache (s/inst)", format!("{:.6}", l.with_cache_s));
            row(&mut s, "latency saving", format!("{:.1}%", 100.0 * l.saving));
            row(
                &mut s,
                "identical answers",
                format!("{}/{}", l.identical_answers, l.instances),
            );
        }
        if let Some(d) = &self.disk {
            row(&mut s, "raw corpus bytes", d.raw_bytes.to_string());
            row(&mut s, "cache bytes", d.cache_bytes.to_string());
            row(
                &mut s,
                "cache / raw",
                d.ratio.map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}")),
            );
        }
        if !self.loss_curve.is_empty() {
            let _ = writeln!(s, "\nstep      loss");
            for (step, loss) in &self.loss_curve {
                let _ = writeln!(s, "{step:<9} {loss:.5}");
            }
        }
        s
    }
}

/// Every `every`-th loss plus the last one.
pub fn sample_curve(losses: &[f64], every: usize) -> Vec<(usize, f64)> {
    let every = every.max(1);
    let mut out: Vec<(usize, f64)> = losses.iter().copied().enumerate().step_by(every).collect();
    if let Some(last) = losses.len().checked_sub(1) {
        if last % every != 0 {
            out.push((last, losses[last]));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub vqa_accuracy: f64,
    pub final_loss: f64,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "-" };
    let mut s = String::from("PIPE  DCSE  RGCA  PRDB  VQA acc\n");
    for r in rows {
        let t = r.toggles;
        let _ = writeln!(
            s,
            "{:<5} {:<5} {:<5} {:<5} {:.4}",
            mark(t.pipe),
            mark(t.dcse),
            mark(t.rgca),
            mark(t.prdb),
            r.vqa_accuracy
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn clamp_regimes() {
        let a = answers(&["red", "red", "red", "red", "blue"]);
        assert_eq!(vqa_accuracy("red", &a), 1.0);
        assert_eq!(vqa_accuracy("blue", &a), 1.0 / 3.0);
        assert_eq!(vqa_accuracy("green", &a), 0.0);
    }

    #[test]
    fn curve_keeps_last() {
        let l: Vec<f64> = (0..7).map(f64::from).collect();
        assert_eq!(sample_curve(&l, 3), vec![(0, 0.0), (3, 3.0), (6, 6.0)]);
        assert_eq!(sample_curve(&l, 4), vec![(0, 0.0), (4, 4.0), (6, 6.0)]);
        assert!(sample_curve(&[], 4).is_empty());
    }

    #[test]
    fn timing_fields_are_dropped() {
        let mut r = MetricsReport {
            variant: Variant::Homo,
            toggles: Toggles::default(),
            k: 5,
            val_instances: 1,
            vqa_accuracy: 0.5,
            baseline_accuracy: 0.1,
            prrecall_at_1: 0.2,
            prrecall_at_3: 0.3,
            prrecall_at_5: 0.4,
            loss_curve: vec![(0, 1.0)],
            eval_seconds: 3.0,
            latency: None,
            disk: None,
        };
        let mut other = r.clone();
        other.eval_seconds = 9.0;
        assert_eq!(r.without_timing(), other.without_timing());
        r.vqa_accuracy = 0.6;
        assert_ne!(r.without_timing(), other.without_timing());
        assert!(r.to_table().contains("PRRecall@5"));
    }
}
