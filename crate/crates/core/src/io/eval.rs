//! Forecast evaluation against ground truth: per-record KDE, aggregates and
//! the horizon table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::Baseline;
use crate::completion::CompletionModel;
use crate::forecast::{EntangledForecaster, ForecastError, Pipeline};
use crate::pose::{kde, LocomotionSequence, Pose, NUM_JOINTS};

use super::config::ExperimentConfig;
use super::IoError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Records forecast together; fixed so results never depend on thread count.
const CHUNK: usize = 16;

/// A forecaster under evaluation.
#[derive(Clone, Copy)]
pub enum Method<'a> {
    Pipeline(Pipeline<'a>),
    Entangled {
        model: &'a EntangledForecaster,
        completion: Option<&'a CompletionModel>,
    },
    Baseline {
        baseline: Baseline,
        completion: Option<&'a CompletionModel>,
        t_p: usize,
    },
}

impl Method<'_> {
    pub fn t_p(&self) -> usize {
        match self {
            Method::Pipeline(p) => p.t_p,
            Method::Entangled { model, .. } => model.t_p(),
            Method::Baseline { t_p, .. } => *t_p,
        }
    }

    /// Forecasts `t_f` frames after the first `t_p` of each sequence.
    pub fn forecast(&self, seqs: &[LocomotionSequence], t_f: usize) -> Result<Vec<Vec<Pose>>, ForecastError> {
        let t_p = self.t_p();
        let hist = |s: &LocomotionSequence, c: Option<&CompletionModel>| -> Result<Vec<Pose>, ForecastError> {
            if s.len() < t_p {
                return Err(ForecastError::HistoryLength {
                    expected: t_p,
                    got: s.len(),
                });
            }
            let h = &s.frames[..t_p];
            Ok(match c {
                Some(m) => m.complete_many(h),
                None => h.to_vec(),
            })
        };
        match self {
            Method::Pipeline(p) => p.forecast(seqs, t_f),
            Method::Entangled { model, completion } => {
                let hs = seqs.iter().map(|s| hist(s, *completion)).collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&[Pose]> = hs.iter().map(Vec::as_slice).collect();
                model.forecast(&refs, t_f)
            }
            Method::Baseline { baseline, completion, .. } => seqs
                .iter()
                .map(|s| Ok(baseline.forecast_poses(&hist(s, *completion)?, t_f)?))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    pub kde: f64,
    pub mean_kde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub skipped: usize,
    pub kde: f64,
    pub mean_kde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub t_f: usize,
    pub count: usize,
    pub skipped: usize,
    pub kde: f64,
    pub mean_kde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub method: String,
    pub t_p: usize,
    pub t_f: usize,
    pub records: Vec<RecordScore>,
    pub aggregate: Aggregate,
    pub horizons: Vec<HorizonRow>,
    /// The fully resolved configuration the report was produced under.
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.aggregate;
        let _ = writeln!(s, "method {}  t_p {}  t_f {}", self.method, self.t_p, self.t_f);
        let _ = writeln!(s, "records {}  skipped {}", a.count, a.skipped);
        let _ = writeln!(s, "KDE {:.4}  mean KDE {:.4}", a.kde, a.mean_kde);
        let _ = writeln!(s, "{:>5} {:>7} {:>7} {:>12} {:>10}", "t_f", "records", "skipped", "KDE", "mean KDE");
        for r in &self.horizons {
            let _ = writeln!(s, "{:>5} {:>7} {:>7} {:>12.4} {:>10.4}", r.t_f, r.count, r.skipped, r.kde, r.mean_kde);
        }
        s
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, sum) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n, if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Forecasts of one chunk at a common horizon, in input order.
fn forecast_chunk(method: &Method<'_>, seqs: &[&LocomotionSequence], horizon: usize) -> Result<Vec<Vec<Pose>>, ForecastError> {
    let owned: Vec<LocomotionSequence> = seqs.iter().map(|s| (*s).clone()).collect();
    method.forecast(&owned, horizon)
}

#[cfg(feature = "parallel")]
fn map_chunks<T: Send>(
    items: &[(usize, usize)],
    f: impl Fn(&[(usize, usize)]) -> Result<Vec<T>, ForecastError> + Sync,
) -> Result<Vec<Vec<T>>, ForecastError> {
    use rayon::prelude::*;
    items.par_chunks(CHUNK).map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T: Send>(
    items: &[(usize, usize)],
    f: impl Fn(&[(usize, usize)]) -> Result<Vec<T>, ForecastError> + Sync,
) -> Result<Vec<Vec<T>>, ForecastError> {
    items.chunks(CHUNK).map(f).collect()
}

/// Scores `method` on `noisy` inputs against `truth` (same order and ids).
///
/// Every record is forecast once at the longest horizon it supports (capped
/// at the largest requested one); shorter horizons use prefixes of that
/// forecast, which is exact because all methods decode autoregressively.
pub fn evaluate(
    ids: &[String],
    noisy: &[LocomotionSequence],
    truth: &[LocomotionSequence],
    method: &Method<'_>,
    name: &str,
    config: &ExperimentConfig,
) -> Result<EvalReport, IoError> {
    if noisy.len() != truth.len() || ids.len() != noisy.len() {
        return Err(IoError::Schema(format!(
            "{} ids, {} inputs, {} truth records",
            ids.len(),
            noisy.len(),
            truth.len()
        )));
    }
    let t_p = method.t_p();
    let t_f = config.t_f;
    let max_h = config.horizons.iter().copied().chain([t_f]).max().unwrap_or(t_f);
    let avail = |i: usize| noisy[i].len().min(truth[i].len()).saturating_sub(t_p).min(max_h);

    // Group by horizon; BTreeMap keeps the order deterministic.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..noisy.len() {
        if avail(i) > 0 {
            groups.entry(avail(i)).or_default().push(i);
        }
    }
    let mut preds: Vec<Option<Vec<Pose>>> = vec![None; noisy.len()];
    for (&h, idx) in &groups {
        let items: Vec<(usize, usize)> = idx.iter().map(|&i| (i, h)).collect();
        let out = map_chunks(&items, |chunk| {
            let seqs: Vec<&LocomotionSequence> = chunk.iter().map(|&(i, _)| &noisy[i]).collect();
            forecast_chunk(method, &seqs, h)
        })
        .map_err(|e| IoError::Forecast(Box::new(e)))?;
        for (&i, p) in idx.iter().zip(out.into_iter().flatten()) {
            preds[i] = Some(p);
        }
    }

    let score = |i: usize, h: usize| -> Result<Option<f64>, IoError> {
        match &preds[i] {
            Some(p) if p.len() >= h => {
                let fut = &truth[i].frames[t_p..t_p + h];
                Ok(Some(kde(&p[..h], fut, config.kde_norm)?))
            }
            _ => Ok(None),
        }
    };
    let mut records = Vec::new();
    let mut skipped = 0;
    for (i, id) in ids.iter().enumerate() {
        match score(i, t_f)? {
            Some(k) => records.push(RecordScore {
                id: id.clone(),
                kde: k,
                mean_kde: k / NUM_JOINTS as f64,
            }),
            None => skipped += 1,
        }
    }
    let (count, k) = mean(records.iter().map(|r| r.kde));
    let aggregate = Aggregate {
        count,
        skipped,
        kde: k,
        mean_kde: k / NUM_JOINTS as f64,
    };
    let mut horizons = Vec::new();
    for &h in &config.horizons {
        let scores: Vec<Option<f64>> = (0..noisy.len()).map(|i| score(i, h)).collect::<Result<_, _>>()?;
        let (n, k) = mean(scores.iter().flatten().copied());
        horizons.push(HorizonRow {
            t_f: h,
            count: n,
            skipped: noisy.len() - n,
            kde: k,
            mean_kde: k / NUM_JOINTS as f64,
        });
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: name.to_string(),
        t_p,
        t_f,
        records,
        aggregate,
        horizons,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DatasetSpec, NoiseConfig};

    fn data(n: usize, t_f: usize) -> (Vec<String>, Vec<LocomotionSequence>, Vec<LocomotionSequence>) {
        let d = generate_dataset(&DatasetSpec::new(n, 4, t_f, 5)).unwrap();
        (
            d.iter().map(|s| s.id.clone()).collect(),
            d.iter().map(|s| s.noisy.clone()).collect(),
            d.iter().map(|s| s.truth.clone()).collect(),
        )
    }

    fn cfg(t_f: usize) -> ExperimentConfig {
        ExperimentConfig {
            t_p: 4,
            t_f,
            horizons: vec![2, 4, 6],
            ..ExperimentConfig::default()
        }
    }

    fn zero(t_p: usize) -> Method<'static> {
        Method::Baseline {
            baseline: Baseline::ZeroVelocity,
            completion: None,
            t_p,
        }
    }

    #[test]
    fn static_dataset_scores_zero() {
        let mut spec = DatasetSpec::new(3, 4, 4, 2);
        spec.noise = NoiseConfig::zero();
        let d = generate_dataset(&spec).unwrap();
        let stat: Vec<LocomotionSequence> = d
            .iter()
            .map(|s| LocomotionSequence {
                frames: vec![s.truth.frames[0]; 8],
                ..s.truth.clone()
            })
            .collect();
        let ids: Vec<String> = d.iter().map(|s| s.id.clone()).collect();
        let r = evaluate(&ids, &stat, &stat, &zero(4), "zero", &cfg(4)).unwrap();
        assert_eq!(r.aggregate.kde, 0.0);
        assert_eq!(r.aggregate.count, 3);
    }

    #[test]
    fn aggregate_matches_brute_force_and_is_repeatable() {
        let (ids, noisy, truth) = data(20, 4);
        let c = cfg(4);
        let r = evaluate(&ids, &noisy, &truth, &zero(4), "zero", &c).unwrap();
        let mut sum = 0.0;
        for (i, rec) in r.records.iter().enumerate() {
            let p = crate::baselines::zero_velocity(&noisy[i].frames[..4], 4).unwrap();
            let k = kde(&p, &truth[i].frames[4..8], c.kde_norm).unwrap();
            assert_eq!(rec.kde, k);
            sum += k;
        }
        assert!((r.aggregate.kde - sum / 20.0).abs() < 1e-12);
        assert_eq!(r, evaluate(&ids, &noisy, &truth, &zero(4), "zero", &c).unwrap());
    }

    #[test]
    fn short_records_are_skipped_and_counted() {
        let (ids, noisy, truth) = data(5, 4);
        let r = evaluate(&ids, &noisy, &truth, &zero(4), "zero", &cfg(4)).unwrap();
        let h6 = r.horizons.iter().find(|h| h.t_f == 6).unwrap();
        assert_eq!((h6.count, h6.skipped), (0, 5));
        let h2 = r.horizons.iter().find(|h| h.t_f == 2).unwrap();
        assert_eq!((h2.count, h2.skipped), (5, 0));
        let r = evaluate(&ids, &noisy, &truth, &zero(4), "zero", &cfg(6)).unwrap();
        assert_eq!((r.aggregate.count, r.aggregate.skipped), (0, 5));
    }

    #[test]
    fn report_embeds_config_and_round_trips() {
        let (ids, noisy, truth) = data(2, 4);
        let r = evaluate(&ids, &noisy, &truth, &zero(4), "zero", &cfg(4)).unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.config, cfg(4));
        assert!(r.to_text().contains("mean KDE"));
    }
}
