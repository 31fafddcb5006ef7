//! KDIGO creatinine-criteria AKI detection, episode segmentation, and
//! per-encounter trajectory/recovery/severity classification.
//!
//! Staging per measurement:
//! - absolute criterion: rise >= 0.3 mg/dL above the rolling 48-hour nadir
//!   (the reference value joins the nadir set when its anchor lies in the
//!   window or when no earlier in-window measurement exists);
//! - relative criterion: >= 1.5-fold over the 7-day baseline
//!   (min of the reference and measurements in the trailing 7 days);
//! - stage 1 for ratio in [1.5, 2.0) or an absolute-only rise, stage 2 for
//!   [2.0, 3.0), stage 3 for >= 3.0 or active KRT.
//!
//! An episode resolves at the first measured point where no criterion
//! fires; absence of measurements is never treated as resolution. The
//! first episode decides the trajectory (rapidly reversed iff resolved
//! within 48 hours of onset); recovery at discharge/death is judged from
//! the final assessment independently.

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::baseline::ReferenceCreatinine;
use crate::ingest::CreatinineSeries;

/// Comparison slack for threshold boundaries, so constructed boundary
/// cases are not decided by float rounding.
const EPS: f64 = 1e-9;

pub const ABSOLUTE_RISE_MG_DL: f64 = 0.3;
pub const STAGE1_RATIO: f64 = 1.5;
pub const STAGE2_RATIO: f64 = 2.0;
pub const STAGE3_RATIO: f64 = 3.0;
pub const RAPID_REVERSAL_HOURS: i64 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AkiStage {
    None,
    Stage1,
    Stage2,
    Stage3,
}

impl AkiStage {
    pub fn as_u8(self) -> u8 {
        match self {
            AkiStage::None => 0,
            AkiStage::Stage1 => 1,
            AkiStage::Stage2 => 2,
            AkiStage::Stage3 => 3,
        }
    }

    pub fn is_aki(self) -> bool {
        self != AkiStage::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    None,
    Absolute48h,
    RelativeRatio,
    Krt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkiPointAssessment {
    pub at: NaiveDateTime,
    pub creatinine: f64,
    pub nadir_48h: f64,
    pub ratio_to_baseline: f64,
    pub stage: AkiStage,
    pub criterion: Criterion,
}

/// Closed interval during which KRT is considered active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KrtInterval {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl KrtInterval {
    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Stage every measurement of a series against the reference.
pub fn assess_points(
    series: &CreatinineSeries,
    reference: &ReferenceCreatinine,
    krt: &[KrtInterval],
) -> Vec<AkiPointAssessment> {
    let points = &series.points;
    let mut out = Vec::with_capacity(points.len());
    for (i, &(t, scr)) in points.iter().enumerate() {
        let window_start = t - Duration::hours(48);
        let mut nadir: Option<f64> = None;
        for &(tj, vj) in points[..i].iter().rev() {
            if tj < window_start {
                break;
            }
            nadir = Some(nadir.map_or(vj, |n: f64| n.min(vj)));
        }
        let ref_in_window = reference.anchor >= window_start && reference.anchor < t;
        let nadir_48h = match (nadir, ref_in_window) {
            (Some(n), true) => n.min(reference.value),
            (Some(n), false) => n,
            (None, _) => reference.value,
        };

        let week_start = t - Duration::days(7);
        let baseline_7d = points[..i]
            .iter()
            .rev()
            .take_while(|(tj, _)| *tj >= week_start)
            .map(|(_, vj)| *vj)
            .fold(reference.value, f64::min);

        let absolute_fires = scr - nadir_48h >= ABSOLUTE_RISE_MG_DL - EPS;
        let ratio = scr / baseline_7d;
        let krt_active = krt.iter().any(|iv| iv.contains(t));

        let (stage, criterion) = if krt_active {
            (AkiStage::Stage3, Criterion::Krt)
        } else if ratio >= STAGE3_RATIO - EPS {
            (AkiStage::Stage3, Criterion::RelativeRatio)
        } else if ratio >= STAGE2_RATIO - EPS {
            (AkiStage::Stage2, Criterion::RelativeRatio)
        } else if ratio >= STAGE1_RATIO - EPS {
            (AkiStage::Stage1, Criterion::RelativeRatio)
        } else if absolute_fires {
            (AkiStage::Stage1, Criterion::Absolute48h)
        } else {
            (AkiStage::None, Criterion::None)
        };

        out.push(AkiPointAssessment {
            at: t,
            creatinine: scr,
            nadir_48h,
            ratio_to_baseline: ratio,
            stage,
            criterion,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkiEpisode {
    pub onset: NaiveDateTime,
    /// `None` when unresolved at the last observation.
    pub resolution: Option<NaiveDateTime>,
    pub peak_creatinine: f64,
    pub peak_stage: AkiStage,
    /// Onset to resolution, or onset to last observation when unresolved.
    pub duration_days: f64,
    pub krt_during: bool,
}

impl AkiEpisode {
    pub fn resolved_within(&self, hours: i64) -> bool {
        match self.resolution {
            Some(r) => r - self.onset <= Duration::hours(hours),
            None => false,
        }
    }
}

/// Segment time-ordered assessments into episodes. An episode opens at the
/// first staged point after a non-AKI state and closes at the first
/// subsequent point where no criterion fires.
pub fn segment_episodes(assessments: &[AkiPointAssessment]) -> Vec<AkiEpisode> {
    let mut episodes = Vec::new();
    let mut open: Option<AkiEpisode> = None;
    for a in assessments {
        match open.as_mut() {
            None => {
                if a.stage.is_aki() {
                    open = Some(AkiEpisode {
                        onset: a.at,
                        resolution: None,
                        peak_creatinine: a.creatinine,
                        peak_stage: a.stage,
                        duration_days: 0.0,
                        krt_during: a.criterion == Criterion::Krt,
                    });
                }
            }
            Some(ep) => {
                if a.stage.is_aki() {
                    ep.peak_creatinine = ep.peak_creatinine.max(a.creatinine);
                    ep.peak_stage = ep.peak_stage.max(a.stage);
                    ep.krt_during |= a.criterion == Criterion::Krt;
                } else {
                    ep.resolution = Some(a.at);
                    ep.duration_days = days_between(ep.onset, a.at);
                    episodes.push(*ep);
                    open = None;
                }
            }
        }
    }
    if let (Some(mut ep), Some(last)) = (open, assessments.last()) {
        ep.duration_days = days_between(ep.onset, last.at);
        episodes.push(ep);
    }
    episodes
}

fn days_between(a: NaiveDateTime, b: NaiveDateTime) -> f64 {
    (b - a).num_seconds() as f64 / 86_400.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trajectory {
    RapidlyReversed,
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryGroup {
    NoAki,
    RapidlyReversed,
    PersistentWithRecovery,
    PersistentWithoutRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    None,
    Mild,
    Severe,
}

/// The seven-group partition: severity x trajectory group plus no-AKI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subphenotype {
    NoAki,
    MildRapidlyReversed,
    MildPersistentWithRecovery,
    MildPersistentWithoutRecovery,
    SevereRapidlyReversed,
    SeverePersistentWithRecovery,
    SeverePersistentWithoutRecovery,
}

impl Subphenotype {
    pub const ALL: [Subphenotype; 7] = [
        Subphenotype::NoAki,
        Subphenotype::MildRapidlyReversed,
        Subphenotype::MildPersistentWithRecovery,
        Subphenotype::MildPersistentWithoutRecovery,
        Subphenotype::SevereRapidlyReversed,
        Subphenotype::SeverePersistentWithRecovery,
        Subphenotype::SeverePersistentWithoutRecovery,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterAkiResult {
    pub has_aki: bool,
    pub worst_stage: AkiStage,
    pub krt: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_episode_trajectory: Option<Trajectory>,
    /// No AKI criterion met at the last in-stay assessment.
    pub recovered_at_discharge: bool,
    pub trajectory_group: TrajectoryGroup,
    pub severity: Severity,
    pub subphenotype: Subphenotype,
    pub recurrent: bool,
    pub total_aki_duration_days: f64,
    pub episode_count: usize,
}

/// Classify one encounter from its assessments and episodes.
pub fn classify_encounter(
    assessments: &[AkiPointAssessment],
    episodes: &[AkiEpisode],
) -> EncounterAkiResult {
    let worst_stage = assessments
        .iter()
        .map(|a| a.stage)
        .max()
        .unwrap_or(AkiStage::None);
    let krt = assessments.iter().any(|a| a.criterion == Criterion::Krt);
    let recovered_at_discharge = assessments
        .last()
        .map(|a| !a.stage.is_aki())
        .unwrap_or(true);

    let first_episode_trajectory = episodes.first().map(|ep| {
        if ep.resolved_within(RAPID_REVERSAL_HOURS) {
            Trajectory::RapidlyReversed
        } else {
            Trajectory::Persistent
        }
    });

    let trajectory_group = match first_episode_trajectory {
        None => TrajectoryGroup::NoAki,
        Some(Trajectory::RapidlyReversed) => TrajectoryGroup::RapidlyReversed,
        Some(Trajectory::Persistent) => {
            if recovered_at_discharge {
                TrajectoryGroup::PersistentWithRecovery
            } else {
                TrajectoryGroup::PersistentWithoutRecovery
            }
        }
    };

    let severity = match worst_stage {
        AkiStage::None => Severity::None,
        AkiStage::Stage1 => Severity::Mild,
        AkiStage::Stage2 | AkiStage::Stage3 => Severity::Severe,
    };

    let subphenotype = match (severity, trajectory_group) {
        (Severity::None, _) => Subphenotype::NoAki,
        (Severity::Mild, TrajectoryGroup::RapidlyReversed) => Subphenotype::MildRapidlyReversed,
        (Severity::Mild, TrajectoryGroup::PersistentWithRecovery) => {
            Subphenotype::MildPersistentWithRecovery
        }
        (Severity::Mild, TrajectoryGroup::PersistentWithoutRecovery) => {
            Subphenotype::MildPersistentWithoutRecovery
        }
        (Severity::Severe, TrajectoryGroup::RapidlyReversed) => Subphenotype::SevereRapidlyReversed,
        (Severity::Severe, TrajectoryGroup::PersistentWithRecovery) => {
            Subphenotype::SeverePersistentWithRecovery
        }
        (Severity::Severe, TrajectoryGroup::PersistentWithoutRecovery) => {
            Subphenotype::SeverePersistentWithoutRecovery
        }
        (_, TrajectoryGroup::NoAki) => Subphenotype::NoAki,
    };

    EncounterAkiResult {
        has_aki: !episodes.is_empty(),
        worst_stage,
        krt,
        first_episode_trajectory,
        recovered_at_discharge,
        trajectory_group,
        severity,
        subphenotype,
        recurrent: episodes.len() >= 2,
        total_aki_duration_days: episodes.iter().map(|e| e.duration_days).sum(),
        episode_count: episodes.len(),
    }
}

/// Convenience: full per-encounter evaluation.
pub fn evaluate(
    series: &CreatinineSeries,
    reference: &ReferenceCreatinine,
    krt: &[KrtInterval],
) -> (Vec<AkiPointAssessment>, Vec<AkiEpisode>, EncounterAkiResult) {
    let assessments = assess_points(series, reference, krt);
    let episodes = segment_episodes(&assessments);
    let result = classify_encounter(&assessments, &episodes);
    (assessments, episodes, result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::ReferenceMethod;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn hours(h: i64) -> NaiveDateTime {
        dt("2019-06-01T00:00:00") + Duration::hours(h)
    }

    fn series(points: &[(i64, f64)]) -> CreatinineSeries {
        CreatinineSeries {
            points: points.iter().map(|&(h, v)| (hours(h), v)).collect(),
        }
    }

    fn reference(value: f64) -> ReferenceCreatinine {
        ReferenceCreatinine {
            value,
            method: ReferenceMethod::MinPrior7d,
            anchor: hours(0),
        }
    }

    #[test]
    fn ratio_1_6_is_stage_1() {
        let s = series(&[(12, 1.6)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        assert_eq!(a[0].stage, AkiStage::Stage1);
        assert_eq!(a[0].criterion, Criterion::RelativeRatio);
    }

    #[test]
    fn absolute_rise_over_rolling_nadir() {
        // ref 2.0; prior 1.9 at t-2h; 2.25 rises 0.35 over the nadir though
        // the ratio is only 1.125.
        let s = series(&[(10, 1.9), (12, 2.25)]);
        let a = assess_points(&s, &reference(2.0), &[]);
        assert_eq!(a[1].stage, AkiStage::Stage1);
        assert_eq!(a[1].criterion, Criterion::Absolute48h);
        assert!((a[1].nadir_48h - 1.9).abs() < 1e-12);
    }

    #[test]
    fn ratio_3_1_is_stage_3() {
        let s = series(&[(12, 3.1)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        assert_eq!(a[0].stage, AkiStage::Stage3);
    }

    #[test]
    fn stage_ratio_boundaries() {
        // Reference 0.5 keeps the sub-threshold case (ratio 1.49, rise
        // 0.245) below the absolute criterion too.
        for (ratio, expect) in [
            (1.49, AkiStage::None),
            (1.5, AkiStage::Stage1),
            (1.99, AkiStage::Stage1),
            (2.0, AkiStage::Stage2),
            (2.99, AkiStage::Stage2),
            (3.0, AkiStage::Stage3),
        ] {
            let s = series(&[(12, 0.5 * ratio)]);
            let a = assess_points(&s, &reference(0.5), &[]);
            assert_eq!(a[0].stage, expect, "ratio {ratio}");
        }
    }

    #[test]
    fn absolute_boundary() {
        // 0.29 rise: no criterion (ratio 1.29); 0.30 rise fires.
        let s = series(&[(12, 1.29)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        assert_eq!(a[0].stage, AkiStage::None);
        let s = series(&[(12, 1.30)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        assert_eq!(a[0].stage, AkiStage::Stage1);
        assert_eq!(a[0].criterion, Criterion::Absolute48h);
    }

    #[test]
    fn reference_leaves_nadir_window_after_48h() {
        // A measurement at t=60h with no point in (12h, 60h): only the
        // first in-stay value at 10h is out of window, the reference anchor
        // (t=0) as well, so the nadir falls back to the reference because
        // no prior in-window measurement exists.
        let s = series(&[(10, 1.0), (60, 1.25)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        assert_eq!(a[1].nadir_48h, 1.0); // fallback to reference
        assert_eq!(a[1].stage, AkiStage::None);
    }

    #[test]
    fn krt_forces_stage_3() {
        let s = series(&[(12, 1.0)]);
        let krt = [KrtInterval {
            start: hours(0),
            end: hours(24),
        }];
        let a = assess_points(&s, &reference(1.0), &krt);
        assert_eq!(a[0].stage, AkiStage::Stage3);
        assert_eq!(a[0].criterion, Criterion::Krt);
    }

    #[test]
    fn episode_resolution_and_duration() {
        // Stages [1,1,0] at days 0,1,2 -> one episode resolved on day 2.
        let s = series(&[(0, 1.6), (24, 1.7), (48, 1.0)]);
        let eps = segment_episodes(&assess_points(&s, &reference(1.0), &[]));
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].resolution, Some(hours(48)));
        assert!((eps[0].duration_days - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recurrence_flag() {
        let s = series(&[(0, 1.6), (24, 1.0), (48, 1.8), (72, 1.0)]);
        let a = assess_points(&s, &reference(1.0), &[]);
        let eps = segment_episodes(&a);
        assert_eq!(eps.len(), 2);
        assert!(classify_encounter(&a, &eps).recurrent);
    }

    #[test]
    fn unresolved_episode() {
        let s = series(&[(0, 1.6), (24, 2.1), (48, 3.2)]);
        let eps = segment_episodes(&assess_points(&s, &reference(1.0), &[]));
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].resolution, None);
        assert_eq!(eps[0].peak_stage, AkiStage::Stage3);
        assert!((eps[0].duration_days - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rapidly_reversed_within_48h() {
        let s = series(&[(0, 1.6), (12, 1.6), (36, 1.0), (96, 1.0)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.trajectory_group, TrajectoryGroup::RapidlyReversed);
        assert!(r.recovered_at_discharge);
        assert_eq!(r.subphenotype, Subphenotype::MildRapidlyReversed);
    }

    #[test]
    fn resolution_at_exactly_48h_is_rapidly_reversed() {
        let s = series(&[(0, 1.6), (48, 1.0)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.trajectory_group, TrajectoryGroup::RapidlyReversed);
    }

    #[test]
    fn resolution_at_49h_is_persistent() {
        let s = series(&[(0, 1.6), (49, 1.0)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.trajectory_group, TrajectoryGroup::PersistentWithRecovery);
        assert!(r.recovered_at_discharge);
    }

    #[test]
    fn persistent_with_recovery_at_96h() {
        let s = series(&[(0, 1.6), (48, 1.7), (96, 1.0), (120, 1.0)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.trajectory_group, TrajectoryGroup::PersistentWithRecovery);
    }

    #[test]
    fn unresolved_severe_without_recovery() {
        let s = series(&[(0, 1.6), (48, 2.2), (96, 2.4)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.worst_stage, AkiStage::Stage2);
        assert_eq!(r.trajectory_group, TrajectoryGroup::PersistentWithoutRecovery);
        assert_eq!(r.subphenotype, Subphenotype::SeverePersistentWithoutRecovery);
        assert!(!r.recovered_at_discharge);
    }

    #[test]
    fn short_unresolved_episode_is_persistent() {
        // Unresolved at last observation with elapsed < 48h: persistent.
        let s = series(&[(0, 1.6), (24, 1.7)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.first_episode_trajectory, Some(Trajectory::Persistent));
        assert_eq!(r.trajectory_group, TrajectoryGroup::PersistentWithoutRecovery);
    }

    #[test]
    fn rapid_reversal_with_later_unresolved_episode_keeps_group() {
        // First episode resolved in 24h; second episode unresolved at
        // discharge. Group stays rapidly-reversed, recovery is false.
        let s = series(&[(0, 1.6), (24, 1.0), (96, 1.8), (120, 1.9)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(r.trajectory_group, TrajectoryGroup::RapidlyReversed);
        assert!(!r.recovered_at_discharge);
        assert!(r.recurrent);
    }

    #[test]
    fn no_aki_classification() {
        let s = series(&[(0, 1.0), (24, 1.1)]);
        let (_, _, r) = evaluate(&s, &reference(1.0), &[]);
        assert!(!r.has_aki);
        assert_eq!(r.trajectory_group, TrajectoryGroup::NoAki);
        assert_eq!(r.subphenotype, Subphenotype::NoAki);
        assert_eq!(r.severity, Severity::None);
    }

    #[test]
    fn reclassification_is_deterministic() {
        let s = series(&[(0, 1.6), (24, 1.0), (48, 1.8), (72, 1.0)]);
        let first = evaluate(&s, &reference(1.0), &[]);
        let second = evaluate(&s, &reference(1.0), &[]);
        assert_eq!(first, second);
    }
}
