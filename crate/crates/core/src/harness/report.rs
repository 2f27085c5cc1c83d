//! Stage-wise success tables and timing summaries.

use serde::{Deserialize, Serialize};

use super::episode::EpisodeRecord;
use crate::error::{Error, Result};
use crate::pose::OrientationClass;

/// `k` successes out of `n` trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub k: usize,
    pub n: usize,
}

impl Ratio {
    pub fn new(k: usize, n: usize) -> Self {
        Self { k, n }
    }

    pub fn percent(&self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.k as f64 / self.n as f64)
    }

    /// `"p% (k/n)"` with `p` rounded to two decimals, or `"n/a"`.
    pub fn render(&self) -> String {
        match self.percent() {
            Some(p) => format!("{p:.2}% ({}/{})", self.k, self.n),
            None => "n/a".to_string(),
        }
    }

    fn add(&mut self, success: bool) {
        self.n += 1;
        self.k += usize::from(success);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub sp_identification: Ratio,
    pub wrapping: Ratio,
    /// Out of wrapped attempts only.
    pub detach: Ratio,
    pub harvest: Ratio,
}

impl StageCounts {
    fn add(&mut self, r: &EpisodeRecord) {
        if let Some(sp) = r.sp_identified {
            self.sp_identification.add(sp);
        }
        if let Some(w) = r.wrapped {
            self.wrapping.add(w);
        }
        if r.wrapped == Some(true) {
            if let Some(d) = r.detached {
                self.detach.add(d);
            }
        }
        self.harvest.add(r.harvested == Some(true));
    }

    pub fn cells(&self) -> [String; 4] {
        [self.sp_identification.render(), self.wrapping.render(), self.detach.render(), self.harvest.render()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub pose: OrientationClass,
    pub counts: StageCounts,
}

/// Time totals of attempted targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub successes: usize,
    /// Sum over all attempted targets, seconds.
    pub total_s: f64,
}

impl TimeSummary {
    /// Total time divided by the number of successes.
    pub fn average_s(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.total_s / self.successes as f64)
    }

    pub fn render(&self) -> String {
        let avg = self.average_s().map_or_else(|| "n/a".to_string(), |a| format!("{a:.2}s"));
        format!("{} successes in {}s, avg. {avg}", self.successes, seconds(self.total_s))
    }
}

fn seconds(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<PoseRow>,
    pub overall: StageCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSummary>,
    /// Attempted targets in input order.
    #[serde(default)]
    pub episodes: Vec<EpisodeRecord>,
    /// Targets dropped by the filter.
    #[serde(default)]
    pub filtered: Vec<EpisodeRecord>,
}

impl Report {
    /// Report from already-counted stage results, without episode rows.
    pub fn from_counts(rows: Vec<PoseRow>, overall: StageCounts) -> Self {
        Self { rows, overall, time: None, episodes: Vec::new(), filtered: Vec::new() }
    }
}

/// Per-pose and overall stage rates over the attempted records.
pub fn aggregate_report(records: &[EpisodeRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::domain("cannot aggregate an empty record set"));
    }
    if let Some(bad) = records.iter().find(|r| !r.is_consistent()) {
        return Err(Error::domain(format!("record for truss {} is inconsistent", bad.truss_id)));
    }
    let (episodes, filtered): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.attempted);
    let mut overall = StageCounts::default();
    let mut rows: Vec<PoseRow> = Vec::new();
    for r in &episodes {
        overall.add(r);
        match rows.iter_mut().find(|row| row.pose == r.pose) {
            Some(row) => row.counts.add(r),
            None => {
                let mut counts = StageCounts::default();
                counts.add(r);
                rows.push(PoseRow { pose: r.pose, counts });
            }
        }
    }
    rows.sort_by_key(|r| r.pose);
    let time = TimeSummary {
        successes: episodes.iter().filter(|r| r.harvested == Some(true)).count(),
        total_s: episodes.iter().map(|r| r.time_used).sum(),
    };
    Ok(Report { rows, overall, time: Some(time), episodes, filtered })
}

fn mark(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "✓",
        Some(false) => "×",
        None => "-",
    }
}

fn csv_flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

const STAGES: [&str; 4] = ["SP identification", "Bottom-up wrapping", "Detach", "Harvesting"];

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    if !report.episodes.is_empty() {
        out.push_str("| # | Truss | Pose | SP identification | Bottom-up wrapping | Detach | Harvesting | Time used (s) |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for (i, r) in report.episodes.iter().enumerate() {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                i + 1,
                r.truss_id,
                r.pose.label(),
                mark(r.sp_identified),
                mark(r.wrapped),
                mark(r.detached),
                mark(r.harvested),
                seconds(r.time_used)
            ));
        }
        let [sp, wrap, detach, harvest] = report.overall.cells();
        let time = report.time.map(|t| t.render()).unwrap_or_default();
        out.push_str(&format!("| | | | {sp} | {wrap} | {detach} | {harvest} | {time} |\n\n"));
    }

    out.push_str("| Pose | ");
    out.push_str(&STAGES.join(" | "));
    out.push_str(" |\n|---|---|---|---|---|\n");
    for row in &report.rows {
        out.push_str(&format!("| {} | {} |\n", row.pose.label(), row.counts.cells().join(" | ")));
    }
    out.push_str(&format!("| All | {} |\n", report.overall.cells().join(" | ")));
    if let Some(t) = report.time {
        out.push_str(&format!("\nTime: {}\n", t.render()));
    }
    if !report.filtered.is_empty() {
        out.push_str("\nFiltered targets:\n");
        for r in &report.filtered {
            let reason = r.rejection.map(|x| format!("{x:?}")).unwrap_or_default();
            out.push_str(&format!("- truss {} ({}): {}\n", r.truss_id, r.pose.label(), reason));
        }
    }
    out
}

/// Same content as the markdown tables, one row per episode or summary line.
pub fn render_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["kind", "id", "pose", "sp_identification", "bottom_up_wrapping", "detach", "harvesting", "time_used_s"])
        .map_err(io)?;
    for r in report.episodes.iter().chain(&report.filtered) {
        let kind = if r.attempted { "episode" } else { "filtered" };
        w.write_record([
            kind,
            &r.truss_id.to_string(),
            r.pose.label(),
            csv_flag(r.sp_identified),
            csv_flag(r.wrapped),
            csv_flag(r.detached),
            csv_flag(r.harvested),
            &if r.attempted { seconds(r.time_used) } else { String::new() },
        ])
        .map_err(io)?;
    }
    for row in &report.rows {
        let c = row.counts.cells();
        w.write_record(["pose", "", row.pose.label(), &c[0], &c[1], &c[2], &c[3], ""]).map_err(io)?;
    }
    let c = report.overall.cells();
    let time = report.time.map(|t| t.render()).unwrap_or_default();
    w.write_record(["overall", "", "All", &c[0], &c[1], &c[2], &c[3], &time]).map_err(io)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(harvested: bool, time: f64) -> EpisodeRecord {
        EpisodeRecord {
            truss_id: 1,
            pose: OrientationClass::Front,
            attempted: true,
            rejection: None,
            attempts: 1,
            sp_identified: Some(harvested),
            wrapped: Some(harvested),
            detached: harvested.then_some(true),
            harvested: Some(harvested),
            failure: None,
            time_used: time,
        }
    }

    #[test]
    fn all_success() {
        let recs: Vec<_> = (0..10).map(|_| record(true, 30.0)).collect();
        let r = aggregate_report(&recs).unwrap();
        assert_eq!(r.overall.harvest.render(), "100.00% (10/10)");
        assert_eq!(r.time.unwrap().average_s(), Some(30.0));
    }

    #[test]
    fn single_failure() {
        let r = aggregate_report(&[record(false, 12.0)]).unwrap();
        assert_eq!(r.overall.harvest.render(), "0.00% (0/1)");
        assert_eq!(r.overall.detach.render(), "n/a");
        assert_eq!(r.time.unwrap().render(), "0 successes in 12s, avg. n/a");
    }

    #[test]
    fn empty_and_inconsistent() {
        assert!(aggregate_report(&[]).is_err());
        let mut bad = record(true, 1.0);
        bad.wrapped = Some(false);
        assert!(aggregate_report(&[bad]).is_err());
    }

    #[test]
    fn csv_has_summary() {
        let r = aggregate_report(&[record(true, 20.5), record(false, 3.0)]).unwrap();
        let csv = render_csv(&r).unwrap();
        assert!(csv.contains("overall,,All,50.00% (1/2)"));
        assert!(csv.lines().count() == 5);
    }
}
