//! Evaluation records, aggregates, and CSV/JSON/SVG writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub kind: String,
    pub sigma: Option<f64>,
    pub desc_type: String,
    /// Raw answer field from the completion.
    pub answer: String,
    /// The option or candidate the answer resolved to.
    pub choice: Option<String>,
    pub correct: bool,
    pub flag: Option<String>,
    /// Excluded from accuracy (degenerate task).
    pub skipped: bool,
    pub chance: f64,
    /// Index into [`EvalReport::transcripts`].
    pub transcript: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub system: String,
    pub user: String,
    pub completion: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub transcripts: Vec<Transcript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub kind: String,
    pub sigma: Option<f64>,
    pub desc_type: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub chance: f64,
    pub flagged: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
    pub chance: Option<f64>,
    pub flagged: usize,
    pub skipped: usize,
    pub groups: Vec<GroupSummary>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    task_id: &'a str,
    kind: &'a str,
    sigma: String,
    desc_type: &'a str,
    answer: &'a str,
    correct: bool,
}

impl EvalReport {
    pub fn push(&mut self, mut record: EvalRecord, transcript: Option<Transcript>) {
        if let Some(t) = transcript {
            record.transcript = Some(self.transcripts.len());
            self.transcripts.push(t);
        }
        self.records.push(record);
    }

    pub fn extend(&mut self, other: EvalReport) {
        for mut r in other.records {
            let t = r.transcript.take().map(|i| other.transcripts[i].clone());
            self.push(r, t);
        }
    }

    fn scored(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(|r| !r.skipped)
    }

    pub fn correct(&self) -> usize {
        self.scored().filter(|r| r.correct).count()
    }

    pub fn total(&self) -> usize {
        self.scored().count()
    }

    /// correct / total over non-skipped records.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    pub fn chance(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.scored().map(|r| r.chance).sum::<f64>() / n as f64)
    }

    pub fn groups(&self) -> Vec<GroupSummary> {
        let mut map: BTreeMap<(String, Option<u64>, String), Vec<&EvalRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry((r.kind.clone(), r.sigma.map(f64::to_bits), r.desc_type.clone()))
                .or_default()
                .push(r);
        }
        let mut out: Vec<GroupSummary> = map
            .into_iter()
            .map(|((kind, sigma, desc_type), rs)| {
                let scored: Vec<&&EvalRecord> = rs.iter().filter(|r| !r.skipped).collect();
                let total = scored.len();
                let correct = scored.iter().filter(|r| r.correct).count();
                let chance = if total == 0 {
                    0.0
                } else {
                    scored.iter().map(|r| r.chance).sum::<f64>() / total as f64
                };
                GroupSummary {
                    kind,
                    sigma: sigma.map(f64::from_bits),
                    desc_type,
                    correct,
                    total,
                    accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
                    chance,
                    flagged: rs.iter().filter(|r| r.flag.is_some() && !r.skipped).count(),
                    skipped: rs.len() - total,
                }
            })
            .collect();
        out.sort_by(|a, b| {
            a.kind
                .cmp(&b.kind)
                .then(a.desc_type.cmp(&b.desc_type))
                .then(a.sigma.unwrap_or(0.0).total_cmp(&b.sigma.unwrap_or(0.0)))
        });
        out
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            correct: self.correct(),
            total: self.total(),
            accuracy: self.accuracy(),
            chance: self.chance(),
            flagged: self.scored().filter(|r| r.flag.is_some()).count(),
            skipped: self.records.len() - self.total(),
            groups: self.groups(),
        }
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                task_id: &r.task_id,
                kind: &r.kind,
                sigma: r.sigma.map(|s| s.to_string()).unwrap_or_default(),
                desc_type: &r.desc_type,
                answer: &r.answer,
                correct: r.correct,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `records.csv`, `records.jsonl`, `summary.json`,
    /// `transcripts.jsonl` and `chart.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("records.csv"), self.to_csv()?)?;
        let mut records = String::new();
        for r in &self.records {
            records.push_str(&serde_json::to_string(r)?);
            records.push('\n');
        }
        fs::write(dir.join("records.jsonl"), records)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary())?)?;
        let mut transcripts = String::new();
        for t in &self.transcripts {
            transcripts.push_str(&serde_json::to_string(t)?);
            transcripts.push('\n');
        }
        fs::write(dir.join("transcripts.jsonl"), transcripts)?;
        fs::write(dir.join("chart.svg"), self.chart_svg())?;
        Ok(())
    }

    /// Success rate against sigma for discrimination reports, grouped bars
    /// of accuracy per question kind otherwise.
    pub fn chart_svg(&self) -> String {
        let groups = self.groups();
        if groups.iter().any(|g| g.sigma.is_some()) {
            line_chart(&groups)
        } else {
            bar_chart(&groups)
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn y_of(v: f64) -> f64 {
    TOP + (1.0 - v.clamp(0.0, 1.0)) * (H - TOP - BOTTOM)
}

fn frame(out: &mut String, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let x1 = W - RIGHT;
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = y_of(v);
        let _ = write!(
            out,
            r##"<line x1="{LEFT}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = write!(
        out,
        r#"<text transform="translate(14,{}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
        H / 2.0
    );
}

fn legend(out: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{n}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y + 9.0
        );
    }
}

fn chance_line(out: &mut String, chance: f64) {
    let y = y_of(chance);
    let _ = write!(
        out,
        r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#444" stroke-dasharray="4 3"/><text x="{}" y="{}" text-anchor="end">chance</text>"##,
        W - RIGHT,
        W - RIGHT - 2.0,
        y - 3.0
    );
}

fn series_names(groups: &[GroupSummary]) -> Vec<String> {
    let mut names: Vec<String> = groups.iter().map(|g| g.desc_type.clone()).collect();
    names.sort();
    names.dedup();
    names
}

fn bar_chart(groups: &[GroupSummary]) -> String {
    let mut out = String::new();
    frame(&mut out, "accuracy");
    let mut kinds: Vec<String> = groups.iter().map(|g| g.kind.clone()).collect();
    kinds.sort();
    kinds.dedup();
    let names = series_names(groups);
    let slot = (W - LEFT - RIGHT) / kinds.len().max(1) as f64;
    let bar = slot * 0.8 / names.len().max(1) as f64;
    for (ki, k) in kinds.iter().enumerate() {
        let x0 = LEFT + slot * ki as f64 + slot * 0.1;
        for (si, s) in names.iter().enumerate() {
            if let Some(g) = groups.iter().find(|g| &g.kind == k && &g.desc_type == s) {
                let y = y_of(g.accuracy);
                let _ = write!(
                    out,
                    r#"<rect x="{:.1}" y="{y:.1}" width="{bar:.1}" height="{:.1}" fill="{}"/>"#,
                    x0 + bar * si as f64,
                    y_of(0.0) - y,
                    PALETTE[si % PALETTE.len()]
                );
            }
        }
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{k}</text>"#,
            x0 + slot * 0.4,
            H - BOTTOM + 16.0
        );
    }
    if let Some(c) = groups.first().map(|g| g.chance) {
        chance_line(&mut out, c);
    }
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

fn line_chart(groups: &[GroupSummary]) -> String {
    let mut out = String::new();
    frame(&mut out, "success rate");
    let sigmas: Vec<f64> = {
        let mut s: Vec<f64> = groups.iter().filter_map(|g| g.sigma).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    };
    let (lo, hi) = (sigmas.first().copied().unwrap_or(0.0), sigmas.last().copied().unwrap_or(1.0));
    let x_of = |s: f64| {
        let span = if hi > lo { hi - lo } else { 1.0 };
        LEFT + 10.0 + (s - lo) / span * (W - LEFT - RIGHT - 20.0)
    };
    for s in &sigmas {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{s}</text>"#,
            x_of(*s),
            H - BOTTOM + 16.0
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">sigma</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    let names = series_names(groups);
    for (si, name) in names.iter().enumerate() {
        let pts: Vec<String> = groups
            .iter()
            .filter(|g| &g.desc_type == name && g.total > 0)
            .filter_map(|g| g.sigma.map(|s| format!("{:.1},{:.1}", x_of(s), y_of(g.accuracy))))
            .collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            PALETTE[si % PALETTE.len()],
            pts.join(" ")
        );
    }
    chance_line(&mut out, 0.5);
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}
