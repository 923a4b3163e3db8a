//! Trial construction, equal error rate and result tables.
//!
//! Text artifacts are tab-separated. The first line names the format and
//! version (`#deepsv trials 1`), optional `#key=value` lines follow, then a
//! header row and one record per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::container::{write_atomic, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::frontend::Gender;

/// Utterance-level facts needed to cut segments.
#[derive(Debug, Clone, PartialEq)]
pub struct UttInfo {
    pub id: String,
    pub speaker: String,
    pub gender: Gender,
    pub num_frames: usize,
}

/// A contiguous run of frames from one utterance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SegmentPart {
    pub utt_id: String,
    pub start: usize,
    pub frames: usize,
}

/// Enrollment entry or test segment: the concatenation of its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub speaker: String,
    pub gender: Gender,
    pub parts: Vec<SegmentPart>,
}

impl Segment {
    pub fn num_frames(&self) -> usize {
        self.parts.iter().map(|p| p.frames).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub target: bool,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    pub enroll_secs: f64,
    pub test_secs: f64,
    #[serde(default = "one")]
    pub enrollments_per_speaker: usize,
}

fn one() -> usize {
    1
}

impl ConditionSpec {
    pub fn new(enroll_secs: f64, test_secs: f64) -> Self {
        Self {
            name: format!("C({}-{})", enroll_secs, test_secs),
            enroll_secs,
            test_secs,
            enrollments_per_speaker: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub condition: ConditionSpec,
    pub enrollments: Vec<Segment>,
    pub tests: Vec<Segment>,
    pub trials: Vec<Trial>,
    /// Speakers dropped for lack of audio.
    pub excluded: Vec<String>,
}

impl TrialList {
    pub fn num_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.trials.len() - self.num_targets()
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.enrollments.iter().chain(&self.tests).find(|s| s.id == id)
    }
}

/// Frames produced by `secs` of audio under the given framing.
pub fn frames_for_secs(secs: f64, sample_rate: u32, frame_len: usize, frame_shift: usize) -> usize {
    let samples = (secs * sample_rate as f64).round() as usize;
    if samples < frame_len {
        0
    } else {
        1 + (samples - frame_len) / frame_shift
    }
}

/// Framing used to convert durations into frame counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Framing {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_shift: usize,
}

impl Framing {
    pub fn frames(&self, secs: f64) -> usize {
        frames_for_secs(secs, self.sample_rate, self.frame_len, self.frame_shift)
    }
}

/// Per speaker (utterances in id order): enrollment entries take whole
/// utterances in turn until the enrollment length is reached, the last one
/// truncated; each remaining utterance long enough gives one test segment
/// (its first `test_secs`). Trials are every gender-matched pair of
/// enrollment entry and test segment.
pub fn build_conditions(utts: &[UttInfo], cond: &ConditionSpec, framing: Framing) -> Result<TrialList> {
    let enroll_frames = framing.frames(cond.enroll_secs);
    let test_frames = framing.frames(cond.test_secs);
    if enroll_frames == 0 || test_frames == 0 || cond.enrollments_per_speaker == 0 {
        return Err(Error::usage(format!(
            "condition {} needs positive enrollment and test durations",
            cond.name
        )));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&UttInfo>> = BTreeMap::new();
    for u in utts {
        by_speaker.entry(u.speaker.as_str()).or_default().push(u);
    }
    let mut enrollments = Vec::new();
    let mut tests = Vec::new();
    let mut excluded = Vec::new();
    for (speaker, mut list) in by_speaker {
        list.sort_by(|a, b| a.id.cmp(&b.id));
        if list.iter().any(|u| u.gender != list[0].gender) {
            return Err(Error::usage(format!("speaker {speaker} has inconsistent gender labels")));
        }
        let gender = list[0].gender;
        let mut next = 0;
        let mut entries = Vec::new();
        for e in 0..cond.enrollments_per_speaker {
            let mut parts = Vec::new();
            let mut have = 0;
            while have < enroll_frames && next < list.len() {
                let u = list[next];
                next += 1;
                let take = u.num_frames.min(enroll_frames - have);
                parts.push(SegmentPart {
                    utt_id: u.id.clone(),
                    start: 0,
                    frames: take,
                });
                have += take;
            }
            if have < enroll_frames {
                break;
            }
            entries.push(Segment {
                id: format!("{speaker}-enroll{e}"),
                speaker: speaker.to_string(),
                gender,
                parts,
            });
        }
        let speaker_tests: Vec<Segment> = list[next..]
            .iter()
            .filter(|u| u.num_frames >= test_frames)
            .map(|u| Segment {
                id: format!("{}-test", u.id),
                speaker: speaker.to_string(),
                gender,
                parts: vec![SegmentPart {
                    utt_id: u.id.clone(),
                    start: 0,
                    frames: test_frames,
                }],
            })
            .collect();
        if entries.len() < cond.enrollments_per_speaker || speaker_tests.is_empty() {
            log::warn!(
                "condition {}: speaker {speaker} lacks audio for enrollment and testing; excluded",
                cond.name
            );
            excluded.push(speaker.to_string());
            continue;
        }
        enrollments.extend(entries);
        tests.extend(speaker_tests);
    }
    let mut trials = Vec::new();
    for e in &enrollments {
        for t in tests.iter().filter(|t| t.gender == e.gender) {
            trials.push(Trial {
                enroll_id: e.id.clone(),
                test_id: t.id.clone(),
                target: e.speaker == t.speaker,
                gender: e.gender,
            });
        }
    }
    if trials.is_empty() {
        return Err(Error::usage(format!("condition {} produced no trials", cond.name)));
    }
    Ok(TrialList {
        condition: cond.clone(),
        enrollments,
        tests,
        trials,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// e.g. `dvector/cosine`.
    pub system: String,
    pub condition: String,
    pub records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !r.score.is_finite() {
                return Err(Error::usage(format!(
                    "non-finite score for trial {} {}",
                    r.enroll_id, r.test_id
                )));
            }
            if !seen.insert((&r.enroll_id, &r.test_id)) {
                return Err(Error::usage(format!(
                    "duplicate trial {} {}",
                    r.enroll_id, r.test_id
                )));
            }
        }
        Ok(())
    }

    pub fn labeled_scores(&self) -> Vec<(f64, bool)> {
        self.records.iter().map(|r| (r.score, r.target)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    /// Percent.
    pub eer: f64,
    pub threshold: f64,
    pub num_targets: usize,
    pub num_nontargets: usize,
}

/// Operating points at every distinct score and at `+inf`: a trial is
/// accepted when its score is `>=` the threshold. Returns `(threshold,
/// false-accept rate, miss rate)` in ascending threshold order.
pub fn operating_points(scores: &[(f64, bool)]) -> Result<Vec<(f64, f64, f64)>> {
    let nt = scores.iter().filter(|s| s.1).count();
    let nn = scores.len() - nt;
    if nt == 0 || nn == 0 {
        return Err(Error::usage(if scores.is_empty() {
            "no trials to evaluate".to_string()
        } else {
            "EER needs both target and nontarget trials".to_string()
        }));
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::usage("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    // below the current threshold: targets missed, nontargets rejected
    let (mut missed, mut rejected) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let theta = sorted[i].0;
        points.push((theta, (nn - rejected) as f64 / nn as f64, missed as f64 / nt as f64));
        while i < sorted.len() && sorted[i].0 == theta {
            if sorted[i].1 {
                missed += 1;
            } else {
                rejected += 1;
            }
            i += 1;
        }
    }
    points.push((f64::INFINITY, 0.0, 1.0));
    Ok(points)
}

/// Linear interpolation at the first sign change of `FA - miss` along a
/// sequence of operating points (shared with the exhaustive test oracle).
pub fn eer_from_points(points: &[(f64, f64, f64)]) -> (f64, f64) {
    for w in points.windows(2) {
        let (t0, fa0, m0) = w[0];
        let (t1, fa1, m1) = w[1];
        let (d0, d1) = (fa0 - m0, fa1 - m1);
        if d0 <= 0.0 {
            return (fa0, t0);
        }
        if d1 <= 0.0 {
            let a = d0 / (d0 - d1);
            let eer = fa0 + a * (fa1 - fa0);
            let threshold = if t1.is_finite() { t0 + a * (t1 - t0) } else { t0 };
            return (eer, threshold);
        }
    }
    unreachable!("operating points end with FA = 0, miss = 1")
}

pub fn compute_eer(scores: &[(f64, bool)]) -> Result<Eer> {
    let points = operating_points(scores)?;
    let (eer, threshold) = eer_from_points(&points);
    let nt = scores.iter().filter(|s| s.1).count();
    Ok(Eer {
        eer: 100.0 * eer,
        threshold,
        num_targets: nt,
        num_nontargets: scores.len() - nt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub system: String,
    pub scoring: String,
    pub condition: String,
    pub eer: Eer,
}

/// Text table (systems x scoring down, conditions across) and a TSV summary
/// with one line per cell. Row and column order follow first appearance.
pub fn emit_report(cells: &[ReportCell]) -> (String, String) {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for c in cells {
        let key = (c.system.clone(), c.scoring.clone());
        if !rows.contains(&key) {
            rows.push(key);
        }
        if !cols.contains(&c.condition) {
            cols.push(c.condition.clone());
        }
    }
    let lookup = |r: &(String, String), col: &str| {
        cells
            .iter()
            .find(|c| c.system == r.0 && c.scoring == r.1 && c.condition == col)
            .map(|c| format!("{:.2}", c.eer.eer))
            .unwrap_or_else(|| "-".into())
    };
    let w_sys = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("System".len());
    let w_sc = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("Scoring".len());
    let w_col: Vec<usize> = cols.iter().map(|c| c.len().max(6)).collect();
    let mut table = String::new();
    let _ = write!(table, "{:<w_sys$} | {:<w_sc$}", "System", "Scoring");
    for (c, w) in cols.iter().zip(&w_col) {
        let _ = write!(table, " | {c:>w$}");
    }
    table.push('\n');
    let rule = w_sys + w_sc + 3 + w_col.iter().map(|w| w + 3).sum::<usize>();
    table.push_str(&"-".repeat(rule));
    table.push('\n');
    for r in &rows {
        let _ = write!(table, "{:<w_sys$} | {:<w_sc$}", r.0, r.1);
        for (c, w) in cols.iter().zip(&w_col) {
            let _ = write!(table, " | {:>w$}", lookup(r, c));
        }
        table.push('\n');
    }
    table.push_str("EER in percent.\n");

    let mut tsv = format!("#deepsv report {FORMAT_VERSION}\nsystem\tscoring\tcondition\teer_percent\tthreshold\ttargets\tnontargets\n");
    for c in cells {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.system, c.scoring, c.condition, c.eer.eer, c.eer.threshold, c.eer.num_targets, c.eer.num_nontargets
        );
    }
    (table, tsv)
}

// ---- text artifacts ----

fn label_str(target: bool) -> &'static str {
    if target {
        "target"
    } else {
        "nontarget"
    }
}

fn parse_label(s: &str) -> Result<bool> {
    match s {
        "target" => Ok(true),
        "nontarget" => Ok(false),
        other => Err(Error::format(format!("unknown trial label `{other}`"))),
    }
}

/// Writes a versioned TSV file.
pub fn write_table(path: &Path, format: &str, meta: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = format!("#deepsv {format} {FORMAT_VERSION}\n");
    for (k, v) in meta {
        let _ = writeln!(out, "#{k}={v}");
    }
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    let fail = |e: csv::Error| Error::format(e.to_string());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    let body = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).expect("utf-8 records"));
    write_atomic(path, out.as_bytes())
}

pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(format!("missing column `{name}`")))
    }
}

/// Reads a TSV file written by [`write_table`], refusing other formats and
/// versions.
pub fn read_table(path: &Path, format: &str) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, format)
}

pub fn parse_table(text: &str, format: &str) -> Result<Table> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let mut f = first.split_whitespace();
    if f.next() != Some("#deepsv") || f.next() != Some(format) {
        return Err(Error::format(format!("not a {format} file (first line `{first}`)")));
    }
    let found: u16 = f
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format("missing format version"))?;
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for l in lines {
        if let Some(m) = l.strip_prefix('#') {
            if let Some((k, v)) = m.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        } else {
            body.push_str(l);
            body.push('\n');
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::format(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(Table { meta, header, rows })
}

pub fn write_trials(path: &Path, list: &TrialList) -> Result<()> {
    let rows: Vec<Vec<String>> = list
        .trials
        .iter()
        .map(|t| {
            vec![
                t.enroll_id.clone(),
                t.test_id.clone(),
                label_str(t.target).into(),
                t.gender.as_str().into(),
            ]
        })
        .collect();
    let c = &list.condition;
    write_table(
        path,
        "trials",
        &[
            ("condition", c.name.clone()),
            ("enroll_secs", c.enroll_secs.to_string()),
            ("test_secs", c.test_secs.to_string()),
            ("enrollments_per_speaker", c.enrollments_per_speaker.to_string()),
        ],
        &["enroll_id", "test_id", "label", "gender"],
        &rows,
    )
}

/// Segment definitions, one line per part.
pub fn write_segments(path: &Path, list: &TrialList) -> Result<()> {
    let mut rows = Vec::new();
    for (role, segs) in [("enroll", &list.enrollments), ("test", &list.tests)] {
        for s in segs.iter() {
            for p in &s.parts {
                rows.push(vec![
                    s.id.clone(),
                    role.to_string(),
                    s.speaker.clone(),
                    s.gender.as_str().to_string(),
                    p.utt_id.clone(),
                    p.start.to_string(),
                    p.frames.to_string(),
                ]);
            }
        }
    }
    write_table(
        path,
        "segments",
        &[("condition", list.condition.name.clone())],
        &["segment_id", "role", "speaker", "gender", "utt_id", "start_frame", "num_frames"],
        &rows,
    )
}

/// Rebuilds a trial list from its trial and segment files.
pub fn read_trial_list(trials_path: &Path, segments_path: &Path) -> Result<TrialList> {
    let t = read_table(trials_path, "trials")?;
    let meta = |k: &str| {
        t.meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::format(format!("trial file lacks `{k}`")))
    };
    let num = |k: &str| -> Result<f64> { meta(k)?.parse().map_err(|_| Error::format(format!("bad `{k}`"))) };
    let condition = ConditionSpec {
        name: meta("condition")?,
        enroll_secs: num("enroll_secs")?,
        test_secs: num("test_secs")?,
        enrollments_per_speaker: num("enrollments_per_speaker")? as usize,
    };
    let (ce, ct, cl, cg) = (t.column("enroll_id")?, t.column("test_id")?, t.column("label")?, t.column("gender")?);
    let trials = t
        .rows
        .iter()
        .map(|r| {
            Ok(Trial {
                enroll_id: r[ce].clone(),
                test_id: r[ct].clone(),
                target: parse_label(&r[cl])?,
                gender: Gender::parse(&r[cg])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let s = read_table(segments_path, "segments")?;
    let cols: Vec<usize> = ["segment_id", "role", "speaker", "gender", "utt_id", "start_frame", "num_frames"]
        .iter()
        .map(|c| s.column(c))
        .collect::<Result<_>>()?;
    let mut enrollments: Vec<Segment> = Vec::new();
    let mut tests: Vec<Segment> = Vec::new();
    for r in &s.rows {
        let part = SegmentPart {
            utt_id: r[cols[4]].clone(),
            start: r[cols[5]].parse().map_err(|_| Error::format("bad start_frame"))?,
            frames: r[cols[6]].parse().map_err(|_| Error::format("bad num_frames"))?,
        };
        let target = match r[cols[1]].as_str() {
            "enroll" => &mut enrollments,
            "test" => &mut tests,
            other => return Err(Error::format(format!("unknown segment role `{other}`"))),
        };
        match target.last_mut() {
            Some(seg) if seg.id == r[cols[0]] => seg.parts.push(part),
            _ => target.push(Segment {
                id: r[cols[0]].clone(),
                speaker: r[cols[2]].clone(),
                gender: Gender::parse(&r[cols[3]])?,
                parts: vec![part],
            }),
        }
    }
    Ok(TrialList {
        condition,
        enrollments,
        tests,
        trials,
        excluded: Vec::new(),
    })
}

pub fn write_scores(path: &Path, scores: &ScoreSet) -> Result<()> {
    scores.validate()?;
    let rows: Vec<Vec<String>> = scores
        .records
        .iter()
        .map(|r| {
            vec![
                r.enroll_id.clone(),
                r.test_id.clone(),
                // shortest representation that round-trips exactly
                format!("{:?}", r.score),
                label_str(r.target).into(),
            ]
        })
        .collect();
    write_table(
        path,
        "scores",
        &[("system", scores.system.clone()), ("condition", scores.condition.clone())],
        &["enroll_id", "test_id", "score", "label"],
        &rows,
    )
}

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let t = read_table(path, "scores")?;
    let (ce, ct, cs, cl) = (t.column("enroll_id")?, t.column("test_id")?, t.column("score")?, t.column("label")?);
    let records = t
        .rows
        .iter()
        .map(|r| {
            Ok(ScoreRecord {
                enroll_id: r[ce].clone(),
                test_id: r[ct].clone(),
                score: r[cs].parse().map_err(|_| Error::format(format!("bad score `{}`", r[cs])))?,
                target: parse_label(&r[cl])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ScoreSet {
        system: t.meta.get("system").cloned().unwrap_or_default(),
        condition: t.meta.get("condition").cloned().unwrap_or_default(),
        records,
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn framing() -> Framing {
        Framing {
            sample_rate: 8000,
            frame_len: 200,
            frame_shift: 80,
        }
    }

    fn corpus(speakers: usize, utts: usize, frames: usize) -> Vec<UttInfo> {
        let mut v = Vec::new();
        for s in 0..speakers {
            for u in 0..utts {
                v.push(UttInfo {
                    id: format!("spk{s:02}-utt{u:02}"),
                    speaker: format!("spk{s:02}"),
                    gender: if s % 2 == 0 { Gender::Female } else { Gender::Male },
                    num_frames: frames,
                });
            }
        }
        v
    }

    #[test]
    fn eer_extremes() {
        let perfect: Vec<(f64, bool)> = (0..10).map(|i| (if i < 5 { 1.0 } else { 0.0 }, i < 5)).collect();
        assert_eq!(compute_eer(&perfect).unwrap().eer, 0.0);
        let swapped: Vec<(f64, bool)> = perfect.iter().map(|&(s, t)| (s, !t)).collect();
        assert_eq!(compute_eer(&swapped).unwrap().eer, 100.0);
    }

    #[test]
    fn eer_requires_both_classes() {
        assert!(compute_eer(&[(1.0, true), (0.5, true)]).is_err());
        assert!(compute_eer(&[]).is_err());
    }

    #[test]
    fn eer_small_hand_example() {
        // targets 0.2 0.6 0.9, nontargets 0.1 0.4 0.7
        let s = [(0.2, true), (0.6, true), (0.9, true), (0.1, false), (0.4, false), (0.7, false)];
        // at 0.4: FA 2/3 miss 1/3; at 0.6: FA 1/3 miss 1/3 -> crossing at 1/3
        let e = compute_eer(&s).unwrap();
        assert!((e.eer - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.threshold, 0.6);
    }

    #[test]
    fn conditions_cover_gender_matched_pairs() {
        let c = corpus(6, 4, 500);
        let list = build_conditions(&c, &ConditionSpec::new(4.0, 4.0), framing()).unwrap();
        let need = framing().frames(4.0);
        assert_eq!(need, 398);
        assert!(list.enrollments.iter().all(|e| e.num_frames() == need));
        assert!(list.tests.iter().all(|t| t.num_frames() == need));
        // each speaker: 1 enrollment, 3 tests; 3 speakers per gender
        assert_eq!(list.num_targets(), 6 * 3);
        assert_eq!(list.num_nontargets(), 6 * 2 * 3);
        for t in &list.trials {
            let e = list.segment(&t.enroll_id).unwrap();
            let s = list.segment(&t.test_id).unwrap();
            assert_eq!(t.target, e.speaker == s.speaker);
            assert_eq!(e.gender, s.gender);
        }
    }

    #[test]
    fn long_enrollment_concatenates_and_excludes_short_speakers() {
        let mut c = corpus(4, 5, 450);
        c.retain(|u| !(u.speaker == "spk03" && u.id > "spk03-utt01".into()));
        let list = build_conditions(&c, &ConditionSpec::new(12.0, 4.0), framing()).unwrap();
        assert_eq!(list.excluded, vec!["spk03".to_string()]);
        let e = &list.enrollments[0];
        assert_eq!(e.num_frames(), framing().frames(12.0));
        assert_eq!(e.parts.len(), 3);
        assert!(e.parts.iter().take(2).all(|p| p.frames == 450));
    }

    #[test]
    fn report_layout() {
        let eer = Eer {
            eer: 7.5,
            threshold: 0.1,
            num_targets: 3,
            num_nontargets: 9,
        };
        let cell = |sys: &str, sc: &str, cond: &str| ReportCell {
            system: sys.into(),
            scoring: sc.into(),
            condition: cond.into(),
            eer,
        };
        let cells = vec![
            cell("d-vector", "Cosine", "C(4-4)"),
            cell("d-vector", "Cosine", "C(40-4)"),
            cell("end-to-end", "Bilinear", "C(4-4)"),
            cell("end-to-end", "Bilinear", "C(40-4)"),
        ];
        let (table, tsv) = emit_report(&cells);
        assert_eq!(table.matches("7.50").count(), 4);
        assert_eq!(tsv.lines().count(), 2 + 4);
        assert!(table.lines().next().unwrap().contains("C(40-4)"));
        assert_eq!(emit_report(&cells), (table, tsv));
    }

    #[test]
    fn table_version_is_checked() {
        let t = parse_table("#deepsv scores 1\n#system=x\na\tb\n1\t2\n", "scores").unwrap();
        assert_eq!(t.meta["system"], "x");
        assert_eq!(t.rows, vec![vec!["1".to_string(), "2".to_string()]]);
        assert!(matches!(
            parse_table("#deepsv scores 9\na\n", "scores"),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        assert!(parse_table("#deepsv trials 1\na\n", "scores").is_err());
    }
}
