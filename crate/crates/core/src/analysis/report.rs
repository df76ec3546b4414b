use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use super::AnalysisError;
use crate::ingest::{escape_action, unescape_action};
use crate::mixture::BinLabel;
use crate::sequence::Token;

#[derive(Debug, Clone, PartialEq)]
pub struct AtcScore {
    pub token: Token,
    pub r: f64,
    pub r_std: Option<f64>,
    pub occurrences: u64,
}

impl AtcScore {
    /// Action label as it appeared in the log.
    pub fn label(&self) -> String {
        unescape_action(self.token.text())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMeta {
    pub long_bin: BinLabel,
    pub short_bin: BinLabel,
    pub long_members: usize,
    pub short_members: usize,
    /// Which events the report covers, e.g. `all` or `window 3`.
    pub scope: String,
    /// Standardization grouping.
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtcReport {
    pub scores: Vec<AtcScore>,
    pub meta: ReportMeta,
}

impl AtcReport {
    pub fn get(&self, token_text: &str) -> Option<&AtcScore> {
        self.scores.iter().find(|s| s.token.text() == token_text)
    }

    /// Standardize every score as one group.
    pub fn standardize_all(&mut self) -> Result<(), AnalysisError> {
        let group = if self.meta.scope.is_empty() { "all".to_string() } else { self.meta.scope.clone() };
        standardize(&mut self.scores, |_| group.clone())?;
        self.meta.group = group;
        Ok(())
    }

    /// CSV with header `token,r,r_std,occurrences`; tokens are raw labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| malformed("ATC report", e);
        w.write_record(["token", "r", "r_std", "occurrences"]).map_err(io)?;
        for s in &self.scores {
            let r_std = s.r_std.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.label(), s.r.to_string(), r_std, s.occurrences.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn malformed(what: &str, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Malformed {
        what: what.into(),
        message: e.to_string(),
    }
}

fn parse_f64(what: &str, row: usize, field: &str, text: &str) -> Result<f64, AnalysisError> {
    text.trim()
        .parse()
        .map_err(|_| malformed(what, format!("row {row}: bad {field} {text:?}")))
}

/// Read a report written by [`AtcReport::write_csv`]. Metadata is not stored
/// in the CSV and comes back empty.
pub fn read_report_csv<R: Read>(input: R) -> Result<AtcReport, AnalysisError> {
    const WHAT: &str = "ATC report";
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| malformed(WHAT, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(WHAT, format!("missing column {name:?}")))
    };
    let (ct, cr, cs, co) = (col("token")?, col("r")?, col("r_std")?, col("occurrences")?);
    let mut scores = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(WHAT, e))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let r = parse_f64(WHAT, row, "r", field(cr))?;
        let r_std = match field(cs).trim() {
            "" => None,
            t => Some(parse_f64(WHAT, row, "r_std", t)?),
        };
        let occurrences = field(co)
            .trim()
            .parse()
            .map_err(|_| malformed(WHAT, format!("row {row}: bad occurrences {:?}", field(co))))?;
        scores.push(AtcScore {
            token: Token::action(escape_action(field(ct))),
            r,
            r_std,
            occurrences,
        });
    }
    Ok(AtcReport {
        scores,
        meta: ReportMeta::default(),
    })
}

/// Within each group, `r_std = (r - mean) / population std`.
pub fn standardize(scores: &mut [AtcScore], group_of: impl Fn(&AtcScore) -> String) -> Result<(), AnalysisError> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in scores.iter().enumerate() {
        groups.entry(group_of(s)).or_default().push(i);
    }
    for (name, members) in groups {
        if members.len() < 2 {
            return Err(AnalysisError::Degenerate(name, "fewer than two members".into()));
        }
        let n = members.len() as f64;
        let mean = members.iter().map(|&i| scores[i].r).sum::<f64>() / n;
        let var = members.iter().map(|&i| (scores[i].r - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(AnalysisError::Degenerate(name, "zero variance".into()));
        }
        for i in members {
            scores[i].r_std = Some((scores[i].r - mean) / std);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    pub token: Token,
    pub r_std_a: f64,
    pub r_std_b: f64,
    pub diff: f64,
}

/// Per-action `r_std_a - r_std_b` for actions present in both cohorts.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDiff {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<DiffRow>,
    pub only_a: Vec<Token>,
    pub only_b: Vec<Token>,
}

impl CohortDiff {
    /// CSV with header `token,r_std_a,r_std_b,diff`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| malformed("cohort diff", e);
        w.write_record(["token", "r_std_a", "r_std_b", "diff"]).map_err(io)?;
        for row in &self.rows {
            w.write_record([
                unescape_action(row.token.text()),
                row.r_std_a.to_string(),
                row.r_std_b.to_string(),
                row.diff.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn standardized(report: &AtcReport, label: &str) -> Result<HashMap<String, f64>, AnalysisError> {
    report
        .scores
        .iter()
        .map(|s| {
            s.r_std
                .map(|v| (s.token.text().to_string(), v))
                .ok_or_else(|| AnalysisError::NotStandardized(label.to_string()))
        })
        .collect()
}

/// Rows follow the order of `a`.
pub fn cohort_diff(a: &AtcReport, b: &AtcReport, label_a: &str, label_b: &str) -> Result<CohortDiff, AnalysisError> {
    let std_a = standardized(a, label_a)?;
    let std_b = standardized(b, label_b)?;
    let mut rows = Vec::new();
    let mut only_a = Vec::new();
    for s in &a.scores {
        match std_b.get(s.token.text()) {
            Some(&vb) => {
                let va = std_a[s.token.text()];
                rows.push(DiffRow {
                    token: s.token.clone(),
                    r_std_a: va,
                    r_std_b: vb,
                    diff: va - vb,
                });
            }
            None => only_a.push(s.token.clone()),
        }
    }
    if rows.is_empty() {
        return Err(AnalysisError::EmptyIntersection);
    }
    let only_b = b
        .scores
        .iter()
        .filter(|s| !std_a.contains_key(s.token.text()))
        .map(|s| s.token.clone())
        .collect();
    Ok(CohortDiff {
        label_a: label_a.into(),
        label_b: label_b.into(),
        rows,
        only_a,
        only_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(rs: &[(&str, f64)]) -> Vec<AtcScore> {
        rs.iter()
            .map(|&(t, r)| AtcScore {
                token: Token::action(escape_action(t)),
                r,
                r_std: None,
                occurrences: 1,
            })
            .collect()
    }

    #[test]
    fn z_scores_use_population_std() {
        let mut s = scores(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        standardize(&mut s, |_| "all".into()).unwrap();
        let z: Vec<f64> = s.iter().map(|x| x.r_std.unwrap()).collect();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expected).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - expected).abs() < 1e-12);
        assert!((z[2] - 1.22474487).abs() < 1e-8);
    }

    #[test]
    fn groups_are_independent() {
        let mut s = scores(&[("a", 1.0), ("b", 5.0), ("c", -3.0), ("d", 10.0), ("e", 11.0), ("f", 15.0)]);
        standardize(&mut s, |x| if x.label() < "d".to_string() { "g1".into() } else { "g2".into() }).unwrap();
        for group in [&s[..3], &s[3..]] {
            let z: Vec<f64> = group.iter().map(|x| x.r_std.unwrap()).collect();
            let mean = z.iter().sum::<f64>() / 3.0;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_groups_fail() {
        let mut same = scores(&[("a", 0.5), ("b", 0.5)]);
        match standardize(&mut same, |_| "week 2".into()) {
            Err(AnalysisError::Degenerate(g, _)) => assert_eq!(g, "week 2"),
            other => panic!("unexpected {other:?}"),
        }
        let mut single = scores(&[("a", 0.5)]);
        assert!(standardize(&mut single, |_| "x".into()).is_err());
    }

    fn report(rs: &[(&str, f64)]) -> AtcReport {
        let mut r = AtcReport {
            scores: scores(rs),
            meta: ReportMeta::default(),
        };
        r.standardize_all().unwrap();
        r
    }

    #[test]
    fn diff_identity_and_antisymmetry() {
        let a = report(&[("x", 0.1), ("y", 0.7), ("z", -0.4), ("only a", 0.0)]);
        let b = report(&[("z", 0.3), ("y", 0.2), ("x", 0.9), ("only b", 1.0)]);
        let same = cohort_diff(&a, &a, "a", "a").unwrap();
        assert!(same.rows.iter().all(|r| r.diff == 0.0));
        let ab = cohort_diff(&a, &b, "a", "b").unwrap();
        let ba = cohort_diff(&b, &a, "b", "a").unwrap();
        assert_eq!(ab.rows.len(), 3);
        for row in &ab.rows {
            let back = ba.rows.iter().find(|r| r.token == row.token).unwrap();
            assert_eq!(row.diff, -back.diff);
        }
        assert_eq!(ab.only_a[0].text(), "only\\sa");
        assert_eq!(ab.only_b[0].text(), "only\\sb");
    }

    #[test]
    fn diff_needs_overlap_and_standardization() {
        let a = report(&[("x", 0.1), ("y", 0.7)]);
        let b = report(&[("p", 0.1), ("q", 0.7)]);
        assert!(matches!(cohort_diff(&a, &b, "a", "b"), Err(AnalysisError::EmptyIntersection)));
        let raw = AtcReport {
            scores: scores(&[("x", 0.1)]),
            meta: ReportMeta::default(),
        };
        assert!(matches!(cohort_diff(&a, &raw, "a", "raw"), Err(AnalysisError::NotStandardized(_))));
    }

    #[test]
    fn report_csv_round_trip() {
        let mut r = report(&[("Pause Video", 0.125), ("a,b", -1.5), ("T1", 0.3)]);
        r.scores[0].occurrences = 42;
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("token,r,r_std,occurrences\nPause Video,0.125,"));
        assert!(text.contains("\"a,b\",-1.5,"));
        let back = read_report_csv(buf.as_slice()).unwrap();
        assert_eq!(back.scores, r.scores);
    }
}
