use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::client::FaceAnalysisClient;
use super::metrics::{AttributeRates, GroupCounts};
use super::probe::{BiasReport, Outcome};
use crate::dataset::{Attribute, FacePairManifest, Pose, ProbeKind};
use crate::error::{Error, Result};
use crate::exec;

/// A labelled grid. Cells hold plain strings; numbers are written with
/// Rust's shortest round-trip formatting so the CSV parses back exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["metric".to_string()];
        head.extend(self.header.iter().cloned());
        w.write_record(&head)?;
        for (name, cells) in &self.rows {
            let mut rec = vec![name.clone()];
            rec.extend(cells.iter().cloned());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut widths = vec![self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6)];
        for (j, h) in self.header.iter().enumerate() {
            let cells = self.rows.iter().map(|(_, c)| c[j].len());
            widths.push(cells.chain([h.len()]).max().unwrap_or(0));
        }
        let mut out = format!("{}\n", self.title);
        let line = |first: &str, rest: &[String]| {
            let mut s = format!("{first:<w$}", w = widths[0]);
            for (j, c) in rest.iter().enumerate() {
                s.push_str(&format!("  {c:>w$}", w = widths[j + 1]));
            }
            s.push('\n');
            s
        };
        out.push_str(&line("", &self.header));
        for (name, cells) in &self.rows {
            out.push_str(&line(name, cells));
        }
        out
    }
}

/// How well the classifier itself recovers the attribute from real frontal
/// images. Printed next to match rates because classifier error is
/// indistinguishable from generator bias in those numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfoundEstimate {
    pub accuracy: AttributeRates,
    pub counts: [GroupCounts; 2],
}

/// Classifier accuracy on the ground-truth frontal images of `pair_ids`
/// (every frontal record when `None`). Undetected faces count as misses.
pub fn confound_estimate(
    client: &dyn FaceAnalysisClient,
    manifest: &FacePairManifest,
    pair_ids: Option<&[String]>,
) -> Result<ConfoundEstimate> {
    let fronts: Vec<String> = match pair_ids {
        Some(ids) => {
            let mut set = BTreeSet::new();
            for id in ids {
                let p = manifest.pair(id).ok_or_else(|| Error::Invalid(format!("unknown pair `{id}`")))?;
                set.insert(p.front.clone());
            }
            set.into_iter().collect()
        }
        None => manifest
            .records
            .iter()
            .filter(|r| r.pose == Pose::Front)
            .map(|r| r.id.clone())
            .collect(),
    };
    let results = exec::map(&fronts, |id| -> Result<_> {
        let rec = manifest.record(id).expect("front id comes from the manifest");
        let img = manifest.load_record_image(id)?;
        Ok((rec.attribute, client.analyze(&img)?))
    });
    let mut counts = [GroupCounts::default(); 2];
    for r in results {
        let (truth, res) = r?;
        counts[truth as usize].add(truth, &res, 1);
    }
    let acc = |c: &GroupCounts| (c.evaluated > 0).then(|| c.matched as f64 / c.evaluated as f64);
    Ok(ConfoundEstimate {
        accuracy: AttributeRates { a: acc(&counts[0]), b: acc(&counts[1]) },
        counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTables {
    /// Train-set influence: one column per report.
    pub summary: Table,
    /// Test-set influence for pose-less probes: per probe, how many reports
    /// landed in each outcome.
    pub pivot: Option<Table>,
    pub confound: Option<ConfoundEstimate>,
}

impl ReportTables {
    pub fn text(&self) -> String {
        let mut s = self.summary.to_text();
        if let Some(c) = &self.confound {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            s.push_str(&format!(
                "classifier accuracy on ground-truth frontals (confound): A {} (n={}), B {} (n={})\n",
                f(c.accuracy.a),
                c.counts[0].evaluated,
                f(c.accuracy.b),
                c.counts[1].evaluated
            ));
        }
        if let Some(p) = &self.pivot {
            s.push('\n');
            s.push_str(&p.to_text());
        }
        s
    }
}

fn rate_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Renders reports that share a probe set as CSV/text tables.
pub fn report_tables(reports: &[BiasReport], confound: Option<&ConfoundEstimate>) -> Result<ReportTables> {
    let first = reports.first().ok_or_else(|| Error::Invalid("no reports to tabulate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.probe_set_id != first.probe_set_id) {
        return Err(Error::Invalid(format!(
            "reports use different probe sets: {} vs {}",
            first.probe_set_id, r.probe_set_id
        )));
    }
    let mut header: Vec<String> = reports.iter().map(|r| r.column()).collect();
    let unique: BTreeSet<&String> = header.iter().collect();
    if unique.len() != header.len() {
        header = reports.iter().map(|r| format!("{}/{}", r.column(), r.model_id)).collect();
    }

    let mut rows = Vec::new();
    let per = |f: &dyn Fn(&BiasReport) -> String| reports.iter().map(f).collect::<Vec<_>>();
    for attr in Attribute::ALL {
        rows.push((format!("recovery_{attr}"), per(&|r| rate_cell(r.recovery_rate.get(attr)))));
    }
    for attr in Attribute::ALL {
        rows.push((format!("match_{attr}"), per(&|r| rate_cell(r.match_rate.get(attr)))));
    }
    for attr in Attribute::ALL {
        rows.push((format!("evaluated_{attr}"), per(&|r| r.counts.get(attr).evaluated.to_string())));
        rows.push((format!("detected_{attr}"), per(&|r| r.counts.get(attr).detected.to_string())));
        rows.push((format!("matched_{attr}"), per(&|r| r.counts.get(attr).matched.to_string())));
    }
    for o in Outcome::ALL {
        rows.push((o.name().to_string(), per(&|r| r.tallies.get(o).to_string())));
    }
    for o in Outcome::ALL {
        rows.push((format!("probes_{}", o.name()), per(&|r| r.probe_tallies.get(o).to_string())));
    }
    let summary = Table {
        title: format!("probe set {} ({} probes, repeats {})", first.probe_set_id, first.probes.len(), first.repeats),
        header,
        rows,
    };

    let pivot = (first.probe_kind != ProbeKind::InDistribution).then(|| {
        let header: Vec<String> = first.probes.iter().map(|p| p.label.column()).collect();
        let rows = Outcome::ALL
            .iter()
            .map(|&o| {
                let cells = (0..first.probes.len())
                    .map(|i| reports.iter().filter(|r| r.probes[i].outcome == o).count().to_string())
                    .collect();
                (o.name().to_string(), cells)
            })
            .collect();
        Table {
            title: format!("outcomes per probe across {} model(s)", reports.len()),
            header,
            rows,
        }
    });
    Ok(ReportTables { summary, pivot, confound: confound.copied() })
}
