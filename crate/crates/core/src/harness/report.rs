//! Report rows and their CSV form.

use std::io::Write;

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 13] = [
    "experiment",
    "signal",
    "variant",
    "depth",
    "fraction",
    "scheme",
    "seed",
    "train_psnr_db",
    "test_psnr_db",
    "ssim",
    "wall_time_s",
    "param",
    "error",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub signal: String,
    pub variant: String,
    pub depth: usize,
    pub fraction: f64,
    pub scheme: String,
    pub seed: u64,
    pub train_psnr: Option<f64>,
    pub test_psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_time: Option<f64>,
    /// Selected hyperparameter (σ in spacings, σ_R), when the variant has one.
    pub param: Option<f64>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        vec![
            self.experiment.clone(),
            self.signal.clone(),
            self.variant.clone(),
            self.depth.to_string(),
            self.fraction.to_string(),
            self.scheme.clone(),
            self.seed.to_string(),
            opt(self.train_psnr),
            opt(self.test_psnr),
            opt(self.ssim),
            self.wall_time.map_or(String::new(), |t| format!("{t:.3}")),
            self.param.map_or(String::new(), |p| p.to_string()),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Mean PSNRs of one group of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMean {
    pub train: f64,
    pub test: f64,
    pub count: usize,
}

impl Report {
    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn errors(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.is_error())
    }

    /// Mean train/test PSNR over the successful rows selected by `keep`.
    pub fn mean_where(&self, keep: impl Fn(&ReportRow) -> bool) -> Option<GroupMean> {
        let rows: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| !r.is_error() && keep(r))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ReportRow) -> Option<f64>| -> f64 {
            rows.iter().filter_map(|r| f(r)).sum::<f64>() / n
        };
        Some(GroupMean {
            train: mean(&|r| r.train_psnr),
            test: mean(&|r| r.test_psnr),
            count: rows.len(),
        })
    }

    pub fn mean_for_variant(&self, variant: &str) -> Option<GroupMean> {
        self.mean_where(|r| r.variant == variant)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            out.write_record(r.record())?;
        }
        out.flush().map_err(|e| Error::io("report", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::format("report", e.to_string()))
    }

    /// Parses a report written by [`Report::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().ne(REPORT_HEADER.iter().copied()) {
            return Err(Error::format("report", "unexpected header"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<Option<f64>> {
                let s = field(i);
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::format("report", format!("bad number '{s}'")))
            };
            let int = |i: usize| -> Result<u64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::format("report", format!("bad integer '{}'", field(i))))
            };
            rows.push(ReportRow {
                experiment: field(0).into(),
                signal: field(1).into(),
                variant: field(2).into(),
                depth: int(3)? as usize,
                fraction: num(4)?.unwrap_or(f64::NAN),
                scheme: field(5).into(),
                seed: int(6)?,
                train_psnr: num(7)?,
                test_psnr: num(8)?,
                ssim: num(9)?,
                wall_time: num(10)?,
                param: num(11)?,
                error: Some(field(12)).filter(|s| !s.is_empty()).map(String::from),
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, train: f64, test: f64) -> ReportRow {
        ReportRow {
            experiment: "encode1d".into(),
            signal: "a,b \"q\"".into(),
            variant: variant.into(),
            depth: 4,
            fraction: 0.5,
            scheme: "regular".into(),
            seed: 0,
            train_psnr: Some(train),
            test_psnr: Some(test),
            ssim: None,
            wall_time: None,
            param: Some(2.0),
            error: None,
        }
    }

    #[test]
    fn csv_quotes_and_round_trips() {
        let mut r = Report::default();
        r.push(row("no_pe", 20.0, 19.5));
        let mut e = row("sg_beta", 0.0, 0.0);
        e.train_psnr = None;
        e.test_psnr = None;
        e.error = Some("missing input: σ model".into());
        r.push(e);
        let text = r.to_csv_string().unwrap();
        assert!(text.starts_with("experiment,signal,variant,depth,fraction,scheme,seed,train_psnr_db,test_psnr_db,ssim,wall_time_s,param,error\n"));
        assert!(text.contains("\"a,b \"\"q\"\"\""));
        assert_eq!(Report::read_csv(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn means_skip_errors() {
        let mut r = Report::default();
        r.push(row("x", 10.0, 8.0));
        r.push(row("x", 20.0, 12.0));
        let mut e = row("x", 99.0, 99.0);
        e.error = Some("boom".into());
        r.push(e);
        let m = r.mean_for_variant("x").unwrap();
        assert_eq!((m.train, m.test, m.count), (15.0, 10.0, 2));
        assert!(r.mean_for_variant("y").is_none());
        assert_eq!(r.errors().count(), 1);
    }
}
