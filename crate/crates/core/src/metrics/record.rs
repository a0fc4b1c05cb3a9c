use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CSV header of per-subject evaluation rows.
pub const CSV_COLUMNS: [&str; 11] = [
    "subject_id",
    "be_method",
    "dice_wt",
    "dice_tc",
    "dice_at",
    "hd95_wt",
    "hd95_tc",
    "hd95_at",
    "wall_time_s",
    "pearson",
    "psnr_db",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RegionScores {
    pub wt: f64,
    pub tc: f64,
    pub at: f64,
}

impl From<[f64; 3]> for RegionScores {
    fn from(v: [f64; 3]) -> Self {
        Self { wt: v[0], tc: v[1], at: v[2] }
    }
}

impl RegionScores {
    pub fn mean(&self) -> f64 {
        (self.wt + self.tc + self.at) / 3.0
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wt, self.tc, self.at]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub pearson: f64,
    pub psnr_db: f64,
}

/// Scores of one subject under one brain-extraction method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub subject_id: String,
    pub be_method: String,
    pub dice: RegionScores,
    pub hd95: RegionScores,
    pub wall_time_s: f64,
    #[serde(default)]
    pub alignment: Option<Alignment>,
}

impl EvaluationRecord {
    pub fn validate(&self) -> Result<()> {
        let dice_ok = self.dice.as_array().iter().all(|d| (0.0..=1.0).contains(d));
        let hd_ok = self.hd95.as_array().iter().all(|h| *h >= 0.0);
        if !dice_ok || !hd_ok || !(self.wall_time_s >= 0.0) {
            return Err(Error::Report(format!("record for `{}` is out of range", self.subject_id)));
        }
        Ok(())
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.subject_id.clone(),
            self.be_method.clone(),
            self.dice.wt.to_string(),
            self.dice.tc.to_string(),
            self.dice.at.to_string(),
            self.hd95.wt.to_string(),
            self.hd95.tc.to_string(),
            self.hd95.at.to_string(),
            self.wall_time_s.to_string(),
            opt(self.alignment.map(|a| a.pearson)),
            opt(self.alignment.map(|a| a.psnr_db)),
        ]
    }

    pub fn write_csv<W: Write>(records: &[EvaluationRecord], out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let map = |e: csv::Error| Error::Report(e.to_string());
        if header {
            w.write_record(CSV_COLUMNS).map_err(map)?;
        }
        for r in records {
            w.write_record(r.csv_row()).map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<EvaluationRecord>> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let map = |e: csv::Error| Error::Report(e.to_string());
        let headers = rd.headers().map_err(map)?.clone();
        if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
            return Err(Error::Report(format!("unexpected CSV header {headers:?}")));
        }
        let mut out = Vec::new();
        for row in rd.records() {
            let row = row.map_err(map)?;
            let num = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| Error::Report(format!("bad number `{}` in column {}", &row[i], CSV_COLUMNS[i])))
            };
            let alignment = if row[9].is_empty() || row[10].is_empty() {
                None
            } else {
                Some(Alignment { pearson: num(9)?, psnr_db: num(10)? })
            };
            out.push(EvaluationRecord {
                subject_id: row[0].to_string(),
                be_method: row[1].to_string(),
                dice: RegionScores::from([num(2)?, num(3)?, num(4)?]),
                hd95: RegionScores::from([num(5)?, num(6)?, num(7)?]),
                wall_time_s: num(8)?,
                alignment,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median_avg_dice: f64,
    pub median_avg_hd95: f64,
    pub count: usize,
}
