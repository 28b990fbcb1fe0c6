use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 10] = [
    "slide_id",
    "patient_id",
    "image_path",
    "idh",
    "codel",
    "grade",
    "os_days",
    "event",
    "sex",
    "age",
];

const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Idh {
    Wildtype,
    Mutant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Codel {
    NonCodeleted,
    Codeleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    II,
    III,
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::II => "II",
            Grade::III => "III",
            Grade::IV => "IV",
        })
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "II" => Ok(Grade::II),
            "III" => Ok(Grade::III),
            "IV" => Ok(Grade::IV),
            _ => Err(format!("grade must be II, III or IV, got `{s}`")),
        }
    }
}

/// One slide and its patient-level annotations. Positive classes are
/// `Mutant` and `Codeleted` (label 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub image_path: String,
    pub idh: Option<Idh>,
    pub codel: Option<Codel>,
    pub grade: Grade,
    pub os_days: Option<f64>,
    /// 1 = death observed, 0 = censored.
    pub event: Option<u8>,
    pub sex: Option<Sex>,
    pub age_years: Option<f64>,
}

impl SlideRecord {
    /// `image_path` resolved against the manifest's directory when relative.
    pub fn resolve_image(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }

    fn fields(&self) -> [String; 10] {
        fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
            v.map_or_else(|| NA.to_string(), f)
        }
        [
            self.slide_id.clone(),
            self.patient_id.clone(),
            self.image_path.clone(),
            opt(self.idh, |v| u8::from(v == Idh::Mutant).to_string()),
            opt(self.codel, |v| u8::from(v == Codel::Codeleted).to_string()),
            self.grade.to_string(),
            opt(self.os_days, |v| v.to_string()),
            opt(self.event, |v| v.to_string()),
            opt(self.sex, |v| if v == Sex::M { "M" } else { "F" }.to_string()),
            opt(self.age_years, |v| v.to_string()),
        ]
    }
}

struct RowParser<'a> {
    row: usize,
    record: &'a csv::StringRecord,
}

impl RowParser<'_> {
    fn raw(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("").trim()
    }

    fn err(&self, idx: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            row: self.row,
            field: MANIFEST_HEADER[idx].to_string(),
            message: message.into(),
        }
    }

    fn optional<T>(&self, idx: usize, parse: impl Fn(&str) -> Option<T>, expected: &str) -> Result<Option<T>> {
        match self.raw(idx) {
            NA => Ok(None),
            s => parse(s)
                .map(Some)
                .ok_or_else(|| self.err(idx, format!("expected {expected} or NA, got `{s}`"))),
        }
    }

    fn binary(&self, idx: usize) -> Result<Option<u8>> {
        self.optional(
            idx,
            |s| match s {
                "0" => Some(0),
                "1" => Some(1),
                _ => None,
            },
            "0, 1",
        )
    }

    fn nonnegative(&self, idx: usize) -> Result<Option<f64>> {
        self.optional(
            idx,
            |s| s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0),
            "a nonnegative number",
        )
    }
}

fn parse_row(row: usize, record: &csv::StringRecord) -> Result<SlideRecord> {
    if record.len() != MANIFEST_HEADER.len() {
        return Err(Error::Manifest {
            row,
            message: format!("expected {} fields, found {}", MANIFEST_HEADER.len(), record.len()),
        });
    }
    let p = RowParser { row, record };
    let slide_id = p.raw(0).to_string();
    if slide_id.is_empty() || slide_id == NA {
        return Err(Error::Manifest {
            row,
            message: "missing slide_id".into(),
        });
    }
    let idh = p.binary(3)?.map(|v| if v == 1 { Idh::Mutant } else { Idh::Wildtype });
    let codel = p.binary(4)?.map(|v| if v == 1 { Codel::Codeleted } else { Codel::NonCodeleted });
    if codel.is_some() && idh != Some(Idh::Mutant) {
        return Err(Error::Taxonomy { row });
    }
    let grade = p.raw(5).parse::<Grade>().map_err(|m| p.err(5, m))?;
    let os_days = p.nonnegative(6)?;
    let event = p.binary(7)?;
    if event == Some(1) && os_days.is_none() {
        return Err(p.err(6, "an observed event needs os_days"));
    }
    let sex = p.optional(
        8,
        |s| match s {
            "M" => Some(Sex::M),
            "F" => Some(Sex::F),
            _ => None,
        },
        "M, F",
    )?;
    Ok(SlideRecord {
        slide_id,
        patient_id: p.raw(1).to_string(),
        image_path: p.raw(2).to_string(),
        idh,
        codel,
        grade,
        os_days,
        event,
        sex,
        age_years: p.nonnegative(9)?,
    })
}

/// Reads a manifest CSV. Row numbers in errors are file line numbers, so the
/// first data row is row 2.
pub fn load_manifest(path: &Path) -> Result<Vec<SlideRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub(crate) fn read_manifest(reader: impl std::io::Read) -> Result<Vec<SlideRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Manifest {
                row: 1,
                message: "missing header".into(),
            })
        }
    };
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != MANIFEST_HEADER {
        return Err(Error::Manifest {
            row: 1,
            message: format!("header must be `{}`, found `{}`", MANIFEST_HEADER.join(","), found.join(",")),
        });
    }
    let mut seen = std::collections::HashMap::new();
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let row = i + 2;
        let rec = parse_row(row, &rec?)?;
        if let Some(first) = seen.insert(rec.slide_id.clone(), row) {
            return Err(Error::Manifest {
                row,
                message: format!("duplicate slide_id `{}` (first seen at row {first})", rec.slide_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[SlideRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
