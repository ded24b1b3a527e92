use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::signnet::{AttributeVector, ATTRIBUTE_COUNT, ATTRIBUTE_NAMES};

/// Header of a manifest file, in order.
pub const MANIFEST_COLUMNS: [&str; 13] = [
    "image_path",
    "mask_path",
    "subject_id",
    "pale",
    "tipsidered",
    "redspot",
    "ecchymosis",
    "crack",
    "toothmark",
    "furthick",
    "furyellow",
    "age",
    "gender",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "female" => Some(Self::Female),
            "m" | "male" => Some(Self::Male),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Female => "female",
            Self::Male => "male",
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: String,
    pub mask_path: Option<String>,
    pub subject_id: String,
    pub attrs: AttributeVector,
    pub age: Option<f64>,
    pub gender: Option<Gender>,
}

fn csv_err(e: csv::Error) -> DataError {
    DataError::Csv(e.to_string())
}

/// Parses manifest text. Rows are numbered from 1 after the header.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<SampleRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = MANIFEST_COLUMNS.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let image_path = field(0).to_string();
        if image_path.is_empty() {
            return Err(DataError::BadField {
                row,
                column: "image_path".into(),
                value: String::new(),
            });
        }
        if !seen.insert(image_path.clone()) {
            return Err(DataError::DuplicatePath { row, path: image_path });
        }
        let subject_id = field(2).to_string();
        if subject_id.is_empty() {
            return Err(DataError::BadField {
                row,
                column: "subject_id".into(),
                value: String::new(),
            });
        }
        let mut bits = [false; ATTRIBUTE_COUNT];
        for (j, b) in bits.iter_mut().enumerate() {
            *b = match field(3 + j) {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DataError::BadBit {
                        row,
                        column: ATTRIBUTE_NAMES[j].to_string(),
                        value: other.to_string(),
                    })
                }
            };
        }
        let age = match field(11) {
            "" => None,
            s => Some(s.parse::<f64>().ok().filter(|a| *a >= 0.0).ok_or_else(|| DataError::BadField {
                row,
                column: "age".into(),
                value: s.to_string(),
            })?),
        };
        let gender = match field(12) {
            "" => None,
            s => Some(Gender::parse(s).ok_or_else(|| DataError::BadField {
                row,
                column: "gender".into(),
                value: s.to_string(),
            })?),
        };
        let mask_path = Some(field(1).to_string()).filter(|s| !s.is_empty());
        out.push(SampleRecord {
            image_path,
            mask_path,
            subject_id,
            attrs: AttributeVector(bits),
            age,
            gender,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>, DataError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_manifest(f)
}

pub fn write_manifest<W: Write>(writer: W, records: &[SampleRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_COLUMNS).map_err(csv_err)?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.image_path.clone(),
            r.mask_path.clone().unwrap_or_default(),
            r.subject_id.clone(),
        ];
        row.extend(r.attrs.bits().iter().map(|&b| (b as u8).to_string()));
        row.push(r.age.map(|a| a.to_string()).unwrap_or_default());
        row.push(r.gender.map(|g| g.as_str().to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<manifest>".into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "image_path,mask_path,subject_id,pale,tipsidered,redspot,ecchymosis,crack,toothmark,furthick,furyellow,age,gender\n";

    #[test]
    fn two_rows_in_order() {
        let text = format!("{HEADER}a.png,a_m.png,s1,1,0,0,0,1,0,0,0,41,F\nb.png,,s2,0,0,0,0,0,0,1,1,,\n");
        let r = read_manifest(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].image_path, "a.png");
        assert_eq!(r[0].attrs.mask(), 0b1_0001);
        assert_eq!(r[0].gender, Some(Gender::Female));
        assert_eq!(r[1].mask_path, None);
        assert_eq!(r[1].age, None);

        let mut buf = Vec::new();
        write_manifest(&mut buf, &r).unwrap();
        assert_eq!(read_manifest(&buf[..]).unwrap(), r);
    }

    #[test]
    fn validation_errors() {
        let text = format!("{HEADER}a.png,,s1,1,0,2,0,1,0,0,0,,\n");
        match read_manifest(text.as_bytes()) {
            Err(DataError::BadBit { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "redspot", "2"));
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{HEADER}a.png,,s1,1,0,0,0,1,0,0,0,,\na.png,,s2,1,0,0,0,1,0,0,0,,\n");
        assert!(matches!(read_manifest(text.as_bytes()), Err(DataError::DuplicatePath { row: 2, .. })));
        let text = "image_path,subject_id\n";
        assert!(matches!(read_manifest(text.as_bytes()), Err(DataError::MissingColumn(c)) if c == "mask_path"));
    }
}
