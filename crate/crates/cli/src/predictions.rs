//! Predictions CSV: `image_path`, one 0/1 column per attribute, then an
//! optional `<attribute>_score` probability column per attribute.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use tongue_core::signnet::{ATTRIBUTE_COUNT, ATTRIBUTE_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub image_path: String,
    pub bits: [bool; ATTRIBUTE_COUNT],
    pub scores: Option<[f64; ATTRIBUTE_COUNT]>,
}

pub fn write_predictions<W: Write>(w: W, rows: &[PredictionRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let with_scores = rows.iter().all(|r| r.scores.is_some());
    let mut header = vec!["image_path".to_string()];
    header.extend(ATTRIBUTE_NAMES.iter().map(|n| n.to_string()));
    if with_scores {
        header.extend(ATTRIBUTE_NAMES.iter().map(|n| format!("{n}_score")));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.image_path.clone()];
        rec.extend(r.bits.iter().map(|&b| u8::from(b).to_string()));
        if let (true, Some(s)) = (with_scores, r.scores) {
            rec.extend(s.iter().map(|v| v.to_string()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let ctx = || format!("predictions {}", path.display());
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(ctx)?;
    let headers = rdr.headers().with_context(ctx)?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let path_col = find("image_path").ok_or_else(|| anyhow!("{}: missing column image_path", ctx()))?;
    let bit_cols = ATTRIBUTE_NAMES
        .iter()
        .map(|n| find(n).ok_or_else(|| anyhow!("{}: missing column {n}", ctx())))
        .collect::<Result<Vec<_>>>()?;
    let score_cols: Vec<Option<usize>> = ATTRIBUTE_NAMES.iter().map(|n| find(&format!("{n}_score"))).collect();
    let has_scores = score_cols.iter().all(Option::is_some);

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.with_context(ctx)?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let mut bits = [false; ATTRIBUTE_COUNT];
        for (k, &c) in bit_cols.iter().enumerate() {
            bits[k] = match field(c) {
                "0" => false,
                "1" => true,
                v => bail!("{}: row {row}, column {}: {v:?} is not 0 or 1", ctx(), ATTRIBUTE_NAMES[k]),
            };
        }
        let scores = if has_scores {
            let mut s = [0.0; ATTRIBUTE_COUNT];
            for (k, c) in score_cols.iter().enumerate() {
                let v = field(c.unwrap_or_default());
                s[k] = v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| anyhow!("{}: row {row}, column {}_score: invalid score {v:?}", ctx(), ATTRIBUTE_NAMES[k]))?;
            }
            Some(s)
        } else {
            None
        };
        rows.push(PredictionRow {
            image_path: field(path_col).to_string(),
            bits,
            scores,
        });
    }
    Ok(rows)
}
