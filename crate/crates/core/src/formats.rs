//! On-disk formats: prediction files, the named-tensor checkpoint
//! container, and metric tables (CSV and aligned text).
//!
//! Prediction file (header fields separated by tabs, shown here as `⇥`):
//!
//! ```text
//! #gradkit-predictions v1⇥run_id=dgrad-s3⇥variant=dgrad⇥seed=3⇥fold=0⇥classes=10⇥members=-
//! 4 1.2345678901234567e-3 ...
//! ```
//!
//! One line per sample: the label, then the class probabilities with 17
//! significant digits, which round-trips every `f64` exactly.
//!
//! Checkpoint container (little endian):
//!
//! ```text
//! b"GRADKIT-CKPT" | u32 version | u32 entries |
//!   { u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)] }*
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ensemble::{EvalReport, PredictionMeta, PredictionSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PRED_MAGIC: &str = "#gradkit-predictions";
const PRED_VERSION: &str = "v1";

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"GRADKIT-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Run ids and variant names end up as whitespace/tab separated tokens.
pub fn validate_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',' || c == '=') {
        return Err(Error::Config(format!(
            "{kind} `{s}` must be non-empty without whitespace, `,` or `=`"
        )));
    }
    Ok(())
}

pub fn encode_predictions(p: &PredictionSet) -> Result<String> {
    validate_token("run id", &p.meta.run_id)?;
    validate_token("variant", &p.meta.variant)?;
    let fold = p
        .meta
        .fold
        .map_or_else(|| "-".to_string(), |f| f.to_string());
    let members = if p.meta.members.is_empty() {
        "-".to_string()
    } else {
        for m in &p.meta.members {
            validate_token("member id", m)?;
        }
        p.meta.members.join(",")
    };
    let mut out = format!(
        "{PRED_MAGIC} {PRED_VERSION}\trun_id={}\tvariant={}\tseed={}\tfold={fold}\tclasses={}\tmembers={members}\n",
        p.meta.run_id,
        p.meta.variant,
        p.meta.seed,
        p.class_count()
    );
    for (row, label) in p.rows().zip(p.labels()) {
        write!(out, "{label}").unwrap();
        for v in row {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_predictions(text: &str, origin: &Path) -> Result<PredictionSet> {
    let err = |msg: String| Error::parse(origin, msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err("empty file".into()))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(&format!("{PRED_MAGIC} {PRED_VERSION}")) {
        return Err(err(format!("missing `{PRED_MAGIC} {PRED_VERSION}` header")));
    }
    let mut meta = PredictionMeta::default();
    let mut classes = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{field}`")))?;
        let bad = || err(format!("bad value for `{key}`: `{value}`"));
        match key {
            "run_id" => meta.run_id = value.to_string(),
            "variant" => meta.variant = value.to_string(),
            "seed" => meta.seed = value.parse().map_err(|_| bad())?,
            "fold" => {
                meta.fold = match value {
                    "-" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "classes" => classes = Some(value.parse::<usize>().map_err(|_| bad())?),
            "members" => {
                meta.members = match value {
                    "-" => Vec::new(),
                    v => v.split(',').map(str::to_string).collect(),
                }
            }
            _ => return Err(err(format!("unknown header field `{key}`"))),
        }
    }
    let classes = classes.ok_or_else(|| err("header lacks `classes`".into()))?;
    if meta.run_id.is_empty() {
        return Err(err("header lacks `run_id`".into()));
    }
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let mut tokens = line.split(' ');
        let label = tokens
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| err(format!("line {lineno}: bad label")))?;
        let row = tokens
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(format!("line {lineno}: bad probability")))?;
        if row.len() != classes {
            return Err(err(format!(
                "line {lineno}: {} probabilities, expected {classes}",
                row.len()
            )));
        }
        labels.push(label);
        probs.extend(row);
    }
    if labels.is_empty() {
        return Ok(PredictionSet::empty(meta, classes));
    }
    PredictionSet::new(meta, classes, probs, labels).map_err(|e| err(e.to_string()))
}

pub fn write_predictions(path: &Path, p: &PredictionSet) -> Result<()> {
    fs::write(path, encode_predictions(p)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_predictions(&text, path)
}

pub fn encode_checkpoint(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Vec<(String, Tensor)>> {
    let truncated = || Error::parse(origin, "truncated checkpoint");
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len()) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::parse(origin, "not a gradkit checkpoint"));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = r.u32().ok_or_else(truncated)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| Error::parse(origin, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32().ok_or_else(truncated)? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::parse(origin, format!("`{name}` is too large")))?;
        let raw = r
            .take(n.checked_mul(8).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor =
            Tensor::new(data, shape).map_err(|e| Error::parse(origin, format!("`{name}`: {e}")))?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(origin, "trailing bytes after checkpoint"));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_checkpoint(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// One line of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub members: usize,
    /// Fold index, or `pooled`.
    pub fold: String,
    pub accuracy: f64,
    pub f_measure: f64,
}

impl MetricRow {
    /// Pooled row followed by one row per fold.
    pub fn from_report(method: &str, report: &EvalReport) -> Vec<MetricRow> {
        let mut rows = vec![MetricRow {
            method: method.to_string(),
            members: report.members,
            fold: "pooled".into(),
            accuracy: report.accuracy,
            f_measure: report.f_measure,
        }];
        rows.extend(report.per_fold.iter().map(|f| MetricRow {
            method: method.to_string(),
            members: report.members,
            fold: f.fold.to_string(),
            accuracy: f.accuracy,
            f_measure: f.f_measure,
        }));
        rows
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("method,members,fold,accuracy,f_measure\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            csv_field(&r.method),
            r.members,
            r.fold,
            r.accuracy,
            r.f_measure
        )
        .unwrap();
    }
    out
}

/// Pooled rows only, percentages, aligned.
pub fn metrics_table(rows: &[MetricRow]) -> String {
    let pooled: Vec<&MetricRow> = rows.iter().filter(|r| r.fold == "pooled").collect();
    let width = pooled
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>8}  {:>9}\n",
        "method", "members", "accuracy", "f-measure"
    );
    for r in pooled {
        writeln!(
            out,
            "{:<width$}  {:>7}  {:>8.2}  {:>9.2}",
            r.method,
            r.members,
            100.0 * r.accuracy,
            100.0 * r.f_measure
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> PredictionSet {
        let meta = PredictionMeta {
            run_id: "dgrad-s3".into(),
            variant: "dgrad".into(),
            seed: 3,
            fold: Some(2),
            members: vec![],
        };
        PredictionSet::new(
            meta,
            3,
            vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![2, 0],
        )
        .unwrap()
    }

    #[test]
    fn prediction_file_layout() {
        let text = encode_predictions(&sample_set()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "#gradkit-predictions v1\trun_id=dgrad-s3\tvariant=dgrad\tseed=3\tfold=2\tclasses=3\tmembers=-"
        );
        assert_eq!(
            lines.next().unwrap(),
            "2 1.0000000000000001e-1 2.0000000000000001e-1 6.9999999999999996e-1"
        );
    }

    #[test]
    fn prediction_round_trip_with_members() {
        let mut p = sample_set();
        p.meta.members = vec!["a-s1".into(), "b-s2".into()];
        p.meta.fold = None;
        let back = decode_predictions(&encode_predictions(&p).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn prediction_errors() {
        let p = Path::new("bad.pred");
        assert!(decode_predictions("", p).is_err());
        assert!(decode_predictions("hello\n", p).is_err());
        let header =
            "#gradkit-predictions v1\trun_id=a\tvariant=b\tseed=1\tfold=0\tclasses=2\tmembers=-\n";
        assert!(decode_predictions(&format!("{header}0 0.5\n"), p).is_err());
        assert!(decode_predictions(&format!("{header}0 0.5 0.6\n"), p).is_err());
        let ok = decode_predictions(&format!("{header}1 0.5 0.5\n"), p).unwrap();
        assert_eq!(ok.labels(), &[1]);
        let e = decode_predictions(&format!("{header}x 0.5 0.5\n"), p).unwrap_err();
        assert!(e.to_string().contains("bad.pred"), "{e}");
        let mut s = sample_set();
        s.meta.run_id = "has space".into();
        assert!(encode_predictions(&s).is_err());
    }

    #[test]
    fn checkpoint_layout_and_errors() {
        let entries = vec![
            (
                "w".to_string(),
                Tensor::new(vec![1.0, -2.5, 3.0, 0.0], vec![2, 2]).unwrap(),
            ),
            ("t".to_string(), Tensor::from_vec(vec![7.0])),
        ];
        let bytes = encode_checkpoint(&entries);
        assert_eq!(&bytes[..12], b"GRADKIT-CKPT");
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(
            bytes.len(),
            12 + 4 + 4 + (4 + 1 + 4 + 16 + 32) + (4 + 1 + 4 + 8 + 8)
        );
        let o = Path::new("c");
        assert_eq!(decode_checkpoint(&bytes, o).unwrap(), entries);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], o).is_err());
        assert!(decode_checkpoint(b"NOTACHECKPOINT", o).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, o).is_err());
    }

    #[test]
    fn csv_and_table() {
        let rows = vec![
            MetricRow {
                method: "SGD(7)+DGrad(7)".into(),
                members: 14,
                fold: "pooled".into(),
                accuracy: 0.96123,
                f_measure: 0.9599,
            },
            MetricRow {
                method: "a,b".into(),
                members: 1,
                fold: "0".into(),
                accuracy: 1.0,
                f_measure: 1.0,
            },
        ];
        let csv = metrics_csv(&rows);
        assert_eq!(
            csv,
            "method,members,fold,accuracy,f_measure\nSGD(7)+DGrad(7),14,pooled,0.961230,0.959900\n\"a,b\",1,0,1.000000,1.000000\n"
        );
        let table = metrics_table(&rows);
        assert!(
            table.contains("SGD(7)+DGrad(7)       14     96.12      95.99"),
            "{table}"
        );
        assert_eq!(table.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn probabilities_round_trip_bitwise(raw in prop::collection::vec(1e-12f64..1.0, 2..8)) {
            let sum: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let meta = PredictionMeta { run_id: "r".into(), variant: "v".into(), ..Default::default() };
            let p = PredictionSet::new(meta, row.len(), row.clone(), vec![0]).unwrap();
            let back = decode_predictions(&encode_predictions(&p).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(back.probs(), p.probs());
        }

        #[test]
        fn checkpoint_round_trip(data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let n = data.len();
            let entries = vec![("x".to_string(), Tensor::new(data, vec![n]).unwrap())];
            let back = decode_checkpoint(&encode_checkpoint(&entries), Path::new("c")).unwrap();
            prop_assert_eq!(back, entries);
        }
    }
}
