//! CSV interchange. One row per flow: the feature columns in schema order,
//! then `label`, `flow_hash`, `provenance`, and the six-tuple needed to
//! rebuild the flow identity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use super::{Dataset, DatasetError, LabeledFlow, Provenance};
use crate::meter::{feature_names, Endpoint, FeatureVector, FlowId, FlowKey};

const TRAILER: [&str; 9] = [
    "label",
    "flow_hash",
    "provenance",
    "ip_a",
    "port_a",
    "ip_b",
    "port_b",
    "protocol",
    "start_us",
];

pub fn csv_header() -> Vec<String> {
    let mut h = feature_names();
    h.extend(TRAILER.iter().map(|s| s.to_string()));
    h
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    write_csv_to(ds, &mut w)?;
    w.flush().map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_csv_to<W: Write>(ds: &Dataset, out: W) -> Result<(), DatasetError> {
    if ds.feature_schema != feature_names() {
        return Err(DatasetError::SchemaMismatch(
            "dataset has a non-standard feature schema".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    let prov = ds.provenance.to_string();
    for f in &ds.flows {
        let mut row: Vec<String> = f
            .features
            .to_values()
            .iter()
            .map(|v| v.to_string())
            .collect();
        let k = &f.id.key;
        row.extend([
            f.label.clone(),
            f.id.hash64.to_string(),
            prov.clone(),
            k.a.ip.to_string(),
            k.a.port.to_string(),
            k.b.ip.to_string(),
            k.b.port.to_string(),
            k.protocol.to_string(),
            f.id.start_us.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a dataset written by [`write_csv`].
///
/// A header-only file has no row to carry its provenance and reads back as an
/// empty complete-flow dataset.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv_from(BufReader::new(file))
}

pub fn read_csv_from<R: Read>(input: R) -> Result<Dataset, DatasetError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = csv_header();
    if header != expected {
        return Err(DatasetError::SchemaMismatch(format!(
            "header has {} columns, expected the {} standard columns in order",
            header.len(),
            expected.len()
        )));
    }
    let nf = expected.len() - TRAILER.len();
    let mut provenance: Option<Provenance> = None;
    let mut flows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| DatasetError::SchemaMismatch(format!("row {line}: {what}"));
        let values = (0..nf)
            .map(|j| {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("column {} is not a number", expected[j])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let features = FeatureVector::from_values(&values).map_err(|e| bad(&e))?;
        let label = rec[nf].to_string();
        if label.is_empty() {
            return Err(bad("empty label"));
        }
        let hash: u64 = rec[nf + 1].parse().map_err(|_| bad("bad flow_hash"))?;
        let p: Provenance = rec[nf + 2].parse().map_err(|e: String| bad(&e))?;
        match provenance {
            None => provenance = Some(p),
            Some(q) if q != p => return Err(bad("mixed provenance")),
            _ => {}
        }
        let ip = |j: usize| {
            rec[nf + j]
                .parse::<IpAddr>()
                .map_err(|_| bad(&format!("bad {}", TRAILER[j])))
        };
        let port = |j: usize| {
            rec[nf + j]
                .parse::<u16>()
                .map_err(|_| bad(&format!("bad {}", TRAILER[j])))
        };
        let a = Endpoint::new(ip(3)?, port(4)?);
        let b = Endpoint::new(ip(5)?, port(6)?);
        let protocol: u8 = rec[nf + 7].parse().map_err(|_| bad("bad protocol"))?;
        let start_us: i64 = rec[nf + 8].parse().map_err(|_| bad("bad start_us"))?;
        let id = FlowId::new(FlowKey::new(a, b, protocol), start_us);
        if id.hash64 != hash {
            return Err(bad("flow_hash does not match the six-tuple"));
        }
        flows.push(LabeledFlow {
            id,
            features,
            label,
        });
    }
    let ds = Dataset::new(provenance.unwrap_or(Provenance::Complete), flows);
    ds.validate()?;
    Ok(ds)
}
