//! Flat CSV export of a federation.
//!
//! ```text
//! # fedmcsa-federation v1 name=<name> classes=<C> width=<d>
//! client_id,split,label,f0,f1,...,f{d-1}
//! 0,train,3,0.125,-1.5,...
//! ```
//!
//! `split` is `train` or `test`. Floats are written in shortest round-trip
//! form, so an import reproduces the data bit for bit. Labelling models are
//! not exported.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ClientDataset, FederationData};
use crate::error::{Error, Result};
use crate::nn::Matrix;

const MAGIC: &str = "# fedmcsa-federation v1";

pub fn write_federation_csv(path: impl AsRef<Path>, data: &FederationData) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        out,
        "{MAGIC} name={} classes={} width={}",
        data.name, data.classes, data.feature_width
    )
    .map_err(io)?;
    let mut header = String::from("client_id,split,label");
    for j in 0..data.feature_width {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for c in &data.clients {
        for (split, x, y) in [("train", &c.train_x, &c.train_y), ("test", &c.test_x, &c.test_y)] {
            for (row, label) in x.iter_rows().zip(y) {
                write!(out, "{},{split},{label}", c.id).map_err(io)?;
                for v in row {
                    write!(out, ",{v}").map_err(io)?;
                }
                writeln!(out).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

#[derive(Default)]
struct PartialClient {
    train: (Vec<f64>, Vec<usize>),
    test: (Vec<f64>, Vec<usize>),
}

pub fn read_federation_csv(path: impl AsRef<Path>) -> Result<FederationData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut offset = 0u64;
    let err = |offset: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message: msg,
    };

    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| err(0, "empty federation file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let meta = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| err(0, "missing federation header".into()))?;
    let mut name = String::new();
    let mut classes = None;
    let mut width = None;
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("name", v)) => name = v.to_string(),
            Some(("classes", v)) => classes = v.parse::<usize>().ok(),
            Some(("width", v)) => width = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (classes, width) = match (classes, width) {
        (Some(c), Some(w)) if c > 0 && w > 0 => (c, w),
        _ => return Err(err(0, "header lacks classes/width".into())),
    };
    offset += first.len() as u64 + 1;

    let header = lines
        .next()
        .ok_or_else(|| err(offset, "missing column header".into()))?
        .map_err(|e| Error::io(path, e))?;
    if header.split(',').count() != width + 3 {
        return Err(err(offset, format!("expected {} columns", width + 3)));
    }
    offset += header.len() as u64 + 1;

    let mut clients: BTreeMap<usize, PartialClient> = BTreeMap::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            offset += line.len() as u64 + 1;
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| err(offset, format!("missing {what}")))
        };
        let id: usize = next("client_id")?
            .parse()
            .map_err(|_| err(offset, "bad client_id".into()))?;
        let split = next("split")?.to_string();
        let label: usize = next("label")?
            .parse()
            .map_err(|_| err(offset, "bad label".into()))?;
        let entry = clients.entry(id).or_default();
        let target = match split.as_str() {
            "train" => &mut entry.train,
            "test" => &mut entry.test,
            other => return Err(err(offset, format!("unknown split `{other}`"))),
        };
        let before = target.0.len();
        for f in fields {
            target.0.push(
                f.parse()
                    .map_err(|_| err(offset, format!("bad feature `{f}`")))?,
            );
        }
        if target.0.len() - before != width {
            return Err(err(offset, format!("expected {width} features")));
        }
        target.1.push(label);
        offset += line.len() as u64 + 1;
    }

    let mut out = Vec::with_capacity(clients.len());
    for (id, c) in clients {
        let (train_x, train_y) = c.train;
        let (test_x, test_y) = c.test;
        let mut cls = train_y.clone();
        cls.sort_unstable();
        cls.dedup();
        out.push(ClientDataset {
            id,
            train_x: Matrix::new(train_y.len(), width, train_x)?,
            train_y,
            test_x: Matrix::new(test_y.len(), width, test_x)?,
            test_y,
            classes: cls,
            ground_truth: None,
        });
    }
    FederationData::new(name, width, classes, out)
}
