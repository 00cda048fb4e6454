//! CSV serialization of the synthetic datasets, one row per pixel or example.

use std::io::{Read, Write};

use super::seg::SegImage;
use super::storage::StorageExample;
use crate::error::{Error, Result};

fn parse_field(record: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    record
        .get(i)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Parse { line, message: format!("bad numeric field {i}") })
}

/// Columns `image, x0..x{D-1}, label`.
pub fn write_seg_csv<W: Write>(images: &[SegImage], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = images.first().map_or(0, |im| im.dim);
    let mut header = vec!["image".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    header.push("label".into());
    w.write_record(&header)?;
    for (i, im) in images.iter().enumerate() {
        for j in 0..im.pixels() {
            let mut row = vec![i.to_string()];
            row.extend(im.pixel(j).iter().map(f64::to_string));
            row.push(u8::from(im.labels[j]).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_seg_csv<R: Read>(reader: R) -> Result<Vec<SegImage>> {
    let mut r = csv::Reader::from_reader(reader);
    let dim = r.headers()?.len().checked_sub(2).ok_or(Error::Parse { line: 1, message: "too few columns".into() })?;
    let mut images: Vec<SegImage> = Vec::new();
    let mut current: Option<String> = None;
    for (n, record) in r.records().enumerate() {
        let record = record?;
        let line = n + 2;
        let id = record.get(0).unwrap_or_default().to_string();
        if current.as_ref() != Some(&id) {
            images.push(SegImage { features: Vec::new(), labels: Vec::new(), dim });
            current = Some(id);
        }
        let im = images.last_mut().unwrap();
        for k in 0..dim {
            im.features.push(parse_field(&record, k + 1, line)?);
        }
        im.labels.push(parse_field(&record, dim + 1, line)? != 0.0);
    }
    Ok(images)
}

/// Columns `x0..x{D-1}, price`.
pub fn write_storage_csv<W: Write>(examples: &[StorageExample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = examples.first().map_or(0, |e| e.features.len());
    let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    header.push("price".into());
    w.write_record(&header)?;
    for e in examples {
        let mut row: Vec<String> = e.features.iter().map(f64::to_string).collect();
        row.push(e.price.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_storage_csv<R: Read>(reader: R) -> Result<Vec<StorageExample>> {
    let mut r = csv::Reader::from_reader(reader);
    let dim = r.headers()?.len().checked_sub(1).ok_or(Error::Parse { line: 1, message: "no columns".into() })?;
    r.records()
        .enumerate()
        .map(|(n, record)| {
            let record = record?;
            let features = (0..dim).map(|k| parse_field(&record, k, n + 2)).collect::<Result<_>>()?;
            Ok(StorageExample { features, price: parse_field(&record, dim, n + 2)? })
        })
        .collect()
}
