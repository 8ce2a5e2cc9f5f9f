//! Comma-separated stimulus/voxel tables.
//!
//! The header is `label,px0,…,px{P-1},vox0,…,vox{V-1}`; `P` must be a
//! square pixel count and `V` is read from the header. Each following row is
//! one sample.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::dataset::{Provenance, VoxelDataset, VoxelSample};
use crate::error::{Error, Result};
use crate::image::Image;

/// Renders a dataset; numbers use the shortest text that reads back exactly.
pub fn fmri_csv_string(dataset: &VoxelDataset) -> String {
    let first = &dataset.samples()[0];
    let pixels = first.image.pixels().len();
    let mut out = String::from("label");
    for p in 0..pixels {
        write!(out, ",px{p}").expect("write to String");
    }
    for v in 0..dataset.voxel_count() {
        write!(out, ",vox{v}").expect("write to String");
    }
    out.push('\n');
    for s in dataset.samples() {
        write!(out, "{}", s.label).expect("write to String");
        for x in s.image.pixels().iter().chain(&s.voxels) {
            write!(out, ",{x}").expect("write to String");
        }
        out.push('\n');
    }
    out
}

pub fn write_fmri_csv(path: impl AsRef<Path>, dataset: &VoxelDataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, fmri_csv_string(dataset)).map_err(|e| Error::io(path, e))
}

fn header_layout(header: &str, source: &str) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::format(source, "row 1 (header)", msg);
    let mut cols = header.trim_end_matches('\r').split(',');
    if cols.next() != Some("label") {
        return Err(bad("first column must be `label`".into()));
    }
    let (mut pixels, mut voxels) = (0usize, 0usize);
    for col in cols {
        if voxels == 0 && col == format!("px{pixels}") {
            pixels += 1;
        } else if col == format!("vox{voxels}") {
            voxels += 1;
        } else {
            return Err(bad(format!("unexpected column `{col}`")));
        }
    }
    let side = (pixels as f64).sqrt().round() as usize;
    if pixels == 0 || side * side != pixels {
        return Err(bad(format!("{pixels} pixel columns do not form a square image")));
    }
    if voxels == 0 {
        return Err(bad("no voxel columns declared".into()));
    }
    Ok((side, voxels))
}

/// Parses CSV text; the result has provenance [`Provenance::Real`].
pub fn parse_fmri_csv(text: &str, source: &str) -> Result<VoxelDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(source, "row 1", "file is empty"))?;
    let (side, voxel_count) = header_layout(header, source)?;
    let pixels = side * side;
    let width = 1 + pixels + voxel_count;

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let row = format!("row {}", idx + 1);
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != width {
            return Err(Error::format(
                source,
                row,
                format!("{} fields, header declares {width}", fields.len()),
            ));
        }
        let label: u8 = fields[0]
            .trim()
            .parse()
            .ok()
            .filter(|&l| l <= 9)
            .ok_or_else(|| Error::format(source, &row, format!("label `{}` not in 0..9", fields[0])))?;
        let mut values = Vec::with_capacity(width - 1);
        for (col, field) in fields[1..].iter().enumerate() {
            let v: f32 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f32| v.is_finite())
                .ok_or_else(|| {
                    Error::format(source, &row, format!("column {}: `{field}` is not a finite number", col + 2))
                })?;
            values.push(v);
        }
        let voxels = values.split_off(pixels);
        samples.push(VoxelSample {
            image: Image::new(side, side, values)?,
            voxels,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::format(source, "row 2", "no sample rows"));
    }
    VoxelDataset::new(samples, Provenance::Real)
}

pub fn load_fmri_csv(path: impl AsRef<Path>) -> Result<VoxelDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fmri_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> VoxelDataset {
        let samples = (0..3)
            .map(|i| VoxelSample {
                image: Image::new(2, 2, vec![0.0, 0.25, 1.0 / 3.0, i as f32 / 7.0]).unwrap(),
                voxels: vec![-1.5, 1e-7 * i as f32, 0.1, 12345.678],
                label: if i == 1 { 9 } else { 6 },
            })
            .collect();
        VoxelDataset::new(samples, Provenance::Real).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = dataset();
        let text = fmri_csv_string(&ds);
        assert!(text.starts_with("label,px0,px1,px2,px3,vox0,vox1,vox2,vox3\n"));
        assert_eq!(parse_fmri_csv(&text, "mem").unwrap(), ds);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_fmri_csv(&path, &dataset()).unwrap();
        assert_eq!(load_fmri_csv(&path).unwrap(), dataset());
    }

    #[test]
    fn empty_file_is_a_format_error() {
        assert!(matches!(parse_fmri_csv("", "e"), Err(Error::Format { .. })));
        assert!(matches!(parse_fmri_csv("label,px0,vox0\n", "e"), Err(Error::Format { .. })));
    }

    #[test]
    fn errors_name_the_row() {
        let good = fmri_csv_string(&dataset());
        let mut lines: Vec<String> = good.lines().map(String::from).collect();

        let mut short = lines.clone();
        short[2].push_str(",3");
        let msg = parse_fmri_csv(&short.join("\n"), "s").unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("fields"), "{msg}");

        lines[3] = lines[3].replacen("6,", "12,", 1);
        let msg = parse_fmri_csv(&lines.join("\n"), "s").unwrap_err().to_string();
        assert!(msg.contains("row 4") && msg.contains("label"), "{msg}");

        let mut nan = fmri_csv_string(&dataset());
        nan = nan.replacen("12345.678", "abc", 1);
        let msg = parse_fmri_csv(&nan, "s").unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("column 9"), "{msg}");
    }

    #[test]
    fn header_declares_voxel_count() {
        let err = parse_fmri_csv("label,px0,px1,vox0\n1,0,0,0\n", "h").unwrap_err();
        assert!(err.to_string().contains("square"));
        assert!(parse_fmri_csv("label,px0,vox1\n", "h").is_err());
    }
}
