//! Converts the per-class JSON digit files of the `mnist` npm package into
//! gzip-compressed IDX files with a held-out test split.
//!
//! ```text
//! cargo run --release --example prepare_mnist -- <digits-json-dir> <out-dir> [test-per-class]
//! ```
//!
//! `<digits-json-dir>` holds `0.json` … `9.json`, each `{"data": [...]}` with
//! 784 intensities per digit. The last `test-per-class` digits of every class
//! (default 150) form the test split.

use std::fs;
use std::io::Write;
use std::path::Path;

use capsdec::data_io::{idx_images_bytes, idx_labels_bytes};
use capsdec::image::{Image, LabeledImage};
use flate2::write::GzEncoder;
use flate2::Compression;

fn gz_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes)?;
    fs::write(path, enc.finish()?)
}

fn write_split(out: &Path, images: &str, labels: &str, data: &[LabeledImage]) -> Result<(), Box<dyn std::error::Error>> {
    let imgs: Vec<Image> = data.iter().map(|s| s.image.clone()).collect();
    let labs: Vec<u8> = data.iter().map(|s| s.label).collect();
    gz_write(&out.join(format!("{images}.gz")), &idx_images_bytes(&imgs)?)?;
    gz_write(&out.join(format!("{labels}.gz")), &idx_labels_bytes(&labs))?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: prepare_mnist <digits-json-dir> <out-dir> [test-per-class]");
        std::process::exit(2);
    }
    let src = Path::new(&args[0]);
    let out = Path::new(&args[1]);
    let test_per_class: usize = args.get(2).map_or(Ok(150), |s| s.parse())?;
    fs::create_dir_all(out)?;

    let mut per_class: Vec<Vec<LabeledImage>> = Vec::new();
    for label in 0..10u8 {
        let text = fs::read_to_string(src.join(format!("{label}.json")))?;
        let json: serde_json::Value = serde_json::from_str(&text)?;
        let values = json["data"].as_array().ok_or("missing `data` array")?;
        if values.len() % 784 != 0 {
            return Err(format!("class {label}: {} values is not a multiple of 784", values.len()).into());
        }
        let digits = values
            .chunks(784)
            .map(|chunk| {
                // the package stores byte/255 rounded to three decimals
                let pixels = chunk
                    .iter()
                    .map(|v| (v.as_f64().unwrap_or(0.0) * 255.0).round().clamp(0.0, 255.0) as f32 / 255.0)
                    .collect();
                Image::new(28, 28, pixels).map(|image| LabeledImage { image, label })
            })
            .collect::<Result<Vec<_>, _>>()?;
        per_class.push(digits);
    }

    // interleave classes so that the files are not sorted by label
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let splits: Vec<(Vec<LabeledImage>, Vec<LabeledImage>)> = per_class
        .into_iter()
        .map(|mut digits| {
            let held = digits.split_off(digits.len().saturating_sub(test_per_class));
            (digits, held)
        })
        .collect();
    let longest = splits.iter().map(|(a, _)| a.len()).max().unwrap_or(0);
    for i in 0..longest {
        for (tr, te) in &splits {
            if let Some(d) = tr.get(i) {
                train.push(d.clone());
            }
            if let Some(d) = te.get(i) {
                test.push(d.clone());
            }
        }
    }

    write_split(out, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", &train)?;
    write_split(out, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", &test)?;
    println!("wrote {} training and {} test digits to {}", train.len(), test.len(), out.display());
    Ok(())
}
