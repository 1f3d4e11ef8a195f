use std::fs;
use std::io::Write;
use std::path::Path;

use super::generate::GenerationConfig;
use super::image::Image;
use super::{Cohort, Participant};
use crate::error::{Error, Result};

/// Labels and indicator values: header `id,label,<indicator names...>`.
pub const METADATA_FILE: &str = "metadata.csv";
/// Generation config sidecar.
pub const CONFIG_FILE: &str = "config.json";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(path, "file is missing"),
        _ => Error::io(path, e),
    })
}

/// Write `cohort` into `dir` (created if needed): `metadata.csv`,
/// `config.json` and one `<id>.ppm` per image.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let config_path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(cohort.config()).map_err(|e| Error::format(&config_path, e.to_string()))?;
    fs::write(&config_path, json + "\n").map_err(|e| Error::io(&config_path, e))?;

    let csv_path = dir.join(METADATA_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(cohort.indicator_names().iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| csv_error(&csv_path, e))?;
    for p in cohort.participants() {
        let mut row = vec![p.id().to_string(), p.label().to_string()];
        // `{}` on f64 prints the shortest string that parses back to the same bits
        row.extend(p.metadata().iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    for p in cohort.participants() {
        if let Some(img) = p.image() {
            write_ppm(&dir.join(format!("{}.ppm", p.id())), img)?;
        }
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Read a cohort written by [`write_cohort`]. Images are loaded when the
/// config declares them. Latent severities are not stored and come back
/// absent.
pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let config_path = dir.join(CONFIG_FILE);
    let config: GenerationConfig = serde_json::from_slice(&read_bytes(&config_path)?)
        .map_err(|e| Error::format(&config_path, e.to_string()))?;
    for spec in &config.indicators {
        spec.validate().map_err(|e| Error::format(&config_path, e.to_string()))?;
    }

    let csv_path = dir.join(METADATA_FILE);
    let bytes = read_bytes(&csv_path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header: Vec<String> = r.headers().map_err(|e| csv_error(&csv_path, e))?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "id" || header[1] != "label" {
        return Err(Error::format(&csv_path, "header must start with id,label"));
    }
    let missing: Vec<&str> = config
        .indicators
        .iter()
        .map(|s| s.name.as_str())
        .filter(|name| !header[2..].iter().any(|h| h == name))
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(&csv_path, format!("missing indicator column(s): {}", missing.join(", "))));
    }
    let positions: Vec<usize> = config
        .indicators
        .iter()
        .map(|s| header.iter().position(|h| *h == s.name).expect("checked above"))
        .collect();

    let mut participants = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(&csv_path, e))?;
        let row = line + 2;
        let field = |j: usize| record.get(j).ok_or_else(|| Error::format(&csv_path, format!("row {row} is short")));
        let id = field(0)?.to_string();
        let label: u8 = field(1)?
            .parse()
            .map_err(|_| Error::format(&csv_path, format!("row {row}: label {:?} is not 0/1", &record[1])))?;
        let metadata = positions
            .iter()
            .map(|&j| {
                let s = field(j)?;
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(&csv_path, format!("row {row}, column {}: bad number {s:?}", header[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let image = match &config.images {
            Some(rc) => {
                let path = dir.join(format!("{id}.ppm"));
                let img = read_ppm(&path)?;
                if img.height() != rc.height || img.width() != rc.width {
                    return Err(Error::format(
                        &path,
                        format!("image is {}x{}, config declares {}x{}", img.height(), img.width(), rc.height, rc.width),
                    ));
                }
                Some(img)
            }
            None => None,
        };
        let p = Participant::new(id, label, metadata, image).map_err(|e| Error::format(&csv_path, e.to_string()))?;
        participants.push(p);
    }
    Cohort::new(participants, config).map_err(|e| Error::format(&csv_path, e.to_string()))
}

/// Write an 8-bit binary (P6) PPM, rounding each channel to the nearest
/// 1/255 step.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(image.pixels().len() + 20);
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height()).expect("write to vec");
    out.extend(image.pixels().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read an 8-bit binary (P6) PPM with header comments allowed.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = read_bytes(path)?;
    let bad = |msg: &str| Error::format(path, msg.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(path, format!("expected PPM magic P6, found {magic:?}")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated or malformed header"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("image sides must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("only 8-bit PPM is supported, maxval is {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after header"));
    }
    pos += 1;
    let expected = width * height * 3;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(Error::format(path, format!("expected {expected} pixel bytes, found {}", data.len())));
    }
    let scale = maxval as f64;
    let pixels = data.iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    Image::new(height, width, pixels).map_err(|e| Error::format(path, e.to_string()))
}
