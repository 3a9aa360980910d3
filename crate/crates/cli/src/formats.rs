//! On-disk input/output formats: dataset CSV (`x1,...,xd[,label]`),
//! candidate-set JSON (`{"dimension", "components", "provenance"}`), and
//! binary PPM (P6, 8-bit) images. Key names and headers are fixed; floats
//! are written shortest-exact and reload bitwise.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use mixcert_core::error::{Error, Result};
use mixcert_core::model::{ComponentSet, Dataset, GaussianComponent, SetProvenance};
use mixcert_core::patch::PixelImage;

/// Writes `x1,...,xd` (plus `label` when labels are present) and one row
/// per point.
pub fn write_dataset_csv<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = dataset.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    if dataset.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.n_points() {
        let mut row: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(labels) = dataset.labels() {
            row.push(labels[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV; the header must be exactly `x1,...,xd` with an
/// optional trailing `label` column.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut names: Vec<&str> = headers.iter().collect();
    let labeled = names.last() == Some(&"label");
    if labeled {
        names.pop();
    }
    let d = names.len();
    if d == 0 {
        return Err(Error::Format("dataset CSV has no coordinate columns".into()));
    }
    for (j, name) in names.iter().enumerate() {
        let expect = format!("x{}", j + 1);
        if *name != expect {
            return Err(Error::Format(format!(
                "dataset CSV column {} is named {name:?}, expected {expect:?}",
                j + 1
            )));
        }
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let want = d + usize::from(labeled);
        if record.len() != want {
            return Err(Error::Format(format!(
                "dataset CSV row {} has {} fields, expected {want}",
                i + 1,
                record.len()
            )));
        }
        for field in record.iter().take(d) {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("dataset CSV row {}: bad number {field:?}", i + 1))
            })?;
            points.push(v);
        }
        if labeled {
            let field = &record[d];
            let l: usize = field.parse().map_err(|_| {
                Error::Format(format!("dataset CSV row {}: bad label {field:?}", i + 1))
            })?;
            labels.push(l);
        }
    }
    if points.is_empty() {
        return Err(Error::Format("dataset CSV has no data rows".into()));
    }
    let dataset = Dataset::from_flat(points.len() / d, d, points)?;
    if labeled {
        dataset.with_labels(labels)
    } else {
        Ok(dataset)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("bad CSV: {e}"))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireComponent {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSet {
    dimension: usize,
    components: Vec<WireComponent>,
    provenance: SetProvenance,
}

/// Writes `{"dimension": d, "components": [{"mean", "cov"}], "provenance"}`.
pub fn write_component_set<W: Write>(out: W, set: &ComponentSet) -> Result<()> {
    let wire = WireSet {
        dimension: set.dim(),
        components: set
            .components()
            .iter()
            .map(|c| WireComponent {
                mean: c.mean().to_vec(),
                cov: (0..c.dim())
                    .map(|a| (0..c.dim()).map(|b| c.covariance()[(a, b)]).collect())
                    .collect(),
            })
            .collect(),
        provenance: set.provenance().clone(),
    };
    serde_json::to_writer_pretty(out, &wire)
        .map_err(|e| Error::Format(format!("candidate set serialization failed: {e}")))
}

/// Reads a candidate-set JSON document, revalidating every component.
pub fn read_component_set<R: Read>(input: R) -> Result<ComponentSet> {
    let wire: WireSet = serde_json::from_reader(input)
        .map_err(|e| Error::Format(format!("bad candidate set JSON: {e}")))?;
    let components: Vec<GaussianComponent> = wire
        .components
        .into_iter()
        .enumerate()
        .map(|(m, c)| {
            if c.mean.len() != wire.dimension {
                return Err(Error::Format(format!(
                    "component {m}: mean has {} entries, dimension says {}",
                    c.mean.len(),
                    wire.dimension
                )));
            }
            GaussianComponent::from_rows(c.mean, c.cov)
        })
        .collect::<Result<_>>()?;
    ComponentSet::new(components, wire.provenance)
}

/// Next header token, skipping whitespace and `#` comment lines.
fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::Format(format!("PPM ended before {what}"))),
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn ppm_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let t = ppm_token(bytes, pos, what)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("PPM {what} is not a valid integer")))
}

/// Reads a binary PPM (P6, 8-bit). Comments (`#` to end of line) are
/// allowed anywhere in the header.
pub fn read_ppm(bytes: &[u8]) -> Result<PixelImage> {
    let mut pos = 0;
    if ppm_token(bytes, &mut pos, "magic")? != b"P6" {
        return Err(Error::Format("not a binary PPM (magic must be P6)".into()));
    }
    let width = ppm_int(bytes, &mut pos, "width")?;
    let height = ppm_int(bytes, &mut pos, "height")?;
    let maxval = ppm_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit PPMs are supported (maxval 255, got {maxval})"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("PPM header not terminated by whitespace".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| Error::Format("PPM dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::Format(format!(
            "PPM raster has {} bytes, {width}x{height} needs {need}",
            raster.len()
        )));
    }
    let pixels = raster[..need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    PixelImage::new(width, height, pixels)
}

pub fn write_ppm<W: Write>(mut out: W, image: &PixelImage) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())?;
    for p in image.pixels() {
        out.write_all(p)?;
    }
    Ok(())
}

/// Distinct mask colors; labels wrap around when a segmentation uses
/// more components than the palette has entries.
pub const MASK_PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [70, 240, 240],
    [245, 130, 48],
    [240, 50, 230],
    [128, 128, 0],
    [0, 0, 128],
];

/// Renders per-pixel labels (row-major) as an indexed-color image.
pub fn label_image(width: usize, height: usize, labels: &[usize]) -> Result<PixelImage> {
    if labels.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a {width}x{height} image",
            labels.len()
        )));
    }
    let pixels = labels
        .iter()
        .map(|&l| MASK_PALETTE[l % MASK_PALETTE.len()])
        .collect();
    PixelImage::new(width, height, pixels)
}
