//! Signal input (CSV and WAV) and CSV / PNG output.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{Rgb, RgbImage};
use wavewarp::linalg::Matrix;
use wavewarp::signal_model::Signal;
use wavewarp::tfa::TfRepresentation;

use crate::error::{CliError, CliResult};

/// Reads a mono signal. WAV files carry their own rate; CSV files need a
/// header and either a `t,x` pair of columns (rate from the time step) or a
/// single value column together with `fs`. An explicit `fs` always wins.
pub fn read_signal(path: &Path, fs: Option<f64>) -> CliResult<Signal<f64>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let signal = if ext == "wav" { read_wav(path, fs)? } else { read_csv(path, fs)? };
    if signal.len() < MIN_SAMPLES {
        return Err(CliError::Data(format!(
            "{}: {} samples read; at least {MIN_SAMPLES} are required",
            path.display(),
            signal.len()
        )));
    }
    Ok(signal)
}

/// Shortest input accepted before analysis is attempted.
pub const MIN_SAMPLES: usize = 64;

fn read_wav(path: &Path, fs: Option<f64>) -> CliResult<Signal<f64>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| CliError::io(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CliError::Data(format!(
            "{}: {} channels; only mono WAV is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::io(path, e))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(path, e))?,
        (format, bits) => {
            return Err(CliError::Data(format!(
                "{}: unsupported WAV encoding {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let rate = fs.unwrap_or(f64::from(spec.sample_rate));
    Signal::new(samples, rate, 0.0).map_err(CliError::from)
}

fn read_csv(path: &Path, fs: Option<f64>) -> CliResult<Signal<f64>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let x_col = headers
        .iter()
        .position(|h| h == "x")
        .unwrap_or(headers.len().saturating_sub(1));
    let t_col = headers.iter().position(|h| h == "t" || h == "time");
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let field = |c: usize| -> CliResult<f64> {
            record
                .get(c)
                .ok_or_else(|| CliError::Data(format!("{}: row {} is missing column {}", path.display(), line + 2, c + 1)))?
                .parse::<f64>()
                .map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), line + 2)))
        };
        x.push(field(x_col)?);
        if let Some(c) = t_col {
            t.push(field(c)?);
        }
    }
    let rate = match (fs, t_col) {
        (Some(f), _) => f,
        (None, Some(_)) => rate_from_times(&t).ok_or_else(|| {
            CliError::Data(format!("{}: time column must be strictly increasing", path.display()))
        })?,
        (None, None) => {
            return Err(CliError::Usage(format!(
                "{}: no time column; pass --fs",
                path.display()
            )))
        }
    };
    let t0 = t.first().copied().unwrap_or(0.0);
    Signal::new(x, rate, t0).map_err(CliError::from)
}

/// Sampling rate implied by a time column, using the mean step.
fn rate_from_times(t: &[f64]) -> Option<f64> {
    if t.len() < 2 || t.windows(2).any(|w| !(w[1] > w[0])) {
        return None;
    }
    let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    Some(1.0 / step)
}

/// Writes `header` then one CSV line per row.
pub fn write_rows<R: AsRef<[f64]>>(path: &Path, header: &[String], rows: &[R]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(row.as_ref().iter().map(|v| v.to_string()))
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Cycle matrix as CSV with columns `s0..s{L-1}`.
pub fn write_matrix(path: &Path, m: &Matrix<f64>) -> CliResult<()> {
    let header: Vec<String> = (0..m.cols()).map(|j| format!("s{j}")).collect();
    let rows: Vec<&[f64]> = m.row_iter().collect();
    write_rows(path, &header, &rows)
}

/// Writes a JSON document.
pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Log-magnitude spectrogram restricted to bins at or below `max_freq`, as
/// rows of `[frames][bins]`.
pub fn log_spectrogram(tfr: &TfRepresentation<f64>, max_freq: f64) -> (Vec<Vec<f64>>, usize) {
    let n_bins = tfr.freqs.iter().take_while(|&&f| f <= max_freq).count().max(1);
    let rows = (0..tfr.n_frames)
        .map(|m| (0..n_bins).map(|k| 20.0 * (tfr.magnitude(m, k) + 1e-300).log10()).collect())
        .collect();
    (rows, n_bins)
}

/// Spectrogram matrix as CSV: one row per frame, first column the frame
/// time, remaining columns headed by bin frequency, values in dB.
pub fn write_spectrogram_csv(path: &Path, tfr: &TfRepresentation<f64>, db: &[Vec<f64>], n_bins: usize) -> CliResult<()> {
    let mut header = vec!["time".to_string()];
    header.extend(tfr.freqs[..n_bins].iter().map(|f| f.to_string()));
    let rows: Vec<Vec<f64>> = db
        .iter()
        .zip(&tfr.times)
        .map(|(r, &t)| std::iter::once(t).chain(r.iter().copied()).collect())
        .collect();
    write_rows(path, &header, &rows)
}

/// Dynamic range (dB) mapped onto the gray scale.
const DYNAMIC_RANGE_DB: f64 = 80.0;

/// Grayscale log-magnitude image, time on x and frequency increasing
/// upward, with the ridge (one frequency per frame) drawn in red.
pub fn spectrogram_image(tfr: &TfRepresentation<f64>, db: &[Vec<f64>], n_bins: usize, ridge: &[f64]) -> RgbImage {
    let width = db.len().max(1) as u32;
    let height = n_bins as u32;
    let top = db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut img = RgbImage::new(width, height);
    for (m, row) in db.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let level = ((v - top + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB).clamp(0.0, 1.0);
            let g = (level * 255.0).round() as u8;
            img.put_pixel(m as u32, height - 1 - k as u32, Rgb([g, g, g]));
        }
    }
    let df = tfr.bin_width();
    for (m, &f) in ridge.iter().enumerate().take(width as usize) {
        let k = (f / df).round();
        if k >= 0.0 && (k as usize) < n_bins {
            img.put_pixel(m as u32, height - 1 - k as u32, Rgb([255, 0, 0]));
        }
    }
    img
}

/// Saves a PNG.
pub fn write_png(path: &Path, img: &RgbImage) -> CliResult<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_from_uniform_times() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.001).collect();
        assert!((rate_from_times(&t).unwrap() - 1000.0).abs() < 1e-9);
        assert!(rate_from_times(&[0.0, 0.0]).is_none());
        assert!(rate_from_times(&[1.0]).is_none());
    }
}
