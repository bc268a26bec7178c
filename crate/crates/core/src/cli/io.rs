//! Tab-separated tables with `# key = value` header lines.
//!
//! Numbers are written with 17 significant digits so every f64 survives a
//! write/read cycle bit for bit; missing values are written as `NA`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::detector::{BinnedHistogram, HistogramModel};
use crate::error::{Error, Result};
use crate::spectrum::{AxisKind, SpectrumChannel, SpectrumGrid};
use crate::units::FieldMap;

pub const MISSING: &str = "NA";

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_string(), fmt_num)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join("\t"));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Format {
            path: path.to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut table = Table::default();
        let mut have_columns = false;
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(k + 1, "header line is not `# key = value`".into()))?;
                table.meta.push((key.trim().to_string(), value.trim().to_string()));
                continue;
            }
            let cells: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
            if !have_columns {
                table.columns = cells;
                have_columns = true;
            } else {
                if cells.len() != table.columns.len() {
                    return Err(bad(k + 1, format!("expected {} columns, found {}", table.columns.len(), cells.len())));
                }
                table.rows.push(cells);
            }
        }
        if !have_columns {
            return Err(bad(0, "no column header".into()));
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn meta_map(&self) -> BTreeMap<&str, &str> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

fn format_err(path: &str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_num(cell: &str, path: &str) -> Result<Option<f64>> {
    if cell == MISSING {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| format_err(path, format!("`{cell}` is not a number")))
}

fn meta_num(table: &Table, key: &str, path: &str) -> Result<f64> {
    let map = table.meta_map();
    let v = map.get(key).ok_or_else(|| format_err(path, format!("missing header `{key}`")))?;
    v.parse().map_err(|_| format_err(path, format!("header `{key}` is not a number")))
}

/// Common provenance lines for every output file.
pub fn provenance(table: Table, seed: Option<u64>, config_hash: &str, source: &str) -> Table {
    let t = match seed {
        Some(s) => table.meta("seed", s),
        None => table.meta("seed", MISSING),
    };
    t.meta("config_hash", config_hash).meta("source", source)
}

/// One channel of `grid` as a table.
pub fn spectrum_table(grid: &SpectrumGrid, channel: &SpectrumChannel) -> Table {
    let mut t = Table::new(&["axis", "signal", "stderr", "shots"])
        .meta("channel", channel.atoms)
        .meta("axis", serde_json::to_value(grid.kind).expect("enum").as_str().unwrap_or_default())
        .meta("unit", grid.kind.unit())
        .meta("field_center", fmt_num(grid.field_map.center_field))
        .meta("field_coefficient", fmt_num(grid.field_map.coefficient));
    for (k, &x) in grid.axis.iter().enumerate() {
        let err = channel.errors.as_ref().and_then(|e| e[k]);
        let shots = channel
            .shots
            .as_ref()
            .map_or_else(|| MISSING.to_string(), |s| s[k].to_string());
        t.push(vec![fmt_num(x), fmt_opt(channel.values[k]), fmt_opt(err), shots]);
    }
    t
}

/// Reads per-channel spectrum files into one grid; all files must share the axis.
pub fn read_spectra(paths: &[&Path]) -> Result<SpectrumGrid> {
    let mut grid: Option<SpectrumGrid> = None;
    for &p in paths {
        let name = p.display().to_string();
        let t = Table::read(p)?;
        let map = t.meta_map();
        let kind = match map.get("axis").copied() {
            Some("field") => AxisKind::Field,
            Some("detuning") => AxisKind::Detuning,
            other => return Err(format_err(&name, format!("unknown axis kind {other:?}"))),
        };
        let atoms: u32 = map
            .get("channel")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| format_err(&name, "missing or invalid `channel` header"))?;
        let map_f = FieldMap::new(meta_num(&t, "field_center", &name)?, meta_num(&t, "field_coefficient", &name)?);
        let (ca, cs) = (
            t.column("axis").ok_or_else(|| format_err(&name, "no `axis` column"))?,
            t.column("signal").ok_or_else(|| format_err(&name, "no `signal` column"))?,
        );
        let ce = t.column("stderr");
        let mut axis = Vec::new();
        let mut values = Vec::new();
        let mut errors = Vec::new();
        for row in &t.rows {
            axis.push(parse_num(&row[ca], &name)?.ok_or_else(|| format_err(&name, "axis value missing"))?);
            values.push(parse_num(&row[cs], &name)?);
            errors.push(match ce {
                Some(c) => parse_num(&row[c], &name)?,
                None => None,
            });
        }
        let channel = SpectrumChannel {
            atoms,
            values,
            errors: errors.iter().any(Option::is_some).then_some(errors),
            shots: None,
        };
        let g = match grid.as_mut() {
            None => grid.insert(SpectrumGrid::new(kind, axis.clone(), map_f)?),
            Some(g) => g,
        };
        if g.kind != kind || g.axis != axis {
            return Err(format_err(&name, "axis differs from the first spectrum file"));
        }
        if g.channel(atoms).is_some() {
            return Err(format_err(&name, format!("channel {atoms} given twice")));
        }
        g.push(channel)?;
    }
    let mut grid = grid.ok_or_else(|| Error::Underdetermined("no spectrum files given".into()))?;
    grid.channels.sort_by_key(|c| c.atoms);
    Ok(grid)
}

fn join_nums(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(",")
}

fn split_nums(text: &str, path: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|w| !w.is_empty())
        .map(|w| parse_num(w, path)?.ok_or_else(|| format_err(path, "missing value in list")))
        .collect()
}

/// Histogram as a table of bin edges and counts; the peak model that
/// produced it (centers, widths, assignment windows) goes in the header.
pub fn histogram_table(hist: &BinnedHistogram, model: &HistogramModel) -> Table {
    let w: Vec<String> = model
        .windows()
        .iter()
        .map(|(lo, hi)| format!("{}:{}", fmt_num(*lo), fmt_num(*hi)))
        .collect();
    let mut t = Table::new(&["bin_lo", "bin_hi", "count"])
        .meta("windows", w.join(","))
        .meta("centers", join_nums(model.centers()))
        .meta("widths", join_nums(model.widths()));
    for (k, &c) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.edges(k);
        t.push(vec![fmt_num(lo), fmt_num(hi), c.to_string()]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFile {
    pub histogram: BinnedHistogram,
    pub windows: Vec<(f64, f64)>,
    /// Present when the header lists peak centers and widths.
    pub model: Option<HistogramModel>,
}

impl HistogramFile {
    /// Counts per assignment window.
    pub fn window_counts(&self) -> Vec<f64> {
        self.windows
            .iter()
            .map(|&(lo, hi)| self.histogram.integral(lo, hi) as f64)
            .collect()
    }
}

pub fn read_histogram(path: &Path) -> Result<HistogramFile> {
    let name = path.display().to_string();
    let t = Table::read(path)?;
    let map = t.meta_map();
    let windows_text = map
        .get("windows")
        .ok_or_else(|| format_err(&name, "missing `windows` header"))?;
    let mut windows = Vec::new();
    for w in windows_text.split(',').filter(|w| !w.is_empty()) {
        let (lo, hi) = w
            .split_once(':')
            .ok_or_else(|| format_err(&name, format!("window `{w}` is not lo:hi")))?;
        let lo = parse_num(lo, &name)?.ok_or_else(|| format_err(&name, "window bound missing"))?;
        let hi = parse_num(hi, &name)?.ok_or_else(|| format_err(&name, "window bound missing"))?;
        windows.push((lo, hi));
    }
    let model = match (map.get("centers"), map.get("widths")) {
        (Some(c), Some(w)) => {
            let centers = split_nums(c, &name)?;
            let widths = split_nums(w, &name)?;
            let ones = vec![1.0; centers.len()];
            Some(HistogramModel::new(centers, widths, ones, windows.clone())?)
        }
        _ => None,
    };
    let (cl, ch, cc) = match (t.column("bin_lo"), t.column("bin_hi"), t.column("count")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format_err(&name, "histogram needs bin_lo, bin_hi and count columns")),
    };
    if t.rows.is_empty() {
        return Err(format_err(&name, "histogram has no bins"));
    }
    let first = parse_num(&t.rows[0][cl], &name)?.unwrap_or(0.0);
    let last = parse_num(&t.rows[t.rows.len() - 1][ch], &name)?.unwrap_or(0.0);
    let mut histogram = BinnedHistogram::new(first, last, t.rows.len())?;
    for (k, row) in t.rows.iter().enumerate() {
        histogram.counts[k] = row[cc]
            .parse()
            .map_err(|_| format_err(&name, format!("bin {k}: count `{}` is not an integer", row[cc])))?;
    }
    Ok(HistogramFile {
        histogram,
        windows,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_bit_exactly() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.2250738585072014e-308, 0.0] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["a", "b"]).meta("seed", 4).meta("unit", "V/cm");
        t.push(vec![fmt_num(1.5), MISSING.into()]);
        let back = Table::parse(&t.render(), "mem").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = "a\tb\n1\t2\n3\n";
        assert!(matches!(Table::parse(text, "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn spectra_and_histogram_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut grid = SpectrumGrid::new(AxisKind::Field, vec![6.3, 6.35, 6.4], FieldMap::new(6.35, 1e9)).unwrap();
        let mut ch = SpectrumChannel::exact(2, vec![0.01, 0.1, 0.01]);
        ch.values[0] = None;
        ch.errors = Some(vec![None, Some(0.001), Some(0.002)]);
        grid.push(ch.clone()).unwrap();
        let p = dir.path().join("s2.tsv");
        spectrum_table(&grid, &ch).write(&p).unwrap();
        let back = read_spectra(&[p.as_path()]).unwrap();
        assert_eq!(back.axis, grid.axis);
        assert_eq!(back.channels[0].values, ch.values);
        assert_eq!(back.channels[0].errors, ch.errors);
        assert_eq!(back.field_map, grid.field_map);

        let mut h = BinnedHistogram::new(0.0, 2.4, 24).unwrap();
        h.fill(0.4);
        h.fill(0.81);
        let hp = dir.path().join("h.tsv");
        let model = HistogramModel::channeltron_preset();
        histogram_table(&h, &model).write(&hp).unwrap();
        let back = read_histogram(&hp).unwrap();
        assert_eq!(back.histogram.counts, h.counts);
        assert_eq!(back.windows, model.windows());
        assert_eq!(back.model.as_ref().unwrap().widths(), model.widths());
        assert_eq!(back.window_counts()[..2], [1.0, 1.0]);
    }
}
