//! Multispectral captures, NDVI and vegetation-filtered tiling.
//!
//! A capture directory holds one 16-bit binary PGM per band plus a
//! `capture.json` sidecar. Raw samples are mapped to reflectance by
//! dividing by the PGM maxval (65535 for the canonical format).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ground sample distance at 40 m flight height.
pub const DEFAULT_GSD_CM: f64 = 2.73;
/// Default tile edge in pixels.
pub const DEFAULT_TILE_SIZE: usize = 128;
/// NDVI at or above this value marks a vegetation pixel.
pub const DEFAULT_VEG_THRESHOLD: f64 = 0.3;
/// Minimum share of vegetation pixels for a tile to be kept.
pub const DEFAULT_MIN_FRACTION: f64 = 0.85;
/// Default time-series window.
pub const DEFAULT_WINDOW: usize = 4;

/// The five sensor bands, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Blue,
    Green,
    Red,
    RedEdge,
    NearIr,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Blue, Band::Green, Band::Red, Band::RedEdge, Band::NearIr];

    /// File stem used inside a capture directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            Band::Blue => "blue",
            Band::Green => "green",
            Band::Red => "red",
            Band::RedEdge => "rededge",
            Band::NearIr => "nearir",
        }
    }

    /// Center wavelength in nanometres.
    pub fn center_nm(self) -> u32 {
        match self {
            Band::Blue => 475,
            Band::Green => 560,
            Band::Red => 668,
            Band::RedEdge => 717,
            Band::NearIr => 842,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Row-major W×H grid of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies the `size`×`size` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Grid {
        debug_assert!(row + size <= self.height && col + size <= self.width);
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + size]);
        }
        Grid {
            width: size,
            height: size,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    field_id: String,
    timestamp: NaiveDate,
    gsd_cm: f64,
}

/// One timestamped 5-band reflectance raster of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralCapture {
    pub field_id: String,
    pub timestamp: NaiveDate,
    bands: [Grid; 5],
    pub ground_sample_distance_cm: f64,
}

impl MultispectralCapture {
    /// Builds a capture from bands in canonical [`Band::ALL`] order.
    pub fn new(
        field_id: impl Into<String>,
        timestamp: NaiveDate,
        bands: [Grid; 5],
        ground_sample_distance_cm: f64,
    ) -> Result<Self> {
        let (w, h) = (bands[0].width, bands[0].height);
        for (band, grid) in Band::ALL.iter().zip(&bands) {
            if grid.width != w || grid.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "band `{}` is {}x{}, expected {w}x{h}",
                    band.file_stem(),
                    grid.width,
                    grid.height
                )));
            }
            if let Some(&value) = grid.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ValueOutOfRange {
                    band: band.file_stem(),
                    value,
                });
            }
        }
        if !(ground_sample_distance_cm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ground sample distance must be positive, got {ground_sample_distance_cm}"
            )));
        }
        Ok(Self {
            field_id: field_id.into(),
            timestamp,
            bands,
            ground_sample_distance_cm,
        })
    }

    pub fn band(&self, band: Band) -> &Grid {
        &self.bands[band.index()]
    }

    pub fn width(&self) -> usize {
        self.bands[0].width
    }

    pub fn height(&self) -> usize {
        self.bands[0].height
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.field_id, self.timestamp)
    }
}

fn read_band(path: &Path) -> Result<Grid> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = ImageReader::with_format(BufReader::new(file), ImageFormat::Pnm);
    let raster_err = |reason: String| Error::Raster {
        path: path.to_path_buf(),
        reason,
    };
    let image = reader.decode().map_err(|e| raster_err(e.to_string()))?;
    let (width, height) = (image.width() as usize, image.height() as usize);
    let data: Vec<f64> = match image {
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        other => {
            return Err(raster_err(format!(
                "expected a single-channel graymap, got {:?}",
                other.color()
            )))
        }
    };
    Grid::new(width, height, data)
}

/// Loads a capture directory: five band PGMs plus `capture.json`.
pub fn load_capture(dir: impl AsRef<Path>) -> Result<MultispectralCapture> {
    let dir = dir.as_ref();
    let sidecar_path = dir.join("capture.json");
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::MalformedSidecar {
            path: sidecar_path.clone(),
            reason: e.to_string(),
        })?;

    let mut bands = Vec::with_capacity(5);
    for band in Band::ALL {
        let path = dir.join(format!("{}.pgm", band.file_stem()));
        if !path.is_file() {
            return Err(Error::MissingBand {
                band: band.file_stem(),
                dir: dir.to_path_buf(),
            });
        }
        bands.push(read_band(&path)?);
    }
    let bands: [Grid; 5] = bands.try_into().expect("five bands collected");
    MultispectralCapture::new(sidecar.field_id, sidecar.timestamp, bands, sidecar.gsd_cm)
}

/// Writes a capture in the canonical directory format, quantizing to 16 bits.
pub fn write_capture(dir: impl AsRef<Path>, capture: &MultispectralCapture) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for band in Band::ALL {
        let grid = capture.band(band);
        let raw: Vec<u16> = grid
            .data
            .iter()
            .map(|v| (v * 65535.0).round() as u16)
            .collect();
        let path = dir.join(format!("{}.pgm", band.file_stem()));
        let mut bytes = format!("P5\n{} {}\n65535\n", grid.width, grid.height).into_bytes();
        bytes.reserve(raw.len() * 2);
        for v in raw {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&bytes)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    let sidecar = Sidecar {
        field_id: capture.field_id.clone(),
        timestamp: capture.timestamp,
        gsd_cm: capture.ground_sample_distance_cm,
    };
    let path = dir.join("capture.json");
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads every capture directory below `root`, grouped by field and sorted by date.
///
/// Any directory containing a `capture.json` is treated as a capture.
pub fn load_capture_tree(
    root: impl AsRef<Path>,
) -> Result<BTreeMap<String, Vec<MultispectralCapture>>> {
    let mut dirs = Vec::new();
    collect_capture_dirs(root.as_ref(), &mut dirs)?;
    dirs.sort();
    let mut fields: BTreeMap<String, Vec<MultispectralCapture>> = BTreeMap::new();
    for dir in dirs {
        let capture = load_capture(&dir)?;
        fields
            .entry(capture.field_id.clone())
            .or_default()
            .push(capture);
    }
    for captures in fields.values_mut() {
        captures.sort_by_key(|c| c.timestamp);
    }
    Ok(fields)
}

fn collect_capture_dirs(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    if dir.join("capture.json").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_capture_dirs(&path, out)?;
        }
    }
    Ok(())
}

/// Per-pixel NDVI of one capture.
#[derive(Debug, Clone, PartialEq)]
pub struct NdviImage {
    pub values: Grid,
    pub source_capture_id: String,
    pub field_id: String,
    pub date: NaiveDate,
    pub timestep_index: usize,
}

/// NDVI of one pixel; a zero denominator yields 0.
pub fn ndvi_value(near_ir: f64, red: f64) -> f64 {
    let sum = near_ir + red;
    if sum == 0.0 {
        0.0
    } else {
        ((near_ir - red) / sum).clamp(-1.0, 1.0)
    }
}

pub fn compute_ndvi(capture: &MultispectralCapture) -> NdviImage {
    let nir = capture.band(Band::NearIr);
    let red = capture.band(Band::Red);
    let data = nir
        .data
        .iter()
        .zip(&red.data)
        .map(|(&n, &r)| ndvi_value(n, r))
        .collect();
    NdviImage {
        values: Grid {
            width: nir.width,
            height: nir.height,
            data,
        },
        source_capture_id: capture.id(),
        field_id: capture.field_id.clone(),
        date: capture.timestamp,
        timestep_index: 0,
    }
}

/// Tiling parameters shared by single tiles and tile series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    pub size: usize,
    pub veg_threshold: f64,
    pub min_fraction: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_TILE_SIZE,
            veg_threshold: DEFAULT_VEG_THRESHOLD,
            min_fraction: DEFAULT_MIN_FRACTION,
        }
    }
}

/// Square NDVI patch cut from a field raster at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub field_id: String,
    pub timestep_index: usize,
    pub date: NaiveDate,
    /// (row, col) of the top-left pixel.
    pub origin: (usize, usize),
    pub size: usize,
    pub ndvi_patch: Grid,
    pub vegetation_fraction: f64,
}

/// Every grid tile of the image, retained or not, in row-major order.
pub fn tile_grid(ndvi: &NdviImage, size: usize, veg_threshold: f64) -> Vec<Tile> {
    let values = &ndvi.values;
    if size == 0 || size > values.width || size > values.height {
        return Vec::new();
    }
    let mut tiles = Vec::new();
    for row in (0..=values.height - size).step_by(size) {
        for col in (0..=values.width - size).step_by(size) {
            let patch = values.window(row, col, size);
            let vegetated = patch.data.iter().filter(|&&v| v >= veg_threshold).count();
            tiles.push(Tile {
                field_id: ndvi.field_id.clone(),
                timestep_index: ndvi.timestep_index,
                date: ndvi.date,
                origin: (row, col),
                size,
                vegetation_fraction: vegetated as f64 / (size * size) as f64,
                ndvi_patch: patch,
            });
        }
    }
    tiles
}

/// Non-overlapping tiles anchored at (0, 0) whose vegetation share reaches `min_fraction`.
pub fn tile_and_filter(ndvi: &NdviImage, tiling: &TilingConfig) -> Vec<Tile> {
    tile_grid(ndvi, tiling.size, tiling.veg_threshold)
        .into_iter()
        .filter(|t| t.vegetation_fraction >= tiling.min_fraction)
        .collect()
}

pub fn mean_ndvi(tile: &Tile) -> f64 {
    tile.ndvi_patch.mean()
}

/// Same footprint observed at consecutive timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSeries {
    pub tiles: Vec<Tile>,
    pub dates: Vec<NaiveDate>,
}

impl TileSeries {
    pub fn field_id(&self) -> &str {
        &self.tiles[0].field_id
    }

    pub fn origin(&self) -> (usize, usize) {
        self.tiles[0].origin
    }

    pub fn start_timestep(&self) -> usize {
        self.tiles[0].timestep_index
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBuild {
    pub series: Vec<TileSeries>,
    /// Set when fewer captures than the window length were supplied.
    pub insufficient_length: bool,
}

fn check_aligned(captures: &[MultispectralCapture]) -> Result<()> {
    let Some(first) = captures.first() else {
        return Ok(());
    };
    for pair in captures.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(Error::InvalidInput(format!(
                "captures must be strictly increasing in date ({} then {})",
                pair[0].timestamp, pair[1].timestamp
            )));
        }
    }
    for c in captures {
        if c.field_id != first.field_id {
            return Err(Error::InvalidInput(format!(
                "captures mix fields `{}` and `{}`",
                first.field_id, c.field_id
            )));
        }
        if c.width() != first.width() || c.height() != first.height() {
            return Err(Error::DimensionMismatch(format!(
                "capture {} is {}x{}, expected {}x{}",
                c.id(),
                c.width(),
                c.height(),
                first.width(),
                first.height()
            )));
        }
    }
    Ok(())
}

/// NDVI images of a time-ordered field stack with timestep indices assigned.
pub fn ndvi_stack(captures: &[MultispectralCapture]) -> Result<Vec<NdviImage>> {
    check_aligned(captures)?;
    Ok(captures
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let mut ndvi = compute_ndvi(c);
            ndvi.timestep_index = t;
            ndvi
        })
        .collect())
}

/// Retained tiles of every timestep of a time-ordered field stack.
pub fn tile_captures(captures: &[MultispectralCapture], tiling: &TilingConfig) -> Result<Vec<Tile>> {
    Ok(ndvi_stack(captures)?
        .iter()
        .flat_map(|ndvi| tile_and_filter(ndvi, tiling))
        .collect())
}

/// Sliding windows of `window` consecutive captures; an origin is kept in a
/// window only if its tile passes the vegetation filter at every step.
pub fn build_tile_series(
    captures: &[MultispectralCapture],
    window: usize,
    tiling: &TilingConfig,
) -> Result<SeriesBuild> {
    if window == 0 {
        return Err(Error::InvalidInput("window length must be at least 1".into()));
    }
    let stack = ndvi_stack(captures)?;
    if stack.len() < window {
        return Ok(SeriesBuild {
            series: Vec::new(),
            insufficient_length: true,
        });
    }
    let per_step: Vec<BTreeMap<(usize, usize), Tile>> = stack
        .iter()
        .map(|ndvi| {
            tile_and_filter(ndvi, tiling)
                .into_iter()
                .map(|t| (t.origin, t))
                .collect()
        })
        .collect();

    let mut series = Vec::new();
    for start in 0..=stack.len() - window {
        let steps = &per_step[start..start + window];
        for origin in steps[0].keys() {
            if steps.iter().all(|m| m.contains_key(origin)) {
                let tiles: Vec<Tile> = steps.iter().map(|m| m[origin].clone()).collect();
                let dates = tiles.iter().map(|t| t.date).collect();
                series.push(TileSeries { tiles, dates });
            }
        }
    }
    Ok(SeriesBuild {
        series,
        insufficient_length: false,
    })
}
