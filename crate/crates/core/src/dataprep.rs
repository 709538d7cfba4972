//! Turn dense segmentation masks into tile-level classification examples.
//!
//! Each mask is cut into non-overlapping square tiles on a grid anchored at
//! the top-left corner; partial tiles at the right and bottom edges are
//! discarded. A tile made only of soil pixels is labelled soil, otherwise it
//! gets the majority class under the configured [`LabelScope`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_TILE_SIZE: usize = 224;

/// Which classes compete in the majority vote when a tile is not pure soil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScope {
    /// Soil competes like any other class.
    All,
    /// Soil is excluded once any other class is present.
    #[default]
    NonSoil,
}

impl fmt::Display for LabelScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScope::All => "all",
            LabelScope::NonSoil => "non-soil",
        })
    }
}

impl FromStr for LabelScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(LabelScope::All),
            "non-soil" | "non_soil" => Ok(LabelScope::NonSoil),
            other => Err(Error::InvalidConfig(format!("unknown label scope '{other}'"))),
        }
    }
}

/// Class id to name table with a designated soil class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    names: BTreeMap<u16, String>,
    soil_id: u16,
}

impl ClassTable {
    pub fn new(names: BTreeMap<u16, String>, soil_id: u16) -> Result<Self> {
        if !names.contains_key(&soil_id) {
            return Err(Error::UnknownClass(soil_id));
        }
        Ok(Self { names, soil_id })
    }

    /// Parse an `id,name` table. The soil class is `soil_id` if given, else
    /// the class named `soil`.
    pub fn parse(text: &str, origin: &str, soil_id: Option<u16>) -> Result<Self> {
        let mut names = BTreeMap::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.eq_ignore_ascii_case("id,name") {
                    continue;
                }
            }
            let (id, name) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected 'id,name'"))?;
            let id: u16 = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, i + 1, format!("bad class id '{id}'")))?;
            if names.insert(id, name.trim().to_string()).is_some() {
                return Err(Error::parse(origin, i + 1, format!("duplicate class id {id}")));
            }
        }
        if names.is_empty() {
            return Err(Error::parse(origin, 0, "class table is empty"));
        }
        let soil = match soil_id {
            Some(id) => id,
            None => names
                .iter()
                .find(|(_, n)| n.eq_ignore_ascii_case("soil"))
                .map(|(&id, _)| id)
                .ok_or_else(|| Error::InvalidConfig("no class named 'soil' and no soil id given".into()))?,
        };
        Self::new(names, soil)
    }

    pub fn soil_id(&self) -> u16 {
        self.soil_id
    }

    pub fn names(&self) -> &BTreeMap<u16, String> {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, id: u16) -> bool {
        self.names.contains_key(&id)
    }

    /// Resolve a class given by id or by name.
    pub fn resolve(&self, key: &str) -> Result<u16> {
        let key = key.trim();
        if let Ok(id) = key.parse::<u16>() {
            return if self.contains(id) { Ok(id) } else { Err(Error::UnknownClass(id)) };
        }
        self.names
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(key))
            .map(|(&id, _)| id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown class '{key}'")))
    }

    /// Length of a histogram able to hold every class id.
    fn histogram_len(&self) -> usize {
        self.names.keys().next_back().map_or(0, |&id| id as usize + 1)
    }
}

/// A single-channel raster of class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl MaskRaster {
    pub fn new(source: impl Into<String>, width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: width * height,
            });
        }
        Ok(Self {
            source: source.into(),
            width,
            height,
            labels,
        })
    }

    /// Load an 8- or 16-bit grayscale PNG whose pixel values are class ids.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let labels = match img {
            image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
            image::DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            other => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("expected single-channel mask, got {:?}", other.color()),
                })
            }
        };
        let source = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Self::new(source, width, height, labels)
    }

    /// Write as a 16-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
            self.width as u32,
            self.height as u32,
            self.labels.clone(),
        )
        .expect("buffer length checked at construction");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn check_labels(&self, classes: &ClassTable) -> Result<()> {
        let mut seen = vec![false; 1 << 16];
        for &id in &self.labels {
            seen[id as usize] = true;
        }
        match (0..=u16::MAX).find(|&id| seen[id as usize] && !classes.contains(id)) {
            Some(id) => Err(Error::UnknownClass(id)),
            None => Ok(()),
        }
    }
}

/// Top-left offsets `(x, y)` of every full tile, row by row.
pub fn tile_grid(height: usize, width: usize, tile_size: usize) -> Result<Vec<(usize, usize)>> {
    if tile_size == 0 {
        return Err(Error::InvalidConfig("tile size must be at least 1".into()));
    }
    let (rows, cols) = (height / tile_size, width / tile_size);
    Ok((0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c * tile_size, r * tile_size)))
        .collect())
}

/// Label a tile from its pixel histogram (indexed by class id).
pub fn assign_label(pixel_counts: &[u64], soil_id: u16, scope: LabelScope) -> Result<u16> {
    if pixel_counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyHistogram);
    }
    let soil = soil_id as usize;
    let non_soil = pixel_counts
        .iter()
        .enumerate()
        .any(|(id, &c)| id != soil && c > 0);
    if !non_soil {
        return Ok(soil_id);
    }
    let mut best: Option<(usize, u64)> = None;
    for (id, &count) in pixel_counts.iter().enumerate() {
        if count == 0 || (scope == LabelScope::NonSoil && id == soil) {
            continue;
        }
        // strict comparison keeps the lowest id on ties
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((id, count));
        }
    }
    Ok(best.expect("a non-soil class is present").0 as u16)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub source: String,
    pub x_offset: usize,
    pub y_offset: usize,
    pub tile_size: usize,
    pub label: u16,
    /// Pixel count per class id.
    pub pixel_counts: Vec<u64>,
}

/// Cut one raster into labelled tiles.
pub fn tile_raster(
    raster: &MaskRaster,
    classes: &ClassTable,
    tile_size: usize,
    scope: LabelScope,
) -> Result<Vec<TileRecord>> {
    raster.check_labels(classes)?;
    let hist_len = classes.histogram_len();
    tile_grid(raster.height, raster.width, tile_size)?
        .into_iter()
        .map(|(x, y)| {
            let mut counts = vec![0u64; hist_len];
            for row in y..y + tile_size {
                let start = row * raster.width + x;
                for &id in &raster.labels[start..start + tile_size] {
                    counts[id as usize] += 1;
                }
            }
            Ok(TileRecord {
                source: raster.source.clone(),
                x_offset: x,
                y_offset: y,
                tile_size,
                label: assign_label(&counts, classes.soil_id(), scope)?,
                pixel_counts: counts,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tiles: Vec<TileRecord>,
    pub classes: ClassTable,
    /// Processing steps applied, in order.
    pub provenance: Vec<String>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    /// Tiles per class in the class table, including zero counts.
    pub fn class_counts(&self) -> BTreeMap<u16, usize> {
        let mut counts: BTreeMap<u16, usize> = self.classes.names().keys().map(|&id| (id, 0)).collect();
        for tile in &self.tiles {
            *counts.entry(tile.label).or_default() += 1;
        }
        counts
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

/// Tile every raster and collect the results in raster order.
pub fn build_manifest(
    rasters: &[MaskRaster],
    classes: &ClassTable,
    tile_size: usize,
    scope: LabelScope,
) -> Result<DatasetManifest> {
    let per_raster = rasters
        .par_iter()
        .map(|r| Ok((r.source.clone(), tile_raster(r, classes, tile_size, scope)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(per_raster, classes, tile_size, scope))
}

fn assemble(
    per_raster: Vec<(String, Vec<TileRecord>)>,
    classes: &ClassTable,
    tile_size: usize,
    scope: LabelScope,
) -> DatasetManifest {
    let mut manifest = DatasetManifest {
        tiles: Vec::new(),
        classes: classes.clone(),
        provenance: vec![format!("tile size={tile_size} scope={scope}")],
        warnings: Vec::new(),
    };
    for (source, tiles) in per_raster {
        if tiles.is_empty() {
            manifest.warn(format!("{source} is smaller than one tile"));
        }
        manifest.tiles.extend(tiles);
    }
    manifest
}

/// Load and tile PNG masks in parallel; tiles are ordered as `paths`.
pub fn manifest_from_pngs(
    paths: &[std::path::PathBuf],
    classes: &ClassTable,
    tile_size: usize,
    scope: LabelScope,
) -> Result<DatasetManifest> {
    let per_file = paths
        .par_iter()
        .map(|path| {
            let raster = MaskRaster::load_png(path)?;
            let tiles = tile_raster(&raster, classes, tile_size, scope)?;
            Ok((raster.source, tiles))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(per_file, classes, tile_size, scope))
}

/// Keep exactly `target` tiles of `class`, chosen uniformly at random.
/// Other tiles and the relative order of kept tiles are unchanged.
pub fn undersample(manifest: &DatasetManifest, class: u16, target: usize, seed: u64) -> Result<DatasetManifest> {
    if !manifest.classes.contains(class) {
        return Err(Error::UnknownClass(class));
    }
    let positions: Vec<usize> = manifest
        .tiles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.label == class)
        .map(|(i, _)| i)
        .collect();
    if target > positions.len() {
        return Err(Error::TargetExceedsCount {
            class,
            target,
            available: positions.len(),
        });
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_UNDERSAMPLE, class as u64]));
    let keep: BTreeSet<usize> = rand::seq::index::sample(&mut rng, positions.len(), target)
        .into_iter()
        .map(|i| positions[i])
        .collect();
    let mut out = manifest.clone();
    out.tiles = manifest
        .tiles
        .iter()
        .enumerate()
        .filter(|(i, t)| t.label != class || keep.contains(i))
        .map(|(_, t)| t.clone())
        .collect();
    out.provenance
        .push(format!("undersample class={class} target={target} seed={seed}"));
    Ok(out)
}

/// Remove every tile labelled with one of `ids` and drop those classes from
/// the class table.
pub fn drop_classes(manifest: &DatasetManifest, ids: &[u16]) -> Result<DatasetManifest> {
    if let Some(&id) = ids.iter().find(|&&id| !manifest.classes.contains(id)) {
        return Err(Error::UnknownClass(id));
    }
    let drop: BTreeSet<u16> = ids.iter().copied().collect();
    if drop.is_empty() {
        return Ok(manifest.clone());
    }
    let mut out = manifest.clone();
    out.tiles.retain(|t| !drop.contains(&t.label));
    out.classes.names.retain(|id, _| !drop.contains(id));
    let list: Vec<String> = drop.iter().map(u16::to_string).collect();
    out.provenance.push(format!("drop classes={}", list.join(";")));
    match out.classes.len() {
        0 => out.warn("all classes dropped".into()),
        1 => out.warn("only one class remains".into()),
        _ => {}
    }
    Ok(out)
}
