//! Project configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use lcval_core::grid::{merge_layers, mosaic, parse_grid, RasterGrid, TileShift};
use lcval_core::metrics::{weights_from_levels, ConfidenceWeighting, LevelDefinition};
use lcval_core::nomenclature::ClassScheme;
use lcval_core::retrieval::{ExtentPolicy, Product};
use lcval_core::sampling::StratifyBy;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub experts: Option<[String; 2]>,
    #[serde(default)]
    pub extent_policy: ExtentPolicy,
    #[serde(default = "default_patch_meters")]
    pub patch_meters: f64,
    #[serde(default)]
    pub products: Vec<ProductConfig>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub weighting: Option<WeightingConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_patch_meters() -> f64 {
    lcval_core::annotation::DEFAULT_PATCH_METERS
}

/// A product is one grid file, several layers merged by code offset, or
/// several tiles mosaicked with whole-cell shifts.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    pub name: String,
    /// Built-in scheme name or path to a scheme CSV.
    pub scheme: String,
    #[serde(default)]
    pub grid: Option<PathBuf>,
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub tiles: Vec<PathBuf>,
    /// `[dx, dy]` per tile.
    #[serde(default)]
    pub shifts: Vec<[i32; 2]>,
    #[serde(default)]
    pub reference_tile: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub grid: PathBuf,
    #[serde(default)]
    pub offset: i32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    #[default]
    MaxAnchored,
    ClassAnchored,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Product whose classes define the strata.
    pub product: String,
    /// Label of the resulting sample set in reports.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_stratify")]
    pub stratify_by: StratifyBy,
    #[serde(default)]
    pub design: Design,
    /// Largest stratum's count; defaults to the planned `n` times its coverage.
    #[serde(default)]
    pub n_max: Option<u64>,
    #[serde(default = "default_n_min")]
    pub n_min: u64,
    #[serde(default)]
    pub anchor: Option<String>,
    #[serde(default)]
    pub anchor_n: Option<u64>,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_stratify() -> StratifyBy {
    StratifyBy::L3
}

fn default_n_min() -> u64 {
    5
}

fn default_z() -> f64 {
    1.96
}

fn default_p() -> f64 {
    0.5
}

fn default_h() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    pub levels: Vec<LevelDefinition>,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ProjectConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// `output_dir/<name>`, creating the directory.
    pub fn output(&self, name: &str) -> Result<PathBuf> {
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir.join(name))
    }

    pub fn experts(&self) -> Result<[String; 2]> {
        self.experts.clone().context("config has no `experts = [\"a\", \"b\"]` roster")
    }

    pub fn sampling(&self) -> Result<&SamplingConfig> {
        self.sampling.as_ref().context("config has no [sampling] section")
    }

    pub fn sampling_set_name(&self) -> String {
        self.sampling
            .as_ref()
            .map(|s| s.name.clone().unwrap_or_else(|| format!("{}_based", s.product)))
            .unwrap_or_else(|| "default".to_string())
    }

    pub fn weighting(&self) -> Result<ConfidenceWeighting> {
        match &self.weighting {
            Some(w) => Ok(weights_from_levels(&w.levels)?),
            None => Ok(ConfidenceWeighting::standard()),
        }
    }

    pub fn product_config(&self, name: &str) -> Result<&ProductConfig> {
        self.products.iter().find(|p| p.name == name).with_context(|| format!("no product named {name:?} in config"))
    }

    pub fn load_product(&self, pc: &ProductConfig) -> Result<Product> {
        let scheme = self.load_scheme(&pc.scheme)?;
        let grid = self.load_product_grid(pc)?;
        Ok(Product::new(pc.name.clone(), grid, scheme))
    }

    pub fn load_products(&self) -> Result<Vec<Product>> {
        self.products.iter().map(|p| self.load_product(p)).collect()
    }

    fn load_scheme(&self, spec: &str) -> Result<ClassScheme> {
        if ClassScheme::BUILTIN_NAMES.contains(&spec) {
            return Ok(ClassScheme::builtin(spec)?);
        }
        let path = self.resolve(Path::new(spec));
        let file = std::fs::File::open(&path).with_context(|| format!("opening scheme {}", path.display()))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
        ClassScheme::from_csv(id, file).with_context(|| format!("reading scheme {}", path.display()))
    }

    fn load_product_grid(&self, pc: &ProductConfig) -> Result<RasterGrid> {
        let sources = pc.grid.is_some() as u8 + !pc.layers.is_empty() as u8 + !pc.tiles.is_empty() as u8;
        if sources != 1 {
            bail!("product {:?} needs exactly one of `grid`, `layers` or `tiles`", pc.name);
        }
        if let Some(g) = &pc.grid {
            return read_grid(&self.resolve(g));
        }
        if !pc.layers.is_empty() {
            let grids: Vec<RasterGrid> =
                pc.layers.iter().map(|l| read_grid(&self.resolve(&l.grid))).collect::<Result<_>>()?;
            let pairs: Vec<(&RasterGrid, i32)> = grids.iter().zip(&pc.layers).map(|(g, l)| (g, l.offset)).collect();
            return merge_layers(&pairs).with_context(|| format!("merging layers of {}", pc.name));
        }
        let tiles: Vec<RasterGrid> = pc.tiles.iter().map(|t| read_grid(&self.resolve(t))).collect::<Result<_>>()?;
        let shifts: Vec<TileShift> = if pc.shifts.is_empty() {
            vec![TileShift::ZERO; tiles.len()]
        } else {
            pc.shifts.iter().map(|s| TileShift::new(s[0], s[1])).collect::<Result<_, _>>()?
        };
        mosaic(&tiles, pc.reference_tile, &shifts).with_context(|| format!("mosaicking tiles of {}", pc.name))
    }
}

pub fn read_grid(path: &Path) -> Result<RasterGrid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
    parse_grid(&text).with_context(|| format!("parsing grid {}", path.display()))
}
