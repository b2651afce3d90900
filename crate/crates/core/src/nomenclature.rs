//! Product legends and their projection onto the shared general categories.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NomenclatureError {
    #[error("unknown general class {0:?}")]
    UnknownGeneralClass(String),
    #[error("malformed level-3 code {0:?} (expected d.d.d)")]
    MalformedL3(String),
    #[error("level-1 family {0} is not part of the studied nomenclature")]
    UnsupportedFamily(char),
    #[error("scheme {scheme}: duplicate raw code {code}")]
    DuplicateCode { scheme: String, code: i32 },
    #[error("scheme {scheme}: code {code} has level-3 code {l3} but general class {general}")]
    InconsistentFamily { scheme: String, code: i32, l3: String, general: GeneralClass },
    #[error("scheme {scheme}, line {line}: {message}")]
    Row { scheme: String, line: u64, message: String },
    #[error("unknown built-in scheme {0:?}")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The shared categories every product is harmonized onto, in confusion
/// matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneralClass {
    ArtificialSurfaces,
    Agriculture,
    Forest,
    Water,
    OthersUnclassified,
}

impl GeneralClass {
    pub const ALL: [GeneralClass; 5] = [
        GeneralClass::ArtificialSurfaces,
        GeneralClass::Agriculture,
        GeneralClass::Forest,
        GeneralClass::Water,
        GeneralClass::OthersUnclassified,
    ];

    /// The four studied categories, without Others/Unclassified.
    pub const STUDIED: [GeneralClass; 4] =
        [GeneralClass::ArtificialSurfaces, GeneralClass::Agriculture, GeneralClass::Forest, GeneralClass::Water];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneralClass::ArtificialSurfaces => "ArtificialSurfaces",
            GeneralClass::Agriculture => "Agriculture",
            GeneralClass::Forest => "Forest",
            GeneralClass::Water => "Water",
            GeneralClass::OthersUnclassified => "OthersUnclassified",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            GeneralClass::ArtificialSurfaces => "Artificial Surfaces",
            GeneralClass::Agriculture => "Agriculture",
            GeneralClass::Forest => "Forest",
            GeneralClass::Water => "Water",
            GeneralClass::OthersUnclassified => "Others/Unclassified",
        }
    }
}

impl fmt::Display for GeneralClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneralClass {
    type Err = NomenclatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GeneralClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| NomenclatureError::UnknownGeneralClass(s.to_string()))
    }
}

/// CORINE level-1 families in the studied nomenclature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level1Family {
    ArtificialSurfaces,
    AgriculturalAreas,
    ForestAndSemiNaturalAreas,
    WaterBodies,
}

impl Level1Family {
    pub fn label(self) -> &'static str {
        match self {
            Level1Family::ArtificialSurfaces => "Artificial Surfaces",
            Level1Family::AgriculturalAreas => "Agricultural Areas",
            Level1Family::ForestAndSemiNaturalAreas => "Forest and Semi-Natural Areas",
            Level1Family::WaterBodies => "Water Bodies",
        }
    }

    pub fn general(self) -> GeneralClass {
        match self {
            Level1Family::ArtificialSurfaces => GeneralClass::ArtificialSurfaces,
            Level1Family::AgriculturalAreas => GeneralClass::Agriculture,
            Level1Family::ForestAndSemiNaturalAreas => GeneralClass::Forest,
            Level1Family::WaterBodies => GeneralClass::Water,
        }
    }
}

impl fmt::Display for Level1Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn check_l3(l3: &str) -> Result<char, NomenclatureError> {
    let parts: Vec<&str> = l3.split('.').collect();
    let well_formed = parts.len() == 3 && parts.iter().all(|p| p.len() == 1 && p.as_bytes()[0].is_ascii_digit());
    if !well_formed {
        return Err(NomenclatureError::MalformedL3(l3.to_string()));
    }
    Ok(parts[0].as_bytes()[0] as char)
}

/// Level-1 family of a dotted level-3 code such as `"2.1.2"`.
pub fn l3_to_l1(l3: &str) -> Result<Level1Family, NomenclatureError> {
    match check_l3(l3)? {
        '1' => Ok(Level1Family::ArtificialSurfaces),
        '2' => Ok(Level1Family::AgriculturalAreas),
        '3' => Ok(Level1Family::ForestAndSemiNaturalAreas),
        '5' => Ok(Level1Family::WaterBodies),
        other => Err(NomenclatureError::UnsupportedFamily(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub label: String,
    pub l3_code: Option<String>,
    pub general: GeneralClass,
}

/// A product's raw code vocabulary and its harmonization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScheme {
    id: String,
    entries: BTreeMap<i32, SchemeEntry>,
}

#[derive(Debug, Deserialize)]
struct SchemeRow {
    raw_code: i32,
    label: String,
    l3_code: Option<String>,
    general: String,
}

impl ClassScheme {
    pub fn new(
        id: impl Into<String>,
        entries: impl IntoIterator<Item = (i32, SchemeEntry)>,
    ) -> Result<Self, NomenclatureError> {
        let id = id.into();
        let mut map = BTreeMap::new();
        for (code, entry) in entries {
            if let Some(l3) = &entry.l3_code {
                // Families outside the studied set, and subfamilies excluded
                // from validation, may only harmonize to Others/Unclassified.
                let consistent = match l3_to_l1(l3) {
                    Ok(family) => {
                        entry.general == family.general() || entry.general == GeneralClass::OthersUnclassified
                    }
                    Err(NomenclatureError::UnsupportedFamily(_)) => entry.general == GeneralClass::OthersUnclassified,
                    Err(e) => return Err(e),
                };
                if !consistent {
                    return Err(NomenclatureError::InconsistentFamily {
                        scheme: id,
                        code,
                        l3: l3.clone(),
                        general: entry.general,
                    });
                }
            }
            if map.insert(code, entry).is_some() {
                return Err(NomenclatureError::DuplicateCode { scheme: id, code });
            }
        }
        Ok(Self { id, entries: map })
    }

    /// Reads a `raw_code,label,l3_code,general` CSV document.
    pub fn from_csv<R: Read>(id: impl Into<String>, reader: R) -> Result<Self, NomenclatureError> {
        let id = id.into();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<SchemeRow>() {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                NomenclatureError::Row { scheme: id.clone(), line, message: e.to_string() }
            })?;
            let general = row.general.parse::<GeneralClass>()?;
            let l3_code = row.l3_code.filter(|s| !s.is_empty());
            entries.push((row.raw_code, SchemeEntry { label: row.label, l3_code, general }));
        }
        Self::new(id, entries)
    }

    pub fn to_csv(&self) -> Result<String, NomenclatureError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["raw_code", "label", "l3_code", "general"])?;
        for (code, e) in &self.entries {
            wtr.write_record([
                code.to_string().as_str(),
                &e.label,
                e.l3_code.as_deref().unwrap_or(""),
                e.general.name(),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| NomenclatureError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One of the schemes shipped with the crate: `clc2012`, `glc30` or `hrl_merged`.
    pub fn builtin(name: &str) -> Result<Self, NomenclatureError> {
        let text = match name {
            "clc2012" => include_str!("../data/schemes/clc2012.csv"),
            "glc30" => include_str!("../data/schemes/glc30.csv"),
            "hrl_merged" => include_str!("../data/schemes/hrl_merged.csv"),
            other => return Err(NomenclatureError::UnknownBuiltin(other.to_string())),
        };
        Self::from_csv(name, text.as_bytes())
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = ["clc2012", "glc30", "hrl_merged"];

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn entries(&self) -> &BTreeMap<i32, SchemeEntry> {
        &self.entries
    }

    pub fn entry(&self, code: i32) -> Option<&SchemeEntry> {
        self.entries.get(&code)
    }

    /// Total mapping from a raw code to its general class; codes absent from
    /// the scheme (nodata included) are Others/Unclassified.
    pub fn harmonize(&self, raw: i32) -> GeneralClass {
        self.entries.get(&raw).map_or(GeneralClass::OthersUnclassified, |e| e.general)
    }

    /// Raw codes whose entry carries the given level-3 code.
    pub fn codes_for_l3(&self, l3: &str) -> Vec<i32> {
        self.entries.iter().filter(|(_, e)| e.l3_code.as_deref() == Some(l3)).map(|(&c, _)| c).collect()
    }

    /// Raw codes harmonizing to `class`.
    pub fn codes_for_general(&self, class: GeneralClass) -> Vec<i32> {
        self.entries.iter().filter(|(_, e)| e.general == class).map(|(&c, _)| c).collect()
    }
}

/// Free-function form of [`ClassScheme::harmonize`].
pub fn harmonize(scheme: &ClassScheme, raw: i32) -> GeneralClass {
    scheme.harmonize(raw)
}

/// A raw product value and its harmonized class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductLabel {
    pub raw: i32,
    pub general: GeneralClass,
}

impl ProductLabel {
    pub fn from_scheme(scheme: &ClassScheme, raw: i32) -> Self {
        Self { raw, general: scheme.harmonize(raw) }
    }
}
